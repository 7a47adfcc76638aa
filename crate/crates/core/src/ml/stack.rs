//! Convex combinations of learners fitted on cross-fitted predictions.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{check_training, fit_learner, LearnerKind, LearnerParams, Regressor};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, substream};

/// Non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct StackWeights {
    pub w: Vec<f64>,
}

/// Mean squared error of `p w` against `y`.
pub fn stack_objective(p: &DMatrix<f64>, y: &[f64], w: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    (0..p.nrows())
        .map(|r| {
            let fit: f64 = (0..p.ncols()).map(|c| p[(r, c)] * w[c]).sum();
            (y[r] - fit) * (y[r] - fit)
        })
        .sum::<f64>()
        / n
}

fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

const MAX_EXACT: usize = 12;

/// Solves `min ||y - P w||^2` over the probability simplex.
///
/// Up to twelve columns every support is tried and the best feasible
/// equality-constrained solution is returned; wider problems use projected
/// gradient descent.
pub fn simplex_least_squares(p: &DMatrix<f64>, y: &[f64]) -> Result<StackWeights> {
    let m = p.ncols();
    if m == 0 {
        return Err(Error::StackSolver("no learners to combine".into()));
    }
    if p.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} prediction rows, {} outcomes", p.nrows(), y.len())));
    }
    let g = p.transpose() * p;
    let c = p.transpose() * DVector::from_column_slice(y);
    let w = if m <= MAX_EXACT {
        exact(&g, &c, p, y)
    } else {
        projected_gradient(&g, &c)?
    };
    Ok(StackWeights { w })
}

fn exact(g: &DMatrix<f64>, c: &DVector<f64>, p: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let m = g.nrows();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << m) {
        let support: Vec<usize> = (0..m).filter(|&i| mask & (1 << i) != 0).collect();
        let k = support.len();
        let mut kkt = DMatrix::zeros(k + 1, k + 1);
        let mut rhs = DVector::zeros(k + 1);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = 2.0 * g[(i, j)];
            }
            kkt[(a, k)] = 1.0;
            kkt[(k, a)] = 1.0;
            rhs[a] = 2.0 * c[i];
        }
        rhs[k] = 1.0;
        let scale = kkt.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        let Ok(sol) = kkt.clone().svd(true, true).solve(&rhs, 1e-13 * scale) else {
            continue;
        };
        let sub: Vec<f64> = sol.iter().take(k).copied().collect();
        if sub.iter().any(|v| !v.is_finite() || *v < -1e-10) {
            continue;
        }
        let total: f64 = sub.iter().map(|v| v.max(0.0)).sum();
        if total <= 0.0 {
            continue;
        }
        let mut w = vec![0.0; m];
        for (&i, v) in support.iter().zip(&sub) {
            w[i] = v.max(0.0) / total;
        }
        let obj = stack_objective(p, y, &w);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, w));
        }
    }
    // Vertices are always feasible, so some support succeeds.
    best.map(|(_, w)| w).unwrap_or_else(|| {
        let mut w = vec![0.0; m];
        w[0] = 1.0;
        w
    })
}

fn projected_gradient(g: &DMatrix<f64>, c: &DVector<f64>) -> Result<Vec<f64>> {
    let m = g.nrows();
    let lip = 2.0 * g.clone().symmetric_eigenvalues().max().max(f64::MIN_POSITIVE);
    let mut w = vec![1.0 / m as f64; m];
    for _ in 0..200_000 {
        let wv = DVector::from_column_slice(&w);
        let grad = (g * &wv - c) * 2.0;
        let step: Vec<f64> = w.iter().zip(grad.iter()).map(|(a, d)| a - d / lip).collect();
        let next = project_simplex(&step);
        let change = next.iter().zip(&w).fold(0.0f64, |s, (a, b)| s.max((a - b).abs()));
        w = next;
        if change < 1e-10 {
            return Ok(w);
        }
    }
    Err(Error::StackSolver("projected gradient did not converge".into()))
}

/// Fold label per row, keeping every cluster (pair) inside one fold.
pub fn cluster_folds(clusters: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let mut ids: Vec<usize> = clusters.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if folds < 2 || ids.len() < folds {
        return Err(Error::InvalidInput(format!(
            "need at least 2 folds and no more folds than clusters ({} folds, {} clusters)",
            folds,
            ids.len()
        )));
    }
    ids.shuffle(&mut substream(seed, 0));
    let fold_of: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(i, &c)| (c, i % folds)).collect();
    Ok(clusters.iter().map(|c| fold_of[c]).collect())
}

#[derive(Debug)]
pub struct Stack {
    pub weights: StackWeights,
    pub learners: Vec<LearnerKind>,
    pub models: Vec<Box<dyn Regressor>>,
    /// Out-of-fold predictions, one column per learner.
    pub cv_predictions: DMatrix<f64>,
}

/// Cross-fits every learner over cluster folds, solves for simplex weights
/// on the out-of-fold predictions, then refits each learner on all rows.
pub fn fit_stack(
    learners: &[LearnerKind],
    params: &LearnerParams,
    x: &DMatrix<f64>,
    y: &[f64],
    clusters: &[usize],
    folds: usize,
    seed: u64,
) -> Result<Stack> {
    check_training(x, y)?;
    if learners.is_empty() {
        return Err(Error::InvalidInput("stack needs at least one learner".into()));
    }
    if clusters.len() != y.len() {
        return Err(Error::DimensionMismatch("one cluster label per row required".into()));
    }
    let fold = cluster_folds(clusters, folds, derive_seed(seed, 0xF01D))?;
    let m = learners.len();
    let jobs: Vec<(usize, usize)> = (0..folds).flat_map(|f| (0..m).map(move |l| (f, l))).collect();
    let pieces: Vec<(usize, usize, Vec<usize>, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(f, l)| {
            let train: Vec<usize> = (0..y.len()).filter(|&r| fold[r] != f).collect();
            let held: Vec<usize> = (0..y.len()).filter(|&r| fold[r] == f).collect();
            let xt = x.select_rows(&train);
            let yt: Vec<f64> = train.iter().map(|&r| y[r]).collect();
            let model = fit_learner(learners[l], &xt, &yt, params, derive_seed(seed, (f * m + l) as u64 + 1))?;
            let pred = model.predict(&x.select_rows(&held))?;
            Ok((f, l, held, pred))
        })
        .collect::<Result<_>>()?;
    let mut cv = DMatrix::zeros(y.len(), m);
    for (_, l, held, pred) in &pieces {
        for (r, v) in held.iter().zip(pred) {
            cv[(*r, *l)] = *v;
        }
    }
    let weights = simplex_least_squares(&cv, y)?;
    let models = learners
        .par_iter()
        .enumerate()
        .map(|(l, &kind)| fit_learner(kind, x, y, params, derive_seed(seed, 0xA11 + l as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Stack {
        weights,
        learners: learners.to_vec(),
        models,
        cv_predictions: cv,
    })
}

impl Regressor for Stack {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.nrows()];
        for (model, &w) in self.models.iter().zip(&self.weights.w) {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(model.predict(x)?) {
                *o += w * v;
            }
        }
        Ok(out)
    }
}
