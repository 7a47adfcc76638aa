//! Poisson pseudo-maximum likelihood with absorbed high-dimensional fixed
//! effects.
//!
//! Each IRLS step residualizes the working response and the regressors
//! against every fixed-effect dimension with weighted alternating
//! projections, solves the reduced normal equations, and updates the linear
//! predictor. Fixed-effect values are recovered after convergence.
//!
//! Regressor columns are warm-started from their previous within transform:
//! the projection annihilates anything in the fixed-effect span, so starting
//! from `X - F` for any `F` in the span yields the same limit. The working
//! response is handled as `X~ b + M_w((y - mu) / mu)`, which only needs the
//! small score-like vector projected from scratch.

mod collinear;
mod fe;

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use collinear::{drop_collinear, ColumnSelection};
pub use fe::{FeDimension, FeKind};
pub(crate) use fe::GroupIndex;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpmlOptions {
    /// Relative deviance change below which IRLS stops.
    pub tol_dev: f64,
    pub max_iter: usize,
    /// Largest weighted group mean tolerated after projection.
    pub tol_project: f64,
    pub max_sweeps: usize,
    pub tol_rank: f64,
    /// Largest tolerated |log mu - (x b + sum fe)| after recovery.
    pub tol_recover: f64,
    pub keep_trace: bool,
}

impl Default for PpmlOptions {
    fn default() -> Self {
        Self {
            tol_dev: 1e-9,
            max_iter: 200,
            tol_project: 1e-10,
            max_sweeps: 100_000,
            tol_rank: 1e-9,
            tol_recover: 1e-8,
            keep_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub deviance: f64,
    pub relative_change: f64,
    pub sweeps: usize,
    pub halvings: usize,
}

/// Recovered values of one fixed-effect dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeValues {
    pub name: String,
    pub kind: FeKind,
    pub values: HashMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct PpmlFit {
    /// Coefficients of the kept columns, in `kept_columns` order.
    pub beta: Vec<f64>,
    pub kept_columns: Vec<usize>,
    pub dropped_columns: Vec<usize>,
    pub n_columns: usize,
    pub fe_values: Vec<FeValues>,
    /// Fitted means of the estimation rows, aligned with `sample`.
    pub fitted_mu: Vec<f64>,
    /// Rows used in estimation.
    pub sample: Vec<usize>,
    /// Rows dropped because some group of theirs has only zero outcomes.
    pub separated: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub final_deviance: f64,
    pub components: usize,
    pub trace: Vec<IterationTrace>,
}

impl PpmlFit {
    /// Coefficient of an original design column, `None` if it was dropped.
    pub fn coefficient(&self, column: usize) -> Option<f64> {
        self.kept_columns
            .iter()
            .position(|&c| c == column)
            .map(|i| self.beta[i])
    }

    /// Linear index `x b` over the kept columns of a full design row.
    pub fn linear_index(&self, x_row: &[f64]) -> f64 {
        self.kept_columns
            .iter()
            .zip(&self.beta)
            .map(|(&c, b)| x_row[c] * b)
            .sum()
    }

    pub fn fe_value(&self, dimension: usize, key: &str) -> Option<f64> {
        self.fe_values.get(dimension)?.values.get(key).copied()
    }

    pub fn fe_dimension(&self, kind: &FeKind) -> Option<&FeValues> {
        self.fe_values.iter().find(|v| &v.kind == kind)
    }

    pub fn trace_text(&self) -> String {
        let mut s = String::from("iter\tdeviance\trel_change\tsweeps\thalvings\n");
        for t in &self.trace {
            let _ = writeln!(
                s,
                "{}\t{:.12e}\t{:.3e}\t{}\t{}",
                t.iteration, t.deviance, t.relative_change, t.sweeps, t.halvings
            );
        }
        s
    }
}

pub fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| if y > 0.0 { y * (y / m).ln() - (y - m) } else { m })
        .sum::<f64>()
}

fn solve_normal(a: DMatrix<f64>, b: DVector<f64>) -> DVector<f64> {
    match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a
            .svd(true, true)
            .solve(&b, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(b.len())),
    }
}

/// Fits a Poisson model `E[y] = exp(X b + sum_d fe_d)` by IRLS with the
/// fixed effects absorbed.
pub fn fit_ppml(y: &[f64], x: &DMatrix<f64>, fe: &[FeDimension], opts: &PpmlOptions) -> Result<PpmlFit> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} outcomes but {} design rows",
            n,
            x.nrows()
        )));
    }
    if let Some(d) = fe.iter().find(|d| d.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "fixed effect `{}` has {} keys for {} rows",
            d.name,
            d.len(),
            n
        )));
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidInput(format!("outcome {v} is not a finite non-negative number")));
    }

    // Separation: rows in a group whose outcomes are all zero.
    let all_rows: Vec<usize> = (0..n).collect();
    let mut separated_flag = vec![false; n];
    for d in fe {
        let g = GroupIndex::build(d, &all_rows);
        let mut sums = vec![0.0; g.n_groups()];
        for (&id, &v) in g.ids.iter().zip(y) {
            sums[id as usize] += v;
        }
        for (flag, &id) in separated_flag.iter_mut().zip(&g.ids) {
            *flag |= sums[id as usize] == 0.0;
        }
    }
    let (sample, separated): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| !separated_flag[i]);
    if !separated.is_empty() {
        log::warn!(
            "{} observations dropped: all-zero outcome within a fixed-effect group",
            separated.len()
        );
    }
    let ys: Vec<f64> = sample.iter().map(|&i| y[i]).collect();
    if ys.iter().all(|&v| v == 0.0) {
        return Err(Error::AllZeroOutcome);
    }
    let m = ys.len();

    let groups: Vec<GroupIndex> = fe.iter().map(|d| GroupIndex::build(d, &sample)).collect();
    let (component_labels, components) = fe::connected_components(&groups);
    if components > 1 {
        log::info!("fixed-effect design has {components} connected components");
    }

    let selection = collinear::select_columns(x, &sample, &groups, opts.tol_rank, 1e-12, opts.max_sweeps);
    let p = selection.kept.len();
    let xs: Vec<Vec<f64>> = selection
        .kept
        .iter()
        .map(|&j| sample.iter().map(|&r| x[(r, j)]).collect())
        .collect();

    let ybar = ys.iter().sum::<f64>() / m as f64;
    let mut mu: Vec<f64> = ys.iter().map(|&v| 0.5 * (v + ybar)).collect();
    let mut eta: Vec<f64> = mu.iter().map(|v| v.ln()).collect();
    let mut dev = poisson_deviance(&ys, &mu);
    // `Some(b)` once eta = X b + (fixed-effect span).
    let mut beta: Option<Vec<f64>> = None;
    let mut x_tilde = xs.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;

    while iterations < opts.max_iter {
        iterations += 1;
        let w = mu.clone();
        let score: Vec<f64> = ys.iter().zip(&mu).map(|(&y, &m)| (y - m) / m).collect();

        let mut sweeps = 0;
        let mut z_tilde = match &beta {
            Some(_) => {
                let mut r = vec![score.clone()];
                let (s, _) = fe::demean(&mut r, &w, &groups, opts.tol_project, opts.max_sweeps);
                sweeps = sweeps.max(s);
                r.pop().unwrap()
            }
            None => {
                let mut r = vec![eta.iter().zip(&score).map(|(e, s)| e + s).collect::<Vec<f64>>()];
                let (s, _) = fe::demean(&mut r, &w, &groups, opts.tol_project, opts.max_sweeps);
                sweeps = sweeps.max(s);
                r.pop().unwrap()
            }
        };
        let (s, _) = fe::demean(&mut x_tilde, &w, &groups, opts.tol_project, opts.max_sweeps);
        sweeps = sweeps.max(s);
        if let Some(b) = &beta {
            for (col, bj) in x_tilde.iter().zip(b) {
                z_tilde.iter_mut().zip(col).for_each(|(z, xv)| *z += bj * xv);
            }
        }

        let new_beta = if p > 0 {
            let mut a = DMatrix::<f64>::zeros(p, p);
            let mut rhs = DVector::<f64>::zeros(p);
            for j in 0..p {
                for k in 0..=j {
                    let v: f64 = (0..m).map(|i| w[i] * x_tilde[j][i] * x_tilde[k][i]).sum();
                    a[(j, k)] = v;
                    a[(k, j)] = v;
                }
                rhs[j] = (0..m).map(|i| w[i] * x_tilde[j][i] * z_tilde[i]).sum();
            }
            solve_normal(a, rhs).iter().copied().collect()
        } else {
            Vec::new()
        };

        // eta_new = z - (z~ - X~ b), with z = eta + score.
        let mut eta_new: Vec<f64> = (0..m).map(|i| eta[i] + score[i] - z_tilde[i]).collect();
        for (col, bj) in x_tilde.iter().zip(&new_beta) {
            eta_new.iter_mut().zip(col).for_each(|(e, xv)| *e += bj * xv);
        }
        let mut step_beta = new_beta;
        let mut mu_new: Vec<f64> = eta_new.iter().map(|e| e.exp()).collect();
        let mut dev_new = poisson_deviance(&ys, &mu_new);
        let mut halvings = 0;
        // The start point is not a model point and may have lower deviance
        // than the constrained optimum, so only halve from model points.
        let from_model = beta.is_some();
        while (!dev_new.is_finite() || (from_model && dev_new > dev * (1.0 + 1e-12))) && halvings < 30 {
            halvings += 1;
            eta_new.iter_mut().zip(&eta).for_each(|(e, old)| *e = 0.5 * (*e + old));
            if let Some(b) = &beta {
                step_beta.iter_mut().zip(b).for_each(|(nb, ob)| *nb = 0.5 * (*nb + ob));
            }
            mu_new = eta_new.iter().map(|e| e.exp()).collect();
            dev_new = poisson_deviance(&ys, &mu_new);
        }
        if !dev_new.is_finite() {
            return Err(Error::Overflow(format!("deviance not finite at IRLS iteration {iterations}")));
        }
        // Halving against an unstructured start leaves eta outside X b + span.
        let structured = from_model || halvings == 0;

        last_change = (dev_new - dev).abs() / dev_new.min(dev).max(0.1);
        trace.push(IterationTrace {
            iteration: iterations,
            deviance: dev_new,
            relative_change: last_change,
            sweeps,
            halvings,
        });
        eta = eta_new;
        mu = mu_new;
        dev = dev_new;
        beta = if structured { Some(step_beta) } else { None };
        if last_change < opts.tol_dev && beta.is_some() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged {
            iterations,
            deviance_change: last_change,
        });
    }

    let mut fit = PpmlFit {
        beta: beta.unwrap_or_default(),
        kept_columns: selection.kept,
        dropped_columns: selection.dropped,
        n_columns: x.ncols(),
        fe_values: Vec::new(),
        fitted_mu: mu,
        sample,
        separated,
        iterations,
        converged,
        final_deviance: dev,
        components,
        trace: if opts.keep_trace { trace } else { Vec::new() },
    };
    fit.fe_values = recover_with_groups(&fit, x, fe, &groups, &component_labels, components, opts)?;
    Ok(fit)
}

/// Recovers fixed-effect values so that `exp(x b + sum_d fe_d) = mu` on every
/// estimation row. Dimensions after the first are shifted to zero mean within
/// each connected component; the first absorbs the offsets.
pub fn recover_fixed_effects(
    fit: &PpmlFit,
    x: &DMatrix<f64>,
    fe: &[FeDimension],
    opts: &PpmlOptions,
) -> Result<Vec<FeValues>> {
    let groups: Vec<GroupIndex> = fe.iter().map(|d| GroupIndex::build(d, &fit.sample)).collect();
    let (labels, components) = fe::connected_components(&groups);
    recover_with_groups(fit, x, fe, &groups, &labels, components, opts)
}

fn recover_with_groups(
    fit: &PpmlFit,
    x: &DMatrix<f64>,
    fe: &[FeDimension],
    groups: &[GroupIndex],
    component_labels: &[Vec<usize>],
    components: usize,
    opts: &PpmlOptions,
) -> Result<Vec<FeValues>> {
    let target: Vec<f64> = fit
        .sample
        .iter()
        .zip(&fit.fitted_mu)
        .map(|(&r, mu)| {
            let xb: f64 = fit
                .kept_columns
                .iter()
                .zip(&fit.beta)
                .map(|(&c, b)| x[(r, c)] * b)
                .sum();
            mu.ln() - xb
        })
        .collect();
    let mut values: Vec<Vec<f64>> = groups.iter().map(|g| vec![0.0; g.n_groups()]).collect();
    let mut resid = target.clone();

    if !groups.is_empty() {
        let counts: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| {
                let mut c = vec![0.0; g.n_groups()];
                g.ids.iter().for_each(|&id| c[id as usize] += 1.0);
                c
            })
            .collect();
        let scale = target.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-14 * scale;
        for _sweep in 0..opts.max_sweeps {
            let mut largest = 0.0f64;
            for ((g, c), vals) in groups.iter().zip(&counts).zip(values.iter_mut()) {
                let mut s = vec![0.0; g.n_groups()];
                for (&id, &r) in g.ids.iter().zip(&resid) {
                    s[id as usize] += r;
                }
                for (sv, &cv) in s.iter_mut().zip(c) {
                    *sv /= cv;
                    largest = largest.max(sv.abs());
                }
                for (&id, r) in g.ids.iter().zip(resid.iter_mut()) {
                    *r -= s[id as usize];
                }
                vals.iter_mut().zip(&s).for_each(|(v, sv)| *v += sv);
            }
            if largest < tol || groups.len() == 1 {
                break;
            }
        }

        // Normalize per component.
        for d in 1..groups.len() {
            let mut sum = vec![0.0; components];
            let mut cnt = vec![0usize; components];
            for (k, &v) in values[d].iter().enumerate() {
                let c = component_labels[d][k];
                sum[c] += v;
                cnt[c] += 1;
            }
            let shift: Vec<f64> = sum.iter().zip(&cnt).map(|(s, &c)| s / c.max(1) as f64).collect();
            for (k, v) in values[d].iter_mut().enumerate() {
                *v -= shift[component_labels[d][k]];
            }
            for (k, v) in values[0].iter_mut().enumerate() {
                *v += shift[component_labels[0][k]];
            }
        }
    }

    let residual = (0..target.len())
        .map(|i| {
            let s: f64 = groups.iter().zip(&values).map(|(g, v)| v[g.ids[i] as usize]).sum();
            (target[i] - s).abs()
        })
        .fold(0.0f64, f64::max);
    if residual > opts.tol_recover {
        return Err(Error::RecoveryFailed { residual, components });
    }

    Ok(fe
        .iter()
        .zip(groups)
        .zip(values)
        .map(|((d, g), vals)| FeValues {
            name: d.name.clone(),
            kind: d.kind.clone(),
            values: g.keys.iter().cloned().zip(vals).collect(),
        })
        .collect())
}

/// Predicted mean for one observation: `exp(x b + sum_d fe_d(key_d))`.
///
/// `x_row` holds every original design column; `keys` holds one group key per
/// fixed-effect dimension, in fit order.
pub fn predict_mu(fit: &PpmlFit, x_row: &[f64], keys: &[&str]) -> Result<f64> {
    if x_row.len() != fit.n_columns || keys.len() != fit.fe_values.len() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} columns and {} keys, got {} and {}",
            fit.n_columns,
            fit.fe_values.len(),
            x_row.len(),
            keys.len()
        )));
    }
    let mut eta = fit.linear_index(x_row);
    for (vals, key) in fit.fe_values.iter().zip(keys) {
        eta += vals.values.get(*key).ok_or_else(|| Error::UnidentifiedGroup {
            dimension: vals.name.clone(),
            key: key.to_string(),
        })?;
    }
    let mu = eta.exp();
    if !mu.is_finite() {
        return Err(Error::Overflow(format!("predicted log mean {eta}")));
    }
    Ok(mu)
}
