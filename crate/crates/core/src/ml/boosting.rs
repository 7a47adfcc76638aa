use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::tree::{RegressionTree, TreeParams};
use super::{check_training, check_width, Regressor};
use crate::error::Result;
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub n_stages: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_stages: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 1,
        }
    }
}

/// Least-squares gradient boosting: `F0 = mean(y)`, then each stage adds a
/// shrunken tree fitted to the current residuals.
#[derive(Debug, Clone)]
pub struct GradientBoosting {
    init: f64,
    learning_rate: f64,
    trees: Vec<RegressionTree>,
    n_features: usize,
    /// Mean squared training error after each stage, starting with `F0`.
    pub train_loss: Vec<f64>,
}

pub fn fit_gradient_boosting(x: &DMatrix<f64>, y: &[f64], hp: &BoostParams, seed: u64) -> Result<GradientBoosting> {
    check_training(x, y)?;
    let n = y.len();
    let init = y.iter().sum::<f64>() / n as f64;
    let mut f = vec![init; n];
    let params = TreeParams {
        max_depth: Some(hp.max_depth),
        min_leaf: hp.min_leaf,
        mtry: 0,
    };
    let mse = |f: &[f64]| f.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
    let mut train_loss = vec![mse(&f)];
    let mut trees = Vec::with_capacity(hp.n_stages);
    let mut rng = substream(seed, 0);
    for _ in 0..hp.n_stages {
        let resid: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a - b).collect();
        let tree = RegressionTree::grow(x, &resid, (0..n).collect(), &params, &mut rng);
        for (r, v) in f.iter_mut().enumerate() {
            *v += hp.learning_rate * tree.predict_row(x, r);
        }
        train_loss.push(mse(&f));
        trees.push(tree);
    }
    Ok(GradientBoosting {
        init,
        learning_rate: hp.learning_rate,
        trees,
        n_features: x.ncols(),
        train_loss,
    })
}

impl Regressor for GradientBoosting {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_width(x, self.n_features)?;
        Ok((0..x.nrows())
            .map(|r| {
                self.init
                    + self
                        .trees
                        .iter()
                        .map(|t| self.learning_rate * t.predict_row(x, r))
                        .sum::<f64>()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zero_stages_predicts_mean() {
        let x = DMatrix::from_fn(4, 1, |r, _| r as f64);
        let y = [1.0, 2.0, 3.0, 6.0];
        let hp = BoostParams {
            n_stages: 0,
            ..Default::default()
        };
        let g = fit_gradient_boosting(&x, &y, &hp, 0).unwrap();
        assert_eq!(g.predict(&x).unwrap(), vec![3.0; 4]);
    }

    #[test]
    fn one_full_stage_memorizes() {
        let x = DMatrix::from_fn(16, 2, |r, c| (r * (c + 1)) as f64 + c as f64 * 0.3);
        let y: Vec<f64> = (0..16).map(|r| ((r * 5) % 7) as f64).collect();
        let hp = BoostParams {
            n_stages: 1,
            max_depth: 64,
            learning_rate: 1.0,
            min_leaf: 1,
        };
        let g = fit_gradient_boosting(&x, &y, &hp, 0).unwrap();
        for (p, v) in g.predict(&x).unwrap().iter().zip(&y) {
            assert!((p - v).abs() < 1e-12);
        }
    }

    #[test]
    fn training_loss_never_increases() {
        let mut rng = substream(42, 0);
        let x = DMatrix::from_fn(120, 4, |_, _| rng.random::<f64>());
        let y: Vec<f64> = (0..120)
            .map(|r| 3.0 * x[(r, 0)] - x[(r, 2)] * x[(r, 3)] + rng.random::<f64>())
            .collect();
        let g = fit_gradient_boosting(&x, &y, &BoostParams::default(), 1).unwrap();
        assert_eq!(g.train_loss.len(), 101);
        for w in g.train_loss.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} > {}", w[1], w[0]);
        }
        assert!(g.train_loss[100] < g.train_loss[0]);
    }
}
