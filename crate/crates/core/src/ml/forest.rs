use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{RegressionTree, TreeParams};
use super::{check_training, check_width, Regressor};
use crate::error::Result;
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features per split; default `max(1, p / 3)`.
    pub mtry: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            mtry: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
    n_features: usize,
    /// Out-of-bag predictions per training row; NaN where a row was in every
    /// bootstrap sample.
    pub oob: Vec<f64>,
}

/// Bagged regression trees. Tree `t` draws from substream `(seed, t)`, so the
/// result does not depend on the thread schedule.
pub fn fit_random_forest(x: &DMatrix<f64>, y: &[f64], hp: &ForestParams, seed: u64) -> Result<RandomForest> {
    check_training(x, y)?;
    let n = y.len();
    let p = x.ncols();
    let params = TreeParams {
        max_depth: hp.max_depth,
        min_leaf: hp.min_leaf,
        mtry: hp.mtry.unwrap_or((p / 3).max(1)),
    };
    let grown: Vec<(RegressionTree, Vec<bool>)> = (0..hp.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(seed, t as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut in_bag = vec![false; n];
            rows.iter().for_each(|&r| in_bag[r] = true);
            (RegressionTree::grow(x, y, rows, &params, &mut rng), in_bag)
        })
        .collect();

    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (tree, in_bag) in &grown {
        for r in (0..n).filter(|&r| !in_bag[r]) {
            sum[r] += tree.predict_row(x, r);
            count[r] += 1;
        }
    }
    let oob = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect();
    Ok(RandomForest {
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        n_features: p,
        oob,
    })
}

impl RandomForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

impl Regressor for RandomForest {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_width(x, self.n_features)?;
        let k = self.trees.len() as f64;
        Ok((0..x.nrows())
            .map(|r| self.trees.iter().map(|t| t.predict_row(x, r)).sum::<f64>() / k)
            .collect())
    }
}
