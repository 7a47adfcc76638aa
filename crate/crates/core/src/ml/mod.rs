//! Machine-learning regressors trained on gravity features.

pub mod boosting;
pub mod features;
pub mod forest;
pub mod mlp;
pub mod stack;
pub mod tree;

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use boosting::{fit_gradient_boosting, BoostParams, GradientBoosting};
pub use features::{base_features, FeatureMap, FeatureSet, Scaler, FE_FEATURES};
pub use forest::{fit_random_forest, ForestParams, RandomForest};
pub use mlp::{fit_mlp_poisson, MlpParams, Network};
pub use stack::{fit_stack, simplex_least_squares, stack_objective, Stack, StackWeights};

use crate::error::{Error, Result};

/// A fitted model mapping feature rows to predictions.
pub trait Regressor: Send + Sync + fmt::Debug {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>>;
}

pub(crate) fn check_training(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} feature rows, {} outcomes", x.nrows(), y.len())));
    }
    if y.len() < 2 {
        return Err(Error::InvalidInput("need at least two training rows".into()));
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite training data".into()));
    }
    Ok(())
}

pub(crate) fn check_width(x: &DMatrix<f64>, expected: usize) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::DimensionMismatch(format!(
            "model expects {expected} features, got {}",
            x.ncols()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Forest,
    Boosting,
    Network,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 3] = [LearnerKind::Forest, LearnerKind::Boosting, LearnerKind::Network];
}

/// Hyperparameters for every learner, as read from the `[learners]` config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerParams {
    pub forest: ForestParams,
    pub boosting: BoostParams,
    pub network: MlpParams,
    pub stack_folds: usize,
}

impl Default for LearnerParams {
    fn default() -> Self {
        Self {
            forest: ForestParams::default(),
            boosting: BoostParams::default(),
            network: MlpParams::default(),
            stack_folds: 5,
        }
    }
}

/// Network preceded by its own standardization, so it accepts raw features.
#[derive(Debug, Clone)]
pub struct NetworkPipeline {
    pub scaler: Scaler,
    pub network: Network,
}

impl NetworkPipeline {
    pub fn fit(x: &DMatrix<f64>, y: &[f64], hp: &MlpParams, seed: u64) -> Result<Self> {
        let scaler = Scaler::fit(x);
        let network = fit_mlp_poisson(&scaler.transform(x)?, y, hp, seed)?;
        Ok(Self { scaler, network })
    }
}

impl Regressor for NetworkPipeline {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.network.predict(&self.scaler.transform(x)?)
    }
}

pub fn fit_learner(
    kind: LearnerKind,
    x: &DMatrix<f64>,
    y: &[f64],
    params: &LearnerParams,
    seed: u64,
) -> Result<Box<dyn Regressor>> {
    Ok(match kind {
        LearnerKind::Forest => Box::new(fit_random_forest(x, y, &params.forest, seed)?),
        LearnerKind::Boosting => Box::new(fit_gradient_boosting(x, y, &params.boosting, seed)?),
        LearnerKind::Network => Box::new(NetworkPipeline::fit(x, y, &params.network, seed)?),
    })
}
