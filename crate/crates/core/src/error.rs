use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{column}` (schema field `{field}`)")]
    MissingColumn { field: &'static str, column: String },

    #[error("row {row}: {reason}")]
    InvalidRow { row: u64, reason: String },

    #[error("row {row}: duplicate observation ({exporter}, {importer}, {year})")]
    DuplicateTriple {
        row: u64,
        exporter: String,
        importer: String,
        year: i32,
    },

    #[error("empty panel: {0}")]
    EmptyPanel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("outcome is zero for every estimation observation")]
    AllZeroOutcome,

    #[error("IRLS did not converge after {iterations} iterations (last relative deviance change {deviance_change:e})")]
    NotConverged {
        iterations: usize,
        deviance_change: f64,
    },

    #[error("unidentified group `{key}` in fixed-effect dimension `{dimension}`")]
    UnidentifiedGroup { dimension: String, key: String },

    #[error("fixed effects do not reproduce fitted means (max log residual {residual:e}, {components} connected components)")]
    RecoveryFailed { residual: f64, components: usize },

    #[error("augmentation value {value} at row {row} is not strictly positive")]
    NonPositiveAugmentation { row: usize, value: f64 },

    #[error("network inputs must be standardized")]
    NotStandardized,

    #[error("training diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("stacking solver: {0}")]
    StackSolver(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("test set empty after re-draw")]
    EmptyTestSet,

    #[error("split invariant violated: {0}")]
    SplitInvariant(String),

    #[error("pair has {0} observed years; at least 2 are needed to hold out recent years")]
    TooFewYears(usize),

    #[error("imputation estimator denominator {0} is not positive")]
    NonPositiveDenominator(f64),

    #[error("mean observed outcome is zero")]
    ZeroMeanObserved,

    #[error("exp overflow: {0}")]
    Overflow(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config: {0}")]
    Config(String),

    #[error("method `{method}` failed in {failures} of {reps} repetitions")]
    TooManyFailures {
        method: String,
        failures: usize,
        reps: usize,
    },
}
