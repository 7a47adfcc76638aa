//! Estimation and prediction accuracy over repeated train/test splits.
//!
//! Each repetition contributes an `(observed, predicted)` pair of slices over
//! its test rows. All sums run serially in repetition order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed and predicted outcomes of one repetition's test rows.
pub type RepSlices<'a> = (&'a [f64], &'a [f64]);

/// `sum(observed) / sum(predicted)`.
pub fn imputation_estimator(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(observed, predicted)?;
    let den: f64 = predicted.iter().sum();
    if !(den > 0.0) {
        return Err(Error::NonPositiveDenominator(den));
    }
    Ok(observed.iter().sum::<f64>() / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeConvention {
    /// Divide by K, so that `MSE = SE^2 + (mean - 1)^2` holds exactly.
    #[default]
    Population,
    /// Divide by K - 1.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IeSummary {
    pub mean: f64,
    pub se: f64,
    /// `mean((IE_k - 1)^2)`.
    pub mse: f64,
}

pub fn aggregate_ie(ies: &[f64], convention: SeConvention) -> Result<IeSummary> {
    let k = ies.len();
    if k == 0 || (convention == SeConvention::Sample && k < 2) {
        return Err(Error::InvalidInput(format!("too few repetitions ({k}) to aggregate")));
    }
    let kf = k as f64;
    let mean = ies.iter().sum::<f64>() / kf;
    let ss: f64 = ies.iter().map(|v| (v - mean) * (v - mean)).sum();
    let se = match convention {
        SeConvention::Population => (ss / kf).sqrt(),
        SeConvention::Sample => (ss / (kf - 1.0)).sqrt(),
    };
    let mse = ies.iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>() / kf;
    Ok(IeSummary { mean, se, mse })
}

fn check_lengths(observed: &[f64], predicted: &[f64]) -> Result<()> {
    if observed.len() != predicted.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observed vs {} predicted",
            observed.len(),
            predicted.len()
        )));
    }
    Ok(())
}

/// Total row count and pooled observed mean.
fn pooled_mean(reps: &[RepSlices<'_>]) -> Result<(f64, f64)> {
    let mut n = 0usize;
    let mut total = 0.0;
    for (o, p) in reps {
        check_lengths(o, p)?;
        n += o.len();
        total += o.iter().sum::<f64>();
    }
    if n == 0 {
        return Err(Error::EmptyTestSet);
    }
    let mean = total / n as f64;
    if mean == 0.0 {
        return Err(Error::ZeroMeanObserved);
    }
    Ok((n as f64, mean))
}

/// Pooled mean absolute error and its ratio to the pooled observed mean.
pub fn pooled_mae(reps: &[RepSlices<'_>]) -> Result<(f64, f64)> {
    let (n, mean) = pooled_mean(reps)?;
    let abs: f64 = reps
        .iter()
        .map(|(o, p)| o.iter().zip(*p).map(|(a, b)| (b - a).abs()).sum::<f64>())
        .sum();
    let mae = abs / n;
    Ok((mae, mae / mean))
}

/// Pooled root mean squared error over the pooled observed mean.
pub fn pooled_rrmse(reps: &[RepSlices<'_>]) -> Result<f64> {
    let (n, mean) = pooled_mean(reps)?;
    let sq: f64 = reps
        .iter()
        .map(|(o, p)| o.iter().zip(*p).map(|(a, b)| (b - a) * (b - a)).sum::<f64>())
        .sum();
    Ok((sq / n).sqrt() / mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum R2Mode {
    /// Squared correlation per repetition, averaged.
    #[default]
    PerRep,
    /// One squared correlation over all pooled rows.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R2Summary {
    pub value: f64,
    /// Repetitions skipped for zero variance (per-rep mode only).
    pub skipped: usize,
}

fn squared_correlation<'a>(pairs: impl Iterator<Item = (&'a f64, &'a f64)> + Clone) -> Option<f64> {
    let (mut n, mut so, mut sp) = (0.0, 0.0, 0.0);
    for (o, p) in pairs.clone() {
        n += 1.0;
        so += o;
        sp += p;
    }
    if n == 0.0 {
        return None;
    }
    let (mo, mp) = (so / n, sp / n);
    let (mut cov, mut vo, mut vp) = (0.0, 0.0, 0.0);
    for (o, p) in pairs {
        cov += (o - mo) * (p - mp);
        vo += (o - mo) * (o - mo);
        vp += (p - mp) * (p - mp);
    }
    if vo <= 0.0 || vp <= 0.0 {
        return None;
    }
    Some((cov * cov / (vo * vp)).min(1.0))
}

pub fn oos_r2(reps: &[RepSlices<'_>], mode: R2Mode) -> Result<R2Summary> {
    for (o, p) in reps {
        check_lengths(o, p)?;
    }
    match mode {
        R2Mode::PerRep => {
            let mut sum = 0.0;
            let mut used = 0usize;
            for (o, p) in reps {
                match squared_correlation(o.iter().zip(*p)) {
                    Some(r2) => {
                        sum += r2;
                        used += 1;
                    }
                    None => log::warn!("R2: skipping a repetition with zero variance"),
                }
            }
            if used == 0 {
                return Err(Error::ZeroVariance("every repetition has zero variance".into()));
            }
            Ok(R2Summary {
                value: sum / used as f64,
                skipped: reps.len() - used,
            })
        }
        R2Mode::Pooled => {
            let pooled = reps.iter().flat_map(|(o, p)| o.iter().zip(*p));
            let value = squared_correlation(pooled)
                .ok_or_else(|| Error::ZeroVariance("pooled predictions have zero variance".into()))?;
            Ok(R2Summary { value, skipped: 0 })
        }
    }
}

/// All reported measures for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub mean_ie: f64,
    pub se_ie: f64,
    pub mse_ie: f64,
    pub mae: f64,
    pub rmae: f64,
    pub rrmse: f64,
    pub r2: f64,
    /// Repetitions that produced predictions.
    pub reps: usize,
    /// Repetitions whose IE had a non-positive denominator.
    pub ie_excluded: usize,
    pub r2_skipped: usize,
}

pub fn method_metrics(reps: &[RepSlices<'_>], r2_mode: R2Mode, se: SeConvention) -> Result<MethodMetrics> {
    let mut ies = Vec::with_capacity(reps.len());
    let mut excluded = 0;
    for (o, p) in reps {
        match imputation_estimator(o, p) {
            Ok(v) => ies.push(v),
            Err(Error::NonPositiveDenominator(_)) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    let ie = aggregate_ie(&ies, se)?;
    let (mae, rmae) = pooled_mae(reps)?;
    let rrmse = pooled_rrmse(reps)?;
    let r2 = oos_r2(reps, r2_mode)?;
    Ok(MethodMetrics {
        mean_ie: ie.mean,
        se_ie: ie.se,
        mse_ie: ie.mse,
        mae,
        rmae,
        rrmse,
        r2: r2.value,
        reps: reps.len(),
        ie_excluded: excluded,
        r2_skipped: r2.skipped,
    })
}
