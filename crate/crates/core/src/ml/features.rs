use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gravity::{FittedGravity, GravityKind};
use crate::panel::{TradePanel, COVARIATES};
use crate::ppml::FeKind;

/// Names of the fixed-effect feature columns, in order.
pub const FE_FEATURES: [&str; 3] = ["fe_exporter_year", "fe_importer_year", "fe_pair"];

const FE_KINDS: [FeKind; 3] = [FeKind::ExporterYear, FeKind::ImporterYear, FeKind::Pair];

/// The ten gravity covariates as an `n x 10` matrix.
pub fn base_features(panel: &TradePanel) -> DMatrix<f64> {
    let obs = panel.observations();
    DMatrix::from_fn(obs.len(), COVARIATES.len(), |r, c| obs[r].covariate(c))
}

/// Per-column standardization with population standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// Zero marks a constant column, mapped to zeros.
    pub sd: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut sd = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            mean.push(m);
            sd.push(if s > 1e-12 * m.abs().max(1.0) { s } else { 0.0 });
        }
        Self { mean, sd }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "scaler fitted on {} columns, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            if self.sd[c] == 0.0 {
                0.0
            } else {
                (x[(r, c)] - self.mean[c]) / self.sd[c]
            }
        }))
    }
}

#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub standardized: bool,
}

impl FeatureSet {
    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }
}

/// Feature construction learned on a training panel and replayed on others.
///
/// Fixed-effect columns are looked up in a three-way fit. Groups that were
/// separated in that fit (all-zero outcomes) take the smallest estimated
/// value of their dimension.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    fe_fit: Option<Arc<FittedGravity>>,
    fallback: [f64; 3],
    scaler: Option<Scaler>,
}

impl FeatureMap {
    pub fn fit(
        train: &TradePanel,
        fe_fit: Option<Arc<FittedGravity>>,
        standardize: bool,
    ) -> Result<(Self, FeatureSet)> {
        let mut fallback = [0.0; 3];
        if let Some(model) = &fe_fit {
            if !matches!(model.spec.kind, GravityKind::ThreeWay | GravityKind::ThreeWayMl) {
                return Err(Error::Config(format!(
                    "fixed-effect features need a three-way fit, got {}",
                    model.spec.kind
                )));
            }
            for (slot, kind) in fallback.iter_mut().zip(&FE_KINDS) {
                let dim = model
                    .fit
                    .fe_dimension(kind)
                    .ok_or_else(|| Error::Config(format!("fit has no {} effects", kind.name())))?;
                *slot = dim.values.values().copied().fold(f64::INFINITY, f64::min);
            }
        }
        let mut map = Self {
            fe_fit,
            fallback,
            scaler: None,
        };
        let raw = map.raw(train)?;
        if standardize {
            map.scaler = Some(Scaler::fit(&raw));
        }
        let set = map.finish(raw)?;
        Ok((map, set))
    }

    pub fn transform(&self, panel: &TradePanel) -> Result<FeatureSet> {
        let raw = self.raw(panel)?;
        self.finish(raw)
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = COVARIATES.iter().map(|s| s.to_string()).collect();
        if self.fe_fit.is_some() {
            names.extend(FE_FEATURES.iter().map(|s| s.to_string()));
        }
        names
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        self.scaler.as_ref()
    }

    fn raw(&self, panel: &TradePanel) -> Result<DMatrix<f64>> {
        let base = base_features(panel);
        let Some(model) = &self.fe_fit else {
            return Ok(base);
        };
        let p = base.ncols();
        let mut x = base.resize_horizontally(p + 3, 0.0);
        let dims: Vec<_> = FE_KINDS
            .iter()
            .map(|k| {
                let pos = model.fit.fe_values.iter().position(|v| &v.kind == k).expect("checked at fit");
                (&model.fit.fe_values[pos], &model.separated_groups[pos])
            })
            .collect();
        for (r, obs) in panel.observations().iter().enumerate() {
            for (d, (kind, (vals, sep))) in FE_KINDS.iter().zip(&dims).enumerate() {
                let key = kind.key(obs).expect("panel key");
                x[(r, p + d)] = match vals.values.get(&key) {
                    Some(v) => *v,
                    None if sep.contains(&key) => self.fallback[d],
                    None => {
                        return Err(Error::UnidentifiedGroup {
                            dimension: vals.name.clone(),
                            key,
                        })
                    }
                };
            }
        }
        Ok(x)
    }

    fn finish(&self, raw: DMatrix<f64>) -> Result<FeatureSet> {
        let x = match &self.scaler {
            Some(s) => s.transform(&raw)?,
            None => raw,
        };
        Ok(FeatureSet {
            x,
            names: self.names(),
            standardized: self.scaler.is_some(),
        })
    }
}
