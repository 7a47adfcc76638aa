//! The gravity specifications as PPML designs.
//!
//! | kind         | regressors                                              | fixed effects           |
//! |--------------|---------------------------------------------------------|-------------------------|
//! | `trad`       | const, GDPs, distance, all dummies                      | none                    |
//! | `twoway`     | distance, all dummies                                   | exporter-year, importer-year |
//! | `oneway`     | GDPs, time-varying dummies                              | pair                    |
//! | `threeway`   | time-varying dummies                                    | all three               |
//! | `threeway-ml`| threeway plus log of an auxiliary positive prediction   | all three               |
//!
//! Listed columns still pass through [`drop_collinear`], so a listed column
//! is not guaranteed to survive.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::TradePanel;
use crate::ppml::{drop_collinear, fit_ppml, predict_mu, FeDimension, FeKind, PpmlFit, PpmlOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GravityKind {
    #[serde(rename = "trad")]
    Traditional,
    #[serde(rename = "oneway")]
    OneWay,
    #[serde(rename = "twoway")]
    TwoWay,
    #[serde(rename = "threeway")]
    ThreeWay,
    #[serde(rename = "threeway-ml")]
    ThreeWayMl,
}

pub const AUGMENT_COLUMN: &str = "ln_augment";

impl GravityKind {
    pub const ALL: [GravityKind; 5] = [
        GravityKind::Traditional,
        GravityKind::OneWay,
        GravityKind::TwoWay,
        GravityKind::ThreeWay,
        GravityKind::ThreeWayMl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GravityKind::Traditional => "trad",
            GravityKind::OneWay => "oneway",
            GravityKind::TwoWay => "twoway",
            GravityKind::ThreeWay => "threeway",
            GravityKind::ThreeWayMl => "threeway-ml",
        }
    }

    /// Regressors listed before collinearity screening.
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            GravityKind::Traditional => &[
                "const", "ln_gdp_o", "ln_gdp_d", "ln_dist", "eu", "cu", "rta", "contig", "comlang", "colony",
                "sanction",
            ],
            GravityKind::TwoWay => &["ln_dist", "eu", "cu", "rta", "contig", "comlang", "colony", "sanction"],
            GravityKind::OneWay => &["ln_gdp_o", "ln_gdp_d", "eu", "cu", "rta", "sanction"],
            GravityKind::ThreeWay => &["eu", "cu", "rta", "sanction"],
            GravityKind::ThreeWayMl => &["eu", "cu", "rta", "sanction", AUGMENT_COLUMN],
        }
    }

    pub fn fe_kinds(self) -> &'static [FeKind] {
        const TWO: [FeKind; 2] = [FeKind::ExporterYear, FeKind::ImporterYear];
        const ONE: [FeKind; 1] = [FeKind::Pair];
        const THREE: [FeKind; 3] = [FeKind::ExporterYear, FeKind::ImporterYear, FeKind::Pair];
        match self {
            GravityKind::Traditional => &[],
            GravityKind::TwoWay => &TWO,
            GravityKind::OneWay => &ONE,
            GravityKind::ThreeWay | GravityKind::ThreeWayMl => &THREE,
        }
    }
}

impl fmt::Display for GravityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GravityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GravityKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown gravity specification `{s}`")))
    }
}

/// Source of strictly positive auxiliary predictions for `threeway-ml`.
pub trait Augmentation: Send + Sync {
    fn fitted(&self, panel: &TradePanel) -> Result<Vec<f64>>;
}

#[derive(Clone)]
pub struct GravitySpec {
    pub kind: GravityKind,
    pub augmentation: Option<Arc<dyn Augmentation>>,
}

impl fmt::Debug for GravitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GravitySpec")
            .field("kind", &self.kind)
            .field("augmentation", &self.augmentation.is_some())
            .finish()
    }
}

impl GravitySpec {
    pub fn new(kind: GravityKind) -> Self {
        Self {
            kind,
            augmentation: None,
        }
    }

    pub fn augmented(augmentation: Arc<dyn Augmentation>) -> Self {
        Self {
            kind: GravityKind::ThreeWayMl,
            augmentation: Some(augmentation),
        }
    }

    fn augmentation_column(&self, panel: &TradePanel) -> Result<Option<Vec<f64>>> {
        if self.kind != GravityKind::ThreeWayMl {
            return Ok(None);
        }
        let aug = self
            .augmentation
            .as_ref()
            .ok_or_else(|| Error::Config("threeway-ml needs an augmentation provider".into()))?;
        let values = aug.fitted(panel)?;
        if values.len() != panel.len() {
            return Err(Error::DimensionMismatch(format!(
                "augmentation returned {} values for {} rows",
                values.len(),
                panel.len()
            )));
        }
        values
            .into_iter()
            .enumerate()
            .map(|(row, value)| {
                if value > 0.0 && value.is_finite() {
                    Ok(value.ln())
                } else {
                    Err(Error::NonPositiveAugmentation { row, value })
                }
            })
            .collect::<Result<Vec<f64>>>()
            .map(Some)
    }
}

/// Outcome, surviving regressors and fixed effects for one specification.
#[derive(Debug, Clone)]
pub struct Design {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    /// Names of the columns of `x`.
    pub columns: Vec<String>,
    /// Listed columns removed by collinearity screening.
    pub dropped: Vec<String>,
    pub fe: Vec<FeDimension>,
}

fn design_matrix(panel: &TradePanel, columns: &[&str], augment: Option<&[f64]>) -> DMatrix<f64> {
    let obs = panel.observations();
    DMatrix::from_fn(obs.len(), columns.len(), |r, c| match columns[c] {
        "const" => 1.0,
        AUGMENT_COLUMN => augment.map_or(0.0, |a| a[r]),
        name => obs[r].covariate_by_name(name).expect("known covariate"),
    })
}

pub fn build_design(spec: &GravitySpec, panel: &TradePanel) -> Result<Design> {
    if panel.is_empty() {
        return Err(Error::EmptyPanel("cannot build a design on an empty panel".into()));
    }
    let augment = spec.augmentation_column(panel)?;
    let listed = spec.kind.columns();
    let full = design_matrix(panel, listed, augment.as_deref());
    let fe: Vec<FeDimension> = spec
        .kind
        .fe_kinds()
        .iter()
        .map(|k| FeDimension::from_panel(k.clone(), panel))
        .collect();
    let selection = drop_collinear(&full, &fe, PpmlOptions::default().tol_rank);
    let x = full.select_columns(&selection.kept);
    Ok(Design {
        y: panel.trade(),
        x,
        columns: selection.kept.iter().map(|&c| listed[c].to_string()).collect(),
        dropped: selection.dropped.iter().map(|&c| listed[c].to_string()).collect(),
        fe,
    })
}

/// A fitted gravity specification.
#[derive(Debug, Clone)]
pub struct FittedGravity {
    pub spec: GravitySpec,
    pub fit: PpmlFit,
    /// Design columns passed to the estimator, aligned with `fit`'s columns.
    pub columns: Vec<String>,
    /// Listed columns dropped before estimation.
    pub dropped: Vec<String>,
    /// Per fixed-effect dimension, training groups whose outcomes were all
    /// zero. Their effect diverges to minus infinity, so they predict zero.
    pub separated_groups: Vec<BTreeSet<String>>,
}

impl FittedGravity {
    /// Columns with a coefficient, after all collinearity screening.
    pub fn surviving_columns(&self) -> Vec<&str> {
        self.fit.kept_columns.iter().map(|&c| self.columns[c].as_str()).collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        let c = self.columns.iter().position(|n| n == name)?;
        self.fit.coefficient(c)
    }

    /// True when some key is a separated training group and every other
    /// key is either estimated or separated.
    fn is_separated(&self, keys: &[&str]) -> bool {
        let mut any = false;
        for ((vals, sep), key) in self.fit.fe_values.iter().zip(&self.separated_groups).zip(keys) {
            if sep.contains(*key) {
                any = true;
            } else if !vals.values.contains_key(*key) {
                return false;
            }
        }
        any
    }
}

pub fn fit_gravity(spec: &GravitySpec, train: &TradePanel, opts: &PpmlOptions) -> Result<FittedGravity> {
    let design = build_design(spec, train)?;
    let fit = fit_ppml(&design.y, &design.x, &design.fe, opts)?;
    let separated_groups = design
        .fe
        .iter()
        .zip(&fit.fe_values)
        .map(|(dim, vals)| {
            fit.separated
                .iter()
                .map(|&r| &dim.keys()[r])
                .filter(|k| !vals.values.contains_key(k.as_str()))
                .cloned()
                .collect()
        })
        .collect();
    let model = FittedGravity {
        spec: spec.clone(),
        fit,
        columns: design.columns,
        dropped: design.dropped,
        separated_groups,
    };
    log::debug!(
        "{}: surviving regressors {:?}",
        spec.kind,
        model.surviving_columns()
    );
    Ok(model)
}

pub fn predict_gravity(model: &FittedGravity, test: &TradePanel) -> Result<Vec<f64>> {
    let augment = model.spec.augmentation_column(test)?;
    let names: Vec<&str> = model.columns.iter().map(String::as_str).collect();
    let x = design_matrix(test, &names, augment.as_deref());
    let kinds = model.spec.kind.fe_kinds();
    let mut row = vec![0.0; names.len()];
    test.observations()
        .iter()
        .enumerate()
        .map(|(r, obs)| {
            for (c, v) in row.iter_mut().enumerate() {
                *v = x[(r, c)];
            }
            let keys: Vec<String> = kinds.iter().map(|k| k.key(obs).expect("panel key")).collect();
            let key_refs: Vec<&str> = keys.iter().map(String::as_str).collect();
            match predict_mu(&model.fit, &row, &key_refs) {
                Err(Error::UnidentifiedGroup { .. }) if model.is_separated(&key_refs) => Ok(0.0),
                other => other,
            }
        })
        .collect()
}
