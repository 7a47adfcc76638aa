use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{R2Mode, SeConvention};
use crate::ml::LearnerParams;
use crate::panel::PanelSchema;
use crate::ppml::PpmlOptions;
use crate::sampling::{Scenario, YearRule};
use crate::synth::DgpParams;

/// An evaluated estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "trad")]
    Trad,
    #[serde(rename = "oneway")]
    OneWay,
    #[serde(rename = "twoway")]
    TwoWay,
    #[serde(rename = "threeway")]
    ThreeWay,
    #[serde(rename = "threeway-ml")]
    ThreeWayMl,
    #[serde(rename = "ens")]
    Ens,
    #[serde(rename = "rf")]
    Rf,
    #[serde(rename = "gb")]
    Gb,
    #[serde(rename = "nn")]
    Nn,
    #[serde(rename = "e-fe")]
    EnsFe,
    #[serde(rename = "rf-fe")]
    RfFe,
    #[serde(rename = "gb-fe")]
    GbFe,
    #[serde(rename = "nn-fe")]
    NnFe,
}

impl Method {
    /// Report column order.
    pub const TABLE_ORDER: [Method; 13] = [
        Method::Trad,
        Method::TwoWay,
        Method::OneWay,
        Method::ThreeWay,
        Method::Ens,
        Method::Rf,
        Method::Gb,
        Method::Nn,
        Method::EnsFe,
        Method::RfFe,
        Method::GbFe,
        Method::NnFe,
        Method::ThreeWayMl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Trad => "trad",
            Method::OneWay => "oneway",
            Method::TwoWay => "twoway",
            Method::ThreeWay => "threeway",
            Method::ThreeWayMl => "threeway-ml",
            Method::Ens => "ens",
            Method::Rf => "rf",
            Method::Gb => "gb",
            Method::Nn => "nn",
            Method::EnsFe => "e-fe",
            Method::RfFe => "rf-fe",
            Method::GbFe => "gb-fe",
            Method::NnFe => "nn-fe",
        }
    }

    /// Column heading in reports.
    pub fn label(self) -> &'static str {
        match self {
            Method::Trad => "Trad",
            Method::OneWay => "1-way",
            Method::TwoWay => "2-way",
            Method::ThreeWay => "3-way",
            Method::ThreeWayMl => "3-way-ML",
            Method::Ens => "Ens",
            Method::Rf => "RF",
            Method::Gb => "GB",
            Method::Nn => "NN",
            Method::EnsFe => "E-FE",
            Method::RfFe => "RF-FE",
            Method::GbFe => "GB-FE",
            Method::NnFe => "NN-FE",
        }
    }

    /// Whether the method needs fixed effects from a training three-way fit.
    pub fn uses_fe_features(self) -> bool {
        matches!(self, Method::EnsFe | Method::RfFe | Method::GbFe | Method::NnFe)
    }

    /// Parses a comma-separated list; `all` expands to the full roster.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        if s.trim() == "all" {
            return Ok(Method::TABLE_ORDER.to_vec());
        }
        let mut out: Vec<Method> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("empty method list".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::TABLE_ORDER
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::Config(format!("unknown report format `{s}`"))),
        }
    }
}

/// Inclusive year window for the balanced-panel filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceWindow {
    pub first_year: i32,
    pub last_year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// CSV panel; exclusive with `synth`.
    pub data: Option<PathBuf>,
    pub schema: PanelSchema,
    pub synth: Option<DgpParams>,
    /// Defaults to the panel's full year range.
    pub balance: Option<BalanceWindow>,
    pub scenario: Scenario,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub year_rule: YearRule,
    pub r2_mode: R2Mode,
    pub se: SeConvention,
    /// Abort when a method fails in more than this share of repetitions.
    pub max_failure_share: f64,
    pub ppml: PpmlOptions,
    pub learners: LearnerParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            schema: PanelSchema::default(),
            synth: None,
            balance: None,
            scenario: Scenario::Endogenous,
            reps: 100,
            methods: vec![Method::Trad, Method::TwoWay, Method::OneWay, Method::ThreeWay],
            seed: 1,
            out: None,
            format: ReportFormat::Markdown,
            jobs: 0,
            year_rule: YearRule::Position,
            r2_mode: R2Mode::PerRep,
            se: SeConvention::Population,
            max_failure_share: 0.1,
            ppml: PpmlOptions::default(),
            learners: LearnerParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.synth) {
            (Some(_), Some(_)) => return Err(Error::Config("set either `data` or `synth`, not both".into())),
            (None, None) => return Err(Error::Config("one of `data` or `synth` is required".into())),
            _ => {}
        }
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        let p = self.scenario.params();
        if !(p.a.is_finite() && p.b.is_finite()) {
            return Err(Error::Config("scenario parameters must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_share) {
            return Err(Error::Config("max_failure_share must lie in [0, 1]".into()));
        }
        if let Some(d) = &self.synth {
            d.validate()?;
        }
        Ok(())
    }
}
