//! Synthetic trade panels drawn from a known gravity data-generating process.
//!
//! Means are `exp(X b + alpha_it + gamma_jt + eta_ij + tau D)`. Covariates:
//! log GDPs are country-year random walks, log distance comes from random
//! planar coordinates, the dummies are pair-level episodes. The treatment
//! flag `D` is synthetic and never written to the panel.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Observation, PairKey, TradePanel};

/// True coefficients of the gravity covariates plus the constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrueCoefficients {
    pub constant: f64,
    pub ln_gdp_o: f64,
    pub ln_gdp_d: f64,
    pub ln_dist: f64,
    pub eu: f64,
    pub cu: f64,
    pub rta: f64,
    pub contig: f64,
    pub comlang: f64,
    pub colony: f64,
    pub sanction: f64,
}

impl Default for TrueCoefficients {
    fn default() -> Self {
        Self {
            constant: 6.0,
            ln_gdp_o: 0.8,
            ln_gdp_d: 0.7,
            ln_dist: -0.9,
            eu: 0.2,
            cu: 0.15,
            rta: 0.3,
            contig: 0.5,
            comlang: 0.3,
            colony: 0.25,
            sanction: -0.4,
        }
    }
}

impl TrueCoefficients {
    pub fn zero() -> Self {
        Self {
            constant: 0.0,
            ln_gdp_o: 0.0,
            ln_gdp_d: 0.0,
            ln_dist: 0.0,
            eu: 0.0,
            cu: 0.0,
            rta: 0.0,
            contig: 0.0,
            comlang: 0.0,
            colony: 0.0,
            sanction: 0.0,
        }
    }

    /// Coefficients in `[constant, COVARIATES...]` order.
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.constant,
            self.ln_gdp_o,
            self.ln_gdp_d,
            self.ln_dist,
            self.eu,
            self.cu,
            self.rta,
            self.contig,
            self.comlang,
            self.colony,
            self.sanction,
        ]
    }

    fn linear_index(&self, o: &Observation) -> f64 {
        self.constant
            + self.ln_gdp_o * o.ln_gdp_o
            + self.ln_gdp_d * o.ln_gdp_d
            + self.ln_dist * o.ln_dist
            + self.eu * o.eu as f64
            + self.cu * o.cu as f64
            + self.rta * o.rta as f64
            + self.contig * o.contig as f64
            + self.comlang * o.comlang as f64
            + self.colony * o.colony as f64
            + self.sanction * o.sanction as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ErrorKind {
    Poisson,
    /// Multiplicative lognormal error with unit mean.
    Lognormal { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpParams {
    pub n_exporters: usize,
    pub n_importers: usize,
    pub n_years: usize,
    pub first_year: i32,
    pub beta: TrueCoefficients,
    /// Log treatment effect applied where the synthetic flag is on.
    pub tau: f64,
    /// Share of rows receiving the synthetic treatment flag.
    pub treated_share: f64,
    /// Standard deviations of (exporter-year, importer-year, pair) effects.
    pub fe_sd: (f64, f64, f64),
    pub error_kind: ErrorKind,
    /// Loading of RTA formation on the standardized pair effect.
    pub selection_link: f64,
    pub seed: u64,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self {
            n_exporters: 20,
            n_importers: 20,
            n_years: 10,
            first_year: 2000,
            beta: TrueCoefficients::default(),
            tau: 0.0,
            treated_share: 0.0,
            fe_sd: (0.5, 0.5, 1.0),
            error_kind: ErrorKind::Poisson,
            selection_link: 0.0,
            seed: 1,
        }
    }
}

impl DgpParams {
    pub fn validate(&self) -> Result<()> {
        let (a, g, e) = self.fe_sd;
        if !(a >= 0.0 && g >= 0.0 && e >= 0.0) {
            return Err(Error::InvalidInput("fixed-effect sds must be non-negative".into()));
        }
        if self.n_exporters * self.n_importers * self.n_years < 50 {
            return Err(Error::InvalidInput(
                "n_exporters * n_importers * n_years must be at least 50".into(),
            ));
        }
        if self.n_exporters.max(self.n_importers) < 2 {
            return Err(Error::InvalidInput("need at least two countries".into()));
        }
        if !(0.0..=1.0).contains(&self.treated_share) {
            return Err(Error::InvalidInput("treated_share must lie in [0, 1]".into()));
        }
        if let ErrorKind::Lognormal { sigma } = self.error_kind {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidInput("lognormal sigma must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Ground truth behind a generated panel, aligned with its observations.
#[derive(Debug, Clone)]
pub struct Truth {
    pub beta: TrueCoefficients,
    pub tau: f64,
    pub alpha: BTreeMap<(Arc<str>, i32), f64>,
    pub gamma: BTreeMap<(Arc<str>, i32), f64>,
    pub eta: BTreeMap<PairKey, f64>,
    /// `X b` per row.
    pub linear_index: Vec<f64>,
    pub treated: Vec<bool>,
    /// Conditional mean including the treatment term.
    pub mu: Vec<f64>,
}

fn country_code(i: usize) -> Arc<str> {
    Arc::from(format!("C{i:03}").as_str())
}

pub fn generate_panel(params: &DgpParams) -> Result<(TradePanel, Truth)> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_countries = params.n_exporters.max(params.n_importers);
    let codes: Vec<Arc<str>> = (0..n_countries).map(country_code).collect();
    let years: Vec<i32> = (0..params.n_years as i32).map(|t| params.first_year + t).collect();
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    // Country-level series.
    let mut ln_gdp = vec![vec![0.0; years.len()]; n_countries];
    let mut coords = Vec::with_capacity(n_countries);
    let mut eu_join = Vec::with_capacity(n_countries);
    for series in ln_gdp.iter_mut() {
        let mut level = 4.0 + 1.5 * std_normal.sample(&mut rng);
        for v in series.iter_mut() {
            *v = level;
            level += 0.02 + 0.05 * std_normal.sample(&mut rng);
        }
        coords.push((rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0));
        eu_join.push(if rng.random::<f64>() < 0.25 {
            Some(params.first_year - 3 + rng.random_range(0..=params.n_years as i32))
        } else {
            None
        });
    }

    let normal = |sd: f64| Normal::new(0.0, sd.max(0.0)).unwrap();
    let (sd_a, sd_g, sd_e) = params.fe_sd;
    let mut alpha = BTreeMap::new();
    let mut gamma = BTreeMap::new();
    for (i, code) in codes.iter().enumerate() {
        for &t in &years {
            if i < params.n_exporters {
                alpha.insert((code.clone(), t), normal(sd_a).sample(&mut rng));
            }
            if i < params.n_importers {
                gamma.insert((code.clone(), t), normal(sd_g).sample(&mut rng));
            }
        }
    }

    struct PairDraw {
        exporter: usize,
        importer: usize,
        eta: f64,
        ln_dist: f64,
        contig: u8,
        comlang: u8,
        colony: u8,
        rta_from: Option<i32>,
        cu_from: Option<i32>,
        sanction: Option<(i32, i32)>,
    }
    let span = params.n_years as i32;
    let mut pairs = Vec::new();
    for e in 0..params.n_exporters {
        for m in 0..params.n_importers {
            if e == m {
                continue;
            }
            let z = std_normal.sample(&mut rng);
            let eta = sd_e * z;
            let (a, b) = (coords[e], coords[m]);
            let km = 100.0 + 1000.0 * ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
            let p_rta = 1.0 / (1.0 + (1.0 - params.selection_link * z).exp());
            let episode = |rng: &mut ChaCha8Rng, p: f64| {
                (rng.random::<f64>() < p)
                    .then(|| params.first_year - span / 2 + rng.random_range(0..=span + span / 2))
            };
            let rta_from = episode(&mut rng, p_rta);
            let cu_from = episode(&mut rng, 0.1);
            let sanction = episode(&mut rng, 0.05).map(|s| (s, s + rng.random_range(1..=4)));
            pairs.push(PairDraw {
                exporter: e,
                importer: m,
                eta,
                ln_dist: km.ln(),
                contig: (km < 1500.0 && rng.random::<f64>() < 0.7) as u8,
                comlang: (rng.random::<f64>() < 0.2) as u8,
                colony: (rng.random::<f64>() < 0.05) as u8,
                rta_from,
                cu_from,
                sanction,
            });
        }
    }

    let mut observations = Vec::new();
    let mut eta_map = BTreeMap::new();
    let mut linear_index = Vec::new();
    let mut treated = Vec::new();
    let mut mu = Vec::new();
    for p in &pairs {
        let (ce, cm) = (&codes[p.exporter], &codes[p.importer]);
        eta_map.insert(
            PairKey {
                exporter: ce.clone(),
                importer: cm.clone(),
            },
            p.eta,
        );
        for (ti, &t) in years.iter().enumerate() {
            let both_eu = matches!((eu_join[p.exporter], eu_join[p.importer]), (Some(a), Some(b)) if t >= a.max(b));
            let obs = Observation {
                exporter: ce.clone(),
                importer: cm.clone(),
                year: t,
                trade: 0.0,
                ln_gdp_o: ln_gdp[p.exporter][ti],
                ln_gdp_d: ln_gdp[p.importer][ti],
                ln_dist: p.ln_dist,
                eu: both_eu as u8,
                cu: p.cu_from.is_some_and(|s| t >= s) as u8,
                rta: p.rta_from.is_some_and(|s| t >= s) as u8,
                contig: p.contig,
                comlang: p.comlang,
                colony: p.colony,
                sanction: p.sanction.is_some_and(|(s, e)| t >= s && t < e) as u8,
            };
            let xb = params.beta.linear_index(&obs);
            let d = rng.random::<f64>() < params.treated_share;
            let log_mu = xb + alpha[&(ce.clone(), t)] + gamma[&(cm.clone(), t)] + p.eta + if d { params.tau } else { 0.0 };
            if log_mu > 700.0 {
                return Err(Error::Overflow(format!(
                    "log mean {log_mu:.1} for {ce}|{cm} in {t}; reduce coefficients"
                )));
            }
            let m = log_mu.exp();
            linear_index.push(xb);
            treated.push(d);
            mu.push(m);
            observations.push(obs);
        }
    }

    for (obs, &m) in observations.iter_mut().zip(&mu) {
        obs.trade = match params.error_kind {
            ErrorKind::Poisson => {
                if m > 0.0 {
                    Poisson::new(m).map(|d| d.sample(&mut rng)).unwrap_or(m.round())
                } else {
                    0.0
                }
            }
            ErrorKind::Lognormal { sigma } => {
                m * (sigma * std_normal.sample(&mut rng) - 0.5 * sigma * sigma).exp()
            }
        };
    }

    let panel = TradePanel::new(observations)?;
    Ok((
        panel,
        Truth {
            beta: params.beta,
            tau: params.tau,
            alpha,
            gamma,
            eta: eta_map,
            linear_index,
            treated,
            mu,
        },
    ))
}

/// Untreated conditional means `y0` for the given rows.
pub fn true_counterfactual(truth: &Truth, rows: &[usize]) -> Vec<f64> {
    rows.iter()
        .map(|&r| {
            if truth.treated[r] {
                truth.mu[r] * (-truth.tau).exp()
            } else {
                truth.mu[r]
            }
        })
        .collect()
}
