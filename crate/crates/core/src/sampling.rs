//! Test-set selection: logistic pair selection on standardized pair effects,
//! then the most recent years of each selected pair.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{PairKey, TradePanel};
use crate::rng::{derive_seed, substream};

/// Selection intercept `a` and endogeneity strength `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Endogenous,
    Exogenous,
    SmallEndogenous,
    Custom { a: f64, b: f64 },
}

impl Scenario {
    pub fn params(self) -> SelectionParams {
        match self {
            Scenario::Endogenous => SelectionParams { a: 5.0, b: 1.0 },
            Scenario::Exogenous => SelectionParams { a: 4.6, b: 0.0 },
            Scenario::SmallEndogenous => SelectionParams { a: 7.5, b: 1.0 },
            Scenario::Custom { a, b } => SelectionParams { a, b },
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Endogenous => f.write_str("endogenous"),
            Scenario::Exogenous => f.write_str("exogenous"),
            Scenario::SmallEndogenous => f.write_str("small-endogenous"),
            Scenario::Custom { a, b } => write!(f, "custom(a={a}, b={b})"),
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    /// Accepts the preset names or `a,b`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "endogenous" => Ok(Scenario::Endogenous),
            "exogenous" => Ok(Scenario::Exogenous),
            "small-endogenous" => Ok(Scenario::SmallEndogenous),
            other => {
                let parts: Vec<&str> = other.split(',').map(str::trim).collect();
                let bad = || Error::Config(format!("unknown scenario `{other}`"));
                if parts.len() != 2 {
                    return Err(bad());
                }
                let a: f64 = parts[0].parse().map_err(|_| bad())?;
                let b: f64 = parts[1].parse().map_err(|_| bad())?;
                if !(a.is_finite() && b.is_finite()) {
                    return Err(bad());
                }
                Ok(Scenario::Custom { a, b })
            }
        }
    }
}

/// How the year threshold inside a selected pair is located.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum YearRule {
    /// Training keeps the first `ceil(0.6 T)` positions (before the shift).
    #[default]
    Position,
    /// Training keeps the years at or below the interpolated 60th percentile
    /// of the pair's years (before the shift).
    Interpolated,
}

/// Centres and scales pair effects to mean 0 and population sd 1.
pub fn standardize_pair_fe(eta: &BTreeMap<PairKey, f64>) -> Result<BTreeMap<PairKey, f64>> {
    if eta.len() < 2 {
        return Err(Error::ZeroVariance("need at least two pair effects".into()));
    }
    let n = eta.len() as f64;
    let mean = eta.values().sum::<f64>() / n;
    let sd = (eta.values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) {
        return Err(Error::ZeroVariance("pair effects are constant".into()));
    }
    Ok(eta.iter().map(|(k, v)| (k.clone(), (v - mean) / sd)).collect())
}

/// `1 / (1 + exp(a - b * eta_std))`.
pub fn selection_prob(eta_std: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + (a - b * eta_std).exp())
}

/// One uniform draw per pair, in key order; pairs with `u < p` are kept.
pub fn select_pairs<R: Rng>(probs: &BTreeMap<PairKey, f64>, rng: &mut R) -> Vec<PairKey> {
    probs
        .iter()
        .filter_map(|(k, &p)| (rng.random::<f64>() < p).then(|| k.clone()))
        .collect()
}

/// Number of training years for a pair observed in the sorted `years`,
/// given the shift `delta`. At least one training and one test year remain.
pub fn training_years(years: &[i32], delta: i32, rule: YearRule) -> Result<usize> {
    let t = years.len();
    if t < 2 {
        return Err(Error::TooFewYears(t));
    }
    let base = match rule {
        YearRule::Position => (0.6 * t as f64).ceil() as i64,
        YearRule::Interpolated => {
            let pos = 0.6 * (t - 1) as f64;
            let (lo, frac) = (pos.floor() as usize, pos.fract());
            let q = if lo + 1 < t {
                years[lo] as f64 + frac * (years[lo + 1] - years[lo]) as f64
            } else {
                years[lo] as f64
            };
            years.iter().filter(|&&y| y as f64 <= q).count() as i64
        }
    };
    Ok((base + delta as i64).clamp(1, t as i64 - 1) as usize)
}

/// Draws the shift uniformly from {-2, ..., 2} and returns the number of
/// training years.
pub fn select_years<R: Rng>(years: &[i32], rule: YearRule, rng: &mut R) -> Result<usize> {
    let delta = rng.random_range(-2..=2);
    training_years(years, delta, rule)
}

/// Train/test partition of panel rows for one repetition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub test_rows: Vec<usize>,
    pub train_rows: Vec<usize>,
    /// Test rows returned to training to keep country-year groups covered.
    pub moved_back: usize,
}

impl SplitPlan {
    pub fn n_k(&self) -> usize {
        self.test_rows.len()
    }

    /// Checks the partition, pair-timing and coverage invariants.
    pub fn check(&self, panel: &TradePanel) -> Result<()> {
        let bad = |m: String| Err(Error::SplitInvariant(m));
        let mut seen = vec![0u8; panel.len()];
        for &r in self.test_rows.iter().chain(&self.train_rows) {
            if r >= panel.len() {
                return bad(format!("row {r} out of range"));
            }
            seen[r] += 1;
        }
        if seen.iter().any(|&c| c != 1) {
            return bad("test and train rows must partition the panel".into());
        }
        let obs = panel.observations();
        let mut first_test: BTreeMap<PairKey, i32> = BTreeMap::new();
        for &r in &self.test_rows {
            let e = first_test.entry(obs[r].pair()).or_insert(i32::MAX);
            *e = (*e).min(obs[r].year);
        }
        let mut has_train: HashSet<PairKey> = HashSet::new();
        let mut exp_years: HashSet<(Arc<str>, i32)> = HashSet::new();
        let mut imp_years: HashSet<(Arc<str>, i32)> = HashSet::new();
        for &r in &self.train_rows {
            let o = &obs[r];
            if let Some(&t) = first_test.get(&o.pair()) {
                if o.year >= t {
                    return bad(format!("pair {} trains on year {} after testing from {t}", o.pair(), o.year));
                }
                has_train.insert(o.pair());
            }
            exp_years.insert((o.exporter.clone(), o.year));
            imp_years.insert((o.importer.clone(), o.year));
        }
        if let Some(p) = first_test.keys().find(|p| !has_train.contains(*p)) {
            return bad(format!("pair {p} has no training rows"));
        }
        for &r in &self.test_rows {
            let o = &obs[r];
            if !exp_years.contains(&(o.exporter.clone(), o.year)) || !imp_years.contains(&(o.importer.clone(), o.year)) {
                return bad(format!("row {r} has a country-year group absent from training"));
            }
        }
        Ok(())
    }
}

const SPLIT_LABEL: u64 = 0x5311;

/// Builds the split for repetition `k` from its own substream of `seed`.
///
/// Pairs missing from `eta_std` are never selected. An empty draw is retried
/// once before failing.
pub fn make_split(
    panel: &TradePanel,
    params: SelectionParams,
    eta_std: &BTreeMap<PairKey, f64>,
    rule: YearRule,
    seed: u64,
    k: u64,
) -> Result<SplitPlan> {
    if !(params.a.is_finite() && params.b.is_finite()) {
        return Err(Error::InvalidInput("selection parameters must be finite".into()));
    }
    let mut rng = substream(derive_seed(seed, SPLIT_LABEL), k);
    let probs: BTreeMap<PairKey, f64> = panel
        .pair_index()
        .keys()
        .filter_map(|p| eta_std.get(p).map(|&e| (p.clone(), selection_prob(e, params.a, params.b))))
        .collect();
    let obs = panel.observations();
    for _attempt in 0..2 {
        let mut is_test = vec![false; panel.len()];
        for pair in select_pairs(&probs, &mut rng) {
            let rows = &panel.pair_index()[&pair];
            let years: Vec<i32> = rows.iter().map(|&r| obs[r].year).collect();
            let n_train = select_years(&years, rule, &mut rng)?;
            rows[n_train..].iter().for_each(|&r| is_test[r] = true);
        }
        let moved_back = restore_coverage(panel, &mut is_test);
        if moved_back > 0 {
            log::warn!("repetition {k}: {moved_back} test rows moved back to training for group coverage");
        }
        let (test_rows, train_rows): (Vec<usize>, Vec<usize>) = (0..panel.len()).partition(|&r| is_test[r]);
        if test_rows.is_empty() {
            continue;
        }
        let plan = SplitPlan {
            test_rows,
            train_rows,
            moved_back,
        };
        plan.check(panel)?;
        return Ok(plan);
    }
    Err(Error::EmptyTestSet)
}

/// Moves test rows whose exporter-year or importer-year group is absent from
/// training back to training, together with the pair's earlier test rows.
fn restore_coverage(panel: &TradePanel, is_test: &mut [bool]) -> usize {
    let obs = panel.observations();
    let mut moved = 0;
    loop {
        let mut exp_years = HashSet::new();
        let mut imp_years = HashSet::new();
        for (_, o) in obs.iter().enumerate().filter(|(r, _)| !is_test[*r]) {
            exp_years.insert((o.exporter.clone(), o.year));
            imp_years.insert((o.importer.clone(), o.year));
        }
        let offending: Vec<usize> = (0..obs.len())
            .filter(|&r| {
                is_test[r]
                    && (!exp_years.contains(&(obs[r].exporter.clone(), obs[r].year))
                        || !imp_years.contains(&(obs[r].importer.clone(), obs[r].year)))
            })
            .collect();
        if offending.is_empty() {
            return moved;
        }
        for r in offending {
            let year = obs[r].year;
            for &q in &panel.pair_index()[&obs[r].pair()] {
                if is_test[q] && obs[q].year <= year {
                    is_test[q] = false;
                    moved += 1;
                }
            }
        }
    }
}
