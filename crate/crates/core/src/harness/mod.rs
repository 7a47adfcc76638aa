//! Repeated train/test evaluation of every configured method.

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{BalanceWindow, ExperimentConfig, Method, ReportFormat};
pub use report::{emit_report, repetition_log, write_outputs};

use crate::error::{Error, Result};
use crate::gravity::{fit_gravity, predict_gravity, Augmentation, FittedGravity, GravityKind, GravitySpec};
use crate::metrics::{method_metrics, MethodMetrics, R2Mode, SeConvention};
use crate::ml::{fit_learner, fit_stack, FeatureMap, LearnerKind, NetworkPipeline, Regressor};
use crate::panel::{balance_panel, load_panel, LoadReport, PairKey, TradePanel};
use crate::ppml::FeKind;
use crate::rng::derive_seed;
use crate::sampling::{make_split, standardize_pair_fe};
use crate::synth::generate_panel;

/// Balanced panel plus the standardized full-sample pair effects that drive
/// test-set selection.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub panel: TradePanel,
    pub eta_std: BTreeMap<PairKey, f64>,
    pub load: Option<LoadReport>,
    /// Pairs without a full-sample pair effect (all-zero trade); never tested.
    pub unselectable_pairs: usize,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let (panel, load) = match (&config.data, &config.synth) {
        (Some(path), None) => {
            let (p, report) = load_panel(path, &config.schema)?;
            (p, Some(report))
        }
        (None, Some(params)) => (generate_panel(params)?.0, None),
        _ => unreachable!("validated"),
    };
    prepare_panel(config, panel, load)
}

/// [`prepare`] on an already loaded panel.
pub fn prepare_panel(config: &ExperimentConfig, panel: TradePanel, load: Option<LoadReport>) -> Result<Prepared> {
    let (first, last) = match config.balance {
        Some(w) => (w.first_year, w.last_year),
        None => panel.year_range(),
    };
    let panel = balance_panel(&panel, (first, last), (last - first + 1) as usize)?;
    let full = fit_gravity(&GravitySpec::new(GravityKind::ThreeWay), &panel, &config.ppml)?;
    let pair_fe = full
        .fit
        .fe_dimension(&FeKind::Pair)
        .ok_or_else(|| Error::Config("three-way fit lacks pair effects".into()))?;
    let eta: BTreeMap<PairKey, f64> = panel
        .pair_index()
        .keys()
        .filter_map(|p| pair_fe.values.get(&p.to_string()).map(|&v| (p.clone(), v)))
        .collect();
    let unselectable_pairs = panel.n_pairs() - eta.len();
    let eta_std = standardize_pair_fe(&eta)?;
    log::info!(
        "prepared {} rows, {} pairs ({} without a pair effect)",
        panel.len(),
        panel.n_pairs(),
        unselectable_pairs
    );
    Ok(Prepared {
        config: config.clone(),
        panel,
        eta_std,
        load,
        unselectable_pairs,
    })
}

pub type MethodResult = std::result::Result<Vec<f64>, String>;

/// Observed test outcomes and every method's predictions for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionOutcome {
    pub k: usize,
    pub test_rows: Vec<usize>,
    pub observed: Vec<f64>,
    pub predictions: BTreeMap<Method, MethodResult>,
}

impl RepetitionOutcome {
    pub fn n_k(&self) -> usize {
        self.test_rows.len()
    }
}

struct NetworkAugmentation {
    features: FeatureMap,
    model: Arc<NetworkPipeline>,
}

impl Augmentation for NetworkAugmentation {
    fn fitted(&self, panel: &TradePanel) -> Result<Vec<f64>> {
        self.model.predict(&self.features.transform(panel)?.x)
    }
}

fn learner_for(method: Method) -> Option<LearnerKind> {
    match method {
        Method::Rf | Method::RfFe => Some(LearnerKind::Forest),
        Method::Gb | Method::GbFe => Some(LearnerKind::Boosting),
        Method::Nn | Method::NnFe => Some(LearnerKind::Network),
        _ => None,
    }
}

fn gravity_kind(method: Method) -> Option<GravityKind> {
    match method {
        Method::Trad => Some(GravityKind::Traditional),
        Method::OneWay => Some(GravityKind::OneWay),
        Method::TwoWay => Some(GravityKind::TwoWay),
        Method::ThreeWay => Some(GravityKind::ThreeWay),
        _ => None,
    }
}

/// Fits every method on `train` and predicts `test`.
///
/// `test` should carry no outcomes; nothing here reads them. A training
/// three-way fit and a no-FE network are fitted at most once and shared.
pub fn predict_methods(
    config: &ExperimentConfig,
    train: &TradePanel,
    test: &TradePanel,
    seed: u64,
) -> BTreeMap<Method, MethodResult> {
    let methods = &config.methods;
    let y = train.trade();
    let method_seed = |m: Method| derive_seed(seed, m as u64 + 1);

    let three: Option<Result<Arc<FittedGravity>>> = methods
        .iter()
        .any(|m| *m == Method::ThreeWay || m.uses_fe_features())
        .then(|| fit_gravity(&GravitySpec::new(GravityKind::ThreeWay), train, &config.ppml).map(Arc::new));
    let plain: Result<(FeatureMap, crate::ml::FeatureSet)> = FeatureMap::fit(train, None, false);
    let with_fe = || -> Result<(FeatureMap, crate::ml::FeatureSet)> {
        match &three {
            Some(Ok(fit)) => FeatureMap::fit(train, Some(fit.clone()), false),
            Some(Err(e)) => Err(Error::Config(format!("training three-way fit failed: {e}"))),
            None => unreachable!("three-way fit requested"),
        }
    };
    let fe_features = methods.iter().any(|m| m.uses_fe_features()).then(with_fe);
    let network: Option<Result<Arc<NetworkPipeline>>> =
        methods.iter().any(|m| matches!(m, Method::Nn | Method::ThreeWayMl)).then(|| {
            let (_, x) = plain.as_ref().map_err(clone_err)?;
            NetworkPipeline::fit(&x.x, &y, &config.learners.network, method_seed(Method::Nn)).map(Arc::new)
        });
    let clusters = pair_clusters(train);

    let mut out = BTreeMap::new();
    for &method in methods {
        let result: Result<Vec<f64>> = (|| {
            if let Some(kind) = gravity_kind(method) {
                if kind == GravityKind::ThreeWay {
                    let fit = three.as_ref().expect("fitted").as_ref().map_err(clone_err)?;
                    return predict_gravity(fit, test);
                }
                let fit = fit_gravity(&GravitySpec::new(kind), train, &config.ppml)?;
                return predict_gravity(&fit, test);
            }
            let (map, x) = if method.uses_fe_features() {
                fe_features.as_ref().expect("built").as_ref().map_err(clone_err)?
            } else {
                plain.as_ref().map_err(clone_err)?
            };
            let x_test = map.transform(test)?.x;
            match method {
                Method::ThreeWayMl => {
                    let net = network.as_ref().expect("fitted").as_ref().map_err(clone_err)?;
                    let aug = NetworkAugmentation {
                        features: map.clone(),
                        model: net.clone(),
                    };
                    let fit = fit_gravity(&GravitySpec::augmented(Arc::new(aug)), train, &config.ppml)?;
                    predict_gravity(&fit, test)
                }
                Method::Nn => network.as_ref().expect("fitted").as_ref().map_err(clone_err)?.predict(&x_test),
                Method::Ens | Method::EnsFe => {
                    let stack = fit_stack(
                        &LearnerKind::ALL,
                        &config.learners,
                        &x.x,
                        &y,
                        &clusters,
                        config.learners.stack_folds,
                        method_seed(method),
                    )?;
                    stack.predict(&x_test)
                }
                _ => {
                    let kind = learner_for(method).expect("learner method");
                    fit_learner(kind, &x.x, &y, &config.learners, method_seed(method))?.predict(&x_test)
                }
            }
        })();
        let result = result.and_then(|v| {
            if v.iter().all(|p| p.is_finite()) {
                Ok(v)
            } else {
                Err(Error::InvalidInput("non-finite predictions".into()))
            }
        });
        if let Err(e) = &result {
            log::warn!("{method}: {e}");
        }
        out.insert(method, result.map_err(|e| e.to_string()));
    }
    out
}

fn clone_err(e: &Error) -> Error {
    Error::Config(e.to_string())
}

/// Cluster id per row: the position of the row's pair among the panel's pairs.
fn pair_clusters(panel: &TradePanel) -> Vec<usize> {
    let mut c = vec![0; panel.len()];
    for (i, rows) in panel.pair_index().values().enumerate() {
        rows.iter().for_each(|&r| c[r] = i);
    }
    c
}

pub fn run_repetition(ctx: &Prepared, k: usize) -> RepetitionOutcome {
    let cfg = &ctx.config;
    let fail_all = |msg: String| RepetitionOutcome {
        k,
        test_rows: Vec::new(),
        observed: Vec::new(),
        predictions: cfg.methods.iter().map(|&m| (m, Err(msg.clone()))).collect(),
    };
    let plan = match make_split(&ctx.panel, cfg.scenario.params(), &ctx.eta_std, cfg.year_rule, cfg.seed, k as u64) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("repetition {k}: split failed: {e}");
            return fail_all(format!("split failed: {e}"));
        }
    };
    let (train, test) = match (ctx.panel.subset(&plan.train_rows), ctx.panel.subset(&plan.test_rows)) {
        (Ok(a), Ok(b)) => (a, b.without_outcomes()),
        (Err(e), _) | (_, Err(e)) => return fail_all(e.to_string()),
    };
    let obs = ctx.panel.observations();
    let observed = plan.test_rows.iter().map(|&r| obs[r].trade).collect();
    let predictions = predict_methods(cfg, &train, &test, derive_seed(cfg.seed, 0x5EED_0000 + k as u64));
    RepetitionOutcome {
        k,
        test_rows: plan.test_rows,
        observed,
        predictions,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NkSummary {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodReport {
    pub method: Method,
    pub metrics: Option<MethodMetrics>,
    pub failures: usize,
    /// Why metrics are missing, when they are.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub reps: usize,
    pub n_k: Option<NkSummary>,
    pub methods: Vec<MethodReport>,
    pub r2_mode: R2Mode,
    pub se: SeConvention,
}

impl MetricsReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Folds repetition outcomes, in the given order, into per-method metrics.
pub fn aggregate(outcomes: &[RepetitionOutcome], config: &ExperimentConfig) -> MetricsReport {
    let sizes: Vec<usize> = outcomes.iter().map(|o| o.n_k()).filter(|&n| n > 0).collect();
    let n_k = (!sizes.is_empty()).then(|| NkSummary {
        min: *sizes.iter().min().unwrap(),
        max: *sizes.iter().max().unwrap(),
        mean: sizes.iter().sum::<usize>() as f64 / sizes.len() as f64,
    });
    let methods = config
        .methods
        .iter()
        .map(|&m| {
            let reps: Vec<(&[f64], &[f64])> = outcomes
                .iter()
                .filter_map(|o| match o.predictions.get(&m) {
                    Some(Ok(p)) => Some((o.observed.as_slice(), p.as_slice())),
                    _ => None,
                })
                .collect();
            let failures = outcomes.len() - reps.len();
            let (metrics, error) = if reps.is_empty() {
                (None, Some("no successful repetition".to_string()))
            } else {
                match method_metrics(&reps, config.r2_mode, config.se) {
                    Ok(mm) => (Some(mm), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            };
            MethodReport {
                method: m,
                metrics,
                failures,
                error,
            }
        })
        .collect();
    MetricsReport {
        scenario: config.scenario.to_string(),
        reps: outcomes.len(),
        n_k,
        methods,
        r2_mode: config.r2_mode,
        se: config.se,
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub report: MetricsReport,
    pub outcomes: Vec<RepetitionOutcome>,
}

/// Runs `config.reps` repetitions on a pool of `config.jobs` threads.
/// Results depend only on the seed, never on the number of workers.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let ctx = prepare(config)?;
    run_prepared(&ctx)
}

pub fn run_prepared(ctx: &Prepared) -> Result<ExperimentResult> {
    let cfg = &ctx.config;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut outcomes: Vec<RepetitionOutcome> =
        pool.install(|| (0..cfg.reps).into_par_iter().map(|k| run_repetition(ctx, k)).collect());
    outcomes.sort_by_key(|o| o.k);
    let report = aggregate(&outcomes, cfg);
    for m in &report.methods {
        if m.failures as f64 > cfg.max_failure_share * cfg.reps as f64 {
            return Err(Error::TooManyFailures {
                method: m.method.name().to_string(),
                failures: m.failures,
                reps: cfg.reps,
            });
        }
    }
    Ok(ExperimentResult { report, outcomes })
}
