use std::collections::{BTreeMap, BTreeSet};

use gravcast::harness::{prepare, ExperimentConfig, Prepared};
use gravcast::panel::PairKey;
use gravcast::sampling::{make_split, Scenario, YearRule};
use gravcast::synth::DgpParams;

fn context() -> Prepared {
    let cfg = ExperimentConfig {
        synth: Some(DgpParams {
            seed: 21,
            ..Default::default()
        }),
        ..Default::default()
    };
    prepare(&cfg).unwrap()
}

/// Per-pair share of repetitions in which the pair contributes test rows.
fn test_rates(ctx: &Prepared, scenario: Scenario, reps: u64) -> BTreeMap<PairKey, f64> {
    let mut hits: BTreeMap<PairKey, usize> = ctx.eta_std.keys().map(|k| (k.clone(), 0)).collect();
    for k in 0..reps {
        let plan = make_split(&ctx.panel, scenario.params(), &ctx.eta_std, YearRule::Position, 5, k).unwrap();
        let pairs: BTreeSet<PairKey> = plan.test_rows.iter().map(|&r| ctx.panel.observations()[r].pair()).collect();
        for p in pairs {
            *hits.get_mut(&p).unwrap() += 1;
        }
    }
    hits.into_iter().map(|(k, h)| (k, h as f64 / reps as f64)).collect()
}

#[test]
fn exogenous_selection_is_unrelated_to_pair_effects() {
    let ctx = context();
    let rates = test_rates(&ctx, Scenario::Custom { a: 0.0, b: 0.0 }, 1000);
    let (x, y): (Vec<f64>, Vec<f64>) = rates.iter().map(|(k, r)| (ctx.eta_std[k], *r)).unzip();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let corr = cov / (vx * vy).sqrt();
    assert!(corr.abs() <= 0.05, "corr {corr}");
    assert!((my - 0.5).abs() < 0.02, "mean rate {my}");
}

#[test]
fn endogenous_selection_favours_large_pair_effects() {
    let ctx = context();
    let rates = test_rates(&ctx, Scenario::Endogenous, 1000);
    let mut by_eta: Vec<(f64, f64)> = rates.iter().map(|(k, r)| (ctx.eta_std[k], *r)).collect();
    by_eta.sort_by(|a, b| a.0.total_cmp(&b.0));
    let d = by_eta.len() / 10;
    let mean = |s: &[(f64, f64)]| s.iter().map(|v| v.1).sum::<f64>() / s.len() as f64;
    let bottom = mean(&by_eta[..d]);
    let top = mean(&by_eta[by_eta.len() - d..]);
    assert!(top >= 5.0 * bottom, "top {top}, bottom {bottom}");
}
