//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero when a gating criterion fails. Criterion 10 needs a real trade
//! panel (path in `GRAVCAST_DATA`) and never gates.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use common::{rel_diff, toy_three_way, DummyOracle};
use gravcast::gravity::{fit_gravity, GravityKind, GravitySpec};
use gravcast::harness::{emit_report, prepare, run_prepared, ExperimentConfig, Method, ReportFormat};
use gravcast::metrics::{
    aggregate_ie, imputation_estimator, oos_r2, pooled_mae, pooled_rrmse, R2Mode, SeConvention,
};
use gravcast::ml::mlp::Network;
use gravcast::ml::{fit_stack, simplex_least_squares, stack_objective, LearnerKind, LearnerParams, Scaler};
use gravcast::panel::{PairKey, PanelSchema};
use gravcast::ppml::{fit_ppml, FeDimension, PpmlOptions};
use gravcast::rng::substream;
use gravcast::sampling::{select_pairs, select_years, selection_prob, Scenario, YearRule};
use gravcast::synth::{generate_panel, DgpParams, TrueCoefficients};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn say(line: &str) {
    // Direct writes are not captured by the test runner.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn c1_ppml_oracle() -> Outcome {
    let toy = toy_three_way(5, 3, 7);
    let fe: Vec<FeDimension> = ["exporter_year", "importer_year", "pair"]
        .iter()
        .zip(&toy.keys)
        .map(|(n, k)| FeDimension::custom(*n, k.clone()))
        .collect();
    let fit = match fit_ppml(&toy.y, &toy.x, &fe, &PpmlOptions::default()) {
        Ok(f) => f,
        Err(e) => return outcome(false, format!("fit failed: {e}")),
    };
    let oracle = DummyOracle::fit(&toy.y, &toy.x, &toy.keys);
    let beta = fit
        .beta
        .iter()
        .zip(&oracle.beta)
        .map(|(a, b)| rel_diff(*a, *b))
        .fold(0.0, f64::max);
    let mu = fit
        .fitted_mu
        .iter()
        .zip(&oracle.mu)
        .map(|(a, b)| rel_diff(*a, *b))
        .fold(0.0, f64::max);
    outcome(
        fit.beta.len() == 2 && beta < 1e-6 && mu < 1e-6,
        format!("max rel diff beta {beta:.2e}, mu {mu:.2e} (tol 1e-6)"),
    )
}

fn c2_ppml_consistency() -> Outcome {
    // Traditional design on a DGP without fixed effects (all eleven
    // coefficients identified), and the three-way design on the full DGP.
    let seeds = 100;
    let trad_truth = TrueCoefficients::default().to_vec();
    let three_names = ["eu", "cu", "rta", "sanction"];
    let three_truth: Vec<f64> = {
        let t = TrueCoefficients::default();
        vec![t.eu, t.cu, t.rta, t.sanction]
    };
    let mut trad_est = vec![Vec::new(); trad_truth.len()];
    let mut three_est = vec![Vec::new(); three_truth.len()];
    let mut worst_sum = 0.0f64;
    let mut unidentified = 0usize;
    for s in 0..seeds {
        for (fe_sd, kind) in [((0.0, 0.0, 0.0), GravityKind::Traditional), ((0.5, 0.5, 1.0), GravityKind::ThreeWay)] {
            let params = DgpParams {
                fe_sd,
                seed: 1000 + s,
                ..Default::default()
            };
            let (panel, _) = generate_panel(&params).expect("dgp");
            let model = match fit_gravity(&GravitySpec::new(kind), &panel, &PpmlOptions::default()) {
                Ok(m) => m,
                Err(e) => return outcome(false, format!("seed {s} {kind}: {e}")),
            };
            let y: f64 = model.fit.sample.iter().map(|&r| panel.observations()[r].trade).sum();
            let mu: f64 = model.fit.fitted_mu.iter().sum();
            worst_sum = worst_sum.max(((y - mu) / y).abs());
            if kind == GravityKind::Traditional {
                let cols = kind.columns();
                for (i, name) in cols.iter().enumerate() {
                    // An indicator that never switches on in a draw is not identified.
                    match model.coefficient(name) {
                        Some(b) => trad_est[i].push(b),
                        None => unidentified += 1,
                    }
                }
            } else {
                for (i, name) in three_names.iter().enumerate() {
                    match model.coefficient(name) {
                        Some(b) => three_est[i].push(b),
                        None => unidentified += 1,
                    }
                }
            }
        }
    }
    let mut worst_z = 0.0f64;
    let mut worst_name = String::new();
    let names: Vec<String> = GravityKind::Traditional
        .columns()
        .iter()
        .map(|c| format!("trad:{c}"))
        .chain(three_names.iter().map(|c| format!("3way:{c}")))
        .collect();
    for ((est, truth), name) in trad_est
        .iter()
        .chain(&three_est)
        .zip(trad_truth.iter().chain(&three_truth))
        .zip(&names)
    {
        if est.len() < seeds as usize / 2 {
            return outcome(false, format!("{name} estimated in only {} fits", est.len()));
        }
        let n = est.len() as f64;
        let mean = est.iter().sum::<f64>() / n;
        let sd = (est.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let z = (mean - truth).abs() / (sd / n.sqrt());
        if z > worst_z {
            worst_z = z;
            worst_name = name.clone();
        }
    }
    outcome(
        worst_z < 3.0 && worst_sum < 1e-8,
        format!(
            "worst |mean - truth| = {worst_z:.2} MC SEs ({worst_name}, tol 3); worst sum gap {worst_sum:.1e} (tol 1e-8); {unidentified} unidentified coefficient draws skipped"
        ),
    )
}

fn monte_carlo_config(scenario: Scenario, link: f64, jobs: usize) -> ExperimentConfig {
    ExperimentConfig {
        synth: Some(DgpParams {
            selection_link: link,
            seed: 11,
            ..Default::default()
        }),
        methods: vec![Method::Trad, Method::TwoWay, Method::ThreeWay],
        reps: 200,
        scenario,
        seed: 2024,
        jobs,
        ..Default::default()
    }
}

fn c3_exogenous() -> Outcome {
    // p = 1 / (1 + 9) = 0.1 for every pair.
    let cfg = monte_carlo_config(Scenario::Custom { a: 9f64.ln(), b: 0.0 }, 0.0, 0);
    let result = match prepare(&cfg).and_then(|ctx| run_prepared(&ctx)) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("experiment failed: {e}")),
    };
    let m = result.report.method(Method::ThreeWay).and_then(|m| m.metrics.clone());
    let Some(m) = m else {
        return outcome(false, "threeway produced no metrics");
    };
    let ies: Vec<f64> = result
        .outcomes
        .iter()
        .filter_map(|o| imputation_estimator(&o.observed, o.predictions[&Method::ThreeWay].as_ref().ok()?).ok())
        .collect();
    let agg = aggregate_ie(&ies, SeConvention::Population).expect("ie");
    let identity = (agg.mse - (agg.se * agg.se + (agg.mean - 1.0).powi(2))).abs();
    outcome(
        (m.mean_ie - 1.0).abs() < 0.02 && identity < 1e-12,
        format!(
            "threeway mean IE {:.4} (|.-1| < 0.02), MSE identity gap {identity:.1e} (tol 1e-12)",
            m.mean_ie
        ),
    )
}

fn endogenous_config(jobs: usize) -> ExperimentConfig {
    // Selection rises with the standardized pair effect; about 10% of pairs
    // are drawn per repetition. RTAs load on the pair effect too.
    monte_carlo_config(Scenario::Custom { a: 2.5, b: 1.0 }, 1.0, jobs)
}

fn c4_endogenous() -> (Outcome, Option<String>) {
    let cfg = endogenous_config(0);
    let result = match prepare(&cfg).and_then(|ctx| run_prepared(&ctx)) {
        Ok(r) => r,
        Err(e) => return (outcome(false, format!("experiment failed: {e}")), None),
    };
    let bias = |m: Method| {
        result
            .report
            .method(m)
            .and_then(|r| r.metrics.as_ref())
            .map_or(f64::NAN, |mm| (mm.mean_ie - 1.0).abs())
    };
    let (t, two, three) = (bias(Method::Trad), bias(Method::TwoWay), bias(Method::ThreeWay));
    let pass = three < 0.02 && t >= 3.0 * three && two >= 3.0 * three;
    (
        outcome(
            pass,
            format!("|IE-1|: trad {t:.4}, twoway {two:.4}, threeway {three:.4} (threeway < 0.02, others >= 3x)"),
        ),
        Some(emit_report(&result.report, ReportFormat::Markdown)),
    )
}

fn brute_r2(o: &[f64], p: &[f64]) -> Option<f64> {
    let n = o.len() as f64;
    let mo = o.iter().sum::<f64>() / n;
    let mp = p.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vo = 0.0;
    let mut vp = 0.0;
    for i in 0..o.len() {
        cov += (o[i] - mo) * (p[i] - mp);
        vo += (o[i] - mo).powi(2);
        vp += (p[i] - mp).powi(2);
    }
    (vo > 0.0 && vp > 0.0).then(|| cov * cov / (vo * vp))
}

fn c5_metrics() -> Outcome {
    let mut rng = substream(55, 0);
    let mut worst = 0.0f64;
    let close = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    for _ in 0..50 {
        let k = rng.random_range(2..6);
        let data: Vec<(Vec<f64>, Vec<f64>)> = (0..k)
            .map(|_| {
                let n = rng.random_range(2..12);
                let o: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..50.0)).collect();
                let p: Vec<f64> = o.iter().map(|v| v * rng.random_range(0.5..1.5) + rng.random_range(-1.0..1.0)).collect();
                (o, p)
            })
            .collect();
        let reps: Vec<(&[f64], &[f64])> = data.iter().map(|(o, p)| (o.as_slice(), p.as_slice())).collect();

        let mut ies = Vec::new();
        for (o, p) in &data {
            let mut so = 0.0;
            let mut sp = 0.0;
            for i in 0..o.len() {
                so += o[i];
                sp += p[i];
            }
            let ie = imputation_estimator(o, p).unwrap();
            worst = worst.max(close(ie, so / sp));
            ies.push(so / sp);
        }
        let kf = ies.len() as f64;
        let mean = ies.iter().sum::<f64>() / kf;
        let var = ies.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / kf;
        let mse = ies.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / kf;
        let agg = aggregate_ie(&ies, SeConvention::Population).unwrap();
        worst = worst.max(close(agg.mean, mean)).max(close(agg.se, var.sqrt())).max(close(agg.mse, mse));

        let mut abs = 0.0;
        let mut sq = 0.0;
        let mut tot = 0.0;
        let mut n = 0.0;
        let mut all_o = Vec::new();
        let mut all_p = Vec::new();
        for (o, p) in &data {
            for i in 0..o.len() {
                abs += (p[i] - o[i]).abs();
                sq += (p[i] - o[i]).powi(2);
                tot += o[i];
                n += 1.0;
                all_o.push(o[i]);
                all_p.push(p[i]);
            }
        }
        let (mae, rmae) = pooled_mae(&reps).unwrap();
        worst = worst.max(close(mae, abs / n)).max(close(rmae, (abs / n) / (tot / n)));
        worst = worst.max(close(pooled_rrmse(&reps).unwrap(), (sq / n).sqrt() / (tot / n)));

        let per: Vec<f64> = data.iter().filter_map(|(o, p)| brute_r2(o, p)).collect();
        let per_mean = per.iter().sum::<f64>() / per.len() as f64;
        worst = worst.max(close(oos_r2(&reps, R2Mode::PerRep).unwrap().value, per_mean));
        worst = worst.max(close(
            oos_r2(&reps, R2Mode::Pooled).unwrap().value,
            brute_r2(&all_o, &all_p).unwrap(),
        ));
    }
    outcome(worst < 1e-12, format!("worst relative gap {worst:.1e} over 50 instances (tol 1e-12)"))
}

fn c6_stacking() -> Outcome {
    // Real learners: simplex feasibility and no learner beats the stack.
    let (panel, _) = generate_panel(&DgpParams {
        n_exporters: 6,
        n_importers: 6,
        n_years: 5,
        seed: 66,
        ..Default::default()
    })
    .expect("dgp");
    let x = gravcast::ml::base_features(&panel);
    let y = panel.trade();
    let clusters: Vec<usize> = {
        let mut c = vec![0; panel.len()];
        for (i, rows) in panel.pair_index().values().enumerate() {
            rows.iter().for_each(|&r| c[r] = i);
        }
        c
    };
    let mut params = LearnerParams::default();
    params.forest.n_trees = 50;
    params.network.hidden = 16;
    params.network.max_epochs = 200;
    let stack = match fit_stack(&LearnerKind::ALL, &params, &x, &y, &clusters, 5, 6) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("stack failed: {e}")),
    };
    let w = &stack.weights.w;
    let simplex = w.iter().all(|v| *v >= -1e-8) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-8;
    let obj = stack_objective(&stack.cv_predictions, &y, w);
    let mut beaten = false;
    for m in 0..w.len() {
        let mut e = vec![0.0; w.len()];
        e[m] = 1.0;
        let single = stack_objective(&stack.cv_predictions, &y, &e);
        if obj > single + 1e-8 * single.max(1.0) {
            beaten = true;
        }
    }

    // Toy three-learner instance against an exhaustive simplex grid.
    let mut rng = substream(61, 0);
    let n = 300;
    let target: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
    let p = DMatrix::from_fn(n, 3, |r, c| {
        let noise: f64 = StandardNormal.sample(&mut rng);
        let bias = [0.8, -0.5, 0.3][c];
        target[r] + bias + noise * [1.0, 1.3, 1.7][c]
    });
    let exact = simplex_least_squares(&p, &target).expect("solver");
    let g = p.transpose() * &p;
    let c = p.transpose() * DVector::from_column_slice(&target);
    let quad = |w: [f64; 3]| {
        let mut v = 0.0;
        for i in 0..3 {
            v -= 2.0 * c[i] * w[i];
            for j in 0..3 {
                v += w[i] * g[(i, j)] * w[j];
            }
        }
        v
    };
    let steps = 1000;
    let mut best = (f64::INFINITY, [0.0; 3]);
    for i in 0..=steps {
        for j in 0..=(steps - i) {
            let w = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
            let v = quad(w);
            if v < best.0 {
                best = (v, w);
            }
        }
    }
    let grid_gap = exact
        .w
        .iter()
        .zip(best.1)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    outcome(
        simplex && !beaten && grid_gap <= 2e-3,
        format!(
            "weights {:?}, simplex {simplex}, stack beats singles {}, grid gap {grid_gap:.1e} (tol 2e-3)",
            w.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            !beaten
        ),
    )
}

fn c7_gradient() -> Outcome {
    let mut rng = substream(77, 0);
    let raw = DMatrix::from_fn(20, 3, |_, _| StandardNormal.sample(&mut rng));
    let x = Scaler::fit(&raw).transform(&raw).unwrap();
    let xr: Vec<f64> = (0..20).flat_map(|r| x.row(r).iter().copied().collect::<Vec<_>>()).collect();
    let y: Vec<f64> = (0..20).map(|_| rng.random_range(0..5) as f64).collect();
    let mut net = Network::zeros(3, 10);
    let theta: Vec<f64> = (0..net.n_params()).map(|_| rng.random_range(-0.6..0.6)).collect();
    net.set_params(&theta);
    let rows: Vec<usize> = (0..20).collect();
    let (_, grad) = net.loss_and_gradient(&xr, &y, &rows);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + h;
        net.set_params(&t);
        let up = net.loss_and_gradient(&xr, &y, &rows).0;
        t[i] = theta[i] - h;
        net.set_params(&t);
        let down = net.loss_and_gradient(&xr, &y, &rows).0;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8));
    }
    outcome(
        worst < 1e-5,
        format!("{} parameters, worst relative gap {worst:.1e} (tol 1e-5)", theta.len()),
    )
}

fn c8_sampling() -> Outcome {
    let mut rng = substream(88, 0);
    let probs: std::collections::BTreeMap<PairKey, f64> = (0..100)
        .map(|i| {
            let eta: f64 = StandardNormal.sample(&mut rng);
            (PairKey::new("X", &format!("P{i:03}")), selection_prob(eta, 0.5, 1.0))
        })
        .collect();
    let reps = 10_000;
    let mut hits: std::collections::BTreeMap<PairKey, usize> = probs.keys().map(|k| (k.clone(), 0)).collect();
    for k in 0..reps {
        let mut r = substream(89, k);
        for p in select_pairs(&probs, &mut r) {
            *hits.get_mut(&p).unwrap() += 1;
        }
    }
    let freq_gap = probs
        .iter()
        .map(|(k, p)| (hits[k] as f64 / reps as f64 - p).abs())
        .fold(0.0, f64::max);

    let years: Vec<i32> = (1990..2020).collect();
    let mut counts = std::collections::BTreeMap::new();
    let mut r = substream(90, 0);
    for _ in 0..reps {
        let n_train = select_years(&years, YearRule::Position, &mut r).unwrap();
        *counts.entry(30 - n_train).or_insert(0usize) += 1;
    }
    let values: Vec<usize> = counts.keys().copied().collect();
    let share_gap = counts
        .values()
        .map(|&c| (c as f64 / reps as f64 - 0.2).abs())
        .fold(0.0, f64::max);
    outcome(
        freq_gap <= 0.02 && values == vec![10, 11, 12, 13, 14] && share_gap <= 0.02,
        format!(
            "max |freq - p| {freq_gap:.4} (tol 0.02); test-year counts {values:?}, max share gap {share_gap:.4} (tol 0.02)"
        ),
    )
}

fn c9_determinism(first: Option<String>) -> Outcome {
    let Some(first) = first else {
        return outcome(false, "criterion 4 produced no report");
    };
    let cfg = endogenous_config(3);
    let second = match prepare(&cfg).and_then(|ctx| run_prepared(&ctx)) {
        Ok(r) => emit_report(&r.report, ReportFormat::Markdown),
        Err(e) => return outcome(false, format!("rerun failed: {e}")),
    };
    outcome(
        first == second,
        "default pool vs 3 workers: reports identical".to_string() + if first == second { "" } else { " NOT" },
    )
}

fn c10_real_data() -> Option<Outcome> {
    let path = std::env::var_os("GRAVCAST_DATA")?;
    let cfg = ExperimentConfig {
        data: Some(path.into()),
        schema: PanelSchema::default(),
        methods: vec![Method::Trad, Method::TwoWay, Method::OneWay, Method::ThreeWay],
        reps: 50,
        scenario: Scenario::Endogenous,
        ..Default::default()
    };
    let result = match prepare(&cfg).and_then(|ctx| run_prepared(&ctx)) {
        Ok(r) => r,
        Err(e) => return Some(outcome(false, format!("experiment failed: {e}"))),
    };
    let rmae = |m: Method| result.report.method(m).and_then(|r| r.metrics.as_ref()).map_or(f64::NAN, |x| x.rmae);
    let ie = result
        .report
        .method(Method::ThreeWay)
        .and_then(|r| r.metrics.as_ref())
        .map_or(f64::NAN, |x| x.mean_ie);
    let nk = result.report.n_k.expect("n_k");
    let order = rmae(Method::ThreeWay) < rmae(Method::OneWay)
        && rmae(Method::OneWay) < rmae(Method::TwoWay)
        && rmae(Method::TwoWay) < rmae(Method::Trad);
    Some(outcome(
        nk.min >= 600 && nk.max <= 1500 && order && (0.95..=1.05).contains(&ie),
        format!("n_k {}..{}, RMAE ordering {order}, threeway IE {ie:.4}", nk.min, nk.max),
    ))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn main() {
    let limits = [5.0, 120.0, 300.0, 600.0, 10.0, 30.0, 5.0, 30.0, 600.0];
    let mut failed = Vec::new();
    let mut report = |id: usize, name: &str, (o, d): (Outcome, Duration)| {
        let slow = d.as_secs_f64() > limits[id - 1];
        let pass = o.pass && !slow;
        say(&format!(
            "criterion {id:>2} [{}] {name}: {} ({:.1}s{})",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            d.as_secs_f64(),
            if slow { format!(", over {}s budget", limits[id - 1]) } else { String::new() }
        ));
        if !pass {
            failed.push(id);
        }
    };
    report(1, "PPML absorption vs dummy oracle", timed(c1_ppml_oracle));
    report(2, "PPML consistency over 100 seeds", timed(c2_ppml_consistency));
    report(3, "imputation estimator, exogenous selection", timed(c3_exogenous));
    let ((o4, table), d4) = timed(c4_endogenous);
    report(4, "endogenous selection bias pattern", (o4, d4));
    report(5, "metric oracles", timed(c5_metrics));
    report(6, "stacking weights", timed(c6_stacking));
    report(7, "network gradient check", timed(c7_gradient));
    report(8, "sampling distributions", timed(c8_sampling));
    report(9, "determinism across worker counts", timed(|| c9_determinism(table)));
    match timed(c10_real_data) {
        (Some(o), d) => say(&format!(
            "criterion 10 [{}] full-data replication (non-gating): {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            d.as_secs_f64()
        )),
        (None, _) => say("criterion 10 [SKIP] full-data replication (non-gating): GRAVCAST_DATA not set"),
    }
    if !failed.is_empty() {
        say(&format!("gating criteria failed: {failed:?}"));
        std::process::exit(1);
    }
}
