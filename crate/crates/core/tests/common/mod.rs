//! Independent oracles shared by the integration tests. Nothing here calls
//! into the estimation code paths it is used to check.
#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

/// Poisson MLE by Newton-Raphson on the explicit design `[X | dummies]`,
/// one dummy per group of every fixed-effect dimension. Rank deficiency is
/// handled with an SVD pseudo-inverse, so fitted means are unique even
/// though dummy coefficients are not.
pub struct DummyOracle {
    pub beta: Vec<f64>,
    pub coef: DVector<f64>,
    pub mu: Vec<f64>,
    columns: Vec<HashMap<String, usize>>,
    p: usize,
}

impl DummyOracle {
    pub fn fit(y: &[f64], x: &DMatrix<f64>, fe_keys: &[Vec<String>]) -> Self {
        let n = y.len();
        let p = x.ncols();
        let mut columns = Vec::new();
        let mut total = p;
        for keys in fe_keys {
            let mut map = HashMap::new();
            for k in keys {
                if !map.contains_key(k) {
                    map.insert(k.clone(), total);
                    total += 1;
                }
            }
            columns.push(map);
        }
        let mut design = DMatrix::zeros(n, total);
        for i in 0..n {
            for j in 0..p {
                design[(i, j)] = x[(i, j)];
            }
            for (d, keys) in fe_keys.iter().enumerate() {
                design[(i, columns[d][&keys[i]])] = 1.0;
            }
        }
        let ybar = y.iter().sum::<f64>() / n as f64;
        // Start from a log-linear least-squares fit of log((y + ybar) / 2).
        let z = DVector::from_iterator(n, y.iter().map(|v| (0.5 * (v + ybar)).ln()));
        let svd = design.clone().svd(true, true);
        let mut coef = svd.solve(&z, 1e-10).unwrap();
        for _ in 0..200 {
            let eta = &design * &coef;
            let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
            let grad = design.transpose() * DVector::from_iterator(n, y.iter().zip(&mu).map(|(y, m)| y - m));
            let mut wd = design.clone();
            for i in 0..n {
                for j in 0..total {
                    wd[(i, j)] *= mu[i];
                }
            }
            let hess = design.transpose() * wd;
            let step = hess.svd(true, true).solve(&grad, 1e-12).unwrap();
            coef += &step;
            if step.amax() < 1e-14 {
                break;
            }
        }
        let mu: Vec<f64> = (&design * &coef).iter().map(|e| e.exp()).collect();
        Self {
            beta: coef.iter().take(p).copied().collect(),
            coef,
            mu,
            columns,
            p,
        }
    }

    pub fn predict(&self, x_row: &[f64], keys: &[&str]) -> f64 {
        let mut eta: f64 = x_row.iter().zip(self.coef.iter()).map(|(a, b)| a * b).sum();
        for (d, k) in keys.iter().enumerate() {
            eta += self.coef[self.columns[d][*k]];
        }
        eta.exp()
    }
}

/// Small 3-way panel with two time-varying regressors and Poisson outcomes.
pub struct ToyThreeWay {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub keys: Vec<Vec<String>>,
    pub beta: [f64; 2],
}

pub fn toy_three_way(n_countries: usize, n_years: usize, seed: u64) -> ToyThreeWay {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let beta = [0.4, -0.25];
    let alpha: Vec<f64> = (0..n_countries * n_years).map(|_| 0.5 * normal.sample(&mut rng)).collect();
    let gamma: Vec<f64> = (0..n_countries * n_years).map(|_| 0.5 * normal.sample(&mut rng)).collect();
    let mut y = Vec::new();
    let mut xs = Vec::new();
    let mut keys = vec![Vec::new(), Vec::new(), Vec::new()];
    for e in 0..n_countries {
        for m in 0..n_countries {
            if e == m {
                continue;
            }
            let eta: f64 = normal.sample(&mut rng);
            for t in 0..n_years {
                let x1: f64 = normal.sample(&mut rng);
                let x2 = if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 };
                let log_mu = 2.0 + beta[0] * x1 + beta[1] * x2 + alpha[e * n_years + t] + gamma[m * n_years + t] + eta;
                y.push(Poisson::new(log_mu.exp()).unwrap().sample(&mut rng));
                xs.push((x1, x2));
                keys[0].push(format!("C{e}|{t}"));
                keys[1].push(format!("C{m}|{t}"));
                keys[2].push(format!("C{e}|C{m}"));
            }
        }
    }
    let n = y.len();
    let mut x = DMatrix::zeros(n, 2);
    for (i, (a, b)) in xs.into_iter().enumerate() {
        x[(i, 0)] = a;
        x[(i, 1)] = b;
    }
    ToyThreeWay { y, x, keys, beta }
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
