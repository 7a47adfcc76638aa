//! Single-hidden-layer network with exponential output, trained on Poisson
//! deviance with mini-batch Adam.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_training, check_width, Regressor};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Stop when the full-sample loss changes by less than this, relatively.
    pub tol: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: 100,
            max_epochs: 500,
            batch_size: 200,
            learning_rate: 1e-3,
            tol: 1e-6,
        }
    }
}

/// `mu(x) = scale * exp(w2 . relu(W1 x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    /// Hidden weights, row-major `hidden x inputs`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub inputs: usize,
    /// Outcome scale; the loss is evaluated on `y / scale`.
    pub scale: f64,
    /// Mean deviance after each epoch (training only).
    pub loss_history: Vec<f64>,
}

fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for r in 0..x.nrows() {
        out.extend(x.row(r).iter());
    }
    out
}

fn unit_deviance(y: f64, mu: f64) -> f64 {
    let t = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
    2.0 * (t - (y - mu))
}

impl Network {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            w1: vec![0.0; hidden * inputs],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            inputs,
            scale: 1.0,
            loss_history: Vec::new(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Parameters flattened as `[W1, b1, w2, b2]`.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend(&self.w1);
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn set_params(&mut self, v: &[f64]) {
        let (a, b, c) = (self.w1.len(), self.b1.len(), self.w2.len());
        assert_eq!(v.len(), a + b + c + 1, "parameter vector length");
        self.w1.copy_from_slice(&v[..a]);
        self.b1.copy_from_slice(&v[a..a + b]);
        self.w2.copy_from_slice(&v[a + b..a + b + c]);
        self.b2 = v[a + b + c];
    }

    fn forward(&self, x: &[f64], hidden: &mut [f64]) -> f64 {
        let p = self.inputs;
        let mut out = self.b2;
        for (j, h) in hidden.iter_mut().enumerate() {
            let w = &self.w1[j * p..(j + 1) * p];
            let z = self.b1[j] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            *h = z.max(0.0);
            out += self.w2[j] * *h;
        }
        out
    }

    /// Mean Poisson deviance of `y` (already divided by `scale`) over `rows`
    /// of the row-major input `x`, and its gradient in [`Network::params`]
    /// order.
    pub fn loss_and_gradient(&self, x: &[f64], y: &[f64], rows: &[usize]) -> (f64, Vec<f64>) {
        let p = self.inputs;
        let h = self.hidden();
        let mut grad = vec![0.0; self.n_params()];
        let (gw1, rest) = grad.split_at_mut(h * p);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(h);
        let mut hid = vec![0.0; h];
        let mut loss = 0.0;
        for &r in rows {
            let xr = &x[r * p..(r + 1) * p];
            let mu = self.forward(xr, &mut hid).exp();
            loss += unit_deviance(y[r], mu);
            let d = 2.0 * (mu - y[r]);
            gb2[0] += d;
            for j in 0..h {
                if hid[j] <= 0.0 {
                    continue;
                }
                gw2[j] += d * hid[j];
                let delta = d * self.w2[j];
                gb1[j] += delta;
                for (g, xv) in gw1[j * p..(j + 1) * p].iter_mut().zip(xr) {
                    *g += delta * xv;
                }
            }
        }
        let n = rows.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    fn mean_loss(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut hid = vec![0.0; self.hidden()];
        let n = y.len();
        (0..n)
            .map(|r| unit_deviance(y[r], self.forward(&x[r * self.inputs..(r + 1) * self.inputs], &mut hid).exp()))
            .sum::<f64>()
            / n as f64
    }
}

impl Regressor for Network {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_width(x, self.inputs)?;
        let xr = row_major(x);
        let mut hid = vec![0.0; self.hidden()];
        Ok((0..x.nrows())
            .map(|r| self.scale * self.forward(&xr[r * self.inputs..(r + 1) * self.inputs], &mut hid).exp())
            .collect())
    }
}

/// Rejects inputs whose columns are not centred with unit (or zero) spread.
fn check_standardized(x: &DMatrix<f64>) -> Result<()> {
    let n = x.nrows() as f64;
    for col in x.column_iter() {
        let m = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        if m.abs() > 1e-6 || (sd > 1e-9 && (sd - 1.0).abs() > 1e-6) {
            return Err(Error::NotStandardized);
        }
    }
    Ok(())
}

pub fn fit_mlp_poisson(x: &DMatrix<f64>, y: &[f64], hp: &MlpParams, seed: u64) -> Result<Network> {
    check_training(x, y)?;
    check_standardized(x)?;
    if y.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidInput("network outcomes must be non-negative".into()));
    }
    let n = y.len();
    let scale = y.iter().sum::<f64>() / n as f64;
    if scale <= 0.0 {
        return Err(Error::AllZeroOutcome);
    }
    let ys: Vec<f64> = y.iter().map(|v| v / scale).collect();
    let xr = row_major(x);
    let p = x.ncols();
    let h = hp.hidden.max(1);
    let mut rng = substream(seed, 0);

    let mut net = Network::zeros(p, h);
    net.scale = scale;
    let lim1 = (6.0 / (p + h) as f64).sqrt();
    let lim2 = (6.0 / (h + 1) as f64).sqrt();
    net.w1.iter_mut().for_each(|w| *w = rng.random_range(-lim1..lim1));
    net.b1.iter_mut().for_each(|w| *w = rng.random_range(-lim1..lim1));
    net.w2.iter_mut().for_each(|w| *w = rng.random_range(-lim2..lim2));

    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut theta = net.params();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..n).collect();
    let batch = hp.batch_size.clamp(1, n);
    let mut prev = net.mean_loss(&xr, &ys);
    if !prev.is_finite() {
        return Err(Error::Divergence { iteration: 0 });
    }
    for epoch in 1..=hp.max_epochs {
        order.shuffle(&mut rng);
        for rows in order.chunks(batch) {
            let (_, g) = net.loss_and_gradient(&xr, &ys, rows);
            step += 1;
            let c1 = 1.0 - beta1.powi(step);
            let c2 = 1.0 - beta2.powi(step);
            for i in 0..theta.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                theta[i] -= hp.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
            net.set_params(&theta);
        }
        let loss = net.mean_loss(&xr, &ys);
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: epoch });
        }
        net.loss_history.push(loss);
        if (prev - loss).abs() <= hp.tol * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        prev = loss;
    }
    Ok(net)
}
