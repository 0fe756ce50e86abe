//! L2-regularized logistic regression on standardized features, fitted by
//! full-batch gradient descent with step halving.

use serde::{Deserialize, Serialize};

use super::{check_trainable, LearnError, Predictor};
use crate::data::Dataset;
use crate::features::NUM_FEATURES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub l2: f64,
    pub iters: usize,
    pub lr: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2: 1e-4,
            iters: 2000,
            lr: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// One weight per standardized feature, bias last.
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub config: LogisticConfig,
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^s)` without overflow.
fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

fn score(weights: &[f64], z: &[f64; NUM_FEATURES]) -> f64 {
    weights[NUM_FEATURES] + z.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>()
}

/// Mean negative log-likelihood plus `l2 / 2 * |w|^2` (bias unpenalized),
/// and its gradient.
pub fn loss_and_gradient(weights: &[f64], z: &[[f64; NUM_FEATURES]], y: &[u8], l2: f64) -> (f64, Vec<f64>) {
    let n = z.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; NUM_FEATURES + 1];
    for (row, &label) in z.iter().zip(y) {
        let s = score(weights, row);
        let t = label as f64;
        loss += softplus(s) - t * s;
        let r = sigmoid(s) - t;
        for j in 0..NUM_FEATURES {
            grad[j] += r * row[j];
        }
        grad[NUM_FEATURES] += r;
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    for j in 0..NUM_FEATURES {
        loss += 0.5 * l2 * weights[j] * weights[j];
        grad[j] += l2 * weights[j];
    }
    (loss, grad)
}

/// Standardized training rows for a dataset under its own statistics.
pub(crate) fn standardize(ds: &Dataset) -> (Vec<f64>, Vec<f64>, Vec<[f64; NUM_FEATURES]>) {
    let stats = ds.stats();
    let means: Vec<f64> = stats.columns().iter().map(|c| c.mean).collect();
    let scales: Vec<f64> = stats.columns().iter().map(|c| c.scale()).collect();
    let z = ds.rows().iter().map(|r| stats.standardize(r)).collect();
    (means, scales, z)
}

/// Trains and returns the model with the loss after every accepted step
/// (the first entry is the loss at zero weights).
pub fn train_logistic_with_history(train: &Dataset, cfg: &LogisticConfig) -> Result<(LogisticModel, Vec<f64>), LearnError> {
    check_trainable(train)?;
    if !(cfg.lr > 0.0 && cfg.l2 >= 0.0) {
        return Err(LearnError::InvalidConfig("lr must be positive and l2 non-negative".into()));
    }
    let (means, scales, z) = standardize(train);
    let y = train.labels();
    let mut w = vec![0.0; NUM_FEATURES + 1];
    let (mut loss, mut grad) = loss_and_gradient(&w, &z, &y, cfg.l2);
    let mut lr = cfg.lr;
    let mut history = vec![loss];
    for _ in 0..cfg.iters {
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<f64> = w.iter().zip(&grad).map(|(wi, gi)| wi - lr * gi).collect();
            let (c_loss, c_grad) = loss_and_gradient(&candidate, &z, &y, cfg.l2);
            if c_loss <= loss {
                w = candidate;
                loss = c_loss;
                grad = c_grad;
                accepted = true;
                break;
            }
            lr /= 2.0;
        }
        if !accepted {
            break;
        }
        history.push(loss);
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(LearnError::Diverged);
    }
    Ok((
        LogisticModel {
            weights: w,
            means,
            scales,
            config: *cfg,
        },
        history,
    ))
}

pub fn train_logistic(train: &Dataset, cfg: &LogisticConfig) -> Result<LogisticModel, LearnError> {
    train_logistic_with_history(train, cfg).map(|(m, _)| m)
}

impl Predictor for LogisticModel {
    fn predict_row(&self, x: &[f64; NUM_FEATURES]) -> f64 {
        let mut z = [0.0; NUM_FEATURES];
        for j in 0..NUM_FEATURES {
            z[j] = (x[j] - self.means[j]) / self.scales[j];
        }
        sigmoid(score(&self.weights, &z))
    }
}
