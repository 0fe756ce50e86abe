//! Local weighted-linear surrogate explanations.
//!
//! Perturbations are drawn feature by feature from the training
//! distribution (independent Gaussians, Bernoulli for gender), weighted by
//! an exponential kernel on the distance to the explained instance in
//! standardized space, and regressed onto the black-box probabilities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ridge::{fit_weighted_ridge, weighted_r2};
use super::ExplainError;
use crate::data::FeatureStats;
use crate::features::{Feature, PatientFeatures, NUM_FEATURES};
use crate::learners::Predictor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub n_samples: usize,
    /// Defaults to `0.75 * sqrt(d)` when unset.
    pub kernel_width: Option<f64>,
    pub ridge_lambda: f64,
    pub seed: u64,
    /// Regress on "same quartile bin as the instance" indicators instead of
    /// standardized values.
    pub discretize: bool,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            n_samples: 5000,
            kernel_width: None,
            ridge_lambda: 1e-3,
            seed: 0,
            discretize: false,
        }
    }
}

impl SurrogateConfig {
    pub fn effective_kernel_width(&self) -> f64 {
        self.kernel_width
            .unwrap_or(0.75 * (NUM_FEATURES as f64).sqrt())
    }

    pub fn validate(&self) -> Result<(), ExplainError> {
        if self.n_samples < 100 {
            return Err(ExplainError::InvalidConfig("n_samples must be at least 100".into()));
        }
        let kw = self.effective_kernel_width();
        if !(kw > 0.0 && kw.is_finite()) {
            return Err(ExplainError::InvalidConfig("kernel_width must be positive".into()));
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(ExplainError::InvalidConfig("ridge_lambda must be non-negative".into()));
        }
        Ok(())
    }
}

/// Signed per-feature attribution of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub instance: PatientFeatures,
    pub prediction: f64,
    /// Surrogate coefficients in [`Feature::ALL`] order, on the
    /// standardized-feature scale.
    pub contributions: Vec<f64>,
    pub intercept: f64,
    /// Weighted R² of the surrogate on the perturbation sample.
    pub local_fidelity: f64,
    /// Normal-equation residual of the surrogate fit, relative.
    pub solver_residual: f64,
}

impl Explanation {
    pub fn contribution(&self, f: Feature) -> f64 {
        self.contributions[f.index()]
    }

    /// Features ordered by decreasing |contribution|, ties by feature order.
    pub fn ranked(&self) -> Vec<(Feature, f64)> {
        let mut out: Vec<(Feature, f64)> = Feature::ALL.iter().map(|&f| (f, self.contribution(f))).collect();
        out.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        out
    }

    pub fn max_abs_contribution(&self) -> f64 {
        self.contributions.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

fn quartile_bin(stats: &FeatureStats, f: Feature, v: f64) -> usize {
    if f.is_binary() {
        return v as usize;
    }
    let c = stats.get(f);
    [c.q1, c.median, c.q3].iter().filter(|&&q| v > q).count()
}

/// The perturbation sample and its kernel weights, before the fit.
#[derive(Debug, Clone)]
pub struct Neighbourhood {
    /// Perturbed raw feature rows.
    pub rows: Vec<[f64; NUM_FEATURES]>,
    /// Regression design (standardized values or bin indicators).
    pub design: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Draws the perturbation sample for `instance`.
pub fn sample_neighbourhood(
    instance: &[f64; NUM_FEATURES],
    stats: &FeatureStats,
    cfg: &SurrogateConfig,
) -> Neighbourhood {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let kw = cfg.effective_kernel_width();
    let represent = |x: &[f64; NUM_FEATURES]| -> Vec<f64> {
        if cfg.discretize {
            Feature::ALL
                .iter()
                .map(|&f| (quartile_bin(stats, f, x[f.index()]) == quartile_bin(stats, f, instance[f.index()])) as u8 as f64)
                .collect()
        } else {
            stats.standardize(x).to_vec()
        }
    };
    let origin = represent(instance);
    let mut rows = Vec::with_capacity(cfg.n_samples);
    let mut design = Vec::with_capacity(cfg.n_samples);
    let mut weights = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let mut x = [0.0; NUM_FEATURES];
        for f in Feature::ALL {
            let c = stats.get(f);
            x[f.index()] = if f.is_binary() {
                rng.random_bool(c.mean.clamp(0.0, 1.0)) as u8 as f64
            } else {
                let z: f64 = rng.sample(StandardNormal);
                c.mean + c.std * z
            };
        }
        let r = represent(&x);
        let dist2: f64 = r.iter().zip(&origin).map(|(a, b)| (a - b) * (a - b)).sum();
        weights.push((-dist2 / (kw * kw)).exp());
        rows.push(x);
        design.push(r);
    }
    Neighbourhood { rows, design, weights }
}

/// Explains `model`'s prediction for `instance` with a weighted ridge
/// surrogate fitted on a seeded perturbation sample.
pub fn explain_instance<P: Predictor + ?Sized>(
    model: &P,
    instance: &PatientFeatures,
    stats: &FeatureStats,
    cfg: &SurrogateConfig,
) -> Result<Explanation, ExplainError> {
    cfg.validate()?;
    instance.validate(true).map_err(ExplainError::InvalidInstance)?;
    let x0 = instance.to_vector();
    let prediction = model.predict_row(&x0);
    if !prediction.is_finite() {
        return Err(ExplainError::NonFiniteProbability);
    }
    let hood = sample_neighbourhood(&x0, stats, cfg);

    let total: f64 = hood.weights.iter().sum();
    let sum_sq: f64 = hood.weights.iter().map(|w| w * w).sum();
    let ess = if sum_sq > 0.0 { total * total / sum_sq } else { 0.0 };
    if !(ess >= (NUM_FEATURES + 1) as f64) {
        return Err(ExplainError::DegenerateWeights {
            effective_samples: ess,
            kernel_width: cfg.effective_kernel_width(),
        });
    }

    let targets = hood
        .rows
        .iter()
        .map(|x| {
            let p = model.predict_row(x);
            p.is_finite().then_some(p).ok_or(ExplainError::NonFiniteProbability)
        })
        .collect::<Result<Vec<f64>, _>>()?;

    let fit = fit_weighted_ridge(&hood.design, &targets, &hood.weights, cfg.ridge_lambda)
        .ok_or_else(|| ExplainError::InvalidConfig("surrogate system is singular; use ridge_lambda > 0".into()))?;
    let local_fidelity = weighted_r2(&fit, &hood.design, &targets, &hood.weights);
    Ok(Explanation {
        instance: *instance,
        prediction,
        contributions: fit.coefficients,
        intercept: fit.intercept,
        local_fidelity,
        solver_residual: fit.relative_gradient,
    })
}
