//! Model-agnostic explanations: local surrogates and partial dependence.

mod pdp;
mod ridge;
mod surrogate;

use serde::{Deserialize, Serialize};

use crate::features::{Feature, InvalidFeature};

pub use pdp::{pdp, pdp_flatness, pdp_grid, pdp_on_grid, PdpCurve};
pub use ridge::{fit_weighted_ridge, weighted_r2, RidgeFit};
pub use surrogate::{explain_instance, sample_neighbourhood, Explanation, Neighbourhood, SurrogateConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExplainError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    InvalidInstance(InvalidFeature),
    #[error("model returned a non-finite probability")]
    NonFiniteProbability,
    #[error(
        "perturbation weights are degenerate (effective sample size {effective_samples:.2} at kernel width \
         {kernel_width}); increase kernel_width"
    )]
    DegenerateWeights { effective_samples: f64, kernel_width: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has missing values; impute first")]
    NotImputed,
    #[error("no explanations to aggregate")]
    NoExplanations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: Feature,
    pub mean_abs_contribution: f64,
}

/// Ranks features by mean |contribution| over `explanations`, ties broken
/// by feature order.
pub fn aggregate_explanations(explanations: &[Explanation]) -> Result<Vec<FeatureImportance>, ExplainError> {
    if explanations.is_empty() {
        return Err(ExplainError::NoExplanations);
    }
    let n = explanations.len() as f64;
    let mut out: Vec<FeatureImportance> = Feature::ALL
        .iter()
        .map(|&f| FeatureImportance {
            feature: f,
            mean_abs_contribution: explanations.iter().map(|e| e.contribution(f).abs()).sum::<f64>() / n,
        })
        .collect();
    out.sort_by(|a, b| {
        b.mean_abs_contribution
            .total_cmp(&a.mean_abs_contribution)
            .then(a.feature.cmp(&b.feature))
    });
    Ok(out)
}
