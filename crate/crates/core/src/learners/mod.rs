//! Risk models: a random forest (the primary predictor) and a logistic
//! regression, plus evaluation and learning curves.

mod curve;
mod forest;
mod logistic;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::data::{DataError, Dataset, FeatureStats};
use crate::features::{PatientFeatures, NUM_FEATURES};

pub use curve::{curve_to_csv, learning_curve, LearningCurvePoint};
pub use forest::{
    gini, grow_tree_traced, train_forest, train_forest_with, weighted_gini, ForestConfig, ForestModel, Node,
    Schedule, SplitTrace, Tree,
};
pub use logistic::{loss_and_gradient, train_logistic, train_logistic_with_history, LogisticConfig, LogisticModel};
pub use metrics::{auc, evaluate_model, Confusion, EvalReport};

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("training data contains a single class")]
    SingleClass,
    #[error("training data has missing values; impute first")]
    NotImputed,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("optimizer produced non-finite weights")]
    Diverged,
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub(crate) fn check_trainable(train: &Dataset) -> Result<(), LearnError> {
    if !train.is_imputed() {
        return Err(LearnError::NotImputed);
    }
    let pos = train.positives();
    if pos == 0 || pos == train.len() {
        return Err(LearnError::SingleClass);
    }
    Ok(())
}

/// Anything that maps a feature row to a risk probability.
pub trait Predictor: Send + Sync {
    /// Probability of the positive (risk) class for a dense, imputed row.
    fn predict_row(&self, x: &[f64; NUM_FEATURES]) -> f64;

    fn predict_proba(&self, p: &PatientFeatures) -> f64 {
        self.predict_row(&p.to_vector())
    }
}

impl<F> Predictor for F
where
    F: Fn(&[f64; NUM_FEATURES]) -> f64 + Send + Sync,
{
    fn predict_row(&self, x: &[f64; NUM_FEATURES]) -> f64 {
        self(x)
    }
}

/// A trained model of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum RiskModel {
    Forest(ForestModel),
    Logistic(LogisticModel),
}

impl RiskModel {
    pub fn kind(&self) -> &'static str {
        match self {
            RiskModel::Forest(_) => "forest",
            RiskModel::Logistic(_) => "logistic",
        }
    }
}

impl Predictor for RiskModel {
    fn predict_row(&self, x: &[f64; NUM_FEATURES]) -> f64 {
        match self {
            RiskModel::Forest(m) => m.predict_row(x),
            RiskModel::Logistic(m) => m.predict_row(x),
        }
    }
}

pub const MODEL_FORMAT: &str = "twinscope-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// The persisted model: a versioned JSON document holding the model, its
/// configuration and the training-split feature statistics.
///
/// ```json
/// {"format":"twinscope-model","version":1,"training_stats":{...},
///  "model":{"kind":"forest","model":{...}}}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub training_stats: FeatureStats,
    pub model: RiskModel,
}

impl ModelFile {
    pub fn new(model: RiskModel, training_stats: FeatureStats) -> ModelFile {
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            training_stats,
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<ModelFile, LearnError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| LearnError::ModelFile(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(LearnError::ModelFile(format!("unexpected format `{}`", file.format)));
        }
        if file.version != MODEL_FORMAT_VERSION {
            return Err(LearnError::ModelFile(format!("unsupported version {}", file.version)));
        }
        Ok(file)
    }
}
