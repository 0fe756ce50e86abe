use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate_model, train_forest, ForestConfig, LearnError};
use crate::data::{prepare, Dataset, SplitSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningCurvePoint {
    pub train_size: usize,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

const MIN_CURVE_RECORDS: usize = 10;

/// Trains on growing prefixes of the shuffled training split and evaluates
/// each model on the fixed validation split.
///
/// Each prefix is restored to dataset order before training, so the
/// fraction 1.0 point is exactly the model trained on the whole split.
pub fn learning_curve(
    ds: &Dataset,
    split: &SplitSpec,
    cfg: &ForestConfig,
    fractions: &[f64],
) -> Result<Vec<LearningCurvePoint>, LearnError> {
    if fractions.is_empty() {
        return Err(LearnError::InvalidConfig("no fractions given".into()));
    }
    if fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LearnError::InvalidConfig("fractions must be strictly increasing".into()));
    }
    if fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(LearnError::InvalidConfig("fractions must lie in (0, 1]".into()));
    }
    let (train, validation) = prepare(ds, split)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let mut points = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let size = (fraction * train.len() as f64).round() as usize;
        if size < MIN_CURVE_RECORDS {
            return Err(LearnError::InvalidConfig(format!(
                "fraction {fraction} yields {size} training records; at least {MIN_CURVE_RECORDS} are needed"
            )));
        }
        let mut prefix = order[..size].to_vec();
        prefix.sort_unstable();
        let records = prefix.iter().map(|&i| train.records()[i]).collect();
        let subset = Dataset::with_stats(records, train.stats().clone())?;
        let model = train_forest(&subset, cfg)?;
        points.push(LearningCurvePoint {
            train_size: size,
            train_accuracy: evaluate_model(&model, &subset, 0.5).accuracy,
            validation_accuracy: evaluate_model(&model, &validation, 0.5).accuracy,
        });
    }
    Ok(points)
}

/// `train_size,train_accuracy,validation_accuracy` rows.
pub fn curve_to_csv(points: &[LearningCurvePoint]) -> String {
    let mut out = String::from("train_size,train_accuracy,validation_accuracy\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.train_size, p.train_accuracy, p.validation_accuracy));
    }
    out
}
