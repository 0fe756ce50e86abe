use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::data::Dataset;

/// Counts indexed by (actual, predicted).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tp: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tn + self.fp + self.fn_ + self.tp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: Confusion,
    pub auc: f64,
    pub n_test: usize,
    pub threshold: f64,
}

/// Area under the ROC curve via the Mann-Whitney rank statistic, with
/// average ranks for ties. Returns 0.5 when only one class is present.
pub fn auc(scores: &[f64], labels: &[u8]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos * n_neg) as f64
}

/// Scores every test record; a probability at or above `threshold` predicts
/// risk.
pub fn evaluate_model<P: Predictor + ?Sized>(model: &P, test: &Dataset, threshold: f64) -> EvalReport {
    let scores: Vec<f64> = test.records().iter().map(|r| model.predict_proba(&r.features)).collect();
    let labels = test.labels();
    let mut confusion = Confusion::default();
    for (&s, &l) in scores.iter().zip(&labels) {
        match (l == 1, s >= threshold) {
            (false, false) => confusion.tn += 1,
            (false, true) => confusion.fp += 1,
            (true, false) => confusion.fn_ += 1,
            (true, true) => confusion.tp += 1,
        }
    }
    EvalReport {
        accuracy: (confusion.tn + confusion.tp) as f64 / test.len() as f64,
        confusion,
        auc: auc(&scores, &labels),
        n_test: test.len(),
        threshold,
    }
}
