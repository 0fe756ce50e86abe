use serde::{Deserialize, Serialize};

use crate::features::{Feature, NUM_FEATURES};

/// Summary statistics for one feature column, ignoring missing cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl ColumnStats {
    /// Standard deviation usable as a divisor; constant columns scale by 1.
    pub fn scale(&self) -> f64 {
        if self.std > 0.0 && self.std.is_finite() {
            self.std
        } else {
            1.0
        }
    }

    fn from_values(values: &[f64]) -> ColumnStats {
        if values.is_empty() {
            return ColumnStats {
                count: 0,
                mean: f64::NAN,
                std: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
                q1: f64::NAN,
                median: f64::NAN,
                q3: f64::NAN,
            };
        }
        // Welford
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (i, &v) in values.iter().enumerate() {
            let delta = v - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (v - mean);
        }
        let std = (m2 / values.len() as f64).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        ColumnStats {
            count: values.len(),
            mean,
            std,
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
        }
    }
}

/// Per-feature statistics of a reference (training) sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    columns: Vec<ColumnStats>,
}

impl FeatureStats {
    /// Computes statistics from rows in [`Feature::ALL`] order. NaN cells are
    /// treated as missing.
    pub fn from_rows<'a, I>(rows: I) -> FeatureStats
    where
        I: IntoIterator<Item = &'a [f64; NUM_FEATURES]>,
    {
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); NUM_FEATURES];
        for row in rows {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_nan() {
                    columns[j].push(v);
                }
            }
        }
        FeatureStats {
            columns: columns.iter().map(|c| ColumnStats::from_values(c)).collect(),
        }
    }

    pub fn get(&self, f: Feature) -> &ColumnStats {
        &self.columns[f.index()]
    }

    pub fn columns(&self) -> &[ColumnStats] {
        &self.columns
    }

    /// Standardizes a dense row: `(x - mean) / scale`.
    pub fn standardize(&self, row: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        let mut z = [0.0; NUM_FEATURES];
        for (j, c) in self.columns.iter().enumerate() {
            z[j] = (row[j] - c.mean) / c.scale();
        }
        z
    }
}

/// Linear-interpolation quantile of an ascending slice (the common "type 7"
/// definition). `q` is clamped to [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let q = q.clamp(0.0, 1.0);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}
