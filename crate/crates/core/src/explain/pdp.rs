use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::data::{quantile_sorted, Dataset};
use crate::features::Feature;
use crate::learners::Predictor;

/// Mean model response as one feature sweeps a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdpCurve {
    pub feature: Feature,
    pub grid: Vec<f64>,
    pub pdp: Vec<f64>,
    pub range_effect: f64,
}

impl PdpCurve {
    pub fn new(feature: Feature, grid: Vec<f64>, pdp: Vec<f64>) -> PdpCurve {
        let range_effect = range(&pdp);
        PdpCurve {
            feature,
            grid,
            pdp,
            range_effect,
        }
    }

    /// `grid,pdp` rows for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("grid,pdp\n");
        for (g, p) in self.grid.iter().zip(&self.pdp) {
            out.push_str(&format!("{g},{p}\n"));
        }
        out
    }

    pub fn step(&self) -> f64 {
        if self.grid.len() < 2 {
            0.0
        } else {
            (self.grid[self.grid.len() - 1] - self.grid[0]) / (self.grid.len() - 1) as f64
        }
    }
}

fn range(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// `max(pdp) - min(pdp)`.
pub fn pdp_flatness(curve: &PdpCurve) -> f64 {
    range(&curve.pdp)
}

/// Grid for `feature`: `grid_size` evenly spaced values between the clip
/// percentiles of the feature in `ds`, or `{0, 1}` for a binary feature.
pub fn pdp_grid(ds: &Dataset, feature: Feature, grid_size: usize, clip: (f64, f64)) -> Result<Vec<f64>, ExplainError> {
    if feature.is_binary() {
        return Ok(vec![0.0, 1.0]);
    }
    if grid_size < 2 {
        return Err(ExplainError::InvalidConfig("grid_size must be at least 2".into()));
    }
    if !(0.0 <= clip.0 && clip.0 < clip.1 && clip.1 <= 100.0) {
        return Err(ExplainError::InvalidConfig("clip percentiles must satisfy 0 <= lo < hi <= 100".into()));
    }
    let mut values: Vec<f64> = ds.records().iter().filter_map(|r| r.features.get(feature)).collect();
    if values.is_empty() {
        return Err(ExplainError::EmptyDataset);
    }
    values.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&values, clip.0 / 100.0);
    let hi = quantile_sorted(&values, clip.1 / 100.0);
    if hi <= lo {
        log::warn!("{feature} is constant between the clip percentiles; PDP has a single point");
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (grid_size - 1) as f64;
    let mut grid: Vec<f64> = (0..grid_size).map(|k| lo + step * k as f64).collect();
    grid[grid_size - 1] = hi;
    Ok(grid)
}

/// Partial dependence of `model` on `feature` over `ds`.
pub fn pdp<P: Predictor + ?Sized>(
    model: &P,
    ds: &Dataset,
    feature: Feature,
    grid_size: usize,
    clip: (f64, f64),
) -> Result<PdpCurve, ExplainError> {
    if ds.is_empty() {
        return Err(ExplainError::EmptyDataset);
    }
    if !ds.is_imputed() {
        return Err(ExplainError::NotImputed);
    }
    let grid = pdp_grid(ds, feature, grid_size, clip)?;
    Ok(pdp_on_grid(model, ds, feature, grid))
}

/// Partial dependence evaluated on a caller-supplied grid.
pub fn pdp_on_grid<P: Predictor + ?Sized>(model: &P, ds: &Dataset, feature: Feature, grid: Vec<f64>) -> PdpCurve {
    let rows = ds.rows();
    let j = feature.index();
    let values: Vec<f64> = grid
        .par_iter()
        .map(|&g| {
            let sum: f64 = rows
                .iter()
                .map(|row| {
                    let mut x = *row;
                    x[j] = g;
                    model.predict_row(&x)
                })
                .sum();
            sum / rows.len() as f64
        })
        .collect();
    PdpCurve::new(feature, grid, values)
}
