//! Compare authored rule bounds against a model's learned boundary and
//! propose revised bounds for human review.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::explain::{explain_instance, pdp, ExplainError, PdpCurve, SurrogateConfig};
use crate::features::Feature;
use crate::learners::Predictor;
use crate::rules::{CellExpr, DecisionTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "level")]
pub enum CrossingLevel {
    /// Halfway between the curve's minimum and maximum.
    Midpoint,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconcileConfig {
    pub min_relative_shift: f64,
    pub crossing_level: CrossingLevel,
    /// Curves with a smaller range are treated as carrying no boundary.
    pub min_range_effect: f64,
    pub grid_size: usize,
    pub clip: (f64, f64),
    /// Records explained locally to score corroboration.
    pub corroboration_samples: usize,
    pub surrogate_samples: usize,
    pub seed: u64,
}

impl Default for ReconcileConfig {
    fn default() -> Self {
        ReconcileConfig {
            min_relative_shift: 0.05,
            crossing_level: CrossingLevel::Midpoint,
            min_range_effect: 0.02,
            grid_size: 50,
            clip: (1.0, 99.0),
            corroboration_samples: 10,
            surrogate_samples: 500,
            seed: 0,
        }
    }
}

impl ReconcileConfig {
    pub fn validate(&self) -> Result<(), ReconcileError> {
        if !(self.min_relative_shift > 0.0 && self.min_relative_shift < 1.0) {
            return Err(ReconcileError::InvalidConfig("min_relative_shift must lie in (0, 1)".into()));
        }
        if let CrossingLevel::Fixed(p) = self.crossing_level {
            if !(0.0..=1.0).contains(&p) {
                return Err(ReconcileError::InvalidConfig("fixed crossing level must lie in [0, 1]".into()));
            }
        }
        if self.grid_size < 3 {
            return Err(ReconcileError::InvalidConfig("grid_size must be at least 3".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReconcileError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("curve needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("curve is flat; no threshold")]
    Flat,
    #[error("curve never crosses level {level}")]
    NoCrossing { level: f64 },
    #[error("revision conflicts with the current table: {0}")]
    Conflict(String),
    #[error(transparent)]
    Explain(#[from] ExplainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevisionMethod {
    PdpCrossing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRevision {
    pub table: String,
    pub row: usize,
    pub column: Feature,
    pub old_expr: CellExpr,
    pub proposed_expr: CellExpr,
    pub empirical_threshold: f64,
    pub method: RevisionMethod,
    pub corroboration: f64,
    pub support: usize,
    pub non_monotone: bool,
    pub curve: PdpCurve,
}

impl fmt::Display for RuleRevision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} row {} {}: {} -> {} (threshold {:.4}, support {}, corroboration {:.2}",
            self.table,
            self.row,
            self.column,
            self.old_expr,
            self.proposed_expr,
            self.empirical_threshold,
            self.support,
            self.corroboration
        )?;
        if self.non_monotone {
            f.write_str(", non_monotone")?;
        }
        f.write_str(")")
    }
}

/// One line per revision.
pub fn revision_report(revisions: &[RuleRevision]) -> String {
    revisions.iter().map(|r| format!("{r}\n")).collect()
}

fn crossing_level(curve: &PdpCurve, level: CrossingLevel) -> f64 {
    match level {
        CrossingLevel::Midpoint => {
            let lo = curve.pdp.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = curve.pdp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo + hi) / 2.0
        }
        CrossingLevel::Fixed(p) => p,
    }
}

/// Feature value where `curve` first crosses the configured level, linearly
/// interpolated between the bracketing grid points.
pub fn empirical_threshold(curve: &PdpCurve, cfg: &ReconcileConfig) -> Result<f64, ReconcileError> {
    if curve.grid.len() < 3 {
        return Err(ReconcileError::TooFewPoints(curve.grid.len()));
    }
    if curve.range_effect <= 0.0 {
        return Err(ReconcileError::Flat);
    }
    let level = crossing_level(curve, cfg.crossing_level);
    let (g, p) = (&curve.grid, &curve.pdp);
    for k in 0..g.len() - 1 {
        if p[k] == level {
            return Ok(g[k]);
        }
        if (p[k] < level) != (p[k + 1] < level) {
            let t = (level - p[k]) / (p[k + 1] - p[k]);
            return Ok(g[k] + t * (g[k + 1] - g[k]));
        }
    }
    if p[g.len() - 1] == level {
        return Ok(g[g.len() - 1]);
    }
    Err(ReconcileError::NoCrossing { level })
}

/// True when the curve is non-decreasing or non-increasing, allowing
/// backsteps up to `tol`.
pub fn is_monotone(curve: &PdpCurve, tol: f64) -> bool {
    let up = curve.pdp.windows(2).all(|w| w[1] >= w[0] - tol);
    let down = curve.pdp.windows(2).all(|w| w[1] <= w[0] + tol);
    up || down
}

/// Curve value at `x`, linear between grid points and clamped at the ends.
fn interpolate(curve: &PdpCurve, x: f64) -> f64 {
    let (g, p) = (&curve.grid, &curve.pdp);
    if x <= g[0] {
        return p[0];
    }
    if x >= g[g.len() - 1] {
        return p[p.len() - 1];
    }
    let k = g.partition_point(|&v| v <= x) - 1;
    p[k] + (x - g[k]) / (g[k + 1] - g[k]) * (p[k + 1] - p[k])
}

fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits - 1 - magnitude);
    (x * factor).round() / factor
}

/// The bound of `expr` to revise toward `t`, and the expression with that
/// bound replaced by `new`.
fn revise_bound(expr: &CellExpr, t: f64) -> Option<(f64, Box<dyn Fn(f64) -> CellExpr + '_>)> {
    match *expr {
        CellExpr::Comparison { op, value } => Some((value, Box::new(move |v| CellExpr::Comparison { op, value: v }))),
        CellExpr::Interval {
            lo,
            hi,
            lo_closed,
            hi_closed,
        } => {
            if (lo - t).abs() <= (hi - t).abs() {
                Some((lo, Box::new(move |v| CellExpr::Interval { lo: v, hi, lo_closed, hi_closed })))
            } else {
                Some((hi, Box::new(move |v| CellExpr::Interval { lo, hi: v, lo_closed, hi_closed })))
            }
        }
        CellExpr::Wildcard | CellExpr::EnumEq { .. } => None,
    }
}

/// Fraction of sampled records whose local surrogate slope for `feature`
/// agrees with the side of the threshold the curve places them on.
fn corroboration<P: Predictor + ?Sized>(
    model: &P,
    ds: &Dataset,
    feature: Feature,
    curve: &PdpCurve,
    threshold: f64,
    level: f64,
    cfg: &ReconcileConfig,
) -> Result<f64, ReconcileError> {
    let k = cfg.corroboration_samples.min(ds.len());
    if k == 0 {
        return Ok(0.0);
    }
    let surrogate = SurrogateConfig {
        n_samples: cfg.surrogate_samples.max(100),
        ..SurrogateConfig::default()
    };
    let mut agree = 0usize;
    let mut counted = 0usize;
    for i in 0..k {
        let record = &ds.records()[i * ds.len() / k];
        let x = record.features.get(feature).unwrap_or(f64::NAN);
        let side = (x - threshold).signum();
        let above = (interpolate(curve, x) - level).signum();
        if x == threshold || interpolate(curve, x) == level {
            continue;
        }
        let local = SurrogateConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..surrogate
        };
        let e = explain_instance(model, &record.features, ds.stats(), &local)?;
        let slope = e.contribution(feature);
        counted += 1;
        if slope != 0.0 && slope.signum() * side == above {
            agree += 1;
        }
    }
    Ok(if counted == 0 { 0.0 } else { agree as f64 / counted as f64 })
}

/// Proposes a bound revision for every comparison or interval cell whose
/// authored bound differs from the model's empirical threshold by at least
/// `min_relative_shift`.
pub fn propose_revisions<P: Predictor + ?Sized>(
    table: &DecisionTable,
    model: &P,
    ds: &Dataset,
    cfg: &ReconcileConfig,
) -> Result<Vec<RuleRevision>, ReconcileError> {
    cfg.validate()?;
    let mut curves: BTreeMap<Feature, Option<(PdpCurve, f64)>> = BTreeMap::new();
    let mut out = Vec::new();
    for (r, row) in table.rows.iter().enumerate() {
        for (c, cell) in row.cells.iter().enumerate() {
            if matches!(cell, CellExpr::Wildcard | CellExpr::EnumEq { .. }) {
                continue;
            }
            let feature = table.inputs[c];
            if !curves.contains_key(&feature) {
                let curve = pdp(model, ds, feature, cfg.grid_size, cfg.clip)?;
                let entry = if curve.range_effect < cfg.min_range_effect {
                    log::info!("{feature}: partial dependence range {:.4} too small; skipped", curve.range_effect);
                    None
                } else {
                    match empirical_threshold(&curve, cfg) {
                        Ok(t) => Some((curve, t)),
                        Err(e) => {
                            log::info!("{feature}: {e}; skipped");
                            None
                        }
                    }
                };
                curves.insert(feature, entry);
            }
            let Some((curve, t)) = &curves[&feature] else {
                continue;
            };
            let Some((authored, rebuild)) = revise_bound(cell, *t) else {
                continue;
            };
            let shift = (t - authored).abs() / authored.abs().max(f64::MIN_POSITIVE);
            if shift < cfg.min_relative_shift {
                continue;
            }
            let proposed_bound = round_sig(*t, 3);
            let proposed = rebuild(proposed_bound);
            if proposed == *cell || !proposed.is_valid() {
                continue;
            }
            let (lo, hi) = (authored.min(proposed_bound), authored.max(proposed_bound));
            let support = ds
                .records()
                .iter()
                .filter_map(|rec| rec.features.get(feature))
                .filter(|v| (lo..=hi).contains(v))
                .count();
            if support == 0 {
                continue;
            }
            let level = crossing_level(curve, cfg.crossing_level);
            let corroboration = corroboration(model, ds, feature, curve, *t, level, cfg)?;
            out.push(RuleRevision {
                table: table.name.clone(),
                row: r,
                column: feature,
                old_expr: *cell,
                proposed_expr: proposed,
                empirical_threshold: *t,
                method: RevisionMethod::PdpCrossing,
                corroboration,
                support,
                non_monotone: !is_monotone(curve, 1e-9),
                curve: curve.clone(),
            });
        }
    }
    Ok(out)
}

/// Returns a copy of `table` with the revised cell and a history note.
pub fn apply_revision(table: &DecisionTable, rev: &RuleRevision) -> Result<DecisionTable, ReconcileError> {
    if table.name != rev.table {
        return Err(ReconcileError::Conflict(format!(
            "revision targets table `{}`, current table is `{}`",
            rev.table, table.name
        )));
    }
    let column = table
        .column_of(rev.column)
        .ok_or_else(|| ReconcileError::Conflict(format!("table has no `{}` input", rev.column)))?;
    let current = table
        .cell(rev.row, column)
        .ok_or_else(|| ReconcileError::Conflict(format!("table has no row {}", rev.row)))?;
    if *current != rev.old_expr {
        return Err(ReconcileError::Conflict(format!(
            "row {} {} is `{}`, revision expects `{}`",
            rev.row, rev.column, current, rev.old_expr
        )));
    }
    let mut next = table.clone();
    next.rows[rev.row].cells[column] = rev.proposed_expr;
    let mut note = format!(
        "row {} {}: {} -> {} (empirical threshold {:.4}, support {})",
        rev.row, rev.column, rev.old_expr, rev.proposed_expr, rev.empirical_threshold, rev.support
    );
    if rev.non_monotone {
        note.push_str(" non_monotone");
    }
    next.history.push(note);
    Ok(next)
}
