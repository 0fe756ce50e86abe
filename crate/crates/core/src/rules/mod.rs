//! Decision tables over [`PatientFeatures`](crate::features::PatientFeatures).

mod expr;
mod table;

pub use expr::{parse_expr, print_expr, CellExpr, CmpOp, ExprError, ExprErrorKind};
pub use table::{
    evaluate, parse_table, DecisionTable, EvalError, HitPolicy, Outcome, RiskLevel, RuleRow, TableDecision,
    TableError, TableErrorKind,
};

/// Liver-risk table over age, ALT and AST with placeholder cut points.
pub const DEFAULT_LIVER_TABLE: &str = include_str!("../../tables/liver_default.table");

/// Single-input ALP screen (`alp < 200` is low risk).
pub const ALP_SCREEN_TABLE: &str = include_str!("../../tables/alp_screen.table");
