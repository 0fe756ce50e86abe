//! Decision tables: the line-oriented document format, validation and
//! hit-policy evaluation.
//!
//! ```text
//! table liver_risk hit FIRST
//! inputs: age, alt, ast
//! | >= 60 | >= 40 | >= 40 -> HIGH # older patient, both enzymes raised
//! | - | - | - -> LOW
//! ```
//!
//! `priority: HIGH > MEDIUM > LOW` is required for (and only allowed on)
//! PRIORITY tables. `note: <text>` lines carry the revision history. Lines
//! starting with `#` are comments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::expr::{parse_expr, CellExpr, ExprError};
use crate::features::{Feature, PatientFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RiskLevel {
    Low,
    Medium,
    High,
}

impl RiskLevel {
    pub const ALL: [RiskLevel; 3] = [RiskLevel::Low, RiskLevel::Medium, RiskLevel::High];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskLevel::Low => "LOW",
            RiskLevel::Medium => "MEDIUM",
            RiskLevel::High => "HIGH",
        }
    }
}

impl fmt::Display for RiskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RiskLevel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown output `{s}` (expected LOW, MEDIUM or HIGH)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HitPolicy {
    Unique,
    First,
    Priority,
}

impl HitPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            HitPolicy::Unique => "UNIQUE",
            HitPolicy::First => "FIRST",
            HitPolicy::Priority => "PRIORITY",
        }
    }
}

impl FromStr for HitPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "UNIQUE" => Ok(HitPolicy::Unique),
            "FIRST" => Ok(HitPolicy::First),
            "PRIORITY" => Ok(HitPolicy::Priority),
            other => Err(format!("unknown hit policy `{other}` (expected UNIQUE, FIRST or PRIORITY)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRow {
    pub cells: Vec<CellExpr>,
    pub output: RiskLevel,
    #[serde(default)]
    pub annotation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTable {
    pub name: String,
    pub inputs: Vec<Feature>,
    pub hit_policy: HitPolicy,
    /// Highest priority first; empty unless the policy is PRIORITY.
    #[serde(default)]
    pub priority_order: Vec<RiskLevel>,
    pub rows: Vec<RuleRow>,
    /// Revision notes, oldest first.
    #[serde(default)]
    pub history: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TableErrorKind {
    #[error("{0}")]
    Syntax(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("duplicate input `{0}`")]
    DuplicateInput(String),
    #[error("row has {found} cells but the table declares {expected} inputs")]
    ArityMismatch { expected: usize, found: usize },
    #[error("{0}")]
    PriorityOrder(String),
    #[error("{0}")]
    UnknownOutput(String),
    #[error("invalid cell: {0}")]
    Cell(ExprError),
    #[error("table has no rows")]
    NoRows,
}

/// A table diagnostic. Line and column are 1-based.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct TableError {
    pub line: usize,
    pub column: usize,
    pub kind: TableErrorKind,
}

fn col(line: &str, byte: usize) -> usize {
    line[..byte].chars().count() + 1
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Byte offset of `part` within `whole`; `part` must be a subslice.
fn offset_in(whole: &str, part: &str) -> usize {
    part.as_ptr() as usize - whole.as_ptr() as usize
}

fn parse_header(line: &str, n: usize) -> Result<(String, HitPolicy), TableError> {
    let err = |column: usize, msg: &str| TableError {
        line: n,
        column,
        kind: TableErrorKind::Syntax(msg.to_string()),
    };
    let words: Vec<&str> = line.split_whitespace().collect();
    if words.len() != 4 || words[0] != "table" || words[2] != "hit" {
        return Err(err(1, "expected header `table <name> hit <policy>`"));
    }
    if !is_identifier(words[1]) {
        return Err(err(col(line, offset_in(line, words[1])), "table name must be an identifier"));
    }
    let policy = words[3]
        .parse()
        .map_err(|m: String| err(col(line, offset_in(line, words[3])), &m))?;
    Ok((words[1].to_string(), policy))
}

fn parse_inputs(line: &str, rest: &str, n: usize) -> Result<Vec<Feature>, TableError> {
    let mut inputs = Vec::new();
    for part in rest.split(',') {
        let name = part.trim();
        let column = col(line, offset_in(line, part) + (part.len() - part.trim_start().len()));
        if name.is_empty() {
            return Err(TableError {
                line: n,
                column,
                kind: TableErrorKind::Syntax("empty input name".to_string()),
            });
        }
        let feature = name
            .parse::<Feature>()
            .ok()
            .filter(|f| f.name() == name)
            .ok_or_else(|| TableError {
                line: n,
                column,
                kind: TableErrorKind::UnknownFeature(name.to_string()),
            })?;
        if inputs.contains(&feature) {
            return Err(TableError {
                line: n,
                column,
                kind: TableErrorKind::DuplicateInput(name.to_string()),
            });
        }
        inputs.push(feature);
    }
    Ok(inputs)
}

fn parse_priority(line: &str, rest: &str, n: usize) -> Result<Vec<RiskLevel>, TableError> {
    let mut order = Vec::new();
    for part in rest.split('>') {
        let name = part.trim();
        let column = col(line, offset_in(line, part) + (part.len() - part.trim_start().len()));
        let level: RiskLevel = name.parse().map_err(|m| TableError {
            line: n,
            column,
            kind: TableErrorKind::UnknownOutput(m),
        })?;
        if order.contains(&level) {
            return Err(TableError {
                line: n,
                column,
                kind: TableErrorKind::PriorityOrder(format!("{level} listed twice")),
            });
        }
        order.push(level);
    }
    if order.len() != RiskLevel::ALL.len() {
        return Err(TableError {
            line: n,
            column: 1,
            kind: TableErrorKind::PriorityOrder(
                "priority must rank every output: LOW, MEDIUM and HIGH".to_string(),
            ),
        });
    }
    Ok(order)
}

fn parse_row(line: &str, n: usize, arity: usize) -> Result<RuleRow, TableError> {
    let (body, annotation) = match line.find('#') {
        Some(i) => (&line[..i], line[i + 1..].trim()),
        None => (line, ""),
    };
    let arrow = body.rfind("->").ok_or_else(|| TableError {
        line: n,
        column: col(line, body.len()),
        kind: TableErrorKind::Syntax("expected `-> <OUTPUT>` after the cells".to_string()),
    })?;
    let out_text = &body[arrow + 2..];
    let out_name = out_text.trim();
    let output: RiskLevel = out_name.parse().map_err(|m| TableError {
        line: n,
        column: col(line, arrow + 2 + (out_text.len() - out_text.trim_start().len())),
        kind: TableErrorKind::UnknownOutput(m),
    })?;
    let cells_text = body[..arrow].trim_start();
    let cells_start = offset_in(line, cells_text) + 1;
    let mut parts: Vec<&str> = cells_text[1..].split('|').collect();
    if parts.len() > 1 && parts.last().is_some_and(|p| p.trim().is_empty()) {
        parts.pop();
    }
    if parts.len() != arity {
        return Err(TableError {
            line: n,
            column: col(line, cells_start - 1),
            kind: TableErrorKind::ArityMismatch {
                expected: arity,
                found: parts.len(),
            },
        });
    }
    let mut cells = Vec::with_capacity(arity);
    for part in parts {
        let start = offset_in(line, part);
        let cell = parse_expr(part).map_err(|e| TableError {
            line: n,
            column: col(line, start) + e.offset,
            kind: TableErrorKind::Cell(e),
        })?;
        cells.push(cell);
    }
    Ok(RuleRow {
        cells,
        output,
        annotation: annotation.to_string(),
    })
}

/// Parses and validates a table document.
pub fn parse_table(doc: &str) -> Result<DecisionTable, TableError> {
    let mut header: Option<(String, HitPolicy, usize)> = None;
    let mut inputs: Option<Vec<Feature>> = None;
    let mut priority: Option<(Vec<RiskLevel>, usize)> = None;
    let mut rows = Vec::new();
    let mut history = Vec::new();

    for (i, line) in doc.lines().enumerate() {
        let n = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let syntax = |column: usize, msg: &str| TableError {
            line: n,
            column,
            kind: TableErrorKind::Syntax(msg.to_string()),
        };
        if header.is_none() {
            let (name, policy) = parse_header(line, n)?;
            header = Some((name, policy, n));
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("inputs:") {
            if inputs.is_some() {
                return Err(syntax(1, "duplicate `inputs:` line"));
            }
            if !rows.is_empty() {
                return Err(syntax(1, "`inputs:` must precede the rows"));
            }
            inputs = Some(parse_inputs(line, rest, n)?);
        } else if let Some(rest) = trimmed.strip_prefix("priority:") {
            if priority.is_some() {
                return Err(syntax(1, "duplicate `priority:` line"));
            }
            priority = Some((parse_priority(line, rest, n)?, n));
        } else if let Some(rest) = trimmed.strip_prefix("note:") {
            history.push(rest.trim().to_string());
        } else if trimmed.starts_with('|') {
            let arity = inputs
                .as_ref()
                .ok_or_else(|| syntax(1, "rows must follow an `inputs:` line"))?
                .len();
            rows.push(parse_row(line, n, arity)?);
        } else {
            return Err(syntax(col(line, offset_in(line, trimmed)), "unrecognized line"));
        }
    }

    let (name, hit_policy, header_line) = header.ok_or(TableError {
        line: 1,
        column: 1,
        kind: TableErrorKind::Syntax("missing `table <name> hit <policy>` header".to_string()),
    })?;
    let inputs = inputs.ok_or(TableError {
        line: header_line,
        column: 1,
        kind: TableErrorKind::Syntax("missing `inputs:` line".to_string()),
    })?;
    let priority_order = match (hit_policy, priority) {
        (HitPolicy::Priority, Some((order, _))) => order,
        (HitPolicy::Priority, None) => {
            return Err(TableError {
                line: header_line,
                column: 1,
                kind: TableErrorKind::PriorityOrder(
                    "PRIORITY tables need a `priority: HIGH > MEDIUM > LOW` line".to_string(),
                ),
            })
        }
        (_, Some((_, line))) => {
            return Err(TableError {
                line,
                column: 1,
                kind: TableErrorKind::PriorityOrder("`priority:` is only valid on PRIORITY tables".to_string()),
            })
        }
        (_, None) => Vec::new(),
    };
    if rows.is_empty() {
        return Err(TableError {
            line: header_line,
            column: 1,
            kind: TableErrorKind::NoRows,
        });
    }
    Ok(DecisionTable {
        name,
        inputs,
        hit_policy,
        priority_order,
        rows,
        history,
    })
}

impl FromStr for DecisionTable {
    type Err = TableError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_table(s)
    }
}

/// Canonical document text; parsing it yields an equal table.
impl fmt::Display for DecisionTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "table {} hit {}", self.name, self.hit_policy.as_str())?;
        let names: Vec<&str> = self.inputs.iter().map(|i| i.name()).collect();
        writeln!(f, "inputs: {}", names.join(", "))?;
        if self.hit_policy == HitPolicy::Priority {
            let order: Vec<&str> = self.priority_order.iter().map(|l| l.as_str()).collect();
            writeln!(f, "priority: {}", order.join(" > "))?;
        }
        for note in &self.history {
            writeln!(f, "note: {note}")?;
        }
        for row in &self.rows {
            for cell in &row.cells {
                write!(f, "| {cell} ")?;
            }
            write!(f, "-> {}", row.output)?;
            if !row.annotation.is_empty() {
                write!(f, " # {}", row.annotation)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Low,
    Medium,
    High,
    NoMatch,
}

impl From<RiskLevel> for Outcome {
    fn from(l: RiskLevel) -> Self {
        match l {
            RiskLevel::Low => Outcome::Low,
            RiskLevel::Medium => Outcome::Medium,
            RiskLevel::High => Outcome::High,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Low => "LOW",
            Outcome::Medium => "MEDIUM",
            Outcome::High => "HIGH",
            Outcome::NoMatch => "NO_MATCH",
        })
    }
}

/// The result of evaluating a table, with a per-row, per-cell trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDecision {
    pub outcome: Outcome,
    /// Row whose output was selected, if any.
    pub selected_row: Option<usize>,
    pub matched_rows: Vec<usize>,
    pub trace: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("UNIQUE table matched several rows: {rows:?}")]
    Ambiguous { rows: Vec<usize> },
    #[error("input {0} is missing; impute before evaluating")]
    MissingInput(Feature),
}

impl DecisionTable {
    pub fn column_of(&self, feature: Feature) -> Option<usize> {
        self.inputs.iter().position(|&f| f == feature)
    }

    pub fn cell(&self, row: usize, column: usize) -> Option<&CellExpr> {
        self.rows.get(row).and_then(|r| r.cells.get(column))
    }

    fn rank(&self, level: RiskLevel) -> usize {
        self.priority_order
            .iter()
            .position(|&l| l == level)
            .unwrap_or(usize::MAX)
    }

    /// Evaluates every row against `p` and resolves the matches by hit policy.
    pub fn evaluate(&self, p: &PatientFeatures) -> Result<TableDecision, EvalError> {
        let values = self
            .inputs
            .iter()
            .map(|&f| p.get(f).ok_or(EvalError::MissingInput(f)))
            .collect::<Result<Vec<f64>, _>>()?;
        let trace: Vec<Vec<bool>> = self
            .rows
            .iter()
            .map(|row| row.cells.iter().zip(&values).map(|(c, &v)| c.matches(v)).collect())
            .collect();
        let matched_rows: Vec<usize> = trace
            .iter()
            .enumerate()
            .filter(|(_, cells)| cells.iter().all(|&m| m))
            .map(|(i, _)| i)
            .collect();
        let selected_row = match self.hit_policy {
            HitPolicy::Unique if matched_rows.len() > 1 => {
                return Err(EvalError::Ambiguous { rows: matched_rows })
            }
            HitPolicy::Unique | HitPolicy::First => matched_rows.first().copied(),
            HitPolicy::Priority => matched_rows
                .iter()
                .copied()
                .min_by_key(|&i| (self.rank(self.rows[i].output), i)),
        };
        Ok(TableDecision {
            outcome: selected_row.map_or(Outcome::NoMatch, |i| self.rows[i].output.into()),
            selected_row,
            matched_rows,
            trace,
        })
    }
}

/// Convenience wrapper for [`DecisionTable::evaluate`].
pub fn evaluate(table: &DecisionTable, p: &PatientFeatures) -> Result<TableDecision, EvalError> {
    table.evaluate(p)
}
