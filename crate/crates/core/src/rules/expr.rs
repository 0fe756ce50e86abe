//! Cell expressions: `-`, comparisons, intervals and bare integer codes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
        }
    }

    pub fn apply(self, v: f64, bound: f64) -> bool {
        match self {
            CmpOp::Lt => v < bound,
            CmpOp::Le => v <= bound,
            CmpOp::Gt => v > bound,
            CmpOp::Ge => v >= bound,
            CmpOp::Eq => v == bound,
        }
    }
}

/// One condition cell of a decision table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellExpr {
    Wildcard,
    Comparison { op: CmpOp, value: f64 },
    Interval { lo: f64, hi: f64, lo_closed: bool, hi_closed: bool },
    /// Equality against an integer code (e.g. the 0/1 gender encoding).
    EnumEq { value: i64 },
}

impl CellExpr {
    pub fn matches(&self, v: f64) -> bool {
        match *self {
            CellExpr::Wildcard => true,
            CellExpr::Comparison { op, value } => op.apply(v, value),
            CellExpr::Interval { lo, hi, lo_closed, hi_closed } => {
                let above = if lo_closed { v >= lo } else { v > lo };
                let below = if hi_closed { v <= hi } else { v < hi };
                above && below
            }
            CellExpr::EnumEq { value } => v == value as f64,
        }
    }

    /// Checks the structural invariants a parsed expression always satisfies.
    pub fn is_valid(&self) -> bool {
        match *self {
            CellExpr::Wildcard | CellExpr::EnumEq { .. } => true,
            CellExpr::Comparison { value, .. } => value.is_finite(),
            CellExpr::Interval { lo, hi, lo_closed, hi_closed } => {
                lo.is_finite() && hi.is_finite() && (lo < hi || (lo == hi && lo_closed && hi_closed))
            }
        }
    }
}

impl fmt::Display for CellExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            CellExpr::Wildcard => f.write_str("-"),
            CellExpr::Comparison { op, value } => write!(f, "{} {}", op.symbol(), value),
            CellExpr::Interval { lo, hi, lo_closed, hi_closed } => write!(
                f,
                "{}{}..{}{}",
                if lo_closed { '[' } else { '(' },
                lo,
                hi,
                if hi_closed { ']' } else { ')' }
            ),
            CellExpr::EnumEq { value } => write!(f, "{value}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprErrorKind {
    Syntax,
    Semantic,
}

/// A cell parse failure. `offset` counts characters from the start of the
/// cell text.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{} error at offset {offset}: {message}", match kind { ExprErrorKind::Syntax => "syntax", ExprErrorKind::Semantic => "semantic" })]
pub struct ExprError {
    pub kind: ExprErrorKind,
    pub offset: usize,
    pub message: String,
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<u8> {
        self.text.as_bytes().get(self.pos).copied()
    }

    fn peek_at(&self, ahead: usize) -> Option<u8> {
        self.text.as_bytes().get(self.pos + ahead).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn offset(&self, byte: usize) -> usize {
        self.text[..byte.min(self.text.len())].chars().count()
    }

    fn error(&self, kind: ExprErrorKind, byte: usize, message: impl Into<String>) -> ExprError {
        ExprError {
            kind,
            offset: self.offset(byte),
            message: message.into(),
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), ExprError> {
        self.skip_ws();
        if self.text[self.pos..].starts_with(token) {
            self.pos += token.len();
            Ok(())
        } else {
            Err(self.error(ExprErrorKind::Syntax, self.pos, format!("expected `{token}`")))
        }
    }

    /// Lexes `[+-]? digits ('.' digits)? ([eE] [+-]? digits)?`. Returns the
    /// value and whether the literal was an integer.
    fn number(&mut self) -> Result<(f64, bool), ExprError> {
        self.skip_ws();
        let start = self.pos;
        if matches!(self.peek(), Some(b'+' | b'-')) {
            self.pos += 1;
        }
        let digits_start = self.pos;
        while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == digits_start {
            return Err(self.error(ExprErrorKind::Syntax, start, "expected a number"));
        }
        let mut integer = true;
        if self.peek() == Some(b'.') && matches!(self.peek_at(1), Some(b) if b.is_ascii_digit()) {
            integer = false;
            self.pos += 1;
            while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == exp_start {
                return Err(self.error(ExprErrorKind::Syntax, mark, "malformed exponent"));
            }
            integer = false;
        }
        let literal = &self.text[start..self.pos];
        let value: f64 = literal
            .parse()
            .map_err(|_| self.error(ExprErrorKind::Syntax, start, format!("bad number `{literal}`")))?;
        if !value.is_finite() {
            return Err(self.error(ExprErrorKind::Semantic, start, format!("number `{literal}` is not finite")));
        }
        Ok((value, integer))
    }

    fn finish(&mut self) -> Result<(), ExprError> {
        self.skip_ws();
        if self.pos < self.text.len() {
            Err(self.error(ExprErrorKind::Syntax, self.pos, "unexpected trailing input"))
        } else {
            Ok(())
        }
    }
}

/// Parses one cell. Whitespace between tokens is ignored.
pub fn parse_expr(text: &str) -> Result<CellExpr, ExprError> {
    let mut c = Cursor { text, pos: 0 };
    c.skip_ws();
    let start = c.pos;
    let expr = match c.peek() {
        None => return Err(c.error(ExprErrorKind::Syntax, start, "empty cell (use `-` for any value)")),
        Some(b'-') if !matches!(c.peek_at(1), Some(b) if b.is_ascii_digit()) => {
            c.pos += 1;
            CellExpr::Wildcard
        }
        Some(b'<' | b'>' | b'=') => {
            let op = if c.text[c.pos..].starts_with("<=") {
                CmpOp::Le
            } else if c.text[c.pos..].starts_with(">=") {
                CmpOp::Ge
            } else {
                match c.peek() {
                    Some(b'<') => CmpOp::Lt,
                    Some(b'>') => CmpOp::Gt,
                    _ => CmpOp::Eq,
                }
            };
            c.pos += op.symbol().len();
            let (value, _) = c.number()?;
            CellExpr::Comparison { op, value }
        }
        Some(open @ (b'[' | b'(')) => {
            c.pos += 1;
            let (lo, _) = c.number()?;
            c.expect("..")?;
            let (hi, _) = c.number()?;
            c.skip_ws();
            let hi_closed = match c.peek() {
                Some(b']') => true,
                Some(b')') => false,
                _ => return Err(c.error(ExprErrorKind::Syntax, c.pos, "expected `]` or `)`")),
            };
            c.pos += 1;
            let e = CellExpr::Interval {
                lo,
                hi,
                lo_closed: open == b'[',
                hi_closed,
            };
            if !e.is_valid() {
                return Err(c.error(
                    ExprErrorKind::Semantic,
                    start,
                    format!("interval bounds out of order: {lo} must be below {hi}"),
                ));
            }
            e
        }
        Some(b) if b.is_ascii_digit() || b == b'+' || b == b'-' => {
            let (value, integer) = c.number()?;
            if !integer || value.abs() > 9.007_199_254_740_992e15 {
                return Err(c.error(
                    ExprErrorKind::Syntax,
                    start,
                    "a bare number must be an integer code; use `= x` to compare a measurement",
                ));
            }
            CellExpr::EnumEq { value: value as i64 }
        }
        Some(_) => return Err(c.error(ExprErrorKind::Syntax, start, "unexpected character")),
    };
    c.finish()?;
    Ok(expr)
}

/// Canonical text of an expression; `parse_expr(&print_expr(e)) == e`.
pub fn print_expr(e: &CellExpr) -> String {
    e.to_string()
}

impl FromStr for CellExpr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expr(s)
    }
}
