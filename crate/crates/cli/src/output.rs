use std::fmt::Write as _;
use std::io::IsTerminal;

use twinscope_core::explain::Explanation;
use twinscope_core::features::Feature;
use twinscope_core::rules::{DecisionTable, TableDecision};

/// True when output must carry no ANSI escapes.
pub fn plain(no_color_flag: bool) -> bool {
    no_color_flag || std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty()) || !std::io::stdout().is_terminal()
}

fn paint(text: &str, code: &str, plain: bool) -> String {
    if plain {
        text.to_string()
    } else {
        format!("\x1b[{code}m{text}\x1b[0m")
    }
}

/// Contributions ranked by magnitude, one feature per line.
pub fn explanation_table(e: &Explanation, plain: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "risk probability {:.4}  intercept {:.4}  local fidelity {:.4}",
        e.prediction, e.intercept, e.local_fidelity
    );
    let _ = writeln!(out, "{:<18} {:>12} {:>13}", "feature", "value", "contribution");
    for (f, c) in e.ranked() {
        let value = e.instance.get(f).map(|v| format!("{v}")).unwrap_or_else(|| "-".into());
        let cell = format!("{c:>+13.6}");
        let cell = if c > 0.0 {
            paint(&cell, "31", plain)
        } else if c < 0.0 {
            paint(&cell, "32", plain)
        } else {
            cell
        };
        let _ = writeln!(out, "{:<18} {:>12} {}", f.name(), value, cell);
    }
    out
}

/// `feature,value,contribution` in feature order.
pub fn explanation_csv(e: &Explanation) -> String {
    let mut out = String::from("feature,value,contribution\n");
    for f in Feature::ALL {
        let value = e.instance.get(f).map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", f.name(), value, e.contribution(f));
    }
    out
}

pub fn decision_trace(table: &DecisionTable, d: &TableDecision, plain: bool) -> String {
    let mut out = String::new();
    let selected = d.selected_row.map(|r| format!(" (row {r})")).unwrap_or_default();
    let _ = writeln!(out, "outcome: {}{}", paint(&d.outcome.to_string(), "1", plain), selected);
    let _ = writeln!(out, "matched rows: {:?}", d.matched_rows);
    for (r, (row, cells)) in table.rows.iter().zip(&d.trace).enumerate() {
        let marks: Vec<String> = row
            .cells
            .iter()
            .zip(cells)
            .map(|(c, &m)| format!("{c} [{}]", if m { "yes" } else { "no" }))
            .collect();
        let mark = if Some(r) == d.selected_row { "*" } else { " " };
        let _ = writeln!(out, "{mark} row {r}: {} -> {}", marks.join(" | "), row.output.as_str());
    }
    out
}
