//! Liver-risk decision support: decision tables, learned risk models,
//! explanations, rule reconciliation, and per-patient twins.

pub mod data;
pub mod explain;
pub mod features;
pub mod learners;
pub mod reconcile;
pub mod rules;
pub mod twin;
