use proptest::prelude::*;
use twinscope_core::features::{Feature, PatientFeatures, NUM_FEATURES};
use twinscope_core::rules::{
    parse_expr, parse_table, print_expr, CellExpr, CmpOp, DecisionTable, EvalError, HitPolicy, Outcome, RiskLevel,
    RuleRow, DEFAULT_LIVER_TABLE,
};

const OPS: [CmpOp; 5] = [CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Eq];
const LEVELS: [RiskLevel; 3] = [RiskLevel::Low, RiskLevel::Medium, RiskLevel::High];

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        (-1000i32..1000).prop_map(f64::from),
        (-1e6f64..1e6),
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
    ]
}

fn expr() -> impl Strategy<Value = CellExpr> {
    prop_oneof![
        Just(CellExpr::Wildcard),
        (0..5usize, finite()).prop_map(|(o, value)| CellExpr::Comparison { op: OPS[o], value }),
        (finite(), finite(), any::<bool>(), any::<bool>()).prop_filter_map("ordered", |(a, b, lc, hc)| {
            let e = CellExpr::Interval {
                lo: a.min(b),
                hi: a.max(b),
                lo_closed: lc || a == b,
                hi_closed: hc || a == b,
            };
            e.is_valid().then_some(e)
        }),
        (-(1i64 << 53)..=(1i64 << 53)).prop_map(|value| CellExpr::EnumEq { value }),
    ]
}

/// Cells whose bounds come from a small value set, so random patients hit
/// them often.
fn coarse_expr() -> impl Strategy<Value = CellExpr> {
    let v = (0..6i32).prop_map(|k| f64::from(k * 50));
    let bounds = (0..5i32).prop_flat_map(|lo| (Just(lo), lo + 1..6));
    prop_oneof![
        2 => Just(CellExpr::Wildcard),
        3 => (0..5usize, v).prop_map(|(o, value)| CellExpr::Comparison { op: OPS[o], value }),
        3 => (bounds, any::<bool>(), any::<bool>()).prop_map(|((a, b), lc, hc)| CellExpr::Interval {
            lo: f64::from(a * 50),
            hi: f64::from(b * 50),
            lo_closed: lc,
            hi_closed: hc,
        }),
    ]
}

fn table() -> impl Strategy<Value = DecisionTable> {
    (0..3usize).prop_flat_map(table_with)
}

fn table_with(policy: usize) -> impl Strategy<Value = DecisionTable> {
    (1..=3usize).prop_flat_map(move |k| {
        let inputs = proptest::sample::subsequence(vec![Feature::Age, Feature::Alp, Feature::Alt, Feature::Ast], k);
        let rows = proptest::collection::vec(
            (proptest::collection::vec(coarse_expr(), k), 0..3usize).prop_map(|(cells, o)| RuleRow {
                cells,
                output: LEVELS[o],
                annotation: String::new(),
            }),
            1..=8,
        );
        let order = Just(LEVELS.to_vec()).prop_shuffle();
        (inputs, rows, order).prop_map(move |(inputs, rows, order)| {
            let hit_policy = [HitPolicy::Unique, HitPolicy::First, HitPolicy::Priority][policy];
            DecisionTable {
                name: "random".into(),
                inputs,
                hit_policy,
                priority_order: if hit_policy == HitPolicy::Priority { order } else { Vec::new() },
                rows,
                history: Vec::new(),
            }
        })
    })
}

fn patient() -> impl Strategy<Value = PatientFeatures> {
    proptest::collection::vec((0..11i32).prop_map(|k| f64::from(k * 25)), NUM_FEATURES).prop_map(|v| {
        let mut a = [0.0; NUM_FEATURES];
        a.copy_from_slice(&v);
        a[Feature::Gender.index()] = 1.0;
        PatientFeatures::from_vector(&a)
    })
}

fn naive_matches(t: &DecisionTable, p: &PatientFeatures) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, row) in t.rows.iter().enumerate() {
        let mut all = true;
        for (c, cell) in row.cells.iter().enumerate() {
            let v = p.get(t.inputs[c]).unwrap();
            let hit = match *cell {
                CellExpr::Wildcard => true,
                CellExpr::Comparison { op, value } => match op {
                    CmpOp::Lt => v < value,
                    CmpOp::Le => v <= value,
                    CmpOp::Gt => v > value,
                    CmpOp::Ge => v >= value,
                    CmpOp::Eq => v == value,
                },
                CellExpr::Interval { lo, hi, lo_closed, hi_closed } => {
                    (if lo_closed { v >= lo } else { v > lo }) && (if hi_closed { v <= hi } else { v < hi })
                }
                CellExpr::EnumEq { value } => v == value as f64,
            };
            all &= hit;
        }
        if all {
            out.push(i);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn print_then_parse_is_identity(e in expr()) {
        let text = print_expr(&e);
        prop_assert_eq!(parse_expr(&text).unwrap(), e, "text {}", text);
    }

    #[test]
    fn interval_ends_follow_closedness(a in finite(), width in 1e-6f64..1e6, lc: bool, hc: bool) {
        let b = a + width;
        prop_assume!(a < b && b.is_finite());
        let e = CellExpr::Interval { lo: a, hi: b, lo_closed: lc, hi_closed: hc };
        prop_assert_eq!(e.matches(a), lc);
        prop_assert_eq!(e.matches(b), hc);
    }

    #[test]
    fn wildcard_matches_everything(v in finite()) {
        prop_assert!(CellExpr::Wildcard.matches(v));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn evaluation_agrees_with_brute_force(t in table(), p in patient()) {
        let expected = naive_matches(&t, &p);
        match t.evaluate(&p) {
            Err(EvalError::Ambiguous { rows }) => {
                prop_assert_eq!(t.hit_policy, HitPolicy::Unique);
                prop_assert!(expected.len() >= 2);
                prop_assert_eq!(rows, expected);
            }
            Err(e) => prop_assert!(false, "unexpected {e}"),
            Ok(d) => {
                prop_assert_eq!(&d.matched_rows, &expected);
                prop_assert_eq!(d.trace.len(), t.rows.len());
                if t.hit_policy == HitPolicy::Unique {
                    prop_assert!(expected.len() <= 1);
                }
                if t.hit_policy == HitPolicy::First {
                    prop_assert_eq!(d.selected_row, expected.first().copied());
                }
                if expected.is_empty() {
                    prop_assert_eq!(d.outcome, Outcome::NoMatch);
                }
            }
        }
    }

    #[test]
    fn priority_outcome_ignores_row_order(t in table_with(2), p in patient(), seed: u64) {
        let mut shuffled = t.clone();
        let n = shuffled.rows.len();
        for i in (1..n).rev() {
            let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 33) as usize % (i + 1);
            shuffled.rows.swap(i, j);
        }
        prop_assert_eq!(t.evaluate(&p).unwrap().outcome, shuffled.evaluate(&p).unwrap().outcome);
    }

    #[test]
    fn table_text_round_trips(t in table()) {
        prop_assert_eq!(parse_table(&t.to_string()).unwrap(), t);
    }
}

#[test]
fn default_table_on_reference_row_matches_brute_force() {
    let t = parse_table(DEFAULT_LIVER_TABLE).unwrap();
    let p = PatientFeatures::from_vector(&[65.0, 0.0, 0.7, 0.1, 187.0, 16.0, 18.0, 6.8, 3.3, 0.9]);
    let d = t.evaluate(&p).unwrap();
    let expected = naive_matches(&t, &p);
    assert_eq!(d.matched_rows, expected);
    assert_eq!(d.selected_row, expected.first().copied());
}
