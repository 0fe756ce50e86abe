//! Synthetic data: a planted-threshold generator for reconciliation tests and
//! an ILPD-shaped fallback sample used when the UCI file is not available.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, LabeledRecord};
use crate::features::{Feature, PatientFeatures};

/// `feature > cut` labelling rule planted by [`synth_generate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub feature: Feature,
    pub cut: f64,
}

impl fmt::Display for ThresholdRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}>{}", self.feature, self.cut)
    }
}

impl FromStr for ThresholdRule {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, cut) = s
            .split_once('>')
            .ok_or_else(|| DataError::InvalidGenerator(format!("rule `{s}` must look like `alp>175`")))?;
        let feature: Feature = name.trim().parse()?;
        let cut: f64 = cut
            .trim()
            .parse()
            .map_err(|_| DataError::InvalidGenerator(format!("bad cut value in `{s}`")))?;
        if !cut.is_finite() {
            return Err(DataError::InvalidGenerator(format!("bad cut value in `{s}`")));
        }
        Ok(ThresholdRule { feature, cut })
    }
}

/// Draws one record uniformly over plausible lab ranges.
fn uniform_patient(rng: &mut ChaCha8Rng) -> PatientFeatures {
    let total_bilirubin = rng.random_range(0.3..8.0);
    let total_proteins = rng.random_range(4.5..9.0);
    let albumin = total_proteins * rng.random_range(0.35..0.6);
    PatientFeatures {
        age: rng.random_range(18..=85) as f64,
        gender: rng.random_range(0..=1) as f64,
        total_bilirubin,
        direct_bilirubin: total_bilirubin * rng.random_range(0.1..0.7),
        alp: rng.random_range(50.0..400.0),
        alt: rng.random_range(5.0..200.0),
        ast: rng.random_range(5.0..250.0),
        total_proteins,
        albumin,
        ag_ratio: Some(albumin / (total_proteins - albumin)),
    }
}

/// Generates `n` records whose label is `value > cut` for the rule's feature,
/// flipped independently with probability `noise`.
pub fn synth_generate(n: usize, rule: ThresholdRule, noise: f64, seed: u64) -> Result<Dataset, DataError> {
    if !(0.0..0.5).contains(&noise) {
        return Err(DataError::InvalidGenerator(format!(
            "noise must lie in [0, 0.5), got {noise}"
        )));
    }
    if n == 0 {
        return Err(DataError::NoRecords);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|_| {
            let features = uniform_patient(&mut rng);
            let value = features.get(rule.feature).expect("generated records are complete");
            let clean = value > rule.cut;
            let flip = rng.random_bool(noise);
            LabeledRecord {
                features,
                risk: (clean ^ flip) as u8,
            }
        })
        .collect();
    Dataset::new(records)
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (v * scale).round() / scale
}

/// A synthetic stand-in for the UCI ILPD sample: 583 records, 416 of them
/// positive, four missing A/G ratios, heavy-tailed liver enzymes and a label
/// that does not depend on gender. Values are rounded like the UCI file.
pub fn ilpd_like(seed: u64) -> Vec<LabeledRecord> {
    const N: usize = 583;
    const POSITIVE: usize = 416;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<u8> = (0..N).map(|i| (i < POSITIVE) as u8).collect();
    labels.shuffle(&mut rng);

    let age = Normal::<f64>::new(45.0, 16.0).unwrap();
    let proteins = Normal::<f64>::new(6.5, 1.0).unwrap();
    let lognormal = |median: f64, sigma: f64| LogNormal::new(median.ln(), sigma).unwrap();

    let mut records: Vec<LabeledRecord> = labels
        .iter()
        .map(|&risk| {
            let sick = risk == 1;
            // Many diagnosed patients present with unremarkable labs; the
            // rest carry the elevated, heavy-tailed values.
            let abnormal = sick && rng.random_bool(0.5);
            let gender = rng.random_bool(0.757) as u8 as f64;
            let age = age.sample(&mut rng).clamp(4.0, 90.0).round();
            let tb = if abnormal {
                lognormal(3.0, 0.9).sample(&mut rng)
            } else {
                lognormal(0.9, 0.35).sample(&mut rng)
            };
            let total_bilirubin = round_to(tb.clamp(0.4, 75.0), 1);
            let direct_bilirubin =
                round_to(total_bilirubin * rng.random_range(0.2..0.55), 1).clamp(0.1, total_bilirubin);
            let alp = if abnormal {
                lognormal(300.0, 0.5).sample(&mut rng)
            } else {
                lognormal(200.0, 0.3).sample(&mut rng)
            };
            let alt = if abnormal {
                lognormal(85.0, 0.9).sample(&mut rng)
            } else if sick {
                lognormal(30.0, 0.5).sample(&mut rng)
            } else {
                lognormal(24.0, 0.45).sample(&mut rng)
            };
            let alt = alt.clamp(10.0, 2000.0).round();
            let ast = (alt * lognormal(1.25, 0.35).sample(&mut rng)).clamp(10.0, 4929.0).round();
            let total_proteins = round_to(proteins.sample(&mut rng).clamp(2.7, 9.6), 1);
            let albumin_mean = if sick { 3.05 } else { 3.35 };
            let albumin = round_to(
                Normal::<f64>::new(albumin_mean, 0.75)
                    .unwrap()
                    .sample(&mut rng)
                    .clamp(0.9, total_proteins - 0.5),
                1,
            );
            let ag_ratio = round_to((albumin / (total_proteins - albumin)).clamp(0.3, 2.8), 2);
            LabeledRecord {
                features: PatientFeatures {
                    age,
                    gender,
                    total_bilirubin,
                    direct_bilirubin,
                    alp: alp.clamp(63.0, 2110.0).round(),
                    alt,
                    ast,
                    total_proteins,
                    albumin,
                    ag_ratio: Some(ag_ratio),
                },
                risk,
            }
        })
        .collect();

    let mut idx: Vec<usize> = (0..N).collect();
    idx.shuffle(&mut rng);
    for &i in idx.iter().take(4) {
        records[i].features.ag_ratio = None;
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_rule_is_exact() {
        let rule: ThresholdRule = "alp>175".parse().unwrap();
        let ds = synth_generate(1000, rule, 0.0, 1).unwrap();
        assert_eq!(ds.len(), 1000);
        for r in ds.records() {
            assert_eq!(r.risk == 1, r.features.alp > 175.0);
            assert!(r.features.bilirubin_consistent());
        }
    }

    #[test]
    fn rejects_half_noise_and_unknown_feature() {
        let rule = ThresholdRule { feature: Feature::Alp, cut: 175.0 };
        assert!(synth_generate(10, rule, 0.5, 1).is_err());
        assert!(synth_generate(10, rule, -0.1, 1).is_err());
        assert!("cholesterol>3".parse::<ThresholdRule>().is_err());
        assert!("alp<3".parse::<ThresholdRule>().is_err());
    }

    #[test]
    fn flip_count_is_binomial() {
        let rule = ThresholdRule { feature: Feature::Alp, cut: 175.0 };
        let ds = synth_generate(1000, rule, 0.1, 7).unwrap();
        let flips = ds
            .records()
            .iter()
            .filter(|r| (r.features.alp > 175.0) as u8 != r.risk)
            .count();
        // Binomial(1000, 0.1): mean 100, sd 9.5
        assert!((70..=130).contains(&flips), "flips = {flips}");
    }

    #[test]
    fn generator_is_deterministic() {
        let rule = ThresholdRule { feature: Feature::Alt, cut: 60.0 };
        assert_eq!(
            synth_generate(50, rule, 0.2, 9).unwrap(),
            synth_generate(50, rule, 0.2, 9).unwrap()
        );
        assert_eq!(ilpd_like(3), ilpd_like(3));
    }

    #[test]
    fn ilpd_like_has_the_uci_shape() {
        let records = ilpd_like(2024);
        assert_eq!(records.len(), 583);
        assert_eq!(records.iter().filter(|r| r.risk == 1).count(), 416);
        assert_eq!(records.iter().filter(|r| r.features.ag_ratio.is_none()).count(), 4);
        assert!(records.iter().all(|r| r.features.bilirubin_consistent()));
        assert!(records.iter().all(|r| r.features.validate(false).is_ok()));
    }
}
