//! The ten-field patient feature vector consumed by every rule and model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of model input features.
pub const NUM_FEATURES: usize = 10;

/// One column of [`PatientFeatures`], in canonical (model input) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Age,
    Gender,
    TotalBilirubin,
    DirectBilirubin,
    Alp,
    Alt,
    Ast,
    TotalProteins,
    Albumin,
    AgRatio,
}

impl Feature {
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::Age,
        Feature::Gender,
        Feature::TotalBilirubin,
        Feature::DirectBilirubin,
        Feature::Alp,
        Feature::Alt,
        Feature::Ast,
        Feature::TotalProteins,
        Feature::Albumin,
        Feature::AgRatio,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Feature> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Age => "age",
            Feature::Gender => "gender",
            Feature::TotalBilirubin => "total_bilirubin",
            Feature::DirectBilirubin => "direct_bilirubin",
            Feature::Alp => "alp",
            Feature::Alt => "alt",
            Feature::Ast => "ast",
            Feature::TotalProteins => "total_proteins",
            Feature::Albumin => "albumin",
            Feature::AgRatio => "ag_ratio",
        }
    }

    /// Binary features are resampled and gridded over their support {0, 1}.
    pub fn is_binary(self) -> bool {
        self == Feature::Gender
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown feature `{0}`")]
pub struct UnknownFeature(pub String);

impl FromStr for Feature {
    type Err = UnknownFeature;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Feature::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            // the clinical aliases used in the ILPD documentation
            .or(match s {
                "sgpt" => Some(Feature::Alt),
                "sgot" => Some(Feature::Ast),
                _ => None,
            })
            .ok_or_else(|| UnknownFeature(s.to_string()))
    }
}

/// Lab and demographic values for one patient.
///
/// Gender is encoded 0 = female, 1 = male. `ag_ratio` is the only field that
/// can be missing, and only in raw records before imputation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientFeatures {
    pub age: f64,
    pub gender: f64,
    pub total_bilirubin: f64,
    pub direct_bilirubin: f64,
    pub alp: f64,
    pub alt: f64,
    pub ast: f64,
    pub total_proteins: f64,
    pub albumin: f64,
    pub ag_ratio: Option<f64>,
}

/// A field-level validation failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid value for {feature}: {reason}")]
pub struct InvalidFeature {
    pub feature: Feature,
    pub reason: String,
}

impl PatientFeatures {
    /// Builds a complete record from a dense vector in [`Feature::ALL`] order.
    pub fn from_vector(v: &[f64; NUM_FEATURES]) -> Self {
        PatientFeatures {
            age: v[0],
            gender: v[1],
            total_bilirubin: v[2],
            direct_bilirubin: v[3],
            alp: v[4],
            alt: v[5],
            ast: v[6],
            total_proteins: v[7],
            albumin: v[8],
            ag_ratio: Some(v[9]),
        }
    }

    pub fn get(&self, f: Feature) -> Option<f64> {
        Some(match f {
            Feature::Age => self.age,
            Feature::Gender => self.gender,
            Feature::TotalBilirubin => self.total_bilirubin,
            Feature::DirectBilirubin => self.direct_bilirubin,
            Feature::Alp => self.alp,
            Feature::Alt => self.alt,
            Feature::Ast => self.ast,
            Feature::TotalProteins => self.total_proteins,
            Feature::Albumin => self.albumin,
            Feature::AgRatio => return self.ag_ratio,
        })
    }

    pub fn set(&mut self, f: Feature, value: f64) {
        match f {
            Feature::Age => self.age = value,
            Feature::Gender => self.gender = value,
            Feature::TotalBilirubin => self.total_bilirubin = value,
            Feature::DirectBilirubin => self.direct_bilirubin = value,
            Feature::Alp => self.alp = value,
            Feature::Alt => self.alt = value,
            Feature::Ast => self.ast = value,
            Feature::TotalProteins => self.total_proteins = value,
            Feature::Albumin => self.albumin = value,
            Feature::AgRatio => self.ag_ratio = Some(value),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.ag_ratio.is_some()
    }

    /// Dense model input. A missing `ag_ratio` becomes NaN; models require
    /// imputed input.
    pub fn to_vector(&self) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        for f in Feature::ALL {
            out[f.index()] = self.get(f).unwrap_or(f64::NAN);
        }
        out
    }

    /// `direct_bilirubin <= total_bilirubin`; violations are flagged on load,
    /// never rejected.
    pub fn bilirubin_consistent(&self) -> bool {
        self.direct_bilirubin <= self.total_bilirubin
    }

    /// Checks that a single value is acceptable for `f`.
    pub fn check_value(f: Feature, value: f64) -> Result<(), InvalidFeature> {
        let fail = |reason: &str| {
            Err(InvalidFeature {
                feature: f,
                reason: reason.to_string(),
            })
        };
        if !value.is_finite() {
            return fail("value must be finite");
        }
        if value < 0.0 {
            return fail("value must be non-negative");
        }
        if f == Feature::Gender && value != 0.0 && value != 1.0 {
            return fail("gender must be encoded 0 (female) or 1 (male)");
        }
        Ok(())
    }

    /// Validates every present field; `require_complete` also rejects a
    /// missing `ag_ratio`.
    pub fn validate(&self, require_complete: bool) -> Result<(), InvalidFeature> {
        for f in Feature::ALL {
            match self.get(f) {
                Some(v) => Self::check_value(f, v)?,
                None if require_complete => {
                    return Err(InvalidFeature {
                        feature: f,
                        reason: "value is missing".to_string(),
                    })
                }
                None => {}
            }
        }
        Ok(())
    }
}
