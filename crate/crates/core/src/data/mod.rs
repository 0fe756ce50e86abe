//! Patient records: ILPD loading, the canonical dataset file, imputation and
//! train/test splitting.

mod stats;
mod synth;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{Feature, PatientFeatures, NUM_FEATURES};

pub use stats::{quantile_sorted, ColumnStats, FeatureStats};
pub use synth::{ilpd_like, synth_generate, ThresholdRule};

/// Header of the canonical dataset file.
pub const CANONICAL_HEADER: &str =
    "age,gender,total_bilirubin,direct_bilirubin,alp,alt,ast,total_proteins,albumin,ag_ratio,risk";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("no records")]
    NoRecords,
    #[error("row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("row {row}: unknown gender `{text}` (expected Female or Male)")]
    UnknownGender { row: usize, text: String },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid generator settings: {0}")]
    InvalidGenerator(String),
    #[error(transparent)]
    UnknownFeature(#[from] crate::features::UnknownFeature),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// How the UCI selector column maps onto the risk label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPolarity {
    /// Selector 1 (liver patient) is risk 1; selector 2 is risk 0.
    #[default]
    Standard,
    /// Inverted mapping, matching the printed example table.
    Inverted,
}

impl LabelPolarity {
    fn risk_for_selector(self, selector: u8) -> u8 {
        let diagnosed = selector == 1;
        match self {
            LabelPolarity::Standard => diagnosed as u8,
            LabelPolarity::Inverted => (!diagnosed) as u8,
        }
    }
}

impl FromStr for LabelPolarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(LabelPolarity::Standard),
            "inverted" => Ok(LabelPolarity::Inverted),
            other => Err(format!("unknown label polarity `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub features: PatientFeatures,
    /// 1 = risk, 0 = no risk.
    pub risk: u8,
}

/// An ordered set of records together with the statistics of its reference
/// (training) portion.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<LabeledRecord>,
    stats: FeatureStats,
}

impl Dataset {
    /// Builds a dataset whose statistics are computed from its own records.
    pub fn new(records: Vec<LabeledRecord>) -> Result<Dataset, DataError> {
        if records.is_empty() {
            return Err(DataError::NoRecords);
        }
        let rows: Vec<_> = records.iter().map(|r| r.features.to_vector()).collect();
        let stats = FeatureStats::from_rows(rows.iter());
        Ok(Dataset { records, stats })
    }

    /// Builds a dataset that carries statistics from another (training) sample.
    pub fn with_stats(records: Vec<LabeledRecord>, stats: FeatureStats) -> Result<Dataset, DataError> {
        if records.is_empty() {
            return Err(DataError::NoRecords);
        }
        Ok(Dataset { records, stats })
    }

    pub fn records(&self) -> &[LabeledRecord] {
        &self.records
    }

    pub fn stats(&self) -> &FeatureStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Dense feature rows in record order.
    pub fn rows(&self) -> Vec<[f64; NUM_FEATURES]> {
        self.records.iter().map(|r| r.features.to_vector()).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.risk).collect()
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.risk == 1).count()
    }

    pub fn missing_count(&self, f: Feature) -> usize {
        self.records.iter().filter(|r| r.features.get(f).is_none()).count()
    }

    /// Indices of records whose direct bilirubin exceeds total bilirubin.
    pub fn bilirubin_flags(&self) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.features.bilirubin_consistent())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_imputed(&self) -> bool {
        self.records.iter().all(|r| r.features.is_complete())
    }

    /// A new dataset holding the given records (by index), with statistics
    /// recomputed from them.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset, DataError> {
        Dataset::new(indices.iter().map(|&i| self.records[i]).collect())
    }
}

fn parse_number(row: usize, column: &str, text: &str) -> Result<f64, DataError> {
    let v: f64 = text.trim().parse().map_err(|_| DataError::Malformed {
        row,
        reason: format!("non-numeric {column} `{text}`"),
    })?;
    if !v.is_finite() {
        return Err(DataError::Malformed {
            row,
            reason: format!("non-finite {column} `{text}`"),
        });
    }
    Ok(v)
}

fn parse_optional(row: usize, column: &str, text: &str) -> Result<Option<f64>, DataError> {
    if text.trim().is_empty() {
        Ok(None)
    } else {
        parse_number(row, column, text).map(Some)
    }
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

/// Parses the UCI ILPD CSV (no header, 11 columns, gender as text, selector
/// 1 or 2 in the last column).
pub fn parse_ilpd(text: &str, polarity: LabelPolarity) -> Result<Dataset, DataError> {
    let mut records = Vec::new();
    for (row, result) in reader(text).records().enumerate() {
        let rec = result?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 11 {
            return Err(DataError::Malformed {
                row,
                reason: format!("expected 11 fields, found {}", rec.len()),
            });
        }
        let gender = match &rec[1] {
            "Female" => 0.0,
            "Male" => 1.0,
            other => {
                return Err(DataError::UnknownGender {
                    row,
                    text: other.to_string(),
                })
            }
        };
        let selector = match &rec[10] {
            "1" => 1,
            "2" => 2,
            other => {
                return Err(DataError::Malformed {
                    row,
                    reason: format!("selector must be 1 or 2, found `{other}`"),
                })
            }
        };
        let features = PatientFeatures {
            age: parse_number(row, "age", &rec[0])?,
            gender,
            total_bilirubin: parse_number(row, "total_bilirubin", &rec[2])?,
            direct_bilirubin: parse_number(row, "direct_bilirubin", &rec[3])?,
            alp: parse_number(row, "alp", &rec[4])?,
            alt: parse_number(row, "alt", &rec[5])?,
            ast: parse_number(row, "ast", &rec[6])?,
            total_proteins: parse_number(row, "total_proteins", &rec[7])?,
            albumin: parse_number(row, "albumin", &rec[8])?,
            ag_ratio: parse_optional(row, "ag_ratio", &rec[9])?,
        };
        if !features.bilirubin_consistent() {
            log::warn!("row {row}: direct bilirubin exceeds total bilirubin");
        }
        records.push(LabeledRecord {
            features,
            risk: polarity.risk_for_selector(selector),
        });
    }
    Dataset::new(records)
}

/// Loads the UCI ILPD CSV from disk.
pub fn load_ilpd(path: &Path, polarity: LabelPolarity) -> Result<Dataset, DataError> {
    parse_ilpd(&fs::read_to_string(path)?, polarity)
}

/// Renders records in the UCI layout. Risk 1 is written as selector 1.
pub fn to_ilpd_csv(records: &[LabeledRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let f = &r.features;
        let gender = if f.gender == 1.0 { "Male" } else { "Female" };
        let ag = f.ag_ratio.map(|v| v.to_string()).unwrap_or_default();
        let selector = if r.risk == 1 { 1 } else { 2 };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            f.age,
            gender,
            f.total_bilirubin,
            f.direct_bilirubin,
            f.alp,
            f.alt,
            f.ast,
            f.total_proteins,
            f.albumin,
            ag,
            selector
        ));
    }
    out
}

/// Renders the canonical dataset file (header row plus one line per record).
pub fn to_canonical_csv(ds: &Dataset) -> String {
    let mut out = String::with_capacity(ds.len() * 64);
    out.push_str(CANONICAL_HEADER);
    out.push('\n');
    for r in ds.records() {
        for f in Feature::ALL {
            if let Some(v) = r.features.get(f) {
                out.push_str(&v.to_string());
            }
            out.push(',');
        }
        out.push_str(&r.risk.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_canonical(text: &str) -> Result<Dataset, DataError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CANONICAL_HEADER => {}
        Some(_) => {
            return Err(DataError::Malformed {
                row: 0,
                reason: format!("header must be `{CANONICAL_HEADER}`"),
            })
        }
        None => return Err(DataError::NoRecords),
    }
    let body = text.split_once('\n').map(|(_, b)| b).unwrap_or("");
    let mut records = Vec::new();
    for (row, result) in reader(body).records().enumerate() {
        let rec = result?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != NUM_FEATURES + 1 {
            return Err(DataError::Malformed {
                row,
                reason: format!("expected {} fields, found {}", NUM_FEATURES + 1, rec.len()),
            });
        }
        let mut v = [0.0; NUM_FEATURES];
        for f in Feature::ALL.iter().take(NUM_FEATURES - 1) {
            v[f.index()] = parse_number(row, f.name(), &rec[f.index()])?;
        }
        let mut features = PatientFeatures::from_vector(&v);
        features.ag_ratio = parse_optional(row, "ag_ratio", &rec[9])?;
        if features.gender != 0.0 && features.gender != 1.0 {
            return Err(DataError::Malformed {
                row,
                reason: "gender must be 0 or 1".to_string(),
            });
        }
        let risk = match &rec[10] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(DataError::Malformed {
                    row,
                    reason: format!("risk must be 0 or 1, found `{other}`"),
                })
            }
        };
        records.push(LabeledRecord { features, risk });
    }
    Dataset::new(records)
}

pub fn load_canonical(path: &Path) -> Result<Dataset, DataError> {
    parse_canonical(&fs::read_to_string(path)?)
}

pub fn save_canonical(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut file = fs::File::create(path)?;
    file.write_all(to_canonical_csv(ds).as_bytes())?;
    Ok(())
}

/// Loads either file layout: the canonical header selects the canonical
/// parser, anything else is read as UCI ILPD.
pub fn load_any(path: &Path, polarity: LabelPolarity) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path)?;
    if text.starts_with(CANONICAL_HEADER) {
        parse_canonical(&text)
    } else {
        parse_ilpd(&text, polarity)
    }
}

/// Replaces every missing `ag_ratio` with the median of the dataset's
/// reference statistics. Other fields and the statistics are untouched.
pub fn impute(ds: &Dataset) -> Dataset {
    let median = ds.stats.get(Feature::AgRatio).median;
    let records = ds
        .records
        .iter()
        .map(|r| {
            let mut r = *r;
            if r.features.ag_ratio.is_none() {
                r.features.ag_ratio = Some(median);
            }
            r
        })
        .collect();
    Dataset {
        records,
        stats: ds.stats.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 42,
            stratified: true,
        }
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "train_fraction={} seed={} stratified={}",
            self.train_fraction, self.seed, self.stratified
        )
    }
}

/// Per-class training counts: floors of `n_c * fraction`, with the remaining
/// slots (up to the rounded overall total) handed out by largest remainder.
fn stratified_counts(class_sizes: [usize; 2], fraction: f64) -> [usize; 2] {
    let total: usize = class_sizes.iter().sum();
    let target = (total as f64 * fraction).round() as usize;
    let exact = class_sizes.map(|n| n as f64 * fraction);
    let mut counts = exact.map(|e| e.floor() as usize);
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = counts.iter().sum();
    for &c in order.iter().cycle().take(4) {
        if assigned >= target {
            break;
        }
        if counts[c] < class_sizes[c] {
            counts[c] += 1;
            assigned += 1;
        }
    }
    counts
}

/// Splits into (train, test). Train statistics are recomputed from the
/// training records and the test side carries them too. Both sides keep the
/// original record order.
pub fn split(ds: &Dataset, plan: &SplitSpec) -> Result<(Dataset, Dataset), DataError> {
    if !(plan.train_fraction > 0.0 && plan.train_fraction < 1.0) {
        return Err(DataError::InvalidSplit(format!(
            "train_fraction must lie in (0, 1), got {}",
            plan.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut in_train = vec![false; ds.len()];
    if plan.stratified {
        let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (i, r) in ds.records.iter().enumerate() {
            by_class[r.risk as usize].push(i);
        }
        let counts = stratified_counts([by_class[0].len(), by_class[1].len()], plan.train_fraction);
        for (class, idx) in by_class.iter_mut().enumerate() {
            idx.shuffle(&mut rng);
            for &i in idx.iter().take(counts[class]) {
                in_train[i] = true;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        idx.shuffle(&mut rng);
        let n_train = (ds.len() as f64 * plan.train_fraction).round() as usize;
        for &i in idx.iter().take(n_train) {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = ds
        .records
        .iter()
        .zip(&in_train)
        .partition(|(_, &t)| t);
    if train.is_empty() || test.is_empty() {
        return Err(DataError::InvalidSplit(format!(
            "fraction {} leaves an empty side for {} records",
            plan.train_fraction,
            ds.len()
        )));
    }
    let train = Dataset::new(train.into_iter().map(|(r, _)| *r).collect())?;
    let test = Dataset::with_stats(test.into_iter().map(|(r, _)| *r).collect(), train.stats.clone())?;
    Ok((train, test))
}

/// Split followed by imputation of both sides from the training statistics.
pub fn prepare(ds: &Dataset, plan: &SplitSpec) -> Result<(Dataset, Dataset), DataError> {
    let (train, test) = split(ds, plan)?;
    Ok((impute(&train), impute(&test)))
}
