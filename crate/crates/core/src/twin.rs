//! Per-patient digital twins: an append-only observation log per patient
//! and a snapshot folded from it.
//!
//! Each patient has one NDJSON file named after the patient id. Lines are
//! `{feature, value, observed_at, source}` and are never rewritten. A
//! trailing segment without a newline is a torn write and is cut off on
//! reload; any other unparsable line is corruption.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, DurationRound, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::features::{Feature, InvalidFeature, PatientFeatures};

mod timestamp {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_timestamp(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let text = String::deserialize(d)?;
        super::parse_timestamp(&text).map_err(serde::de::Error::custom)
    }
}

/// RFC 3339, UTC, millisecond precision.
pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
}

/// Parses any RFC 3339 timestamp and truncates it to milliseconds in UTC.
pub fn parse_timestamp(text: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(text)
        .map(|t| truncate_ms(t.with_timezone(&Utc)))
        .map_err(|e| format!("invalid timestamp `{text}`: {e}"))
}

fn truncate_ms(t: DateTime<Utc>) -> DateTime<Utc> {
    t.duration_trunc(TimeDelta::milliseconds(1)).unwrap_or(t)
}

/// One persisted log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub feature: Feature,
    pub value: f64,
    #[serde(with = "timestamp")]
    pub observed_at: DateTime<Utc>,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub patient_id: String,
    pub feature: Feature,
    pub value: f64,
    #[serde(with = "timestamp")]
    pub observed_at: DateTime<Utc>,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinState {
    pub patient_id: String,
    pub snapshot: PatientFeatures,
    pub log_length: usize,
    #[serde(with = "timestamp")]
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    #[serde(with = "timestamp")]
    pub observed_at: DateTime<Utc>,
    pub value: f64,
    pub source: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TwinError {
    #[error("invalid patient id `{0}`: use 1-64 characters from [A-Za-z0-9_-]")]
    InvalidId(String),
    #[error("patient `{0}` already exists")]
    Conflict(String),
    #[error("patient `{0}` not found")]
    NotFound(String),
    #[error(transparent)]
    Invalid(#[from] InvalidFeature),
    #[error("{path}: corrupt record at byte offset {offset}: {reason}")]
    Corrupt { path: PathBuf, offset: u64, reason: String },
    #[error("{path}: log lacks a baseline value for {missing}")]
    IncompleteBaseline { path: PathBuf, missing: Feature },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TwinError + '_ {
    move |source| TwinError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn valid_patient_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

/// Folds a log in ingestion order: per feature, the record with the latest
/// `observed_at` wins, later ingestion breaking ties. Errs with the first
/// feature that never appears.
pub fn fold_log(records: &[LogRecord]) -> Result<(PatientFeatures, DateTime<Utc>), Feature> {
    let mut winners: [Option<&LogRecord>; crate::features::NUM_FEATURES] = Default::default();
    for rec in records {
        let slot = &mut winners[rec.feature.index()];
        if slot.is_none_or(|w| rec.observed_at >= w.observed_at) {
            *slot = Some(rec);
        }
    }
    let mut v = [0.0; crate::features::NUM_FEATURES];
    let mut updated = DateTime::<Utc>::MIN_UTC;
    for f in Feature::ALL {
        let w = winners[f.index()].ok_or(f)?;
        v[f.index()] = w.value;
        updated = updated.max(w.observed_at);
    }
    Ok((PatientFeatures::from_vector(&v), updated))
}

struct Twin {
    log: Vec<LogRecord>,
    state: TwinState,
    file: File,
}

/// Single-writer store; callers serialize mutations (`&mut self`).
pub struct TwinStore {
    dir: PathBuf,
    twins: BTreeMap<String, Twin>,
    truncated: Vec<PathBuf>,
}

impl std::fmt::Debug for TwinStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TwinStore")
            .field("dir", &self.dir)
            .field("patients", &self.twins.len())
            .finish()
    }
}

impl TwinStore {
    /// Opens `dir`, creating it if needed, and replays every log in it.
    pub fn open(dir: &Path) -> Result<TwinStore, TwinError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        TwinStore::reload(dir)
    }

    /// Replays every patient log in an existing directory.
    pub fn reload(dir: &Path) -> Result<TwinStore, TwinError> {
        let mut twins = BTreeMap::new();
        let mut truncated = Vec::new();
        let mut names = Vec::new();
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let entry = entry.map_err(io_err(dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if valid_patient_id(&name) && entry.file_type().map_err(io_err(dir))?.is_file() {
                names.push(name);
            }
        }
        names.sort();
        for id in names {
            let path = dir.join(&id);
            let (log, was_torn) = read_log(&path)?;
            if was_torn {
                truncated.push(path.clone());
            }
            let (snapshot, updated_at) =
                fold_log(&log).map_err(|missing| TwinError::IncompleteBaseline { path: path.clone(), missing })?;
            let file = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
            let state = TwinState {
                patient_id: id.clone(),
                snapshot,
                log_length: log.len(),
                updated_at,
            };
            twins.insert(id, Twin { log, state, file });
        }
        Ok(TwinStore {
            dir: dir.to_path_buf(),
            twins,
            truncated,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Logs whose torn trailing record was cut off during the last reload.
    pub fn truncated_logs(&self) -> &[PathBuf] {
        &self.truncated
    }

    pub fn len(&self) -> usize {
        self.twins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.twins.is_empty()
    }

    pub fn patient_ids(&self) -> impl Iterator<Item = &str> {
        self.twins.keys().map(String::as_str)
    }

    pub fn create_twin(
        &mut self,
        patient_id: &str,
        baseline: &PatientFeatures,
        observed_at: DateTime<Utc>,
        source: &str,
    ) -> Result<TwinState, TwinError> {
        if !valid_patient_id(patient_id) {
            return Err(TwinError::InvalidId(patient_id.to_string()));
        }
        let path = self.dir.join(patient_id);
        if self.twins.contains_key(patient_id) || path.exists() {
            return Err(TwinError::Conflict(patient_id.to_string()));
        }
        baseline.validate(true)?;
        let observed_at = truncate_ms(observed_at);
        let log: Vec<LogRecord> = Feature::ALL
            .iter()
            .map(|&f| LogRecord {
                feature: f,
                value: baseline.get(f).expect("validated complete"),
                observed_at,
                source: source.to_string(),
            })
            .collect();
        let mut body = String::new();
        for rec in &log {
            body.push_str(&serde_json::to_string(rec).expect("log records serialize"));
            body.push('\n');
        }
        // Written whole under a hidden name, then renamed, so a crash never
        // leaves a partial baseline behind.
        let tmp = self.dir.join(format!(".{patient_id}.tmp"));
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(body.as_bytes()).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        let file = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        let (snapshot, updated_at) = fold_log(&log).expect("baseline covers every feature");
        let state = TwinState {
            patient_id: patient_id.to_string(),
            snapshot,
            log_length: log.len(),
            updated_at,
        };
        self.twins.insert(patient_id.to_string(), Twin { log, state: state.clone(), file });
        Ok(state)
    }

    /// Appends and syncs `obs` before updating the in-memory state.
    pub fn record_observation(&mut self, obs: &Observation) -> Result<TwinState, TwinError> {
        let twin = self
            .twins
            .get_mut(&obs.patient_id)
            .ok_or_else(|| TwinError::NotFound(obs.patient_id.clone()))?;
        PatientFeatures::check_value(obs.feature, obs.value)?;
        let rec = LogRecord {
            feature: obs.feature,
            value: obs.value,
            observed_at: truncate_ms(obs.observed_at),
            source: obs.source.clone(),
        };
        let mut line = serde_json::to_string(&rec).expect("log records serialize");
        line.push('\n');
        let path = self.dir.join(&obs.patient_id);
        twin.file.write_all(line.as_bytes()).map_err(io_err(&path))?;
        twin.file.sync_data().map_err(io_err(&path))?;

        let current = twin
            .log
            .iter()
            .filter(|r| r.feature == rec.feature)
            .map(|r| r.observed_at)
            .max()
            .expect("baseline present");
        if rec.observed_at >= current {
            twin.state.snapshot.set(rec.feature, rec.value);
        }
        twin.state.updated_at = twin.state.updated_at.max(rec.observed_at);
        twin.log.push(rec);
        twin.state.log_length = twin.log.len();
        Ok(twin.state.clone())
    }

    fn twin(&self, patient_id: &str) -> Result<&Twin, TwinError> {
        self.twins
            .get(patient_id)
            .ok_or_else(|| TwinError::NotFound(patient_id.to_string()))
    }

    pub fn state(&self, patient_id: &str) -> Result<&TwinState, TwinError> {
        Ok(&self.twin(patient_id)?.state)
    }

    pub fn states(&self) -> impl Iterator<Item = &TwinState> {
        self.twins.values().map(|t| &t.state)
    }

    pub fn snapshot_features(&self, patient_id: &str) -> Result<PatientFeatures, TwinError> {
        Ok(self.twin(patient_id)?.state.snapshot)
    }

    pub fn log(&self, patient_id: &str) -> Result<&[LogRecord], TwinError> {
        Ok(&self.twin(patient_id)?.log)
    }

    /// Every observation of `feature`, ascending by `observed_at`, ties in
    /// ingestion order.
    pub fn history(&self, patient_id: &str, feature: Feature) -> Result<Vec<HistoryPoint>, TwinError> {
        let mut points: Vec<HistoryPoint> = self
            .twin(patient_id)?
            .log
            .iter()
            .filter(|r| r.feature == feature)
            .map(|r| HistoryPoint {
                observed_at: r.observed_at,
                value: r.value,
                source: r.source.clone(),
            })
            .collect();
        points.sort_by_key(|p| p.observed_at);
        Ok(points)
    }
}

/// Reads a log, cutting off a torn trailing segment. Returns the records
/// and whether a cut happened.
fn read_log(path: &Path) -> Result<(Vec<LogRecord>, bool), TwinError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let torn = complete < bytes.len();
    if torn {
        log::warn!(
            "{}: dropping torn trailing record ({} bytes at offset {complete})",
            path.display(),
            bytes.len() - complete
        );
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(complete as u64).map_err(io_err(path))?;
        f.sync_all().map_err(io_err(path))?;
    }
    let mut records = Vec::new();
    let mut offset = 0usize;
    for line in bytes[..complete].split_inclusive(|&b| b == b'\n') {
        let body = &line[..line.len() - 1];
        let corrupt = |reason: String| TwinError::Corrupt {
            path: path.to_path_buf(),
            offset: offset as u64,
            reason,
        };
        if !body.iter().all(u8::is_ascii_whitespace) {
            let rec: LogRecord = serde_json::from_slice(body).map_err(|e| corrupt(e.to_string()))?;
            PatientFeatures::check_value(rec.feature, rec.value).map_err(|e| corrupt(e.to_string()))?;
            records.push(rec);
        }
        offset += line.len();
    }
    Ok((records, torn))
}
