use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use sha2::{Digest, Sha256};

use twinscope_core::data::{impute, Dataset};
use twinscope_core::explain::SurrogateConfig;
use twinscope_core::learners::ModelFile;
use twinscope_core::reconcile::{apply_revision, propose_revisions, ReconcileConfig, RuleRevision};
use twinscope_core::rules::{parse_table, DecisionTable, DEFAULT_LIVER_TABLE};
use twinscope_core::twin::{format_timestamp, TwinStore};

use crate::error::ApiError;

/// Startup configuration.
#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub model_path: Option<PathBuf>,
    /// Rule table file. Defaults to `<data_dir>/rules.table`, seeded with the
    /// built-in liver table when absent.
    pub rules_path: Option<PathBuf>,
    pub data_dir: PathBuf,
    /// Reference dataset for PDPs and revision proposals.
    pub background: Option<PathBuf>,
    pub token: Option<String>,
    pub surrogate: SurrogateConfig,
    pub reconcile: ReconcileConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {reason}")]
    Artifact { path: PathBuf, reason: String },
    #[error(transparent)]
    Twin(#[from] twinscope_core::twin::TwinError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StartupError + '_ {
    move |source| StartupError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// First 12 hex digits of the sha256 of the model file bytes.
pub fn model_version(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))[..12].to_string()
}

/// `<revision count>-<first 8 hex digits of the sha256 of the canonical text>`.
pub fn rules_version(table: &DecisionTable) -> String {
    let text = table.to_string();
    format!("{}-{}", table.history.len() + 1, &hex(&Sha256::digest(text.as_bytes()))[..8])
}

/// Default explanation seed for a stored patient.
pub fn patient_seed(patient_id: &str) -> u64 {
    let d = Sha256::digest(patient_id.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    u64::from_be_bytes(b)
}

pub struct LoadedModel {
    pub file: ModelFile,
    pub version: String,
}

/// An immutable rules generation; replaced wholesale on acceptance.
pub struct RulesSnapshot {
    pub table: DecisionTable,
    pub version: String,
    pub text: String,
}

impl RulesSnapshot {
    pub fn new(table: DecisionTable) -> RulesSnapshot {
        RulesSnapshot {
            version: rules_version(&table),
            text: table.to_string(),
            table,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
    /// Accepted, but the cell had changed since the proposal.
    Stale,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReviewRecord {
    pub id: String,
    pub verdict: Verdict,
    pub reviewer: String,
    pub reviewed_at: String,
    pub rules_version_before: String,
    pub rules_version_after: String,
    pub revision: RuleRevision,
}

#[derive(Default)]
pub struct RevisionBook {
    pub pending: BTreeMap<u64, RuleRevision>,
    pub reviewed: BTreeMap<u64, ReviewRecord>,
}

pub fn revision_id(n: u64) -> String {
    format!("r{n}")
}

pub fn parse_revision_id(id: &str) -> Option<u64> {
    id.strip_prefix('r')?.parse().ok()
}

pub struct AppState {
    pub model: Option<LoadedModel>,
    pub rules: RwLock<Arc<RulesSnapshot>>,
    pub rules_path: PathBuf,
    pub twins: RwLock<TwinStore>,
    pub revisions: Mutex<RevisionBook>,
    pub background: Option<Dataset>,
    pub token: Option<String>,
    pub surrogate: SurrogateConfig,
    pub reconcile: ReconcileConfig,
    pub data_dir: PathBuf,
}

/// In-memory pieces for [`AppState::from_parts`].
pub struct Parts {
    pub model: Option<(ModelFile, String)>,
    pub table: DecisionTable,
    pub rules_path: PathBuf,
    pub data_dir: PathBuf,
    pub background: Option<Dataset>,
    pub token: Option<String>,
    pub surrogate: SurrogateConfig,
    pub reconcile: ReconcileConfig,
}

impl AppState {
    pub fn load(cfg: &ServiceConfig) -> Result<AppState, StartupError> {
        fs::create_dir_all(&cfg.data_dir).map_err(io_err(&cfg.data_dir))?;
        let model = match &cfg.model_path {
            Some(path) => {
                let bytes = fs::read(path).map_err(io_err(path))?;
                let text = String::from_utf8(bytes.clone()).map_err(|e| StartupError::Artifact {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
                let file = ModelFile::from_json(&text).map_err(|e| StartupError::Artifact {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
                Some((file, model_version(&bytes)))
            }
            None => None,
        };
        let rules_path = match &cfg.rules_path {
            Some(p) => p.clone(),
            None => {
                let p = cfg.data_dir.join("rules.table");
                if !p.exists() {
                    write_atomic(&p, DEFAULT_LIVER_TABLE).map_err(io_err(&p))?;
                }
                p
            }
        };
        let text = fs::read_to_string(&rules_path).map_err(io_err(&rules_path))?;
        let table = parse_table(&text).map_err(|e| StartupError::Artifact {
            path: rules_path.clone(),
            reason: e.to_string(),
        })?;
        let background = match &cfg.background {
            Some(path) => {
                let ds = twinscope_core::data::load_any(path, Default::default()).map_err(|e| {
                    StartupError::Artifact {
                        path: path.clone(),
                        reason: e.to_string(),
                    }
                })?;
                Some(impute(&ds))
            }
            None => None,
        };
        AppState::from_parts(Parts {
            model,
            table,
            rules_path,
            data_dir: cfg.data_dir.clone(),
            background,
            token: cfg.token.clone(),
            surrogate: cfg.surrogate,
            reconcile: cfg.reconcile,
        })
    }

    /// Opens the twin store and proposes revisions when a model and a
    /// background dataset are both present.
    pub fn from_parts(parts: Parts) -> Result<AppState, StartupError> {
        let twins = TwinStore::open(&parts.data_dir)?;
        let background = parts.background.map(|ds| if ds.is_imputed() { ds } else { impute(&ds) });
        let mut book = RevisionBook::default();
        if let (Some((model, _)), Some(ds)) = (&parts.model, &background) {
            match propose_revisions(&parts.table, &model.model, ds, &parts.reconcile) {
                Ok(revs) => {
                    log::info!("{} rule revision(s) proposed", revs.len());
                    book.pending = revs.into_iter().enumerate().map(|(i, r)| (i as u64 + 1, r)).collect();
                }
                Err(e) => log::warn!("no revisions proposed: {e}"),
            }
        }
        Ok(AppState {
            model: parts.model.map(|(file, version)| LoadedModel { file, version }),
            rules: RwLock::new(Arc::new(RulesSnapshot::new(parts.table))),
            rules_path: parts.rules_path,
            twins: RwLock::new(twins),
            revisions: Mutex::new(book),
            background,
            token: parts.token,
            surrogate: parts.surrogate,
            reconcile: parts.reconcile,
            data_dir: parts.data_dir,
        })
    }

    pub fn rules(&self) -> Arc<RulesSnapshot> {
        self.rules.read().clone()
    }

    pub fn model(&self) -> Result<&LoadedModel, ApiError> {
        self.model.as_ref().ok_or_else(|| ApiError::unavailable("no model loaded"))
    }

    pub fn model_version(&self) -> Option<&str> {
        self.model.as_ref().map(|m| m.version.as_str())
    }

    /// Applies or rejects a pending revision. Reviews are serialized by the
    /// book's lock, and the rules file is replaced atomically before the new
    /// generation becomes visible.
    pub fn review(&self, id: &str, verdict: Verdict, reviewer: &str, now: DateTime<Utc>) -> Result<ReviewRecord, ApiError> {
        let n = parse_revision_id(id).ok_or_else(|| ApiError::not_found(format!("revision `{id}` not found")))?;
        let mut book = self.revisions.lock();
        if let Some(done) = book.reviewed.get(&n) {
            return Err(ApiError::conflict(format!(
                "revision `{id}` was already reviewed ({:?})",
                done.verdict
            )));
        }
        let rev = book
            .pending
            .get(&n)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("revision `{id}` not found")))?;
        let before = self.rules();
        let mut record = ReviewRecord {
            id: id.to_string(),
            verdict,
            reviewer: reviewer.to_string(),
            reviewed_at: format_timestamp(&now),
            rules_version_before: before.version.clone(),
            rules_version_after: before.version.clone(),
            revision: rev.clone(),
        };
        let mut outcome = Ok(());
        if verdict == Verdict::Accept {
            match apply_revision(&before.table, &rev) {
                Ok(next) => {
                    let snap = RulesSnapshot::new(next);
                    write_atomic(&self.rules_path, &snap.text)
                        .map_err(|e| ApiError::internal(format!("{}: {e}", self.rules_path.display())))?;
                    record.rules_version_after = snap.version.clone();
                    *self.rules.write() = Arc::new(snap);
                }
                Err(e) => {
                    record.verdict = Verdict::Stale;
                    outcome = Err(ApiError::from(e));
                }
            }
        }
        if let Err(e) = append_review(&self.data_dir.join("reviews.jsonl"), &record) {
            log::error!("could not append review log: {e}");
        }
        book.pending.remove(&n);
        book.reviewed.insert(n, record.clone());
        outcome.map(|_| record)
    }
}

/// Writes `text` to a hidden sibling, syncs it, and renames it over `path`.
pub fn write_atomic(path: &Path, text: &str) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

fn append_review(path: &Path, record: &ReviewRecord) -> io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(record).map_err(io::Error::other)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.sync_data()
}
