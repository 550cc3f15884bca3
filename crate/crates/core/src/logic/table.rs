use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{AtomicFormula, Taxonomy};
use crate::FORMAT_VERSION;

/// Valuation of one atomic formula for one policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub value: bool,
    pub evidence: Vec<usize>,
    pub raw_response_digest: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileMeta {
    pub backend_id: String,
    pub embedder_id: String,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

/// A policy's logical representation: atomic id -> valuation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthTable {
    pub policy_id: String,
    pub taxonomy_fingerprint: String,
    pub meta: CompileMeta,
    pub entries: BTreeMap<String, Entry>,
}

#[derive(Debug, Error)]
pub enum TableFileError {
    #[error("truth table parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported truth table format_version {0}")]
    Version(u32),
    #[error("duplicate entry id {0:?}")]
    DuplicateId(String),
    #[error("invalid entry id {id:?}: {reason}")]
    InvalidId { id: String, reason: String },
    #[error("table was compiled against taxonomy {table}, expected {expected}")]
    FingerprintMismatch { table: String, expected: String },
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    format_version: u32,
    policy_id: String,
    taxonomy_fingerprint: String,
    #[serde(flatten)]
    meta: CompileMeta,
    entries: Vec<FileEntry>,
}

#[derive(Serialize, Deserialize)]
struct FileEntry {
    id: String,
    #[serde(flatten)]
    entry: Entry,
}

impl TruthTable {
    pub fn new(policy_id: &str, taxonomy_fingerprint: &str, meta: CompileMeta) -> Self {
        Self {
            policy_id: policy_id.to_string(),
            taxonomy_fingerprint: taxonomy_fingerprint.to_string(),
            meta,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, entry: Entry) {
        self.entries.insert(id.into(), entry);
    }

    pub fn value(&self, id: &str) -> Option<bool> {
        self.entries.get(id).map(|e| e.value)
    }

    /// Atomics parsed back from the entry ids.
    pub fn atomics(&self) -> Vec<AtomicFormula> {
        self.entries
            .keys()
            .map(|id| AtomicFormula::parse_id(id).expect("entry ids are validated"))
            .collect()
    }

    /// Serializes with entries sorted by id.
    pub fn to_json(&self) -> String {
        let file = TableFile {
            format_version: FORMAT_VERSION,
            policy_id: self.policy_id.clone(),
            taxonomy_fingerprint: self.taxonomy_fingerprint.clone(),
            meta: self.meta.clone(),
            entries: self
                .entries
                .iter()
                .map(|(id, e)| FileEntry {
                    id: id.clone(),
                    entry: e.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("table serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, TableFileError> {
        let file: TableFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(TableFileError::Version(file.format_version));
        }
        let mut entries = BTreeMap::new();
        for e in file.entries {
            AtomicFormula::parse_id(&e.id).map_err(|err| TableFileError::InvalidId {
                id: e.id.clone(),
                reason: err.to_string(),
            })?;
            if entries.insert(e.id.clone(), e.entry).is_some() {
                return Err(TableFileError::DuplicateId(e.id));
            }
        }
        Ok(Self {
            policy_id: file.policy_id,
            taxonomy_fingerprint: file.taxonomy_fingerprint,
            meta: file.meta,
            entries,
        })
    }

    /// Checks the fingerprint and that every id is canonical under `taxonomy`.
    pub fn validate_against(&self, taxonomy: &Taxonomy) -> Result<(), TableFileError> {
        if self.taxonomy_fingerprint != taxonomy.fingerprint() {
            return Err(TableFileError::FingerprintMismatch {
                table: self.taxonomy_fingerprint.clone(),
                expected: taxonomy.fingerprint().to_string(),
            });
        }
        for id in self.entries.keys() {
            let invalid = |reason: String| TableFileError::InvalidId {
                id: id.clone(),
                reason,
            };
            let parsed = AtomicFormula::parse_id(id).map_err(|e| invalid(e.to_string()))?;
            let resolved = taxonomy
                .resolve_atomic(&parsed)
                .map_err(|e| invalid(e.to_string()))?;
            if resolved.id() != *id {
                return Err(invalid("bindings not in taxonomy order".into()));
            }
        }
        Ok(())
    }
}
