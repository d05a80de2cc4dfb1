//! Append-only JSON-lines log of a run.
//!
//! File paths are relative to the run directory. Entries carry content
//! hashes of the artifacts they reference.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::CiConfig;
use crate::error::{Error, Result};

pub const LEDGER_FILE: &str = "ledger.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    Fit,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum LedgerEntry {
    RunStarted {
        config_sha256: String,
        dataset_sha256: String,
        respondents: usize,
        experiments: Vec<String>,
        imputers: Vec<String>,
        k: usize,
        seed: u64,
        ci: CiConfig,
    },
    Truth {
        file: String,
        sha256: String,
    },
    FoldTrained {
        experiment: String,
        fold: usize,
        imputer: String,
        n_train: usize,
        metadata: Value,
    },
    FinetuneFile {
        experiment: String,
        fold: usize,
        imputer: String,
        file: String,
        sha256: String,
    },
    JobSubmitted {
        experiment: String,
        fold: usize,
        imputer: String,
        job: Value,
    },
    Predictions {
        experiment: String,
        fold: usize,
        imputer: String,
        file: String,
        sha256: String,
        /// Hash of everything the predictions depend on.
        key: String,
        source: PredictionSource,
    },
    StepFailed {
        experiment: String,
        fold: usize,
        imputer: String,
        error: String,
    },
    Artifact {
        kind: String,
        file: String,
        sha256: String,
    },
    RunFinished {
        failures: usize,
    },
}

impl LedgerEntry {
    pub fn file(&self) -> Option<&str> {
        match self {
            LedgerEntry::Truth { file, .. }
            | LedgerEntry::FinetuneFile { file, .. }
            | LedgerEntry::Predictions { file, .. }
            | LedgerEntry::Artifact { file, .. } => Some(file),
            _ => None,
        }
    }
}

pub struct Ledger {
    path: PathBuf,
    file: Mutex<File>,
}

impl Ledger {
    /// Starts a fresh ledger, replacing any previous one.
    pub fn create(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(LEDGER_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Ledger {
            path,
            file: Mutex::new(file),
        })
    }

    /// Opens an existing ledger for appending.
    pub fn open(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(LEDGER_FILE);
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Ledger {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, entry: &LedgerEntry) -> Result<()> {
        let mut line = serde_json::to_string(entry)?;
        line.push('\n');
        let mut f = self.file.lock().expect("ledger lock poisoned");
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        f.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_ledger(run_dir: &Path) -> Result<Vec<LedgerEntry>> {
    let path = run_dir.join(LEDGER_FILE);
    let file = File::open(&path).map_err(|_| {
        Error::Config(format!("{} is not a run directory (no {LEDGER_FILE})", run_dir.display()))
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::Config(format!("{} line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

/// Releases buffered entries in task order, whatever order tasks finish in.
pub(crate) struct OrderedCommitter<'a> {
    ledger: &'a Ledger,
    state: Mutex<(usize, BTreeMap<usize, Vec<LedgerEntry>>)>,
}

impl<'a> OrderedCommitter<'a> {
    pub fn new(ledger: &'a Ledger) -> Self {
        OrderedCommitter {
            ledger,
            state: Mutex::new((0, BTreeMap::new())),
        }
    }

    pub fn commit(&self, index: usize, entries: Vec<LedgerEntry>) -> Result<()> {
        let mut state = self.state.lock().expect("committer lock poisoned");
        state.1.insert(index, entries);
        loop {
            let next = state.0;
            let Some(ready) = state.1.remove(&next) else {
                break;
            };
            for e in &ready {
                self.ledger.append(e)?;
            }
            state.0 += 1;
        }
        Ok(())
    }
}
