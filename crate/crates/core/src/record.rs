//! The imputer-agnostic prediction record and its CSV form.
//!
//! CSV header: `respondent_id,label,p_1,p_2,p_3,p_4,p_5,p_6,p_7,p_8`, where
//! `label` is a canonical vote label (`CDU/CSU`, `SPD`, `Greens`, `FDP`,
//! `Left`, `AfD`, `small party`, `non-voter`) and `p_1..p_8` are the
//! probabilities in that same order. External models (e.g. gradient-boosted
//! trees trained elsewhere) can be evaluated by writing this format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vote::{argmax, VoteChoice, N_CATEGORIES};

/// Simplex tolerance for probability vectors.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Tolerance accepted on probability vectors read from external CSV files
/// before renormalizing.
pub const EXTERNAL_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub respondent_id: String,
    pub label: VoteChoice,
    pub probs: [f64; N_CATEGORIES],
    /// First-position top tokens as returned by a language model backend.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw_top_tokens: Vec<(String, f64)>,
    /// No candidate matched the returned tokens; `probs` is uniform.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub low_confidence: bool,
}

impl PredictionRecord {
    /// Record whose label is the argmax of `probs` (lowest index on ties).
    pub fn from_probs(respondent_id: impl Into<String>, probs: [f64; N_CATEGORIES]) -> Self {
        let label = VoteChoice::ALL[argmax(&probs)];
        PredictionRecord {
            respondent_id: respondent_id.into(),
            label,
            probs,
            raw_top_tokens: Vec::new(),
            low_confidence: false,
        }
    }

    pub fn is_simplex(&self) -> bool {
        is_simplex(&self.probs, SIMPLEX_TOL)
    }
}

pub fn is_simplex(p: &[f64], tol: f64) -> bool {
    p.iter().all(|x| x.is_finite() && *x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() <= tol
}

pub const CSV_HEADER: [&str; 10] = [
    "respondent_id",
    "label",
    "p_1",
    "p_2",
    "p_3",
    "p_4",
    "p_5",
    "p_6",
    "p_7",
    "p_8",
];

pub fn write_predictions_csv(records: &[PredictionRecord], path: &Path) -> Result<()> {
    let mut csv = csv::Writer::from_path(path)?;
    csv.write_record(CSV_HEADER)?;
    for r in records {
        let mut row = vec![r.respondent_id.clone(), r.label.label().to_string()];
        row.extend(r.probs.iter().map(|p| p.to_string()));
        csv.write_record(&row)?;
    }
    csv.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads prediction CSV files, including ones produced by external tools.
///
/// Probabilities must be non-negative and sum to one within
/// [`EXTERNAL_SUM_TOL`]; vectors off by more than
/// [`SIMPLEX_TOL`] are rescaled to sum to one. The label must be a
/// maximal entry of the probability vector.
pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut csv = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<&str> = csv.headers()?.iter().map(str::trim).collect();
    if header != CSV_HEADER {
        return Err(Error::Config(format!(
            "{}: expected header {:?}, found {:?}",
            path.display(),
            CSV_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in csv.records().enumerate() {
        let row = row?;
        let bad = |msg: String| Error::Config(format!("{} row {}: {msg}", path.display(), i + 1));
        let label: VoteChoice = row[1].parse().map_err(|e| bad(format!("{e}")))?;
        let mut probs = [0.0; N_CATEGORIES];
        for (j, p) in probs.iter_mut().enumerate() {
            *p = row[j + 2]
                .trim()
                .parse()
                .map_err(|e| bad(format!("p_{}: {e}", j + 1)))?;
        }
        if !is_simplex(&probs, EXTERNAL_SUM_TOL) {
            return Err(bad(format!("probabilities {probs:?} are not a distribution")));
        }
        let sum: f64 = probs.iter().sum();
        // already-normalized vectors are kept bit for bit
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            probs.iter_mut().for_each(|p| *p /= sum);
        }
        let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if probs[label.index()] < max {
            return Err(bad(format!("label {label} is not the most probable category")));
        }
        out.push(PredictionRecord {
            respondent_id: row[0].trim().to_string(),
            label,
            probs,
            raw_top_tokens: Vec::new(),
            low_confidence: false,
        });
    }
    Ok(out)
}
