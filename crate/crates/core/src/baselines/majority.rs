//! Constant majority-class classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::PredictionRecord;
use crate::survey::Dataset;
use crate::vote::{argmax, VoteChoice, N_CATEGORIES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityModel {
    pub label: VoteChoice,
    /// Training label frequencies.
    pub probs: [f64; N_CATEGORIES],
}

/// Modal training label (lowest canonical index on ties) with the training
/// frequencies as its probability vector.
pub fn fit_majority(train: &Dataset) -> Result<MajorityModel> {
    let counts = train.class_counts();
    let n = counts.total();
    if n == 0 {
        return Err(Error::InvalidArgument("majority baseline needs labeled training data".into()));
    }
    let probs = counts.0.map(|c| c as f64 / n as f64);
    Ok(MajorityModel {
        label: VoteChoice::ALL[argmax(&probs)],
        probs,
    })
}

impl MajorityModel {
    pub fn predict(&self, ids: impl IntoIterator<Item = impl Into<String>>) -> Vec<PredictionRecord> {
        ids.into_iter()
            .map(|id| PredictionRecord {
                respondent_id: id.into(),
                label: self.label,
                probs: self.probs,
                raw_top_tokens: Vec::new(),
                low_confidence: false,
            })
            .collect()
    }
}
