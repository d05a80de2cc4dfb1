//! Individual-level and distribution-level accuracy.

use std::collections::{BTreeMap, HashSet};
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{is_simplex, PredictionRecord, SIMPLEX_TOL};
use crate::vote::{VoteChoice, N_CATEGORIES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub per_class: Vec<f64>,
}

/// Macro F1 over `k` classes given label indices.
///
/// Every class counts towards the mean, including ones that never occur;
/// a class whose precision and recall are both zero (or undefined) has F1 = 0.
pub fn macro_f1_indices(predicted: &[usize], truth: &[usize], k: usize) -> Result<F1Scores> {
    if predicted.len() != truth.len() {
        return Err(Error::IdMismatch(format!(
            "{} predictions for {} truth labels",
            predicted.len(),
            truth.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("macro F1 needs at least one class".into()));
    }
    let mut tp = vec![0usize; k];
    let mut n_pred = vec![0usize; k];
    let mut n_true = vec![0usize; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= k || t >= k {
            return Err(Error::InvalidArgument(format!("label index out of range for k={k}")));
        }
        n_pred[p] += 1;
        n_true[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    // F1 = 2TP / (|pred| + |true|), which is 0 whenever precision + recall = 0
    let per_class: Vec<f64> = (0..k)
        .map(|c| {
            let denom = n_pred[c] + n_true[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    Ok(F1Scores {
        macro_f1: per_class.iter().sum::<f64>() / k as f64,
        per_class,
    })
}

/// Macro F1 over all eight vote categories.
pub fn macro_f1(preds: &[PredictionRecord], truth: &BTreeMap<String, VoteChoice>) -> Result<F1Scores> {
    let mut seen = HashSet::new();
    let mut p = Vec::with_capacity(preds.len());
    let mut t = Vec::with_capacity(preds.len());
    for r in preds {
        if !seen.insert(r.respondent_id.as_str()) {
            return Err(Error::IdMismatch(format!("duplicate prediction for {:?}", r.respondent_id)));
        }
        let truth = truth
            .get(&r.respondent_id)
            .ok_or_else(|| Error::IdMismatch(format!("no truth label for {:?}", r.respondent_id)))?;
        p.push(r.label.index());
        t.push(truth.index());
    }
    macro_f1_indices(&p, &t, N_CATEGORIES)
}

/// Shares of the eight vote categories, summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteShareVector(pub [f64; N_CATEGORIES]);

impl VoteShareVector {
    /// Validates and wraps a probability vector.
    pub fn new(shares: [f64; N_CATEGORIES]) -> Result<Self> {
        if !is_simplex(&shares, SIMPLEX_TOL) {
            return Err(Error::InvalidArgument(format!("{shares:?} is not a distribution")));
        }
        Ok(VoteShareVector(shares))
    }

    /// Scales non-negative weights (e.g. rounded percentages) to sum to one.
    pub fn normalized(weights: [f64; N_CATEGORIES]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!("cannot normalize {weights:?}")));
        }
        Ok(VoteShareVector(weights.map(|w| w / total)))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, vote: VoteChoice) -> f64 {
        self.0[vote.index()]
    }
}

impl Index<VoteChoice> for VoteShareVector {
    type Output = f64;

    fn index(&self, vote: VoteChoice) -> &f64 {
        &self.0[vote.index()]
    }
}

/// Component-wise mean of predicted probability vectors (not of labels).
pub fn aggregated_vote_share(preds: &[PredictionRecord]) -> Result<VoteShareVector> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no predictions to aggregate".into()));
    }
    let mut sum = [0.0; N_CATEGORIES];
    for r in preds {
        for (s, p) in sum.iter_mut().zip(&r.probs) {
            *s += p;
        }
    }
    let n = preds.len() as f64;
    Ok(VoteShareVector(sum.map(|s| s / n)))
}

/// Empirical frequencies of the true labels.
pub fn true_vote_share(truth: &[VoteChoice]) -> Result<VoteShareVector> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no truth labels".into()));
    }
    let mut counts = [0.0; N_CATEGORIES];
    for v in truth {
        counts[v.index()] += 1.0;
    }
    let n = truth.len() as f64;
    Ok(VoteShareVector(counts.map(|c| c / n)))
}

/// Total variation distance: half the L1 distance.
pub fn tvd(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "tvd of vectors with different lengths");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Metrics of one imputer on one test fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub n: usize,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub predicted_share: VoteShareVector,
    pub true_share: VoteShareVector,
    pub tvd: f64,
}

/// Scores a fold's predictions; every prediction needs a truth label.
pub fn evaluate_fold(preds: &[PredictionRecord], truth: &BTreeMap<String, VoteChoice>) -> Result<FoldMetrics> {
    let f1 = macro_f1(preds, truth)?;
    let labels: Vec<VoteChoice> = preds.iter().map(|r| truth[&r.respondent_id]).collect();
    let predicted_share = aggregated_vote_share(preds)?;
    let true_share = true_vote_share(&labels)?;
    Ok(FoldMetrics {
        n: preds.len(),
        macro_f1: f1.macro_f1,
        per_class_f1: f1.per_class,
        tvd: tvd(&predicted_share.0, &true_share.0),
        predicted_share,
        true_share,
    })
}
