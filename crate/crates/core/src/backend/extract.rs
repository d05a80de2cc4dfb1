//! First-token answer extraction.
//!
//! A backend returns the top alternatives (token string, logprob) at the
//! first generated position. Each vote category is identified by a short
//! prefix of its rendered answer; the category's score is the best logprob
//! among returned tokens that match only that prefix. Softmax restricted to
//! the eight scores gives the probability vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::PromptTemplate;
use crate::record::PredictionRecord;
use crate::survey::Codebook;
use crate::vote::{VoteChoice, N_CATEGORIES};

/// Margin below the smallest returned logprob assigned to unmatched candidates.
pub const FLOOR_MARGIN: f64 = 10.0;

pub const DEFAULT_PREFIX_CHARS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub vote: VoteChoice,
    /// Full assistant answer for this category.
    pub rendering: String,
    pub prefix: String,
}

/// Rendered answers and match prefixes for all eight categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    candidates: Vec<Candidate>,
}

fn normalize_token(token: &str) -> &str {
    token.trim_start_matches(|c: char| c.is_whitespace() || c == '\u{2581}' || c == '\u{120}')
}

impl CandidateSet {
    /// Builds candidates from explicit renderings (canonical order).
    pub fn new(renderings: [String; N_CATEGORIES], prefix_chars: usize) -> Result<Self> {
        if prefix_chars == 0 {
            return Err(Error::Config("candidate prefix length must be positive".into()));
        }
        let candidates: Vec<Candidate> = VoteChoice::ALL
            .into_iter()
            .zip(renderings)
            .map(|(vote, rendering)| {
                let prefix: String = normalize_token(&rendering).chars().take(prefix_chars).collect();
                Candidate {
                    vote,
                    rendering,
                    prefix,
                }
            })
            .collect();
        for a in &candidates {
            if a.prefix.is_empty() {
                return Err(Error::Config(format!("empty answer rendering for {}", a.vote)));
            }
            for b in &candidates {
                if a.vote != b.vote && b.prefix.starts_with(&a.prefix) {
                    return Err(Error::Config(format!(
                        "answer prefixes {:?} ({}) and {:?} ({}) overlap; use a longer prefix or distinct labels",
                        a.prefix, a.vote, b.prefix, b.vote
                    )));
                }
            }
        }
        Ok(CandidateSet { candidates })
    }

    pub fn from_template(template: &PromptTemplate, codebook: &Codebook, prefix_chars: usize) -> Result<Self> {
        let mut renderings: [String; N_CATEGORIES] = Default::default();
        for v in VoteChoice::ALL {
            renderings[v.index()] = template.render_assistant(template.label(codebook, v))?;
        }
        Self::new(renderings, prefix_chars)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter()
    }

    pub fn get(&self, vote: VoteChoice) -> &Candidate {
        &self.candidates[vote.index()]
    }

    /// The single candidate compatible with `token`: the token extends the
    /// candidate's prefix or is itself a prefix of it. Tokens compatible
    /// with several candidates (e.g. one shared leading letter) match none.
    pub fn match_token(&self, token: &str) -> Option<VoteChoice> {
        let t = normalize_token(token);
        if t.is_empty() {
            return None;
        }
        let mut hits = self
            .candidates
            .iter()
            .filter(|c| t.starts_with(&c.prefix) || c.prefix.starts_with(t));
        let first = hits.next()?;
        hits.next().is_none().then_some(first.vote)
    }

    /// Maps a full answer text (e.g. an assistant turn) to its category.
    pub fn match_answer(&self, text: &str) -> Option<VoteChoice> {
        let t = text.trim();
        self.candidates
            .iter()
            .find(|c| c.rendering.trim() == t)
            .map(|c| c.vote)
            .or_else(|| self.match_token(t))
    }
}

/// Softmax over the eight candidate scores.
///
/// `-inf` scores receive probability zero; at least one score must be finite.
pub fn restricted_softmax(scores: &[f64; N_CATEGORIES]) -> [f64; N_CATEGORIES] {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; N_CATEGORIES];
    let mut total = 0.0;
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        total += *o;
    }
    for o in &mut out {
        *o /= total;
    }
    out
}

/// Candidate scores from top tokens; `None` when nothing matched.
pub fn candidate_scores(top: &[(String, f64)], candidates: &CandidateSet) -> Option<[f64; N_CATEGORIES]> {
    let mut scores = [f64::NEG_INFINITY; N_CATEGORIES];
    let mut matched = [false; N_CATEGORIES];
    for (token, logprob) in top {
        if let Some(v) = candidates.match_token(token) {
            let i = v.index();
            if !matched[i] || *logprob > scores[i] {
                scores[i] = *logprob;
                matched[i] = true;
            }
        }
    }
    if !matched.iter().any(|m| *m) || scores.iter().all(|s| *s == f64::NEG_INFINITY) {
        return None;
    }
    let min_returned = top
        .iter()
        .map(|(_, lp)| *lp)
        .filter(|lp| lp.is_finite())
        .fold(f64::INFINITY, f64::min);
    let floor = if min_returned.is_finite() {
        min_returned - FLOOR_MARGIN
    } else {
        f64::NEG_INFINITY
    };
    for (s, m) in scores.iter_mut().zip(matched) {
        if !m {
            *s = floor;
        }
    }
    Some(scores)
}

/// Turns first-position top tokens into a prediction record.
pub fn extract(
    respondent_id: &str,
    top: &[(String, f64)],
    candidates: &CandidateSet,
) -> Result<PredictionRecord> {
    if top.is_empty() {
        return Err(Error::NoLogprobs);
    }
    let mut record = match candidate_scores(top, candidates) {
        Some(scores) => PredictionRecord::from_probs(respondent_id, restricted_softmax(&scores)),
        None => {
            tracing::warn!(respondent_id, "no answer candidate among returned tokens; using uniform distribution");
            let mut r = PredictionRecord::from_probs(respondent_id, [1.0 / N_CATEGORIES as f64; N_CATEGORIES]);
            r.low_confidence = true;
            r
        }
    };
    record.raw_top_tokens = top.to_vec();
    Ok(record)
}

/// Negative log-likelihood of the completion tokens `k+1..=n` (1-based), i.e.
/// the loss with prompt tokens masked out.
pub fn compute_completion_nll(token_logprobs: &[f64], boundary_k: usize) -> Result<f64> {
    if boundary_k > token_logprobs.len() {
        return Err(Error::InvalidArgument(format!(
            "boundary {boundary_k} beyond sequence length {}",
            token_logprobs.len()
        )));
    }
    Ok(-token_logprobs[boundary_k..].iter().sum::<f64>())
}
