//! The eight-category vote-choice target.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of vote-choice categories.
pub const N_CATEGORIES: usize = 8;

/// Reported vote choice after dropping "invalid vote" and "don't know".
///
/// The declaration order is the canonical order used everywhere: probability
/// vectors, CSV columns and argmax tie-breaking (lowest index wins).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VoteChoice {
    #[serde(rename = "CDU/CSU")]
    CduCsu,
    #[serde(rename = "SPD")]
    Spd,
    #[serde(rename = "Greens")]
    Greens,
    #[serde(rename = "FDP")]
    Fdp,
    #[serde(rename = "Left")]
    Left,
    #[serde(rename = "AfD")]
    Afd,
    #[serde(rename = "small party")]
    SmallParty,
    #[serde(rename = "non-voter")]
    NonVoter,
}

impl VoteChoice {
    pub const ALL: [VoteChoice; N_CATEGORIES] = [
        VoteChoice::CduCsu,
        VoteChoice::Spd,
        VoteChoice::Greens,
        VoteChoice::Fdp,
        VoteChoice::Left,
        VoteChoice::Afd,
        VoteChoice::SmallParty,
        VoteChoice::NonVoter,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<VoteChoice> {
        Self::ALL.get(index).copied()
    }

    /// Canonical English label, used in CSV files and reports.
    pub fn label(self) -> &'static str {
        match self {
            VoteChoice::CduCsu => "CDU/CSU",
            VoteChoice::Spd => "SPD",
            VoteChoice::Greens => "Greens",
            VoteChoice::Fdp => "FDP",
            VoteChoice::Left => "Left",
            VoteChoice::Afd => "AfD",
            VoteChoice::SmallParty => "small party",
            VoteChoice::NonVoter => "non-voter",
        }
    }

    /// Column-friendly identifier (`cdu_csu`, `non_voter`, ...).
    pub fn key(self) -> &'static str {
        match self {
            VoteChoice::CduCsu => "cdu_csu",
            VoteChoice::Spd => "spd",
            VoteChoice::Greens => "greens",
            VoteChoice::Fdp => "fdp",
            VoteChoice::Left => "left",
            VoteChoice::Afd => "afd",
            VoteChoice::SmallParty => "small_party",
            VoteChoice::NonVoter => "non_voter",
        }
    }
}

impl fmt::Display for VoteChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown vote choice {0:?}")]
pub struct UnknownVoteChoice(pub String);

impl FromStr for VoteChoice {
    type Err = UnknownVoteChoice;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        VoteChoice::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(trimmed) || v.key() == trimmed)
            .ok_or_else(|| UnknownVoteChoice(s.to_string()))
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
///
/// NaN entries never win.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] || (values[best].is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for v in VoteChoice::ALL {
            assert_eq!(v.label().parse::<VoteChoice>().unwrap(), v);
            assert_eq!(v.key().parse::<VoteChoice>().unwrap(), v);
            assert_eq!(VoteChoice::from_index(v.index()), Some(v));
        }
        assert!("Pirates".parse::<VoteChoice>().is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[f64::NAN, 0.1]), 1);
    }
}
