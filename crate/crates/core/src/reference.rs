//! Published aggregate vote shares for comparison with reproduced runs.
//!
//! Values are rounded percentages; [`ReferenceRow::shares`] rescales them to
//! sum to one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::VoteShareVector;
use crate::vote::N_CATEGORIES;

const FIXTURE: &str = include_str!("../fixtures/reference_vote_share.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub experiment: String,
    /// `all`, `no_party_id`, or `none` for rows without a model.
    pub features: String,
    pub model: String,
    /// Percentages in canonical vote order.
    pub percent: [f64; N_CATEGORIES],
}

impl ReferenceRow {
    pub fn shares(&self) -> Result<VoteShareVector> {
        VoteShareVector::normalized(self.percent)
    }
}

pub fn reference_rows() -> Result<Vec<ReferenceRow>> {
    let mut reader = csv::Reader::from_reader(FIXTURE.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != 3 + N_CATEGORIES {
            return Err(Error::InvalidArgument(format!("reference row has {} fields", record.len())));
        }
        let mut percent = [0.0; N_CATEGORIES];
        for (k, p) in percent.iter_mut().enumerate() {
            *p = record[3 + k]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("reference value {:?}: {e}", &record[3 + k])))?;
        }
        rows.push(ReferenceRow {
            experiment: record[0].to_string(),
            features: record[1].to_string(),
            model: record[2].to_string(),
            percent,
        });
    }
    Ok(rows)
}

/// The row for one experiment, feature set and model label.
pub fn reference_row(experiment: &str, features: &str, model: &str) -> Result<ReferenceRow> {
    reference_rows()?
        .into_iter()
        .find(|r| r.experiment == experiment && r.features == features && r.model == model)
        .ok_or_else(|| Error::InvalidArgument(format!("no reference row {experiment}/{features}/{model}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::tvd;

    #[test]
    fn table_shape() {
        let rows = reference_rows().unwrap();
        assert_eq!(rows.len(), 89);
        for e in ["E2", "E3", "E4"] {
            assert_eq!(rows.iter().filter(|r| r.experiment == e).count(), 20);
        }
        for r in &rows {
            let total: f64 = r.percent.iter().sum();
            assert!((total - 100.0).abs() <= 1.0, "{} {} sums to {total}", r.experiment, r.model);
        }
    }

    #[test]
    fn ground_truth_against_small_model() {
        let gt = reference_row("E1", "none", "Ground truth").unwrap().shares().unwrap();
        let small = reference_row("E1", "none", "Llama-3.2-1B zero-shot").unwrap().shares().unwrap();
        let d = tvd(gt.as_slice(), small.as_slice());
        // |25.5-69.9| + |17.1-22.6| + |11.4-4.0| + |10.1-1.2| + |9.5-2.2| + |8.2-0.1| + 3.7 + 14.5
        let expected = (44.4 + 5.5 + 7.4 + 8.9 + 7.3 + 8.1 + 3.7 + 14.5) / 200.0;
        assert!((d - expected).abs() < 1e-3, "{d}");
    }
}
