//! One-hot encoding of categorical answers.
//!
//! Columns are (item, value) pairs observed in the training set, in codebook
//! order (answer options first, then missing codes), followed by a single
//! shared `unseen` column for test values absent from training.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survey::Dataset;
use crate::vote::VoteChoice;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKey {
    Value { item: String, value: String },
    Unseen,
}

/// Column dictionary learned from a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    items: Vec<String>,
    columns: Vec<ColumnKey>,
    index: HashMap<(String, String), usize>,
}

/// Sparse one-hot matrix: exactly one active column per item and row.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<ColumnKey>,
    /// Encoded item ids, in column-block order.
    pub items: Vec<String>,
    /// Row-major `rows.len() × items.len()` active column indices.
    pub active: Vec<u32>,
    pub labels: Vec<Option<VoteChoice>>,
}

impl EncodedMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let m = self.items.len();
        &self.active[i * m..(i + 1) * m]
    }

    /// Indicator value of column `j` in row `i` (the shared unseen column
    /// may be hit by several items and counts each).
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.row(i).iter().filter(|&&c| c as usize == j).count() as f64
    }

    /// Dense copy, mainly for tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows())
            .map(|i| {
                let mut x = vec![0.0; self.n_cols()];
                for &c in self.row(i) {
                    x[c as usize] += 1.0;
                }
                x
            })
            .collect()
    }

    /// Labels of every row; errors on unlabeled rows.
    pub fn require_labels(&self) -> Result<Vec<VoteChoice>> {
        self.labels
            .iter()
            .zip(&self.rows)
            .map(|(l, id)| l.ok_or_else(|| Error::InvalidArgument(format!("training row {id:?} has no vote"))))
            .collect()
    }
}

impl Encoder {
    /// Learns columns from `train`, skipping non-predictors and `ablated`.
    pub fn fit(train: &Dataset, ablated: &BTreeSet<String>) -> Encoder {
        let cb = &train.codebook;
        let items: Vec<String> = cb
            .predictor_items()
            .filter(|i| !ablated.contains(&i.id))
            .map(|i| i.id.clone())
            .collect();
        let mut columns = Vec::new();
        for item_id in &items {
            let item = cb.item(item_id).expect("predictor item exists");
            let seen: BTreeSet<&str> = train.respondents.iter().filter_map(|r| r.answer(item_id)).collect();
            let values = item
                .options
                .iter()
                .map(String::as_str)
                .chain(cb.missing_codes.iter().map(|c| c.code.as_str()));
            for value in values.filter(|v| seen.contains(v)) {
                columns.push(ColumnKey::Value {
                    item: item_id.clone(),
                    value: value.to_string(),
                });
            }
        }
        columns.push(ColumnKey::Unseen);
        let index = columns
            .iter()
            .enumerate()
            .filter_map(|(j, c)| match c {
                ColumnKey::Value { item, value } => Some(((item.clone(), value.clone()), j)),
                ColumnKey::Unseen => None,
            })
            .collect();
        Encoder { items, columns, index }
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn unseen_column(&self) -> usize {
        self.columns.len() - 1
    }

    pub fn transform(&self, data: &Dataset) -> Result<EncodedMatrix> {
        let unseen = self.unseen_column() as u32;
        let mut active = Vec::with_capacity(data.len() * self.items.len());
        for r in &data.respondents {
            for item in &self.items {
                let value = r.answer(item).ok_or_else(|| Error::MissingColumn { item: item.clone() })?;
                let col = self
                    .index
                    .get(&(item.clone(), value.to_string()))
                    .map_or(unseen, |&j| j as u32);
                active.push(col);
            }
        }
        Ok(EncodedMatrix {
            rows: data.respondents.iter().map(|r| r.id.clone()).collect(),
            columns: self.columns.clone(),
            items: self.items.clone(),
            active,
            labels: data.respondents.iter().map(|r| r.vote).collect(),
        })
    }
}

/// Encodes `apply_to` with columns learned from `train`.
pub fn encode(train: &Dataset, apply_to: &Dataset, ablated: &BTreeSet<String>) -> Result<EncodedMatrix> {
    Encoder::fit(train, ablated).transform(apply_to)
}
