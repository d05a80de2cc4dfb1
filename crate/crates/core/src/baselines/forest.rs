//! Random forest of CART trees over one-hot indicators.
//!
//! Each tree is grown on a bootstrap sample. At every node a random subset
//! of `max_features` columns (default √F) is searched for the split with the
//! lowest weighted Gini impurity; if none of them separates the node, the
//! remaining columns are searched too. Prediction averages the trees' leaf
//! class-frequency vectors.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encode::EncodedMatrix;
use crate::error::{Error, Result};
use crate::record::PredictionRecord;
use crate::vote::N_CATEGORIES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Columns tried per node; `None` means ⌈√F⌉.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 200,
            max_depth: None,
            min_leaf: 2,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with the indicator off go to `off`, on to `on`.
    Split { column: u32, off: u32, on: u32 },
    /// Weighted class counts of the training samples reaching the leaf.
    Leaf { counts: [f64; N_CATEGORIES] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_counts(&self, row: &[u32]) -> &[f64; N_CATEGORIES] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split { column, off, on } => {
                    at = if row.contains(column) { *on } else { *off } as usize;
                }
                Node::Leaf { counts } => return counts,
            }
        }
    }

    pub fn leaf_frequencies(&self, row: &[u32]) -> [f64; N_CATEGORIES] {
        let counts = self.leaf_counts(row);
        let total: f64 = counts.iter().sum();
        counts.map(|c| c / total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub params: ForestParams,
}

fn gini(counts: &[f64; N_CATEGORIES], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total).powi(2)).sum::<f64>()
}

struct Grower<'a> {
    x: &'a EncodedMatrix,
    labels: &'a [usize],
    weights: Vec<f64>,
    max_features: usize,
    min_leaf: usize,
    max_depth: usize,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
}

impl Grower<'_> {
    fn class_counts(&self, rows: &[usize]) -> [f64; N_CATEGORIES] {
        let mut counts = [0.0; N_CATEGORIES];
        for &i in rows {
            counts[self.labels[i]] += self.weights[i];
        }
        counts
    }

    /// Best split as (column, impurity) among valid ones.
    fn best_split(&mut self, rows: &[usize], counts: &[f64; N_CATEGORIES]) -> Option<u32> {
        let n_cols = self.x.n_cols();
        // per column: weighted class counts and distinct row count with indicator on
        let mut on_counts: Vec<[f64; N_CATEGORIES]> = vec![[0.0; N_CATEGORIES]; n_cols];
        let mut on_rows = vec![0usize; n_cols];
        for &i in rows {
            let row = self.x.row(i);
            for (k, &c) in row.iter().enumerate() {
                if row[..k].contains(&c) {
                    continue;
                }
                on_counts[c as usize][self.labels[i]] += self.weights[i];
                on_rows[c as usize] += 1;
            }
        }
        let total: f64 = counts.iter().sum();
        let mut order: Vec<usize> = (0..n_cols).collect();
        order.shuffle(&mut self.rng);

        let mut best: Option<(u32, f64)> = None;
        for (tried, &c) in order.iter().enumerate() {
            if tried >= self.max_features && best.is_some() {
                break;
            }
            let n_on = on_rows[c];
            let n_off = rows.len() - n_on;
            if n_on < self.min_leaf || n_off < self.min_leaf {
                continue;
            }
            let on = &on_counts[c];
            let off: [f64; N_CATEGORIES] = std::array::from_fn(|k| counts[k] - on[k]);
            let w_on: f64 = on.iter().sum();
            let w_off = total - w_on;
            let impurity = (w_on * gini(on, w_on) + w_off * gini(&off, w_off)) / total;
            if best.map_or(true, |(_, b)| impurity < b) {
                best = Some((c as u32, impurity));
            }
        }
        best.map(|(c, _)| c)
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> u32 {
        let counts = self.class_counts(&rows);
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { counts });
        let pure = counts.iter().filter(|c| **c > 0.0).count() <= 1;
        if pure || depth >= self.max_depth || rows.len() < 2 * self.min_leaf {
            return id;
        }
        let Some(column) = self.best_split(&rows, &counts) else {
            return id;
        };
        let (on, off): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| self.x.row(i).contains(&column));
        let off_id = self.grow(off, depth + 1);
        let on_id = self.grow(on, depth + 1);
        self.nodes[id as usize] = Node::Split {
            column,
            off: off_id,
            on: on_id,
        };
        id
    }
}

pub fn fit_forest(x: &EncodedMatrix, params: &ForestParams) -> Result<ForestModel> {
    if x.n_rows() == 0 {
        return Err(Error::InvalidArgument("random forest needs training rows".into()));
    }
    if params.n_trees == 0 || params.min_leaf == 0 {
        return Err(Error::InvalidArgument(format!("invalid forest parameters {params:?}")));
    }
    let labels: Vec<usize> = x.require_labels()?.into_iter().map(|v| v.index()).collect();
    let max_features = params
        .max_features
        .unwrap_or_else(|| (x.n_cols() as f64).sqrt().ceil() as usize)
        .max(1);
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(t as u64);
            let n = x.n_rows();
            let mut weights = vec![0.0; n];
            if params.bootstrap {
                for _ in 0..n {
                    weights[rng.gen_range(0..n)] += 1.0;
                }
            } else {
                weights.iter_mut().for_each(|w| *w = 1.0);
            }
            let rows: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
            let mut grower = Grower {
                x,
                labels: &labels,
                weights,
                max_features,
                min_leaf: params.min_leaf,
                max_depth: params.max_depth.unwrap_or(usize::MAX),
                nodes: Vec::new(),
                rng,
            };
            grower.grow(rows, 0);
            Tree { nodes: grower.nodes }
        })
        .collect();
    Ok(ForestModel {
        trees,
        n_features: x.n_cols(),
        params: params.clone(),
    })
}

impl ForestModel {
    pub fn probs_for_row(&self, row: &[u32]) -> [f64; N_CATEGORIES] {
        let mut p = [0.0; N_CATEGORIES];
        for tree in &self.trees {
            for (a, b) in p.iter_mut().zip(tree.leaf_frequencies(row)) {
                *a += b;
            }
        }
        let n = self.trees.len() as f64;
        p.map(|v| v / n)
    }

    pub fn predict(&self, x: &EncodedMatrix) -> Result<Vec<PredictionRecord>> {
        if x.n_cols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: x.n_cols(),
            });
        }
        Ok((0..x.n_rows())
            .into_par_iter()
            .map(|i| PredictionRecord::from_probs(x.rows[i].clone(), self.probs_for_row(x.row(i))))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::encode::ColumnKey;
    use crate::vote::VoteChoice;

    fn xor_matrix() -> EncodedMatrix {
        // two binary items: columns 0/1 for item a, 2/3 for item b; label = a xor b
        let rows: Vec<([u32; 2], VoteChoice)> = vec![
            ([0, 2], VoteChoice::Spd),
            ([0, 3], VoteChoice::Afd),
            ([1, 2], VoteChoice::Afd),
            ([1, 3], VoteChoice::Spd),
        ];
        EncodedMatrix {
            rows: (0..4).map(|i| i.to_string()).collect(),
            columns: vec![ColumnKey::Unseen; 5],
            items: vec!["a".into(), "b".into()],
            active: rows.iter().flat_map(|(r, _)| *r).collect(),
            labels: rows.iter().map(|(_, l)| Some(*l)).collect(),
        }
    }

    #[test]
    fn single_unbootstrapped_tree_memorizes() {
        let x = xor_matrix();
        let params = ForestParams {
            n_trees: 1,
            min_leaf: 1,
            bootstrap: false,
            max_features: Some(1),
            ..Default::default()
        };
        let m = fit_forest(&x, &params).unwrap();
        for (p, l) in m.predict(&x).unwrap().iter().zip(&x.labels) {
            assert_eq!(Some(p.label), *l);
            assert_eq!(p.probs[p.label.index()], 1.0);
        }
    }

    #[test]
    fn pure_node_is_a_leaf() {
        let mut x = xor_matrix();
        x.labels = vec![Some(VoteChoice::Fdp); 4];
        let m = fit_forest(&x, &ForestParams::default()).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn probabilities_average_leaf_frequencies() {
        let x = xor_matrix();
        let m = fit_forest(
            &x,
            &ForestParams {
                n_trees: 25,
                min_leaf: 1,
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        for i in 0..x.n_rows() {
            let row = x.row(i);
            let mut expected = [0.0; N_CATEGORIES];
            for tree in &m.trees {
                let counts = tree.leaf_counts(row);
                let total: f64 = counts.iter().sum();
                for c in 0..N_CATEGORIES {
                    expected[c] += counts[c] / total / 25.0;
                }
            }
            let got = m.probs_for_row(row);
            for c in 0..N_CATEGORIES {
                assert!((got[c] - expected[c]).abs() < 1e-12);
            }
        }
        let again = fit_forest(
            &x,
            &ForestParams {
                n_trees: 25,
                min_leaf: 1,
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m, again);
        let mut reversed = m.clone();
        reversed.trees.reverse();
        for i in 0..x.n_rows() {
            let a = m.probs_for_row(x.row(i));
            let b = reversed.probs_for_row(x.row(i));
            for c in 0..N_CATEGORIES {
                assert!((a[c] - b[c]).abs() < 1e-12);
            }
        }
    }
}
