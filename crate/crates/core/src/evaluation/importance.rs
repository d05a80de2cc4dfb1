//! Permutation importance: the macro-F1 lost when one item's values are
//! shuffled across test respondents.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::macro_f1;
use crate::error::{Error, Result};
use crate::imputer::FittedImputer;
use crate::survey::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub item: String,
    pub baseline_f1: f64,
    /// Baseline minus permuted macro F1, one per repeat.
    pub drops: Vec<f64>,
    pub mean_drop: f64,
}

pub fn permutation_importance(
    model: &dyn FittedImputer,
    test: &Dataset,
    item: &str,
    repeats: usize,
    seed: u64,
) -> Result<Importance> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("permutation importance needs at least one repeat".into()));
    }
    if !test.codebook.predictor_items().any(|i| i.id == item) {
        return Err(Error::InvalidArgument(format!("{item:?} is not a predictor of the test set")));
    }
    let truth = test.truth();
    let baseline_f1 = macro_f1(&model.predict(test)?, &truth)?.macro_f1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drops = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut values: Vec<Option<String>> = test.respondents.iter().map(|r| r.answers.get(item).cloned()).collect();
        values.shuffle(&mut rng);
        let mut permuted = test.clone();
        for (r, v) in permuted.respondents.iter_mut().zip(values) {
            match v {
                Some(v) => r.answers.insert(item.to_string(), v),
                None => r.answers.remove(item),
            };
        }
        drops.push(baseline_f1 - macro_f1(&model.predict(&permuted)?, &truth)?.macro_f1);
    }
    Ok(Importance {
        item: item.to_string(),
        baseline_f1,
        mean_drop: drops.iter().sum::<f64>() / repeats as f64,
        drops,
    })
}

/// Importance of every predictor, most important first.
pub fn rank_importance(model: &dyn FittedImputer, test: &Dataset, repeats: usize, seed: u64) -> Result<Vec<Importance>> {
    let items: Vec<String> = test.codebook.predictor_items().map(|i| i.id.clone()).collect();
    let mut out = items
        .iter()
        .enumerate()
        .map(|(k, item)| permutation_importance(model, test, item, repeats, seed.wrapping_add(k as u64)))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.mean_drop.total_cmp(&a.mean_drop));
    Ok(out)
}
