//! Experiment grid: stratified folds, convenience-sample training filters and
//! feature ablation.
//!
//! Every cell of the grid shares one [`FoldPlan`]. Training sets are the
//! train folds optionally restricted by a [`ConvenienceFilter`]; test sets are
//! always the unfiltered test folds so that cells stay comparable.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gles;
use crate::survey::{Codebook, Dataset};
use crate::vote::{VoteChoice, N_CATEGORIES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Respondent id to fold index.
    pub assignments: BTreeMap<String, usize>,
    /// Classes with fewer than `k` members (some folds see none of them).
    pub small_classes: Vec<VoteChoice>,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Assigns respondents to `k` folds, preserving class proportions.
///
/// Each class is shuffled independently, then all classes are dealt
/// round-robin with a single cursor that carries over between classes. Per
/// class this yields floor or ceil of `n_c / k` members in every fold, and
/// fold sizes differ by at most one.
pub fn make_stratified_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    // Slot N_CATEGORIES holds unlabeled respondents.
    let mut groups: Vec<Vec<&str>> = vec![Vec::new(); N_CATEGORIES + 1];
    for r in &dataset.respondents {
        let slot = r.vote.map_or(N_CATEGORIES, VoteChoice::index);
        groups[slot].push(r.id.as_str());
    }
    let small_classes: Vec<VoteChoice> = VoteChoice::ALL
        .into_iter()
        .filter(|v| {
            let n = groups[v.index()].len();
            n > 0 && n < k
        })
        .collect();
    if !small_classes.is_empty() {
        tracing::warn!(?small_classes, k, "classes with fewer members than folds");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    let mut cursor = 0usize;
    for group in &mut groups {
        group.shuffle(&mut rng);
        for id in group.iter() {
            assignments.insert(id.to_string(), cursor % k);
            cursor += 1;
        }
    }
    Ok(FoldPlan {
        k,
        seed,
        assignments,
        small_classes,
    })
}

/// Restricts training data to an easy-to-reach subpopulation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvenienceFilter {
    pub name: String,
    pub item_id: String,
    pub accepted_values: BTreeSet<String>,
}

impl ConvenienceFilter {
    pub fn validate(&self, codebook: &Codebook) -> Result<()> {
        let item = codebook.item(&self.item_id).ok_or_else(|| {
            Error::Config(format!(
                "filter {:?} refers to item {:?} which is not in the codebook",
                self.name, self.item_id
            ))
        })?;
        if let Some(v) = self
            .accepted_values
            .iter()
            .find(|v| !item.options.contains(v))
        {
            return Err(Error::Config(format!(
                "filter {:?} accepts {v:?}, not an option of {:?}",
                self.name, self.item_id
            )));
        }
        Ok(())
    }

    pub fn accepts(&self, respondent: &crate::survey::Respondent) -> bool {
        respondent
            .answer(&self.item_id)
            .is_some_and(|v| self.accepted_values.contains(v))
    }
}

/// One cell of the experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// `E1a` ... `E4b`.
    pub id: String,
    pub train_filter: Option<ConvenienceFilter>,
    pub ablated_items: BTreeSet<String>,
    pub fold_plan: Arc<FoldPlan>,
    pub seed: u64,
}

/// Training data for one cell and fold.
///
/// Never contains a respondent from `test_fold`; ablated items are removed
/// from the codebook and from every respondent.
pub fn training_subset(
    dataset: &Dataset,
    plan: &FoldPlan,
    test_fold: usize,
    spec: &ExperimentSpec,
) -> Result<Dataset> {
    if test_fold >= plan.k {
        return Err(Error::InvalidArgument(format!(
            "test fold {test_fold} out of range for k={}",
            plan.k
        )));
    }
    let train = dataset.filtered(|r| {
        plan.fold_of(&r.id).is_some_and(|f| f != test_fold)
            && spec.train_filter.as_ref().map_or(true, |f| f.accepts(r))
    });
    if train.is_empty() {
        let filter = spec
            .train_filter
            .as_ref()
            .map_or_else(|| "none".to_string(), |f| f.name.clone());
        return Err(Error::EmptyTraining { filter });
    }
    Ok(train.without_items(&spec.ablated_items))
}

/// The unfiltered test fold, with the cell's ablation applied.
pub fn test_subset(
    dataset: &Dataset,
    plan: &FoldPlan,
    test_fold: usize,
    spec: &ExperimentSpec,
) -> Result<Dataset> {
    if test_fold >= plan.k {
        return Err(Error::InvalidArgument(format!(
            "test fold {test_fold} out of range for k={}",
            plan.k
        )));
    }
    Ok(dataset
        .filtered(|r| plan.fold_of(&r.id) == Some(test_fold))
        .without_items(&spec.ablated_items))
}

/// A convenience filter attached to one experiment row (`E2`, `E3`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridFilter {
    pub experiment: String,
    pub name: String,
    pub item: String,
    pub accepted: BTreeSet<String>,
}

/// Experiment grid parameters, usually read from the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub k: usize,
    /// Items removed in every "b" cell. Defaults to party identification and
    /// its strength follow-up, which is meaningless without it.
    pub ablated: BTreeSet<String>,
    /// Filtered rows; the unfiltered row is always `E1`.
    pub filters: Vec<GridFilter>,
}

impl Default for GridConfig {
    fn default() -> Self {
        let filter = |experiment: &str, name: &str, item: &str, value: &str| GridFilter {
            experiment: experiment.to_string(),
            name: name.to_string(),
            item: item.to_string(),
            accepted: [value.to_string()].into(),
        };
        GridConfig {
            k: 5,
            ablated: [
                gles::PARTY_ID.to_string(),
                gles::PARTY_ID_STRENGTH.to_string(),
            ]
            .into(),
            filters: vec![
                filter("E2", "students", gles::EMPLOYMENT, gles::STUDENT),
                filter("E3", "thuringia", gles::REGION, gles::THURINGIA),
                filter("E4", "unemployed", gles::EMPLOYMENT, gles::UNEMPLOYED),
            ],
        }
    }
}

/// The default eight-cell grid (`E1a` ... `E4b`).
pub fn experiment_grid(dataset: &Dataset, seed: u64) -> Result<Vec<ExperimentSpec>> {
    experiment_grid_with(dataset, &GridConfig::default(), seed)
}

pub fn experiment_grid_with(
    dataset: &Dataset,
    config: &GridConfig,
    seed: u64,
) -> Result<Vec<ExperimentSpec>> {
    for item in &config.ablated {
        if dataset.codebook.item(item).is_none() {
            return Err(Error::Config(format!("ablated item {item:?} not in codebook")));
        }
        if *item == dataset.codebook.target_item {
            return Err(Error::Config("the target cannot be ablated".to_string()));
        }
    }
    let mut rows: Vec<(String, Option<ConvenienceFilter>)> = vec![("E1".to_string(), None)];
    for f in &config.filters {
        let filter = ConvenienceFilter {
            name: f.name.clone(),
            item_id: f.item.clone(),
            accepted_values: f.accepted.clone(),
        };
        filter.validate(&dataset.codebook)?;
        if rows.iter().any(|(id, _)| *id == f.experiment) {
            return Err(Error::Config(format!("duplicate experiment row {:?}", f.experiment)));
        }
        rows.push((f.experiment.clone(), Some(filter)));
    }

    let plan = Arc::new(make_stratified_folds(dataset, config.k, seed)?);
    let mut specs = Vec::with_capacity(rows.len() * 2);
    for (row, filter) in rows {
        for (column, ablated) in [("a", BTreeSet::new()), ("b", config.ablated.clone())] {
            specs.push(ExperimentSpec {
                id: format!("{row}{column}"),
                train_filter: filter.clone(),
                ablated_items: ablated,
                fold_plan: Arc::clone(&plan),
                seed,
            });
        }
    }
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survey::Respondent;

    fn dataset_with_counts(counts: &[(VoteChoice, usize)]) -> Dataset {
        let codebook = crate::survey::tests::codebook();
        let mut respondents = Vec::new();
        for &(vote, n) in counts {
            for i in 0..n {
                respondents.push(Respondent {
                    id: format!("{}-{i}", vote.key()),
                    answers: [
                        ("d43".to_string(), "-71".to_string()),
                        ("v25a".to_string(), if i % 2 == 0 { "SPD" } else { "keine Partei" }.to_string()),
                    ]
                    .into(),
                    vote: Some(vote),
                });
            }
        }
        Dataset::new(codebook, respondents).unwrap()
    }

    fn per_fold_class_counts(ds: &Dataset, plan: &FoldPlan) -> Vec<[usize; N_CATEGORIES]> {
        let mut out = vec![[0; N_CATEGORIES]; plan.k];
        for r in &ds.respondents {
            out[plan.fold_of(&r.id).unwrap()][r.vote.unwrap().index()] += 1;
        }
        out
    }

    #[test]
    fn exact_divisibility() {
        let ds = dataset_with_counts(&[
            (VoteChoice::CduCsu, 50),
            (VoteChoice::Spd, 30),
            (VoteChoice::Greens, 20),
        ]);
        let plan = make_stratified_folds(&ds, 5, 7).unwrap();
        for fold in per_fold_class_counts(&ds, &plan) {
            assert_eq!(&fold[..3], &[10, 6, 4]);
        }
        assert_eq!(plan, make_stratified_folds(&ds, 5, 7).unwrap());
        assert_ne!(plan.assignments, make_stratified_folds(&ds, 5, 8).unwrap().assignments);
    }

    #[test]
    fn uneven_sizes_stay_within_one() {
        let ds = dataset_with_counts(&[
            (VoteChoice::CduCsu, 41),
            (VoteChoice::Spd, 33),
            (VoteChoice::Afd, 26),
            (VoteChoice::NonVoter, 3),
        ]);
        let plan = make_stratified_folds(&ds, 5, 1).unwrap();
        let sizes = plan.fold_sizes();
        assert!(sizes.iter().all(|s| *s == 20 || *s == 21), "{sizes:?}");
        let counts = ds.class_counts();
        for fold in per_fold_class_counts(&ds, &plan) {
            for v in VoteChoice::ALL {
                let proportional = counts.get(v) as f64 / 5.0;
                assert!((fold[v.index()] as f64 - proportional).abs() <= 1.0);
            }
        }
        assert_eq!(plan.small_classes, vec![VoteChoice::NonVoter]);
    }

    #[test]
    fn k_below_two_rejected() {
        let ds = dataset_with_counts(&[(VoteChoice::Spd, 4)]);
        assert!(make_stratified_folds(&ds, 1, 0).is_err());
    }

    fn spec(filter: Option<ConvenienceFilter>, ablated: &[&str], plan: FoldPlan) -> ExperimentSpec {
        ExperimentSpec {
            id: "E2a".into(),
            train_filter: filter,
            ablated_items: ablated.iter().map(|s| s.to_string()).collect(),
            fold_plan: Arc::new(plan),
            seed: 0,
        }
    }

    #[test]
    fn training_subset_excludes_test_fold_and_applies_filter() {
        let ds = dataset_with_counts(&[(VoteChoice::CduCsu, 20), (VoteChoice::Spd, 20)]);
        let plan = make_stratified_folds(&ds, 5, 3).unwrap();
        let filter = ConvenienceFilter {
            name: "partisans".into(),
            item_id: "v25a".into(),
            accepted_values: ["SPD".to_string()].into(),
        };
        let s = spec(Some(filter), &["v25a"], plan.clone());
        for fold in 0..5 {
            let train = training_subset(&ds, &plan, fold, &s).unwrap();
            let test = test_subset(&ds, &plan, fold, &s).unwrap();
            assert!(train.respondents.iter().all(|r| plan.fold_of(&r.id) != Some(fold)));
            assert!(train.respondents.iter().all(|r| r.answer("v25a").is_none()));
            assert!(test.respondents.iter().all(|r| r.answer("v25a").is_none()));
            let expected = ds
                .respondents
                .iter()
                .filter(|r| plan.fold_of(&r.id) != Some(fold) && r.answer("v25a") == Some("SPD"))
                .count();
            assert_eq!(train.len(), expected);
            assert_eq!(test.len(), 8);
        }
        assert!(training_subset(&ds, &plan, 5, &s).is_err());
    }

    #[test]
    fn empty_training_set_names_the_filter() {
        let ds = dataset_with_counts(&[(VoteChoice::CduCsu, 10)]);
        let plan = make_stratified_folds(&ds, 5, 3).unwrap();
        let filter = ConvenienceFilter {
            name: "unemployed".into(),
            item_id: "d43".into(),
            accepted_values: ["über 2000 Euro".to_string()].into(),
        };
        let s = spec(Some(filter), &[], plan.clone());
        match training_subset(&ds, &plan, 0, &s) {
            Err(Error::EmptyTraining { filter }) => assert_eq!(filter, "unemployed"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grid_rejects_unknown_filter_item() {
        let ds = dataset_with_counts(&[(VoteChoice::CduCsu, 10)]);
        assert!(experiment_grid(&ds, 0).is_err());
        let config = GridConfig {
            k: 5,
            ablated: ["v25a".to_string()].into(),
            filters: vec![],
        };
        let grid = experiment_grid_with(&ds, &config, 0).unwrap();
        let ids: Vec<_> = grid.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["E1a", "E1b"]);
    }
}
