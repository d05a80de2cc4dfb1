use std::collections::BTreeMap;

use proptest::prelude::*;
use voteimpute::backend::restricted_softmax;
use voteimpute::evaluation::{macro_f1_indices, tvd};
use voteimpute::experiment::make_stratified_folds;
use voteimpute::record::{read_predictions_csv, write_predictions_csv};
use voteimpute::survey::ReadOptions;
use voteimpute::synthetic::{generate, GeneratorSpec};
use voteimpute::vote::N_CATEGORIES;
use voteimpute::{Dataset, PredictionRecord, VoteChoice};

fn distribution() -> impl Strategy<Value = [f64; N_CATEGORIES]> {
    prop::array::uniform8(0.0f64..1.0).prop_filter_map("all zero", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-6).then(|| w.map(|x| x / s))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tvd_is_a_bounded_metric(p in distribution(), q in distribution(), r in distribution()) {
        let d = tvd(&p, &q);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - tvd(&q, &p)).abs() < 1e-15);
        prop_assert_eq!(tvd(&p, &p), 0.0);
        prop_assert!(tvd(&p, &r) <= d + tvd(&q, &r) + 1e-12);
    }

    #[test]
    fn softmax_ignores_shifts(scores in prop::array::uniform8(-30.0f64..0.0), c in -100.0f64..100.0) {
        let p = restricted_softmax(&scores);
        let q = restricted_softmax(&scores.map(|s| s + c));
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_is_invariant_to_relabeling(
        pairs in prop::collection::vec((0..N_CATEGORIES, 0..N_CATEGORIES), 1..60),
        perm in Just((0..N_CATEGORIES).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let a = macro_f1_indices(&pred, &truth, N_CATEGORIES).unwrap().macro_f1;
        let pred2: Vec<usize> = pred.iter().map(|&i| perm[i]).collect();
        let truth2: Vec<usize> = truth.iter().map(|&i| perm[i]).collect();
        let b = macro_f1_indices(&pred2, &truth2, N_CATEGORIES).unwrap().macro_f1;
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
        if pred == truth {
            let present = (0..N_CATEGORIES).filter(|c| truth.contains(c)).count();
            prop_assert!((a - present as f64 / N_CATEGORIES as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn prediction_csv_round_trips(probs in prop::collection::vec(distribution(), 1..30)) {
        let records: Vec<PredictionRecord> = probs
            .into_iter()
            .enumerate()
            .map(|(i, p)| PredictionRecord::from_probs(format!("id,{i}"), p))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_predictions_csv(&records, &path).unwrap();
        prop_assert_eq!(read_predictions_csv(&path).unwrap(), records);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn folds_partition_and_balance(n in 10usize..250, seed in any::<u64>(), fold_seed in any::<u64>(), k in 2usize..8) {
        let data = generate(&GeneratorSpec { n, seed, ..Default::default() }).unwrap().dataset;
        let plan = make_stratified_folds(&data, k, fold_seed).unwrap();
        prop_assert_eq!(plan.assignments.len(), n);
        let sizes = plan.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut per_class: BTreeMap<VoteChoice, Vec<usize>> = BTreeMap::new();
        for r in &data.respondents {
            per_class.entry(r.vote.unwrap()).or_insert_with(|| vec![0; k])[plan.fold_of(&r.id).unwrap()] += 1;
        }
        for counts in per_class.values() {
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
        prop_assert_eq!(make_stratified_folds(&data, k, fold_seed).unwrap(), plan);
    }

    #[test]
    fn survey_csv_round_trips(n in 1usize..80, seed in any::<u64>(), delim in prop::sample::select(vec![b',', b';', b'\t'])) {
        let data = generate(&GeneratorSpec { n, seed, ..Default::default() }).unwrap().dataset;
        let options = ReadOptions { delimiter: delim };
        let mut buf = Vec::new();
        data.write_csv(&mut buf, options).unwrap();
        let back = Dataset::read(data.codebook.clone(), buf.as_slice(), options).unwrap();
        prop_assert_eq!(back, data);
    }
}
