//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;
use voteimpute::backend::{compute_completion_nll, restricted_softmax};
use voteimpute::baselines::encode::{ColumnKey, EncodedMatrix};
use voteimpute::baselines::softmax::{fit_softmax, Objective, SoftmaxParams};
use voteimpute::evaluation::{aggregated_vote_share, macro_f1, ranksum_test, true_vote_share, tvd};
use voteimpute::experiment::{experiment_grid_with, make_stratified_folds, test_subset, training_subset, GridConfig};
use voteimpute::record::is_simplex;
use voteimpute::reference::reference_row;
use voteimpute::run::{self, RunConfig};
use voteimpute::synthetic::{generate, GeneratorSpec};
use voteimpute::vote::{argmax, N_CATEGORIES};
use voteimpute::{gles, Error, PredictionRecord, VoteChoice};
use voteimpute_stub::{StubConfig, StubServer};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

fn err(e: Error) -> String {
    e.to_string()
}

fn random_probs(rng: &mut ChaCha8Rng) -> [f64; N_CATEGORIES] {
    let mut p = [0.0; N_CATEGORIES];
    for v in &mut p {
        // sparse vectors now and then
        *v = if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>().powi(3) };
    }
    if p.iter().all(|v| *v == 0.0) {
        p[rng.gen_range(0..N_CATEGORIES)] = 1.0;
    }
    let s: f64 = p.iter().sum();
    p.map(|v| v / s)
}

fn brute_macro_f1(pred: &[usize], truth: &[usize]) -> f64 {
    let mut total = 0.0;
    for c in 0..N_CATEGORIES {
        let tp = pred.iter().zip(truth).filter(|(p, t)| **p == c && **t == c).count() as f64;
        let fp = pred.iter().zip(truth).filter(|(p, t)| **p == c && **t != c).count() as f64;
        let fneg = pred.iter().zip(truth).filter(|(p, t)| **p != c && **t == c).count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    total / N_CATEGORIES as f64
}

/// Largest probability difference over all 2^8 events.
fn brute_tvd(p: &[f64], q: &[f64]) -> f64 {
    let mut best: f64 = 0.0;
    for mask in 0u32..(1 << N_CATEGORIES) {
        let (mut a, mut b) = (0.0, 0.0);
        for c in 0..N_CATEGORIES {
            if mask & (1 << c) != 0 {
                a += p[c];
                b += q[c];
            }
        }
        best = best.max((a - b).abs());
    }
    best
}

/// Rank sum from pairwise comparisons, z from the exact permutation variance
/// of a sum of `n_a` ranks drawn without replacement.
fn brute_ranksum(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let rank = |x: f64| {
        let less = pooled.iter().filter(|&&y| y < x).count() as f64;
        let equal = pooled.iter().filter(|&&y| y == x).count() as f64;
        less + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = pooled.iter().map(|&x| rank(x)).collect();
    let rank_sum: f64 = a.iter().map(|&x| rank(x)).sum();
    let n = pooled.len() as f64;
    let na = a.len() as f64;
    let mean_rank = ranks.iter().sum::<f64>() / n;
    let sigma2 = ranks.iter().map(|r| (r - mean_rank).powi(2)).sum::<f64>() / n;
    let var = na * sigma2 * (n - na) / (n - 1.0);
    let z = if var > 0.0 { (rank_sum - na * mean_rank) / var.sqrt() } else { 0.0 };
    let p = if var > 0.0 { erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0) } else { 1.0 };
    (rank_sum, z, p)
}

fn c1_metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for instance in 0..1000 {
        let n = rng.gen_range(1..=50);
        // skewed labels so some classes are absent
        let support = rng.gen_range(1..=N_CATEGORIES);
        let mut truth_map = BTreeMap::new();
        let mut preds = Vec::new();
        let mut truth_idx = Vec::new();
        let mut pred_idx = Vec::new();
        for i in 0..n {
            let id = format!("r{i:03}");
            let t = VoteChoice::ALL[rng.gen_range(0..support)];
            truth_map.insert(id.clone(), t);
            let probs = random_probs(&mut rng);
            let rec = PredictionRecord::from_probs(id, probs);
            truth_idx.push(t.index());
            pred_idx.push(rec.label.index());
            preds.push(rec);
        }
        preds.shuffle(&mut rng);
        let f1 = macro_f1(&preds, &truth_map).map_err(err)?.macro_f1;
        let mut by_id: Vec<&PredictionRecord> = preds.iter().collect();
        by_id.sort_by(|a, b| a.respondent_id.cmp(&b.respondent_id));
        let pred_sorted: Vec<usize> = by_id.iter().map(|r| r.label.index()).collect();
        let d_f1 = (f1 - brute_macro_f1(&pred_sorted, &truth_idx)).abs();

        let share = aggregated_vote_share(&preds).map_err(err)?;
        let mut d_share: f64 = 0.0;
        for c in 0..N_CATEGORIES {
            let mut s = 0.0;
            for r in by_id.iter().rev() {
                s += r.probs[c];
            }
            d_share = d_share.max((share.0[c] - s / n as f64).abs());
        }

        let labels: Vec<VoteChoice> = truth_idx.iter().map(|&i| VoteChoice::ALL[i]).collect();
        let true_share = true_vote_share(&labels).map_err(err)?;
        let d_tvd = (tvd(&share.0, &true_share.0) - brute_tvd(&share.0, &true_share.0)).abs();

        let na = rng.gen_range(1..=25);
        let nb = rng.gen_range(1..=25);
        // coarse values so ties are common
        let levels = rng.gen_range(2..=12);
        let mut draw = |m: usize| (0..m).map(|_| rng.gen_range(0..levels) as f64 * 0.25).collect::<Vec<f64>>();
        let (a, b) = (draw(na), draw(nb));
        let rs = ranksum_test(&a, &b).map_err(err)?;
        let (rank_sum, z, p) = brute_ranksum(&a, &b);
        let d_rs = (rs.rank_sum - rank_sum).abs().max((rs.w - z).abs()).max((rs.p - p).abs());

        let d = d_f1.max(d_share).max(d_tvd).max(d_rs);
        ensure!(d <= 1e-9, "instance {instance}: f1 {d_f1:e}, share {d_share:e}, tvd {d_tvd:e}, ranksum {d_rs:e}");
        worst = worst.max(d);
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("1000 instances, max deviation {worst:.1e}, {:.2}s", elapsed.as_secs_f64()))
}

fn c2_reference_table() -> Outcome {
    let gt = reference_row("E1", "none", "Ground truth").map_err(err)?.shares().map_err(err)?;
    let small = reference_row("E1", "none", "Llama-3.2-1B zero-shot").map_err(err)?.shares().map_err(err)?;
    let d = tvd(&gt.0, &small.0);
    let zero = tvd(&gt.0, &gt.0);
    ensure!((d - 0.499).abs() <= 0.002, "TVD(GT, 1B) = {d}");
    ensure!(zero == 0.0, "TVD(GT, GT) = {zero}");
    Ok(format!("TVD(GT, 1B) = {d:.4}, TVD(GT, GT) = {zero}"))
}

fn random_spec(rng: &mut ChaCha8Rng) -> GeneratorSpec {
    let mut shares = [0.0; N_CATEGORIES];
    for s in &mut shares {
        *s = rng.gen_range(0.05..1.0);
    }
    // occasionally a very rare class
    if rng.gen_bool(0.3) {
        shares[rng.gen_range(0..N_CATEGORIES)] = 0.005;
    }
    let total: f64 = shares.iter().sum();
    GeneratorSpec {
        n: rng.gen_range(20..=300),
        seed: rng.gen(),
        vote_shares: shares.map(|s| s / total),
        ..Default::default()
    }
}

fn c3_stratification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cells_checked = 0;
    for round in 0..500 {
        let data = generate(&random_spec(&mut rng)).map_err(err)?.dataset;
        let k = rng.gen_range(2..=7);
        let seed: u64 = rng.gen();
        let plan = make_stratified_folds(&data, k, seed).map_err(err)?;
        ensure!(plan.assignments.len() == data.len(), "round {round}: {} of {} assigned", plan.assignments.len(), data.len());

        let mut class_fold = vec![vec![0usize; k]; N_CATEGORIES];
        for r in &data.respondents {
            let f = plan.fold_of(&r.id).ok_or(format!("round {round}: {} unassigned", r.id))?;
            class_fold[r.vote.expect("labeled").index()][f] += 1;
        }
        for (c, counts) in class_fold.iter().enumerate() {
            let n_c: usize = counts.iter().sum();
            let expected = n_c as f64 / k as f64;
            for (f, &m) in counts.iter().enumerate() {
                ensure!((m as f64 - expected).abs() < 1.0, "round {round}: class {c} fold {f} has {m}, expected {expected}");
            }
        }

        let grid = experiment_grid_with(&data, &GridConfig { k, ..Default::default() }, seed).map_err(err)?;
        let mut union = BTreeSet::new();
        let plan = &grid[0].fold_plan;
        for fold in 0..k {
            let test = test_subset(&data, plan, fold, &grid[0]).map_err(err)?;
            for r in &test.respondents {
                ensure!(union.insert(r.id.clone()), "round {round}: {} in two test folds", r.id);
            }
        }
        let all: BTreeSet<String> = data.respondents.iter().map(|r| r.id.clone()).collect();
        ensure!(union == all, "round {round}: test folds do not cover the dataset");

        for spec in grid.iter().filter(|s| s.train_filter.is_some()) {
            for fold in 0..k {
                let test: BTreeSet<String> = test_subset(&data, &spec.fold_plan, fold, spec)
                    .map_err(err)?
                    .respondents
                    .into_iter()
                    .map(|r| r.id)
                    .collect();
                match training_subset(&data, &spec.fold_plan, fold, spec) {
                    Ok(train) => {
                        let filter = spec.train_filter.as_ref().unwrap();
                        for r in &train.respondents {
                            ensure!(!test.contains(&r.id), "round {round}: {} {} in train and test fold {fold}", spec.id, r.id);
                            let original = data.respondents.iter().find(|x| x.id == r.id).unwrap();
                            ensure!(filter.accepts(original), "round {round}: {} admits {}", spec.id, r.id);
                        }
                        cells_checked += 1;
                    }
                    Err(Error::EmptyTraining { .. }) => {}
                    Err(e) => return Err(format!("round {round}: {e}")),
                }
            }
        }
    }
    Ok(format!("500 datasets, {cells_checked} filtered train/test pairs disjoint"))
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, items: usize, levels: usize, classes: &[usize]) -> EncodedMatrix {
    let columns = (0..items * levels)
        .map(|j| ColumnKey::Value {
            item: format!("i{}", j / levels),
            value: format!("v{}", j % levels),
        })
        .collect();
    let mut active = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        for i in 0..items {
            active.push((i * levels + rng.gen_range(0..levels)) as u32);
        }
        labels.push(Some(VoteChoice::ALL[*classes.choose(rng).unwrap()]));
    }
    EncodedMatrix {
        rows: (0..n).map(|i| format!("r{i}")).collect(),
        columns,
        items: (0..items).map(|i| format!("i{i}")).collect(),
        active,
        labels,
    }
}

fn c4_softmax() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_grad: f64 = 0.0;
    for instance in 0..25 {
        let n = rng.gen_range(5..=40);
        let items = rng.gen_range(1..=4);
        let levels = rng.gen_range(2..=4);
        let mut classes: Vec<usize> = (0..N_CATEGORIES).collect();
        classes.shuffle(&mut rng);
        classes.truncate(rng.gen_range(2..=N_CATEGORIES));
        let x = random_matrix(&mut rng, n, items, levels, &classes);
        let l2 = rng.gen_range(0.0..2.0);
        let obj = Objective::new(&x, l2).map_err(err)?;
        let theta: Vec<f64> = (0..obj.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut grad = vec![0.0; obj.dim()];
        obj.value_grad(&theta, &mut grad);
        let h = 1e-5;
        for j in 0..obj.dim() {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (obj.value(&up) - obj.value(&down)) / (2.0 * h);
            let e = (fd - grad[j]).abs();
            ensure!(e < 1e-5, "instance {instance}, coordinate {j}: analytic {} vs numeric {fd}", grad[j]);
            worst_grad = worst_grad.max(e);
        }

        let model = fit_softmax(&x, &SoftmaxParams { l2, ..Default::default() }).map_err(err)?;
        for w in model.objective_trace.windows(2) {
            ensure!(w[1] <= w[0], "instance {instance}: objective rose from {} to {}", w[0], w[1]);
        }
    }

    // separable toys: the first item determines the class
    let mut toys = 0;
    for _ in 0..10 {
        let mut classes: Vec<usize> = (0..N_CATEGORIES).collect();
        classes.shuffle(&mut rng);
        classes.truncate(rng.gen_range(2..=N_CATEGORIES));
        let n = rng.gen_range(20..=80);
        let mut x = random_matrix(&mut rng, n, 3, N_CATEGORIES, &classes);
        for i in 0..n {
            let c = x.labels[i].unwrap().index();
            x.active[i * 3] = c as u32;
        }
        let model = fit_softmax(&x, &SoftmaxParams { l2: 1e-4, ..Default::default() }).map_err(err)?;
        let preds = model.predict(&x).map_err(err)?;
        let correct = preds.iter().zip(&x.labels).filter(|(p, l)| Some(p.label) == **l).count();
        ensure!(correct == n, "separable toy: {correct}/{n} correct");
        for w in model.objective_trace.windows(2) {
            ensure!(w[1] <= w[0], "separable toy: objective rose");
        }
        toys += 1;
    }
    Ok(format!("max gradient error {worst_grad:.1e}; {toys} separable toys at accuracy 1.0"))
}

/// Random increasing piecewise-linear map through sorted knots.
fn monotone_map(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 {
    let mut xs: Vec<f64> = (0..6).map(|_| rng.gen_range(-40.0..5.0)).collect();
    xs.sort_by(f64::total_cmp);
    let mut ys = Vec::new();
    let mut y: f64 = rng.gen_range(-10.0..10.0);
    for _ in &xs {
        ys.push(y);
        y += rng.gen_range(0.01..20.0);
    }
    let slope_lo = rng.gen_range(0.1..3.0);
    let slope_hi = rng.gen_range(0.1..3.0);
    move |x: f64| {
        if x == f64::NEG_INFINITY {
            return x;
        }
        if x <= xs[0] {
            return ys[0] + slope_lo * (x - xs[0]);
        }
        for i in 1..xs.len() {
            if x <= xs[i] {
                let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
                return ys[i - 1] + t * (ys[i] - ys[i - 1]);
            }
        }
        ys[ys.len() - 1] + slope_hi * (x - xs[xs.len() - 1])
    }
}

fn c5_restricted_softmax() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_shift: f64 = 0.0;
    for instance in 0..20_000 {
        let mut scores = [0.0; N_CATEGORIES];
        let scale = [1.0, 10.0, 300.0][instance % 3];
        for s in &mut scores {
            *s = if rng.gen_bool(0.25) { f64::NEG_INFINITY } else { -rng.gen::<f64>() * scale };
        }
        if scores.iter().all(|s| s.is_infinite()) {
            scores[rng.gen_range(0..N_CATEGORIES)] = 0.0;
        }
        let p = restricted_softmax(&scores);
        ensure!(is_simplex(&p, 1e-12) && p.iter().all(|v| *v >= 0.0), "instance {instance}: {p:?}");

        let c = rng.gen_range(-50.0..50.0);
        let shifted = restricted_softmax(&scores.map(|s| s + c));
        for (a, b) in p.iter().zip(&shifted) {
            let d = (a - b).abs();
            ensure!(d <= 1e-12, "instance {instance}: shift by {c} moved a probability by {d:e}");
            worst_shift = worst_shift.max(d);
        }

        let g = monotone_map(&mut rng);
        let mapped = restricted_softmax(&scores.map(&g));
        ensure!(argmax(&mapped) == argmax(&p), "instance {instance}: argmax changed under a monotone map");
        ensure!(argmax(&p) == argmax(&scores), "instance {instance}: argmax differs from the scores'");
    }
    Ok(format!("20000 score vectors, max shift deviation {worst_shift:.1e}"))
}

fn default_run_config(out: &Path, n: usize) -> RunConfig {
    let text = format!(
        r#"
out_dir = "{}"
seed = 2017
max_workers = {}

[generator]
n = {n}

[[imputers]]
name = "majority"
kind = "majority"

[[imputers]]
name = "softmax"
kind = "softmax"

[[imputers]]
name = "forest"
kind = "forest"
n_trees = 100

[[imputers]]
name = "mock-llm"
kind = "llm"
model = "mock-base"

[importance]
experiment = "E1a"
imputer = "softmax"
repeats = 5
"#,
        out.display(),
        std::thread::available_parallelism().map_or(4, |n| n.get()),
    );
    RunConfig::from_toml_str(&text).expect("valid config")
}

const REPORT_FILES: [&str; 6] = [
    "reports/report.json",
    "reports/report.md",
    "reports/macro_f1.csv",
    "reports/tvd.csv",
    "reports/vote_share.csv",
    "importance.json",
];

fn mean(ci: &Option<voteimpute::evaluation::ConfidenceInterval>) -> f64 {
    ci.as_ref().map_or(f64::NAN, |c| c.mean)
}

fn c6_pipeline(dirs: &[tempfile::TempDir; 2]) -> Outcome {
    let start = Instant::now();
    let first = run::run(&default_run_config(dirs[0].path(), 5000)).map_err(err)?;
    let elapsed = start.elapsed();
    ensure!(first.failures.is_empty(), "failures: {:?}", first.failures);
    ensure!(elapsed < Duration::from_secs(300), "grid took {elapsed:?}");
    run::run(&default_run_config(dirs[1].path(), 5000)).map_err(err)?;
    for f in REPORT_FILES {
        let a = std::fs::read(dirs[0].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = std::fs::read(dirs[1].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure!(a == b, "{f} differs between identical runs");
    }

    let report = run::build_report(dirs[0].path()).map_err(err)?;
    ensure!(report.is_complete() && report.cells.len() == 32, "incomplete report");
    let f1 = |exp: &str, imp: &str| mean(&report.cell(exp, imp).unwrap().macro_f1);
    let majority = f1("E1a", "majority");
    for imp in ["softmax", "forest", "mock-llm"] {
        ensure!(f1("E1a", imp) > majority, "E1a {imp} F1 {} not above majority {majority}", f1("E1a", imp));
    }
    let (with_pid, without) = (f1("E1a", "softmax"), f1("E1b", "softmax"));
    ensure!(without < with_pid, "softmax F1 E1a {with_pid} vs E1b {without}");

    let big = generate(&GeneratorSpec {
        n: 10_000,
        ..Default::default()
    })
    .map_err(err)?;
    let mut share = [0.0; N_CATEGORIES];
    for r in &big.dataset.respondents {
        let p = big.oracle.posterior(r).map_err(err)?;
        for (s, v) in share.iter_mut().zip(p) {
            *s += v / big.dataset.len() as f64;
        }
    }
    let labels: Vec<VoteChoice> = big.dataset.respondents.iter().map(|r| r.vote.unwrap()).collect();
    let oracle_tvd = tvd(&share, &true_vote_share(&labels).map_err(err)?.0);
    ensure!(oracle_tvd < 0.01, "oracle TVD {oracle_tvd} at n = 10000");

    Ok(format!(
        "grid in {:.1}s, deterministic; E1a F1 majority {majority:.3}, softmax {with_pid:.3}, forest {:.3}, mock-llm {:.3}; E1b softmax {without:.3}; oracle TVD {oracle_tvd:.4}",
        elapsed.as_secs_f64(),
        f1("E1a", "forest"),
        f1("E1a", "mock-llm"),
    ))
}

fn c7_convenience_bias(run_dir: &Path) -> Outcome {
    let report = run::build_report(run_dir).map_err(err)?;
    let tvd_of = |exp: &str, imp: &str| mean(&report.cell(exp, imp).unwrap().tvd);
    let mut detail = Vec::new();
    for imp in ["softmax", "forest"] {
        for col in ["a", "b"] {
            let (students, full) = (tvd_of(&format!("E2{col}"), imp), tvd_of(&format!("E1{col}"), imp));
            ensure!(students > full, "{imp} {col}: students-only TVD {students} not above {full}");
            detail.push(format!("{imp}/{col} {full:.3}->{students:.3}"));
        }
    }
    let text = std::fs::read_to_string(run_dir.join("importance.json")).map_err(|e| e.to_string())?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let ranking = doc["ranking"].as_array().ok_or("no ranking")?;
    let top = ranking[0]["item"].as_str().unwrap_or_default();
    ensure!(top == gles::PARTY_ID, "importance ranks {top} first");
    Ok(format!(
        "TVD E1->E2 {}; top importance {top} (drop {:.3}), next {} ({:.3})",
        detail.join(", "),
        ranking[0]["mean_drop"].as_f64().unwrap_or(f64::NAN),
        ranking[1]["item"].as_str().unwrap_or_default(),
        ranking[1]["mean_drop"].as_f64().unwrap_or(f64::NAN),
    ))
}

fn c8_wire_protocol() -> Outcome {
    let faults = [429, 500, 429, 503];
    let stub = StubServer::start(StubConfig {
        faults: faults.to_vec(),
        polls_until_done: 1,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (n, k) = (120, 2);
    let text = format!(
        r#"
out_dir = "{}"
seed = 5
max_workers = 4

[generator]
n = {n}
seed = 8

[grid]
k = {k}

[[imputers]]
name = "ft"
kind = "llm"
backend = "remote"
model = "base-model"
remote = {{ base_url = "{}", api_key_env = "VOTEIMPUTE_ACCEPTANCE_NO_KEY", backoff_base_ms = 1, poll_interval_ms = 1, top_logprobs = 5, max_in_flight = 4 }}
"#,
        dir.path().display(),
        stub.base_url()
    );
    let config = RunConfig::from_toml_str(&text).map_err(err)?;
    let first = run::run(&config).map_err(err)?;
    ensure!(first.failures.is_empty(), "failures: {:?}", first.failures);
    let report = run::build_report(dir.path()).map_err(err)?;
    ensure!(report.is_complete(), "incomplete report");
    let e1a = mean(&report.cell("E1a", "ft").unwrap().macro_f1);

    // per job: upload, create, two polls; one chat per test respondent per cell
    let cells = 8;
    let expected = cells * k * 4 + cells * n + faults.len();
    let issued = stub.requests() as usize;
    ensure!(issued == expected, "{issued} requests, expected {expected} including {} retries", faults.len());

    let reports = std::fs::read(dir.path().join("reports/report.json")).map_err(|e| e.to_string())?;
    run::run(&config).map_err(err)?;
    ensure!(stub.requests() as usize == issued, "prediction-cached rerun issued requests");
    // drop the prediction cache: fine-tunes and completions come from the response cache
    std::fs::remove_dir_all(dir.path().join("predictions")).map_err(|e| e.to_string())?;
    let again = run::run(&config).map_err(err)?;
    ensure!(again.fitted == again.tasks, "expected a full refit");
    ensure!(stub.requests() as usize == issued, "response-cached rerun issued {} requests", stub.requests() as usize - issued);
    let reports_again = std::fs::read(dir.path().join("reports/report.json")).map_err(|e| e.to_string())?;
    ensure!(reports == reports_again, "reports changed on cached rerun");
    Ok(format!(
        "{issued} requests incl. {} retried faults; 0 requests on cached reruns; E1a F1 {e1a:.3}",
        faults.len()
    ))
}

fn c9_completion_nll() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let len = rng.gen_range(0..=60);
        let lps: Vec<f64> = (0..len).map(|_| -rng.gen::<f64>().powi(2) * 12.0).collect();
        let k = rng.gen_range(0..=len);
        let nll = compute_completion_nll(&lps, k).map_err(err)?;
        // 1-based positions k+1..=len, accumulated back to front
        let mut expected = 0.0;
        for pos in (1..=len).rev() {
            if pos > k {
                expected -= lps[pos - 1];
            }
        }
        let d = (nll - expected).abs();
        ensure!(d <= 1e-12, "len {len}, k {k}: {nll} vs {expected}");
        worst = worst.max(d);
        let ones = compute_completion_nll(&vec![0.0; len], k).map_err(err)?;
        ensure!(ones == 0.0, "all-certain completion has NLL {ones}");
    }
    ensure!(compute_completion_nll(&[-1.0], 2).is_err(), "boundary past the end accepted");
    Ok(format!("10000 sequences, max deviation {worst:.1e}"))
}

fn main() -> ExitCode {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let run_dir = dirs[0].path().to_path_buf();
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("metric oracle equivalence", Box::new(c1_metric_oracles)),
        ("reference table regression", Box::new(c2_reference_table)),
        ("stratification", Box::new(c3_stratification)),
        ("softmax regression correctness", Box::new(c4_softmax)),
        ("restricted softmax contract", Box::new(c5_restricted_softmax)),
        ("end-to-end offline pipeline", Box::new(|| c6_pipeline(&dirs))),
        ("convenience-sample bias and importance", Box::new(move || c7_convenience_bias(&run_dir))),
        ("wire protocol against stub", Box::new(c8_wire_protocol)),
        ("completion NLL", Box::new(c9_completion_nll)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", checks.len());
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
