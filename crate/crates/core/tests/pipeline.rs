use std::fs;
use std::path::Path;

use voteimpute::run::{self, read_ledger, LedgerEntry, ReportFormat, RunConfig};

fn config(out: &Path, extra: &str) -> RunConfig {
    let text = format!(
        r#"
out_dir = "{}"
seed = 11
max_workers = 3

[generator]
n = 400
seed = 5

[grid]
k = 3

[[imputers]]
name = "majority"
kind = "majority"

[[imputers]]
name = "softmax"
kind = "softmax"

[[imputers]]
name = "forest"
kind = "forest"
n_trees = 8

[[imputers]]
name = "mock-llm"
kind = "llm"
model = "mock-base"
{extra}
"#,
        out.display()
    );
    RunConfig::from_toml_str(&text).unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

const REPORT_FILES: [&str; 5] = [
    "reports/report.json",
    "reports/report.md",
    "reports/macro_f1.csv",
    "reports/tvd.csv",
    "reports/vote_share.csv",
];

#[test]
fn offline_run_is_deterministic_and_cached() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run::run(&config(a.path(), "")).unwrap();
    assert!(first.failures.is_empty(), "{:?}", first.failures);
    assert_eq!(first.tasks, 8 * 3 * 4);
    assert_eq!(first.fitted, first.tasks);
    run::run(&config(b.path(), "")).unwrap();
    for f in REPORT_FILES.iter().chain(&["metrics.json", "truth.csv"]) {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }

    let again = run::run(&config(a.path(), "")).unwrap();
    assert_eq!(again.cached, again.tasks);
    assert_eq!(again.fitted, 0);
    for f in REPORT_FILES {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }

    // every referenced artifact exists, and is referenced once
    let ledger = read_ledger(a.path()).unwrap();
    let mut files: Vec<&str> = ledger.iter().filter_map(LedgerEntry::file).collect();
    for f in &files {
        assert!(a.path().join(f).is_file(), "{f}");
    }
    let n = files.len();
    files.sort();
    files.dedup();
    assert_eq!(files.len(), n);

    let report = run::build_report(a.path()).unwrap();
    assert!(report.is_complete());
    assert_eq!(report.cells.len(), 8 * 4);
    assert_eq!(
        report.experiments,
        ["E1a", "E1b", "E2a", "E2b", "E3a", "E3b", "E4a", "E4b"]
    );
}

#[test]
fn vote_share_rows_sum_to_one_hundred() {
    let dir = tempfile::tempdir().unwrap();
    run::run(&config(dir.path(), "")).unwrap();
    let mut reader = csv::Reader::from_path(dir.path().join("reports/vote_share.csv")).unwrap();
    let mut sums: std::collections::BTreeMap<(String, String), f64> = Default::default();
    for row in reader.records() {
        let row = row.unwrap();
        *sums.entry((row[0].to_string(), row[1].to_string())).or_default() += row[3].parse::<f64>().unwrap();
    }
    assert_eq!(sums.len(), 8 * 5);
    for (k, s) in sums {
        assert!((s - 100.0).abs() <= 0.1, "{k:?}: {s}");
    }
}

#[test]
fn external_predictions_score_like_native_ones() {
    let dir = tempfile::tempdir().unwrap();
    run::run(&config(dir.path(), "")).unwrap();
    // reuse the softmax prediction files as if another tool had written them
    let ext = tempfile::tempdir().unwrap();
    for exp in ["E1a", "E1b", "E2a", "E2b", "E3a", "E3b", "E4a", "E4b"] {
        fs::create_dir_all(ext.path().join(exp)).unwrap();
        for fold in 0..3 {
            fs::copy(
                dir.path().join(format!("predictions/{exp}/softmax/fold{fold}.csv")),
                ext.path().join(format!("{exp}/fold{fold}.csv")),
            )
            .unwrap();
        }
    }
    let out = tempfile::tempdir().unwrap();
    let extra = format!("\n[[imputers]]\nname = \"catboost\"\nkind = \"external\"\ndir = \"{}\"\n", ext.path().display());
    run::run(&config(out.path(), &extra)).unwrap();
    let report = run::build_report(out.path()).unwrap();
    for exp in &report.experiments {
        let native = report.cell(exp, "softmax").unwrap();
        let external = report.cell(exp, "catboost").unwrap();
        assert_eq!(native.macro_f1, external.macro_f1);
        assert_eq!(native.tvd, external.tvd);
        assert_eq!(native.vote_share, external.vote_share);
    }
}

#[test]
fn failures_become_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let ext = tempfile::tempdir().unwrap();
    let extra = format!("\n[[imputers]]\nname = \"partial\"\nkind = \"external\"\ndir = \"{}\"\n", ext.path().display());
    let summary = run::run(&config(dir.path(), &extra)).unwrap();
    assert_eq!(summary.failures.len(), 8 * 3);
    let report = run::build_report(dir.path()).unwrap();
    assert!(!report.is_complete());
    let cell = report.cell("E1a", "partial").unwrap();
    assert_eq!(cell.folds, 0);
    assert_eq!(cell.missing_folds, [0, 1, 2]);
    assert!(cell.macro_f1.is_none());
    assert!(report.cell("E1a", "softmax").unwrap().macro_f1.is_some());
    let md = fs::read_to_string(dir.path().join("reports/report.md")).unwrap();
    assert!(md.contains("| partial | gap |"));
    assert!(md.contains("## Gaps"));
}

#[test]
fn report_command() {
    let empty = tempfile::tempdir().unwrap();
    assert!(run::report(empty.path(), ReportFormat::Csv).is_err());
    let dir = tempfile::tempdir().unwrap();
    run::run(&config(dir.path(), "")).unwrap();
    let before = read(&dir.path().join("reports/report.md"));
    let n_entries = read_ledger(dir.path()).unwrap().len();
    let files = run::report(dir.path(), ReportFormat::Markdown).unwrap();
    assert_eq!(files, [dir.path().join("reports/report.md")]);
    assert_eq!(read(&files[0]), before);
    // already referenced: no new ledger entry
    assert_eq!(read_ledger(dir.path()).unwrap().len(), n_entries);
}

#[test]
fn test_folds_are_identical_across_cells() {
    let dir = tempfile::tempdir().unwrap();
    run::run(&config(dir.path(), "")).unwrap();
    for fold in 0..3 {
        let ids = |exp: &str| -> Vec<String> {
            voteimpute::record::read_predictions_csv(&dir.path().join(format!("predictions/{exp}/majority/fold{fold}.csv")))
                .unwrap()
                .into_iter()
                .map(|r| r.respondent_id)
                .collect()
        };
        let reference = ids("E1a");
        for exp in ["E1b", "E2a", "E2b", "E3a", "E3b", "E4a", "E4b"] {
            assert_eq!(ids(exp), reference, "{exp} fold {fold}");
        }
    }
}

#[test]
fn export_finetune_matches_run_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    run::run(&cfg).unwrap();
    let out = tempfile::tempdir().unwrap();
    let files = run::export_finetune(&cfg, out.path()).unwrap();
    assert_eq!(files.len(), 8 * 3 + 1);
    assert_eq!(
        read(&out.path().join("E2b_fold1.jsonl")),
        read(&dir.path().join("finetune/mock-llm/E2b_fold1.jsonl"))
    );
}
