//! Fold metrics and summary tables computed from a run directory.
//!
//! Everything is derived from the ledger, the truth file and the prediction
//! files it references, so a report can be rebuilt from a copied run
//! directory. Cells without predictions are reported as gaps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::CiConfig;
use super::ledger::{read_ledger, LedgerEntry};
use crate::backend::sha256_hex;
use crate::error::{Error, Result};
use crate::evaluation::{bootstrap_ci, evaluate_fold, fold_ci, CiMethod, ConfidenceInterval, FoldMetrics};
use crate::record::read_predictions_csv;
use crate::vote::{VoteChoice, N_CATEGORIES};

pub const TRUTH_FILE: &str = "truth.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_DIR: &str = "reports";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" | "markdown-table" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub experiment: String,
    pub imputer: String,
    pub fold: usize,
    pub metrics: FoldMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub experiment: String,
    pub imputer: String,
    pub fold: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub experiment: String,
    pub imputer: String,
    pub folds: usize,
    pub missing_folds: Vec<usize>,
    pub macro_f1: Option<ConfidenceInterval>,
    pub tvd: Option<ConfidenceInterval>,
    /// Per category, canonical order.
    pub vote_share: Option<Vec<ConfidenceInterval>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiments: Vec<String>,
    pub imputers: Vec<String>,
    pub k: usize,
    pub ci: CiConfig,
    /// True vote share of the test folds, per category.
    pub truth_share: Vec<ConfidenceInterval>,
    pub cells: Vec<CellSummary>,
    pub folds: Vec<FoldResult>,
    pub gaps: Vec<Gap>,
}

impl RunReport {
    pub fn cell(&self, experiment: &str, imputer: &str) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.experiment == experiment && c.imputer == imputer)
    }

    pub fn is_complete(&self) -> bool {
        self.gaps.is_empty()
    }
}

/// Reads `truth.csv`: respondent id to (fold, vote).
pub fn read_truth(run_dir: &Path) -> Result<BTreeMap<String, (usize, VoteChoice)>> {
    let path = run_dir.join(TRUTH_FILE);
    let mut reader = csv::Reader::from_path(&path)?;
    let mut out = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let bad = |m: String| Error::Config(format!("{}: {m}", path.display()));
        let fold = row[1].parse().map_err(|e| bad(format!("fold {:?}: {e}", &row[1])))?;
        let vote = row[2].parse().map_err(|e| bad(format!("{e}")))?;
        out.insert(row[0].to_string(), (fold, vote));
    }
    Ok(out)
}

fn interval(values: &[f64], ci: &CiConfig) -> Result<ConfidenceInterval> {
    match ci.method {
        CiMethod::StudentT => fold_ci(values, ci.level),
        CiMethod::Bootstrap => bootstrap_ci(values, ci.level, ci.replicates, 0),
    }
}

pub fn build_report(run_dir: &Path) -> Result<RunReport> {
    let ledger = read_ledger(run_dir)?;
    let Some(LedgerEntry::RunStarted {
        experiments,
        imputers,
        k,
        ci,
        ..
    }) = ledger.first().cloned()
    else {
        return Err(Error::Config(format!("{}: ledger does not start a run", run_dir.display())));
    };
    let truth = read_truth(run_dir)?;
    let mut fold_truth: Vec<BTreeMap<String, VoteChoice>> = vec![BTreeMap::new(); k];
    for (id, (fold, vote)) in &truth {
        fold_truth
            .get_mut(*fold)
            .ok_or_else(|| Error::Config(format!("truth fold {fold} out of range")))?
            .insert(id.clone(), *vote);
    }

    let mut latest: BTreeMap<(String, String, usize), Result<(String, String), String>> = BTreeMap::new();
    for e in &ledger {
        match e {
            LedgerEntry::Predictions {
                experiment,
                fold,
                imputer,
                file,
                sha256,
                ..
            } => {
                latest.insert((experiment.clone(), imputer.clone(), *fold), Ok((file.clone(), sha256.clone())));
            }
            LedgerEntry::StepFailed {
                experiment,
                fold,
                imputer,
                error,
            } => {
                latest.insert((experiment.clone(), imputer.clone(), *fold), Err(error.clone()));
            }
            _ => {}
        }
    }

    let mut folds = Vec::new();
    let mut gaps = Vec::new();
    for experiment in &experiments {
        for imputer in &imputers {
            for fold in 0..k {
                let gap = |reason: String| Gap {
                    experiment: experiment.clone(),
                    imputer: imputer.clone(),
                    fold,
                    reason,
                };
                let (file, sha) = match latest.get(&(experiment.clone(), imputer.clone(), fold)) {
                    None => {
                        gaps.push(gap("not run".into()));
                        continue;
                    }
                    Some(Err(msg)) => {
                        gaps.push(gap(format!("failed: {msg}")));
                        continue;
                    }
                    Some(Ok(f)) => f,
                };
                let path = run_dir.join(file);
                let bytes = match std::fs::read(&path) {
                    Ok(b) => b,
                    Err(e) => {
                        gaps.push(gap(format!("{file}: {e}")));
                        continue;
                    }
                };
                if sha256_hex(&bytes) != *sha {
                    gaps.push(gap(format!("{file} changed after the run")));
                    continue;
                }
                let preds = read_predictions_csv(&path)?;
                if preds.len() != fold_truth[fold].len() {
                    gaps.push(gap(format!(
                        "{file} has {} predictions for {} test respondents",
                        preds.len(),
                        fold_truth[fold].len()
                    )));
                    continue;
                }
                folds.push(FoldResult {
                    experiment: experiment.clone(),
                    imputer: imputer.clone(),
                    fold,
                    metrics: evaluate_fold(&preds, &fold_truth[fold])?,
                });
            }
        }
    }

    let mut truth_share = Vec::with_capacity(N_CATEGORIES);
    let fold_shares: Vec<[f64; N_CATEGORIES]> = fold_truth
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| {
            let mut c = [0.0; N_CATEGORIES];
            for v in t.values() {
                c[v.index()] += 1.0 / t.len() as f64;
            }
            c
        })
        .collect();
    for c in 0..N_CATEGORIES {
        let values: Vec<f64> = fold_shares.iter().map(|s| s[c]).collect();
        truth_share.push(interval(&values, &ci)?);
    }

    let mut cells = Vec::new();
    for experiment in &experiments {
        for imputer in &imputers {
            let done: Vec<&FoldResult> = folds
                .iter()
                .filter(|f| f.experiment == *experiment && f.imputer == *imputer)
                .collect();
            let missing_folds = (0..k).filter(|fold| !done.iter().any(|f| f.fold == *fold)).collect();
            let summary = |get: &dyn Fn(&FoldMetrics) -> f64| -> Result<Option<ConfidenceInterval>> {
                if done.is_empty() {
                    return Ok(None);
                }
                let values: Vec<f64> = done.iter().map(|f| get(&f.metrics)).collect();
                interval(&values, &ci).map(Some)
            };
            let macro_f1 = summary(&|m| m.macro_f1)?;
            let tvd = summary(&|m| m.tvd)?;
            let vote_share = if done.is_empty() {
                None
            } else {
                Some(
                    (0..N_CATEGORIES)
                        .map(|c| summary(&|m| m.predicted_share.0[c]).map(|s| s.expect("non-empty")))
                        .collect::<Result<Vec<_>>>()?,
                )
            };
            cells.push(CellSummary {
                experiment: experiment.clone(),
                imputer: imputer.clone(),
                folds: done.len(),
                missing_folds,
                macro_f1,
                tvd,
                vote_share,
            });
        }
    }

    Ok(RunReport {
        experiments,
        imputers,
        k,
        ci,
        truth_share,
        cells,
        folds,
        gaps,
    })
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn bounds(ci: &ConfidenceInterval) -> (String, String) {
    match ci.bounds() {
        Some((lo, hi)) => (num(lo), num(hi)),
        None => (String::new(), String::new()),
    }
}

fn missing_list(cell: &CellSummary) -> String {
    cell.missing_folds
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn metric_csv(report: &RunReport, path: &Path, get: fn(&CellSummary) -> Option<&ConfidenceInterval>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["experiment", "imputer", "mean", "ci_low", "ci_high", "folds", "missing_folds"])?;
    for cell in &report.cells {
        let (mean, lo, hi) = match get(cell) {
            Some(ci) => {
                let (lo, hi) = bounds(ci);
                (num(ci.mean), lo, hi)
            }
            None => Default::default(),
        };
        w.write_record([
            cell.experiment.clone(),
            cell.imputer.clone(),
            mean,
            lo,
            hi,
            cell.folds.to_string(),
            missing_list(cell),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn share_csv(report: &RunReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["experiment", "imputer", "category", "share_pct", "ci_low_pct", "ci_high_pct"])?;
    let pct = |ci: &ConfidenceInterval| {
        let (lo, hi) = ci
            .bounds()
            .map_or((String::new(), String::new()), |(l, h)| (num(100.0 * l), num(100.0 * h)));
        (num(100.0 * ci.mean), lo, hi)
    };
    for experiment in &report.experiments {
        let mut rows: Vec<(&str, &[ConfidenceInterval])> = vec![("truth", &report.truth_share)];
        for imputer in &report.imputers {
            if let Some(s) = report.cell(experiment, imputer).and_then(|c| c.vote_share.as_deref()) {
                rows.push((imputer, s));
            }
        }
        for (imputer, shares) in rows {
            for v in VoteChoice::ALL {
                let (mean, lo, hi) = pct(&shares[v.index()]);
                w.write_record([experiment.as_str(), imputer, v.key(), &mean, &lo, &hi])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn md_cell(ci: Option<&ConfidenceInterval>, cell: &CellSummary, k: usize) -> String {
    let Some(ci) = ci else {
        return "gap".into();
    };
    let mut s = match ci.half_width {
        Some(h) => format!("{:.3} ± {:.3}", ci.mean, h),
        None => format!("{:.3}", ci.mean),
    };
    if cell.folds < k {
        let _ = write!(s, " ({}/{k} folds)", cell.folds);
    }
    s
}

pub fn markdown(report: &RunReport) -> String {
    let mut out = String::new();
    let level = (report.ci.level * 100.0).round();
    let header = |out: &mut String| {
        let _ = writeln!(out, "| imputer | {} |", report.experiments.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(report.experiments.len()));
    };
    for (title, get) in [
        (
            "Macro F1 (higher is better)",
            (|c: &CellSummary| c.macro_f1.as_ref()) as fn(&CellSummary) -> Option<&ConfidenceInterval>,
        ),
        ("Total variation distance (lower is better)", |c: &CellSummary| c.tvd.as_ref()),
    ] {
        let _ = writeln!(out, "## {title}\n\nFold mean ± {level}% CI half width over {} folds.\n", report.k);
        header(&mut out);
        for imputer in &report.imputers {
            let cells: Vec<String> = report
                .experiments
                .iter()
                .map(|e| {
                    let cell = report.cell(e, imputer).expect("cell per experiment and imputer");
                    md_cell(get(cell), cell, report.k)
                })
                .collect();
            let _ = writeln!(out, "| {imputer} | {} |", cells.join(" | "));
        }
        out.push('\n');
    }

    let _ = writeln!(out, "## Aggregated vote share (%)\n");
    let labels: Vec<&str> = VoteChoice::ALL.iter().map(|v| v.label()).collect();
    for experiment in &report.experiments {
        let _ = writeln!(out, "### {experiment}\n");
        let _ = writeln!(out, "| imputer | {} |", labels.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(N_CATEGORIES));
        let row = |name: &str, shares: &[ConfidenceInterval]| {
            let cells: Vec<String> = shares.iter().map(|c| format!("{:.1}", 100.0 * c.mean)).collect();
            format!("| {name} | {} |\n", cells.join(" | "))
        };
        out.push_str(&row("truth", &report.truth_share));
        for imputer in &report.imputers {
            match report.cell(experiment, imputer).and_then(|c| c.vote_share.as_deref()) {
                Some(s) => out.push_str(&row(imputer, s)),
                None => {
                    let _ = writeln!(out, "| {imputer} |{}", " gap |".repeat(N_CATEGORIES));
                }
            }
        }
        out.push('\n');
    }

    if !report.gaps.is_empty() {
        let _ = writeln!(out, "## Gaps\n");
        for g in &report.gaps {
            let _ = writeln!(out, "- {} / {} / fold {}: {}", g.experiment, g.imputer, g.fold, g.reason);
        }
    }
    out
}

/// Writes report files under `<run_dir>/reports`; returns their paths
/// relative to the run directory.
pub fn write_report(run_dir: &Path, report: &RunReport, format: ReportFormat) -> Result<Vec<String>> {
    let dir = run_dir.join(REPORT_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rel = |name: &str| format!("{REPORT_DIR}/{name}");
    let files = match format {
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(report)?;
            text.push('\n');
            write_file(&dir.join("report.json"), &text)?;
            vec![rel("report.json")]
        }
        ReportFormat::Csv => {
            metric_csv(report, &dir.join("macro_f1.csv"), |c| c.macro_f1.as_ref())?;
            metric_csv(report, &dir.join("tvd.csv"), |c| c.tvd.as_ref())?;
            share_csv(report, &dir.join("vote_share.csv"))?;
            vec![rel("macro_f1.csv"), rel("tvd.csv"), rel("vote_share.csv")]
        }
        ReportFormat::Markdown => {
            write_file(&dir.join("report.md"), &markdown(report))?;
            vec![rel("report.md")]
        }
    };
    Ok(files)
}

pub(crate) fn relative(run_dir: &Path, path: &Path) -> String {
    path.strip_prefix(run_dir)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}
