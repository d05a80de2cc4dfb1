//! Executes a run: every experiment cell × fold × imputer, then metrics and
//! reports.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::{BackendChoice, ImputerKind, RunConfig};
use super::ledger::{Ledger, LedgerEntry, OrderedCommitter, PredictionSource};
use super::report::{build_report, relative, write_report, ReportFormat, METRICS_FILE, TRUTH_FILE};
use crate::backend::cache::ResponseCache;
use crate::backend::mock::MockBackend;
use crate::backend::remote::RemoteBackend;
use crate::backend::{sha256_hex, Backend, BackendKind, CandidateSet, ModelHandle};
use crate::error::{Error, Result};
use crate::evaluation::rank_importance;
use crate::experiment::{experiment_grid_with, test_subset, training_subset, ExperimentSpec, FoldPlan};
use crate::imputer::{
    ExternalImputer, FitContext, ForestImputer, Imputer, LlmImputer, LlmMode, MajorityImputer, OracleImputer,
    SoftmaxImputer,
};
use crate::prompt::{export_finetune_file, render, PromptTemplate};
use crate::record::{read_predictions_csv, write_predictions_csv};
use crate::survey::{load_dataset_with, Codebook, Dataset, ReadOptions};
use crate::synthetic::{generate, Oracle};

/// What a finished run did.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub tasks: usize,
    pub fitted: usize,
    pub cached: usize,
    /// `experiment/imputer/fold: error` for each failed task.
    pub failures: Vec<String>,
}

/// The dataset a run works on, plus the generator's oracle if synthetic.
pub struct RunData {
    pub dataset: Dataset,
    pub oracle: Option<Arc<Oracle>>,
}

pub fn load_run_data(config: &RunConfig) -> Result<RunData> {
    if let Some(spec) = config.generator_spec()? {
        let g = generate(&spec)?;
        return Ok(RunData {
            dataset: g.dataset,
            oracle: Some(Arc::new(g.oracle)),
        });
    }
    let data = config
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("a run needs [data] or [generator]".into()))?;
    let options = ReadOptions {
        delimiter: data.delimiter as u8,
    };
    let dataset = match &data.codebook {
        Some(cb) => load_dataset_with(cb, &data.responses, options)?,
        None => {
            let file = std::fs::File::open(&data.responses).map_err(|e| Error::io(&data.responses, e))?;
            Dataset::read(crate::gles::codebook(), file, options)?
        }
    };
    Ok(RunData { dataset, oracle: None })
}

fn candidates(config: &RunConfig, template: &PromptTemplate, codebook: &Codebook) -> Result<CandidateSet> {
    CandidateSet::from_template(template, codebook, config.prompt.prefix_chars)
}

/// Instantiates the configured imputers.
pub fn build_imputers(config: &RunConfig, data: &RunData) -> Result<Vec<Box<dyn Imputer>>> {
    let template = config.template()?;
    let codebook = &data.dataset.codebook;
    let mut out: Vec<Box<dyn Imputer>> = Vec::new();
    for def in &config.imputers {
        let name = def.name.clone();
        let imputer: Box<dyn Imputer> = match &def.kind {
            ImputerKind::Majority => Box::new(MajorityImputer { name }),
            ImputerKind::Softmax(params) => Box::new(SoftmaxImputer {
                name,
                params: params.clone(),
            }),
            ImputerKind::Forest(params) => Box::new(ForestImputer {
                name,
                params: params.clone(),
            }),
            ImputerKind::External { dir } => Box::new(ExternalImputer { name, dir: dir.clone() }),
            ImputerKind::Oracle => Box::new(OracleImputer {
                name,
                oracle: data
                    .oracle
                    .clone()
                    .ok_or_else(|| Error::Config(format!("{}: the oracle needs a [generator]", def.name)))?,
            }),
            ImputerKind::Llm(llm) => {
                let cands = candidates(config, &template, codebook)?;
                let backend: Arc<dyn Backend> = match llm.backend {
                    BackendChoice::Mock => {
                        let prefixes = llm
                            .conditioning
                            .iter()
                            .map(|item| template.line_prefix(codebook, item))
                            .collect::<Result<Vec<_>>>()?;
                        Arc::new(MockBackend::new(cands.clone(), prefixes))
                    }
                    BackendChoice::Remote => {
                        let cache = ResponseCache::open(config.out_dir.join("cache"))?;
                        Arc::new(RemoteBackend::new(llm.remote.clone(), Some(cache))?)
                    }
                };
                let mode = if llm.zero_shot {
                    LlmMode::ZeroShot(ModelHandle {
                        backend_kind: match llm.backend {
                            BackendChoice::Mock => BackendKind::Mock,
                            BackendChoice::Remote => BackendKind::Remote,
                        },
                        model_id: llm.model.clone(),
                        finetuned_from: None,
                    })
                } else {
                    LlmMode::FineTune(llm.fine_tune_config())
                };
                Box::new(LlmImputer {
                    name,
                    backend,
                    template: template.clone(),
                    candidates: cands,
                    mode,
                })
            }
        };
        out.push(imputer);
    }
    Ok(out)
}

pub fn dataset_sha256(dataset: &Dataset) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(dataset)?.as_bytes()))
}

fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Per-task seed derived from the run seed and the cell.
pub fn task_seed(seed: u64, experiment: &str, fold: usize) -> u64 {
    let h = sha256_hex(format!("{seed}/{experiment}/{fold}").as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

fn write_truth(run_dir: &Path, dataset: &Dataset, plan: &FoldPlan) -> Result<PathBuf> {
    let path = run_dir.join(TRUTH_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["respondent_id", "fold", "vote"])?;
    for r in &dataset.respondents {
        let (Some(fold), Some(vote)) = (plan.fold_of(&r.id), r.vote) else {
            continue;
        };
        w.write_record([r.id.as_str(), &fold.to_string(), vote.key()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

struct Task<'a> {
    spec: &'a ExperimentSpec,
    fold: usize,
    imputer: &'a dyn Imputer,
}

struct TaskEnv<'a> {
    run_dir: &'a Path,
    dataset: &'a Dataset,
    dataset_sha: &'a str,
    seed: u64,
}

fn cache_key(env: &TaskEnv<'_>, task: &Task<'_>) -> String {
    let spec = task.spec;
    let key = json!({
        "dataset": env.dataset_sha,
        "experiment": spec.id,
        "filter": spec.train_filter,
        "ablated": spec.ablated_items,
        "k": spec.fold_plan.k,
        "fold_seed": spec.fold_plan.seed,
        "fold": task.fold,
        "seed": task_seed(env.seed, &spec.id, task.fold),
        "imputer": task.imputer.fingerprint(),
    });
    sha256_hex(key.to_string().as_bytes())
}

fn run_task(env: &TaskEnv<'_>, task: &Task<'_>) -> Result<(Vec<LedgerEntry>, PredictionSource)> {
    let spec = task.spec;
    let name = task.imputer.name();
    let dir = env.run_dir.join("predictions").join(&spec.id).join(name);
    let pred_path = dir.join(format!("fold{}.csv", task.fold));
    let key_path = dir.join(format!("fold{}.key", task.fold));
    let key = cache_key(env, task);
    let workdir = env.run_dir.join("finetune").join(name);
    let ft_path = workdir.join(format!("{}_fold{}.jsonl", spec.id, task.fold));
    let test = test_subset(env.dataset, &spec.fold_plan, task.fold, spec)?;
    let predictions_entry = |source| -> Result<LedgerEntry> {
        Ok(LedgerEntry::Predictions {
            experiment: spec.id.clone(),
            fold: task.fold,
            imputer: name.to_string(),
            file: relative(env.run_dir, &pred_path),
            sha256: file_sha256(&pred_path)?,
            key: key.clone(),
            source,
        })
    };
    let finetune_entry = || -> Result<LedgerEntry> {
        Ok(LedgerEntry::FinetuneFile {
            experiment: spec.id.clone(),
            fold: task.fold,
            imputer: name.to_string(),
            file: relative(env.run_dir, &ft_path),
            sha256: file_sha256(&ft_path)?,
        })
    };

    let cached = std::fs::read_to_string(&key_path).is_ok_and(|k| k.trim() == key) && pred_path.is_file();
    if cached {
        let ids: Vec<String> = read_predictions_csv(&pred_path)?
            .into_iter()
            .map(|r| r.respondent_id)
            .collect();
        let expected: Vec<&str> = test.respondents.iter().map(|r| r.id.as_str()).collect();
        if ids.iter().map(String::as_str).eq(expected) {
            let mut entries = Vec::new();
            if ft_path.is_file() {
                entries.push(finetune_entry()?);
            }
            entries.push(predictions_entry(PredictionSource::Cache)?);
            return Ok((entries, PredictionSource::Cache));
        }
    }

    let train = training_subset(env.dataset, &spec.fold_plan, task.fold, spec)?;
    let ctx = FitContext {
        experiment: &spec.id,
        fold: task.fold,
        seed: task_seed(env.seed, &spec.id, task.fold),
        ablated: &spec.ablated_items,
        workdir: &workdir,
    };
    let fitted = task.imputer.fit(&train, &ctx)?;
    let metadata = fitted.metadata();
    let preds = fitted.predict(&test)?;
    if let Some(bad) = preds.iter().find(|p| !p.is_simplex()) {
        return Err(Error::Backend(format!("{name}: prediction for {:?} is not a distribution", bad.respondent_id)));
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_predictions_csv(&preds, &pred_path)?;
    std::fs::write(&key_path, format!("{key}\n")).map_err(|e| Error::io(&key_path, e))?;

    let mut entries = vec![LedgerEntry::FoldTrained {
        experiment: spec.id.clone(),
        fold: task.fold,
        imputer: name.to_string(),
        n_train: train.len(),
        metadata: metadata.clone(),
    }];
    if ft_path.is_file() && metadata.get("training_file").is_some_and(|v| !v.is_null()) {
        entries.push(finetune_entry()?);
    }
    if let Some(job) = metadata.get("job").filter(|j| !j.is_null()) {
        entries.push(LedgerEntry::JobSubmitted {
            experiment: spec.id.clone(),
            fold: task.fold,
            imputer: name.to_string(),
            job: job.clone(),
        });
    }
    entries.push(predictions_entry(PredictionSource::Fit)?);
    Ok((entries, PredictionSource::Fit))
}

fn artifact(run_dir: &Path, kind: &str, path: &Path) -> Result<LedgerEntry> {
    Ok(LedgerEntry::Artifact {
        kind: kind.to_string(),
        file: relative(run_dir, path),
        sha256: file_sha256(path)?,
    })
}

fn run_importance(
    config: &RunConfig,
    data: &RunData,
    grid: &[ExperimentSpec],
    imputers: &[Box<dyn Imputer>],
    ledger: &Ledger,
) -> Result<()> {
    let Some(imp) = &config.importance else {
        return Ok(());
    };
    let spec = grid
        .iter()
        .find(|s| s.id == imp.experiment)
        .ok_or_else(|| Error::Config(format!("importance experiment {:?} is not in the grid", imp.experiment)))?;
    let imputer = imputers
        .iter()
        .find(|i| i.name() == imp.imputer)
        .ok_or_else(|| Error::Config(format!("importance imputer {:?} is not configured", imp.imputer)))?;
    let run_dir = &config.out_dir;
    let train = training_subset(&data.dataset, &spec.fold_plan, imp.fold, spec)?;
    let test = test_subset(&data.dataset, &spec.fold_plan, imp.fold, spec)?;
    let workdir = run_dir.join("finetune").join(imputer.name()).join("importance");
    let seed = task_seed(config.seed, &spec.id, imp.fold);
    let ctx = FitContext {
        experiment: &spec.id,
        fold: imp.fold,
        seed,
        ablated: &spec.ablated_items,
        workdir: &workdir,
    };
    let fitted = imputer.fit(&train, &ctx)?;
    let ranked = rank_importance(fitted.as_ref(), &test, imp.repeats, seed)?;
    let path = run_dir.join("importance.json");
    let doc = json!({
        "experiment": spec.id,
        "imputer": imputer.name(),
        "fold": imp.fold,
        "repeats": imp.repeats,
        "ranking": ranked,
    });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    ledger.append(&artifact(run_dir, "importance", &path)?)
}

/// Runs the whole grid. Task failures are recorded and reported as gaps;
/// they do not abort the run.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let data = load_run_data(config)?;
    let imputers = build_imputers(config, &data)?;
    let grid = experiment_grid_with(&data.dataset, &config.grid, config.seed)?;
    let run_dir = config.out_dir.clone();
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;

    let dataset_sha = dataset_sha256(&data.dataset)?;
    let ledger = Ledger::create(&run_dir)?;
    let config_json = serde_json::to_string(config)?;
    ledger.append(&LedgerEntry::RunStarted {
        config_sha256: sha256_hex(config_json.as_bytes()),
        dataset_sha256: dataset_sha.clone(),
        respondents: data.dataset.len(),
        experiments: grid.iter().map(|s| s.id.clone()).collect(),
        imputers: imputers.iter().map(|i| i.name().to_string()).collect(),
        k: config.grid.k,
        seed: config.seed,
        ci: config.ci.clone(),
    })?;
    let plan = &grid[0].fold_plan;
    let truth = write_truth(&run_dir, &data.dataset, plan)?;
    ledger.append(&LedgerEntry::Truth {
        file: relative(&run_dir, &truth),
        sha256: file_sha256(&truth)?,
    })?;

    let mut tasks = Vec::new();
    for spec in &grid {
        for fold in 0..plan.k {
            for imputer in &imputers {
                tasks.push(Task {
                    spec,
                    fold,
                    imputer: imputer.as_ref(),
                });
            }
        }
    }
    let env = TaskEnv {
        run_dir: &run_dir,
        dataset: &data.dataset,
        dataset_sha: &dataset_sha,
        seed: config.seed,
    };
    let committer = OrderedCommitter::new(&ledger);
    let fitted = AtomicUsize::new(0);
    let cached = AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let failures: Vec<(usize, String)> = pool.install(|| {
        tasks
            .par_iter()
            .enumerate()
            .map(|(i, task)| {
                let (entries, failure) = match run_task(&env, task) {
                    Ok((entries, source)) => {
                        match source {
                            PredictionSource::Fit => fitted.fetch_add(1, Ordering::Relaxed),
                            PredictionSource::Cache => cached.fetch_add(1, Ordering::Relaxed),
                        };
                        (entries, None)
                    }
                    Err(e) => {
                        tracing::warn!(experiment = %task.spec.id, fold = task.fold, imputer = task.imputer.name(), "{e}");
                        let entry = LedgerEntry::StepFailed {
                            experiment: task.spec.id.clone(),
                            fold: task.fold,
                            imputer: task.imputer.name().to_string(),
                            error: e.to_string(),
                        };
                        let msg = format!("{}/{}/fold{}: {e}", task.spec.id, task.imputer.name(), task.fold);
                        (vec![entry], Some(msg))
                    }
                };
                let committed = committer.commit(i, entries);
                match (failure, committed) {
                    (_, Err(e)) => Some((i, format!("ledger: {e}"))),
                    (Some(msg), Ok(())) => Some((i, msg)),
                    (None, Ok(())) => None,
                }
            })
            .filter_map(|x| x)
            .collect()
    });
    let mut failures: Vec<String> = failures.into_iter().map(|(_, m)| m).collect();

    if let Err(e) = run_importance(config, &data, &grid, &imputers, &ledger) {
        if e.is_config() {
            return Err(e);
        }
        failures.push(format!("importance: {e}"));
        ledger.append(&LedgerEntry::StepFailed {
            experiment: config.importance.as_ref().map_or_else(String::new, |i| i.experiment.clone()),
            fold: config.importance.as_ref().map_or(0, |i| i.fold),
            imputer: "importance".into(),
            error: e.to_string(),
        })?;
    }

    let report = build_report(&run_dir)?;
    let metrics_path = run_dir.join(METRICS_FILE);
    let mut text = serde_json::to_string_pretty(&json!({"folds": report.folds, "gaps": report.gaps}))?;
    text.push('\n');
    std::fs::write(&metrics_path, text).map_err(|e| Error::io(&metrics_path, e))?;
    ledger.append(&artifact(&run_dir, "metrics", &metrics_path)?)?;
    for format in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown] {
        for file in write_report(&run_dir, &report, format)? {
            ledger.append(&artifact(&run_dir, "report", &run_dir.join(file))?)?;
        }
    }
    ledger.append(&LedgerEntry::RunFinished {
        failures: failures.len(),
    })?;
    Ok(RunSummary {
        run_dir,
        tasks: tasks.len(),
        fitted: fitted.into_inner(),
        cached: cached.into_inner(),
        failures,
    })
}

/// Rebuilds report files of a finished (or partial) run and records any new
/// files in its ledger.
pub fn report(run_dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    let report = build_report(run_dir)?;
    let known: BTreeSet<String> = super::ledger::read_ledger(run_dir)?
        .iter()
        .filter_map(|e| e.file().map(str::to_string))
        .collect();
    let files = write_report(run_dir, &report, format)?;
    let ledger = Ledger::open(run_dir)?;
    for f in &files {
        if !known.contains(f) {
            ledger.append(&artifact(run_dir, "report", &run_dir.join(f))?)?;
        }
    }
    Ok(files.iter().map(|f| run_dir.join(f)).collect())
}

/// Writes the fine-tuning files the configured grid would submit, one per
/// experiment cell and fold, plus a manifest with their hashes.
pub fn export_finetune(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let data = load_run_data(config)?;
    let template = config.template()?;
    let grid = experiment_grid_with(&data.dataset, &config.grid, config.seed)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = Vec::new();
    let mut written = Vec::new();
    for spec in &grid {
        for fold in 0..spec.fold_plan.k {
            let train = training_subset(&data.dataset, &spec.fold_plan, fold, spec)?;
            let mut examples = train
                .respondents
                .iter()
                .map(|r| render(r, &train.codebook, &template, &spec.ablated_items, true))
                .collect::<Result<Vec<_>>>()?;
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            examples.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(task_seed(config.seed, &spec.id, fold)));
            let path = out_dir.join(format!("{}_fold{fold}.jsonl", spec.id));
            let n = export_finetune_file(&examples, &path)?;
            manifest.push(json!({
                "experiment": spec.id,
                "fold": fold,
                "file": relative(out_dir, &path),
                "examples": n,
                "sha256": file_sha256(&path)?,
            }));
            written.push(path);
        }
    }
    let path = out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&Value::Array(manifest))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}
