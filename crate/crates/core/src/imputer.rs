//! The common imputer interface and its implementations.
//!
//! An [`Imputer`] is configuration; fitting it on one training subset yields
//! a [`FittedImputer`] that predicts a test set. Every implementation emits
//! the same [`PredictionRecord`] shape, so evaluation cannot tell them apart.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::backend::{predict_many, Backend, CandidateSet, FineTuneConfig, FineTuneOutcome, ModelHandle};
use crate::baselines::{fit_forest, fit_majority, fit_softmax, Encoder, ForestModel, ForestParams, MajorityModel, SoftmaxModel, SoftmaxParams};
use crate::error::{Error, Result};
use crate::prompt::{export_finetune_file, render, PromptTemplate};
use crate::record::{read_predictions_csv, PredictionRecord};
use crate::survey::Dataset;
use crate::synthetic::Oracle;

/// Where and for which grid cell a model is being fit.
#[derive(Debug, Clone)]
pub struct FitContext<'a> {
    pub experiment: &'a str,
    pub fold: usize,
    pub seed: u64,
    /// Items removed in this cell (already absent from the datasets).
    pub ablated: &'a BTreeSet<String>,
    /// Scratch directory for artifacts such as fine-tuning files.
    pub workdir: &'a Path,
}

pub trait Imputer: Send + Sync {
    fn name(&self) -> &str;

    /// Short implementation tag (`majority`, `softmax`, ...).
    fn kind(&self) -> &'static str;

    /// Canonical description of the configuration; part of cache keys.
    fn fingerprint(&self) -> Value;

    fn fit(&self, train: &Dataset, ctx: &FitContext<'_>) -> Result<Box<dyn FittedImputer>>;
}

pub trait FittedImputer: Send + Sync {
    /// One record per test respondent, in test order.
    fn predict(&self, test: &Dataset) -> Result<Vec<PredictionRecord>>;

    /// Facts about the fit worth keeping in the run ledger.
    fn metadata(&self) -> Value {
        Value::Null
    }
}

pub struct MajorityImputer {
    pub name: String,
}

struct FittedMajority(MajorityModel);

impl Imputer for MajorityImputer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "majority"
    }

    fn fingerprint(&self) -> Value {
        json!({"kind": "majority"})
    }

    fn fit(&self, train: &Dataset, _ctx: &FitContext<'_>) -> Result<Box<dyn FittedImputer>> {
        Ok(Box::new(FittedMajority(fit_majority(train)?)))
    }
}

impl FittedImputer for FittedMajority {
    fn predict(&self, test: &Dataset) -> Result<Vec<PredictionRecord>> {
        Ok(self.0.predict(test.respondents.iter().map(|r| r.id.clone())))
    }

    fn metadata(&self) -> Value {
        json!({"label": self.0.label})
    }
}

pub struct SoftmaxImputer {
    pub name: String,
    pub params: SoftmaxParams,
}

struct FittedSoftmax {
    encoder: Encoder,
    model: SoftmaxModel,
}

impl Imputer for SoftmaxImputer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "softmax"
    }

    fn fingerprint(&self) -> Value {
        json!({"kind": "softmax", "params": self.params})
    }

    fn fit(&self, train: &Dataset, _ctx: &FitContext<'_>) -> Result<Box<dyn FittedImputer>> {
        let encoder = Encoder::fit(train, &BTreeSet::new());
        let model = fit_softmax(&encoder.transform(train)?, &self.params)?;
        Ok(Box::new(FittedSoftmax { encoder, model }))
    }
}

impl FittedImputer for FittedSoftmax {
    fn predict(&self, test: &Dataset) -> Result<Vec<PredictionRecord>> {
        self.model.predict(&self.encoder.transform(test)?)
    }

    fn metadata(&self) -> Value {
        json!({
            "converged": self.model.converged,
            "iterations": self.model.iterations,
            "grad_norm": self.model.grad_norm,
            "features": self.model.n_features,
        })
    }
}

pub struct ForestImputer {
    pub name: String,
    pub params: ForestParams,
}

struct FittedForest {
    encoder: Encoder,
    model: ForestModel,
}

impl Imputer for ForestImputer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "forest"
    }

    fn fingerprint(&self) -> Value {
        json!({"kind": "forest", "params": self.params})
    }

    fn fit(&self, train: &Dataset, ctx: &FitContext<'_>) -> Result<Box<dyn FittedImputer>> {
        let encoder = Encoder::fit(train, &BTreeSet::new());
        let params = ForestParams {
            seed: self.params.seed ^ ctx.seed,
            ..self.params.clone()
        };
        let model = fit_forest(&encoder.transform(train)?, &params)?;
        Ok(Box::new(FittedForest { encoder, model }))
    }
}

impl FittedImputer for FittedForest {
    fn predict(&self, test: &Dataset) -> Result<Vec<PredictionRecord>> {
        self.model.predict(&self.encoder.transform(test)?)
    }

    fn metadata(&self) -> Value {
        json!({
            "trees": self.model.trees.len(),
            "nodes": self.model.trees.iter().map(|t| t.nodes.len()).sum::<usize>(),
            "seed": self.model.params.seed,
        })
    }
}

/// How a language-model imputer obtains its model.
#[derive(Debug, Clone, PartialEq)]
pub enum LlmMode {
    /// Fine-tune on each training subset.
    FineTune(FineTuneConfig),
    /// Query an existing model without training.
    ZeroShot(ModelHandle),
}

pub struct LlmImputer {
    pub name: String,
    pub backend: Arc<dyn Backend>,
    pub template: PromptTemplate,
    pub candidates: CandidateSet,
    pub mode: LlmMode,
}

struct FittedLlm {
    backend: Arc<dyn Backend>,
    template: PromptTemplate,
    candidates: CandidateSet,
    ablated: BTreeSet<String>,
    handle: ModelHandle,
    outcome: Option<FineTuneOutcome>,
    training_file: Option<PathBuf>,
}

impl Imputer for LlmImputer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "llm"
    }

    fn fingerprint(&self) -> Value {
        let mode = match &self.mode {
            LlmMode::FineTune(c) => json!({"fine_tune": c}),
            LlmMode::ZeroShot(h) => json!({"zero_shot": h}),
        };
        json!({
            "kind": "llm",
            "backend": self.backend.kind(),
            "template": self.template,
            "candidates": self.candidates,
            "mode": mode,
        })
    }

    fn fit(&self, train: &Dataset, ctx: &FitContext<'_>) -> Result<Box<dyn FittedImputer>> {
        let (handle, outcome, training_file) = match &self.mode {
            LlmMode::ZeroShot(handle) => (handle.clone(), None, None),
            LlmMode::FineTune(config) => {
                let mut examples = train
                    .respondents
                    .iter()
                    .map(|r| render(r, &train.codebook, &self.template, ctx.ablated, true))
                    .collect::<Result<Vec<_>>>()?;
                examples.shuffle(&mut ChaCha8Rng::seed_from_u64(ctx.seed));
                std::fs::create_dir_all(ctx.workdir).map_err(|e| Error::io(ctx.workdir, e))?;
                let path = ctx.workdir.join(format!("{}_fold{}.jsonl", ctx.experiment, ctx.fold));
                export_finetune_file(&examples, &path)?;
                let outcome = self.backend.fine_tune(&path, config)?;
                (outcome.handle.clone(), Some(outcome), Some(path))
            }
        };
        Ok(Box::new(FittedLlm {
            backend: Arc::clone(&self.backend),
            template: self.template.clone(),
            candidates: self.candidates.clone(),
            ablated: ctx.ablated.clone(),
            handle,
            outcome,
            training_file,
        }))
    }
}

impl FittedImputer for FittedLlm {
    fn predict(&self, test: &Dataset) -> Result<Vec<PredictionRecord>> {
        let prompts = test
            .respondents
            .iter()
            .map(|r| Ok((r.id.clone(), render(r, &test.codebook, &self.template, &self.ablated, false)?)))
            .collect::<Result<Vec<_>>>()?;
        predict_many(self.backend.as_ref(), &self.handle, &prompts, &self.candidates)
    }

    fn metadata(&self) -> Value {
        json!({
            "model": self.handle,
            "job": self.outcome.as_ref().map(|o| &o.job),
            "training_file": self.training_file,
        })
    }
}

/// Reads predictions produced elsewhere from
/// `<dir>/<experiment>/fold<k>.csv` in the prediction CSV format.
pub struct ExternalImputer {
    pub name: String,
    pub dir: PathBuf,
}

struct FittedExternal {
    path: PathBuf,
}

impl Imputer for ExternalImputer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "external"
    }

    fn fingerprint(&self) -> Value {
        json!({"kind": "external", "dir": self.dir})
    }

    fn fit(&self, _train: &Dataset, ctx: &FitContext<'_>) -> Result<Box<dyn FittedImputer>> {
        let path = self.dir.join(ctx.experiment).join(format!("fold{}.csv", ctx.fold));
        if !path.is_file() {
            return Err(Error::Config(format!("external predictions {} not found", path.display())));
        }
        Ok(Box::new(FittedExternal { path }))
    }
}

impl FittedImputer for FittedExternal {
    fn predict(&self, test: &Dataset) -> Result<Vec<PredictionRecord>> {
        let mut by_id: HashMap<String, PredictionRecord> = HashMap::new();
        for r in read_predictions_csv(&self.path)? {
            let id = r.respondent_id.clone();
            if by_id.insert(id.clone(), r).is_some() {
                return Err(Error::IdMismatch(format!("{}: duplicate respondent {id:?}", self.path.display())));
            }
        }
        let out = test
            .respondents
            .iter()
            .map(|r| {
                by_id.remove(&r.id).ok_or_else(|| {
                    Error::IdMismatch(format!("{}: no prediction for {:?}", self.path.display(), r.id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(extra) = by_id.keys().min() {
            return Err(Error::IdMismatch(format!(
                "{}: {extra:?} is not in the test fold",
                self.path.display()
            )));
        }
        Ok(out)
    }

    fn metadata(&self) -> Value {
        json!({"file": self.path})
    }
}

/// Bayes-optimal predictions from a synthetic generator's true posterior.
pub struct OracleImputer {
    pub name: String,
    pub oracle: Arc<Oracle>,
}

struct FittedOracle(Arc<Oracle>);

impl Imputer for OracleImputer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "oracle"
    }

    fn fingerprint(&self) -> Value {
        json!({"kind": "oracle", "spec": self.oracle.spec()})
    }

    fn fit(&self, _train: &Dataset, _ctx: &FitContext<'_>) -> Result<Box<dyn FittedImputer>> {
        Ok(Box::new(FittedOracle(Arc::clone(&self.oracle))))
    }
}

impl FittedImputer for FittedOracle {
    fn predict(&self, test: &Dataset) -> Result<Vec<PredictionRecord>> {
        test.respondents
            .iter()
            .map(|r| Ok(PredictionRecord::from_probs(r.id.clone(), self.0.posterior(r)?)))
            .collect()
    }
}
