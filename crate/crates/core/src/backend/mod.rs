//! Language-model backends behind one interface.
//!
//! Zero-shot and fine-tuned models differ only in their [`ModelHandle`]; both
//! go through the same first-token extraction in [`extract`].

pub mod cache;
pub mod extract;
pub mod mock;
pub mod remote;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::ChatExample;
use crate::record::PredictionRecord;

pub use extract::{compute_completion_nll, restricted_softmax, CandidateSet};

/// Fine-tuning parameters passed through to the training service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    pub base_model: String,
    pub epochs: u32,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub batch_size: u32,
    /// Provider-specific keys merged into the job request unchanged.
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            base_model: String::new(),
            epochs: 3,
            lora_rank: 256,
            lora_alpha: 8,
            batch_size: 1,
            extra: BTreeMap::new(),
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_model.is_empty() {
            return Err(Error::Config("fine-tune base_model is empty".into()));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("lora_rank", self.lora_rank),
            ("lora_alpha", self.lora_alpha),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("fine-tune {name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelHandle {
    pub backend_kind: BackendKind,
    pub model_id: String,
    pub finetuned_from: Option<String>,
}

/// Fine-tuning job metadata kept in the run ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub status: String,
    pub created_at: Option<i64>,
    pub finished_at: Option<i64>,
    pub training_file_sha256: String,
    pub config: FineTuneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneOutcome {
    pub handle: ModelHandle,
    pub job: JobRecord,
}

/// Top alternatives at the first generated position.
pub type TopTokens = Vec<(String, f64)>;

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Submits a fine-tuning job for a JSON-lines chat file and waits for it.
    fn fine_tune(&self, train_file: &Path, config: &FineTuneConfig) -> Result<FineTuneOutcome>;

    /// First-position top tokens for each prompt, in prompt order.
    fn first_token_logprobs(&self, model: &ModelHandle, prompts: &[ChatExample]) -> Result<Vec<TopTokens>>;
}

/// Extracts one prediction for a prompt without an assistant turn.
pub fn predict(
    backend: &dyn Backend,
    model: &ModelHandle,
    respondent_id: &str,
    prompt: &ChatExample,
    candidates: &CandidateSet,
) -> Result<PredictionRecord> {
    let mut out = predict_many(backend, model, &[(respondent_id.to_string(), prompt.clone())], candidates)?;
    Ok(out.remove(0))
}

/// Batch form of [`predict`]; results follow input order.
pub fn predict_many(
    backend: &dyn Backend,
    model: &ModelHandle,
    prompts: &[(String, ChatExample)],
    candidates: &CandidateSet,
) -> Result<Vec<PredictionRecord>> {
    if let Some((id, _)) = prompts.iter().find(|(_, p)| p.assistant.is_some()) {
        return Err(Error::InvalidArgument(format!(
            "prompt for {id:?} already contains an assistant turn"
        )));
    }
    let examples: Vec<ChatExample> = prompts.iter().map(|(_, p)| p.clone()).collect();
    let tops = backend.first_token_logprobs(model, &examples)?;
    if tops.len() != prompts.len() {
        return Err(Error::Backend(format!(
            "backend returned {} results for {} prompts",
            tops.len(),
            prompts.len()
        )));
    }
    prompts
        .iter()
        .zip(&tops)
        .map(|((id, _), top)| extract::extract(id, top, candidates))
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
