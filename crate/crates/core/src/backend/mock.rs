//! Deterministic offline stand-in for a fine-tunable chat model.
//!
//! Fine-tuning memorizes label counts keyed by one conditioning line of the
//! user text: the first configured line prefix found in the example (by
//! default party identification, then employment). Prediction returns the
//! add-one smoothed conditional distribution for the query's conditioning
//! line, or the smoothed marginal when the line is absent or unseen. The
//! distribution is emitted as first-token logprobs so that the ordinary
//! extraction path applies.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use super::{
    sha256_hex, Backend, BackendKind, CandidateSet, FineTuneConfig, FineTuneOutcome, JobRecord, ModelHandle,
    TopTokens,
};
use crate::error::{Error, Result};
use crate::prompt::{read_finetune_file, ChatExample};
use crate::vote::N_CATEGORIES;

#[derive(Debug, Clone, PartialEq)]
pub struct MockModel {
    conditioning: Vec<String>,
    by_line: HashMap<String, [u64; N_CATEGORIES]>,
    marginal: [u64; N_CATEGORIES],
}

fn smoothed(counts: &[u64; N_CATEGORIES]) -> [f64; N_CATEGORIES] {
    let n: u64 = counts.iter().sum();
    let denom = (n + N_CATEGORIES as u64) as f64;
    counts.map(|c| (c + 1) as f64 / denom)
}

impl MockModel {
    pub fn fit(examples: &[ChatExample], candidates: &CandidateSet, conditioning: &[String]) -> Result<Self> {
        let mut model = MockModel {
            conditioning: conditioning.to_vec(),
            by_line: HashMap::new(),
            marginal: [0; N_CATEGORIES],
        };
        for (i, ex) in examples.iter().enumerate() {
            let answer = ex.assistant.as_deref().ok_or(Error::MissingAssistant { index: i })?;
            let vote = candidates
                .match_answer(answer)
                .ok_or_else(|| Error::Backend(format!("example {i}: answer {answer:?} is not a vote category")))?;
            model.marginal[vote.index()] += 1;
            if let Some(line) = model.conditioning_line(&ex.user) {
                model.by_line.entry(line.to_string()).or_insert([0; N_CATEGORIES])[vote.index()] += 1;
            }
        }
        Ok(model)
    }

    fn conditioning_line<'a>(&self, user: &'a str) -> Option<&'a str> {
        self.conditioning
            .iter()
            .find_map(|prefix| user.lines().find(|l| l.starts_with(prefix.as_str())))
    }

    pub fn distribution(&self, user: &str) -> [f64; N_CATEGORIES] {
        let counts = self
            .conditioning_line(user)
            .and_then(|line| self.by_line.get(line))
            .unwrap_or(&self.marginal);
        smoothed(counts)
    }
}

/// Mock backend holding memorized models in process.
pub struct MockBackend {
    candidates: CandidateSet,
    conditioning: Vec<String>,
    models: Mutex<HashMap<String, Arc<MockModel>>>,
}

impl MockBackend {
    /// `conditioning` lists user-line prefixes in priority order.
    pub fn new(candidates: CandidateSet, conditioning: Vec<String>) -> Self {
        MockBackend {
            candidates,
            conditioning,
            models: Mutex::new(HashMap::new()),
        }
    }

    pub fn model(&self, model_id: &str) -> Option<Arc<MockModel>> {
        self.models.lock().expect("mock registry poisoned").get(model_id).cloned()
    }
}

impl Backend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn fine_tune(&self, train_file: &Path, config: &FineTuneConfig) -> Result<FineTuneOutcome> {
        config.validate()?;
        let bytes = std::fs::read(train_file).map_err(|e| Error::io(train_file, e))?;
        let digest = sha256_hex(&bytes);
        let examples = read_finetune_file(train_file)?;
        let model = MockModel::fit(&examples, &self.candidates, &self.conditioning)?;
        let model_id = format!("mock-ft:{}:{}", config.base_model, &digest[..16]);
        self.models
            .lock()
            .expect("mock registry poisoned")
            .insert(model_id.clone(), Arc::new(model));
        Ok(FineTuneOutcome {
            handle: ModelHandle {
                backend_kind: BackendKind::Mock,
                model_id: model_id.clone(),
                finetuned_from: Some(config.base_model.clone()),
            },
            job: JobRecord {
                job_id: model_id,
                status: "succeeded".into(),
                created_at: None,
                finished_at: None,
                training_file_sha256: digest,
                config: config.clone(),
            },
        })
    }

    /// Unknown (e.g. never fine-tuned) models answer uniformly.
    fn first_token_logprobs(&self, model: &ModelHandle, prompts: &[ChatExample]) -> Result<Vec<TopTokens>> {
        let fitted = self.model(&model.model_id);
        Ok(prompts
            .iter()
            .map(|p| {
                let probs = match &fitted {
                    Some(m) => m.distribution(&p.user),
                    None => [1.0 / N_CATEGORIES as f64; N_CATEGORIES],
                };
                self.candidates
                    .iter()
                    .map(|c| (c.prefix.clone(), probs[c.vote.index()].ln()))
                    .collect()
            })
            .collect())
    }
}
