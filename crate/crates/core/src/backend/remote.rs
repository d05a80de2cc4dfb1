//! OpenAI-compatible HTTP backend.
//!
//! Uses `POST /chat/completions` with `logprobs`/`top_logprobs` for
//! prediction, and `POST /files`, `POST /fine_tuning/jobs`,
//! `GET /fine_tuning/jobs/{id}` for fine-tuning. Rate limits (429), server
//! errors (5xx) and transport failures are retried with exponential backoff.
//! Successful chat responses and finished fine-tunes are cached by content
//! hash, so a rerun with the same inputs sends no requests.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::{StreamExt, TryStreamExt};
use reqwest::multipart;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use super::cache::ResponseCache;
use super::{sha256_hex, Backend, BackendKind, FineTuneConfig, FineTuneOutcome, JobRecord, ModelHandle, TopTokens};
use crate::error::{Error, Result};
use crate::prompt::ChatExample;

pub const ENV_API_BASE: &str = "VOTEIMPUTE_API_BASE";
pub const ENV_API_KEY: &str = "VOTEIMPUTE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Base URL including the version segment, e.g. `https://host/v1`.
    pub base_url: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub poll_interval_ms: u64,
    pub poll_budget_secs: f64,
    pub top_logprobs: u32,
    /// Completion length requested per prompt (1..=8).
    pub max_tokens: u32,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: std::env::var(ENV_API_BASE).unwrap_or_else(|_| "https://api.openai.com/v1".into()),
            api_key_env: ENV_API_KEY.into(),
            max_in_flight: 8,
            request_timeout_secs: 60.0,
            max_retries: 5,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
            poll_interval_ms: 10_000,
            poll_budget_secs: 24.0 * 3600.0,
            top_logprobs: 20,
            max_tokens: 1,
        }
    }
}

impl RemoteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.max_tokens) {
            return Err(Error::Config(format!("max_tokens must be in 1..=8, got {}", self.max_tokens)));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be positive".into()));
        }
        if self.top_logprobs == 0 {
            return Err(Error::Config("top_logprobs must be positive".into()));
        }
        url_like(&self.base_url)?;
        Ok(())
    }
}

fn url_like(s: &str) -> Result<()> {
    if s.starts_with("http://") || s.starts_with("https://") {
        Ok(())
    } else {
        Err(Error::Config(format!("base_url {s:?} is not an http(s) URL")))
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    client: reqwest::Client,
    runtime: tokio::runtime::Runtime,
    cache: Option<ResponseCache>,
    in_flight: Arc<Semaphore>,
    requests: AtomicU64,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig, cache: Option<ResponseCache>) -> Result<Self> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(config.request_timeout_secs))
            .build()?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .map_err(|e| Error::Backend(format!("cannot start async runtime: {e}")))?;
        Ok(RemoteBackend {
            in_flight: Arc::new(Semaphore::new(config.max_in_flight)),
            config,
            api_key,
            client,
            runtime,
            cache,
            requests: AtomicU64::new(0),
        })
    }

    /// HTTP requests issued so far, retries included.
    pub fn http_requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn backoff(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let cap = Duration::from_millis(self.config.backoff_max_ms);
        let exp = Duration::from_millis(self.config.backoff_base_ms.saturating_mul(1u64 << attempt.min(20)));
        retry_after.unwrap_or(exp).min(cap)
    }

    async fn send(&self, what: &str, make: impl Fn() -> reqwest::RequestBuilder) -> Result<Value> {
        let mut attempt = 0;
        loop {
            let mut req = make();
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            self.requests.fetch_add(1, Ordering::Relaxed);
            tracing::debug!(target: "voteimpute::http", what, attempt, "request");
            let retryable = match req.send().await {
                Ok(resp) => {
                    let status = resp.status();
                    let retry_after = resp
                        .headers()
                        .get(reqwest::header::RETRY_AFTER)
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.trim().parse::<f64>().ok())
                        .map(Duration::from_secs_f64);
                    let body = resp.text().await.unwrap_or_default();
                    tracing::debug!(target: "voteimpute::http", what, status = status.as_u16(), body = %truncate(&body), "response");
                    if status.is_success() {
                        return serde_json::from_str(&body)
                            .map_err(|e| Error::Backend(format!("{what}: invalid JSON response: {e}")));
                    }
                    let code = status.as_u16();
                    if code == 429 || status.is_server_error() {
                        Some((Error::Http { status: code, body }, retry_after))
                    } else {
                        return Err(Error::Http { status: code, body });
                    }
                }
                Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => Some((Error::from(e), None)),
                Err(e) => return Err(e.into()),
            };
            let (err, retry_after) = retryable.expect("non-retryable paths return early");
            if attempt >= self.config.max_retries {
                return Err(err);
            }
            let wait = self.backoff(attempt, retry_after);
            tracing::warn!(what, attempt, ?wait, error = %err, "retrying");
            tokio::time::sleep(wait).await;
            attempt += 1;
        }
    }

    fn chat_body(&self, model_id: &str, prompt: &ChatExample) -> Value {
        json!({
            "model": model_id,
            "messages": prompt.messages(),
            "max_tokens": self.config.max_tokens,
            "temperature": 0,
            "logprobs": true,
            "top_logprobs": self.config.top_logprobs,
        })
    }

    async fn top_tokens(&self, model_id: &str, prompt: &ChatExample) -> Result<TopTokens> {
        let body = self.chat_body(model_id, prompt);
        let key = ResponseCache::key(&["chat", &body.to_string()]);
        if let Some(cached) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return parse_top_tokens(&cached);
        }
        let response = {
            let _permit = self.in_flight.acquire().await.expect("semaphore never closed");
            let url = self.url("chat/completions");
            self.send("chat", || self.client.post(&url).json(&body)).await?
        };
        let top = parse_top_tokens(&response)?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &response)?;
        }
        Ok(top)
    }

    async fn run_fine_tune(&self, train_file: &Path, config: &FineTuneConfig) -> Result<FineTuneOutcome> {
        let bytes = tokio::fs::read(train_file).await.map_err(|e| Error::io(train_file, e))?;
        let lines = validate_training_file(&bytes)?;
        let digest = sha256_hex(&bytes);
        let cache_key = ResponseCache::key(&["fine_tune", &digest, &serde_json::to_string(config)?]);
        if let Some(cached) = self.cache.as_ref().and_then(|c| c.get(&cache_key)) {
            if let Ok(outcome) = serde_json::from_value::<FineTuneOutcome>(cached) {
                return Ok(outcome);
            }
        }
        tracing::info!(file = %train_file.display(), lines, base = %config.base_model, "submitting fine-tune");

        let file_name = train_file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "train.jsonl".into());
        let files_url = self.url("files");
        let uploaded = self
            .send("upload", || {
                let part = multipart::Part::bytes(bytes.clone())
                    .file_name(file_name.clone())
                    .mime_str("application/jsonl")
                    .expect("static mime type");
                let form = multipart::Form::new().text("purpose", "fine-tune").part("file", part);
                self.client.post(&files_url).multipart(form)
            })
            .await?;
        let file_id = str_field(&uploaded, "id")?;

        let mut request = json!({
            "model": config.base_model,
            "training_file": file_id,
            "hyperparameters": {
                "n_epochs": config.epochs,
                "batch_size": config.batch_size,
                "lora_r": config.lora_rank,
                "lora_alpha": config.lora_alpha,
            },
        });
        for (k, v) in &config.extra {
            request[k] = v.clone();
        }
        let jobs_url = self.url("fine_tuning/jobs");
        let created = self.send("create job", || self.client.post(&jobs_url).json(&request)).await?;
        let job_id = str_field(&created, "id")?;

        let started = Instant::now();
        let budget = Duration::from_secs_f64(self.config.poll_budget_secs);
        let status_url = self.url(&format!("fine_tuning/jobs/{job_id}"));
        let job = loop {
            let job = self.send("poll job", || self.client.get(&status_url)).await?;
            match job["status"].as_str().unwrap_or("") {
                "succeeded" => break job,
                "failed" | "cancelled" => {
                    let message = job["error"]["message"]
                        .as_str()
                        .or_else(|| job["status"].as_str())
                        .unwrap_or("unknown failure")
                        .to_string();
                    return Err(Error::JobFailed { job_id, message });
                }
                _ => {}
            }
            if started.elapsed() >= budget {
                return Err(Error::Timeout(budget));
            }
            tokio::time::sleep(Duration::from_millis(self.config.poll_interval_ms)).await;
        };
        let model_id = str_field(&job, "fine_tuned_model")?;
        let outcome = FineTuneOutcome {
            handle: ModelHandle {
                backend_kind: BackendKind::Remote,
                model_id,
                finetuned_from: Some(config.base_model.clone()),
            },
            job: JobRecord {
                job_id,
                status: "succeeded".into(),
                created_at: created["created_at"].as_i64(),
                finished_at: job["finished_at"].as_i64(),
                training_file_sha256: digest,
                config: config.clone(),
            },
        };
        if let Some(cache) = &self.cache {
            cache.put(&cache_key, &serde_json::to_value(&outcome)?)?;
        }
        Ok(outcome)
    }
}

impl Backend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn fine_tune(&self, train_file: &Path, config: &FineTuneConfig) -> Result<FineTuneOutcome> {
        config.validate()?;
        self.runtime.block_on(self.run_fine_tune(train_file, config))
    }

    fn first_token_logprobs(&self, model: &ModelHandle, prompts: &[ChatExample]) -> Result<Vec<TopTokens>> {
        self.runtime.block_on(
            futures::stream::iter(prompts)
                .map(|p| self.top_tokens(&model.model_id, p))
                .buffered(self.config.max_in_flight)
                .try_collect(),
        )
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(2000) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn str_field(v: &Value, field: &str) -> Result<String> {
    v[field]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Backend(format!("response lacks string field {field:?}: {}", truncate(&v.to_string()))))
}

/// Checks that a training file is non-empty chat JSON lines with answers.
pub fn validate_training_file(bytes: &[u8]) -> Result<usize> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::InvalidArgument(format!("training file: {e}")))?;
    let mut n = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let ex = ChatExample::from_json_line(line)?;
        if ex.assistant.is_none() {
            return Err(Error::MissingAssistant { index: n });
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("training file contains no examples".into()));
    }
    Ok(n)
}

/// Top alternatives of the first generated token in a chat-completions
/// response.
pub fn parse_top_tokens(response: &Value) -> Result<TopTokens> {
    let first = &response["choices"][0]["logprobs"]["content"][0];
    let alternatives = first["top_logprobs"].as_array().ok_or(Error::NoLogprobs)?;
    let mut out: TopTokens = alternatives
        .iter()
        .filter_map(|a| Some((a["token"].as_str()?.to_string(), a["logprob"].as_f64()?)))
        .collect();
    if let (Some(token), Some(lp)) = (first["token"].as_str(), first["logprob"].as_f64()) {
        if !out.iter().any(|(t, _)| t == token) {
            out.push((token.to_string(), lp));
        }
    }
    if out.is_empty() {
        return Err(Error::NoLogprobs);
    }
    Ok(out)
}
