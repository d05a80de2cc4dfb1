//! A small in-process server speaking the subset of the OpenAI HTTP API used
//! by remote backends: file upload, fine-tuning jobs and chat completions
//! with first-token logprobs.
//!
//! Fine-tuning memorizes the training file (user text to assistant answer).
//! A chat completion for a fine-tuned model returns the first two characters
//! of the memorized answer as its first token, together with junk
//! alternatives and the other answers it has seen. Unknown user texts get
//! the model's most frequent answer; unknown models answer `default_answer`.
//!
//! Faults can be queued: each incoming request consumes the next queued
//! status code and fails with it instead of being served.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::extract::{Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

#[derive(Debug, Clone)]
pub struct StubConfig {
    /// Required bearer token; `None` accepts any request.
    pub api_key: Option<String>,
    /// Status codes returned by the first requests, in order.
    pub faults: Vec<u16>,
    /// Job polls reporting `running` before `succeeded`.
    pub polls_until_done: u32,
    /// Jobs end as `failed` instead.
    pub fail_jobs: bool,
    pub default_answer: String,
}

impl Default for StubConfig {
    fn default() -> Self {
        StubConfig {
            api_key: None,
            faults: Vec::new(),
            polls_until_done: 1,
            fail_jobs: false,
            default_answer: "CDU/CSU".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Job {
    model: String,
    memory: HashMap<String, String>,
    polls: u32,
    hyperparameters: Value,
    status: &'static str,
    fine_tuned_model: Option<String>,
}

#[derive(Default)]
struct Inner {
    files: HashMap<String, Vec<u8>>,
    jobs: BTreeMap<String, Job>,
    models: HashMap<String, HashMap<String, String>>,
    faults: VecDeque<u16>,
    next_id: u64,
    log: Vec<String>,
}

struct Shared {
    config: StubConfig,
    inner: Mutex<Inner>,
    requests: AtomicU64,
}

impl Shared {
    fn id(&self, prefix: &str) -> String {
        let mut inner = self.inner.lock().unwrap();
        inner.next_id += 1;
        format!("{prefix}-{}", inner.next_id)
    }
}

type AppState = Arc<Shared>;

fn error(status: StatusCode, message: &str) -> Response {
    (status, Json(json!({"error": {"message": message}}))).into_response()
}

async fn gate(State(state): State<AppState>, req: Request, next: Next) -> Response {
    state.requests.fetch_add(1, Ordering::SeqCst);
    let line = format!("{} {}", req.method(), req.uri().path());
    let fault = {
        let mut inner = state.inner.lock().unwrap();
        inner.log.push(line);
        inner.faults.pop_front()
    };
    if let Some(code) = fault {
        let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let mut resp = error(status, "injected fault");
        if code == 429 {
            resp.headers_mut().insert(header::RETRY_AFTER, "0".parse().unwrap());
        }
        return resp;
    }
    if let Some(key) = &state.config.api_key {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v == format!("Bearer {key}"));
        if !ok {
            return error(StatusCode::UNAUTHORIZED, "invalid api key");
        }
    }
    next.run(req).await
}

async fn upload(State(state): State<AppState>, mut form: Multipart) -> Response {
    let mut purpose = None;
    let mut content = None;
    loop {
        match form.next_field().await {
            Ok(Some(field)) => {
                let name = field.name().unwrap_or_default().to_string();
                let Ok(bytes) = field.bytes().await else {
                    return error(StatusCode::BAD_REQUEST, "unreadable field");
                };
                match name.as_str() {
                    "purpose" => purpose = Some(String::from_utf8_lossy(&bytes).into_owned()),
                    "file" => content = Some(bytes.to_vec()),
                    _ => {}
                }
            }
            Ok(None) => break,
            Err(_) => return error(StatusCode::BAD_REQUEST, "malformed multipart body"),
        }
    }
    let (Some(purpose), Some(content)) = (purpose, content) else {
        return error(StatusCode::BAD_REQUEST, "purpose and file are required");
    };
    let id = state.id("file");
    let bytes = content.len();
    state.inner.lock().unwrap().files.insert(id.clone(), content);
    Json(json!({"id": id, "object": "file", "bytes": bytes, "purpose": purpose})).into_response()
}

fn user_text(messages: &Value) -> Option<String> {
    messages
        .as_array()?
        .iter()
        .find(|m| m["role"] == "user")
        .and_then(|m| m["content"].as_str())
        .map(str::to_string)
}

fn parse_training(bytes: &[u8]) -> Result<HashMap<String, String>, String> {
    let text = std::str::from_utf8(bytes).map_err(|e| e.to_string())?;
    let mut memory = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        let user = user_text(&v["messages"]).ok_or_else(|| format!("line {}: no user message", i + 1))?;
        let answer = v["messages"]
            .as_array()
            .and_then(|m| m.iter().find(|m| m["role"] == "assistant"))
            .and_then(|m| m["content"].as_str())
            .ok_or_else(|| format!("line {}: no assistant message", i + 1))?;
        memory.insert(user, answer.to_string());
    }
    if memory.is_empty() {
        return Err("empty training file".into());
    }
    Ok(memory)
}

async fn create_job(State(state): State<AppState>, Json(body): Json<Value>) -> Response {
    let (Some(model), Some(file_id)) = (body["model"].as_str(), body["training_file"].as_str()) else {
        return error(StatusCode::BAD_REQUEST, "model and training_file are required");
    };
    let Some(bytes) = state.inner.lock().unwrap().files.get(file_id).cloned() else {
        return error(StatusCode::NOT_FOUND, "no such file");
    };
    let memory = match parse_training(&bytes) {
        Ok(m) => m,
        Err(e) => return error(StatusCode::BAD_REQUEST, &e),
    };
    let id = state.id("ftjob");
    let job = Job {
        model: model.to_string(),
        memory,
        polls: 0,
        hyperparameters: body["hyperparameters"].clone(),
        status: "queued",
        fine_tuned_model: None,
    };
    state.inner.lock().unwrap().jobs.insert(id.clone(), job);
    Json(json!({
        "id": id,
        "object": "fine_tuning.job",
        "model": model,
        "status": "queued",
        "created_at": 1_700_000_000,
        "training_file": file_id,
        "hyperparameters": body["hyperparameters"],
    }))
    .into_response()
}

async fn poll_job(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let mut inner = state.inner.lock().unwrap();
    let Some(job) = inner.jobs.get_mut(&id) else {
        return error(StatusCode::NOT_FOUND, "no such job");
    };
    job.polls += 1;
    if job.status != "succeeded" && job.status != "failed" {
        job.status = if job.polls <= state.config.polls_until_done {
            "running"
        } else if state.config.fail_jobs {
            "failed"
        } else {
            "succeeded"
        };
    }
    let mut out = json!({
        "id": id,
        "object": "fine_tuning.job",
        "model": job.model,
        "status": job.status,
        "created_at": 1_700_000_000,
        "hyperparameters": job.hyperparameters,
    });
    match job.status {
        "succeeded" => {
            let name = job
                .fine_tuned_model
                .get_or_insert_with(|| format!("ft:{}:stub:{id}", job.model))
                .clone();
            let memory = job.memory.clone();
            out["fine_tuned_model"] = json!(name);
            out["finished_at"] = json!(1_700_000_100);
            inner.models.insert(name, memory);
        }
        "failed" => out["error"] = json!({"message": "training diverged"}),
        _ => {}
    }
    Json(out).into_response()
}

fn first_token(answer: &str) -> String {
    answer.chars().take(2).collect()
}

async fn chat(State(state): State<AppState>, Json(body): Json<Value>) -> Response {
    let Some(model) = body["model"].as_str() else {
        return error(StatusCode::BAD_REQUEST, "model is required");
    };
    let Some(user) = user_text(&body["messages"]) else {
        return error(StatusCode::BAD_REQUEST, "no user message");
    };
    let (answer, others) = {
        let inner = state.inner.lock().unwrap();
        match inner.models.get(model) {
            Some(memory) => {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for a in memory.values() {
                    *counts.entry(a).or_default() += 1;
                }
                let most = counts
                    .iter()
                    .max_by_key(|(a, n)| (**n, std::cmp::Reverse(**a)))
                    .map(|(a, _)| a.to_string())
                    .unwrap_or_default();
                let answer = memory.get(&user).cloned().unwrap_or(most);
                let others: Vec<String> = counts.keys().filter(|a| **a != answer).map(|a| a.to_string()).collect();
                (answer, others)
            }
            None => (state.config.default_answer.clone(), Vec::new()),
        }
    };
    let token = first_token(&answer);
    let n_top = body["top_logprobs"].as_u64().unwrap_or(0) as usize;
    let mut top = vec![json!({"token": token, "logprob": 0.9f64.ln()})];
    top.push(json!({"token": "\n", "logprob": 0.03f64.ln()}));
    top.push(json!({"token": " ", "logprob": 0.02f64.ln()}));
    let rest = 0.05 / others.len().max(1) as f64;
    for o in &others {
        let t = first_token(o);
        if t != token {
            top.push(json!({"token": t, "logprob": rest.ln()}));
        }
    }
    top.truncate(n_top);
    let logprobs = if body["logprobs"].as_bool() == Some(true) {
        json!({"content": [{"token": token, "logprob": 0.9f64.ln(), "top_logprobs": top}]})
    } else {
        Value::Null
    };
    let id = state.id("chatcmpl");
    Json(json!({
        "id": id,
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": token},
            "finish_reason": "length",
            "logprobs": logprobs,
        }],
    }))
    .into_response()
}

/// A running stub server; shut down on drop.
pub struct StubServer {
    addr: SocketAddr,
    state: AppState,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds an ephemeral local port and serves on a background thread.
    pub fn start(config: StubConfig) -> std::io::Result<Self> {
        let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let state = Arc::new(Shared {
            inner: Mutex::new(Inner {
                faults: config.faults.iter().copied().collect(),
                ..Default::default()
            }),
            config,
            requests: AtomicU64::new(0),
        });
        let app = Router::new()
            .route("/v1/files", post(upload))
            .route("/v1/fine_tuning/jobs", post(create_job))
            .route("/v1/fine_tuning/jobs/:id", get(poll_job))
            .route("/v1/chat/completions", post(chat))
            .layer(middleware::from_fn_with_state(Arc::clone(&state), gate))
            .with_state(Arc::clone(&state));
        let (tx, rx) = oneshot::channel::<()>();
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
                    .expect("stub server");
            });
        });
        Ok(StubServer {
            addr,
            state,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    /// Base URL including the `/v1` segment.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    /// Requests received so far, faulted ones included.
    pub fn requests(&self) -> u64 {
        self.state.requests.load(Ordering::SeqCst)
    }

    /// `METHOD /path` of every request received.
    pub fn request_log(&self) -> Vec<String> {
        self.state.inner.lock().unwrap().log.clone()
    }

    /// Queues status codes for the next requests.
    pub fn inject(&self, statuses: &[u16]) {
        self.state.inner.lock().unwrap().faults.extend(statuses);
    }

    /// Hyperparameters each job was created with, by job id.
    pub fn job_hyperparameters(&self) -> BTreeMap<String, Value> {
        let inner = self.state.inner.lock().unwrap();
        inner
            .jobs
            .iter()
            .map(|(id, j)| (id.clone(), j.hyperparameters.clone()))
            .collect()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
