use std::collections::BTreeSet;
use std::sync::Arc;

use voteimpute::backend::cache::ResponseCache;
use voteimpute::backend::remote::{RemoteBackend, RemoteConfig};
use voteimpute::backend::{CandidateSet, FineTuneConfig};
use voteimpute::imputer::{FitContext, Imputer, LlmImputer, LlmMode};
use voteimpute::prompt::PromptTemplate;
use voteimpute::synthetic::{generate, GeneratorSpec};
use voteimpute_stub::{StubConfig, StubServer};

fn remote_config(stub: &StubServer) -> RemoteConfig {
    RemoteConfig {
        base_url: stub.base_url(),
        api_key_env: "VOTEIMPUTE_TEST_UNSET_KEY".into(),
        backoff_base_ms: 1,
        poll_interval_ms: 1,
        top_logprobs: 5,
        ..Default::default()
    }
}

fn imputer(backend: Arc<RemoteBackend>, candidates: &CandidateSet) -> LlmImputer {
    LlmImputer {
        name: "ft".into(),
        backend,
        template: PromptTemplate::german(),
        candidates: candidates.clone(),
        mode: LlmMode::FineTune(FineTuneConfig {
            base_model: "base".into(),
            epochs: 1,
            ..Default::default()
        }),
    }
}

#[test]
fn fine_tune_predict_retry_and_cache() {
    let data = generate(&GeneratorSpec {
        n: 60,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
    .dataset;
    let candidates = CandidateSet::from_template(&PromptTemplate::german(), &data.codebook, 3).unwrap();
    let stub = StubServer::start(StubConfig {
        faults: vec![429, 500],
        polls_until_done: 2,
        ..Default::default()
    })
    .unwrap();
    let work = tempfile::tempdir().unwrap();
    let ablated = BTreeSet::new();
    let ctx = FitContext {
        experiment: "E1a",
        fold: 0,
        seed: 1,
        ablated: &ablated,
        workdir: work.path(),
    };

    let backend = Arc::new(RemoteBackend::new(remote_config(&stub), Some(ResponseCache::open(work.path().join("cache")).unwrap())).unwrap());
    let fitted = imputer(Arc::clone(&backend), &candidates).fit(&data, &ctx).unwrap();
    let preds = fitted.predict(&data).unwrap();
    assert_eq!(preds.len(), data.len());
    // the stub memorized every training answer
    for (p, r) in preds.iter().zip(&data.respondents) {
        assert_eq!(Some(p.label), r.vote, "{}", r.id);
        assert!(p.is_simplex());
    }
    // upload, create, 2 polls running + 1 done, one chat per respondent, two retried faults
    let expected = 1 + 1 + 3 + data.len() as u64 + 2;
    assert_eq!(backend.http_requests(), expected);
    assert_eq!(stub.requests(), expected);
    assert_eq!(stub.job_hyperparameters().values().next().unwrap()["lora_r"], 256);

    let again = Arc::new(RemoteBackend::new(remote_config(&stub), Some(ResponseCache::open(work.path().join("cache")).unwrap())).unwrap());
    let rerun = imputer(Arc::clone(&again), &candidates).fit(&data, &ctx).unwrap().predict(&data).unwrap();
    assert_eq!(again.http_requests(), 0);
    assert_eq!(rerun, preds);
}

#[test]
fn failed_job_and_auth_errors_surface() {
    let data = generate(&GeneratorSpec {
        n: 20,
        ..Default::default()
    })
    .unwrap()
    .dataset;
    let candidates = CandidateSet::from_template(&PromptTemplate::german(), &data.codebook, 3).unwrap();
    let work = tempfile::tempdir().unwrap();
    let ablated = BTreeSet::new();
    let ctx = FitContext {
        experiment: "E1a",
        fold: 0,
        seed: 1,
        ablated: &ablated,
        workdir: work.path(),
    };

    let stub = StubServer::start(StubConfig {
        fail_jobs: true,
        ..Default::default()
    })
    .unwrap();
    let backend = Arc::new(RemoteBackend::new(remote_config(&stub), None).unwrap());
    let err = imputer(backend, &candidates).fit(&data, &ctx).err().unwrap();
    assert!(matches!(err, voteimpute::error::Error::JobFailed { .. }), "{err}");

    let locked = StubServer::start(StubConfig {
        api_key: Some("secret".into()),
        ..Default::default()
    })
    .unwrap();
    let backend = Arc::new(RemoteBackend::new(remote_config(&locked), None).unwrap());
    let err = imputer(Arc::clone(&backend), &candidates).fit(&data, &ctx).err().unwrap();
    assert!(matches!(err, voteimpute::error::Error::Http { status: 401, .. }), "{err}");
    // not retried
    assert_eq!(backend.http_requests(), 1);
}
