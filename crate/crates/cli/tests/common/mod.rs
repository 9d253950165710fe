//! Helpers shared by the integration tests: the CLI binary, a synthetic
//! corpus on disk and a stub chat-completions server.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::HeaderMap;
use axum::routing::post;
use axum::{Json, Router};
use fairlex::corpus::save_corpus;
use fairlex::synth::{self, SynthConfig, SynthCorpus};

pub fn fairlex() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairlex"))
}

pub fn run<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    fairlex().args(args).output().expect("spawning fairlex")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes `train.jsonl` and `test.jsonl` into `dir`.
pub fn write_synth(dir: &Path, config: &SynthConfig) -> SynthCorpus {
    let corpus = synth::generate(config).unwrap();
    save_corpus(&corpus.train, dir.join("train.jsonl")).unwrap();
    save_corpus(&corpus.test, dir.join("test.jsonl")).unwrap();
    corpus
}

pub fn small_synth(dir: &Path) -> SynthCorpus {
    write_synth(
        dir,
        &SynthConfig {
            train_size: 1500,
            test_size: 600,
            noise_vocabulary: 400,
            ..SynthConfig::default()
        },
    )
}

/// The word a classification prompt asks about.
pub fn prompted_word(prompt: &str) -> Option<&str> {
    let start = prompt.find("classify the word \"")? + "classify the word \"".len();
    let len = prompt[start..].find('"')?;
    Some(&prompt[start..start + len])
}

/// Answers like a model that knows the planted protected words: `Race` for
/// those, `None` for everything else.
pub fn stub_reply(word: &str) -> String {
    if synth::PLANTED_PROTECTED.contains(&word) {
        format!("Race | 90 | `{word}` names a group of people")
    } else {
        format!("None | 80 | `{word}` is not about a protected group")
    }
}

pub struct StubLlm {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    /// Requests that carried `Authorization: Bearer <key>`.
    pub authorized: Arc<AtomicUsize>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Drop for StubLlm {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[derive(Clone)]
struct StubState {
    key: String,
    requests: Arc<AtomicUsize>,
    authorized: Arc<AtomicUsize>,
}

async fn complete(State(state): State<StubState>, headers: HeaderMap, Json(body): Json<serde_json::Value>) -> Json<serde_json::Value> {
    state.requests.fetch_add(1, Ordering::SeqCst);
    let expected = format!("Bearer {}", state.key);
    if headers.get("authorization").and_then(|v| v.to_str().ok()) == Some(expected.as_str()) {
        state.authorized.fetch_add(1, Ordering::SeqCst);
    }
    let last = body["messages"]
        .as_array()
        .and_then(|m| m.last())
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default();
    let reply = prompted_word(last).map_or_else(|| "unexpected prompt".to_string(), stub_reply);
    Json(serde_json::json!({
        "choices": [{ "index": 0, "message": { "role": "assistant", "content": reply } }]
    }))
}

/// Serves `/v1/chat/completions` on an ephemeral port until dropped.
pub fn stub_llm(api_key: &str) -> StubLlm {
    let state = StubState {
        key: api_key.to_string(),
        requests: Arc::default(),
        authorized: Arc::default(),
    };
    let (requests, authorized) = (state.requests.clone(), state.authorized.clone());
    let (addr_tx, addr_rx) = std::sync::mpsc::channel::<SocketAddr>();
    let (shutdown, stop) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            addr_tx.send(listener.local_addr().unwrap()).unwrap();
            let app = Router::new().route("/v1/chat/completions", post(complete)).with_state(state);
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = stop.await;
                })
                .await
                .unwrap();
        });
    });
    let addr = addr_rx.recv().unwrap();
    StubLlm {
        url: format!("http://{addr}/v1/chat/completions"),
        requests,
        authorized,
        shutdown: Some(shutdown),
        thread: Some(thread),
    }
}
