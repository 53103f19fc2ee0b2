#![allow(dead_code)]

pub mod synth;

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

pub const KEY_VAR: &str = "TMPROMPT_MOCK_API_KEY";

/// One scripted reply; once the script runs out the server answers 200 with
/// the text `T:<prompt>`.
#[derive(Clone)]
pub struct Reply {
    pub status: u16,
    pub retry_after: Option<&'static str>,
    pub body: Value,
    pub delay_ms: u64,
}

impl Reply {
    pub fn status(status: u16) -> Self {
        Reply { status, retry_after: None, body: json!({"error": "scripted"}), delay_ms: 0 }
    }
}

#[derive(Default)]
pub struct MockState {
    pub script: Mutex<VecDeque<Reply>>,
    pub hits: AtomicUsize,
    pub current: AtomicUsize,
    pub peak: AtomicUsize,
    pub delay_ms: AtomicUsize,
    pub bodies: Mutex<Vec<Value>>,
    pub auth: Mutex<Vec<String>>,
}

pub struct MockServer {
    pub addr: SocketAddr,
    pub state: Arc<MockState>,
}

impl MockServer {
    pub fn url(&self) -> String {
        format!("http://{}/v1/completions", self.addr)
    }

    pub fn push(&self, reply: Reply) {
        self.state.script.lock().unwrap().push_back(reply);
    }

    pub fn hits(&self) -> usize {
        self.state.hits.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.state.peak.load(Ordering::SeqCst)
    }
}

async fn complete(State(state): State<Arc<MockState>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    state.hits.fetch_add(1, Ordering::SeqCst);
    let now = state.current.fetch_add(1, Ordering::SeqCst) + 1;
    state.peak.fetch_max(now, Ordering::SeqCst);
    if let Some(a) = headers.get("authorization") {
        state.auth.lock().unwrap().push(a.to_str().unwrap().to_string());
    }
    state.bodies.lock().unwrap().push(body.clone());

    let scripted = state.script.lock().unwrap().pop_front();
    let delay = scripted
        .as_ref()
        .map(|r| r.delay_ms)
        .unwrap_or(state.delay_ms.load(Ordering::SeqCst) as u64);
    tokio::time::sleep(Duration::from_millis(delay)).await;
    state.current.fetch_sub(1, Ordering::SeqCst);

    match scripted {
        Some(r) => {
            let mut resp = (StatusCode::from_u16(r.status).unwrap(), Json(r.body)).into_response();
            if let Some(ra) = r.retry_after {
                resp.headers_mut().insert("retry-after", ra.parse().unwrap());
            }
            resp
        }
        None => {
            let prompt = body.get("prompt").and_then(Value::as_str).unwrap_or("");
            Json(json!({"choices": [{"text": format!("T:{prompt}"), "finish_reason": "stop"}]})).into_response()
        }
    }
}

pub async fn start() -> MockServer {
    std::env::set_var(KEY_VAR, "test-key");
    let state = Arc::new(MockState::default());
    let app = Router::new().route("/v1/completions", post(complete)).with_state(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    MockServer { addr, state }
}
