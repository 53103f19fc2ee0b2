use std::time::{Duration, Instant};

use reqwest::header::{HeaderMap, RETRY_AFTER};
use reqwest::StatusCode;
use serde_json::{json, Map, Value};

use super::{Backend, BackendConfig, BackendError, Completion, DecodingParams, InFlightGuard, WireFormat};
use crate::templates::PromptRequest;

#[derive(Debug, Clone)]
pub(super) struct RemoteClient {
    http: reqwest::Client,
    endpoint: String,
    model_id: String,
    credential: String,
    wire: WireFormat,
}

enum Failure {
    Retry { status: Option<u16>, wait: Option<Duration>, message: String },
    Fatal(BackendError),
}

fn retry_after(headers: &HeaderMap) -> Option<Duration> {
    let secs: f64 = headers.get(RETRY_AFTER)?.to_str().ok()?.trim().parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

impl RemoteClient {
    pub(super) fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        let var = config.credential_env_var.clone().unwrap_or_default();
        let credential = std::env::var(&var).map_err(|_| BackendError::MissingCredential(var))?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(config.request_timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(RemoteClient {
            http,
            endpoint: config.endpoint.clone().unwrap_or_default(),
            model_id: config.model_id.clone().unwrap_or_default(),
            credential,
            wire: config.wire.clone(),
        })
    }

    fn body(&self, request: &PromptRequest, params: &DecodingParams) -> Value {
        let mut body = Map::new();
        body.insert(self.wire.model.clone(), json!(self.model_id));
        body.insert(self.wire.prompt.clone(), json!(request.rendered));
        body.insert(self.wire.temperature.clone(), json!(params.temperature));
        body.insert(self.wire.max_tokens.clone(), json!(params.max_tokens_for(&request.query)));
        if !params.stop_sequences.is_empty() {
            body.insert(self.wire.stop.clone(), json!(params.stop_sequences));
        }
        Value::Object(body)
    }

    fn parse(&self, body: &str) -> Result<(String, String), BackendError> {
        let v: Value = serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let choice = v
            .get(&self.wire.choices)
            .and_then(|c| c.get(0))
            .ok_or_else(|| BackendError::MalformedResponse(format!("no '{}' entries", self.wire.choices)))?;
        let text = match choice.get(&self.wire.text) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) | None => String::new(),
            Some(other) => return Err(BackendError::MalformedResponse(format!("non-string text {other}"))),
        };
        let finish = choice
            .get(&self.wire.finish_reason)
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        Ok((text, finish))
    }

    async fn attempt(&self, backend: &Backend, body: &Value, attempt: u32, query_id: Option<u64>) -> Result<(String, String), Failure> {
        let _permit = backend.permits.acquire().await.expect("semaphore open");
        let _guard = InFlightGuard::enter(&backend.in_flight);
        let sent = Instant::now();
        let result = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.credential)
            .json(body)
            .send()
            .await;
        let response = match result {
            Ok(r) => r,
            Err(e) => {
                let message = e.to_string();
                let _ = backend.log(json!({
                    "query_id": query_id, "attempt": attempt, "request": body, "error": message,
                    "latency_ms": sent.elapsed().as_millis() as u64,
                }));
                return Err(if e.is_timeout() || e.is_connect() {
                    Failure::Retry { status: None, wait: None, message }
                } else {
                    Failure::Fatal(BackendError::Transport(message))
                });
            }
        };
        let status = response.status();
        let wait = retry_after(response.headers());
        let text = match response.text().await {
            Ok(t) => t,
            Err(e) if e.is_timeout() => {
                return Err(Failure::Retry { status: Some(status.as_u16()), wait: None, message: e.to_string() })
            }
            Err(e) => return Err(Failure::Fatal(BackendError::Transport(e.to_string()))),
        };
        backend
            .log(json!({
                "query_id": query_id, "attempt": attempt, "request": body, "status": status.as_u16(),
                "response": text, "latency_ms": sent.elapsed().as_millis() as u64,
            }))
            .map_err(Failure::Fatal)?;

        if status.is_success() {
            return self.parse(&text).map_err(Failure::Fatal);
        }
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(Failure::Retry { status: Some(status.as_u16()), wait, message: text });
        }
        Err(Failure::Fatal(BackendError::Rejected { status: status.as_u16(), body: text }))
    }

    pub(super) async fn complete(
        &self,
        backend: &Backend,
        request: &PromptRequest,
        params: &DecodingParams,
    ) -> Result<Completion, BackendError> {
        let started = Instant::now();
        let body = self.body(request, params);
        let retry = &backend.config.retry;
        let mut last = (None, String::new());
        for attempt in 1..=retry.max_attempts {
            match self.attempt(backend, &body, attempt, request.query_id).await {
                Ok((text, raw_finish_reason)) => {
                    return Ok(Completion { text, latency: started.elapsed(), attempt_count: attempt, raw_finish_reason });
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry { status, wait, message }) => {
                    tracing::warn!(attempt, ?status, "transient completion failure");
                    last = (status, message);
                    if attempt < retry.max_attempts {
                        tokio::time::sleep(wait.unwrap_or_else(|| retry.backoff(attempt))).await;
                    }
                }
            }
        }
        Err(BackendError::Exhausted { attempts: retry.max_attempts, last_status: last.0, message: last.1 })
    }
}
