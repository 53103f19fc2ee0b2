//! Translation backends: a remote completion API client and offline stubs.

mod remote;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::templates::PromptRequest;

#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("environment variable {0} holding the API credential is not set")]
    MissingCredential(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("invalid decoding parameters: {0}")]
    InvalidParams(String),
    #[error("copy-stub needs at least one demonstration")]
    NoDemonstration,
    #[error("gave up after {attempts} attempts (last status {last_status:?}): {message}")]
    Exhausted { attempts: u32, last_status: Option<u16>, message: String },
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transcript {0}: {1}")]
    Transcript(PathBuf, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingParams {
    pub temperature: f64,
    /// When unset, `4 * query tokens + 16`.
    pub max_output_tokens: Option<u32>,
    pub stop_sequences: Vec<String>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams { temperature: 0.0, max_output_tokens: None, stop_sequences: Vec::new() }
    }
}

impl DecodingParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidParams(format!("temperature {} is negative", self.temperature)));
        }
        if self.max_output_tokens == Some(0) {
            return Err(BackendError::InvalidParams("max_output_tokens must be at least 1".into()));
        }
        Ok(())
    }

    pub fn max_tokens_for(&self, query: &str) -> u32 {
        self.max_output_tokens
            .unwrap_or_else(|| 4 * query.split_whitespace().count() as u32 + 16)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    RemoteCompletion,
    #[default]
    CopyStub,
    EchoStub,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote-completion" | "remote" => Ok(Self::RemoteCompletion),
            "copy-stub" | "copy" => Ok(Self::CopyStub),
            "echo-stub" | "echo" => Ok(Self::EchoStub),
            other => Err(format!("unknown backend '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryConfig {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub jitter: bool,
}

impl Default for RetryConfig {
    fn default() -> Self {
        RetryConfig { max_attempts: 5, base_backoff_ms: 1000, max_backoff_ms: 60_000, jitter: true }
    }
}

impl RetryConfig {
    /// Delay before retry number `attempt` (1-based count of failures so far).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let exp = self.base_backoff_ms.saturating_mul(1u64 << attempt.saturating_sub(1).min(30));
        let mut ms = exp.min(self.max_backoff_ms);
        if self.jitter {
            ms = (ms as f64 * rand::random_range(0.5..=1.0)) as u64;
        }
        Duration::from_millis(ms)
    }
}

/// JSON field names of the completion API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WireFormat {
    pub model: String,
    pub prompt: String,
    pub temperature: String,
    pub max_tokens: String,
    pub stop: String,
    pub choices: String,
    pub text: String,
    pub finish_reason: String,
}

impl Default for WireFormat {
    fn default() -> Self {
        WireFormat {
            model: "model".into(),
            prompt: "prompt".into(),
            temperature: "temperature".into(),
            max_tokens: "max_tokens".into(),
            stop: "stop".into(),
            choices: "choices".into(),
            text: "text".into(),
            finish_reason: "finish_reason".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model_id: Option<String>,
    pub credential_env_var: Option<String>,
    pub retry: RetryConfig,
    pub max_in_flight: usize,
    pub request_timeout_secs: f64,
    pub wire: WireFormat,
    pub transcript: Option<PathBuf>,
    /// Artificial per-request delay for the stubs.
    pub stub_latency_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::default(),
            endpoint: None,
            model_id: None,
            credential_env_var: None,
            retry: RetryConfig::default(),
            max_in_flight: 4,
            request_timeout_secs: 60.0,
            wire: WireFormat::default(),
            transcript: None,
            stub_latency_ms: 0,
        }
    }
}

impl BackendConfig {
    pub fn stub(kind: BackendKind) -> Self {
        BackendConfig { kind, ..Default::default() }
    }

    pub fn remote(endpoint: &str, model_id: &str, credential_env_var: &str) -> Self {
        BackendConfig {
            kind: BackendKind::RemoteCompletion,
            endpoint: Some(endpoint.into()),
            model_id: Some(model_id.into()),
            credential_env_var: Some(credential_env_var.into()),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::InvalidConfig(m.into()));
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        if self.retry.max_attempts == 0 {
            return bad("retry.max_attempts must be at least 1");
        }
        if self.request_timeout_secs.is_nan() || self.request_timeout_secs <= 0.0 {
            return bad("request_timeout_secs must be positive");
        }
        if self.kind == BackendKind::RemoteCompletion
            && (self.endpoint.is_none() || self.model_id.is_none() || self.credential_env_var.is_none())
        {
            return bad("remote-completion needs endpoint, model_id and credential_env_var");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub latency: Duration,
    pub attempt_count: u32,
    pub raw_finish_reason: String,
}

#[derive(Debug)]
struct Transcript {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl Transcript {
    fn open(path: &PathBuf) -> Result<Self, BackendError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::Transcript(path.clone(), e.to_string()))?;
        Ok(Transcript { path: path.clone(), out: Mutex::new(BufWriter::new(file)) })
    }

    fn log(&self, entry: &serde_json::Value) -> Result<(), BackendError> {
        let mut out = self.out.lock().expect("transcript lock");
        let err = |e: std::io::Error| BackendError::Transcript(self.path.clone(), e.to_string());
        serde_json::to_writer(&mut *out, entry).map_err(|e| BackendError::Transcript(self.path.clone(), e.to_string()))?;
        out.write_all(b"\n").map_err(err)?;
        out.flush().map_err(err)
    }
}

#[derive(Debug, Default)]
struct InFlight {
    current: AtomicUsize,
    peak: AtomicUsize,
}

struct InFlightGuard<'a>(&'a InFlight);

impl<'a> InFlightGuard<'a> {
    fn enter(f: &'a InFlight) -> Self {
        let now = f.current.fetch_add(1, Ordering::SeqCst) + 1;
        f.peak.fetch_max(now, Ordering::SeqCst);
        InFlightGuard(f)
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        self.0.current.fetch_sub(1, Ordering::SeqCst);
    }
}

/// A configured backend. Cloning shares the concurrency cap.
#[derive(Debug, Clone)]
pub struct Backend {
    config: Arc<BackendConfig>,
    permits: Arc<Semaphore>,
    in_flight: Arc<InFlight>,
    transcript: Option<Arc<Transcript>>,
    remote: Option<remote::RemoteClient>,
}

impl Backend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let remote = match config.kind {
            BackendKind::RemoteCompletion => Some(remote::RemoteClient::new(&config)?),
            _ => None,
        };
        let transcript = config.transcript.as_ref().map(Transcript::open).transpose()?.map(Arc::new);
        Ok(Backend {
            permits: Arc::new(Semaphore::new(config.max_in_flight)),
            in_flight: Arc::default(),
            config: Arc::new(config),
            transcript,
            remote,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// Highest number of simultaneously outstanding requests seen so far.
    pub fn peak_in_flight(&self) -> usize {
        self.in_flight.peak.load(Ordering::SeqCst)
    }

    pub fn reset_peak(&self) {
        self.in_flight.peak.store(0, Ordering::SeqCst);
    }

    pub async fn translate(&self, request: &PromptRequest, params: &DecodingParams) -> Result<Completion, BackendError> {
        params.validate()?;
        match &self.remote {
            Some(client) => client.complete(self, request, params).await,
            None => {
                let started = Instant::now();
                let _permit = self.permits.acquire().await.expect("semaphore open");
                let _guard = InFlightGuard::enter(&self.in_flight);
                if self.config.stub_latency_ms > 0 {
                    tokio::time::sleep(Duration::from_millis(self.config.stub_latency_ms)).await;
                }
                let text = stub_output(self.config.kind, request)?;
                let completion =
                    Completion { text, latency: started.elapsed(), attempt_count: 1, raw_finish_reason: "stop".into() };
                self.log(serde_json::json!({
                    "backend": self.config.kind,
                    "query_id": request.query_id,
                    "prompt": request.rendered,
                    "text": completion.text,
                }))?;
                Ok(completion)
            }
        }
    }

    /// Translates every request; results line up with `requests`.
    pub async fn translate_batch(
        &self,
        requests: &[PromptRequest],
        params: &DecodingParams,
        fail_fast: bool,
    ) -> Result<Vec<Result<Completion, BackendError>>, BackendError> {
        let futures = requests.iter().map(|r| self.translate(r, params));
        if fail_fast {
            Ok(futures::future::try_join_all(futures).await?.into_iter().map(Ok).collect())
        } else {
            Ok(futures::future::join_all(futures).await)
        }
    }

    fn log(&self, entry: serde_json::Value) -> Result<(), BackendError> {
        match &self.transcript {
            Some(t) => t.log(&entry),
            None => Ok(()),
        }
    }
}

fn stub_output(kind: BackendKind, request: &PromptRequest) -> Result<String, BackendError> {
    match kind {
        BackendKind::CopyStub => request
            .demos
            .last()
            .map(|d| d.target.clone())
            .ok_or(BackendError::NoDemonstration),
        BackendKind::EchoStub => Ok(request.query.clone()),
        BackendKind::RemoteCompletion => unreachable!("remote requests go through the client"),
    }
}

/// One-off translation with a fresh backend.
pub async fn translate(
    request: &PromptRequest,
    params: &DecodingParams,
    config: &BackendConfig,
) -> Result<Completion, BackendError> {
    Backend::new(config.clone())?.translate(request, params).await
}

/// One-off batch with a fresh backend; failures are kept per request unless
/// `fail_fast` is set.
pub async fn translate_batch(
    requests: &[PromptRequest],
    params: &DecodingParams,
    config: &BackendConfig,
    fail_fast: bool,
) -> Result<Vec<Result<Completion, BackendError>>, BackendError> {
    Backend::new(config.clone())?.translate_batch(requests, params, fail_fast).await
}
