//! Chat-completion clients: OpenAI-compatible HTTP, transcript replay and
//! recording.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

#[derive(Debug, thiserror::Error)]
pub enum ChatError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("environment variable {0} is not set")]
    MissingApiKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Identifies the video a solver request is about. Frames themselves are
/// attached by a vision-capable proxy keyed on this id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMetadata {
    pub video_id: String,
}

/// Body of a chat-completions request. The serialized form doubles as the
/// canonical input of [`request_hash`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<RequestMetadata>,
}

/// SHA-256 over the compact JSON of the request, hex encoded.
pub fn request_hash(req: &ChatRequest) -> String {
    let body = serde_json::to_vec(req).expect("request serializes");
    hex::encode(Sha256::digest(&body))
}

pub trait ChatClient: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<String, ChatError>;
}

/// A client bound to a model and decoding temperature.
#[derive(Clone, Copy)]
pub struct Endpoint<'a> {
    pub client: &'a dyn ChatClient,
    pub model: &'a str,
    pub temperature: f64,
}

impl<'a> Endpoint<'a> {
    pub fn new(client: &'a dyn ChatClient, model: &'a str, temperature: f64) -> Self {
        Self {
            client,
            model,
            temperature,
        }
    }

    pub fn request(&self, messages: Vec<ChatMessage>, video_id: Option<&str>) -> ChatRequest {
        ChatRequest {
            model: self.model.to_owned(),
            messages,
            temperature: self.temperature,
            metadata: video_id.map(|v| RequestMetadata { video_id: v.to_owned() }),
        }
    }

    pub fn ask(&self, messages: Vec<ChatMessage>, video_id: Option<&str>) -> Result<String, ChatError> {
        self.client.send(&self.request(messages, video_id))
    }
}

fn default_temperature() -> f64 {
    0.0
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    3
}

fn default_backoff() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatEndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token; no
    /// Authorization header is sent when absent.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// First retry delay; later delays double.
    #[serde(default = "default_backoff")]
    pub backoff_secs: f64,
}

impl ChatEndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            temperature: default_temperature(),
            backoff_secs: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_url.trim().is_empty() {
            return Err(invalid!("endpoint base_url is empty"));
        }
        if self.model.trim().is_empty() {
            return Err(invalid!("endpoint model is empty"));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(invalid!("endpoint timeout must be positive, got {}", self.timeout_secs));
        }
        if !(self.backoff_secs.is_finite() && self.backoff_secs >= 0.0) {
            return Err(invalid!(
                "endpoint backoff must be non-negative, got {}",
                self.backoff_secs
            ));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(invalid!(
                "endpoint temperature must be non-negative, got {}",
                self.temperature
            ));
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: Option<String>,
}

fn extract_content(body: &str) -> Result<String, ChatError> {
    let parsed: CompletionResponse =
        serde_json::from_str(body).map_err(|e| ChatError::Protocol(format!("bad completion body: {e}")))?;
    let first = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ChatError::Protocol("completion has no choices".to_owned()))?;
    first
        .message
        .content
        .ok_or_else(|| ChatError::Protocol("first choice has no content".to_owned()))
}

enum Attempt {
    Done(String),
    Retry(ChatError),
    Fail(ChatError),
}

/// Blocking OpenAI-compatible chat-completions client.
pub struct HttpChatClient {
    config: ChatEndpointConfig,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(config: ChatEndpointConfig) -> Result<Self> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent })
    }

    pub fn config(&self) -> &ChatEndpointConfig {
        &self.config
    }

    fn attempt(&self, body: &[u8], key: Option<&str>) -> Attempt {
        let mut req = self
            .agent
            .post(self.config.url())
            .header("Content-Type", "application/json");
        if let Some(key) = key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(t)) => return Attempt::Retry(ChatError::Transport(format!("timed out ({t})"))),
            Err(e @ (ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound)) => {
                return Attempt::Retry(ChatError::Transport(e.to_string()))
            }
            Err(e) => return Attempt::Fail(ChatError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(t)) => return Attempt::Retry(ChatError::Transport(format!("timed out ({t})"))),
            Err(e) => return Attempt::Fail(ChatError::Protocol(format!("unreadable body: {e}"))),
        };
        match status {
            200..=299 => match extract_content(&text) {
                Ok(content) => Attempt::Done(content),
                Err(e) => Attempt::Fail(e),
            },
            429 | 500..=599 => Attempt::Retry(ChatError::Status { status, body: text }),
            _ => Attempt::Fail(ChatError::Status { status, body: text }),
        }
    }
}

impl ChatClient for HttpChatClient {
    fn send(&self, req: &ChatRequest) -> Result<String, ChatError> {
        if req.messages.is_empty() {
            return Err(ChatError::Protocol("request has no messages".to_owned()));
        }
        let key = match &self.config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| ChatError::MissingApiKey(var.clone()))?),
            None => None,
        };
        let body = serde_json::to_vec(req).map_err(|e| ChatError::Protocol(e.to_string()))?;
        let mut delay = self.config.backoff_secs;
        let mut attempt = 0;
        loop {
            match self.attempt(&body, key.as_deref()) {
                Attempt::Done(content) => return Ok(content),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt >= self.config.max_retries => {
                    return Err(ChatError::Transport(format!(
                        "giving up after {} attempt(s): {e}",
                        attempt + 1
                    )))
                }
                Attempt::Retry(e) => {
                    log::warn!("chat request failed ({e}); retrying in {delay}s");
                    thread::sleep(Duration::from_secs_f64(delay));
                    delay *= 2.0;
                    attempt += 1;
                }
            }
        }
    }
}

/// Sends one request with a fresh client.
pub fn send_chat(req: &ChatRequest, config: &ChatEndpointConfig) -> Result<String> {
    Ok(HttpChatClient::new(config.clone())?.send(req)?)
}

/// One transcript line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptEntry {
    pub request_hash: String,
    pub response: String,
}

/// Answers requests from a recorded transcript keyed by [`request_hash`].
#[derive(Debug, Clone, Default)]
pub struct ReplayClient {
    responses: BTreeMap<String, String>,
}

impl ReplayClient {
    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Result<Self> {
        let mut responses = BTreeMap::new();
        for e in entries {
            let hash = e.request_hash.clone();
            if responses.insert(e.request_hash, e.response).is_some() {
                return Err(invalid!("duplicate request hash {hash} in transcript"));
            }
        }
        Ok(Self { responses })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line).map_err(|e| Error::Format {
                kind: "transcript",
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", n + 1),
            })?;
            entries.push(entry);
        }
        Self::from_entries(entries).map_err(|e| Error::Format {
            kind: "transcript",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatClient for ReplayClient {
    fn send(&self, req: &ChatRequest) -> Result<String, ChatError> {
        let hash = request_hash(req);
        self.responses.get(&hash).cloned().ok_or(ChatError::ReplayMiss(hash))
    }
}

/// Forwards to an inner client and keeps every successful exchange.
pub struct RecordingClient<C> {
    inner: C,
    log: Mutex<BTreeMap<String, String>>,
}

impl<C: ChatClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            log: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.log
            .lock()
            .expect("recording lock")
            .iter()
            .map(|(h, r)| TranscriptEntry {
                request_hash: h.clone(),
                response: r.clone(),
            })
            .collect()
    }

    /// Writes the transcript as JSONL sorted by hash, so concurrent
    /// recording produces identical files.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_transcript(path, &self.entries())
    }

    pub fn into_inner(self) -> C {
        self.inner
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn send(&self, req: &ChatRequest) -> Result<String, ChatError> {
        let response = self.inner.send(req)?;
        self.log
            .lock()
            .expect("recording lock")
            .entry(request_hash(req))
            .or_insert_with(|| response.clone());
        Ok(response)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn send(&self, req: &ChatRequest) -> Result<String, ChatError> {
        (**self).send(req)
    }
}

pub fn write_transcript(path: &Path, entries: &[TranscriptEntry]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
