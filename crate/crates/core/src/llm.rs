//! Chat-completion providers: an OpenAI-compatible HTTP client and offline
//! mocks, behind a client that adds retries, a concurrency limit and an
//! append-only request journal.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::{parse_candidate_list, RECTIFIER_PREAMBLE};

pub const ENV_API_KEY: &str = "LLM_API_KEY";
pub const ENV_BASE_URL: &str = "LLM_BASE_URL";
pub const ENV_MODEL: &str = "LLM_MODEL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub system: String,
    pub user: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl LlmRequest {
    pub fn new(
        system: impl Into<String>,
        user: impl Into<String>,
        model_name: impl Into<String>,
    ) -> Self {
        Self {
            system: system.into(),
            user: user.into(),
            model_name: model_name.into(),
            temperature: 0.0,
            max_output_tokens: 1024,
        }
    }

    /// Hex SHA-256 over the system and user prompts. Keys fixture replay.
    pub fn prompt_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_bytes());
        h.update([0u8]);
        h.update(self.user.as_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

/// Failure of a single provider attempt.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("malformed provider payload: {0}")]
    Malformed(String),
    #[error("no fixture recorded for prompt hash {0}")]
    FixtureMiss(String),
    #[error("request rejected: {0}")]
    Rejected(String),
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("malformed provider payload: {0}")]
    Malformed(String),
    #[error("no fixture recorded for prompt hash {0}")]
    FixtureMiss(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("journal: {0}")]
    Journal(#[from] std::io::Error),
}

impl From<ProviderError> for LlmError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::Transient(m) => LlmError::RetriesExhausted {
                attempts: 1,
                last: m,
            },
            ProviderError::Auth(m) => LlmError::Auth(m),
            ProviderError::Malformed(m) => LlmError::Malformed(m),
            ProviderError::FixtureMiss(h) => LlmError::FixtureMiss(h),
            ProviderError::Rejected(m) => LlmError::Rejected(m),
        }
    }
}

pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;

    /// One attempt, no retries.
    fn send(&self, req: &LlmRequest) -> Result<LlmResponse, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Wait before attempt `attempt + 1`, given `attempt` failures so far.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay
            .mul_f64(self.factor.powi(attempt.saturating_sub(1) as i32))
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Serialize, Deserialize)]
struct JournalRecord {
    ts: String,
    prompt_hash: String,
    request: LlmRequest,
    response: Option<LlmResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    attempt_count: u32,
}

/// JSON-lines log of every call, one writer at a time.
pub struct Journal {
    out: Mutex<BufWriter<File>>,
}

impl Journal {
    pub fn append_to(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    fn record(&self, rec: &JournalRecord) -> std::io::Result<()> {
        let mut out = self.out.lock().unwrap();
        serde_json::to_writer(&mut *out, rec)?;
        out.write_all(b"\n")?;
        out.flush()
    }
}

/// A completion together with the number of attempts it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub response: LlmResponse,
    pub attempts: u32,
}

pub struct LlmClient {
    provider: Box<dyn LlmProvider>,
    retry: RetryPolicy,
    limiter: Limiter,
    journal: Option<Journal>,
}

impl LlmClient {
    pub fn new(provider: Box<dyn LlmProvider>) -> Self {
        Self {
            provider,
            retry: RetryPolicy::default(),
            limiter: Limiter::new(4),
            journal: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.limiter = Limiter::new(n);
        self
    }

    pub fn with_journal(mut self, journal: Journal) -> Self {
        self.journal = Some(journal);
        self
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    /// Sends `req`, retrying transient failures with exponential backoff.
    pub fn complete(&self, req: &LlmRequest) -> Result<Completion, LlmError> {
        let _permit = self.limiter.acquire();
        let mut attempt = 0;
        let result = loop {
            attempt += 1;
            match self.provider.send(req) {
                Ok(response) => break Ok(response),
                Err(ProviderError::Transient(msg)) if attempt < self.retry.max_attempts => {
                    let wait = self.retry.delay_after(attempt);
                    tracing::warn!(
                        provider = self.provider.name(),
                        attempt,
                        wait_ms = wait.as_millis() as u64,
                        %msg,
                        "transient LLM failure, retrying"
                    );
                    std::thread::sleep(wait);
                }
                Err(ProviderError::Transient(last)) => {
                    break Err(LlmError::RetriesExhausted {
                        attempts: attempt,
                        last,
                    })
                }
                Err(other) => break Err(other.into()),
            }
        };
        if attempt > 1 {
            tracing::info!(
                provider = self.provider.name(),
                attempts = attempt,
                "LLM call finished"
            );
        }
        if let Some(journal) = &self.journal {
            journal.record(&JournalRecord {
                ts: chrono::Utc::now().to_rfc3339(),
                prompt_hash: req.prompt_hash(),
                request: req.clone(),
                response: result.as_ref().ok().cloned(),
                error: result.as_ref().err().map(|e| e.to_string()),
                attempt_count: attempt,
            })?;
        }
        result.map(|response| Completion {
            response,
            attempts: attempt,
        })
    }
}

/// Outcome of a raw HTTP exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct TransportError {
    pub message: String,
}

pub trait HttpTransport: Send + Sync {
    fn post_json(&self, url: &str, bearer: &str, body: &Value)
        -> Result<HttpReply, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &Value,
    ) -> Result<HttpReply, TransportError> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(bearer)
            .json(body)
            .send()
            .map_err(|e| TransportError {
                message: e.to_string(),
            })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError {
            message: e.to_string(),
        })?;
        Ok(HttpReply { status, body })
    }
}

/// OpenAI-compatible `/chat/completions` endpoint.
pub struct OpenAiCompatible {
    endpoint: String,
    api_key: String,
    transport: Box<dyn HttpTransport>,
}

impl OpenAiCompatible {
    pub fn new(
        base_url: &str,
        api_key: &str,
        transport: Box<dyn HttpTransport>,
    ) -> Result<Self, LlmError> {
        if api_key.trim().is_empty() {
            return Err(LlmError::Config(format!("{ENV_API_KEY} is not set")));
        }
        Ok(Self {
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key: api_key.to_string(),
            transport,
        })
    }

    /// Reads the credential and base URL from the environment.
    pub fn from_env(timeout: Duration) -> Result<Self, LlmError> {
        let key = std::env::var(ENV_API_KEY).unwrap_or_default();
        let base = std::env::var(ENV_BASE_URL).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        if key.trim().is_empty() {
            return Err(LlmError::Config(format!("{ENV_API_KEY} is not set")));
        }
        Self::new(&base, &key, Box::new(ReqwestTransport::new(timeout)?))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

fn parse_chat_completion(body: &str) -> Result<(String, u64, u64), ProviderError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))?;
    let usage = |k: &str| {
        v.pointer(&format!("/usage/{k}"))
            .and_then(Value::as_u64)
            .unwrap_or(0)
    };
    Ok((
        text.to_string(),
        usage("prompt_tokens"),
        usage("completion_tokens"),
    ))
}

impl LlmProvider for OpenAiCompatible {
    fn name(&self) -> &str {
        "openai-compatible"
    }

    fn send(&self, req: &LlmRequest) -> Result<LlmResponse, ProviderError> {
        let body = json!({
            "model": req.model_name,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        let start = Instant::now();
        let reply = self
            .transport
            .post_json(&self.endpoint, &self.api_key, &body)
            .map_err(|e| ProviderError::Transient(e.message))?;
        let latency_ms = start.elapsed().as_millis() as u64;
        match reply.status {
            200..=299 => {
                let (text, prompt_tokens, completion_tokens) = parse_chat_completion(&reply.body)?;
                Ok(LlmResponse {
                    text,
                    prompt_tokens,
                    completion_tokens,
                    latency_ms,
                })
            }
            401 | 403 => Err(ProviderError::Auth(format!("HTTP {}", reply.status))),
            408 | 429 | 500..=599 => Err(ProviderError::Transient(format!(
                "HTTP {}: {}",
                reply.status,
                truncate(&reply.body, 200)
            ))),
            s => Err(ProviderError::Rejected(format!(
                "HTTP {s}: {}",
                truncate(&reply.body, 200)
            ))),
        }
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Ways the corrupting mock damages an otherwise correct answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptMode {
    Duplicates,
    ShortList,
    InvalidJson,
    /// One of the above, picked by prompt hash.
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockRule {
    /// Answers with the first `k_out` ids of the prompt's candidate list.
    EchoTopCandidates,
    /// Replays recorded answers keyed by prompt hash.
    FixtureTable(HashMap<String, String>),
    /// Corrupts the echo answer. With `recover_on_review`, review prompts
    /// get a clean echo answer instead.
    CorruptOutput {
        mode: CorruptMode,
        recover_on_review: bool,
    },
}

/// Deterministic offline provider.
pub struct MockProvider {
    rule: MockRule,
    k_out: usize,
}

impl MockProvider {
    pub fn new(rule: MockRule, k_out: usize) -> Self {
        Self { rule, k_out }
    }

    pub fn echo(k_out: usize) -> Self {
        Self::new(MockRule::EchoTopCandidates, k_out)
    }

    /// Builds a fixture table from a journal written by [`LlmClient`].
    pub fn fixtures_from_journal(path: &Path, k_out: usize) -> Result<Self, LlmError> {
        let reader = BufReader::new(File::open(path)?);
        let mut table = HashMap::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: JournalRecord = serde_json::from_str(&line)
                .map_err(|e| LlmError::Config(format!("journal line: {e}")))?;
            if let Some(resp) = rec.response {
                table.insert(rec.prompt_hash, resp.text);
            }
        }
        Ok(Self::new(MockRule::FixtureTable(table), k_out))
    }

    fn echo_items(&self, prompt: &str) -> Result<Vec<String>, ProviderError> {
        let mut ids = parse_candidate_list(prompt)
            .ok_or_else(|| ProviderError::Rejected("prompt has no candidate list".into()))?;
        ids.truncate(self.k_out);
        Ok(ids)
    }

    fn answer(items: &[String]) -> String {
        json!({"recommendations": items, "reason": "Closest candidates to the latest check-in."})
            .to_string()
    }

    fn corrupt(&self, req: &LlmRequest, mode: CorruptMode) -> Result<String, ProviderError> {
        let mut items = self.echo_items(&req.user)?;
        let mode = match mode {
            CorruptMode::Mixed => {
                let first = u8::from_str_radix(&req.prompt_hash()[..2], 16).unwrap_or(0);
                [
                    CorruptMode::Duplicates,
                    CorruptMode::ShortList,
                    CorruptMode::InvalidJson,
                ][first as usize % 3]
            }
            m => m,
        };
        Ok(match mode {
            CorruptMode::Duplicates => {
                if items.len() >= 2 {
                    let last = items.len() - 1;
                    items[last] = items[0].clone();
                } else if let Some(first) = items.first().cloned() {
                    items.push(first);
                }
                Self::answer(&items)
            }
            CorruptMode::ShortList => {
                items.truncate(
                    self.k_out
                        .saturating_sub(3)
                        .max(1)
                        .min(self.k_out.saturating_sub(1)),
                );
                Self::answer(&items)
            }
            CorruptMode::InvalidJson | CorruptMode::Mixed => {
                let mut s = Self::answer(&items);
                s.truncate(s.len() / 2);
                format!("Here you go: {s}")
            }
        })
    }
}

fn rough_tokens(s: &str) -> u64 {
    (s.chars().count() as u64).div_ceil(4)
}

impl LlmProvider for MockProvider {
    fn name(&self) -> &str {
        match self.rule {
            MockRule::EchoTopCandidates => "mock-echo",
            MockRule::FixtureTable(_) => "mock-fixture",
            MockRule::CorruptOutput { .. } => "mock-corrupt",
        }
    }

    fn send(&self, req: &LlmRequest) -> Result<LlmResponse, ProviderError> {
        let text = match &self.rule {
            MockRule::EchoTopCandidates => Self::answer(&self.echo_items(&req.user)?),
            MockRule::FixtureTable(table) => {
                let hash = req.prompt_hash();
                table
                    .get(&hash)
                    .cloned()
                    .ok_or(ProviderError::FixtureMiss(hash))?
            }
            MockRule::CorruptOutput {
                mode,
                recover_on_review,
            } => {
                if *recover_on_review && req.user.starts_with(RECTIFIER_PREAMBLE) {
                    Self::answer(&self.echo_items(&req.user)?)
                } else {
                    self.corrupt(req, *mode)?
                }
            }
        };
        Ok(LlmResponse {
            prompt_tokens: rough_tokens(&req.system) + rough_tokens(&req.user),
            completion_tokens: rough_tokens(&text),
            text,
            latency_ms: 0,
        })
    }
}
