//! Code-generation backends: live HTTP, record/replay cassettes, and
//! deterministic mocks.
//!
//! A cassette maps a stable request key (see [`crate::hash::cassette_key`])
//! to the recorded response text. Replay misses are hard errors, never
//! silent live calls, so a replayed run is hermetic by construction.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;
use thiserror::Error;

use crate::codeparse::{tokenize, TokenKind};
use crate::hash::cassette_key;

/// One generation request. `sample_index` is a slot number that makes
/// repeated samples of the same prompt distinct cassette entries even at
/// temperature 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub model_name: String,
    pub prompt: String,
    pub temperature: f64,
    pub sample_index: u32,
}

impl GenerationRequest {
    pub fn new(
        model_name: impl Into<String>,
        prompt: impl Into<String>,
        sample_index: u32,
    ) -> Self {
        GenerationRequest {
            model_name: model_name.into(),
            prompt: prompt.into(),
            temperature: 0.0,
            sample_index,
        }
    }

    pub fn key(&self) -> String {
        cassette_key(
            &self.model_name,
            &self.prompt,
            self.temperature,
            self.sample_index,
        )
    }
}

/// A generation result, recorded verbatim.
#[derive(Debug, Clone)]
pub struct GenerationResponse {
    pub text: String,
    pub backend_id: String,
    pub latency: Duration,
    pub from_cache: bool,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("replay miss: no cassette entry for key {key} (model {model}, sample {sample_index})")]
    ReplayMiss {
        key: String,
        model: String,
        sample_index: u32,
    },
    #[error("http request failed after {attempts} attempts: {message}")]
    Http { attempts: u32, message: String },
    #[error("rate limit exhausted after {attempts} attempts{}", retry_after.map(|d| format!(" (retry after {}s)", d.as_secs())).unwrap_or_default())]
    RateLimited {
        attempts: u32,
        retry_after: Option<Duration>,
    },
    #[error("missing credentials: environment variable {0} is not set")]
    MissingCredentials(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("cassette i/o at {path}: {message}")]
    CassetteIo { path: String, message: String },
}

/// A code-generation backend. Implementations must be safe for concurrent
/// calls; the pipeline issues up to its configured parallelism at once.
pub trait Backend: Send + Sync {
    /// Stable identifier, recorded on every response.
    fn id(&self) -> &str;

    /// Model name to stamp into requests and result rows.
    fn model_name(&self) -> &str {
        self.id()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError>;
}

/// Persisted map from request key to response text.
///
/// Serialized as a JSON object with keys in sorted order, so the file is
/// bit-exact across runs that record the same responses.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cassette {
    entries: BTreeMap<String, String>,
}

impl Cassette {
    pub fn new() -> Self {
        Cassette::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| BackendError::CassetteIo {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let entries: BTreeMap<String, String> =
            serde_json::from_str(&text).map_err(|e| BackendError::CassetteIo {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        Ok(Cassette { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BackendError> {
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(&self.entries).expect("string map serializes");
        fs::write(path, body + "\n").map_err(|e| BackendError::CassetteIo {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn insert(&mut self, key: String, text: String) {
        self.entries.insert(key, text);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Serves recorded responses only; a miss is an error naming the key.
pub struct ReplayBackend {
    id: String,
    model: String,
    cassette: Cassette,
}

impl ReplayBackend {
    pub fn new(model: impl Into<String>, cassette: Cassette) -> Self {
        ReplayBackend {
            id: "replay".to_string(),
            model: model.into(),
            cassette,
        }
    }

    pub fn from_file(
        model: impl Into<String>,
        path: impl AsRef<Path>,
    ) -> Result<Self, BackendError> {
        Ok(ReplayBackend::new(model, Cassette::load(path)?))
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn model_name(&self) -> &str {
        &self.model
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let key = req.key();
        match self.cassette.get(&key) {
            Some(text) => Ok(GenerationResponse {
                text: text.to_string(),
                backend_id: self.id.clone(),
                latency: Duration::ZERO,
                from_cache: true,
            }),
            None => Err(BackendError::ReplayMiss {
                key,
                model: req.model_name.clone(),
                sample_index: req.sample_index,
            }),
        }
    }
}

/// Wraps another backend and appends every response to a cassette file.
/// Writes go through a single mutex-guarded writer and are flushed to disk
/// on every append, so an interrupted run keeps what it already paid for.
pub struct RecordBackend<B> {
    inner: B,
    path: PathBuf,
    cassette: Mutex<Cassette>,
}

impl<B: Backend> RecordBackend<B> {
    pub fn new(inner: B, path: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let path = path.into();
        let cassette = if path.exists() {
            Cassette::load(&path)?
        } else {
            Cassette::new()
        };
        Ok(RecordBackend {
            inner,
            path,
            cassette: Mutex::new(cassette),
        })
    }
}

impl<B: Backend> Backend for RecordBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let key = req.key();
        {
            let cassette = self.cassette.lock().expect("cassette lock");
            if let Some(text) = cassette.get(&key) {
                return Ok(GenerationResponse {
                    text: text.to_string(),
                    backend_id: self.inner.id().to_string(),
                    latency: Duration::ZERO,
                    from_cache: true,
                });
            }
        }
        let response = self.inner.generate(req)?;
        let mut cassette = self.cassette.lock().expect("cassette lock");
        cassette.insert(key, response.text.clone());
        cassette.save(&self.path)?;
        Ok(response)
    }
}

/// Returns the same payload for every request.
pub struct ConstantMock {
    id: String,
    payload: String,
}

impl ConstantMock {
    pub fn new(payload: impl Into<String>) -> Self {
        ConstantMock {
            id: "constant-mock".to_string(),
            payload: payload.into(),
        }
    }
}

impl Backend for ConstantMock {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, _req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        Ok(GenerationResponse {
            text: self.payload.clone(),
            backend_id: self.id.clone(),
            latency: Duration::ZERO,
            from_cache: false,
        })
    }
}

/// Test double for sensitivity curves: emits a code template with a
/// fraction of its identifiers renamed, the fraction tracking how far the
/// incoming prompt drifted from the nearest registered original prompt.
///
/// Deterministic in its inputs: renames depend only on the template and the
/// corruption fraction, never on scheduling.
pub struct CorruptorMock {
    id: String,
    template: String,
    originals: Vec<Vec<char>>,
}

impl CorruptorMock {
    pub fn new(template: impl Into<String>, originals: Vec<String>) -> Self {
        CorruptorMock {
            id: "corruptor-mock".to_string(),
            template: template.into(),
            originals: originals.iter().map(|o| o.chars().collect()).collect(),
        }
    }

    /// Letter-level difference between a prompt and the nearest registered
    /// original, normalized to [0, 1].
    ///
    /// Length-preserving perturbations (typos) keep their original's
    /// length, so same-length originals are compared position-wise against
    /// the original's letter count and settle the match when any exist.
    /// Prompts with no same-length original drifted in length (synonyms,
    /// paraphrases) and fall back to a length-normalized Levenshtein
    /// distance over all originals.
    fn corruption_fraction(&self, prompt: &str) -> f64 {
        let p: Vec<char> = prompt.chars().collect();
        let same_length = self
            .originals
            .iter()
            .filter(|o| o.len() == p.len())
            .map(|o| hamming_fraction(&p, o))
            .fold(f64::INFINITY, f64::min);
        if same_length.is_finite() {
            return same_length;
        }
        self.originals
            .iter()
            .map(|o| {
                let distance = levenshtein(&p, o);
                (distance as f64 / p.len().max(o.len()).max(1) as f64).clamp(0.0, 1.0)
            })
            .fold(1.0, f64::min)
    }
}

fn hamming_fraction(prompt: &[char], original: &[char]) -> f64 {
    let letters = original.iter().filter(|c| c.is_ascii_alphabetic()).count();
    if letters == 0 {
        return 0.0;
    }
    let differing = prompt.iter().zip(original).filter(|(a, b)| a != b).count();
    (differing as f64 / letters as f64).clamp(0.0, 1.0)
}

fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut current = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        current[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            current[j + 1] = substitution.min(prev[j + 1] + 1).min(current[j] + 1);
        }
        std::mem::swap(&mut prev, &mut current);
    }
    prev[b.len()]
}

/// Rename `round(fraction * distinct_identifiers)` identifiers of
/// `template`, chosen in order of first occurrence. Every occurrence of a
/// renamed identifier changes; the rest of the template is byte-identical.
pub fn rename_identifiers(template: &str, fraction: f64) -> String {
    let tokens = tokenize(template);
    let mut distinct: Vec<&str> = Vec::new();
    for token in &tokens {
        if token.kind == TokenKind::Ident {
            let text = token.text(template);
            if !distinct.contains(&text) {
                distinct.push(text);
            }
        }
    }
    let k = (fraction.clamp(0.0, 1.0) * distinct.len() as f64).round() as usize;
    let renamed: BTreeMap<&str, String> = distinct
        .iter()
        .take(k)
        .map(|&name| {
            let mut candidate = format!("{name}_r");
            while distinct.contains(&candidate.as_str()) {
                candidate.push_str("_r");
            }
            (name, candidate)
        })
        .collect();

    let mut out = String::with_capacity(template.len());
    let mut cursor = 0;
    for token in &tokens {
        out.push_str(&template[cursor..token.start]);
        let text = token.text(template);
        match renamed.get(text) {
            Some(new_name) if token.kind == TokenKind::Ident => out.push_str(new_name),
            _ => out.push_str(text),
        }
        cursor = token.end;
    }
    out.push_str(&template[cursor..]);
    out
}

impl Backend for CorruptorMock {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let fraction = self.corruption_fraction(&req.prompt);
        Ok(GenerationResponse {
            text: rename_identifiers(&self.template, fraction),
            backend_id: self.id.clone(),
            latency: Duration::ZERO,
            from_cache: false,
        })
    }
}

/// Retry schedule for the HTTP backend.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_delay: Duration::from_millis(250),
        }
    }
}

/// Live backend speaking the OpenAI-compatible chat-completions JSON shape:
/// `POST {model, messages: [{role, content}], temperature}` to a
/// configurable URL, reading the first choice's message content.
pub struct HttpBackend {
    id: String,
    url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    timeout: Duration,
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl HttpBackend {
    /// `key_env` names the environment variable holding the credential;
    /// keys never live in config files. Pass `None` for keyless endpoints.
    pub fn new(
        id: impl Into<String>,
        url: impl Into<String>,
        model: impl Into<String>,
        key_env: Option<&str>,
    ) -> Result<Self, BackendError> {
        let api_key = match key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| BackendError::MissingCredentials(var.to_string()))?,
            ),
            None => None,
        };
        Ok(HttpBackend {
            id: id.into(),
            url: url.into(),
            model: model.into(),
            api_key,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(120),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn call_once(&self, req: &GenerationRequest) -> Result<String, AttemptError> {
        let body = serde_json::json!({
            "model": req.model_name,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
        });
        let mut http = ureq::post(&self.url)
            .timeout(self.timeout)
            .set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            http = http.set("Authorization", &format!("Bearer {key}"));
        }
        match http.send_json(body) {
            Ok(response) => {
                let parsed: ChatCompletionResponse = response.into_json().map_err(|e| {
                    AttemptError::Fatal(BackendError::MalformedResponse(e.to_string()))
                })?;
                let choice = parsed.choices.into_iter().next().ok_or_else(|| {
                    AttemptError::Fatal(BackendError::MalformedResponse("no choices".to_string()))
                })?;
                Ok(choice.message.content)
            }
            Err(ureq::Error::Status(429, response)) => {
                let retry_after = response
                    .header("retry-after")
                    .and_then(|v| v.parse::<u64>().ok())
                    .map(Duration::from_secs);
                Err(AttemptError::RateLimited(retry_after))
            }
            // Server-side failures are worth retrying; 4xx are not.
            Err(ureq::Error::Status(code, response)) if code >= 500 => {
                Err(AttemptError::Transient(format!(
                    "status {code}: {}",
                    response.into_string().unwrap_or_default()
                )))
            }
            Err(ureq::Error::Status(code, response)) => {
                Err(AttemptError::Fatal(BackendError::Http {
                    attempts: 1,
                    message: format!(
                        "status {code}: {}",
                        response.into_string().unwrap_or_default()
                    ),
                }))
            }
            Err(ureq::Error::Transport(t)) => Err(AttemptError::Transient(t.to_string())),
        }
    }
}

enum AttemptError {
    Transient(String),
    RateLimited(Option<Duration>),
    Fatal(BackendError),
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn model_name(&self) -> &str {
        &self.model
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let started = Instant::now();
        let mut last_transient = String::new();
        let mut last_retry_after = None;
        let mut rate_limited = false;
        for attempt in 0..self.retry.max_attempts {
            if attempt > 0 {
                // Exponential backoff: base * 2^(attempt-1).
                let delay = self.retry.base_delay * 2u32.pow(attempt - 1);
                std::thread::sleep(last_retry_after.unwrap_or(delay));
            }
            match self.call_once(req) {
                Ok(text) => {
                    return Ok(GenerationResponse {
                        text,
                        backend_id: self.id.clone(),
                        latency: started.elapsed(),
                        from_cache: false,
                    })
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transient(message)) => {
                    rate_limited = false;
                    last_transient = message;
                }
                Err(AttemptError::RateLimited(retry_after)) => {
                    rate_limited = true;
                    last_retry_after = retry_after;
                }
            }
        }
        if rate_limited {
            Err(BackendError::RateLimited {
                attempts: self.retry.max_attempts,
                retry_after: last_retry_after,
            })
        } else {
            Err(BackendError::Http {
                attempts: self.retry.max_attempts,
                message: last_transient,
            })
        }
    }
}

/// Run a batch of requests with at most `parallelism` in flight. Results
/// come back in request order regardless of completion order.
pub fn generate_batch(
    backend: &dyn Backend,
    requests: &[GenerationRequest],
    parallelism: usize,
) -> Vec<Result<GenerationResponse, BackendError>> {
    let parallelism = parallelism.max(1).min(requests.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<GenerationResponse, BackendError>>>> =
        requests.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..parallelism {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= requests.len() {
                    break;
                }
                let result = backend.generate(&requests[idx]);
                *slots[idx].lock().expect("slot lock") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot lock").expect("slot filled"))
        .collect()
}
