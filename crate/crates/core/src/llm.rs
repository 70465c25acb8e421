//! Completion interface over pluggable LLM backends.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub n: usize,
    pub max_tokens: usize,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            temperature: 0.0,
            top_p: 1.0,
            n: 1,
            max_tokens: 512,
        }
    }

    pub fn with_sampling(mut self, n: usize, temperature: f64, top_p: f64) -> Self {
        self.n = n;
        self.temperature = temperature;
        self.top_p = top_p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt.is_empty() {
            return Err(Error::InvalidInput("prompt is empty".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidInput("n must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::InvalidInput("temperature must be >= 0".into()));
        }
        if self.top_p.is_nan() || self.top_p <= 0.0 || self.top_p > 1.0 {
            return Err(Error::InvalidInput("top_p must lie in (0, 1]".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidInput("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub samples: Vec<String>,
    pub provider: String,
    pub latency_ms: u64,
}

pub trait LlmClient: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult>;
}

impl<T: LlmClient + ?Sized> LlmClient for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult> {
        (**self).complete(request)
    }
}

/// Hex SHA-256 of the prompt bytes. Fixture files are named after it.
pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

type ResponderFn = dyn Fn(&CompletionRequest) -> Vec<String> + Send + Sync;

#[derive(Clone)]
enum Responder {
    Fixtures(HashMap<String, Vec<String>>),
    Script(Vec<String>),
    Func(Arc<ResponderFn>),
}

/// Deterministic offline provider.
///
/// * fixtures: responses keyed by [`prompt_hash`]; a missing key is an error.
/// * script: sample `i` of every call is `script[i % len]`.
/// * func: responses computed from the request.
#[derive(Clone)]
pub struct ScriptedProvider {
    responder: Responder,
}

impl fmt::Debug for ScriptedProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match &self.responder {
            Responder::Fixtures(m) => format!("fixtures({})", m.len()),
            Responder::Script(s) => format!("script({})", s.len()),
            Responder::Func(_) => "func".to_string(),
        };
        f.debug_struct("ScriptedProvider").field("mode", &mode).finish()
    }
}

#[derive(Deserialize)]
struct FixtureFile {
    samples: Vec<String>,
}

impl ScriptedProvider {
    pub fn with_fixtures(fixtures: HashMap<String, Vec<String>>) -> Self {
        ScriptedProvider {
            responder: Responder::Fixtures(fixtures),
        }
    }

    /// Loads every `<prompt-hash>.json` file (`{"samples": [...]}`) in `dir`.
    pub fn from_fixture_dir(dir: &Path) -> Result<Self> {
        let mut fixtures = HashMap::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io_at(dir, e))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let body = fs::read_to_string(&path).map_err(|e| Error::io_at(&path, e))?;
            let file: FixtureFile = serde_json::from_str(&body)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
            fixtures.insert(stem.to_string(), file.samples);
        }
        Ok(Self::with_fixtures(fixtures))
    }

    pub fn script<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedProvider {
            responder: Responder::Script(responses.into_iter().map(Into::into).collect()),
        }
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Vec<String> + Send + Sync + 'static,
    {
        ScriptedProvider {
            responder: Responder::Func(Arc::new(f)),
        }
    }

    /// Writes a fixture file for `prompt` into `dir`.
    pub fn write_fixture(dir: &Path, prompt: &str, samples: &[String]) -> Result<()> {
        let path = dir.join(format!("{}.json", prompt_hash(prompt)));
        let body = serde_json::json!({ "samples": samples });
        fs::write(&path, serde_json::to_string_pretty(&body)?).map_err(|e| Error::io_at(&path, e))
    }
}

fn cycle(pool: &[String], n: usize) -> Vec<String> {
    (0..n).map(|i| pool[i % pool.len()].clone()).collect()
}

impl LlmClient for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult> {
        request.validate()?;
        let hash = prompt_hash(&request.prompt);
        let samples = match &self.responder {
            Responder::Fixtures(map) => match map.get(&hash) {
                Some(pool) if !pool.is_empty() => cycle(pool, request.n),
                _ => return Err(Error::FixtureMiss(hash)),
            },
            Responder::Script(script) if script.is_empty() => return Err(Error::FixtureMiss(hash)),
            Responder::Script(script) => cycle(script, request.n),
            Responder::Func(f) => {
                let out = f(request);
                if out.is_empty() {
                    return Err(Error::FixtureMiss(hash));
                }
                cycle(&out, request.n)
            }
        };
        tracing::debug!(provider = "scripted", prompt_hash = %hash, n = request.n, "completion");
        Ok(CompletionResult {
            samples,
            provider: self.name().to_string(),
            latency_ms: 0,
        })
    }
}

/// Forwards requests to an OpenAI-style completions endpoint.
#[derive(Clone)]
pub struct HttpProvider {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    max_attempts: u32,
    backoff_base: Duration,
}

impl fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpProvider")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("timeout", &self.timeout)
            .finish()
    }
}

pub const API_KEY_ENV: &str = "RAGFORGE_LLM_API_KEY";

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    top_p: f64,
    n: usize,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    text: Option<String>,
    message: Option<WireMessage>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpProvider {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(30),
            max_attempts: 3,
            backoff_base: Duration::from_secs(1),
        }
    }

    /// Reads the key from `RAGFORGE_LLM_API_KEY` when present.
    pub fn with_env_key(mut self) -> Self {
        self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        self
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_retry(mut self, max_attempts: u32, backoff_base: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff_base = backoff_base;
        self
    }

    fn attempt(&self, agent: &ureq::Agent, request: &CompletionRequest) -> Result<Vec<String>> {
        let body = WireRequest {
            model: &self.model,
            prompt: &request.prompt,
            temperature: request.temperature,
            top_p: request.top_p,
            n: request.n,
            max_tokens: request.max_tokens,
        };
        let mut req = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = match req.send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                return Err(Error::Transport(format!("backend returned status {code}")))
            }
            Err(ureq::Error::Status(code, _)) => {
                return Err(Error::InvalidInput(format!("backend rejected request with status {code}")))
            }
            Err(ureq::Error::Transport(t)) => return Err(Error::Transport(t.to_string())),
        };
        let parsed: WireResponse = resp
            .into_json()
            .map_err(|e| Error::Transport(format!("unreadable response body: {e}")))?;
        Ok(parsed
            .choices
            .into_iter()
            .map(|c| c.text.or(c.message.map(|m| m.content)).unwrap_or_default())
            .collect())
    }
}

impl LlmClient for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult> {
        request.validate()?;
        let hash = prompt_hash(&request.prompt);
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let started = Instant::now();
        let mut last = None;
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                thread::sleep(self.backoff_base * 2u32.pow(attempt - 1));
            }
            match self.attempt(&agent, request) {
                Ok(samples) => {
                    tracing::debug!(provider = "http", prompt_hash = %hash, attempt, "completion");
                    return Ok(CompletionResult {
                        samples,
                        provider: self.name().to_string(),
                        latency_ms: started.elapsed().as_millis() as u64,
                    });
                }
                Err(e) if e.is_transient() => {
                    tracing::warn!(provider = "http", prompt_hash = %hash, attempt, error = %e, "retrying");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::Transport("no attempts made".into())))
    }
}

/// Caps the number of concurrent calls into the wrapped client.
pub struct BoundedClient<C> {
    inner: C,
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<C: LlmClient> BoundedClient<C> {
    pub fn new(inner: C, limit: usize) -> Self {
        BoundedClient {
            inner,
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }
}

struct Permit<'a> {
    count: &'a Mutex<usize>,
    freed: &'a Condvar,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.count.lock().unwrap_or_else(|p| p.into_inner()) -= 1;
        self.freed.notify_one();
    }
}

impl<C: LlmClient> LlmClient for BoundedClient<C> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult> {
        let mut guard = self.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        while *guard >= self.limit {
            guard = self.freed.wait(guard).unwrap_or_else(|p| p.into_inner());
        }
        *guard += 1;
        drop(guard);
        let _permit = Permit {
            count: &self.in_flight,
            freed: &self.freed,
        };
        self.inner.complete(request)
    }
}
