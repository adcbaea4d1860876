//! Chat-completion transport.
//!
//! [`Gateway`] is the seam between extraction and a model server. Two
//! strategies ship: [`HttpGateway`] for OpenAI-compatible chat endpoints
//! and [`StubGateway`] which answers from a fixture table keyed by the
//! SHA-256 of the prompt. [`GatewayRegistry`] selects one by name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const API_KEY_ENV: &str = "INDALIGN_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("no stub fixture for prompt hash {0}")]
    MissingFixture(String),
    #[error("invalid gateway config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Fixture { path: PathBuf, message: String },
    #[error("unknown gateway kind `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_concurrent_requests: usize,
    /// First retry delay; doubles on each further retry.
    pub backoff_base_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://localhost:11434/v1/chat/completions".into(),
            model_name: "llama3.1".into(),
            temperature: 0.0,
            max_tokens: 512,
            timeout_secs: 120.0,
            max_retries: 2,
            max_concurrent_requests: 4,
            backoff_base_ms: 500,
            api_key: None,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Config(m.to_string()));
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be finite and >= 0");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if self.max_concurrent_requests == 0 {
            return bad("max_concurrent_requests must be positive");
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout_secs must be positive");
        }
        if self.model_name.is_empty() {
            return bad("model_name must not be empty");
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Environment variable wins over the config value.
    pub fn resolved_api_key(&self) -> Option<String> {
        std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .or_else(|| self.api_key.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub latency: Duration,
    /// 1-based attempt that succeeded.
    pub attempt: u32,
}

pub trait Gateway: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<ChatResponse, GatewayError>;

    /// Part of every cache key.
    fn model_name(&self) -> &str;

    fn max_concurrency(&self) -> usize {
        1
    }

    /// Completions requested so far (including retries).
    fn calls(&self) -> usize;
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct AdmissionLimit {
    capacity: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

impl AdmissionLimit {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn acquire(&self) -> AdmissionPermit<'_> {
        let mut n = self.in_use.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.capacity {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        AdmissionPermit { limit: self }
    }
}

pub struct AdmissionPermit<'a> {
    limit: &'a AdmissionLimit,
}

impl Drop for AdmissionPermit<'_> {
    fn drop(&mut self) {
        let mut n = self.limit.in_use.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.limit.freed.notify_one();
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

enum Failure {
    Transient(String),
    Timeout,
    Fatal(String),
}

/// OpenAI-compatible `/chat/completions` client with retry and backoff.
pub struct HttpGateway {
    config: GatewayConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    limit: AdmissionLimit,
    calls: AtomicUsize,
}

impl HttpGateway {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            api_key: config.resolved_api_key(),
            limit: AdmissionLimit::new(config.max_concurrent_requests),
            config,
            client,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    fn attempt(&self, prompt: &str) -> Result<String, Failure> {
        let body = ChatRequest {
            model: &self.config.model_name,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let mut req = self.client.post(&self.config.endpoint_url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Failure::Timeout
            } else {
                Failure::Transient(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
            return Err(Failure::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(Failure::Fatal(format!("HTTP {status}: {body}")));
        }
        let json: serde_json::Value = resp.json().map_err(|e| {
            if e.is_timeout() {
                Failure::Timeout
            } else {
                Failure::Transient(format!("bad response body: {e}"))
            }
        })?;
        completion_text(&json).ok_or_else(|| Failure::Fatal(format!("no completion text in response: {json}")))
    }
}

/// Pulls the generated text out of the common response shapes.
pub fn completion_text(json: &serde_json::Value) -> Option<String> {
    let choice = json.get("choices").and_then(|c| c.get(0));
    choice
        .and_then(|c| c.pointer("/message/content"))
        .or_else(|| choice.and_then(|c| c.get("text")))
        .or_else(|| json.pointer("/message/content"))
        .or_else(|| json.get("response"))
        .and_then(|v| v.as_str())
        .map(str::to_string)
}

impl Gateway for HttpGateway {
    fn complete(&self, prompt: &str) -> Result<ChatResponse, GatewayError> {
        let _permit = self.limit.acquire();
        let started = Instant::now();
        let max_attempts = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.calls.fetch_add(1, Ordering::Relaxed);
            let failure = match self.attempt(prompt) {
                Ok(text) => {
                    return Ok(ChatResponse {
                        text,
                        latency: started.elapsed(),
                        attempt,
                    })
                }
                Err(f) => f,
            };
            let err = match failure {
                Failure::Fatal(message) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Failure::Timeout => GatewayError::Timeout { attempts: attempt },
                Failure::Transient(message) => GatewayError::Transport {
                    attempts: attempt,
                    message,
                },
            };
            if attempt >= max_attempts {
                return Err(err);
            }
            let delay = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
            std::thread::sleep(Duration::from_millis(delay));
        }
    }

    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn max_concurrency(&self) -> usize {
        self.limit.capacity()
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Offline gateway answering from a `prompt hash -> response` table.
pub struct StubGateway {
    model_name: String,
    responses: BTreeMap<String, String>,
    fallback: Option<String>,
    concurrency: usize,
    calls: AtomicUsize,
}

impl StubGateway {
    pub fn new(model_name: impl Into<String>, responses: BTreeMap<String, String>) -> Self {
        Self {
            model_name: model_name.into(),
            responses,
            fallback: None,
            concurrency: 4,
            calls: AtomicUsize::new(0),
        }
    }

    /// Builds the table from `(prompt, response)` pairs.
    pub fn from_prompts<I, P, R>(model_name: impl Into<String>, pairs: I) -> Self
    where
        I: IntoIterator<Item = (P, R)>,
        P: AsRef<str>,
        R: Into<String>,
    {
        let responses = pairs
            .into_iter()
            .map(|(p, r)| (prompt_hash(p.as_ref()), r.into()))
            .collect();
        Self::new(model_name, responses)
    }

    pub fn load(model_name: impl Into<String>, path: &Path) -> Result<Self, GatewayError> {
        let fixture_err = |message: String| GatewayError::Fixture {
            path: path.to_path_buf(),
            message,
        };
        let data = std::fs::read_to_string(path).map_err(|e| fixture_err(e.to_string()))?;
        let responses: BTreeMap<String, String> =
            serde_json::from_str(&data).map_err(|e| fixture_err(e.to_string()))?;
        Ok(Self::new(model_name, responses))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(&self.responses).expect("string map serializes");
        std::fs::write(path, json + "\n")
    }

    /// Response for prompts without a fixture.
    pub fn with_fallback(mut self, text: impl Into<String>) -> Self {
        self.fallback = Some(text.into());
        self
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.concurrency = n.max(1);
        self
    }

    pub fn responses(&self) -> &BTreeMap<String, String> {
        &self.responses
    }
}

impl Gateway for StubGateway {
    fn complete(&self, prompt: &str) -> Result<ChatResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let hash = prompt_hash(prompt);
        let text = self
            .responses
            .get(&hash)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or(GatewayError::MissingFixture(hash))?;
        Ok(ChatResponse {
            text,
            latency: Duration::ZERO,
            attempt: 1,
        })
    }

    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn max_concurrency(&self) -> usize {
        self.concurrency
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Everything a gateway factory may need.
#[derive(Debug, Clone, Default)]
pub struct GatewaySettings {
    pub config: GatewayConfig,
    pub stub_fixtures: Option<PathBuf>,
}

pub type GatewayFactory = fn(&GatewaySettings) -> Result<Arc<dyn Gateway>, GatewayError>;

/// Name -> gateway constructor.
pub struct GatewayRegistry {
    factories: BTreeMap<&'static str, GatewayFactory>,
}

impl GatewayRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: GatewayFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn build(&self, name: &str, settings: &GatewaySettings) -> Result<Arc<dyn Gateway>, GatewayError> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| GatewayError::UnknownKind(name.to_string()))?;
        factory(settings)
    }
}

impl Default for GatewayRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("http", |s| Ok(Arc::new(HttpGateway::new(s.config.clone())?)));
        r.register("stub", |s| {
            let path = s
                .stub_fixtures
                .as_ref()
                .ok_or_else(|| GatewayError::Config("stub gateway needs a fixtures file".into()))?;
            let stub = StubGateway::load(s.config.model_name.clone(), path)?
                .with_concurrency(s.config.max_concurrent_requests);
            Ok(Arc::new(stub))
        });
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::AtomicUsize;

    /// Serves `statuses` in order, one per connection, answering 200s with a
    /// chat completion body.
    fn scripted_server(statuses: Vec<u16>) -> (String, Arc<AtomicUsize>, std::thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let handle = std::thread::spawn(move || {
            for status in statuses {
                let (mut stream, _) = listener.accept().unwrap();
                counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                assert_eq!(req["model"], "llama3.1");
                assert_eq!(req["messages"][0]["role"], "user");
                let payload = if status == 200 {
                    r#"{"choices":[{"message":{"role":"assistant","content":"YES"}}]}"#
                } else {
                    r#"{"error":"boom"}"#
                };
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                )
                .unwrap();
            }
        });
        (url, hits, handle)
    }

    fn fast_config(url: String, max_retries: u32) -> GatewayConfig {
        GatewayConfig {
            endpoint_url: url,
            max_retries,
            backoff_base_ms: 1,
            timeout_secs: 5.0,
            ..Default::default()
        }
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, hits, handle) = scripted_server(vec![500, 500, 200]);
        let gw = HttpGateway::new(fast_config(url, 2)).unwrap();
        let resp = gw.complete("Does this text use a form of address?").unwrap();
        handle.join().unwrap();
        assert_eq!(resp.text, "YES");
        assert_eq!(resp.attempt, 3);
        assert_eq!(hits.load(Ordering::SeqCst), 3);
        assert_eq!(gw.calls(), 3);
    }

    #[test]
    fn unreachable_endpoint_gives_up_after_retries() {
        // bind then drop to get a port nobody listens on
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let gw = HttpGateway::new(fast_config(format!("http://127.0.0.1:{port}/v1"), 1)).unwrap();
        let err = gw.complete("hello").unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 2, .. }), "{err}");
        assert_eq!(gw.calls(), 2);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, hits, handle) = scripted_server(vec![400]);
        let gw = HttpGateway::new(fast_config(url, 3)).unwrap();
        assert!(gw.complete("x").is_err());
        handle.join().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn stub_answers_by_prompt_hash() {
        let stub = StubGateway::from_prompts("llama3.1", [("prompt one", "YES")]);
        let r = stub.complete("prompt one").unwrap();
        assert_eq!((r.text.as_str(), r.attempt), ("YES", 1));
        assert_eq!(stub.complete("prompt one").unwrap().text, r.text);
        assert!(matches!(stub.complete("other"), Err(GatewayError::MissingFixture(_))));
        assert_eq!(stub.calls(), 3);
    }

    #[test]
    fn stub_fixture_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixtures.json");
        let stub = StubGateway::from_prompts("m", [("a", "YES"), ("b", "[1]")]);
        stub.save(&path).unwrap();
        let back = StubGateway::load("m", &path).unwrap();
        assert_eq!(back.responses(), stub.responses());
        assert!(back.responses().contains_key(&prompt_hash("a")));
    }

    #[test]
    fn prompt_hash_is_sha256_hex() {
        assert_eq!(
            prompt_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn completion_text_shapes() {
        let openai = serde_json::json!({"choices":[{"message":{"content":"a"}}]});
        let legacy = serde_json::json!({"choices":[{"text":"b"}]});
        let ollama = serde_json::json!({"message":{"content":"c"}});
        assert_eq!(completion_text(&openai).as_deref(), Some("a"));
        assert_eq!(completion_text(&legacy).as_deref(), Some("b"));
        assert_eq!(completion_text(&ollama).as_deref(), Some("c"));
        assert_eq!(completion_text(&serde_json::json!({})), None);
    }

    #[test]
    fn config_validation() {
        assert!(GatewayConfig::default().validate().is_ok());
        let bad = GatewayConfig {
            temperature: f64::NAN,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let zero = GatewayConfig {
            max_concurrent_requests: 0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn admission_limit_bounds_concurrency() {
        let limit = Arc::new(AdmissionLimit::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let (limit, active, peak) = (limit.clone(), active.clone(), peak.clone());
                s.spawn(move || {
                    let _p = limit.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn registry_selects_by_name() {
        let reg = GatewayRegistry::default();
        assert_eq!(reg.names(), vec!["http", "stub"]);
        assert!(matches!(
            reg.build("grpc", &GatewaySettings::default()),
            Err(GatewayError::UnknownKind(_))
        ));
        assert!(matches!(
            reg.build("stub", &GatewaySettings::default()),
            Err(GatewayError::Config(_))
        ));
        let gw = reg.build("http", &GatewaySettings::default()).unwrap();
        assert_eq!(gw.model_name(), "llama3.1");
    }
}
