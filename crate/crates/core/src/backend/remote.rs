//! HTTP backend speaking a minimal completions-with-logprobs protocol.
//!
//! Request body:
//! `{"prompt", "continuation"?, "max_tokens", "temperature", "seed"?, "logprobs": true, "echo_continuation": true}`
//! Response body: `{"tokens": [..], "token_logprobs": [..], "text": ".."}`.
//!
//! Responses are cached on disk, one JSON file per request content hash.

use std::fs;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    BackendKind, Boundary, Capabilities, LmBackend, SampleRequest, Sampled, ScoredSequence,
};
use crate::error::{Error, Result};
use crate::hashing::sha256_hex;

pub const ENDPOINT_ENV: &str = "PEX_BACKEND_ENDPOINT";
pub const TOKEN_ENV: &str = "PEX_BACKEND_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub continuation: Option<String>,
    pub max_tokens: usize,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    pub logprobs: bool,
    pub echo_continuation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<f64>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    #[serde(default, skip_serializing)]
    pub token: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_in_flight() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    250
}
fn default_timeout() -> u64 {
    60_000
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: None,
            max_in_flight: default_in_flight(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
            timeout_ms: default_timeout(),
            cache_dir: None,
        }
    }

    /// Reads the endpoint and optional bearer token from the environment.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| Error::Config(format!("{ENDPOINT_ENV} is not set")))?;
        let mut cfg = Self::new(endpoint);
        cfg.token = std::env::var(TOKEN_ENV).ok();
        Ok(cfg)
    }
}

struct Gate {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteLm {
    config: RemoteConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl RemoteLm {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        if let Some(dir) = &config.cache_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        let gate = Gate {
            used: Mutex::new(0),
            freed: Condvar::new(),
            limit: config.max_in_flight,
        };
        Ok(Self {
            config,
            agent,
            gate,
        })
    }

    fn cache_path(&self, request: &CompletionRequest) -> Option<PathBuf> {
        let dir = self.config.cache_dir.as_ref()?;
        let key = serde_json::to_string(request).expect("request serializes");
        Some(dir.join(format!("{}.json", sha256_hex(key.as_bytes()))))
    }

    /// Sends one request, consulting and filling the cache.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        let cache = self.cache_path(request);
        if let Some(path) = &cache {
            if let Ok(bytes) = fs::read(path) {
                if let Ok(hit) = serde_json::from_slice::<CompletionResponse>(&bytes) {
                    return Ok(hit);
                }
            }
        }
        let response = {
            let _slot = self.gate.acquire();
            self.post_with_retry(request)?
        };
        validate(&response)?;
        if let Some(path) = &cache {
            let tmp = path.with_extension("tmp");
            let body = serde_json::to_vec(&response)?;
            fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
            fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        }
        Ok(response)
    }

    fn post_with_retry(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        let mut attempt = 0u32;
        loop {
            match self.post_once(request) {
                Ok(r) => return Ok(r),
                Err((retryable, msg)) => {
                    if !retryable || attempt >= self.config.retries {
                        return Err(Error::Transport(format!(
                            "{} after {} attempt(s): {msg}",
                            self.config.endpoint,
                            attempt + 1
                        )));
                    }
                    thread::sleep(Duration::from_millis(self.config.backoff_ms << attempt));
                    attempt += 1;
                }
            }
        }
    }

    fn post_once(
        &self,
        request: &CompletionRequest,
    ) -> std::result::Result<CompletionResponse, (bool, String)> {
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(token) = &self.config.token {
            call = call.set("Authorization", &format!("Bearer {token}"));
        }
        match call.send_json(request) {
            Ok(resp) => resp
                .into_json::<CompletionResponse>()
                .map_err(|e| (false, format!("malformed response: {e}"))),
            Err(ureq::Error::Status(code, _)) => {
                Err((code == 429 || code >= 500, format!("HTTP status {code}")))
            }
            Err(ureq::Error::Transport(t)) => Err((true, t.to_string())),
        }
    }
}

fn validate(r: &CompletionResponse) -> Result<()> {
    if r.tokens.len() != r.token_logprobs.len() {
        return Err(Error::Transport(format!(
            "response has {} tokens but {} logprobs",
            r.tokens.len(),
            r.token_logprobs.len()
        )));
    }
    if let Some(bad) = r
        .token_logprobs
        .iter()
        .find(|v| !(v.is_finite() && **v <= 0.0))
    {
        return Err(Error::Transport(format!("invalid token logprob {bad}")));
    }
    Ok(())
}

impl LmBackend for RemoteLm {
    fn id(&self) -> String {
        format!("remote:{}", self.config.endpoint)
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            can_score: true,
            can_sample: true,
            can_enumerate: false,
        }
    }

    fn score(
        &self,
        prompt: &str,
        continuation: &str,
        _boundary: Boundary,
    ) -> Result<ScoredSequence> {
        if continuation.trim().is_empty() {
            return Err(Error::domain("continuation is empty after tokenization"));
        }
        let request = CompletionRequest {
            prompt: prompt.to_string(),
            continuation: Some(continuation.to_string()),
            max_tokens: 0,
            temperature: 1.0,
            seed: None,
            logprobs: true,
            echo_continuation: true,
        };
        let r = self.complete(&request)?;
        if r.tokens.is_empty() {
            return Err(Error::Transport(
                "scoring response carries no tokens".into(),
            ));
        }
        Ok(ScoredSequence::new(
            continuation,
            r.tokens,
            r.token_logprobs,
        ))
    }

    fn sample(&self, prompt: &str, request: &SampleRequest) -> Result<Sampled> {
        let req = CompletionRequest {
            prompt: prompt.to_string(),
            continuation: None,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            seed: Some(request.seed),
            logprobs: true,
            echo_continuation: true,
        };
        let r = self.complete(&req)?;
        let truncated = r.truncated.unwrap_or(r.tokens.len() >= request.max_tokens);
        Ok(Sampled {
            text: r.text,
            tokens: r.tokens,
            truncated,
        })
    }
}
