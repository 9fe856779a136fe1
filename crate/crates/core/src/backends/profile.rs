use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Llm,
    Vqa,
    T2i,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Llm => "llm",
            Role::Vqa => "vqa",
            Role::T2i => "t2i",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Endpoint {
    /// Deterministic responses from a JSONL fixture file (optional for t2i).
    Mock {
        #[serde(default)]
        fixtures: Option<PathBuf>,
    },
    /// OpenAI-compatible HTTP JSON API rooted at `url`.
    Http { url: String },
    /// Pre-generated images on disk (t2i only).
    Directory { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateLimit {
    pub requests_per_second: f64,
    #[serde(default = "default_burst")]
    pub burst: u32,
}

fn default_burst() -> u32 {
    1
}
fn default_max_tokens() -> u32 {
    1000
}
fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    3
}
fn default_batch() -> usize {
    8
}
fn default_backoff() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    /// Profile name; selects the `GRADE_<NAME>_API_KEY` variable by default.
    /// Filled from the map key when loaded from a config file.
    #[serde(default)]
    pub name: String,
    pub role: Role,
    pub endpoint: Endpoint,
    pub model_name: String,
    /// Environment variable holding the API key.
    #[serde(default)]
    pub auth: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: u64,
    /// Total attempts made for a request before a transport failure is
    /// reported.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Upper bound on in-flight requests for fan-out stages.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
    #[serde(default)]
    pub rate_limit: Option<RateLimit>,
    /// Extra fields forwarded verbatim in HTTP bodies (sampler settings etc).
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl BackendProfile {
    pub fn new(name: &str, role: Role, endpoint: Endpoint, model_name: &str) -> Self {
        BackendProfile {
            name: name.into(),
            role,
            endpoint,
            model_name: model_name.into(),
            auth: None,
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            request_timeout_secs: default_timeout(),
            max_retries: default_retries(),
            batch_size: default_batch(),
            retry_backoff_ms: default_backoff(),
            rate_limit: None,
            extra: Default::default(),
        }
    }

    pub fn mock(name: &str, role: Role, fixtures: Option<PathBuf>) -> Self {
        Self::new(name, role, Endpoint::Mock { fixtures }, &format!("mock-{name}"))
    }

    pub fn is_mock(&self) -> bool {
        matches!(self.endpoint, Endpoint::Mock { .. })
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::Config(format!("profile {}: {m}", self.name)));
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return bad(format!("temperature {} must be >= 0", self.temperature));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be > 0".into());
        }
        if self.model_name.trim().is_empty() {
            return bad("model_name is empty".into());
        }
        if matches!(self.endpoint, Endpoint::Directory { .. }) && self.role != Role::T2i {
            return bad("directory endpoints only serve the t2i role".into());
        }
        if let Some(rl) = self.rate_limit {
            if rl.requests_per_second.is_nan() || rl.requests_per_second <= 0.0 || rl.burst == 0 {
                return bad("rate limit needs a positive rate and burst".into());
            }
        }
        Ok(())
    }

    /// Name of the environment variable holding the API key.
    pub fn api_key_var(&self) -> String {
        self.auth.clone().unwrap_or_else(|| {
            let upper: String = self
                .name
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() {
                        c.to_ascii_uppercase()
                    } else {
                        '_'
                    }
                })
                .collect();
            format!("GRADE_{upper}_API_KEY")
        })
    }
}
