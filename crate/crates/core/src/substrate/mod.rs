//! LLM substrates: a deterministic mock and HTTP chat-completion backends.

mod http;
mod mock;
pub mod retry;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{ChatMessage, ChatRequest, HttpSubstrate, Vendor};
pub use mock::{mock_complete, MockFaultPlan, MockSubstrate};
pub use retry::{AttemptRecord, BackoffPolicy};

use crate::scaffold::PromptEnvelope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstrateKind {
    HttpChat,
    Mock,
}

fn default_max_tokens() -> u32 {
    512
}
fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    4
}
fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubstrateConfig {
    pub id: String,
    pub kind: SubstrateKind,
    #[serde(default)]
    pub vendor: Vendor,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    /// Permits a non-zero temperature; evaluation runs keep this off.
    #[serde(default)]
    pub allow_nonzero_temperature: bool,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism_limit: usize,
    /// Overrides the credential variable (default `CCS_API_KEY_<VENDOR>`).
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub backoff: BackoffPolicy,
    /// Minimum spacing between request starts, shared by all workers.
    #[serde(default)]
    pub min_request_interval_ms: u64,
    /// Keep upstream response bodies on the response for audit logging.
    #[serde(default)]
    pub capture_exchanges: bool,
    #[serde(default)]
    pub faults: MockFaultPlan,
}

impl SubstrateConfig {
    pub fn mock(id: impl Into<String>) -> Self {
        SubstrateConfig {
            id: id.into(),
            kind: SubstrateKind::Mock,
            vendor: Vendor::default(),
            endpoint_url: None,
            model_id: "mock".into(),
            temperature: 0.0,
            allow_nonzero_temperature: false,
            max_output_tokens: default_max_tokens(),
            request_timeout_secs: default_timeout(),
            max_retries: default_retries(),
            parallelism_limit: default_parallelism(),
            api_key_env: None,
            backoff: BackoffPolicy::default(),
            min_request_interval_ms: 0,
            capture_exchanges: false,
            faults: MockFaultPlan::default(),
        }
    }

    pub fn http(id: impl Into<String>, vendor: Vendor, endpoint_url: &str, model_id: &str) -> Self {
        SubstrateConfig {
            kind: SubstrateKind::HttpChat,
            vendor,
            endpoint_url: Some(endpoint_url.to_string()),
            model_id: model_id.to_string(),
            ..SubstrateConfig::mock(id)
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SubstrateError> {
        let cfg: SubstrateConfig = toml::from_str(text).map_err(|e| SubstrateError::Config {
            substrate_id: String::new(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SubstrateError> {
        let text = std::fs::read_to_string(path).map_err(|e| SubstrateError::Config {
            substrate_id: String::new(),
            message: format!("{}: {e}", path.display()),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), SubstrateError> {
        let fail = |message: String| {
            Err(SubstrateError::Config {
                substrate_id: self.id.clone(),
                message,
            })
        };
        if self.id.trim().is_empty() {
            return fail("substrate id must not be empty".into());
        }
        if self.parallelism_limit == 0 {
            return fail("parallelism_limit must be at least 1".into());
        }
        if self.temperature != 0.0 && !self.allow_nonzero_temperature {
            return fail(format!(
                "temperature {} requires allow_nonzero_temperature = true",
                self.temperature
            ));
        }
        if !(self.request_timeout_secs > 0.0) {
            return fail("request_timeout_secs must be positive".into());
        }
        if self.kind == SubstrateKind::HttpChat {
            match &self.endpoint_url {
                Some(u) if u.starts_with("http://") || u.starts_with("https://") => {}
                _ => return fail("http_chat requires an http(s) endpoint_url".into()),
            }
            if self.model_id.trim().is_empty() {
                return fail("http_chat requires model_id".into());
            }
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs)
    }

    pub fn credential_var(&self) -> String {
        self.api_key_env
            .clone()
            .unwrap_or_else(|| format!("CCS_API_KEY_{}", self.vendor.env_suffix()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstrateResponse {
    pub text: String,
    pub latency_ms: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub substrate_id: String,
    pub attempt_count: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attempts: Vec<AttemptRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_payload: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubstrateError {
    #[error("[{substrate_id}] invalid substrate config: {message}")]
    Config { substrate_id: String, message: String },
    #[error("[{substrate_id}] authentication failed: {message}")]
    Auth {
        substrate_id: String,
        message: String,
        attempts: Vec<AttemptRecord>,
    },
    #[error("[{substrate_id}] rate limited on all {} attempts", attempts.len())]
    RateLimitExhausted {
        substrate_id: String,
        attempts: Vec<AttemptRecord>,
    },
    #[error("[{substrate_id}] timed out on all {} attempts", attempts.len())]
    Timeout {
        substrate_id: String,
        attempts: Vec<AttemptRecord>,
    },
    #[error("[{substrate_id}] upstream returned HTTP {status}: {message}")]
    Upstream {
        substrate_id: String,
        status: u16,
        message: String,
        attempts: Vec<AttemptRecord>,
    },
    #[error("[{substrate_id}] transport failure: {message}")]
    Transport {
        substrate_id: String,
        message: String,
        attempts: Vec<AttemptRecord>,
    },
    #[error("[{substrate_id}] malformed upstream payload: {message}")]
    MalformedPayload {
        substrate_id: String,
        message: String,
        attempts: Vec<AttemptRecord>,
    },
}

impl SubstrateError {
    pub fn substrate_id(&self) -> &str {
        match self {
            SubstrateError::Config { substrate_id, .. }
            | SubstrateError::Auth { substrate_id, .. }
            | SubstrateError::RateLimitExhausted { substrate_id, .. }
            | SubstrateError::Timeout { substrate_id, .. }
            | SubstrateError::Upstream { substrate_id, .. }
            | SubstrateError::Transport { substrate_id, .. }
            | SubstrateError::MalformedPayload { substrate_id, .. } => substrate_id,
        }
    }

    pub fn attempts(&self) -> &[AttemptRecord] {
        match self {
            SubstrateError::Config { .. } => &[],
            SubstrateError::Auth { attempts, .. }
            | SubstrateError::RateLimitExhausted { attempts, .. }
            | SubstrateError::Timeout { attempts, .. }
            | SubstrateError::Upstream { attempts, .. }
            | SubstrateError::Transport { attempts, .. }
            | SubstrateError::MalformedPayload { attempts, .. } => attempts,
        }
    }

    /// Short stable code for run logs.
    pub fn code(&self) -> &'static str {
        match self {
            SubstrateError::Config { .. } => "config",
            SubstrateError::Auth { .. } => "auth",
            SubstrateError::RateLimitExhausted { .. } => "rate_limit_exhausted",
            SubstrateError::Timeout { .. } => "timeout",
            SubstrateError::Upstream { .. } => "upstream",
            SubstrateError::Transport { .. } => "transport",
            SubstrateError::MalformedPayload { .. } => "malformed_payload",
        }
    }
}

pub trait Substrate: Send + Sync {
    fn id(&self) -> &str;
    fn parallelism(&self) -> usize;
    fn complete(&self, envelope: &PromptEnvelope) -> Result<SubstrateResponse, SubstrateError>;
}

/// Builds the backend described by `config`. HTTP backends resolve their
/// credential here, so a missing key fails before any network call.
pub fn connect(config: &SubstrateConfig) -> Result<Box<dyn Substrate>, SubstrateError> {
    config.validate()?;
    Ok(match config.kind {
        SubstrateKind::Mock => Box::new(MockSubstrate::new(config)),
        SubstrateKind::HttpChat => Box::new(HttpSubstrate::new(config.clone())?),
    })
}

/// One-shot completion against `config`.
pub fn complete(
    config: &SubstrateConfig,
    envelope: &PromptEnvelope,
) -> Result<SubstrateResponse, SubstrateError> {
    connect(config)?.complete(envelope)
}

/// Completes every envelope with at most `substrate.parallelism()` requests
/// in flight. Results come back in input order regardless of scheduling.
pub fn complete_batch(
    substrate: &dyn Substrate,
    envelopes: &[PromptEnvelope],
) -> Vec<Result<SubstrateResponse, SubstrateError>> {
    let workers = substrate.parallelism().max(1).min(envelopes.len().max(1));
    let next = AtomicUsize::new(0);
    let mut slots: BTreeMap<usize, Result<SubstrateResponse, SubstrateError>> = BTreeMap::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= envelopes.len() {
                            break;
                        }
                        done.push((i, substrate.complete(&envelopes[i])));
                    }
                    done
                })
            })
            .collect();
        for h in handles {
            slots.extend(h.join().expect("substrate worker panicked"));
        }
    });
    slots.into_values().collect()
}
