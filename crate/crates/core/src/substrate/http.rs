//! HTTP chat-completion backends.
//!
//! Every vendor maps the same minimal request (model, messages, temperature,
//! max_tokens) onto its own wire format.

use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::retry::{AttemptRecord, RateLimiter};
use super::{Substrate, SubstrateConfig, SubstrateError, SubstrateResponse};
use crate::scaffold::PromptEnvelope;

pub const ANTHROPIC_VERSION: &str = "2023-06-01";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vendor {
    /// OpenAI-compatible `chat/completions`.
    #[default]
    #[serde(rename = "openai")]
    OpenAi,
    Anthropic,
}

impl Vendor {
    pub fn env_suffix(self) -> &'static str {
        match self {
            Vendor::OpenAi => "OPENAI",
            Vendor::Anthropic => "ANTHROPIC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn from_envelope(config: &SubstrateConfig, envelope: &PromptEnvelope) -> Self {
        ChatRequest {
            model: config.model_id.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: envelope.system_text.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: envelope.user_text.clone(),
                },
            ],
            temperature: config.temperature,
            max_tokens: config.max_output_tokens,
        }
    }

    pub fn to_vendor_body(&self, vendor: Vendor) -> Value {
        match vendor {
            Vendor::OpenAi => json!({
                "model": self.model,
                "messages": self.messages,
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
            }),
            Vendor::Anthropic => {
                let system: Vec<&str> = self
                    .messages
                    .iter()
                    .filter(|m| m.role == "system")
                    .map(|m| m.content.as_str())
                    .collect();
                let rest: Vec<&ChatMessage> =
                    self.messages.iter().filter(|m| m.role != "system").collect();
                json!({
                    "model": self.model,
                    "system": system.join("\n\n"),
                    "messages": rest,
                    "temperature": self.temperature,
                    "max_tokens": self.max_tokens,
                })
            }
        }
    }
}

/// Text and token usage extracted from a vendor response body.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCompletion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub fn parse_vendor_body(vendor: Vendor, body: &Value) -> Result<ParsedCompletion, String> {
    let usage = |a: &str, b: &str| -> (u64, u64) {
        let u = &body["usage"];
        (u[a].as_u64().unwrap_or(0), u[b].as_u64().unwrap_or(0))
    };
    let (text, (p, c)) = match vendor {
        Vendor::OpenAi => {
            let text = body["choices"][0]["message"]["content"]
                .as_str()
                .ok_or("missing choices[0].message.content")?
                .to_string();
            (text, usage("prompt_tokens", "completion_tokens"))
        }
        Vendor::Anthropic => {
            let blocks = body["content"].as_array().ok_or("missing content array")?;
            let text: String = blocks
                .iter()
                .filter(|b| b["type"] == "text")
                .filter_map(|b| b["text"].as_str())
                .collect::<Vec<_>>()
                .join("");
            (text, usage("input_tokens", "output_tokens"))
        }
    };
    if text.trim().is_empty() {
        return Err("completion text is empty".into());
    }
    Ok(ParsedCompletion {
        text,
        prompt_tokens: p,
        completion_tokens: c,
    })
}

fn retry_after(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
    headers
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

enum Failure {
    RateLimited,
    Timeout,
    Server(u16, String),
    Transport(String),
}

pub struct HttpSubstrate {
    config: SubstrateConfig,
    client: Client,
    api_key: String,
    limiter: RateLimiter,
}

impl std::fmt::Debug for HttpSubstrate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpSubstrate")
            .field("id", &self.config.id)
            .field("vendor", &self.config.vendor)
            .finish_non_exhaustive()
    }
}

impl HttpSubstrate {
    pub fn new(config: SubstrateConfig) -> Result<Self, SubstrateError> {
        let var = config.credential_var();
        let api_key = match std::env::var(&var) {
            Ok(k) if !k.trim().is_empty() => k,
            _ => {
                return Err(SubstrateError::Auth {
                    substrate_id: config.id.clone(),
                    message: format!("credential variable {var} is not set"),
                    attempts: Vec::new(),
                })
            }
        };
        let client = Client::builder()
            .timeout(config.request_timeout())
            .build()
            .map_err(|e| SubstrateError::Config {
                substrate_id: config.id.clone(),
                message: e.to_string(),
            })?;
        let limiter = RateLimiter::new(Duration::from_millis(config.min_request_interval_ms));
        Ok(HttpSubstrate {
            config,
            client,
            api_key,
            limiter,
        })
    }

    fn send(&self, body: &Value) -> reqwest::Result<reqwest::blocking::Response> {
        let url = self.config.endpoint_url.as_deref().unwrap_or_default();
        let req = self.client.post(url).json(body);
        let req = match self.config.vendor {
            Vendor::OpenAi => req.bearer_auth(&self.api_key),
            Vendor::Anthropic => req
                .header("x-api-key", &self.api_key)
                .header("anthropic-version", ANTHROPIC_VERSION),
        };
        req.send()
    }
}

impl Substrate for HttpSubstrate {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn parallelism(&self) -> usize {
        self.config.parallelism_limit
    }

    fn complete(&self, envelope: &PromptEnvelope) -> Result<SubstrateResponse, SubstrateError> {
        let id = self.config.id.clone();
        let body = ChatRequest::from_envelope(&self.config, envelope).to_vendor_body(self.config.vendor);
        let started = Instant::now();
        let max_attempts = self.config.max_retries + 1;
        let mut attempts: Vec<AttemptRecord> = Vec::new();

        for attempt in 1..=max_attempts {
            self.limiter.acquire();
            let (failure, hint) = match self.send(&body) {
                Ok(resp) => {
                    let status = resp.status();
                    let hint = retry_after(resp.headers());
                    let text = resp.text().unwrap_or_default();
                    if status.is_success() {
                        attempts.push(AttemptRecord {
                            attempt,
                            outcome: format!("http {}", status.as_u16()),
                            backoff_ms: None,
                        });
                        let parsed = serde_json::from_str::<Value>(&text)
                            .map_err(|e| e.to_string())
                            .and_then(|v| parse_vendor_body(self.config.vendor, &v));
                        return match parsed {
                            Ok(p) => Ok(SubstrateResponse {
                                text: p.text,
                                latency_ms: started.elapsed().as_millis() as u64,
                                prompt_tokens: p.prompt_tokens,
                                completion_tokens: p.completion_tokens,
                                substrate_id: id,
                                attempt_count: attempt,
                                attempts,
                                raw_payload: self.config.capture_exchanges.then_some(text),
                            }),
                            Err(message) => Err(SubstrateError::MalformedPayload {
                                substrate_id: id,
                                message,
                                attempts,
                            }),
                        };
                    }
                    if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
                        attempts.push(AttemptRecord {
                            attempt,
                            outcome: format!("http {}", status.as_u16()),
                            backoff_ms: None,
                        });
                        return Err(SubstrateError::Auth {
                            substrate_id: id,
                            message: truncate(&text),
                            attempts,
                        });
                    }
                    if status == StatusCode::TOO_MANY_REQUESTS {
                        (Failure::RateLimited, hint)
                    } else if status.is_server_error() || status == StatusCode::REQUEST_TIMEOUT {
                        (Failure::Server(status.as_u16(), truncate(&text)), hint)
                    } else {
                        attempts.push(AttemptRecord {
                            attempt,
                            outcome: format!("http {}", status.as_u16()),
                            backoff_ms: None,
                        });
                        return Err(SubstrateError::Upstream {
                            substrate_id: id,
                            status: status.as_u16(),
                            message: truncate(&text),
                            attempts,
                        });
                    }
                }
                Err(e) if e.is_timeout() => (Failure::Timeout, None),
                Err(e) => (Failure::Transport(e.to_string()), None),
            };

            let outcome = match &failure {
                Failure::RateLimited => "http 429".to_string(),
                Failure::Timeout => "timeout".to_string(),
                Failure::Server(s, _) => format!("http {s}"),
                Failure::Transport(m) => format!("transport: {m}"),
            };
            if attempt == max_attempts {
                attempts.push(AttemptRecord {
                    attempt,
                    outcome,
                    backoff_ms: None,
                });
                return Err(match failure {
                    Failure::RateLimited => SubstrateError::RateLimitExhausted {
                        substrate_id: id,
                        attempts,
                    },
                    Failure::Timeout => SubstrateError::Timeout {
                        substrate_id: id,
                        attempts,
                    },
                    Failure::Server(status, message) => SubstrateError::Upstream {
                        substrate_id: id,
                        status,
                        message,
                        attempts,
                    },
                    Failure::Transport(message) => SubstrateError::Transport {
                        substrate_id: id,
                        message,
                        attempts,
                    },
                });
            }
            let wait = self.config.backoff.wait(attempt, hint);
            log::warn!("[{id}] attempt {attempt} failed ({outcome}); retrying in {wait:?}");
            attempts.push(AttemptRecord {
                attempt,
                outcome,
                backoff_ms: Some(wait.as_millis() as u64),
            });
            std::thread::sleep(wait);
        }
        unreachable!("retry loop always returns")
    }
}

fn truncate(s: &str) -> String {
    const LIMIT: usize = 300;
    if s.len() <= LIMIT {
        return s.to_string();
    }
    let mut end = LIMIT;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}
