use std::thread;
use std::time::Duration;

use log::warn;
use serde::Serialize;
use serde_json::Value;

use super::LlmError;

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";
pub const DEFAULT_MAX_TOKENS: u32 = 600;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// A single user message with the default model and token limit.
    pub fn user(content: impl Into<String>) -> Self {
        ChatRequest {
            model: DEFAULT_MODEL.into(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: content.into(),
            }],
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest(
                "max_tokens must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub sleep: Duration,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            sleep: Duration::from_secs(60),
            max_attempts: 10,
        }
    }
}

/// OpenAI-compatible chat-completions client.
pub struct ChatClient {
    url: String,
    key: String,
    http: reqwest::blocking::Client,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("url", &self.url)
            .finish_non_exhaustive()
    }
}

impl ChatClient {
    /// `endpoint` is the API base; requests go to `{endpoint}/chat/completions`.
    pub fn new(
        endpoint: &str,
        key: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(ChatClient {
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            key: key.into(),
            http,
        })
    }

    /// One request, no retries.
    pub fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        let resp = self
            .http
            .post(&self.url)
            .bearer_auth(&self.key)
            .json(request)
            .send()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(LlmError::Auth { status }),
            429 | 500..=599 => return Err(LlmError::Server { status, body }),
            _ => return Err(LlmError::Rejected { status, body }),
        }
        let value: Value = serde_json::from_str(&body)
            .map_err(|e| LlmError::Protocol(format!("invalid JSON: {e}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::Protocol("missing choices[0].message.content".into()))
    }

    /// Retries retryable failures, sleeping `policy.sleep` between attempts,
    /// and issues at most `policy.max_attempts` requests.
    pub fn complete_with_retry(
        &self,
        request: &ChatRequest,
        policy: &RetryPolicy,
    ) -> Result<String, LlmError> {
        let max_attempts = policy.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.complete(request) {
                Ok(content) => return Ok(content),
                Err(e) if e.is_retryable() && attempt < max_attempts => {
                    warn!(
                        "attempt {attempt}/{max_attempts} failed: {e}; sleeping {:?}",
                        policy.sleep
                    );
                    thread::sleep(policy.sleep);
                }
                Err(e) if e.is_retryable() => {
                    return Err(LlmError::RetriesExhausted {
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}
