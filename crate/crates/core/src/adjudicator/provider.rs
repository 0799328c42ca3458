use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    /// `None` when the provider does not accept a temperature parameter.
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    /// Refusal under the provider's safety policy. Never retried.
    #[error("content policy refusal: {0}")]
    ContentPolicy(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("transport failure: {0}")]
    Transport(String),
    /// Request rejected for a reason retrying will not fix.
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::RateLimited(_) | ProviderError::Transport(_) | ProviderError::BadResponse(_)
        )
    }
}

/// A chat-completion backend.
pub trait CompletionProvider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Attempts per request for retryable transport errors, including the
    /// first.
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            initial_backoff_ms: 1_000,
            max_backoff_ms: 30_000,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn backoff_ms(&self, retry: u32) -> u64 {
        let factor = self.multiplier.max(1.0).powi(retry.saturating_sub(1) as i32);
        ((self.initial_backoff_ms as f64) * factor).min(self.max_backoff_ms as f64) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Mock,
    OpenaiCompatible,
}

/// How to reach a provider. Holds the *name* of the credential environment
/// variable, never the credential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub id: String,
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "one")]
    pub max_concurrent: usize,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "yes")]
    pub supports_temperature: bool,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn one() -> usize {
    1
}

fn default_rpm() -> u32 {
    60
}

fn yes() -> bool {
    true
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("max_concurrent must be >= 1")]
    Concurrency,
    #[error("requests_per_minute must be >= 1")]
    RateCap,
    #[error("retry.max_attempts must be >= 1")]
    Attempts,
    #[error("provider {0:?} needs an endpoint")]
    MissingEndpoint(String),
    #[error("provider {0:?} needs api_key_env")]
    MissingKeyEnv(String),
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
}

impl ProviderConfig {
    pub fn mock(id: impl Into<String>) -> Self {
        ProviderConfig {
            id: id.into(),
            kind: ProviderKind::Mock,
            endpoint: String::new(),
            model: "mock".into(),
            api_key_env: None,
            max_concurrent: 1,
            requests_per_minute: 600,
            retry: RetryPolicy::default(),
            supports_temperature: true,
            timeout_secs: default_timeout(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_concurrent < 1 {
            return Err(ConfigError::Concurrency);
        }
        if self.requests_per_minute < 1 {
            return Err(ConfigError::RateCap);
        }
        if self.retry.max_attempts < 1 {
            return Err(ConfigError::Attempts);
        }
        if self.kind == ProviderKind::OpenaiCompatible {
            if self.endpoint.is_empty() {
                return Err(ConfigError::MissingEndpoint(self.id.clone()));
            }
            if self.api_key_env.is_none() {
                return Err(ConfigError::MissingKeyEnv(self.id.clone()));
            }
        }
        Ok(())
    }

    /// Reads the credential from the configured environment variable.
    pub fn credential(&self) -> Result<Option<String>, ConfigError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .ok()
                .filter(|v| !v.is_empty())
                .map(Some)
                .ok_or_else(|| ConfigError::MissingCredential(var.clone())),
        }
    }
}
