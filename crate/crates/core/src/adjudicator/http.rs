//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde_json::{json, Value};

use super::provider::{
    Completion, CompletionProvider, CompletionRequest, ConfigError, ProviderConfig, ProviderError,
};

pub struct HttpProvider {
    id: String,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    /// Fails at startup if the credential variable is unset.
    pub fn from_config(config: &ProviderConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let api_key = config.credential()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(HttpProvider {
            id: config.id.clone(),
            endpoint: config.endpoint.clone(),
            model: config.model.clone(),
            api_key,
            agent,
        })
    }
}

const POLICY_MARKERS: [&str; 4] = [
    "content_filter",
    "content_policy",
    "content management policy",
    "safety",
];

fn looks_like_policy(text: &str) -> bool {
    let lower = text.to_ascii_lowercase();
    POLICY_MARKERS.iter().any(|m| lower.contains(m))
}

/// Maps a response status and body onto a completion or a provider error.
pub fn interpret_response(status: u16, body: &Value) -> Result<Completion, ProviderError> {
    let error_text = body.get("error").map(|e| e.to_string()).unwrap_or_default();
    match status {
        200..=299 => {}
        429 => return Err(ProviderError::RateLimited(error_text)),
        400..=499 if looks_like_policy(&error_text) => {
            return Err(ProviderError::ContentPolicy(error_text))
        }
        400..=499 => return Err(ProviderError::Rejected(format!("{status}: {error_text}"))),
        _ => return Err(ProviderError::Transport(format!("{status}: {error_text}"))),
    }
    let choice = body
        .pointer("/choices/0")
        .ok_or_else(|| ProviderError::BadResponse("no choices".into()))?;
    if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
        return Err(ProviderError::ContentPolicy("finish_reason=content_filter".into()));
    }
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::BadResponse("no message content".into()))?;
    Ok(Completion {
        text: text.to_string(),
        prompt_tokens: body.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        completion_tokens: body.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    })
}

impl CompletionProvider for HttpProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let mut body = json!({
            "model": self.model,
            "messages": request.messages,
        });
        if let Some(t) = request.temperature {
            body["temperature"] = json!(t);
        }
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        interpret_response(status, &value)
    }
}
