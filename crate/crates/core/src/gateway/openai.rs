//! Client for servers speaking the OpenAI chat-completions wire format.

use async_trait::async_trait;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{ChatMessage, ChatProvider, ChatRequest, ChatResponse, GatewayError, ProviderConfig, Usage};

/// An API key. Its value never appears in `Debug` output and it cannot be
/// serialized.
#[derive(Clone)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    /// Reads the key from the environment variable named by `var`.
    pub fn from_env(var: &str) -> Result<Self, GatewayError> {
        std::env::var(var).map(Self).map_err(|_| GatewayError::MissingApiKey(var.to_owned()))
    }

    pub(crate) fn expose(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Clone)]
pub struct OpenAiCompatProvider {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    key: Option<ApiKey>,
}

impl OpenAiCompatProvider {
    /// Builds a client from configuration. An empty `api_key_ref` means the
    /// server needs no key.
    pub fn from_config(config: &ProviderConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let key = if config.api_key_ref.is_empty() { None } else { Some(ApiKey::from_env(&config.api_key_ref)?) };
        Self::new(config, key)
    }

    pub fn new(config: &ProviderConfig, key: Option<ApiKey>) -> Result<Self, GatewayError> {
        config.validate()?;
        let client = reqwest::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| GatewayError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model_name.clone(),
            key,
        })
    }
}

pub(crate) fn classify_reqwest(err: reqwest::Error) -> GatewayError {
    if err.is_timeout() {
        GatewayError::Timeout
    } else if err.is_decode() {
        GatewayError::Malformed(err.to_string())
    } else {
        GatewayError::Transport(err.to_string())
    }
}

pub(crate) fn classify_status(status: StatusCode, body: &str) -> GatewayError {
    let detail = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
    match status {
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => GatewayError::Auth(detail),
        StatusCode::REQUEST_TIMEOUT | StatusCode::GATEWAY_TIMEOUT => GatewayError::Timeout,
        StatusCode::TOO_MANY_REQUESTS => GatewayError::Transport(detail),
        s if s.is_server_error() => GatewayError::Transport(detail),
        _ => GatewayError::InvalidRequest(detail),
    }
}

#[async_trait]
impl ChatProvider for OpenAiCompatProvider {
    async fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = WireRequest {
            model: &self.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut http = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.key {
            http = http.bearer_auth(key.expose());
        }
        let resp = http.send().await.map_err(classify_reqwest)?;
        let status = resp.status();
        let text = resp.text().await.map_err(classify_reqwest)?;
        if !status.is_success() {
            return Err(classify_status(status, &text));
        }
        let wire: WireResponse = serde_json::from_str(&text).map_err(|e| GatewayError::Malformed(e.to_string()))?;
        let choice = wire.choices.into_iter().next().ok_or_else(|| GatewayError::Malformed("no choices".into()))?;
        let content = choice.message.content.ok_or_else(|| GatewayError::Malformed("choice has no content".into()))?;
        Ok(ChatResponse { content, finish_reason: choice.finish_reason, usage: wire.usage.unwrap_or_default() })
    }
}
