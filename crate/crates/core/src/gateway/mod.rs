//! Provider-agnostic chat completion with retries, plus the structured
//! calls the engine makes on top of it: state updates, log summaries,
//! background summaries and per-turn emotion labels.

mod mock;
mod openai;
mod parse;

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

pub use mock::{MockFault, MockMode, MockProvider, MockReply, MockScript};
pub use openai::{ApiKey, OpenAiCompatProvider};
pub(crate) use openai::{classify_reqwest as openai_classify_reqwest, classify_status as openai_classify_status};

#[cfg(test)]
pub(crate) use openai::tests as test_support;
pub use parse::{extract_json_array, extract_json_object, parse_emotion_labels, parse_state_delta, ParseError};

use crate::memory::{Summarizer, Turn};
use crate::prompting::build_update_request;
use crate::state::{validate_delta, CharacterState, StateDelta};

pub const MAX_RETRY_LIMIT: u32 = 5;

/// Sent after an unparseable state-update reply.
pub const REPAIR_MESSAGE: &str =
    "Your previous reply could not be parsed. Output only the JSON object, with no other text.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable that holds the API key.
    pub api_key_ref: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_secs: f64,
    pub retry_limit: u32,
    pub backoff_base_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".to_owned(),
            model_name: "gpt-3.5-turbo".to_owned(),
            api_key_ref: "OPENAI_API_KEY".to_owned(),
            temperature: 0.7,
            max_output_tokens: 256,
            timeout_secs: 60.0,
            retry_limit: 3,
            backoff_base_ms: 500,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        url::Url::parse(&self.base_url)
            .map_err(|e| GatewayError::InvalidConfig(format!("base_url {:?}: {e}", self.base_url)))?;
        if self.retry_limit > MAX_RETRY_LIMIT {
            return Err(GatewayError::InvalidConfig(format!(
                "retry_limit {} exceeds {MAX_RETRY_LIMIT}",
                self.retry_limit
            )));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidConfig("temperature must be >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidConfig("max_output_tokens must be > 0".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(GatewayError::InvalidConfig("timeout_secs must be > 0".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy { retry_limit: self.retry_limit, backoff_base: Duration::from_millis(self.backoff_base_ms) }
    }

    pub fn generation(&self) -> GenerationParams {
        GenerationParams { temperature: self.temperature, max_tokens: self.max_output_tokens }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub retry_limit: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        ProviderConfig::default().retry_policy()
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { retry_limit: 0, backoff_base: Duration::ZERO }
    }

    /// Delay before retry number `retry` (0-based): base * 2^retry.
    pub fn backoff(&self, retry: u32) -> Duration {
        self.backoff_base.saturating_mul(1u32 << retry.min(16))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        ProviderConfig::default().generation()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
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
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Ground-truth text for calibration mocks. Never sent to a provider.
    #[serde(skip)]
    pub reference: Option<String>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>, params: GenerationParams) -> Self {
        Self { messages, temperature: params.temperature, max_tokens: params.max_tokens, reference: None }
    }

    pub fn with_reference(mut self, reference: impl Into<String>) -> Self {
        self.reference = Some(reference.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: Option<String>,
    pub usage: Usage,
}

impl ChatResponse {
    pub fn text(content: impl Into<String>) -> Self {
        Self { content: content.into(), finish_reason: Some("stop".into()), usage: Usage::default() }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("provider rejected the credentials: {0}")]
    Auth(String),
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed provider payload: {0}")]
    Malformed(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
    #[error("API key environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<GatewayError> },
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Timeout | GatewayError::Transport(_))
    }
}

/// One attempt against a chat backend. Retrying is the gateway's job.
#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Sends `request`, retrying timeouts and transport failures with
/// exponential backoff.
pub async fn complete_chat(
    provider: &dyn ChatProvider,
    request: &ChatRequest,
    policy: &RetryPolicy,
) -> Result<ChatResponse, GatewayError> {
    if request.messages.is_empty() {
        return Err(GatewayError::InvalidRequest("at least one message is required".into()));
    }
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        let err = match provider.send(request).await {
            Ok(resp) if resp.content.trim().is_empty() => {
                GatewayError::Malformed("provider returned empty content".into())
            }
            Ok(resp) => return Ok(resp),
            Err(e) => e,
        };
        if !err.is_retryable() {
            return Err(err);
        }
        if attempt > policy.retry_limit {
            return Err(GatewayError::RetriesExhausted { attempts: attempt, last: Box::new(err) });
        }
        tracing::debug!(attempt, error = %err, "retrying chat completion");
        let delay = policy.backoff(attempt - 1);
        if !delay.is_zero() {
            tokio::time::sleep(delay).await;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateUpdate {
    pub delta: StateDelta,
    /// Set when both the first reply and the repair reply were unusable and
    /// the delta was degraded to empty.
    pub warning: bool,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelAnnotation {
    pub labels: Vec<String>,
    pub warning: bool,
}

/// A provider bundled with its retry policy and decoding parameters.
#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    policy: RetryPolicy,
    params: GenerationParams,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("policy", &self.policy).field("params", &self.params).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>, policy: RetryPolicy, params: GenerationParams) -> Self {
        Self { provider, policy, params }
    }

    pub fn params(&self) -> GenerationParams {
        self.params
    }

    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest::new(messages, self.params)
    }

    pub async fn complete_chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        complete_chat(self.provider.as_ref(), request, &self.policy).await
    }

    /// Asks the model how `utterance` changes the character's state.
    ///
    /// An unusable reply gets one repair round; if that fails as well the
    /// result is an empty delta with `warning` set. Transport errors are
    /// returned as-is.
    pub async fn request_state_update(
        &self,
        state: &CharacterState,
        utterance: &str,
    ) -> Result<StateUpdate, GatewayError> {
        let prompt = build_update_request(state, utterance).map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let mut messages = prompt.messages();
        for attempt in 1..=2u32 {
            let reply = self.complete_chat(&self.request(messages.clone())).await?;
            match parse_state_delta(&reply.content) {
                Ok(delta) if validate_delta(&delta).is_empty() => {
                    return Ok(StateUpdate { delta, warning: false, attempts: attempt });
                }
                outcome => {
                    tracing::warn!(attempt, ?outcome, "unusable state-update reply");
                    messages.push(ChatMessage::new(Role::Assistant, reply.content));
                    messages.push(ChatMessage::new(Role::User, REPAIR_MESSAGE));
                }
            }
        }
        Ok(StateUpdate { delta: StateDelta::default(), warning: true, attempts: 2 })
    }

    /// Condenses a script excerpt into a short scene background.
    pub async fn summarize_background(&self, excerpt: &str) -> Result<String, GatewayError> {
        let messages = vec![
            ChatMessage::new(
                Role::System,
                "You summarize film script excerpts. Reply with a short plain-text summary of the scene \
                 background: who is present, where they are, and what has just happened.",
            ),
            ChatMessage::new(Role::User, format!("Script excerpt:\n{excerpt}")),
        ];
        let reply = self.complete_chat(&self.request(messages)).await?;
        Ok(reply.content.trim().to_owned())
    }

    /// Labels the emotions the speaker of `turns[index]` shows in that turn.
    pub async fn annotate_emotions(
        &self,
        turns: &[(String, String)],
        index: usize,
    ) -> Result<LabelAnnotation, GatewayError> {
        let dialogue: Vec<String> = turns.iter().map(|(s, t)| format!("{s}: {t}")).collect();
        let (speaker, text) = &turns[index];
        let mut messages = vec![
            ChatMessage::new(
                Role::System,
                "You annotate the emotional state of film characters. Output ONLY a JSON list of short \
                 emotion labels, for example [\"anger\", \"fear\"].",
            ),
            ChatMessage::new(
                Role::User,
                format!(
                    "Dialogue:\n{}\n\nWhich emotions does {speaker} feel while saying: {text}",
                    dialogue.join("\n")
                ),
            ),
        ];
        for _ in 0..2 {
            let reply = self.complete_chat(&self.request(messages.clone())).await?;
            match parse_emotion_labels(&reply.content) {
                Ok(labels) => return Ok(LabelAnnotation { labels, warning: false }),
                Err(_) => {
                    messages.push(ChatMessage::new(Role::Assistant, reply.content));
                    messages.push(ChatMessage::new(
                        Role::User,
                        "Your previous reply could not be parsed. Output only the JSON list, with no other text.",
                    ));
                }
            }
        }
        Ok(LabelAnnotation { labels: Vec::new(), warning: true })
    }
}

#[async_trait]
impl Summarizer for Gateway {
    async fn summarize(&self, turns: &[Turn]) -> Result<String, GatewayError> {
        let log: Vec<String> = turns.iter().map(|t| format!("{}: {}", t.speaker, t.text)).collect();
        let messages = vec![
            ChatMessage::new(
                Role::System,
                "You maintain a character's long-term memory. Condense the conversation log into a concise \
                 one-line summary of its key points. Reply with that single line only.",
            ),
            ChatMessage::new(Role::User, log.join("\n")),
        ];
        Ok(self.complete_chat(&self.request(messages)).await?.content)
    }
}
