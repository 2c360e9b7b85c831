//! Deterministic offline provider driven by a script of canned replies.
//!
//! A script file is either a bare JSON array of replies or an object
//! `{"mode": "...", "responses": [...]}`. A reply is a string or
//! `{"error": "timeout" | "transport" | "auth" | "malformed"}`.
//!
//! Modes:
//! - `sequential`: replies are served in order, wrapping at the end.
//! - `keyed`: the reply index is a seeded hash of the request messages, so
//!   the answer does not depend on call order.
//! - `echo`: replies with the request's reference text, or the last user
//!   message when there is none.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ChatResponse, GatewayError, Role, Usage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockFault {
    Timeout,
    Transport,
    Auth,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Fault { error: MockFault },
}

impl MockReply {
    pub fn text(s: impl Into<String>) -> Self {
        MockReply::Text(s.into())
    }

    pub fn fault(f: MockFault) -> Self {
        MockReply::Fault { error: f }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockMode {
    Sequential,
    Keyed,
    Echo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    /// `None` when the file left it open; the caller picks a default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<MockMode>,
    #[serde(default)]
    pub responses: Vec<MockReply>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    List(Vec<MockReply>),
    Object(MockScript),
}

impl MockScript {
    pub fn sequential(responses: Vec<MockReply>) -> Self {
        Self { mode: Some(MockMode::Sequential), responses }
    }

    pub fn keyed(responses: Vec<MockReply>) -> Self {
        Self { mode: Some(MockMode::Keyed), responses }
    }

    pub fn echo() -> Self {
        Self { mode: Some(MockMode::Echo), responses: Vec::new() }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(match serde_json::from_str::<ScriptFile>(text)? {
            ScriptFile::List(responses) => Self { mode: None, responses },
            ScriptFile::Object(script) => script,
        })
    }

    pub fn mode_or(&self, default: MockMode) -> MockMode {
        self.mode.unwrap_or(default)
    }
}

#[derive(Debug)]
pub struct MockProvider {
    mode: MockMode,
    responses: Vec<MockReply>,
    seed: u64,
    cursor: AtomicUsize,
    log: Mutex<Vec<ChatRequest>>,
}

impl MockProvider {
    /// Scripts without an explicit mode run sequentially.
    pub fn new(script: MockScript) -> Self {
        Self::with_seed(script, MockMode::Sequential, 0)
    }

    pub fn with_seed(script: MockScript, default_mode: MockMode, seed: u64) -> Self {
        Self {
            mode: script.mode_or(default_mode),
            responses: script.responses,
            seed,
            cursor: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn mode(&self) -> MockMode {
        self.mode
    }

    /// Number of requests served so far.
    pub fn calls(&self) -> usize {
        self.log.lock().expect("mock log poisoned").len()
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("mock log poisoned").clone()
    }

    fn pick(&self, request: &ChatRequest) -> Option<&MockReply> {
        if self.responses.is_empty() {
            return None;
        }
        let index = match self.mode {
            MockMode::Keyed => (request_key(self.seed, request) % self.responses.len() as u64) as usize,
            _ => self.cursor.fetch_add(1, Ordering::SeqCst) % self.responses.len(),
        };
        Some(&self.responses[index])
    }
}

/// FNV-1a over the seed and every message.
fn request_key(seed: u64, request: &ChatRequest) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            hash ^= u64::from(*b);
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
    };
    feed(&seed.to_le_bytes());
    for m in &request.messages {
        feed(&[m.role as u8]);
        feed(m.content.as_bytes());
        feed(&[0xff]);
    }
    hash
}

#[async_trait]
impl ChatProvider for MockProvider {
    async fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.log.lock().expect("mock log poisoned").push(request.clone());
        let content = match self.mode {
            MockMode::Echo => request.reference.clone().unwrap_or_else(|| {
                request
                    .messages
                    .iter()
                    .rev()
                    .find(|m| m.role == Role::User)
                    .map(|m| m.content.clone())
                    .unwrap_or_default()
            }),
            _ => match self.pick(request) {
                Some(MockReply::Text(text)) => text.clone(),
                Some(MockReply::Fault { error }) => {
                    return Err(match error {
                        MockFault::Timeout => GatewayError::Timeout,
                        MockFault::Transport => GatewayError::Transport("scripted transport failure".into()),
                        MockFault::Auth => GatewayError::Auth("scripted auth failure".into()),
                        MockFault::Malformed => GatewayError::Malformed("scripted malformed payload".into()),
                    });
                }
                None => return Err(GatewayError::Malformed("mock script has no responses".into())),
            },
        };
        let completion_tokens = content.split_whitespace().count() as u64;
        let prompt_tokens: u64 = request.messages.iter().map(|m| m.content.split_whitespace().count() as u64).sum();
        Ok(ChatResponse {
            content,
            finish_reason: Some("stop".into()),
            usage: Usage { prompt_tokens, completion_tokens, total_tokens: prompt_tokens + completion_tokens },
        })
    }
}
