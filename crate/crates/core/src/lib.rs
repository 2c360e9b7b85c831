//! Character-state engine for role-playing dialogue agents.
//!
//! A character carries senses, emotions, long-term memory and knowledge of
//! the person it is talking to. Prompts are assembled from that state,
//! conversation logs are consolidated into memory once they grow too long,
//! and generated replies can be scored against reference dialogue.

pub mod dataset;
pub mod gateway;
pub mod harness;
pub mod memory;
pub mod metrics;
pub mod prompting;
pub mod session;
pub mod state;
pub mod tokenize;

pub use gateway::{
    ChatMessage, ChatProvider, ChatRequest, ChatResponse, Gateway, GatewayError, GenerationParams, MockProvider,
    MockScript, ProviderConfig, RetryPolicy, Role,
};
pub use memory::{ConversationLog, MemoryConfig, MemoryList, Turn};
pub use prompting::{PromptVariant, SectionKind, TEMPLATE_VERSION};
pub use session::{replay_journal, JournalEntry, MessageOutcome, Session, SessionEvent, SessionInit, SessionState};
pub use state::{
    apply_state_delta, new_character_state, CharacterProfile, CharacterState, Emotion, EmotionalState,
    InterlocutorKnowledge, SensoryState, StateDelta,
};

/// Version of the engine, reported by the CLI and the HTTP service.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
