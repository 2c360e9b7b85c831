//! Interactive character sessions backed by an append-only JSONL journal.
//!
//! Every change to a session is an event. The live path and the replay
//! path both go through [`SessionState::apply`], so a journal replays to
//! exactly the state the live session ended in.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::memory::{maybe_consolidate, ConversationLog, MemoryConfig, MemoryError, Turn};
use crate::prompting::{assemble_prompt, PromptError, PromptText, PromptVariant};
use crate::state::{apply_state_delta, validate_state, CharacterState, StateDelta, StateError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        session_id: String,
        created_at: String,
        variant: PromptVariant,
        memory: MemoryConfig,
        state: CharacterState,
    },
    UserMessage {
        text: String,
    },
    StateDelta {
        delta: StateDelta,
        #[serde(default)]
        warning: bool,
    },
    Consolidation {
        summary: String,
        retained_turns: usize,
    },
    AssistantMessage {
        text: String,
    },
}

impl SessionEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            SessionEvent::Created { .. } => "created",
            SessionEvent::UserMessage { .. } => "user_message",
            SessionEvent::StateDelta { .. } => "state_delta",
            SessionEvent::Consolidation { .. } => "consolidation",
            SessionEvent::AssistantMessage { .. } => "assistant_message",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub event: SessionEvent,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("message text is empty")]
    EmptyMessage,
    #[error("provider failure: {0}")]
    Provider(GatewayError),
    #[error("memory consolidation failed: {0}")]
    Memory(MemoryError),
    #[error("event {kind} cannot be applied: {reason}")]
    BadEvent { kind: &'static str, reason: String },
    #[error("journal i/o on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl SessionError {
    /// True when the failure came from the model provider rather than the
    /// caller's input.
    pub fn is_provider_failure(&self) -> bool {
        matches!(self, SessionError::Provider(_) | SessionError::Memory(MemoryError::Summarizer(_)))
    }
}

impl From<MemoryError> for SessionError {
    fn from(e: MemoryError) -> Self {
        SessionError::Memory(e)
    }
}

/// Everything a session knows. Compared for equality by replay tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub created_at: String,
    pub variant: PromptVariant,
    pub state: CharacterState,
    pub log: ConversationLog,
    /// The prompt that produced the latest reply.
    pub last_prompt: Option<String>,
    /// Sequence number of the last applied event.
    pub seq: u64,
}

impl SessionState {
    fn from_created(seq: u64, event: &SessionEvent) -> Result<Self, SessionError> {
        let SessionEvent::Created { session_id, created_at, variant, memory, state } = event else {
            return Err(SessionError::BadEvent { kind: event.kind(), reason: "journal must start with created".into() });
        };
        let report = validate_state(state);
        if !report.is_empty() {
            return Err(StateError::Invalid(report).into());
        }
        Ok(Self {
            session_id: session_id.clone(),
            created_at: created_at.clone(),
            variant: *variant,
            state: state.clone(),
            log: ConversationLog::with_config(*memory)?,
            last_prompt: None,
            seq,
        })
    }

    pub fn prompt(&self) -> Result<PromptText, PromptError> {
        assemble_prompt(&self.state, &self.log, &self.state.profile.background, self.variant)
    }

    /// Applies one event in place. On error `self` is unchanged.
    pub fn apply(&mut self, seq: u64, event: &SessionEvent) -> Result<(), SessionError> {
        let bad = |reason: &str| SessionError::BadEvent { kind: event.kind(), reason: reason.into() };
        match event {
            SessionEvent::Created { .. } => return Err(bad("session already exists")),
            SessionEvent::UserMessage { text } => {
                let turn = Turn::new(self.state.interlocutor.interlocutor_name.clone(), text.clone())?;
                self.log = self.log.record_turn(turn);
            }
            SessionEvent::StateDelta { delta, .. } => {
                self.state = apply_state_delta(&self.state, delta)?;
            }
            SessionEvent::Consolidation { summary, retained_turns } => {
                if *retained_turns > self.log.len() {
                    return Err(bad("retains more turns than the log holds"));
                }
                let memory = self.state.memory.append(summary.clone())?;
                self.log.keep_last(*retained_turns);
                self.state.memory = memory;
            }
            SessionEvent::AssistantMessage { text } => {
                let prompt = self.prompt()?.full_text();
                let turn = Turn::new(self.state.profile.name.clone(), text.clone())?;
                self.log = self.log.record_turn(turn);
                self.last_prompt = Some(prompt);
            }
        }
        self.seq = seq;
        Ok(())
    }
}

/// What one interlocutor message produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageOutcome {
    pub reply: String,
    pub state_delta: StateDelta,
    /// Set when the state-update reply could not be parsed and an empty
    /// delta was applied instead.
    pub warning: bool,
    pub consolidated: bool,
}

#[derive(Debug, Clone)]
pub struct SessionInit {
    pub state: CharacterState,
    pub variant: PromptVariant,
    pub memory: MemoryConfig,
}

/// A live session: current state plus an optional journal file.
#[derive(Debug)]
pub struct Session {
    current: SessionState,
    journal: Option<PathBuf>,
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> SessionError + '_ {
    move |source| SessionError::Io { path: path.to_owned(), source }
}

fn encode(entries: &[JournalEntry]) -> String {
    let mut out = String::new();
    for entry in entries {
        out.push_str(&serde_json::to_string(entry).expect("journal entries serialize"));
        out.push('\n');
    }
    out
}

impl Session {
    /// Starts a session. When `journal` is given the file must not exist
    /// yet; it is created holding the `created` entry.
    pub fn create(
        session_id: impl Into<String>,
        created_at: impl Into<String>,
        init: SessionInit,
        journal: Option<PathBuf>,
    ) -> Result<Self, SessionError> {
        let event = SessionEvent::Created {
            session_id: session_id.into(),
            created_at: created_at.into(),
            variant: init.variant,
            memory: init.memory,
            state: init.state,
        };
        let current = SessionState::from_created(1, &event)?;
        if let Some(path) = &journal {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(io_error(dir))?;
            }
            let mut file = OpenOptions::new().write(true).create_new(true).open(path).map_err(io_error(path))?;
            file.write_all(encode(&[JournalEntry { seq: 1, event }]).as_bytes()).map_err(io_error(path))?;
        }
        Ok(Self { current, journal })
    }

    pub fn snapshot(&self) -> &SessionState {
        &self.current
    }

    pub fn id(&self) -> &str {
        &self.current.session_id
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.journal.as_deref()
    }

    /// Runs the full turn pipeline for one interlocutor message.
    ///
    /// The state update comes before generation so the reply sees the
    /// updated senses and emotions. On any error the session is left
    /// exactly as it was and nothing is journaled.
    pub async fn post_message(&mut self, gateway: &Gateway, text: &str) -> Result<MessageOutcome, SessionError> {
        if text.trim().is_empty() {
            return Err(SessionError::EmptyMessage);
        }
        let mut work = self.current.clone();
        let mut entries = Vec::new();
        let mut push = |work: &mut SessionState, event: SessionEvent| -> Result<(), SessionError> {
            let seq = work.seq + 1;
            work.apply(seq, &event)?;
            entries.push(JournalEntry { seq, event });
            Ok(())
        };

        push(&mut work, SessionEvent::UserMessage { text: text.to_owned() })?;

        let update = gateway.request_state_update(&work.state, text).await.map_err(SessionError::Provider)?;
        push(&mut work, SessionEvent::StateDelta { delta: update.delta.clone(), warning: update.warning })?;

        let mut consolidated = consolidate(&mut work, gateway, &mut push).await?;

        let prompt = work.prompt()?;
        let request = gateway.request(prompt.messages());
        let reply = gateway.complete_chat(&request).await.map_err(SessionError::Provider)?;
        let reply = reply.content.trim().to_owned();
        push(&mut work, SessionEvent::AssistantMessage { text: reply.clone() })?;

        // the assistant turn is recorded too, so it gets its own
        // consolidation check; a failure here only postpones it
        match consolidate(&mut work, gateway, &mut push).await {
            Ok(c) => consolidated |= c,
            Err(e) => tracing::warn!(session = %work.session_id, error = %e, "post-reply consolidation skipped"),
        }

        if let Some(path) = &self.journal {
            let mut file = OpenOptions::new().append(true).open(path).map_err(io_error(path))?;
            file.write_all(encode(&entries).as_bytes()).map_err(io_error(path))?;
        }
        self.current = work;
        Ok(MessageOutcome { reply, state_delta: update.delta, warning: update.warning, consolidated })
    }
}

async fn consolidate(
    work: &mut SessionState,
    gateway: &Gateway,
    push: &mut impl FnMut(&mut SessionState, SessionEvent) -> Result<(), SessionError>,
) -> Result<bool, SessionError> {
    let c = maybe_consolidate(&work.log, &work.state.memory, gateway).await?;
    match c.summary {
        Some(summary) => {
            let retained_turns = c.log.len();
            push(work, SessionEvent::Consolidation { summary, retained_turns })?;
            Ok(true)
        }
        None => Ok(false),
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("cannot read journal: {0}")]
    Io(String),
    #[error("journal is empty")]
    Empty,
    #[error("journal corrupt at line {line} (last valid seq {last_valid_seq:?}): {reason}")]
    Corrupt { line: usize, last_valid_seq: Option<u64>, reason: String },
    #[error("journal gap: expected seq {expected}, found {found} (last valid seq {last_valid_seq:?})")]
    Gap { expected: u64, found: u64, last_valid_seq: Option<u64> },
}

impl ReplayError {
    pub fn last_valid_seq(&self) -> Option<u64> {
        match self {
            ReplayError::Corrupt { last_valid_seq, .. } | ReplayError::Gap { last_valid_seq, .. } => *last_valid_seq,
            _ => None,
        }
    }
}

/// Rebuilds a session from journal text.
pub fn replay_entries(text: &str) -> Result<SessionState, ReplayError> {
    let mut current: Option<SessionState> = None;
    for (i, line) in text.lines().enumerate() {
        let last_valid_seq = current.as_ref().map(|s| s.seq);
        let corrupt = |reason: String| ReplayError::Corrupt { line: i + 1, last_valid_seq, reason };
        if line.trim().is_empty() {
            return Err(corrupt("blank line".into()));
        }
        let entry: JournalEntry = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        let expected = last_valid_seq.map_or(1, |s| s + 1);
        if entry.seq != expected {
            return Err(ReplayError::Gap { expected, found: entry.seq, last_valid_seq });
        }
        match current.as_mut() {
            None => current = Some(SessionState::from_created(entry.seq, &entry.event).map_err(|e| corrupt(e.to_string()))?),
            Some(state) => state.apply(entry.seq, &entry.event).map_err(|e| corrupt(e.to_string()))?,
        }
    }
    // a final line without its newline is a torn write
    if !text.is_empty() && !text.ends_with('\n') {
        let last_valid_seq = current.as_ref().map(|s| s.seq.saturating_sub(1)).filter(|&s| s > 0);
        return Err(ReplayError::Corrupt {
            line: text.lines().count(),
            last_valid_seq,
            reason: "final entry is not newline-terminated".into(),
        });
    }
    current.ok_or(ReplayError::Empty)
}

pub fn replay_journal(path: &Path) -> Result<SessionState, ReplayError> {
    let mut text = String::new();
    io::Read::read_to_string(&mut File::open(path).map_err(|e| ReplayError::Io(e.to_string()))?, &mut text)
        .map_err(|e| ReplayError::Io(e.to_string()))?;
    replay_entries(&text)
}

/// Reopens a journaled session so it can continue taking messages.
pub fn resume_session(path: &Path) -> Result<Session, ReplayError> {
    let current = replay_journal(path)?;
    Ok(Session { current, journal: Some(path.to_owned()) })
}
