//! Short-term conversation log and its consolidation into one-line
//! long-term memories.
//!
//! The log is measured in whitespace tokens. Once it reaches
//! `threshold_tokens` the older turns are handed to a [`Summarizer`], the
//! resulting line is appended to the [`MemoryList`], and only the most recent
//! `retain_turns` turns stay in the log.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::gateway::GatewayError;
use crate::tokenize::{count_tokens, to_single_line};

pub const DEFAULT_THRESHOLD_TOKENS: usize = 600;
pub const DEFAULT_RETAIN_TURNS: usize = 2;
/// Longest memory entry, in whitespace tokens, before truncation.
pub const SUMMARY_TOKEN_LIMIT: usize = 60;
pub const TRUNCATION_MARK: &str = "\u{2026}";

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("turn speaker must not be empty")]
    EmptySpeaker,
    #[error("threshold_tokens must be greater than zero")]
    ZeroThreshold,
    #[error("memory entries must be a single line")]
    MultiLineEntry,
    #[error("nothing to summarize")]
    NoTurns,
    #[error("summarizer returned an empty summary")]
    EmptySummary,
    #[error("summarizer failed: {0}")]
    Summarizer(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
    pub token_count: usize,
}

impl Turn {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Result<Self, MemoryError> {
        let speaker = speaker.into();
        if speaker.trim().is_empty() {
            return Err(MemoryError::EmptySpeaker);
        }
        let text = text.into();
        let token_count = count_tokens(&text);
        Ok(Self { speaker, text, token_count })
    }

    pub fn is_valid(&self) -> bool {
        !self.speaker.trim().is_empty() && self.token_count == count_tokens(&self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryConfig {
    #[serde(default = "default_threshold")]
    pub threshold_tokens: usize,
    #[serde(default = "default_retain")]
    pub retain_turns: usize,
}

fn default_threshold() -> usize {
    DEFAULT_THRESHOLD_TOKENS
}

fn default_retain() -> usize {
    DEFAULT_RETAIN_TURNS
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self { threshold_tokens: DEFAULT_THRESHOLD_TOKENS, retain_turns: DEFAULT_RETAIN_TURNS }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationLog {
    pub turns: Vec<Turn>,
    pub threshold_tokens: usize,
    pub retain_turns: usize,
}

impl Default for ConversationLog {
    fn default() -> Self {
        Self::with_config(MemoryConfig::default()).expect("default threshold is positive")
    }
}

impl ConversationLog {
    pub fn new(threshold_tokens: usize, retain_turns: usize) -> Result<Self, MemoryError> {
        if threshold_tokens == 0 {
            return Err(MemoryError::ZeroThreshold);
        }
        Ok(Self { turns: Vec::new(), threshold_tokens, retain_turns })
    }

    pub fn with_config(config: MemoryConfig) -> Result<Self, MemoryError> {
        Self::new(config.threshold_tokens, config.retain_turns)
    }

    pub fn total_tokens(&self) -> usize {
        self.turns.iter().map(|t| t.token_count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    /// Appends a turn. The result may sit above the threshold until
    /// [`maybe_consolidate`] runs.
    pub fn record_turn(&self, turn: Turn) -> Self {
        let mut next = self.clone();
        next.turns.push(turn);
        next
    }

    /// Number of trailing turns kept after a consolidation: at most
    /// `retain_turns`, and few enough that they sit strictly below the
    /// threshold.
    fn retained_suffix(&self) -> usize {
        let mut kept = 0;
        let mut tokens = 0;
        for turn in self.turns.iter().rev().take(self.retain_turns) {
            if tokens + turn.token_count >= self.threshold_tokens {
                break;
            }
            tokens += turn.token_count;
            kept += 1;
        }
        kept
    }

    pub(crate) fn keep_last(&mut self, n: usize) {
        let drop = self.turns.len().saturating_sub(n);
        self.turns.drain(..drop);
    }
}

/// Append-only chronological list of one-line memories.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemoryList {
    entries: Vec<String>,
}

impl MemoryList {
    pub fn from_entries(entries: Vec<String>) -> Result<Self, MemoryError> {
        if entries.iter().any(|e| e.contains(['\n', '\r'])) {
            return Err(MemoryError::MultiLineEntry);
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn append(&self, entry: impl Into<String>) -> Result<Self, MemoryError> {
        let entry = entry.into();
        if entry.contains(['\n', '\r']) {
            return Err(MemoryError::MultiLineEntry);
        }
        let mut next = self.clone();
        next.entries.push(entry);
        Ok(next)
    }
}

#[async_trait]
pub trait Summarizer: Send + Sync {
    /// Condense the given turns. The output is normalized by the caller.
    async fn summarize(&self, turns: &[Turn]) -> Result<String, GatewayError>;
}

/// Normalizes raw summarizer output into a memory entry: one line, at most
/// [`SUMMARY_TOKEN_LIMIT`] tokens, with a trailing ellipsis when cut.
pub fn normalize_summary(raw: &str) -> Option<String> {
    let line = to_single_line(raw);
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.is_empty() {
        return None;
    }
    if tokens.len() > SUMMARY_TOKEN_LIMIT {
        let mut cut = tokens[..SUMMARY_TOKEN_LIMIT].join(" ");
        cut.push_str(TRUNCATION_MARK);
        Some(cut)
    } else {
        Some(line)
    }
}

pub async fn summarize_log(summarizer: &dyn Summarizer, turns: &[Turn]) -> Result<String, MemoryError> {
    if turns.is_empty() {
        return Err(MemoryError::NoTurns);
    }
    let raw = summarizer.summarize(turns).await?;
    normalize_summary(&raw).ok_or(MemoryError::EmptySummary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Consolidation {
    pub log: ConversationLog,
    pub memory: MemoryList,
    pub consolidated: bool,
    /// The appended memory entry, when consolidation happened.
    pub summary: Option<String>,
}

impl Consolidation {
    pub fn retained_turns(&self) -> usize {
        self.log.turns.len()
    }
}

/// Consolidates the log once it reaches its threshold.
///
/// On error nothing has changed: the caller keeps its existing log and
/// memory and may retry after the next turn.
pub async fn maybe_consolidate(
    log: &ConversationLog,
    memory: &MemoryList,
    summarizer: &dyn Summarizer,
) -> Result<Consolidation, MemoryError> {
    if log.total_tokens() < log.threshold_tokens {
        return Ok(Consolidation { log: log.clone(), memory: memory.clone(), consolidated: false, summary: None });
    }
    let keep = log.retained_suffix();
    let split = log.turns.len() - keep;
    let summary = summarize_log(summarizer, &log.turns[..split]).await?;
    let memory = memory.append(summary.clone())?;
    let mut next = log.clone();
    next.keep_last(keep);
    Ok(Consolidation { log: next, memory, consolidated: true, summary: Some(summary) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Fixed(&'static str);

    #[async_trait]
    impl Summarizer for Fixed {
        async fn summarize(&self, _turns: &[Turn]) -> Result<String, GatewayError> {
            Ok(self.0.to_owned())
        }
    }

    struct Echo;

    #[async_trait]
    impl Summarizer for Echo {
        async fn summarize(&self, turns: &[Turn]) -> Result<String, GatewayError> {
            Ok(turns.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" "))
        }
    }

    struct Failing;

    #[async_trait]
    impl Summarizer for Failing {
        async fn summarize(&self, _turns: &[Turn]) -> Result<String, GatewayError> {
            Err(GatewayError::Timeout)
        }
    }

    struct Recording(Mutex<Vec<usize>>);

    #[async_trait]
    impl Summarizer for Recording {
        async fn summarize(&self, turns: &[Turn]) -> Result<String, GatewayError> {
            self.0.lock().unwrap().push(turns.len());
            Ok("summary".into())
        }
    }

    fn words(n: usize) -> String {
        vec!["w"; n].join(" ")
    }

    fn log_with(threshold: usize, retain: usize, sizes: &[usize]) -> ConversationLog {
        let mut log = ConversationLog::new(threshold, retain).unwrap();
        for (i, n) in sizes.iter().enumerate() {
            log = log.record_turn(Turn::new(if i % 2 == 0 { "A" } else { "B" }, words(*n)).unwrap());
        }
        log
    }

    #[test]
    fn record_preserves_order_and_counts() {
        let t1 = Turn::new("Adam", "hello there friend").unwrap();
        assert_eq!(t1.token_count, 3);
        let t2 = Turn::new("Eve", "hi").unwrap();
        let log = ConversationLog::default().record_turn(t1.clone());
        assert_eq!(log.len(), 1);
        let log = log.record_turn(t2.clone());
        assert_eq!(log.turns, vec![t1, t2]);
    }

    #[test]
    fn empty_speaker_rejected() {
        assert!(matches!(Turn::new(" ", "x"), Err(MemoryError::EmptySpeaker)));
        assert!(ConversationLog::new(0, 2).is_err());
    }

    #[tokio::test]
    async fn below_threshold_is_unchanged() {
        let log = log_with(10, 2, &[4, 5]);
        let out = maybe_consolidate(&log, &MemoryList::default(), &Fixed("x")).await.unwrap();
        assert!(!out.consolidated);
        assert_eq!(out.log, log);
        assert!(out.memory.is_empty());
    }

    #[tokio::test]
    async fn at_threshold_consolidates_and_retains() {
        let log = log_with(10, 2, &[3, 3, 2, 2]);
        let rec = Recording(Mutex::new(Vec::new()));
        let out = maybe_consolidate(&log, &MemoryList::default(), &rec).await.unwrap();
        assert!(out.consolidated);
        assert_eq!(*rec.0.lock().unwrap(), vec![2]);
        assert_eq!(out.log.turns, log.turns[2..].to_vec());

        let out = maybe_consolidate(&log, &MemoryList::default(), &Fixed("They argued about money.")).await.unwrap();
        assert_eq!(out.memory.entries(), ["They argued about money."]);
        assert_eq!(out.log.len(), 2);
    }

    #[tokio::test]
    async fn oversized_tail_is_summarized_too() {
        // the last turn alone reaches the threshold, so nothing is retained
        let log = log_with(10, 2, &[1, 12]);
        let rec = Recording(Mutex::new(Vec::new()));
        let out = maybe_consolidate(&log, &MemoryList::default(), &rec).await.unwrap();
        assert!(out.log.is_empty());
        assert_eq!(*rec.0.lock().unwrap(), vec![2]);
    }

    #[tokio::test]
    async fn multi_line_summary_is_joined() {
        let log = log_with(4, 0, &[4]);
        let out = maybe_consolidate(&log, &MemoryList::default(), &Fixed("A.\nB.")).await.unwrap();
        assert_eq!(out.memory.entries(), ["A.; B."]);
    }

    #[tokio::test]
    async fn failure_leaves_nothing_behind() {
        let log = log_with(4, 1, &[2, 2, 2]);
        let err = maybe_consolidate(&log, &MemoryList::default(), &Failing).await.unwrap_err();
        assert!(matches!(err, MemoryError::Summarizer(GatewayError::Timeout)));
    }

    #[tokio::test]
    async fn summarize_log_edges() {
        let hi = [Turn::new("Adam", "Hi.").unwrap()];
        assert!(summarize_log(&Echo, &hi).await.unwrap().contains("Hi."));
        assert!(matches!(summarize_log(&Echo, &[]).await, Err(MemoryError::NoTurns)));
        assert!(matches!(summarize_log(&Fixed(" \n "), &hi).await, Err(MemoryError::EmptySummary)));
    }

    #[test]
    fn truncation_boundary() {
        let sixty_one: Vec<String> = (0..61).map(|i| format!("t{i}")).collect();
        let entry = normalize_summary(&sixty_one.join(" ")).unwrap();
        assert!(entry.ends_with(TRUNCATION_MARK));
        assert_eq!(entry.split_whitespace().count(), 60);
        assert!(entry.starts_with("t0 t1"));
        assert!(entry.ends_with(&format!("t59{TRUNCATION_MARK}")));

        let sixty = sixty_one[..60].join(" ");
        assert_eq!(normalize_summary(&sixty).unwrap(), sixty);
    }

    #[test]
    fn memory_rejects_newlines() {
        assert!(MemoryList::default().append("a\nb").is_err());
        assert!(MemoryList::from_entries(vec!["ok".into()]).is_ok());
    }
}
