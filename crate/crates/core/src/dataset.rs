//! DEAR records: dialogues enriched with character sheets, senses, a scene
//! background summary and per-turn emotion labels.
//!
//! On disk a dataset is UTF-8 JSONL, one [`DearRecord`] per line.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::state::{SensoryState, Violation};

/// Script tokens summarized into the background of each conversation.
pub const DEFAULT_WINDOW_TOKENS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterSheet {
    pub name: String,
    pub attributes: Vec<String>,
    #[serde(default)]
    pub senses: SensoryState,
    #[serde(default)]
    pub relationship_to_other: String,
    #[serde(default)]
    pub favorability: f64,
    #[serde(default)]
    pub experiences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DearTurn {
    pub speaker: String,
    pub text: String,
    #[serde(default)]
    pub emotions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DearRecord {
    pub record_id: String,
    pub movie_id: String,
    pub background_summary: String,
    pub characters: Vec<CharacterSheet>,
    pub turns: Vec<DearTurn>,
    /// Index of the ground-truth turn to predict.
    pub target_index: usize,
}

impl DearRecord {
    pub fn target(&self) -> Option<&DearTurn> {
        self.turns.get(self.target_index)
    }

    pub fn sheet(&self, name: &str) -> Option<&CharacterSheet> {
        self.characters.iter().find(|c| c.name == name)
    }

    /// The sheet of whichever character is not `name`.
    pub fn other_sheet(&self, name: &str) -> Option<&CharacterSheet> {
        self.characters.iter().find(|c| c.name != name)
    }
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation { path: path.into(), message: message.into() }
}

/// All invariant violations of a single record. Uniqueness of `record_id`
/// is a dataset-level check done by the loader.
pub fn validate_record(record: &DearRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.record_id.trim().is_empty() {
        out.push(violation("record_id", "must not be empty"));
    }
    if record.characters.len() != 2 {
        out.push(violation("characters", format!("expected exactly 2 characters, found {}", record.characters.len())));
    }
    for (i, sheet) in record.characters.iter().enumerate() {
        if sheet.name.trim().is_empty() {
            out.push(violation(format!("characters[{i}].name"), "must not be empty"));
        }
        if sheet.attributes.is_empty() {
            out.push(violation(format!("characters[{i}].attributes"), "must not be empty"));
        }
        if !(-1.0..=1.0).contains(&sheet.favorability) {
            out.push(violation(format!("characters[{i}].favorability"), "must lie in [-1, 1]"));
        }
    }
    if record.characters.len() == 2 && record.characters[0].name == record.characters[1].name {
        out.push(violation("characters", "character names must differ"));
    }
    for (i, turn) in record.turns.iter().enumerate() {
        if !record.characters.iter().any(|c| c.name == turn.speaker) {
            out.push(violation(format!("turns[{i}].speaker"), format!("{:?} is not one of the characters", turn.speaker)));
        }
    }
    if record.target_index < 1 {
        out.push(violation("target_index", "must be at least 1 so the target has preceding context"));
    } else if record.target_index >= record.turns.len() {
        out.push(violation(
            "target_index",
            format!("{} is past the last turn ({} turns)", record.target_index, record.turns.len()),
        ));
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<DearRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        fs::write(path, self.to_jsonl()).map_err(|source| DatasetError::Io { path: path.to_owned(), source })
    }
}

/// One rejected line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadIssue {
    /// 1-based line number.
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_id: Option<String>,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub issues: Vec<LoadIssue>,
}

impl LoadReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{} invalid record(s) in strict mode, first at line {}", .0.issues.len(), .0.issues.first().map_or(0, |i| i.line))]
    Invalid(LoadReport),
    #[error("conversation offset {offset} is outside the script ({len} bytes)")]
    OffsetOutOfBounds { offset: usize, len: usize },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("malformed input {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Parses and validates JSONL text. Bad lines are reported; in strict mode
/// any bad line fails the whole load.
pub fn parse_dear(text: &str, strict: bool) -> Result<(Dataset, LoadReport), DatasetError> {
    let mut dataset = Dataset::default();
    let mut report = LoadReport::default();
    let mut seen_ids = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let record: DearRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                report.issues.push(LoadIssue { line: line_no, record_id: None, violations: vec![violation("$", e.to_string())] });
                continue;
            }
        };
        let mut violations = validate_record(&record);
        if !seen_ids.insert(record.record_id.clone()) {
            violations.push(violation("record_id", format!("duplicate record_id {:?}", record.record_id)));
        }
        if violations.is_empty() {
            dataset.records.push(record);
        } else {
            report.issues.push(LoadIssue { line: line_no, record_id: Some(record.record_id), violations });
        }
    }
    if strict && !report.is_clean() {
        return Err(DatasetError::Invalid(report));
    }
    Ok((dataset, report))
}

pub fn load_dear(path: &Path, strict: bool) -> Result<(Dataset, LoadReport), DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_owned(), source })?;
    parse_dear(&text, strict)
}

/// The last `min(n, available)` whitespace tokens that end at or before
/// byte `offset`, joined by single spaces. A token straddling the offset is
/// not included.
pub fn take_preceding_tokens(script: &str, offset: usize, n: usize) -> Result<String, DatasetError> {
    if offset > script.len() || !script.is_char_boundary(offset) {
        return Err(DatasetError::OffsetOutOfBounds { offset, len: script.len() });
    }
    let prefix = &script[..offset];
    let mut tokens: Vec<&str> = prefix.split_whitespace().collect();
    let cut_mid_token = offset < script.len()
        && !prefix.is_empty()
        && !prefix.ends_with(char::is_whitespace)
        && !script[offset..].starts_with(char::is_whitespace);
    if cut_mid_token {
        tokens.pop();
    }
    let start = tokens.len().saturating_sub(n);
    Ok(tokens[start..].join(" "))
}

/// A raw conversation located in a plain-text script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptConversation {
    pub conversation_id: String,
    /// Byte offset in the script where the conversation begins.
    pub start_offset: usize,
    pub turns: Vec<ScriptTurn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptTurn {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltRecord {
    pub record: DearRecord,
    /// Indices of turns whose emotion labels could not be parsed.
    pub label_warnings: Vec<usize>,
}

/// Turns a raw script conversation into a DEAR record: the background is a
/// summary of the preceding script window and every turn gets emotion
/// labels from the model. The last turn becomes the prediction target.
pub async fn build_record(
    movie_id: &str,
    script: &str,
    conversation: &ScriptConversation,
    sheets: &[CharacterSheet],
    gateway: &Gateway,
    window_tokens: usize,
) -> Result<BuiltRecord, DatasetError> {
    if conversation.turns.len() < 2 {
        return Err(DatasetError::Precondition(format!(
            "conversation {} has {} turn(s); at least 2 are needed",
            conversation.conversation_id,
            conversation.turns.len()
        )));
    }
    let mut speakers: Vec<&str> = Vec::new();
    for turn in &conversation.turns {
        if !speakers.contains(&turn.speaker.as_str()) {
            speakers.push(&turn.speaker);
        }
    }
    if speakers.len() != 2 {
        return Err(DatasetError::Precondition(format!(
            "conversation {} has {} distinct speakers; exactly 2 are needed",
            conversation.conversation_id,
            speakers.len()
        )));
    }
    let characters = speakers
        .iter()
        .map(|name| {
            sheets.iter().find(|s| s.name == *name).cloned().ok_or_else(|| {
                DatasetError::Precondition(format!("no character sheet for speaker {name:?}"))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let excerpt = take_preceding_tokens(script, conversation.start_offset, window_tokens)?;
    let background_summary =
        if excerpt.is_empty() { String::new() } else { gateway.summarize_background(&excerpt).await? };

    let pairs: Vec<(String, String)> =
        conversation.turns.iter().map(|t| (t.speaker.clone(), t.text.clone())).collect();
    let mut turns = Vec::with_capacity(pairs.len());
    let mut label_warnings = Vec::new();
    for (i, turn) in conversation.turns.iter().enumerate() {
        let annotation = gateway.annotate_emotions(&pairs, i).await?;
        if annotation.warning {
            tracing::warn!(conversation = %conversation.conversation_id, turn = i, "unparseable emotion labels");
            label_warnings.push(i);
        }
        turns.push(DearTurn { speaker: turn.speaker.clone(), text: turn.text.clone(), emotions: annotation.labels });
    }

    let record = DearRecord {
        record_id: format!("{movie_id}-{}", conversation.conversation_id),
        movie_id: movie_id.to_owned(),
        background_summary,
        characters,
        target_index: turns.len() - 1,
        turns,
    };
    Ok(BuiltRecord { record, label_warnings })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildSummary {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_owned(), source })?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Malformed { path: path.to_owned(), message: e.to_string() })
}

/// Builds a dataset from a directory of scripts and a directory of
/// character sheets.
///
/// For each `<movie>.txt` in `scripts_dir` there must be a
/// `<movie>.conversations.json` next to it (a list of
/// [`ScriptConversation`]) and a `<movie>.json` in `sheets_dir` (a list of
/// [`CharacterSheet`]). At most `concurrency` conversations are processed at
/// once; output order follows movie name, then conversation order.
pub async fn build_dataset(
    scripts_dir: &Path,
    sheets_dir: &Path,
    gateway: &Gateway,
    window_tokens: usize,
    concurrency: usize,
) -> Result<BuildSummary, DatasetError> {
    let mut movies: Vec<PathBuf> = fs::read_dir(scripts_dir)
        .map_err(|source| DatasetError::Io { path: scripts_dir.to_owned(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    movies.sort();

    let mut jobs = Vec::new();
    for script_path in movies {
        let movie_id = script_path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
        let script = fs::read_to_string(&script_path)
            .map_err(|source| DatasetError::Io { path: script_path.clone(), source })?;
        let conversations: Vec<ScriptConversation> =
            read_json(&scripts_dir.join(format!("{movie_id}.conversations.json")))?;
        let sheets: Vec<CharacterSheet> = read_json(&sheets_dir.join(format!("{movie_id}.json")))?;
        let script = std::sync::Arc::new(script);
        let sheets = std::sync::Arc::new(sheets);
        for conversation in conversations {
            jobs.push((movie_id.clone(), script.clone(), conversation, sheets.clone()));
        }
    }

    let results: Vec<Result<BuiltRecord, DatasetError>> = stream::iter(jobs)
        .map(|(movie_id, script, conversation, sheets)| async move {
            build_record(&movie_id, &script, &conversation, &sheets, gateway, window_tokens).await
        })
        .buffered(concurrency.max(1))
        .collect()
        .await;

    let mut summary = BuildSummary::default();
    for result in results {
        let built = result?;
        for turn in &built.label_warnings {
            summary
                .warnings
                .push(format!("{}: emotion labels for turn {turn} could not be parsed", built.record.record_id));
        }
        summary.dataset.records.push(built.record);
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GenerationParams, MockProvider, MockReply, MockScript, RetryPolicy};
    use std::sync::Arc;

    fn sheet(name: &str) -> CharacterSheet {
        CharacterSheet {
            name: name.into(),
            attributes: vec!["stubborn".into()],
            senses: SensoryState::default(),
            relationship_to_other: "sibling".into(),
            favorability: 0.2,
            experiences: vec![],
        }
    }

    pub(crate) fn record(id: &str, target_index: usize) -> DearRecord {
        DearRecord {
            record_id: id.into(),
            movie_id: "m1".into(),
            background_summary: "A kitchen.".into(),
            characters: vec![sheet("Ann"), sheet("Ben")],
            turns: vec![
                DearTurn { speaker: "Ann".into(), text: "Where were you?".into(), emotions: vec!["worry".into()] },
                DearTurn { speaker: "Ben".into(), text: "Out.".into(), emotions: vec![] },
            ],
            target_index,
        }
    }

    fn gateway(replies: &[&str]) -> Gateway {
        let script = MockScript::sequential(replies.iter().map(|r| MockReply::text(*r)).collect());
        Gateway::new(Arc::new(MockProvider::new(script)), RetryPolicy::none(), GenerationParams::default())
    }

    #[test]
    fn loads_valid_records() {
        let ds = Dataset { records: vec![record("a", 1), record("b", 1), record("c", 1)] };
        let (loaded, report) = parse_dear(&ds.to_jsonl(), true).unwrap();
        assert_eq!(loaded.len(), 3);
        assert!(report.is_clean());
        assert_eq!(loaded, ds);
    }

    #[test]
    fn target_index_zero_is_rejected() {
        let issues = validate_record(&record("a", 0));
        assert!(issues.iter().any(|v| v.path == "target_index"));
        assert!(validate_record(&record("a", 2)).iter().any(|v| v.path == "target_index"));
    }

    #[test]
    fn skip_versus_strict() {
        let text = Dataset { records: vec![record("a", 1), record("b", 0), record("c", 1)] }.to_jsonl();
        let (ds, report) = parse_dear(&text, false).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(report.issues.len(), 1);
        assert_eq!(report.issues[0].line, 2);
        assert!(matches!(parse_dear(&text, true), Err(DatasetError::Invalid(_))));
    }

    #[test]
    fn duplicate_ids_and_bad_json() {
        let mut text = Dataset { records: vec![record("a", 1), record("a", 1)] }.to_jsonl();
        text.push_str("{not json\n");
        let (ds, report) = parse_dear(&text, false).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(report.issues.len(), 2);
        assert_eq!(report.issues[1].line, 3);
    }

    #[test]
    fn unknown_speaker_rejected() {
        let mut r = record("a", 1);
        r.turns[0].speaker = "Cal".into();
        assert!(validate_record(&r).iter().any(|v| v.path == "turns[0].speaker"));
    }

    #[test]
    fn unreadable_file() {
        assert!(matches!(load_dear(Path::new("/nonexistent/x.jsonl"), false), Err(DatasetError::Io { .. })));
    }

    #[test]
    fn window_arithmetic() {
        let fifty: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
        let script = fifty.join(" ");
        assert_eq!(take_preceding_tokens(&script, script.len(), 200).unwrap(), script);

        let many: Vec<String> = (0..400).map(|i| format!("t{i}")).collect();
        let script = many.join(" ");
        let offset = script.find("t300").unwrap();
        let expected = many[100..300].join(" ");
        assert_eq!(take_preceding_tokens(&script, offset, 200).unwrap(), expected);

        assert_eq!(take_preceding_tokens(&script, 0, 200).unwrap(), "");
        assert!(take_preceding_tokens(&script, script.len() + 1, 200).is_err());
    }

    #[test]
    fn straddled_token_excluded() {
        assert_eq!(take_preceding_tokens("alpha beta gamma", 8, 10).unwrap(), "alpha");
        assert_eq!(take_preceding_tokens("alpha  beta", 6, 10).unwrap(), "alpha");
    }

    fn conversation(n: usize) -> ScriptConversation {
        let speakers = ["Ann", "Ben"];
        ScriptConversation {
            conversation_id: "c1".into(),
            start_offset: 17,
            turns: (0..n).map(|i| ScriptTurn { speaker: speakers[i % 2].into(), text: format!("line {i}") }).collect(),
        }
    }

    #[tokio::test]
    async fn builds_with_scripted_mocks() {
        let script = "INT. KITCHEN. Ann waits. ANN: Where were you?";
        let g = gateway(&["BG.", "[\"anger\"]", "[\"anger\"]"]);
        let built = build_record("m1", script, &conversation(2), &[sheet("Ann"), sheet("Ben")], &g, 200).await.unwrap();
        assert!(built.label_warnings.is_empty());
        let r = built.record;
        assert_eq!(r.background_summary, "BG.");
        assert!(r.turns.iter().all(|t| t.emotions == vec!["anger".to_string()]));
        assert_eq!(r.target_index, 1);
        assert_eq!(r.record_id, "m1-c1");
        assert!(validate_record(&r).is_empty());
    }

    #[tokio::test]
    async fn single_turn_is_a_precondition_error() {
        let g = gateway(&["BG."]);
        let err = build_record("m1", "abc", &conversation(1), &[sheet("Ann"), sheet("Ben")], &g, 200).await;
        assert!(matches!(err, Err(DatasetError::Precondition(_))));
    }

    #[tokio::test]
    async fn garbage_labels_degrade() {
        let script = "INT. KITCHEN. Ann waits. ANN: Where were you?";
        let g = gateway(&["BG.", "no idea", "still no idea"]);
        let built = build_record("m1", script, &conversation(2), &[sheet("Ann"), sheet("Ben")], &g, 200).await.unwrap();
        assert_eq!(built.label_warnings, vec![0, 1]);
        assert!(built.record.turns.iter().all(|t| t.emotions.is_empty()));
    }
}
