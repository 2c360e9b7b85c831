//! Ablation runs over a DEAR dataset: every record is replayed up to its
//! target turn, a reply is generated under each prompt variant, and the
//! reply is scored against the ground truth.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{load_dear, Dataset, DatasetError, DearRecord};
use crate::gateway::{ChatRequest, Gateway, GatewayError, GenerationParams};
use crate::memory::{maybe_consolidate, ConversationLog, MemoryConfig, MemoryList, Turn};
use crate::metrics::{embedding_similarity, meteor, Embedder, MeteorScore};
use crate::prompting::{assemble_prompt, section_headers_in, sections_for_variant, PromptVariant, SectionKind};
use crate::state::{
    new_character_state, CharacterProfile, CharacterState, Emotion, EmotionalState, StateError,
    DEFAULT_EMOTION_CAPACITY,
};

/// Intensity given to dataset emotion labels, which carry none.
pub const LABEL_INTENSITY: f64 = 1.0;

pub const AGGREGATION_NOTE: &str = "Scores are arithmetic means over successful generations.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSet {
    pub meteor: bool,
    pub embedding: bool,
}

impl Default for MetricSet {
    fn default() -> Self {
        Self { meteor: true, embedding: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variants: Vec<PromptVariant>,
    pub dataset_path: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub max_records: Option<usize>,
    #[serde(default)]
    pub metrics: MetricSet,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub memory: MemoryConfig,
    #[serde(default = "default_capacity")]
    pub emotion_capacity: usize,
    /// Store the full prompt text in the trace, not just its hash.
    #[serde(default)]
    pub trace_prompts: bool,
    /// Decoding parameters for generation; the gateway's when unset.
    #[serde(default)]
    pub generation: Option<GenerationParams>,
}

fn default_parallelism() -> usize {
    4
}

fn default_capacity() -> usize {
    DEFAULT_EMOTION_CAPACITY
}

impl RunConfig {
    pub fn new(dataset_path: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, variants: Vec<PromptVariant>) -> Self {
        Self {
            variants,
            dataset_path: dataset_path.into(),
            output_dir: output_dir.into(),
            seed: 0,
            max_records: None,
            metrics: MetricSet::default(),
            parallelism: default_parallelism(),
            memory: MemoryConfig::default(),
            emotion_capacity: DEFAULT_EMOTION_CAPACITY,
            trace_prompts: false,
            generation: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.variants.is_empty() {
            return Err(HarnessError::Config("at least one variant is required".into()));
        }
        if self.max_records == Some(0) {
            return Err(HarnessError::Config("max_records must be at least 1".into()));
        }
        if self.memory.threshold_tokens == 0 {
            return Err(HarnessError::Config("memory threshold must be positive".into()));
        }
        Ok(())
    }

    /// Requested variants in canonical table order, without duplicates.
    pub fn ordered_variants(&self) -> Vec<PromptVariant> {
        let wanted: BTreeSet<PromptVariant> = self.variants.iter().copied().collect();
        PromptVariant::ALL.into_iter().filter(|v| wanted.contains(v)).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("record {record_id}: {source}")]
    State { record_id: String, source: StateError },
    #[error("record {record_id}: {message}")]
    Record { record_id: String, message: String },
    #[error("prompt for {record_id}/{variant} has sections {found:?}, expected {expected:?}")]
    IsolationViolation {
        record_id: String,
        variant: PromptVariant,
        found: Vec<SectionKind>,
        expected: Vec<SectionKind>,
    },
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// One line of `trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub record_id: String,
    pub variant: PromptVariant,
    pub prompt_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub sections: Vec<SectionKind>,
    pub reference: String,
    pub generation: Option<String>,
    pub meteor: Option<MeteorScore>,
    pub embedding_similarity: Option<f64>,
    pub error: Option<String>,
}

impl TraceEntry {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: PromptVariant,
    pub mean_meteor: Option<f64>,
    pub mean_embedding: Option<f64>,
    pub records: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub table: ResultsTable,
    pub trace: Vec<TraceEntry>,
}

/// The target speaker's state as of just before the target turn, plus the
/// replayed conversation log.
pub struct RecordContext {
    pub state: CharacterState,
    pub log: ConversationLog,
}

fn initial_state(record: &DearRecord, emotion_capacity: usize) -> Result<CharacterState, HarnessError> {
    let record_err = |message: String| HarnessError::Record { record_id: record.record_id.clone(), message };
    let target = record.target().ok_or_else(|| record_err("target turn missing".into()))?;
    let sheet = record.sheet(&target.speaker).ok_or_else(|| record_err("no sheet for target speaker".into()))?;
    let other = record.other_sheet(&target.speaker).ok_or_else(|| record_err("no interlocutor sheet".into()))?;

    // emotions: labels of the speaker's latest turn before the target
    let mut emotions: Vec<Emotion> = Vec::new();
    if let Some(prior) = record.turns[..record.target_index].iter().rev().find(|t| t.speaker == target.speaker) {
        for label in &prior.emotions {
            let label = label.trim();
            if !label.is_empty() && !emotions.iter().any(|e| e.label.eq_ignore_ascii_case(label)) {
                emotions.push(Emotion::new(label, LABEL_INTENSITY));
            }
        }
    }
    emotions.truncate(emotion_capacity);

    let profile = CharacterProfile::new(sheet.name.clone(), sheet.attributes.clone());
    let mut state = new_character_state(
        profile,
        other.name.clone(),
        Some(sheet.senses.clone()),
        Some(EmotionalState::new(emotions).with_capacity(emotion_capacity)),
    )
    .map_err(|source| HarnessError::State { record_id: record.record_id.clone(), source })?;
    if !sheet.relationship_to_other.trim().is_empty() {
        state.interlocutor.relationship = sheet.relationship_to_other.clone();
    }
    state.interlocutor.favorability = sheet.favorability;
    state.interlocutor.experiences = sheet.experiences.clone();
    Ok(state)
}

/// Replays every turn before the target through the log, consolidating as
/// a live session would. Failed consolidations are skipped, as they are
/// live.
pub async fn prepare_context(
    record: &DearRecord,
    gateway: &Gateway,
    memory: MemoryConfig,
    emotion_capacity: usize,
) -> Result<RecordContext, HarnessError> {
    let mut state = initial_state(record, emotion_capacity)?;
    let mut log = ConversationLog::with_config(memory)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut mem: MemoryList = state.memory.clone();
    for turn in &record.turns[..record.target_index] {
        let turn = Turn::new(turn.speaker.clone(), turn.text.clone())
            .map_err(|e| HarnessError::Record { record_id: record.record_id.clone(), message: e.to_string() })?;
        log = log.record_turn(turn);
        match maybe_consolidate(&log, &mem, gateway).await {
            Ok(c) => {
                log = c.log;
                mem = c.memory;
            }
            Err(e) => tracing::warn!(record = %record.record_id, error = %e, "consolidation failed"),
        }
    }
    state.memory = mem;
    Ok(RecordContext { state, log })
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Generates and scores one reply for `record` under `variant`.
///
/// Generation and embedding failures are recorded in the returned entry
/// rather than returned as errors.
pub async fn evaluate_record(
    record: &DearRecord,
    variant: PromptVariant,
    gateway: &Gateway,
    embedder: &dyn Embedder,
    config: &RunConfig,
) -> Result<TraceEntry, HarnessError> {
    let context = prepare_context(record, gateway, config.memory, config.emotion_capacity).await?;
    let prompt = assemble_prompt(&context.state, &context.log, &record.background_summary, variant).map_err(|e| {
        HarnessError::Record { record_id: record.record_id.clone(), message: e.to_string() }
    })?;
    let full = prompt.full_text();

    let found = section_headers_in(&full);
    let expected = sections_for_variant(variant);
    if found != expected {
        return Err(HarnessError::IsolationViolation {
            record_id: record.record_id.clone(),
            variant,
            found: found.into_iter().collect(),
            expected: expected.into_iter().collect(),
        });
    }

    let reference = record.target().map(|t| t.text.clone()).unwrap_or_default();
    let mut entry = TraceEntry {
        record_id: record.record_id.clone(),
        variant,
        prompt_sha256: sha256_hex(&full),
        prompt: config.trace_prompts.then(|| full.clone()),
        sections: prompt.section_kinds(),
        reference: reference.clone(),
        generation: None,
        meteor: None,
        embedding_similarity: None,
        error: None,
    };

    let params = config.generation.unwrap_or_else(|| gateway.params());
    let request = ChatRequest::new(prompt.messages(), params).with_reference(reference.clone());
    let generation = match gateway.complete_chat(&request).await {
        Ok(resp) => resp.content.trim().to_owned(),
        Err(e) => {
            entry.error = Some(e.to_string());
            return Ok(entry);
        }
    };
    if config.metrics.meteor {
        entry.meteor = Some(meteor(&generation, &reference));
    }
    if config.metrics.embedding {
        match embedding_similarity(&generation, &reference, embedder).await {
            Ok(sim) => entry.embedding_similarity = Some(sim),
            Err(e) => entry.error = Some(format!("embedding failed: {e}")),
        }
    }
    if entry.error.is_some() {
        entry.meteor = None;
        entry.embedding_similarity = None;
    }
    entry.generation = Some(generation);
    Ok(entry)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Folds trace entries into one row per variant, in canonical order.
pub fn aggregate(variants: &[PromptVariant], trace: &[TraceEntry]) -> ResultsTable {
    let rows = variants
        .iter()
        .map(|&variant| {
            let entries: Vec<&TraceEntry> = trace.iter().filter(|e| e.variant == variant).collect();
            let ok: Vec<&&TraceEntry> = entries.iter().filter(|e| e.succeeded()).collect();
            ResultRow {
                variant,
                mean_meteor: mean(ok.iter().filter_map(|e| e.meteor.map(|m| m.score))),
                mean_embedding: mean(ok.iter().filter_map(|e| e.embedding_similarity)),
                records: ok.len(),
                failures: entries.len() - ok.len(),
            }
        })
        .collect();
    ResultsTable { rows }
}

/// Evaluates every (record, variant) pair of an already loaded dataset.
pub async fn run_ablation_on(
    dataset: &Dataset,
    config: &RunConfig,
    gateway: &Gateway,
    embedder: &dyn Embedder,
) -> Result<AblationRun, HarnessError> {
    config.validate()?;
    let variants = config.ordered_variants();
    let records: Vec<&DearRecord> = dataset.records.iter().take(config.max_records.unwrap_or(usize::MAX)).collect();
    let jobs: Vec<(&DearRecord, PromptVariant)> =
        records.iter().flat_map(|r| variants.iter().map(move |v| (*r, *v))).collect();

    // `buffered` yields in submission order, so the fold below is
    // independent of completion order
    let trace: Vec<TraceEntry> = stream::iter(jobs)
        .map(|(record, variant)| evaluate_record(record, variant, gateway, embedder, config))
        .buffered(config.parallelism.max(1))
        .collect::<Vec<_>>()
        .await
        .into_iter()
        .collect::<Result<_, _>>()?;

    Ok(AblationRun { table: aggregate(&variants, &trace), trace })
}

pub async fn run_ablation(
    config: &RunConfig,
    gateway: &Gateway,
    embedder: &dyn Embedder,
) -> Result<AblationRun, HarnessError> {
    config.validate()?;
    let (dataset, report) = load_dear(&config.dataset_path, true)?;
    debug_assert!(report.is_clean());
    run_ablation_on(&dataset, config, gateway, embedder).await
}

pub fn trace_jsonl(trace: &[TraceEntry]) -> String {
    let mut out = String::new();
    for entry in trace {
        out.push_str(&serde_json::to_string(entry).expect("trace serializes"));
        out.push('\n');
    }
    out
}

/// Writes `results.md`, `results.csv` and `trace.jsonl` into `dir`.
pub fn write_outputs(run: &AblationRun, dir: &Path) -> Result<(), HarnessError> {
    let io_err = |path: &Path| {
        let path = path.to_owned();
        move |source| HarnessError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, body) in [
        ("results.md", emit_table(&run.table, TableFormat::Markdown)),
        ("results.csv", emit_table(&run.table, TableFormat::Csv)),
        ("trace.jsonl", trace_jsonl(&run.trace)),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Text,
    Csv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(TableFormat::Text),
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(format!("unknown table format {other:?}")),
        }
    }
}

fn best(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.flatten().fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
}

fn cell(value: Option<f64>, best: Option<f64>, bold: bool) -> String {
    match value {
        None => "-".to_owned(),
        Some(v) if bold && Some(v) == best => format!("**{v:.4}**"),
        Some(v) => format!("{v:.4}"),
    }
}

pub fn emit_table(table: &ResultsTable, format: TableFormat) -> String {
    let best_meteor = best(table.rows.iter().map(|r| r.mean_meteor));
    let best_embed = best(table.rows.iter().map(|r| r.mean_embedding));
    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            out.push_str("| Model | METEOR | Sentence similarity |\n");
            out.push_str("|:------|-------:|--------------------:|\n");
            for row in &table.rows {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} |",
                    row.variant,
                    cell(row.mean_meteor, best_meteor, true),
                    cell(row.mean_embedding, best_embed, true)
                );
            }
            let _ = write!(out, "\n{AGGREGATION_NOTE}\n");
        }
        TableFormat::Csv => {
            out.push_str("model,meteor,sentence_similarity,records,failures\n");
            let num = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
            for row in &table.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    row.variant,
                    num(row.mean_meteor),
                    num(row.mean_embedding),
                    row.records,
                    row.failures
                );
            }
        }
        TableFormat::Text => {
            let _ = writeln!(out, "{:<14}{:>10}{:>12}{:>9}{:>10}", "model", "meteor", "similarity", "records", "failures");
            for row in &table.rows {
                let _ = writeln!(
                    out,
                    "{:<14}{:>10}{:>12}{:>9}{:>10}",
                    row.variant.as_str(),
                    cell(row.mean_meteor, None, false),
                    cell(row.mean_embedding, None, false),
                    row.records,
                    row.failures
                );
            }
            let _ = writeln!(out, "{AGGREGATION_NOTE}");
        }
    }
    out
}

/// Wraps a gateway error for harness-level reporting.
impl From<GatewayError> for HarnessError {
    fn from(e: GatewayError) -> Self {
        HarnessError::Config(e.to_string())
    }
}
