use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rolecast_core::dataset::{build_dataset, DatasetError, DEFAULT_WINDOW_TOKENS};
use rolecast_core::harness::{emit_table, HarnessError, run_ablation, write_outputs, RunConfig, TableFormat};
use rolecast_core::metrics::{embedding_similarity, meteor};
use rolecast_core::prompting::sections_for_variant;
use rolecast_core::session::resume_session;
use rolecast_core::{
    new_character_state, CharacterProfile, EmotionalState, PromptVariant, SectionKind, SensoryState, Session,
    SessionInit, ENGINE_VERSION, TEMPLATE_VERSION,
};
use serde::Deserialize;

use crate::config::AppConfig;
use crate::server::{cors_layer, router, AppState};

#[derive(Debug, Parser)]
#[command(name = "rolecast", version, about = "Character-state dialogue engine")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Print the prompt template version and section layout, then exit.
    #[arg(long)]
    pub print_template: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Talk to a character in the terminal.
    Chat(ChatArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Run the prompt ablation over a DEAR dataset.
    Eval(EvalArgs),
    /// Build a DEAR dataset from scripts and character sheets.
    BuildDataset(BuildArgs),
    /// Score candidate replies against references.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    /// JSON file with `profile`, `interlocutor_name` and optional `senses`
    /// and `emotions`.
    #[arg(long, conflicts_with = "resume")]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<PromptVariant>,
    /// Journal file for the new session.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Continue the session stored in this journal.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory for results.md, results.csv and trace.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated variants; all six when omitted.
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_records: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    /// Overrides the provider choice from the config file.
    #[arg(long, value_enum)]
    pub provider: Option<ProviderKind>,
    /// Mock script; implies `--provider mock`.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Keep full prompt text in the trace.
    #[arg(long)]
    pub trace_prompts: bool,
    /// Format of the table printed to stdout.
    #[arg(long, default_value = "text")]
    pub format: TableFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ProviderKind {
    Mock,
    OpenaiCompat,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub scripts: PathBuf,
    #[arg(long)]
    pub sheets: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Script tokens before each conversation given to the summarizer.
    #[arg(long, default_value_t = DEFAULT_WINDOW_TOKENS)]
    pub window: usize,
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ScoreMetric {
    Meteor,
    Embed,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Metric to report; both when omitted.
    #[arg(long, value_enum)]
    pub metric: Option<ScoreMetric>,
    /// One candidate per line.
    #[arg(long)]
    pub candidate_file: PathBuf,
    /// One reference per line, aligned with the candidates.
    #[arg(long)]
    pub reference_file: PathBuf,
}

pub fn template_description() -> String {
    let mut out = format!("{TEMPLATE_VERSION}\nsections:");
    for kind in SectionKind::ORDER {
        out.push(' ');
        out.push_str(kind.header());
    }
    out.push('\n');
    for variant in PromptVariant::ALL {
        let headers: Vec<&str> = sections_for_variant(variant).into_iter().map(SectionKind::header).collect();
        out.push_str(&format!("{variant}: {}\n", headers.join(" ")));
    }
    out
}

pub async fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = AppConfig::load(cli.config.as_deref())?;
    if cli.print_template {
        print!("{}", template_description());
        return Ok(());
    }
    let Some(command) = cli.command else {
        bail!("no subcommand given; see --help");
    };
    match command {
        Command::Chat(args) => chat(&config, args).await,
        Command::Serve(args) => serve(&mut config, args).await,
        Command::Eval(args) => eval(&mut config, args).await,
        Command::BuildDataset(args) => build(&mut config, args).await,
        Command::Score(args) => score(&config, args).await,
    }
}

#[derive(Debug, Deserialize)]
struct ProfileFile {
    profile: CharacterProfile,
    interlocutor_name: String,
    senses: Option<SensoryState>,
    emotions: Option<EmotionalState>,
}

async fn chat(config: &AppConfig, args: ChatArgs) -> anyhow::Result<()> {
    let gateway = config.gateway()?;
    let mut session = match (&args.resume, &args.profile) {
        (Some(path), _) => resume_session(path).with_context(|| format!("resuming {}", path.display()))?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file: ProfileFile = serde_json::from_str(&text).context("parsing profile file")?;
            let state = new_character_state(file.profile, file.interlocutor_name, file.senses, file.emotions)?;
            let init = SessionInit { state, variant: args.variant.unwrap_or(config.variant), memory: config.memory };
            let id = uuid::Uuid::new_v4().simple().to_string();
            Session::create(id, chrono::Utc::now().to_rfc3339(), init, args.journal.clone())?
        }
        (None, None) => bail!("chat needs --profile or --resume"),
    };

    let name = session.snapshot().state.profile.name.clone();
    let you = session.snapshot().state.interlocutor.interlocutor_name.clone();
    eprintln!("Talking to {name} as {you}. Commands: /state, /prompt, /quit");
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    loop {
        write!(stdout, "{you}> ")?;
        stdout.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        match line.trim() {
            "" => continue,
            "/quit" => break,
            "/state" => println!("{}", serde_json::to_string_pretty(&session.snapshot().state)?),
            "/prompt" => println!("{}", session.snapshot().last_prompt.as_deref().unwrap_or("(no reply yet)")),
            text => match session.post_message(&gateway, text).await {
                Ok(outcome) => {
                    if outcome.warning {
                        eprintln!("(state update could not be parsed; state unchanged)");
                    }
                    if outcome.consolidated {
                        eprintln!("(conversation consolidated into memory)");
                    }
                    println!("{name}: {}", outcome.reply);
                }
                Err(e) => eprintln!("error: {e} (session unchanged)"),
            },
        }
    }
    Ok(())
}

async fn serve(config: &mut AppConfig, args: ServeArgs) -> anyhow::Result<()> {
    if let Some(port) = args.port {
        config.server.port = port;
    }
    if let Some(host) = args.host {
        config.server.host = host;
    }
    let state = Arc::new(AppState::new(
        config.gateway()?,
        config.server.journal_dir.clone(),
        config.memory,
        config.variant,
    ));
    let resumed = state.resume_journals().context("reading journal directory")?;
    let app = router(state, cors_layer(&config.server.cors_origins));
    let addr: SocketAddr = format!("{}:{}", config.server.host, config.server.port).parse().context("listen address")?;
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, resumed, engine = ENGINE_VERSION, "listening");
    axum::serve(listener, app).await?;
    Ok(())
}

async fn eval(config: &mut AppConfig, args: EvalArgs) -> anyhow::Result<()> {
    if let Some(path) = args.mock_script {
        config.mock_script = Some(path);
    }
    match args.provider {
        Some(ProviderKind::Mock) if config.mock_script.is_none() => bail!("--provider mock needs a mock script"),
        Some(ProviderKind::OpenaiCompat) => config.mock_script = None,
        _ => {}
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let variants = match &args.variants {
        Some(list) => PromptVariant::parse_list(list).map_err(|e| anyhow::anyhow!("--variants: {e}"))?,
        None => PromptVariant::ALL.to_vec(),
    };
    let mut run_config = RunConfig::new(&args.dataset, &args.out, variants);
    run_config.seed = config.seed;
    run_config.max_records = args.max_records;
    run_config.parallelism = args.parallelism;
    run_config.memory = config.memory;
    run_config.trace_prompts = args.trace_prompts;

    let gateway = config.gateway()?;
    let embedder = config.embedder()?;
    let run = match run_ablation(&run_config, &gateway, embedder.as_ref()).await {
        Ok(run) => run,
        Err(HarnessError::Dataset(DatasetError::Invalid(report))) => {
            eprintln!("{}", report.to_json());
            bail!("dataset {} failed validation", args.dataset.display());
        }
        Err(e) => return Err(e.into()),
    };
    write_outputs(&run, &args.out)?;
    print!("{}", emit_table(&run.table, args.format));
    Ok(())
}

async fn build(config: &mut AppConfig, args: BuildArgs) -> anyhow::Result<()> {
    if let Some(path) = args.mock_script {
        config.mock_script = Some(path);
    }
    let gateway = config.gateway()?;
    let summary = build_dataset(&args.scripts, &args.sheets, &gateway, args.window, args.concurrency).await?;
    for warning in &summary.warnings {
        eprintln!("warning: {warning}");
    }
    summary.dataset.write(&args.out)?;
    eprintln!("wrote {} records to {}", summary.dataset.len(), args.out.display());
    Ok(())
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Scores line-aligned candidate and reference files. Writes one CSV row
/// per line followed by a `mean` row.
pub async fn score_files(
    candidates: &[String],
    references: &[String],
    metric: Option<ScoreMetric>,
    embedder: &dyn rolecast_core::metrics::Embedder,
) -> anyhow::Result<String> {
    if candidates.len() != references.len() {
        bail!("{} candidate lines but {} reference lines", candidates.len(), references.len());
    }
    let want_meteor = metric != Some(ScoreMetric::Embed);
    let want_embed = metric != Some(ScoreMetric::Meteor);
    let mut header = vec!["line"];
    if want_meteor {
        header.push("meteor");
    }
    if want_embed {
        header.push("sentence_similarity");
    }
    let mut out = header.join(",") + "\n";
    let (mut sum_m, mut sum_e) = (0.0, 0.0);
    for (i, (c, r)) in candidates.iter().zip(references).enumerate() {
        let mut row = vec![(i + 1).to_string()];
        if want_meteor {
            let s = meteor(c, r).score;
            sum_m += s;
            row.push(format!("{s:.6}"));
        }
        if want_embed {
            let s = embedding_similarity(c, r, embedder).await?;
            sum_e += s;
            row.push(format!("{s:.6}"));
        }
        out += &(row.join(",") + "\n");
    }
    let n = candidates.len().max(1) as f64;
    let mut row = vec!["mean".to_owned()];
    if want_meteor {
        row.push(format!("{:.6}", sum_m / n));
    }
    if want_embed {
        row.push(format!("{:.6}", sum_e / n));
    }
    out += &(row.join(",") + "\n");
    Ok(out)
}

async fn score(config: &AppConfig, args: ScoreArgs) -> anyhow::Result<()> {
    let candidates = read_lines(&args.candidate_file)?;
    let references = read_lines(&args.reference_file)?;
    let embedder = config.embedder()?;
    print!("{}", score_files(&candidates, &references, args.metric, embedder.as_ref()).await?);
    Ok(())
}
