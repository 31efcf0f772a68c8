//! `clinret`: one pipeline stage per invocation over a shared config file.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clinret::{ErrorKind, Result};
use tracing_subscriber::EnvFilter;

use crate::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "clinret", version, about = "Concept retrieval and labeling over oncology notes")]
pub struct Cli {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `rng_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the execution plan and exit.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Overrides the stage's primary output path.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and normalize a notes file into the pipeline's notes path.
    Ingest {
        input: PathBuf,
    },
    /// Split notes into chunks; also writes gold judgments when synthetic truth exists.
    Chunk,
    /// Expand every concept's seed queries with the LLM.
    Expand(LlmArgs),
    /// Embed all chunks into the index cache.
    Index,
    /// Select the top-k chunks per concept as labeling candidates.
    Harvest {
        #[arg(long)]
        per_concept_k: Option<usize>,
        /// Write the 2-similar + 2-random per patient and concept gold candidate set instead.
        #[arg(long)]
        gold_candidates: bool,
    },
    /// Label harvested candidates with the LLM, regex filter and self-verification.
    Label(LlmArgs),
    /// Export labels as a distillation training set.
    EmitTrain {
        #[arg(long, value_enum, default_value_t = EmitModeArg::Multi)]
        mode: EmitModeArg,
    },
    /// Classify every chunk with a concept scorer.
    Score(ScorerArgs),
    /// Compute metrics against gold and render the comparison table.
    Eval {
        /// Evaluate embedding retrieval at this top-k cutoff instead of scorer predictions.
        #[arg(long)]
        k: Option<usize>,
        /// Add the published reference systems.
        #[arg(long)]
        baselines: bool,
    },
    /// Precision and recall of embedding retrieval over increasing cutoffs.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "25,50,100,200,400")]
        ks: Vec<usize>,
    },
    /// Per-patient classification latency.
    Bench(ScorerArgs),
    /// Generate a synthetic corpus with planted concept mentions.
    Synth,
}

#[derive(Debug, Args)]
pub struct LlmArgs {
    /// Scripted mock LLM (JSON Lines) instead of the configured endpoint.
    #[arg(long)]
    mock_llm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScorerArgs {
    /// `lexical` or `external:<URL>`.
    #[arg(long, default_value = "lexical", value_parser = parse_scorer)]
    scorer: ScorerChoice,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerChoice {
    Lexical,
    External(String),
}

fn parse_scorer(s: &str) -> std::result::Result<ScorerChoice, String> {
    match s.split_once(':') {
        _ if s == "lexical" => Ok(ScorerChoice::Lexical),
        Some(("external", url)) if !url.is_empty() => Ok(ScorerChoice::External(url.to_owned())),
        _ => Err(format!("expected `lexical` or `external:<URL>`, got {s:?}")),
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EmitModeArg {
    Single,
    Multi,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Io => 3,
        ErrorKind::Remote => 4,
        ErrorKind::Validation => 5,
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    let ctx = commands::Context {
        cfg,
        dry_run: cli.dry_run,
        output: cli.output,
    };
    commands::dispatch(&ctx, &cli.command)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
