//! Command-line front end: argument parsing, configuration and the pipeline stages.

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::corpus::CorpusError;
use crate::embed::EmbedError;
use crate::evaluate::{EvalError, ReportOptions};
use crate::ingest::IngestError;
use crate::llmtag::LlmError;
use crate::simtag::SimtagError;
use config::{env_overrides, ConfigArgs, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("remote service error: {0}")]
    Remote(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Remote(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::UnknownFormat(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Transport(_) | EmbedError::Protocol(_) => CliError::Remote(e.to_string()),
            EmbedError::InvalidDimension { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SimtagError> for CliError {
    fn from(e: SimtagError) -> Self {
        match e {
            SimtagError::Embed(inner) => inner.into(),
            SimtagError::EmbedPublication { ref source, .. }
                if matches!(source, EmbedError::Transport(_) | EmbedError::Protocol(_)) =>
            {
                CliError::Remote(e.to_string())
            }
            SimtagError::InvalidThreshold(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::InvalidRequest(_) => CliError::Config(e.to_string()),
            _ => CliError::Remote(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sdgmap",
    version,
    about = "Tag publications with Sustainable Development Goals"
)]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed the goal documents and cache the vectors.
    Vectorize,
    /// Score publications against the goal vectors and apply the threshold.
    TagSim,
    /// Ask the chat model for goal assignments; resumes an interrupted run.
    TagLlm,
    /// Intersect similarity and LLM tags.
    Hybrid {
        /// Similarity tag file (default: <output_dir>/sim_tags.jsonl).
        #[arg(long)]
        sim: Option<PathBuf>,
        /// LLM tag file (default: <output_dir>/llm_tags.jsonl).
        #[arg(long)]
        llm: Option<PathBuf>,
        /// Publication count used as the consensus denominator.
        #[arg(long)]
        total: Option<usize>,
    },
    /// Classification report of predicted tags against reference tags.
    Evaluate {
        /// Default: <output_dir>/sim_tags.jsonl.
        #[arg(long)]
        predicted: Option<PathBuf>,
        /// Default: <output_dir>/llm_tags.jsonl.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Leave publications with no predicted goal out of the samples average.
        #[arg(long)]
        skip_empty_predictions: bool,
    },
    /// Print stage counts and the publication type breakdown.
    Report,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&cli.config, env_overrides())?;
    match cli.command {
        Command::Vectorize => commands::cmd_vectorize(&cfg).map(|_| ()),
        Command::TagSim => commands::cmd_tag_sim(&cfg),
        Command::TagLlm => commands::cmd_tag_llm(&cfg),
        Command::Hybrid { sim, llm, total } => {
            let sim = sim.unwrap_or_else(|| cfg.output(commands::SIM_TAGS_FILE));
            let llm = llm.unwrap_or_else(|| cfg.output(commands::LLM_TAGS_FILE));
            commands::cmd_hybrid(&cfg, &sim, &llm, total)
        }
        Command::Evaluate {
            predicted,
            reference,
            skip_empty_predictions,
        } => {
            let predicted = predicted.unwrap_or_else(|| cfg.output(commands::SIM_TAGS_FILE));
            let reference = reference.unwrap_or_else(|| cfg.output(commands::LLM_TAGS_FILE));
            commands::cmd_evaluate(
                &cfg,
                &predicted,
                &reference,
                ReportOptions {
                    skip_empty_predictions,
                },
            )
        }
        Command::Report => commands::cmd_report(&cfg),
    }
}
