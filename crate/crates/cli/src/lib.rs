//! `mechkb` command implementations.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 bad input data,
//! 3 external dependency (embedding service) failure.

mod commands;
mod output;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mechkb_core::embed::EmbedError;
use mechkb_core::eval::EvalError;
use mechkb_core::index::IndexError;
use mechkb_core::ingest::IngestError;
use mechkb_core::schema::RelationClass;

pub use commands::run;

/// Environment variable that takes precedence over `--endpoint`.
pub const ENDPOINT_ENV: &str = "MECHKB_ENDPOINT";

#[derive(Debug, Parser)]
#[command(name = "mechkb", version, about = "Mechanism-relation knowledge base")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn extraction records (JSON Lines, optionally .gz) into canonical relations.
    Ingest(IngestArgs),
    /// Embed the vocabulary of a relations file and write an index directory.
    BuildIndex(BuildArgs),
    /// Run one query against an index directory.
    Search(SearchArgs),
    /// Compute ranking or agreement metrics from a label CSV.
    Eval(EvalArgs),
    /// Serve the HTTP search API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Fallback,
    Remote,
}

#[derive(Debug, Clone, Args)]
pub struct ProviderArgs {
    /// Embedding provider.
    #[arg(long, value_enum, default_value_t = ProviderKind::Fallback)]
    pub provider: ProviderKind,
    /// Embedding service base URL (remote provider); MECHKB_ENDPOINT wins when set.
    #[arg(long)]
    pub endpoint: Option<String>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Input file; repeat for several.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// Output relations file.
    #[arg(long)]
    pub out: PathBuf,
    /// Minimum extraction confidence (inclusive).
    #[arg(long, default_value_t = mechkb_core::ingest::DEFAULT_CONFIDENCE_THRESHOLD)]
    pub threshold: f64,
    /// Exit with status 2 if any record is rejected.
    #[arg(long)]
    pub strict: bool,
    /// Overwrite an existing output file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Relations file written by `ingest`.
    #[arg(long)]
    pub input: PathBuf,
    /// Index directory to create.
    #[arg(long)]
    pub index: PathBuf,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Replace an existing index directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassArg {
    Direct,
    Indirect,
}

impl From<ClassArg> for RelationClass {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::Direct => RelationClass::Direct,
            ClassArg::Indirect => RelationClass::Indirect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Tsv,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Index directory written by `build-index`.
    #[arg(long)]
    pub index: PathBuf,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// First-argument alternative; repeat for several.
    #[arg(long, required = true)]
    pub e1: Vec<String>,
    /// Second-argument alternative; omit for an open-ended query.
    #[arg(long)]
    pub e2: Vec<String>,
    /// Keep only relations of this class.
    #[arg(long, value_enum)]
    pub class: Option<ClassArg>,
    /// Number of results.
    #[arg(long, default_value_t = mechkb_core::schema::DEFAULT_K)]
    pub k: usize,
    /// Match both argument orders.
    #[arg(long)]
    pub symmetric: bool,
    /// Minimum relation confidence.
    #[arg(long, default_value_t = mechkb_core::schema::DEFAULT_MIN_CONFIDENCE)]
    pub threshold: f64,
    /// Output format: pretty JSON or a tab-separated table with a header.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    /// P@K and precision-recall points per query.
    Ranking,
    /// Accuracy, F1, balanced accuracy, MCC and Cohen's kappa.
    Agreement,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(value_enum)]
    pub mode: EvalMode,
    /// Label CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Cutoff for P@K (ranking mode).
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Also write precision-recall points as CSV (ranking mode).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Index directory written by `build-index`.
    #[arg(long)]
    pub index: PathBuf,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Listen address; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
}

/// A failure carrying its process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const EXTERNAL: u8 = 3;

    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: Self::USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: Self::DATA, message: message.into() }
    }

    pub fn external(message: impl Into<String>) -> Self {
        Self { code: Self::EXTERNAL, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::ProviderUnavailable(_) | EmbedError::ProviderProtocolError(_) => {
                Self::external(e.to_string())
            }
            other => Self::usage(other.to_string()),
        }
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::Embed(inner) => inner.into(),
            IndexError::DuplicateRelation(_) | IndexError::Format(_) => Self::data(e.to_string()),
            other => Self::usage(other.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Output(_) => Self::data(e.to_string()),
            other => Self::usage(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::MissingColumn(_) | EvalError::InvalidK { k: 0, .. } => Self::usage(e.to_string()),
            other => Self::data(other.to_string()),
        }
    }
}
