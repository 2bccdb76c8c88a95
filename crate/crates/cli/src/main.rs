//! `ngram`: collision analysis, table sizing, embedding export, toy-model
//! training and cache benchmarks.
//!
//! Exit codes: 0 ok, 2 I/O or invalid scenario, 3 parse, 4 config or bank
//! mismatch, 5 numeric failure.

mod analyze;
mod bench;
mod embed;
mod error;
mod manifest;
mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ngram_core::corpus::{Corpus, CorpusFormat};
use serde::de::DeserializeOwned;

use crate::error::{io_at, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "ngram", version, about = "Hashed n-gram embedding tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Text,
    Binary,
}

impl From<FormatArg> for CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => CorpusFormat::Text,
            FormatArg::Binary => CorpusFormat::Binary,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Hit rate and collision counts per (order, modulus), as CSV.
    Analyze(analyze::AnalyzeArgs),
    /// Suggest a table size half-way between two multiples of the base vocabulary.
    Advise(analyze::AdviseArgs),
    /// Embedding share of the parameter budget.
    Budget(analyze::BudgetArgs),
    /// Write merged embeddings for every corpus position as a raw f32 matrix.
    Embed(embed::EmbedArgs),
    /// Create a randomly initialised (or zero) embedding bank.
    InitBank(embed::InitBankArgs),
    /// Write a synthetic corpus.
    GenCorpus(embed::GenCorpusArgs),
    /// Train the toy decoder and write a checkpoint.
    Train(train::TrainArgs),
    /// Replay a speculative-decoding scenario and report cache counters.
    BenchCache(bench::BenchArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => analyze::run_analyze(a),
        Command::Advise(a) => analyze::run_advise(a),
        Command::Budget(a) => analyze::run_budget(a),
        Command::Embed(a) => embed::run_embed(a),
        Command::InitBank(a) => embed::run_init_bank(a),
        Command::GenCorpus(a) => embed::run_gen_corpus(a),
        Command::Train(a) => train::run_train(a),
        Command::BenchCache(a) => bench::run_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Reads a corpus, keeping the path in I/O errors.
pub fn read_corpus(path: &Path, format: Option<FormatArg>) -> CliResult<Corpus> {
    let bytes = std::fs::read(path).map_err(io_at(path))?;
    let format = format.map(CorpusFormat::from).unwrap_or_else(|| Corpus::detect_format(&bytes));
    Corpus::parse(&bytes, format).map_err(|e| match e {
        ngram_core::Error::Parse { location, message } => {
            CliError::Parse(format!("{}: {location}: {message}", path.display()))
        }
        other => other.into(),
    })
}

/// Like [`read_corpus`] but an empty file is an empty corpus.
pub fn read_corpus_allow_empty(path: &Path, format: Option<FormatArg>) -> CliResult<Corpus> {
    match read_corpus(path, format) {
        Err(CliError::Parse(m)) if m == ngram_core::Error::EmptyCorpus.to_string() => Ok(Corpus::default()),
        other => other,
    }
}

/// Reads a JSON file. Unreadable is exit 2, malformed is exit 3.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

pub fn print_json(value: &serde_json::Value) -> CliResult<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

pub fn path_string(p: &Path) -> String {
    p.display().to_string()
}

pub fn opt_path(p: &Option<PathBuf>) -> serde_json::Value {
    p.as_deref().map(path_string).into()
}
