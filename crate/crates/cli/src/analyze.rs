use std::path::PathBuf;

use clap::Args;
use ngram_core::analysis::{advise_vocab_size, analyze_sharded, sweep_grid, write_csv};
use ngram_core::embedding::{budget_report, BudgetReport};
use ngram_core::NgramConfig;
use serde_json::json;

use crate::error::{io_at, CliError, CliResult};
use crate::manifest::RunManifest;
use crate::{print_json, read_corpus, read_json, FormatArg};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Corpus format; guessed from the magic bytes when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// N-gram orders, comma separated.
    #[arg(long = "order", alias = "orders", value_delimiter = ',', required = true)]
    orders: Vec<usize>,
    /// Base vocabulary size.
    #[arg(long)]
    v0: u64,
    /// Table sizes, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "sweep", required_unless_present = "sweep")]
    moduli: Vec<u64>,
    /// `start:end:step`, inclusive of `end` when it lies on the grid.
    #[arg(long)]
    sweep: Option<String>,
    /// Write the CSV here (plus `<out>.manifest.json`) instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Label stored in the manifest; defaults to the corpus file name.
    #[arg(long)]
    corpus_id: Option<String>,
    /// Worker threads for the pass over the corpus.
    #[arg(long, default_value_t = 1)]
    shards: usize,
}

fn parse_sweep(s: &str) -> CliResult<Vec<u64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::Config(format!("sweep must look like start:end:step, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums = parts.iter().map(|p| p.trim().parse::<u64>().map_err(|_| bad())).collect::<CliResult<Vec<_>>>()?;
    Ok(sweep_grid(nums[0], nums[1], nums[2])?)
}

pub fn run_analyze(args: AnalyzeArgs) -> CliResult<()> {
    let mut moduli = match &args.sweep {
        Some(s) => parse_sweep(s)?,
        None => args.moduli.clone(),
    };
    moduli.sort_unstable();
    moduli.dedup();
    let mut orders = args.orders.clone();
    orders.sort_unstable();
    orders.dedup();

    let corpus = read_corpus(&args.corpus, args.format)?;
    let corpus_id = args.corpus_id.clone().unwrap_or_else(|| {
        args.corpus.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let stats = analyze_sharded(&corpus, args.v0, &orders, &moduli, args.shards.max(1))?;
    let reports = stats.reports(&corpus_id);

    match &args.out {
        None => {
            let stdout = std::io::stdout();
            write_csv(stdout.lock(), &reports)?;
        }
        Some(out) => {
            let mut buf = Vec::new();
            write_csv(&mut buf, &reports)?;
            std::fs::write(out, &buf).map_err(io_at(out))?;
            let config = json!({
                "orders": orders,
                "v0": args.v0,
                "moduli": moduli,
                "corpus_id": corpus_id,
            });
            RunManifest::new("analyze", config, None).with_input(&args.corpus)?.write_beside(out)?;
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct AdviseArgs {
    #[arg(long)]
    v0: u64,
    /// Integer multiple of the base vocabulary to start from.
    #[arg(long)]
    multiple: u64,
}

pub fn run_advise(args: AdviseArgs) -> CliResult<()> {
    let size = advise_vocab_size(args.v0, args.multiple)?;
    print_json(&json!({ "v0": args.v0, "multiple": args.multiple, "vocab_size": size }))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    /// N-gram config (JSON) to count embedding parameters from.
    #[arg(long, conflicts_with = "embedding_params", required_unless_present = "embedding_params")]
    config: Option<PathBuf>,
    /// Embedding parameter count, when no config is given.
    #[arg(long)]
    embedding_params: Option<u64>,
    /// Parameters outside the embedding.
    #[arg(long)]
    other_params: u64,
}

pub fn run_budget(args: BudgetArgs) -> CliResult<()> {
    let report = match (&args.config, args.embedding_params) {
        (Some(path), _) => {
            let config: NgramConfig = read_json(path)?;
            budget_report(&config, args.other_params)?
        }
        (None, Some(n)) => BudgetReport::from_counts(n, args.other_params),
        (None, None) => unreachable!("clap requires one of them"),
    };
    let mut value = serde_json::to_value(report).expect("report serializes");
    value["guidance"] = report.guidance().into();
    print_json(&value)?;
    Ok(())
}
