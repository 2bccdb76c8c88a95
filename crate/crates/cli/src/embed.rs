use std::path::PathBuf;

use clap::{Args, ValueEnum};
use ngram_core::corpus::{Corpus, CorpusFormat};
use ngram_core::synth::{repeated_sequence, FiveGramLanguage, ZipfMarkov};
use ngram_core::{EmbeddingBank, NgramConfig};
use serde_json::json;

use crate::error::{core_at, io_at, CliError, CliResult};
use crate::manifest::{sidecar, write_json, RunManifest};
use crate::{read_corpus_allow_empty, read_json, FormatArg};

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Bank file written by `init-bank` or extracted from training.
    #[arg(long)]
    bank: PathBuf,
    /// N-gram config (JSON) the bank must have been built with.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Matrix output; the sidecar goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

pub fn run_embed(args: EmbedArgs) -> CliResult<()> {
    let config: NgramConfig = read_json(&args.config)?;
    let bank = EmbeddingBank::<f32>::load(&args.bank).map_err(core_at(&args.bank))?;
    if bank.config() != &config {
        return Err(CliError::Config(format!(
            "bank {} was built with a different config than {}",
            args.bank.display(),
            args.config.display()
        )));
    }
    let corpus = read_corpus_allow_empty(&args.corpus, args.format)?;
    corpus.check_range(config.base_vocab)?;

    let rows = corpus.num_tokens();
    let mut bytes = Vec::with_capacity(rows * config.dim * 4);
    for seq in &corpus.sequences {
        let m = bank.embed_sequence(seq)?;
        for v in m.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(&args.out, &bytes).map_err(io_at(&args.out))?;

    let manifest = RunManifest::new("embed", serde_json::to_value(&config).expect("config serializes"), None)
        .with_input(&args.bank)?
        .with_input(&args.config)?
        .with_input(&args.corpus)?;
    let lengths: Vec<usize> = corpus.sequences.iter().map(Vec::len).collect();
    let meta = json!({
        "rows": rows,
        "cols": config.dim,
        "dtype": "float32",
        "byte_order": "little",
        "layout": "row_major",
        "sequence_lengths": lengths,
        "manifest": manifest.to_json(),
    });
    write_json(&sidecar(&args.out, "json"), &meta)
}

#[derive(Debug, Args)]
pub struct InitBankArgs {
    /// N-gram config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// All-zero tables instead of random ones.
    #[arg(long)]
    zero: bool,
    #[arg(long)]
    out: PathBuf,
}

pub fn run_init_bank(args: InitBankArgs) -> CliResult<()> {
    let config: NgramConfig = read_json(&args.config)?;
    let bank = if args.zero { EmbeddingBank::<f32>::zeros(&config)? } else { EmbeddingBank::init(&config, args.seed)? };
    bank.save(&args.out).map_err(core_at(&args.out))?;
    let manifest = RunManifest::new("init-bank", json!({ "ngram": config, "zero": args.zero }), Some(args.seed))
        .with_input(&args.config)?;
    manifest.write_beside(&args.out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CorpusKind {
    /// The 10^6-token Zipf/Markov analysis corpus over 1000 ids.
    Bundled,
    /// Deterministic 5-gram toy language over 64 ids.
    FiveGram,
    /// One random sequence repeated.
    Repeated,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long, value_enum)]
    kind: CorpusKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    /// Overrides the kind's default seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 64)]
    sequences: usize,
    #[arg(long, default_value_t = 65)]
    seq_len: usize,
    /// Token range for `repeated`.
    #[arg(long, default_value_t = 64)]
    alphabet: u32,
}

pub fn run_gen_corpus(args: GenCorpusArgs) -> CliResult<()> {
    let corpus: Corpus = match args.kind {
        CorpusKind::Bundled => {
            let mut spec = ZipfMarkov::bundled();
            if let Some(s) = args.seed {
                spec.seed = s;
            }
            spec.generate()
        }
        CorpusKind::FiveGram => {
            let seed = args.seed.unwrap_or(0);
            FiveGramLanguage::new(seed).generate(args.sequences, args.seq_len, seed.wrapping_add(1))
        }
        CorpusKind::Repeated => {
            if args.alphabet < 2 || args.seq_len == 0 {
                return Err(CliError::Config("repeated corpus needs alphabet >= 2 and seq_len >= 1".into()));
            }
            repeated_sequence(args.seq_len, args.alphabet, args.sequences, args.seed.unwrap_or(0))
        }
    };
    corpus.write(&args.out, CorpusFormat::from(args.format)).map_err(core_at(&args.out))
}
