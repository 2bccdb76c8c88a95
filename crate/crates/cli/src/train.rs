use std::path::PathBuf;

use clap::Args;
use ngram_toymodel::{Model, ModelConfig, TrainConfig, Trainer};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{io_at, model_at, CliError, CliResult};
use crate::manifest::RunManifest;
use crate::{read_corpus, read_json, FormatArg};

/// Contents of the `--config` file. Command-line flags win over the optional
/// training fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    model: ModelConfig,
    #[serde(default)]
    batch_size: Option<usize>,
    #[serde(default)]
    seq_len: Option<usize>,
    #[serde(default)]
    learning_rate: Option<f64>,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON with a `model` config and optional training fields.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    steps: usize,
    /// Checkpoint output; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    out: PathBuf,
    /// `step,loss` rows, one per optimizer step.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh initialisation.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Seeds window sampling.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn run_train(args: TrainArgs) -> CliResult<()> {
    let file: TrainFile = read_json(&args.config)?;
    let model_config = file.model.clone();
    model_config.validate()?;
    let mut tc = TrainConfig::new(
        args.steps,
        args.batch_size.or(file.batch_size).unwrap_or(8),
        args.seq_len.or(file.seq_len).unwrap_or(model_config.max_seq_len.min(64)),
        args.lr.or(file.learning_rate).unwrap_or(1e-3),
    );
    tc.seed = args.seed.or(file.seed).unwrap_or(0);

    let model = match &args.init {
        Some(path) => {
            let m = Model::<f32>::load(path).map_err(model_at(path))?;
            if m.config() != &model_config {
                return Err(CliError::Config(format!(
                    "checkpoint {} does not match the model config",
                    path.display()
                )));
            }
            m
        }
        None => Model::<f32>::new(&model_config)?,
    };

    let corpus = read_corpus(&args.corpus, args.format)?;
    corpus.check_range(model_config.base_vocab)?;

    let mut trainer = Trainer::new(model, tc.clone())?;
    let losses = trainer.run(&corpus, args.steps)?;

    trainer.model.save(&args.out).map_err(model_at(&args.out))?;
    let mut manifest = RunManifest::new("train", json!({ "model": model_config, "train": tc }), Some(tc.seed))
        .with_input(&args.config)?
        .with_input(&args.corpus)?;
    if let Some(init) = &args.init {
        manifest = manifest.with_input(init)?;
    }
    manifest.write_beside(&args.out)?;

    if let (Some(path), false) = (&args.loss_csv, losses.is_empty()) {
        let mut buf = Vec::new();
        ngram_toymodel::train::write_loss_csv(&mut buf, &losses)?;
        std::fs::write(path, buf).map_err(io_at(path))?;
    }
    if let Some(last) = losses.last() {
        eprintln!("trained {} steps, final loss {last:.6}", losses.len());
    }
    Ok(())
}
