//! Adam training on random windows of a corpus.

use std::io::Write;

use ngram_core::corpus::Corpus;
use ngram_core::gradcheck::Parameters;
use ngram_core::TokenId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, ModelError, Result};
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Input tokens per window; each window also carries one target past the end.
    pub seq_len: usize,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Seeds window sampling; model init uses the model seed.
    #[serde(default)]
    pub seed: u64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.95
}
fn default_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    pub fn new(steps: usize, batch_size: usize, seq_len: usize, learning_rate: f64) -> Self {
        Self {
            steps,
            batch_size,
            seq_len,
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            seed: 0,
        }
    }
}

/// Plain Adam with bias correction and a fixed learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: &TrainConfig, shapes: &[usize]) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f32]>, grads: Vec<&[f32]>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step = (self.lr / c1) as f32;
        let c2 = c2 as f32;
        let eps = self.eps as f32;
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= step * m[i] / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Owns a model during optimization.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model<f32>,
    grads: Model<f32>,
    adam: Adam,
    rng: ChaCha8Rng,
    config: TrainConfig,
    step: usize,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig) -> Result<Self> {
        if config.batch_size == 0 || config.seq_len == 0 {
            return Err(config_err("batch_size and seq_len must be at least 1"));
        }
        if config.seq_len > model.config().max_seq_len {
            return Err(config_err(format!(
                "seq_len {} exceeds the model's max_seq_len {}",
                config.seq_len,
                model.config().max_seq_len
            )));
        }
        if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
            return Err(config_err("learning_rate must be finite and non-negative"));
        }
        let grads = model.zeros_like();
        let shapes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
        let adam = Adam::new(&config, &shapes);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { model, grads, adam, rng, config, step: 0 })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Random `(inputs, targets)` windows.
    pub fn sample_batch(&mut self, corpus: &Corpus) -> Result<Vec<(Vec<TokenId>, Vec<TokenId>)>> {
        let usable: Vec<&Vec<TokenId>> = corpus.sequences.iter().filter(|s| s.len() >= 2).collect();
        if usable.is_empty() {
            return Err(ngram_core::Error::EmptyCorpus.into());
        }
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let seq = usable[self.rng.random_range(0..usable.len())];
            let w = (self.config.seq_len + 1).min(seq.len());
            let start = self.rng.random_range(0..=seq.len() - w);
            let window = &seq[start..start + w];
            batch.push((window[..w - 1].to_vec(), window[1..].to_vec()));
        }
        Ok(batch)
    }

    /// One optimizer step; returns the mean token loss of the batch.
    pub fn step(&mut self, corpus: &Corpus) -> Result<f64> {
        let batch = self.sample_batch(corpus)?;
        let count: usize = batch.iter().map(|(_, t)| t.len()).sum();
        let scale = 1.0 / count as f32;
        self.grads.fill_zero();
        let mut total = 0.0;
        for (inputs, targets) in &batch {
            total += self.model.accumulate_gradients(inputs, targets, scale, &mut self.grads)?;
        }
        let loss = total / count as f64;
        self.step += 1;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { step: self.step, loss });
        }
        self.adam.step(self.model.param_slices_mut(), self.grads.param_slices());
        Ok(loss)
    }

    /// Runs `steps` more steps and returns their losses.
    pub fn run(&mut self, corpus: &Corpus, steps: usize) -> Result<Vec<f64>> {
        (0..steps).map(|_| self.step(corpus)).collect()
    }
}

/// Trains `model` in place for `config.steps` steps; returns per-step losses.
pub fn train(model: &mut Model<f32>, corpus: &Corpus, config: &TrainConfig) -> Result<Vec<f64>> {
    let mut trainer = Trainer::new(model.clone(), config.clone())?;
    let losses = trainer.run(corpus, config.steps)?;
    *model = trainer.model;
    Ok(losses)
}

/// Mean of the last `window` losses.
pub fn smoothed_final(losses: &[f64], window: usize) -> f64 {
    let tail = &losses[losses.len().saturating_sub(window.max(1))..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Writes the loss trace as `step,loss` rows, steps counted from 1.
pub fn write_loss_csv<W: Write>(mut w: W, losses: &[f64]) -> std::io::Result<()> {
    writeln!(w, "step,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, l)?;
    }
    Ok(())
}
