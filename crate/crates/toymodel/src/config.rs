use ngram_core::config::NgramConfig;
use ngram_core::gradcheck::Parameters;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::model::Model;

/// Feed-forward flavour of the decoder layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PleMode {
    /// SwiGLU everywhere.
    #[default]
    Off,
    /// Per-layer token tables replace the up projection.
    Ple,
    /// Per-layer n-gram banks replace the up projection.
    Plne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub base_vocab: u64,
    pub max_seq_len: usize,
    /// N-gram embedding for the input layer. `None` means a plain token table.
    #[serde(default)]
    pub ngram: Option<NgramConfig>,
    #[serde(default)]
    pub ple_mode: PleMode,
    /// Layers that get the per-layer FFN when `ple_mode` is not `off`;
    /// `None` means all of them. The rest keep SwiGLU.
    #[serde(default)]
    pub ple_layers: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    /// Plain decoder without n-gram embedding or per-layer tables.
    pub fn new(layers: usize, d_model: usize, heads: usize, ffn_hidden: usize, base_vocab: u64, max_seq_len: usize) -> Self {
        Self {
            layers,
            d_model,
            heads,
            ffn_hidden,
            base_vocab,
            max_seq_len,
            ngram: None,
            ple_mode: PleMode::Off,
            ple_layers: None,
            seed: 0,
        }
    }

    pub fn with_ngram(mut self, ngram: NgramConfig) -> Self {
        self.ngram = Some(ngram);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_ple(mut self, mode: PleMode, layers: Option<Vec<usize>>) -> Self {
        self.ple_mode = mode;
        self.ple_layers = layers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(config_err(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(config_err(format!("d_model {} is not divisible by heads {}", self.d_model, self.heads)));
        }
        if self.base_vocab < 2 || self.base_vocab > u64::from(u32::MAX) {
            return Err(config_err("base_vocab must be in [2, 2^32)"));
        }
        if let Some(ng) = &self.ngram {
            ng.validate()?;
            if ng.base_vocab != self.base_vocab || ng.dim != self.d_model {
                return Err(config_err(format!(
                    "n-gram config has base_vocab {} and dim {}, model has {} and {}",
                    ng.base_vocab, ng.dim, self.base_vocab, self.d_model
                )));
            }
        }
        if self.ple_mode == PleMode::Plne && self.ngram.is_none() {
            return Err(config_err("plne needs an n-gram config to derive the layer banks from"));
        }
        if let Some(layers) = &self.ple_layers {
            if let Some(&bad) = layers.iter().find(|&&l| l >= self.layers) {
                return Err(config_err(format!("ple layer {bad} out of range")));
            }
        }
        Ok(())
    }

    /// Whether layer `l` uses the per-layer FFN.
    pub fn uses_ple(&self, l: usize) -> bool {
        self.ple_mode != PleMode::Off && self.ple_layers.as_ref().is_none_or(|ls| ls.contains(&l))
    }

    /// Number of trainable parameters.
    pub fn param_count(&self) -> Result<usize> {
        Ok(Model::<f32>::zeros(self)?.num_params())
    }
}

/// A config without n-gram embedding whose FFN width is widened until the
/// total parameter count matches `config` to within 1%. PLNE layers become PLE
/// layers, since they need an n-gram config.
pub fn parameter_matched_baseline(config: &ModelConfig) -> Result<ModelConfig> {
    config.validate()?;
    let target = config.param_count()? as f64;
    let mut base = config.clone();
    base.ngram = None;
    if base.ple_mode == PleMode::Plne {
        base.ple_mode = PleMode::Ple;
    }
    // parameters are affine in the FFN width
    base.ffn_hidden = 1;
    let p1 = base.param_count()? as f64;
    base.ffn_hidden = 2;
    let slope = base.param_count()? as f64 - p1;
    let width = ((target - p1) / slope + 1.0).round().max(1.0) as usize;
    base.ffn_hidden = width;
    let got = base.param_count()? as f64;
    if (got - target).abs() / target >= 0.01 {
        return Err(config_err(format!(
            "closest baseline has {got} parameters against {target}; cannot match within 1%"
        )));
    }
    Ok(base)
}
