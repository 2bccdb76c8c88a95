//! Residual-stream norms: how large each sub-module's output is next to the
//! identity branch it is added to.

use ngram_core::{Real, TokenId};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{mean_row_norm, Model};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JunctionNorms {
    pub module_output_l2: f64,
    pub identity_branch_l2: f64,
    /// `module_output_l2 / identity_branch_l2`, or 0 when the identity norm is 0.
    pub ratio: f64,
}

impl JunctionNorms {
    fn new(module_output_l2: f64, identity_branch_l2: f64) -> Self {
        let ratio = if identity_branch_l2 > 0.0 { module_output_l2 / identity_branch_l2 } else { 0.0 };
        Self { module_output_l2, identity_branch_l2, ratio }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerNorms {
    pub layer: usize,
    pub attention: JunctionNorms,
    pub ffn: JunctionNorms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormDiagnostic {
    pub layers: Vec<LayerNorms>,
}

impl NormDiagnostic {
    /// Attention junction of the first layer.
    pub fn first_layer_ratio(&self) -> f64 {
        self.layers.first().map_or(0.0, |l| l.attention.ratio)
    }
}

/// Token-averaged L2 norms at every residual junction over `batch`.
pub fn norm_diagnostic<T: Real>(model: &Model<T>, batch: &[Vec<TokenId>]) -> Result<NormDiagnostic> {
    let layers = model.config().layers;
    let mut sums = vec![[0.0f64; 4]; layers];
    let mut tokens = 0usize;
    for seq in batch {
        let trace = model.forward_trace(seq)?;
        let n = seq.len() as f64;
        for (acc, t) in sums.iter_mut().zip(&trace.layers) {
            acc[0] += mean_row_norm(t.attn_out.view()) * n;
            acc[1] += mean_row_norm(t.input.view()) * n;
            acc[2] += mean_row_norm(t.ffn_out.view()) * n;
            acc[3] += mean_row_norm(t.mid.view()) * n;
        }
        tokens += seq.len();
    }
    let denom = tokens.max(1) as f64;
    Ok(NormDiagnostic {
        layers: sums
            .iter()
            .enumerate()
            .map(|(layer, a)| LayerNorms {
                layer,
                attention: JunctionNorms::new(a[0] / denom, a[1] / denom),
                ffn: JunctionNorms::new(a[2] / denom, a[3] / denom),
            })
            .collect(),
    })
}
