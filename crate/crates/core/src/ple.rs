//! Per-layer embedding FFN blocks.
//!
//! Both variants replace the up-projection of a SwiGLU block with an embedding
//! looked up from the current token: `W_d (SiLU(W_g x) ⊙ e)`. For PLE, `e` is a
//! row of a per-layer `V0 × hidden` table; for PLNE it is the sub-table n-gram
//! embedding of a per-layer bank whose width equals the FFN hidden size.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{Amplification, NgramConfig, Variant};
use crate::embedding::{EmbeddingBank, INIT_STD};
use crate::error::{Error, Result};
use crate::gradcheck::Parameters;
use crate::real::Real;
use crate::TokenId;

/// Per-layer tables are this many times smaller than the global n-gram tables.
pub const PLNE_VOCAB_DIVISOR: u64 = 8;

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

pub fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// Where the per-layer embedding comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PleSource<T> {
    /// `V0 × hidden` table indexed by the current token.
    Table(Array2<T>),
    /// Per-layer n-gram bank with `dim == hidden`.
    Ngram(EmbeddingBank<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PleLayer<T> {
    /// `hidden × d_model`
    pub gate: Array2<T>,
    /// `d_model × hidden`
    pub down: Array2<T>,
    pub source: PleSource<T>,
}

/// Config of a PLNE layer bank derived from the global one: same orders and
/// base vocabulary, width `hidden`, tables [`PLNE_VOCAB_DIVISOR`] times smaller.
pub fn plne_config(global: &NgramConfig, hidden: usize) -> Result<NgramConfig> {
    let config = NgramConfig {
        dim: hidden,
        sub_vocab: global
            .sub_vocab
            .iter()
            .map(|row| row.iter().map(|&v| (v / PLNE_VOCAB_DIVISOR).max(1)).collect())
            .collect(),
        variant: Variant::SubtableV2,
        sub_tables: global.sub_tables,
        amplification: Amplification::None,
        ..global.clone()
    };
    config.validate()?;
    Ok(config)
}

fn normal_matrix<T: Real>(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<T> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || T::from_f64(dist.sample(rng)))
}

impl<T: Real> PleLayer<T> {
    pub fn new_ple(d_model: usize, hidden: usize, base_vocab: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            gate: normal_matrix(hidden, d_model, INIT_STD, &mut rng),
            down: normal_matrix(d_model, hidden, INIT_STD, &mut rng),
            source: PleSource::Table(normal_matrix(base_vocab, hidden, INIT_STD, &mut rng)),
        }
    }

    /// `layer_config.dim` is the FFN hidden width.
    pub fn new_plne(d_model: usize, layer_config: &NgramConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = layer_config.dim;
        let gate = normal_matrix(hidden, d_model, INIT_STD, &mut rng);
        let down = normal_matrix(d_model, hidden, INIT_STD, &mut rng);
        let bank = EmbeddingBank::init(layer_config, seed ^ 0x706c_6e65)?;
        Ok(Self { gate, down, source: PleSource::Ngram(bank) })
    }

    /// Same shapes, all zeros; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let source = match &self.source {
            PleSource::Table(t) => PleSource::Table(Array2::zeros(t.raw_dim())),
            PleSource::Ngram(b) => {
                let mut z = b.clone();
                z.fill_zero();
                PleSource::Ngram(z)
            }
        };
        Self {
            gate: Array2::zeros(self.gate.raw_dim()),
            down: Array2::zeros(self.down.raw_dim()),
            source,
        }
    }

    pub fn d_model(&self) -> usize {
        self.down.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.gate.nrows()
    }

    /// Context length the layer expects: `N` for PLNE, 1 for PLE.
    pub fn context_len(&self) -> usize {
        match &self.source {
            PleSource::Table(_) => 1,
            PleSource::Ngram(b) => b.config().max_order,
        }
    }

    pub fn cast<U: Real>(&self) -> PleLayer<U> {
        let c = |a: &Array2<T>| a.mapv(|x| U::from_f64(x.to_f64()));
        PleLayer {
            gate: c(&self.gate),
            down: c(&self.down),
            source: match &self.source {
                PleSource::Table(t) => PleSource::Table(c(t)),
                PleSource::Ngram(b) => PleSource::Ngram(b.cast()),
            },
        }
    }

    fn check_x(&self, x: ArrayView1<'_, T>) -> Result<()> {
        if x.len() != self.d_model() {
            return Err(Error::shape(format!("input has {} entries, expected {}", x.len(), self.d_model())));
        }
        Ok(())
    }

    /// Per-layer embedding for the last token of `context`.
    fn layer_embedding(&self, context: &[TokenId]) -> Result<Array1<T>> {
        match &self.source {
            PleSource::Table(table) => {
                let &token = context.last().ok_or_else(|| Error::shape("empty context"))?;
                if token as usize >= table.nrows() {
                    return Err(Error::TokenOutOfRange { token: token.into(), base: table.nrows() as u64 });
                }
                Ok(table.row(token as usize).to_owned())
            }
            PleSource::Ngram(bank) => {
                let n = bank.config().max_order;
                if context.len() < n {
                    return Err(Error::WindowLength { expected: n, got: context.len() });
                }
                bank.embed_v2(&context[context.len() - n..])
            }
        }
    }

    fn body(&self, x: ArrayView1<'_, T>, e: &Array1<T>) -> Array1<T> {
        let gated = self.gate.dot(&x).mapv(silu) * e;
        self.down.dot(&gated)
    }

    /// `W_d (SiLU(W_g x) ⊙ E_l[token])`; requires a table source.
    pub fn ffn_ple(&self, x: ArrayView1<'_, T>, token: TokenId) -> Result<Array1<T>> {
        if !matches!(self.source, PleSource::Table(_)) {
            return Err(Error::config("ffn_ple needs a per-layer table"));
        }
        self.check_x(x)?;
        let e = self.layer_embedding(&[token])?;
        Ok(self.body(x, &e))
    }

    /// `W_d (SiLU(W_g x) ⊙ e_l)` with `e_l` from the layer bank; requires an n-gram
    /// source. `context` is the padded window of the last `N` tokens.
    pub fn ffn_plne(&self, x: ArrayView1<'_, T>, context: &[TokenId]) -> Result<Array1<T>> {
        if !matches!(self.source, PleSource::Ngram(_)) {
            return Err(Error::config("ffn_plne needs a per-layer n-gram bank"));
        }
        self.check_x(x)?;
        let e = self.layer_embedding(context)?;
        Ok(self.body(x, &e))
    }

    /// Either variant; `context` must hold at least [`PleLayer::context_len`] tokens.
    pub fn forward(&self, x: ArrayView1<'_, T>, context: &[TokenId]) -> Result<Array1<T>> {
        self.check_x(x)?;
        let e = self.layer_embedding(context)?;
        Ok(self.body(x, &e))
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(
        &self,
        x: ArrayView1<'_, T>,
        context: &[TokenId],
        upstream: ArrayView1<'_, T>,
        grads: &mut PleLayer<T>,
    ) -> Result<Array1<T>> {
        self.check_x(x)?;
        if upstream.len() != self.d_model() {
            return Err(Error::shape("upstream gradient has the wrong length"));
        }
        let e = self.layer_embedding(context)?;
        let pre = self.gate.dot(&x);
        let act = pre.mapv(silu);
        let hidden = &act * &e;

        grads.down += &upstream.insert_axis(Axis(1)).dot(&hidden.view().insert_axis(Axis(0)));
        let dh = self.down.t().dot(&upstream);
        let de = &dh * &act;
        let dpre = &dh * &e * pre.mapv(silu_grad);
        grads.gate += &dpre.view().insert_axis(Axis(1)).dot(&x.insert_axis(Axis(0)));

        match (&self.source, &mut grads.source) {
            (PleSource::Table(_), PleSource::Table(g)) => {
                let token = *context.last().expect("checked by layer_embedding") as usize;
                let mut row = g.row_mut(token);
                row += &de;
            }
            (PleSource::Ngram(bank), PleSource::Ngram(g)) => {
                let n = bank.config().max_order;
                bank.backward_position(&context[context.len() - n..], de.view(), g)?;
            }
            _ => return Err(Error::shape("gradient buffer has a different source kind")),
        }
        Ok(self.gate.t().dot(&dpre))
    }
}

impl<T: Real> Parameters<T> for PleLayer<T> {
    fn param_slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![
            self.gate.as_slice().expect("standard layout"),
            self.down.as_slice().expect("standard layout"),
        ];
        match &self.source {
            PleSource::Table(t) => out.push(t.as_slice().expect("standard layout")),
            PleSource::Ngram(b) => out.extend(b.param_slices()),
        }
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![
            self.gate.as_slice_mut().expect("standard layout"),
            self.down.as_slice_mut().expect("standard layout"),
        ];
        match &mut self.source {
            PleSource::Table(t) => out.push(t.as_slice_mut().expect("standard layout")),
            PleSource::Ngram(b) => out.extend(b.param_slices_mut()),
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn silu_values() {
        assert_eq!(silu(0.0f64), 0.0);
        assert!((silu(1.0f64) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        let h = 1e-6;
        for x in [-3.0f64, -0.2, 0.0, 0.7, 4.0] {
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_input_or_row_gives_zero() {
        let layer = PleLayer::<f64>::new_ple(4, 6, 10, 1);
        assert!(layer.ffn_ple(Array1::zeros(4).view(), 3).unwrap().iter().all(|&v| v == 0.0));
        let mut layer = layer;
        if let PleSource::Table(t) = &mut layer.source {
            t.row_mut(5).fill(0.0);
        }
        let x = array![0.3, -1.0, 2.0, 0.1];
        assert!(layer.ffn_ple(x.view(), 5).unwrap().iter().all(|&v| v == 0.0));
        assert!(layer.ffn_ple(x.view(), 10).is_err());
        assert!(layer.ffn_ple(array![1.0].view(), 1).is_err());
        assert!(layer.ffn_plne(x.view(), &[0, 1]).is_err());
    }

    #[test]
    fn zero_layer_bank_gives_zero() {
        let global = NgramConfig::uniform(Variant::SubtableV2, 3, 2, 20, 8, 40).unwrap();
        let cfg = plne_config(&global, 8).unwrap();
        assert_eq!(cfg.sub_vocab, vec![vec![5, 5], vec![5, 5]]);
        let mut layer = PleLayer::<f64>::new_plne(4, &cfg, 2).unwrap();
        if let PleSource::Ngram(b) = &mut layer.source {
            b.fill_zero();
        }
        let x = array![0.3, -1.0, 2.0, 0.1];
        assert!(layer.ffn_plne(x.view(), &[1, 2, 3]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_pad_context_reduces_to_scaled_ple() {
        let global = NgramConfig::uniform(Variant::SubtableV2, 3, 2, 20, 8, 40).unwrap();
        let cfg = plne_config(&global, 8).unwrap();
        let mut plne = PleLayer::<f64>::new_plne(4, &cfg, 3).unwrap();
        let table = match &mut plne.source {
            PleSource::Ngram(b) => {
                for t in &mut b.sub_tables {
                    t.fill(0.0);
                }
                b.base.clone()
            }
            _ => unreachable!(),
        };
        let ple = PleLayer {
            gate: plne.gate.clone(),
            down: plne.down.clone(),
            source: PleSource::Table(table / 5.0),
        };
        let x = array![0.5, -0.25, 1.5, 2.0];
        let a = plne.ffn_plne(x.view(), &[0, 0, 9]).unwrap();
        let b = ple.ffn_ple(x.view(), 9).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn base_only_plne_equals_ple_exactly() {
        let cfg = NgramConfig::base_only(12, 6).unwrap();
        let plne = PleLayer::<f64>::new_plne(4, &cfg, 4).unwrap();
        let table = match &plne.source {
            PleSource::Ngram(b) => b.base.clone(),
            _ => unreachable!(),
        };
        let ple = PleLayer { gate: plne.gate.clone(), down: plne.down.clone(), source: PleSource::Table(table) };
        let x = array![0.5, -0.25, 1.5, 2.0];
        for t in 0..12 {
            assert_eq!(plne.ffn_plne(x.view(), &[t]).unwrap(), ple.ffn_ple(x.view(), t).unwrap());
        }
    }
}
