//! Decoder definition, forward pass with a saved trace, and backprop.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use ngram_core::config::NgramConfig;
use ngram_core::embedding::{layer_norm_input_grad, normalize, EmbeddingBank, INIT_STD};
use ngram_core::gradcheck::Parameters;
use ngram_core::hashing::trailing_window;
use ngram_core::ple::{plne_config, silu, silu_grad, PleLayer};
use ngram_core::{Real, TokenId};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{ModelConfig, PleMode};
use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Array1<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    /// All `d_model × d_model`, applied as `x · W`.
    pub wq: Array2<T>,
    pub wk: Array2<T>,
    pub wv: Array2<T>,
    pub wo: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwiGlu<T> {
    /// `d_model × hidden`
    pub gate: Array2<T>,
    /// `d_model × hidden`
    pub up: Array2<T>,
    /// `hidden × d_model`
    pub down: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ffn<T> {
    SwiGlu(SwiGlu<T>),
    PerLayer(PleLayer<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub norm1: LayerNorm<T>,
    pub attn: Attention<T>,
    pub norm2: LayerNorm<T>,
    pub ffn: Ffn<T>,
}

/// Pre-norm decoder: embedding plus learned positions, `layers` blocks of
/// causal attention and FFN, final norm, untied vocabulary head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    config: ModelConfig,
    /// Token embedding. Without n-gram embedding this is a base-only bank.
    pub embedding: EmbeddingBank<T>,
    /// `max_seq_len × d_model`, zero at init.
    pub positions: Array2<T>,
    pub blocks: Vec<Block<T>>,
    pub final_norm: LayerNorm<T>,
    /// `d_model × V0`
    pub head: Array2<T>,
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub x0: Array2<T>,
    pub layers: Vec<LayerTrace<T>>,
    final_hat: Array2<T>,
    final_inv: Array1<T>,
    pub hidden: Array2<T>,
    pub logits: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct LayerTrace<T> {
    /// Residual stream entering the layer.
    pub input: Array2<T>,
    a_hat: Array2<T>,
    a_inv: Array1<T>,
    a: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    mixed: Array2<T>,
    pub attn_out: Array2<T>,
    /// Residual stream after attention.
    pub mid: Array2<T>,
    b_hat: Array2<T>,
    b_inv: Array1<T>,
    b: Array2<T>,
    // swiglu pre-activations, empty for per-layer FFNs
    g: Array2<T>,
    u: Array2<T>,
    pub ffn_out: Array2<T>,
}

fn normal<T: Real>(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<T> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || T::from_f64(dist.sample(rng)))
}

fn layer_norm_forward<T: Real>(x: &Array2<T>, p: &LayerNorm<T>) -> (Array2<T>, Array2<T>, Array1<T>) {
    let mut hat = Array2::zeros(x.raw_dim());
    let mut inv = Array1::zeros(x.nrows());
    for (i, row) in x.outer_iter().enumerate() {
        let (h, s) = normalize(row);
        hat.row_mut(i).assign(&h);
        inv[i] = s;
    }
    let out = &hat * &p.gain + &p.bias;
    (out, hat, inv)
}

fn layer_norm_backward<T: Real>(
    dy: &Array2<T>,
    hat: &Array2<T>,
    inv: &Array1<T>,
    p: &LayerNorm<T>,
    g: &mut LayerNorm<T>,
) -> Array2<T> {
    g.gain += &(dy * hat).sum_axis(Axis(0));
    g.bias += &dy.sum_axis(Axis(0));
    let dhat = dy * &p.gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        dx.row_mut(i).assign(&layer_norm_input_grad(dhat.row(i), hat.row(i), inv[i]));
    }
    dx
}

fn softmax_rows<T: Real>(s: &mut Array2<T>) {
    for mut row in s.outer_iter_mut() {
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn outer_add<T: Real>(acc: &mut Array2<T>, a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) {
    // acc += aᵀ b
    ndarray::linalg::general_mat_mul(T::one(), &a.t(), &b, T::one(), acc);
}

impl<T: Real> Model<T> {
    /// Randomly initialized model: weights N(0, 0.02²), unit norm gains,
    /// zero positions.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let v0 = config.base_vocab as usize;
        let embedding = EmbeddingBank::init(&embedding_config(config)?, rng.next_u64())?;
        let plne = plne_layer_config(config)?;
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let attn = Attention {
                wq: normal(d, d, INIT_STD, &mut rng),
                wk: normal(d, d, INIT_STD, &mut rng),
                wv: normal(d, d, INIT_STD, &mut rng),
                wo: normal(d, d, INIT_STD, &mut rng),
            };
            let ffn = if config.uses_ple(l) {
                let seed = rng.next_u64();
                Ffn::PerLayer(match &plne {
                    Some(lc) => PleLayer::new_plne(d, lc, seed)?,
                    None => PleLayer::new_ple(d, config.ffn_hidden, v0, seed),
                })
            } else {
                Ffn::SwiGlu(SwiGlu {
                    gate: normal(d, config.ffn_hidden, INIT_STD, &mut rng),
                    up: normal(d, config.ffn_hidden, INIT_STD, &mut rng),
                    down: normal(config.ffn_hidden, d, INIT_STD, &mut rng),
                })
            };
            blocks.push(Block { norm1: unit_norm(d), attn, norm2: unit_norm(d), ffn });
        }
        Ok(Self {
            config: config.clone(),
            embedding,
            positions: Array2::zeros((config.max_seq_len, d)),
            blocks,
            final_norm: unit_norm(d),
            head: normal(d, v0, INIT_STD, &mut rng),
        })
    }

    /// Every parameter zero, including norm gains.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let mut m = Self::new(config)?;
        m.fill_zero();
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fill_zero(&mut self) {
        for s in self.param_slices_mut() {
            s.fill(T::zero());
        }
    }

    /// Same shapes, all zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill_zero();
        z
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut out = Model::<U>::new(&self.config).expect("config already validated");
        for (dst, src) in out.param_slices_mut().into_iter().zip(self.param_slices()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = U::from_f64(s.to_f64());
            }
        }
        out
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.len() > self.config.max_seq_len {
            return Err(config_err(format!(
                "sequence of {} tokens exceeds max_seq_len {}",
                tokens.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| u64::from(t) >= self.config.base_vocab) {
            return Err(ngram_core::Error::TokenOutOfRange { token: t.into(), base: self.config.base_vocab }.into());
        }
        Ok(())
    }

    /// Logits, one row per position.
    pub fn forward(&self, tokens: &[TokenId]) -> Result<Array2<T>> {
        Ok(self.forward_trace(tokens)?.logits)
    }

    pub fn forward_trace(&self, tokens: &[TokenId]) -> Result<Trace<T>> {
        self.check_tokens(tokens)?;
        let len = tokens.len();
        let x0 = self.embedding.embed_sequence(tokens)? + &self.positions.slice(s![..len, ..]);
        let mut x = x0.clone();
        let mut layers = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let t = self.block_forward(block, x, tokens)?;
            x = &t.mid + &t.ffn_out;
            layers.push(t);
        }
        let (hidden, final_hat, final_inv) = layer_norm_forward(&x, &self.final_norm);
        let logits = hidden.dot(&self.head);
        Ok(Trace { x0, layers, final_hat, final_inv, hidden, logits })
    }

    fn block_forward(&self, block: &Block<T>, input: Array2<T>, tokens: &[TokenId]) -> Result<LayerTrace<T>> {
        let len = input.nrows();
        let heads = self.config.heads;
        let dh = self.config.d_model / heads;
        let scale = T::one() / T::from_usize(dh).sqrt();

        let (a, a_hat, a_inv) = layer_norm_forward(&input, &block.norm1);
        let q = a.dot(&block.attn.wq);
        let k = a.dot(&block.attn.wk);
        let v = a.dot(&block.attn.wv);
        let mut mixed = Array2::zeros((len, self.config.d_model));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for i in 0..len {
                for j in i + 1..len {
                    scores[[i, j]] = T::neg_infinity();
                }
            }
            softmax_rows(&mut scores);
            mixed.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let attn_out = mixed.dot(&block.attn.wo);
        let mid = &input + &attn_out;

        let (b, b_hat, b_inv) = layer_norm_forward(&mid, &block.norm2);
        let (g, u, ffn_out) = match &block.ffn {
            Ffn::SwiGlu(f) => {
                let g = b.dot(&f.gate);
                let u = b.dot(&f.up);
                let z = g.mapv(silu) * &u;
                let out = z.dot(&f.down);
                (g, u, out)
            }
            Ffn::PerLayer(p) => {
                let n = p.context_len();
                let mut out = Array2::zeros((len, self.config.d_model));
                for i in 0..len {
                    out.row_mut(i).assign(&p.forward(b.row(i), &trailing_window(tokens, i, n))?);
                }
                (Array2::zeros((0, 0)), Array2::zeros((0, 0)), out)
            }
        };
        Ok(LayerTrace {
            input,
            a_hat,
            a_inv,
            a,
            q,
            k,
            v,
            probs,
            mixed,
            attn_out,
            mid,
            b_hat,
            b_inv,
            b,
            g,
            u,
            ffn_out,
        })
    }

    /// Mean next-token cross-entropy of `inputs` predicting `targets`.
    pub fn loss(&self, inputs: &[TokenId], targets: &[TokenId]) -> Result<f64> {
        let logits = self.forward(inputs)?;
        let (sum, _) = cross_entropy(&logits, targets, T::one())?;
        Ok(sum / targets.len().max(1) as f64)
    }

    /// Adds `scale · dL/dθ` into `grads`, where `L` is the summed cross-entropy
    /// over positions. Returns the summed loss.
    pub fn accumulate_gradients(
        &self,
        inputs: &[TokenId],
        targets: &[TokenId],
        scale: T,
        grads: &mut Model<T>,
    ) -> Result<f64> {
        let trace = self.forward_trace(inputs)?;
        let (loss, dlogits) = cross_entropy(&trace.logits, targets, scale)?;
        self.backward(inputs, &trace, &dlogits, grads)?;
        Ok(loss)
    }

    /// Backprop of `dlogits` through a saved trace.
    pub fn backward(&self, tokens: &[TokenId], trace: &Trace<T>, dlogits: &Array2<T>, grads: &mut Model<T>) -> Result<()> {
        outer_add(&mut grads.head, trace.hidden.view(), dlogits.view());
        let dy = dlogits.dot(&self.head.t());
        let mut dx = layer_norm_backward(&dy, &trace.final_hat, &trace.final_inv, &self.final_norm, &mut grads.final_norm);
        for ((block, t), g) in self.blocks.iter().zip(&trace.layers).zip(grads.blocks.iter_mut()).rev() {
            dx = self.block_backward(block, t, tokens, dx, g)?;
        }
        let len = tokens.len();
        let mut dpos = grads.positions.slice_mut(s![..len, ..]);
        dpos += &dx;
        self.embedding.backward_sequence(tokens, dx.view(), &mut grads.embedding)?;
        Ok(())
    }

    fn block_backward(
        &self,
        block: &Block<T>,
        t: &LayerTrace<T>,
        tokens: &[TokenId],
        dout: Array2<T>,
        g: &mut Block<T>,
    ) -> Result<Array2<T>> {
        let len = dout.nrows();
        let heads = self.config.heads;
        let dh = self.config.d_model / heads;
        let scale = T::one() / T::from_usize(dh).sqrt();

        // FFN branch
        let db = match (&block.ffn, &mut g.ffn) {
            (Ffn::SwiGlu(f), Ffn::SwiGlu(gf)) => {
                let act = t.g.mapv(silu);
                let z = &act * &t.u;
                outer_add(&mut gf.down, z.view(), dout.view());
                let dz = dout.dot(&f.down.t());
                let du = &dz * &act;
                let mut dg = &dz * &t.u;
                Zip::from(&mut dg).and(&t.g).for_each(|d, &x| *d *= silu_grad(x));
                outer_add(&mut gf.gate, t.b.view(), dg.view());
                outer_add(&mut gf.up, t.b.view(), du.view());
                dg.dot(&f.gate.t()) + du.dot(&f.up.t())
            }
            (Ffn::PerLayer(p), Ffn::PerLayer(gp)) => {
                let n = p.context_len();
                let mut db = Array2::zeros(dout.raw_dim());
                for i in 0..len {
                    let ctx = trailing_window(tokens, i, n);
                    db.row_mut(i).assign(&p.backward(t.b.row(i), &ctx, dout.row(i), gp)?);
                }
                db
            }
            _ => return Err(config_err("gradient buffer layout differs from the model")),
        };
        let dmid = dout + layer_norm_backward(&db, &t.b_hat, &t.b_inv, &block.norm2, &mut g.norm2);

        // attention branch
        outer_add(&mut g.attn.wo, t.mixed.view(), dmid.view());
        let dmixed = dmid.dot(&block.attn.wo.t());
        let mut dq = Array2::zeros((len, self.config.d_model));
        let mut dk = Array2::zeros((len, self.config.d_model));
        let mut dv = Array2::zeros((len, self.config.d_model));
        for (h, p) in t.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dmix_h = dmixed.slice(cols);
            let dp = dmix_h.dot(&t.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dmix_h));
            let row_dot = (&dp * p).sum_axis(Axis(1));
            let mut ds = dp;
            Zip::from(ds.rows_mut()).and(p.rows()).and(&row_dot).for_each(|mut d, pr, &rd| {
                Zip::from(&mut d).and(&pr).for_each(|d, &pv| *d = pv * (*d - rd) * scale);
            });
            dq.slice_mut(cols).assign(&ds.dot(&t.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&t.q.slice(cols)));
        }
        outer_add(&mut g.attn.wq, t.a.view(), dq.view());
        outer_add(&mut g.attn.wk, t.a.view(), dk.view());
        outer_add(&mut g.attn.wv, t.a.view(), dv.view());
        let da = dq.dot(&block.attn.wq.t()) + dk.dot(&block.attn.wk.t()) + dv.dot(&block.attn.wv.t());
        Ok(dmid + layer_norm_backward(&da, &t.a_hat, &t.a_inv, &block.norm1, &mut g.norm1))
    }

    /// `(name, shape)` of every parameter array, in [`Parameters`] order.
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (name, t) in self.embedding.tensors() {
            out.push((format!("embedding.{name}"), t.shape().to_vec()));
        }
        out.push(("positions".into(), self.positions.shape().to_vec()));
        let d = self.config.d_model;
        for (l, b) in self.blocks.iter().enumerate() {
            let p = format!("layer.{l}");
            out.push((format!("{p}.norm1.gain"), vec![d]));
            out.push((format!("{p}.norm1.bias"), vec![d]));
            for (n, w) in [("wq", &b.attn.wq), ("wk", &b.attn.wk), ("wv", &b.attn.wv), ("wo", &b.attn.wo)] {
                out.push((format!("{p}.attn.{n}"), w.shape().to_vec()));
            }
            out.push((format!("{p}.norm2.gain"), vec![d]));
            out.push((format!("{p}.norm2.bias"), vec![d]));
            match &b.ffn {
                Ffn::SwiGlu(f) => {
                    for (n, w) in [("gate", &f.gate), ("up", &f.up), ("down", &f.down)] {
                        out.push((format!("{p}.ffn.{n}"), w.shape().to_vec()));
                    }
                }
                Ffn::PerLayer(pl) => {
                    out.push((format!("{p}.ple.gate"), pl.gate.shape().to_vec()));
                    out.push((format!("{p}.ple.down"), pl.down.shape().to_vec()));
                    match &pl.source {
                        ngram_core::ple::PleSource::Table(t) => {
                            out.push((format!("{p}.ple.table"), t.shape().to_vec()))
                        }
                        ngram_core::ple::PleSource::Ngram(bank) => {
                            for (name, t) in bank.tensors() {
                                out.push((format!("{p}.ple.{name}"), t.shape().to_vec()));
                            }
                        }
                    }
                }
            }
        }
        out.push(("final_norm.gain".into(), vec![d]));
        out.push(("final_norm.bias".into(), vec![d]));
        out.push(("head".into(), self.head.shape().to_vec()));
        out
    }
}

fn unit_norm<T: Real>(d: usize) -> LayerNorm<T> {
    LayerNorm { gain: Array1::ones(d), bias: Array1::zeros(d) }
}

/// The input embedding config: the n-gram config, or a base-only table.
pub fn embedding_config(config: &ModelConfig) -> Result<NgramConfig> {
    match &config.ngram {
        Some(c) => Ok(c.clone()),
        None => Ok(NgramConfig::base_only(config.base_vocab, config.d_model)?),
    }
}

fn plne_layer_config(config: &ModelConfig) -> Result<Option<NgramConfig>> {
    match (config.ple_mode, &config.ngram) {
        (PleMode::Plne, Some(global)) => Ok(Some(plne_config(global, config.ffn_hidden)?)),
        _ => Ok(None),
    }
}

/// Summed cross-entropy and `scale · dL/dlogits`.
pub fn cross_entropy<T: Real>(logits: &Array2<T>, targets: &[TokenId], scale: T) -> Result<(f64, Array2<T>)> {
    if logits.nrows() != targets.len() {
        return Err(config_err(format!("{} logit rows for {} targets", logits.nrows(), targets.len())));
    }
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (mut row, &t) in grad.outer_iter_mut().zip(targets) {
        let t = t as usize;
        if t >= row.len() {
            return Err(ngram_core::Error::TokenOutOfRange { token: t as u64, base: row.len() as u64 }.into());
        }
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = row.mapv(|v| (v - max).exp()).sum().ln() + max;
        loss += (lse - row[t]).to_f64();
        row.mapv_inplace(|v| (v - lse).exp() * scale);
        row[t] -= scale;
    }
    Ok((loss, grad))
}

/// Mean L2 norm of the rows of `x`.
pub fn mean_row_norm<T: Real>(x: ArrayView2<'_, T>) -> f64 {
    if x.nrows() == 0 {
        return 0.0;
    }
    x.outer_iter().map(|r: ArrayView1<'_, T>| r.iter().map(|&v| Real::to_f64(v).powi(2)).sum::<f64>().sqrt()).sum::<f64>()
        / x.nrows() as f64
}

impl<T: Real> Parameters<T> for Model<T> {
    fn param_slices(&self) -> Vec<&[T]> {
        fn sl<T>(a: &Array2<T>) -> &[T] {
            a.as_slice().expect("standard layout")
        }
        fn v1<T>(a: &Array1<T>) -> &[T] {
            a.as_slice().expect("standard layout")
        }
        let mut out = self.embedding.param_slices();
        out.push(sl(&self.positions));
        for b in &self.blocks {
            out.extend([v1(&b.norm1.gain), v1(&b.norm1.bias)]);
            out.extend([sl(&b.attn.wq), sl(&b.attn.wk), sl(&b.attn.wv), sl(&b.attn.wo)]);
            out.extend([v1(&b.norm2.gain), v1(&b.norm2.bias)]);
            match &b.ffn {
                Ffn::SwiGlu(f) => out.extend([sl(&f.gate), sl(&f.up), sl(&f.down)]),
                Ffn::PerLayer(p) => out.extend(p.param_slices()),
            }
        }
        out.extend([v1(&self.final_norm.gain), v1(&self.final_norm.bias), sl(&self.head)]);
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.embedding.param_slices_mut();
        out.push(self.positions.as_slice_mut().expect("standard layout"));
        for b in &mut self.blocks {
            out.push(b.norm1.gain.as_slice_mut().expect("standard layout"));
            out.push(b.norm1.bias.as_slice_mut().expect("standard layout"));
            for w in [&mut b.attn.wq, &mut b.attn.wk, &mut b.attn.wv, &mut b.attn.wo] {
                out.push(w.as_slice_mut().expect("standard layout"));
            }
            out.push(b.norm2.gain.as_slice_mut().expect("standard layout"));
            out.push(b.norm2.bias.as_slice_mut().expect("standard layout"));
            match &mut b.ffn {
                Ffn::SwiGlu(f) => {
                    for w in [&mut f.gate, &mut f.up, &mut f.down] {
                        out.push(w.as_slice_mut().expect("standard layout"));
                    }
                }
                Ffn::PerLayer(p) => out.extend(p.param_slices_mut()),
            }
        }
        out.push(self.final_norm.gain.as_slice_mut().expect("standard layout"));
        out.push(self.final_norm.bias.as_slice_mut().expect("standard layout"));
        out.push(self.head.as_slice_mut().expect("standard layout"));
        out
    }
}
