//! The n-gram embedding layer.
//!
//! For a token `t_i` with padded trailing context, the merged embedding is the
//! average of the base row `E0[t_i]` and one term per `(n, k)` branch: the
//! sub-table row selected by the branch hash, projected back to width `D` in the
//! sub-table form. Amplification is applied to the merged vector afterwards.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{Amplification, NgramConfig, Variant};
use crate::error::{Error, Result};
use crate::hashing::{hash_all_orders, trailing_window, IdSet};
use crate::real::Real;
use crate::tensor_file::{TensorFile, TensorInfo};
use crate::TokenId;

/// Layer-norm epsilon, added to the variance.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Standard deviation of base and sub-table rows at initialization.
pub const INIT_STD: f64 = 0.02;

/// Parameters of one n-gram embedding layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank<T> {
    config: NgramConfig,
    /// `V0 × D`
    pub base: Array2<T>,
    /// One `V_{n,k} × d` table per branch, sorted by `(n, k)`.
    pub sub_tables: Vec<Array2<T>>,
    /// One `D × d` matrix per branch; empty for the averaged form.
    pub projections: Vec<Array2<T>>,
    /// Layer-norm gain and bias; empty unless amplification is `layer_norm`.
    pub norm_gain: Array1<T>,
    pub norm_bias: Array1<T>,
}

/// Gradient buffers shaped like an [`EmbeddingBank`].
pub type BankGrads<T> = EmbeddingBank<T>;

fn rows_usize(v: u64) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::config(format!("table size {v} does not fit usize")))
}

impl<T: Real> EmbeddingBank<T> {
    /// All-zero tables; layer-norm gain is one.
    pub fn zeros(config: &NgramConfig) -> Result<Self> {
        config.validate()?;
        let d = config.sub_dim();
        let dim = config.dim;
        let mut sub_tables = Vec::with_capacity(config.branches());
        for (n, k) in config.branch_keys() {
            sub_tables.push(Array2::zeros((rows_usize(config.vocab(n, k))?, d)));
        }
        let projections = if config.has_projections() {
            (0..config.branches()).map(|_| Array2::zeros((dim, d))).collect()
        } else {
            Vec::new()
        };
        let (norm_gain, norm_bias) = if config.amplification == Amplification::LayerNorm {
            (Array1::ones(dim), Array1::zeros(dim))
        } else {
            (Array1::zeros(0), Array1::zeros(0))
        };
        Ok(Self {
            config: config.clone(),
            base: Array2::zeros((rows_usize(config.base_vocab)?, dim)),
            sub_tables,
            projections,
            norm_gain,
            norm_bias,
        })
    }

    /// Random initialization from `seed`.
    ///
    /// Base and sub-table rows are `N(0, 0.02²)`. Projections are `N(0, 1/d)`, which
    /// gives each projected branch the same expected norm as a base row.
    pub fn init(config: &NgramConfig, seed: u64) -> Result<Self> {
        let mut bank = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = Normal::new(0.0, INIT_STD).expect("valid std");
        let proj = Normal::new(0.0, 1.0 / (config.sub_dim() as f64).sqrt()).expect("valid std");
        bank.base.mapv_inplace(|_| T::from_f64(table.sample(&mut rng)));
        for t in &mut bank.sub_tables {
            t.mapv_inplace(|_| T::from_f64(table.sample(&mut rng)));
        }
        for w in &mut bank.projections {
            w.mapv_inplace(|_| T::from_f64(proj.sample(&mut rng)));
        }
        Ok(bank)
    }

    pub fn config(&self) -> &NgramConfig {
        &self.config
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Real>(&self) -> EmbeddingBank<U> {
        let c = |a: &Array2<T>| a.mapv(|x| U::from_f64(x.to_f64()));
        EmbeddingBank {
            config: self.config.clone(),
            base: c(&self.base),
            sub_tables: self.sub_tables.iter().map(c).collect(),
            projections: self.projections.iter().map(c).collect(),
            norm_gain: self.norm_gain.mapv(|x| U::from_f64(x.to_f64())),
            norm_bias: self.norm_bias.mapv(|x| U::from_f64(x.to_f64())),
        }
    }

    /// Parameter count of the arrays actually allocated.
    pub fn allocated_params(&self) -> ParamCount {
        let base = self.base.len() as u64;
        let sub_tables = self.sub_tables.iter().map(|t| t.len() as u64).sum();
        let projections = self.projections.iter().map(|t| t.len() as u64).sum();
        let norm = (self.norm_gain.len() + self.norm_bias.len()) as u64;
        ParamCount { base, sub_tables, projections, norm, total: base + sub_tables + projections + norm }
    }

    /// Every parameter array, in serialization order.
    pub fn tensors(&self) -> Vec<(String, ArrayView2<'_, T>)> {
        let mut out = vec![("base".to_string(), self.base.view())];
        for ((n, k), t) in self.config.branch_keys().zip(&self.sub_tables) {
            out.push((format!("sub_table.{n}.{k}"), t.view()));
        }
        for ((n, k), w) in self.config.branch_keys().zip(&self.projections) {
            out.push((format!("projection.{n}.{k}"), w.view()));
        }
        if !self.norm_gain.is_empty() {
            out.push(("norm_gain".into(), self.norm_gain.view().insert_axis(Axis(0))));
            out.push(("norm_bias".into(), self.norm_bias.view().insert_axis(Axis(0))));
        }
        out
    }

    /// Flat mutable parameter slices in the same order as [`EmbeddingBank::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![self.base.as_slice_mut().expect("standard layout")];
        for t in self.sub_tables.iter_mut().chain(self.projections.iter_mut()) {
            out.push(t.as_slice_mut().expect("standard layout"));
        }
        if !self.norm_gain.is_empty() {
            out.push(self.norm_gain.as_slice_mut().expect("standard layout"));
            out.push(self.norm_bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    fn check_token(&self, t: TokenId) -> Result<()> {
        if u64::from(t) >= self.config.base_vocab {
            return Err(Error::TokenOutOfRange { token: t.into(), base: self.config.base_vocab });
        }
        Ok(())
    }

    fn check_ids(&self, ids: &IdSet) -> Result<()> {
        if ids.len() != self.sub_tables.len() {
            return Err(Error::shape(format!(
                "id set has {} branches, bank has {}",
                ids.len(),
                self.sub_tables.len()
            )));
        }
        for (&id, table) in ids.as_slice().iter().zip(&self.sub_tables) {
            if id >= table.nrows() as u64 {
                return Err(Error::BucketOutOfRange { bucket: id, rows: table.nrows() });
            }
        }
        Ok(())
    }

    fn check_context(&self, context: &[TokenId]) -> Result<()> {
        if context.len() != self.config.max_order {
            return Err(Error::WindowLength { expected: self.config.max_order, got: context.len() });
        }
        context.iter().try_for_each(|&t| self.check_token(t))
    }

    fn ids_for(&self, context: &[TokenId]) -> Result<IdSet> {
        self.check_context(context)?;
        if self.config.max_order == 1 {
            return Ok(IdSet::from_parts(1, Default::default()));
        }
        hash_all_orders(context, &self.config)
    }

    /// Merged (pre-amplification) embedding from the base token and the branch
    /// bucket ids, without hashing.
    pub fn merged_from_ids(&self, token: TokenId, ids: &IdSet) -> Result<Array1<T>> {
        self.check_token(token)?;
        self.check_ids(ids)?;
        let mut e = self.base.row(token as usize).to_owned();
        let rows = ids.as_slice().iter().zip(&self.sub_tables).map(|(&id, t)| t.row(id as usize));
        if self.config.has_projections() {
            for (row, w) in rows.zip(&self.projections) {
                e += &w.dot(&row);
            }
        } else {
            for row in rows {
                e += &row;
            }
        }
        e /= T::from_usize(self.config.averaging_denominator());
        Ok(e)
    }

    /// Averaged-table embedding of the last token of `context` (length `N`).
    pub fn embed_v1(&self, context: &[TokenId]) -> Result<Array1<T>> {
        if self.config.variant != Variant::AveragedV1 {
            return Err(Error::config("embed_v1 requires the averaged_v1 variant"));
        }
        let ids = self.ids_for(context)?;
        self.merged_from_ids(context[context.len() - 1], &ids)
    }

    /// Sub-table embedding of the last token of `context` (length `N`).
    pub fn embed_v2(&self, context: &[TokenId]) -> Result<Array1<T>> {
        if self.config.variant != Variant::SubtableV2 {
            return Err(Error::config("embed_v2 requires the subtable_v2 variant"));
        }
        let ids = self.ids_for(context)?;
        self.merged_from_ids(context[context.len() - 1], &ids)
    }

    /// Merged embedding for either variant.
    pub fn embed_merged(&self, context: &[TokenId]) -> Result<Array1<T>> {
        let ids = self.ids_for(context)?;
        self.merged_from_ids(context[context.len() - 1], &ids)
    }

    /// Final embedding for one position: merged, then amplified.
    pub fn embed_position(&self, context: &[TokenId]) -> Result<Array1<T>> {
        let merged = self.embed_merged(context)?;
        Ok(self.amplify(merged))
    }

    /// Final embedding from precomputed ids.
    pub fn embed_ids(&self, token: TokenId, ids: &IdSet) -> Result<Array1<T>> {
        let merged = self.merged_from_ids(token, ids)?;
        Ok(self.amplify(merged))
    }

    /// Applies this bank's amplification (with its learned layer-norm parameters).
    pub fn amplify(&self, e: Array1<T>) -> Array1<T> {
        match self.config.amplification {
            Amplification::None => e,
            Amplification::ScaleSqrtD => {
                let scale = T::from_usize(e.len()).sqrt();
                e * scale
            }
            Amplification::LayerNorm => {
                let (xhat, _) = normalize(e.view());
                xhat * &self.norm_gain + &self.norm_bias
            }
        }
    }

    /// Embeds every position of `tokens`, zero-padding before the start.
    pub fn embed_sequence(&self, tokens: &[TokenId]) -> Result<Array2<T>> {
        self.embed_continuation(&[], tokens)
    }

    /// Embeds `tokens` as the continuation of `prefix`: windows reach back into
    /// `prefix`, and only rows for `tokens` are returned.
    pub fn embed_continuation(&self, prefix: &[TokenId], tokens: &[TokenId]) -> Result<Array2<T>> {
        let n = self.config.max_order;
        let keep = prefix.len().saturating_sub(n - 1);
        let mut full = prefix[keep..].to_vec();
        let offset = full.len();
        full.extend_from_slice(tokens);
        let mut out = Array2::zeros((tokens.len(), self.config.dim));
        for i in 0..tokens.len() {
            let window = trailing_window(&full, offset + i, n);
            out.row_mut(i).assign(&self.embed_position(&window)?);
        }
        Ok(out)
    }

    /// Accumulates the gradient of one position's final embedding into `grads`,
    /// given `upstream = dL/de`.
    pub fn backward_position(
        &self,
        context: &[TokenId],
        upstream: ArrayView1<'_, T>,
        grads: &mut BankGrads<T>,
    ) -> Result<()> {
        let dim = self.config.dim;
        if upstream.len() != dim {
            return Err(Error::shape(format!("upstream has {} entries, expected {dim}", upstream.len())));
        }
        if grads.config != self.config {
            return Err(Error::shape("gradient buffer was built for another config"));
        }
        let ids = self.ids_for(context)?;
        let token = context[context.len() - 1];

        let d_merged = match self.config.amplification {
            Amplification::None => upstream.to_owned(),
            Amplification::ScaleSqrtD => upstream.to_owned() * T::from_usize(dim).sqrt(),
            Amplification::LayerNorm => {
                let merged = self.merged_from_ids(token, &ids)?;
                let (xhat, inv_std) = normalize(merged.view());
                grads.norm_gain += &(&upstream * &xhat);
                grads.norm_bias += &upstream;
                let dxhat = &upstream * &self.norm_gain;
                layer_norm_input_grad(dxhat.view(), xhat.view(), inv_std)
            }
        };

        let g = d_merged / T::from_usize(self.config.averaging_denominator());
        let mut base_row = grads.base.row_mut(token as usize);
        base_row += &g;
        for (b, &id) in ids.as_slice().iter().enumerate() {
            let id = id as usize;
            if self.config.has_projections() {
                let w = &self.projections[b];
                let row = self.sub_tables[b].row(id);
                // dW += g row^T
                let outer = g.view().insert_axis(Axis(1)).dot(&row.insert_axis(Axis(0)));
                grads.projections[b] += &outer;
                let mut grow = grads.sub_tables[b].row_mut(id);
                grow += &w.t().dot(&g);
            } else {
                let mut grow = grads.sub_tables[b].row_mut(id);
                grow += &g;
            }
        }
        Ok(())
    }

    /// Backward pass for [`EmbeddingBank::embed_sequence`]; `upstream` is `len × D`.
    pub fn backward_sequence(
        &self,
        tokens: &[TokenId],
        upstream: ArrayView2<'_, T>,
        grads: &mut BankGrads<T>,
    ) -> Result<()> {
        if upstream.nrows() != tokens.len() {
            return Err(Error::shape(format!(
                "upstream has {} rows for {} tokens",
                upstream.nrows(),
                tokens.len()
            )));
        }
        for (i, g) in upstream.outer_iter().enumerate() {
            let window = trailing_window(tokens, i, self.config.max_order);
            self.backward_position(&window, g, grads)?;
        }
        Ok(())
    }
}

/// Header `format` value of a serialized bank.
pub const BANK_FORMAT: &str = "ngram-embedding-bank";

impl EmbeddingBank<f32> {
    pub fn to_tensor_file(&self) -> Result<TensorFile> {
        let header = serde_json::json!({ "format": BANK_FORMAT, "config": self.config });
        let tensors = self
            .tensors()
            .into_iter()
            .map(|(name, t)| {
                let info = TensorInfo { name, shape: t.shape().to_vec() };
                (info, t.iter().copied().collect())
            })
            .collect();
        TensorFile::new(header, tensors)
    }

    /// Rebuilds a bank, checking every tensor name and shape against the
    /// config echoed in the header.
    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        if file.header.get("format").and_then(|v| v.as_str()) != Some(BANK_FORMAT) {
            return Err(Error::Format(format!("not an {BANK_FORMAT} file")));
        }
        let config: NgramConfig = serde_json::from_value(
            file.header.get("config").cloned().ok_or_else(|| Error::Format("missing config".into()))?,
        )?;
        let mut bank = Self::zeros(&config)?;
        let expected: Vec<(String, Vec<usize>)> =
            bank.tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        if expected.len() != file.tensors.len() {
            return Err(Error::shape(format!(
                "bank file has {} tensors, config implies {}",
                file.tensors.len(),
                expected.len()
            )));
        }
        for ((name, shape), (info, _)) in expected.iter().zip(&file.tensors) {
            if *name != info.name || *shape != info.shape {
                return Err(Error::shape(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    info.name, info.shape, name, shape
                )));
            }
        }
        for (dst, (_, src)) in bank.tensors_mut().into_iter().zip(&file.tensors) {
            dst.copy_from_slice(src);
        }
        Ok(bank)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_tensor_file()?.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::read(path)?)
    }
}

/// `(x - mean) / sqrt(var + eps)` and the reciprocal standard deviation.
pub fn normalize<T: Real>(x: ArrayView1<'_, T>) -> (Array1<T>, T) {
    let n = T::from_usize(x.len());
    let mean = x.sum() / n;
    let centered = x.mapv(|v| v - mean);
    let var = centered.mapv(|v| v * v).sum() / n;
    let inv_std = T::one() / (var + T::from_f64(LAYER_NORM_EPS)).sqrt();
    (centered * inv_std, inv_std)
}

/// Input gradient of a layer norm given the gradient w.r.t. the normalized vector.
pub fn layer_norm_input_grad<T: Real>(
    dxhat: ArrayView1<'_, T>,
    xhat: ArrayView1<'_, T>,
    inv_std: T,
) -> Array1<T> {
    let n = T::from_usize(dxhat.len());
    let mean_d = dxhat.sum() / n;
    let mean_dx = (&dxhat * &xhat).sum() / n;
    let mut out = dxhat.to_owned();
    out.zip_mut_with(&xhat, |o, &xh| *o = (*o - mean_d - xh * mean_dx) * inv_std);
    out
}

/// Amplification with unit gain and zero bias.
pub fn amplify<T: Real>(e: ArrayView1<'_, T>, mode: Amplification) -> Array1<T> {
    match mode {
        Amplification::None => e.to_owned(),
        Amplification::ScaleSqrtD => e.to_owned() * T::from_usize(e.len()).sqrt(),
        Amplification::LayerNorm => normalize(e).0,
    }
}

/// Parameter counts of an n-gram embedding layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub base: u64,
    pub sub_tables: u64,
    pub projections: u64,
    /// Layer-norm gain and bias, when present.
    pub norm: u64,
    pub total: u64,
}

impl ParamCount {
    /// Parameters beyond the base table.
    pub fn ngram(&self) -> u64 {
        self.sub_tables + self.projections
    }
}

/// Parameter counts implied by `config`, without allocating.
pub fn param_count(config: &NgramConfig) -> Result<ParamCount> {
    config.validate()?;
    let d = config.sub_dim() as u64;
    let dim = config.dim as u64;
    let base = config.base_vocab * dim;
    let sub_tables = config.sub_vocab.iter().flatten().map(|&v| v * d).sum();
    let projections = if config.has_projections() { config.branches() as u64 * dim * d } else { 0 };
    let norm = if config.amplification == Amplification::LayerNorm { 2 * dim } else { 0 };
    Ok(ParamCount { base, sub_tables, projections, norm, total: base + sub_tables + projections + norm })
}

/// Embedding share of the total parameter budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub embedding_params: u64,
    pub other_params: u64,
    pub fraction: f64,
    pub over_budget: bool,
}

/// Largest embedding share of total parameters that stays within budget.
pub const BUDGET_LIMIT: f64 = 0.5;

impl BudgetReport {
    pub fn from_counts(embedding_params: u64, other_params: u64) -> Self {
        let total = embedding_params as f64 + other_params as f64;
        let fraction = if total > 0.0 { embedding_params as f64 / total } else { 0.0 };
        Self { embedding_params, other_params, fraction, over_budget: fraction > BUDGET_LIMIT }
    }

    pub fn guidance(&self) -> String {
        let verdict = if self.over_budget {
            "over budget: move parameters from embeddings back into experts or dense layers"
        } else {
            "within budget"
        };
        format!(
            "n-gram embeddings hold {:.1}% of parameters ({verdict}); keep this at or below {:.0}%. \
             Reference point: a 68.5B-parameter MoE model with 31.4B embedding parameters sits at 46%.",
            100.0 * self.fraction,
            100.0 * BUDGET_LIMIT
        )
    }
}

/// Budget for a config against `other_params` non-embedding parameters.
pub fn budget_report(config: &NgramConfig, other_params: u64) -> Result<BudgetReport> {
    Ok(BudgetReport::from_counts(param_count(config)?.total, other_params))
}
