//! Polynomial rolling hash over token windows.
//!
//! A window `(t_{i-n+1}, ..., t_i)` maps to `(Σ_j t_{i-j} · V0^j) mod V_n`, where
//! the most recent token carries weight `V0^0`. Evaluation uses Horner's rule with
//! a reduction after every multiply-add, so no power of `V0` is ever formed at full
//! width and any order is safe.

use smallvec::SmallVec;

use crate::config::NgramConfig;
use crate::error::{Error, Result};
use crate::{TokenId, PAD};

/// Order, base vocabulary and modulus of one hash function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HashSpec {
    order: usize,
    base: u64,
    modulus: u64,
}

impl HashSpec {
    pub fn new(order: usize, base: u64, modulus: u64) -> Result<Self> {
        if order < 2 {
            return Err(Error::config(format!("hash order must be at least 2, got {order}")));
        }
        if base < 2 {
            return Err(Error::config(format!("hash base must be at least 2, got {base}")));
        }
        if modulus < 1 {
            return Err(Error::config("hash modulus must be at least 1"));
        }
        Ok(Self { order, base, modulus })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn with_modulus(self, modulus: u64) -> Result<Self> {
        Self::new(self.order, self.base, modulus)
    }
}

#[inline]
fn check_token(t: TokenId, base: u64) -> Result<()> {
    if u64::from(t) >= base {
        return Err(Error::TokenOutOfRange { token: t.into(), base });
    }
    Ok(())
}

/// Hashes `window` (oldest token first) into `[0, spec.modulus())`.
pub fn rolling_hash(window: &[TokenId], spec: &HashSpec) -> Result<u64> {
    if window.len() != spec.order {
        return Err(Error::WindowLength { expected: spec.order, got: window.len() });
    }
    for &t in window {
        check_token(t, spec.base)?;
    }
    Ok(horner(window, spec.base, spec.modulus))
}

/// Unchecked kernel; callers validate tokens.
#[inline]
pub(crate) fn horner(window: &[TokenId], base: u64, modulus: u64) -> u64 {
    let m = u128::from(modulus);
    let b = u128::from(base) % m;
    let mut acc: u128 = 0;
    for &t in window {
        acc = (acc * b + u128::from(t) % m) % m;
    }
    acc as u64
}

/// Copies the `len` tokens ending at `pos` (inclusive), padding with
/// [`PAD`] before the sequence start.
pub fn trailing_window(tokens: &[TokenId], pos: usize, len: usize) -> SmallVec<[TokenId; 8]> {
    let mut out = SmallVec::with_capacity(len);
    let first = pos as isize + 1 - len as isize;
    for j in first..=pos as isize {
        out.push(if j < 0 { PAD } else { tokens[j as usize] });
    }
    out
}

/// Bucket ids for every `(n, k)` branch of a config, flattened in sorted
/// `(n, k)` order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IdSet {
    sub_tables: usize,
    ids: SmallVec<[u64; 16]>,
}

impl IdSet {
    pub fn get(&self, n: usize, k: usize) -> u64 {
        self.ids[(n - 2) * self.sub_tables + (k - 1)]
    }

    /// Ids in sorted `(n, k)` order.
    pub fn as_slice(&self) -> &[u64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub(crate) fn from_parts(sub_tables: usize, ids: SmallVec<[u64; 16]>) -> Self {
        Self { sub_tables, ids }
    }
}

/// Hashes the trailing `n` tokens of `context` for every branch `(n, k)`.
///
/// `context` is the padded window of the last `N` tokens, most recent last. The
/// `k` index only changes the modulus.
pub fn hash_all_orders(context: &[TokenId], config: &NgramConfig) -> Result<IdSet> {
    if context.len() != config.max_order {
        return Err(Error::WindowLength { expected: config.max_order, got: context.len() });
    }
    for &t in context {
        check_token(t, config.base_vocab)?;
    }
    let mut ids = SmallVec::with_capacity(config.branches());
    let len = context.len();
    for (n, k) in config.branch_keys() {
        ids.push(horner(&context[len - n..], config.base_vocab, config.vocab(n, k)));
    }
    Ok(IdSet::from_parts(config.sub_tables, ids))
}

/// Id sets for every position of a sequence, with zero padding at the start.
pub fn hash_sequence(tokens: &[TokenId], config: &NgramConfig) -> Result<Vec<IdSet>> {
    (0..tokens.len())
        .map(|i| hash_all_orders(&trailing_window(tokens, i, config.max_order), config))
        .collect()
}
