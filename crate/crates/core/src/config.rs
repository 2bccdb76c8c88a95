use serde::{Deserialize, Serialize};

use crate::analysis::advise_vocab_size;
use crate::error::{Error, Result};
use crate::hashing::HashSpec;

/// Which form of the n-gram embedding layer a bank implements.
#[derive(Debug, Clone, Copy, PartialEq, Hash, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One full-width table per order, all branches averaged with the base row.
    AveragedV1,
    /// `K` narrow sub-tables per order, each projected back to the model width.
    SubtableV2,
}

/// How the merged embedding is boosted before it enters the residual stream.
#[derive(Debug, Clone, Copy, PartialEq, Hash, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Amplification {
    #[default]
    None,
    ScaleSqrtD,
    LayerNorm,
}

/// Shape and hashing parameters of an n-gram embedding layer.
///
/// `sub_vocab[n - 2][k - 1]` is the row count (and hash modulus) of the
/// sub-table for order `n`, sub-table `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramConfig {
    pub max_order: usize,
    pub sub_tables: usize,
    pub base_vocab: u64,
    pub dim: usize,
    pub sub_vocab: Vec<Vec<u64>>,
    pub variant: Variant,
    #[serde(default)]
    pub amplification: Amplification,
}

/// Default maximum n-gram order.
pub const DEFAULT_MAX_ORDER: usize = 4;
/// Default sub-tables per order.
pub const DEFAULT_SUB_TABLES: usize = 2;
/// Default table size, in multiples of the base vocabulary, for the first branch.
pub const DEFAULT_BASE_MULTIPLE: u64 = 30;

impl NgramConfig {
    /// Builds a config whose branch sizes are consecutive half-multiples of the
    /// base vocabulary, starting at `base_multiple`, so no two sub-tables share a
    /// modulus.
    pub fn new(
        variant: Variant,
        max_order: usize,
        sub_tables: usize,
        base_vocab: u64,
        dim: usize,
        base_multiple: u64,
    ) -> Result<Self> {
        if max_order < 2 {
            return Err(Error::config("max_order must be at least 2"));
        }
        if base_vocab < 2 {
            return Err(Error::config("base_vocab must be at least 2"));
        }
        let mut sub_vocab = Vec::with_capacity(max_order - 1);
        let mut multiple = base_multiple;
        for _ in 2..=max_order {
            let mut row = Vec::with_capacity(sub_tables);
            for _ in 0..sub_tables {
                row.push(advise_vocab_size(base_vocab, multiple)?);
                multiple += 1;
            }
            sub_vocab.push(row);
        }
        let config = Self {
            max_order,
            sub_tables,
            base_vocab,
            dim,
            sub_vocab,
            variant,
            amplification: Amplification::None,
        };
        config.validate()?;
        Ok(config)
    }

    /// `N = 4`, `K = 2` sub-table configuration with advised table sizes.
    pub fn with_defaults(base_vocab: u64, dim: usize) -> Result<Self> {
        Self::new(
            Variant::SubtableV2,
            DEFAULT_MAX_ORDER,
            DEFAULT_SUB_TABLES,
            base_vocab,
            dim,
            DEFAULT_BASE_MULTIPLE,
        )
    }

    /// Same sub-table size `vocab` for every branch.
    pub fn uniform(
        variant: Variant,
        max_order: usize,
        sub_tables: usize,
        base_vocab: u64,
        dim: usize,
        vocab: u64,
    ) -> Result<Self> {
        let config = Self {
            max_order,
            sub_tables,
            base_vocab,
            dim,
            sub_vocab: vec![vec![vocab; sub_tables]; max_order.saturating_sub(1)],
            variant,
            amplification: Amplification::None,
        };
        config.validate()?;
        Ok(config)
    }

    /// A degenerate bank with only the base table: no n-gram branches and an
    /// averaging constant of one.
    pub fn base_only(base_vocab: u64, dim: usize) -> Result<Self> {
        let config = Self {
            max_order: 1,
            sub_tables: 1,
            base_vocab,
            dim,
            sub_vocab: Vec::new(),
            variant: Variant::SubtableV2,
            amplification: Amplification::None,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_amplification(mut self, amplification: Amplification) -> Self {
        self.amplification = amplification;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_vocab < 2 {
            return Err(Error::config("base_vocab must be at least 2"));
        }
        if self.base_vocab > u64::from(u32::MAX) + 1 {
            return Err(Error::config("base_vocab does not fit 32-bit token ids"));
        }
        if self.dim == 0 {
            return Err(Error::config("dim must be at least 1"));
        }
        if self.sub_tables == 0 {
            return Err(Error::config("sub_tables must be at least 1"));
        }
        if self.max_order == 0 {
            return Err(Error::config("max_order must be at least 1"));
        }
        if self.max_order == 1 {
            // base-only degenerate bank
            if !self.sub_vocab.is_empty() {
                return Err(Error::config("a base-only config has no sub-table sizes"));
            }
            return Ok(());
        }
        if self.variant == Variant::AveragedV1 && self.sub_tables != 1 {
            return Err(Error::config("averaged_v1 uses exactly one table per order"));
        }
        if self.sub_vocab.len() != self.max_order - 1 {
            return Err(Error::config(format!(
                "sub_vocab has {} orders, expected {}",
                self.sub_vocab.len(),
                self.max_order - 1
            )));
        }
        for (i, row) in self.sub_vocab.iter().enumerate() {
            if row.len() != self.sub_tables {
                return Err(Error::config(format!(
                    "sub_vocab for order {} has {} entries, expected {}",
                    i + 2,
                    row.len(),
                    self.sub_tables
                )));
            }
            if let Some(pos) = row.iter().position(|&v| v == 0) {
                return Err(Error::config(format!(
                    "sub_vocab[{}][{}] must be at least 1",
                    i + 2,
                    pos + 1
                )));
            }
        }
        if self.variant == Variant::SubtableV2 && !self.dim.is_multiple_of(self.branches()) {
            return Err(Error::config(format!(
                "dim {} not divisible by (N-1)*K = {}",
                self.dim,
                self.branches()
            )));
        }
        Ok(())
    }

    /// Soft guidance for configurations outside the well-behaved regime.
    pub fn advisories(&self) -> Vec<String> {
        let mut notes = Vec::new();
        if self.max_order >= 2 && !(3..=5).contains(&self.max_order) {
            notes.push(format!(
                "max_order {} is outside the 3..=5 range that trains most reliably",
                self.max_order
            ));
        }
        if self.variant == Variant::SubtableV2 && self.max_order >= 2 && self.sub_tables < 2 {
            notes.push("sub_tables below 2 leaves the layer sensitive to hash collisions".into());
        }
        for (i, row) in self.sub_vocab.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let rem = v % self.base_vocab;
                let dist = rem.min(self.base_vocab - rem);
                if dist * 10 < self.base_vocab {
                    notes.push(format!(
                        "sub_vocab[{}][{}] = {} is within 10% of a multiple of base_vocab; \
                         expect collision spikes",
                        i + 2,
                        j + 1,
                        v
                    ));
                }
            }
        }
        notes
    }

    /// Number of (order, sub-table) branches.
    pub fn branches(&self) -> usize {
        (self.max_order - 1) * self.sub_tables
    }

    /// Width of one sub-table row.
    pub fn sub_dim(&self) -> usize {
        match self.variant {
            Variant::AveragedV1 => self.dim,
            Variant::SubtableV2 if self.branches() == 0 => self.dim,
            Variant::SubtableV2 => self.dim / self.branches(),
        }
    }

    /// Reciprocal of the averaging weight applied to every branch and the base row.
    pub fn averaging_denominator(&self) -> usize {
        self.branches() + 1
    }

    pub fn vocab(&self, n: usize, k: usize) -> u64 {
        self.sub_vocab[n - 2][k - 1]
    }

    /// Flat index of branch `(n, k)` in sorted `(n, k)` order.
    pub fn branch_index(&self, n: usize, k: usize) -> usize {
        (n - 2) * self.sub_tables + (k - 1)
    }

    /// All `(n, k)` pairs, sorted by order then sub-table.
    pub fn branch_keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (2..=self.max_order).flat_map(move |n| (1..=self.sub_tables).map(move |k| (n, k)))
    }

    pub fn hash_spec(&self, n: usize, k: usize) -> Result<HashSpec> {
        HashSpec::new(n, self.base_vocab, self.vocab(n, k))
    }

    /// Whether `projections` are part of the bank.
    pub fn has_projections(&self) -> bool {
        self.variant == Variant::SubtableV2 && self.branches() > 0
    }
}
