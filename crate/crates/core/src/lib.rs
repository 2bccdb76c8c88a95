//! Vocabulary-free n-gram embeddings for language models.
//!
//! Token windows are mapped to table buckets with an overflow-safe polynomial
//! rolling hash ([`hashing`]). The buckets index either one full-width table per
//! order (the averaged form) or `K` narrow sub-tables per order whose rows are
//! projected back to the model width ([`embedding`]). Around that core sit corpus
//! diagnostics for picking table sizes ([`analysis`]), per-layer FFN variants
//! ([`ple`]) and an incremental cache for draft/verify decoding ([`cache`]).

pub mod analysis;
pub mod cache;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod hashing;
pub mod ple;
pub mod real;
pub mod synth;
pub mod tensor_file;

pub use config::{Amplification, NgramConfig, Variant};
pub use embedding::EmbeddingBank;
pub use error::{Error, Result};
pub use hashing::{HashSpec, IdSet};
pub use real::Real;

/// Index into the base vocabulary. Id 0 doubles as the padding token before a
/// sequence start.
pub type TokenId = u32;

/// Token id used for positions before the start of a sequence.
pub const PAD: TokenId = 0;
