//! A small pre-norm decoder hosting n-gram embeddings, per-layer embeddings
//! and amplification, with hand-written backprop, an Adam trainer and the
//! residual-norm diagnostic.

pub mod checkpoint;
pub mod config;
pub mod diagnostic;
pub mod error;
pub mod model;
pub mod train;

pub use config::{parameter_matched_baseline, ModelConfig, PleMode};
pub use diagnostic::{norm_diagnostic, NormDiagnostic};
pub use error::{ModelError, Result};
pub use model::Model;
pub use train::{train, TrainConfig, Trainer};
