//! Hierarchical contrastive recognition head over video and language
//! embeddings, with a two-level label taxonomy, a differentiable compute
//! tape, a synthetic benchmark generator and a training/evaluation harness.

pub mod autodiff;
pub mod config;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod data;
pub mod hemb;
pub mod hier;
pub mod objective;
pub mod taxonomy;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
