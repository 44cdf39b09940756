//! Tensor and transformer machinery with exact reverse-mode gradients.
//!
//! Gradients are stored in a zeroed clone of the module they belong to, so
//! the gradient of a [`Linear`] is itself a `Linear`. [`Parameterized`] walks
//! both in the same order, which is what the optimizer, gradient checker and
//! checkpoint writer rely on.

mod gradcheck;
mod layers;
mod mlp;
mod optim;
mod params;
mod pool;
mod tensor;
mod transformer;

pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{gelu, gelu_grad, LayerNorm, Linear};
pub use mlp::{sigmoid, Mlp, MlpCache, MlpSpec};
pub use optim::{cosine_lr, Adam, AdamConfig};
pub(crate) use params::join;
pub use params::{accumulate, param_count, zeros_like, ParamView, ParamViewMut, Parameterized};
pub use pool::{pool, pool_backward, PoolMode};
pub use tensor::Tensor2;
pub use transformer::{positional_row, Attention, Block, StackCache, StackConfig, TransformerStack};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("empty sequence")]
    EmptySequence,
    #[error("layer range [{from}, {to}) invalid for a stack of {total} layers")]
    InvalidLayerRange { from: usize, to: usize, total: usize },
    #[error("token id {token} outside vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
