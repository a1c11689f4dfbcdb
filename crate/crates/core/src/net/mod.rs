//! Decoder-only transformer with hand-written reverse-mode gradients.
//!
//! Pre-norm GPT-2 blocks (causal multi-head attention and a GELU MLP),
//! learned absolute position embeddings and an untied output head.

mod model;
mod params;
mod tensor;

use thiserror::Error;

pub use model::{forward, forward_train, layernorm_row, softmax, IncrementalDecoder, Tape};
pub use params::{LayerParams, ModelConfig, ModelParams};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("context overflow: {len} tokens exceeds context length {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}
