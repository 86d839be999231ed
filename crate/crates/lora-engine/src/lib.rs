//! A small decoder-only language model with from-scratch low-rank adapters.
//!
//! The forward decomposition is `h = W0·x + (alpha/r)·B·A·x` with the base
//! matrix frozen: only the `A`/`B` factors train. The crate provides the
//! adapter math in generic float precision (f64 for verification paths),
//! a byte-level tokenizer, a toy transformer trained by hand-written
//! backprop with Adam, greedy value decoding, parameter accounting, and a
//! versioned checkpoint container with standalone adapter files.

mod adapter;
mod checkpoint;
mod model;
mod params;
mod tensor;
mod tokenizer;
mod train;

pub use adapter::{grad_check, init_adapter, LoraAdapter, LoraLinear};
pub use checkpoint::{base_hash, AdapterCheckpoint, Checkpoint, TensorData};
pub use model::{LoraSettings, TargetModule, ToyDecoder, ToyDecoderConfig};
pub use params::{count_trainable, ParamCount};
pub use tokenizer::{ByteTokenizer, BOS_TOKEN, EOS_TOKEN, PAD_TOKEN};
pub use train::{eval_loss, nll_loss, predict_value, pretrain, train, TrainConfig, TrainOutcome, TrainScope};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoraError {
    #[error("rank {rank} violates 1 <= r <= min(d, k)/2 for d={d}, k={k}")]
    RankBound { rank: usize, d: usize, k: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("model dim {d} not divisible by {n_heads} heads")]
    HeadSplit { d: usize, n_heads: usize },

    #[error("loss mask selects no positions")]
    EmptyMask,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("prompt is {got} tokens; context length is {context_len}")]
    PromptTooLong { got: usize, context_len: usize },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("adapter checkpoint was extracted from base `{expected}`, refusing to attach to `{got}`")]
    BaseMismatch { expected: String, got: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
