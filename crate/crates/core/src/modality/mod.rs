//! Frozen toy language model and the KG adapter.
//!
//! The adapter projects KG vectors into the LM's input embedding space and
//! places them, bracketed by two learned embeddings, in front of the text
//! tokens. Only the adapter is trained; gradients pass through the frozen
//! LM.

mod adapter;
mod lm;
pub mod vocab;

pub use adapter::{
    adapter_examples, adapter_loss, adapter_train, eval_loss, generate, inject, inject_nodes, AdapterConfig,
    AdapterExample, AdapterModel, AdapterNodes, InjectedSequence, Mode, MAX_KG_VECTORS,
};
pub use lm::{
    causal_mask, lm_loss, lm_windows, pretrain_toy_lm, Block, LmConfig, LmNodes, PretrainConfig,
    PretrainTrace, ToyLm,
};
pub use vocab::Vocab;

use alloc::string::String;

use crate::autodiff::AutodiffError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModalityError {
    #[error("invalid config: {0}")]
    Config(&'static str),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("checkpoint: {0}")]
    Checkpoint(&'static str),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("token id {0} outside the vocabulary")]
    TokenOutOfRange(usize),
    #[error("sequence of {len} positions exceeds the context of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("KG vector has dimension {got}, adapter expects {expected}")]
    KgDim { expected: usize, got: usize },
    #[error("language model is not frozen")]
    NotFrozen,
    #[error("language model parameters changed during adapter training")]
    FrozenContract,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
