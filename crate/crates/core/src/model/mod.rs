//! Toy-scale BERT-style encoder: configuration, parameters, forward and
//! backward passes, AdamW with warmup/decay, pretraining loops and gradient
//! checking.

mod encoder;
mod gradcheck;
mod optim;
mod params;
pub mod real;
mod train;

use alloc::string::String;
use alloc::vec::Vec;

pub use encoder::{InputBatch, Losses, Model, PretrainBatch, PretrainOutput};
pub use gradcheck::{grad_check, tiny_config, GradCheckConfig, GradCheckReport, ParamCheck};
pub use optim::{AdamConfig, OptimizerState};
pub use params::{init_params, tensor_specs, Layout, ParamSet, Tensor};
pub use train::{
    continue_pretrain, loss_trend, mlm_accuracy, pretrain, Checkpoint, ContinueOptions, LossRecord, Phase,
    PhasePlan, PretrainOptions, PretrainRun, Pretrainer, TrainSchedule, TrainVariant,
};

use crate::tokenizer::TokenizerError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("parameter tensor `{0}` is missing")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite values in {stage}{}", step.map(|s| alloc::format!(" at step {s}")).unwrap_or_default())]
    NonFinite { stage: String, step: Option<u64> },
    #[error("sequence length {len} exceeds {max} positions")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token or segment id {0} out of range")]
    TokenOutOfRange(u32),
    #[error("malformed batch: {0}")]
    MalformedBatch(&'static str),
    #[error("model has no classification head")]
    NoClassifier,
    #[error("a classifier needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("checkpoint vocabulary fingerprint does not match the tokenizer vocabulary")]
    VocabMismatch,
    #[error("phase {0} has training steps but produced no instances")]
    NoInstances(usize),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

/// Encoder dimensions and initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub type_vocab: usize,
    pub dropout: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults: 2 layers, hidden 64, 2 heads, FFN 256, 128 positions.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 2,
            hidden: 64,
            heads: 2,
            ffn: 256,
            vocab_size,
            max_positions: 128,
            type_vocab: 2,
            dropout: 0.1,
            init_std: 0.02,
            seed: 0,
        }
    }

    /// BERT-Base dimensions, for reference.
    pub fn base(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 12,
            hidden: 768,
            heads: 12,
            ffn: 3072,
            max_positions: 512,
            ..ModelConfig::toy(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.ffn == 0 {
            return fail("layers, hidden, heads and ffn must be positive");
        }
        if self.hidden % self.heads != 0 {
            return fail("hidden must be divisible by heads");
        }
        if self.vocab_size <= crate::vocab::NUM_SPECIALS {
            return fail("vocab_size must exceed the special tokens");
        }
        if self.max_positions == 0 {
            return fail("max_positions must be positive");
        }
        if self.type_vocab != 2 {
            return fail("type_vocab must be 2");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return fail("init_std must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
