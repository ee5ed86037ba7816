//! Miniature attention sequence-to-sequence trainer.
//!
//! A tanh RNN encoder reads token embeddings. Each encoder output is
//! concatenated with a learned embedding of the utterance's augmentation id
//! to form the attention memory. A tanh RNN decoder with additive attention
//! predicts feature frames and a stop gate. Everything runs on the small
//! reverse-mode tape in [`tape`], in double precision.

mod checkpoint;
mod corpus;
mod model;
mod study;
pub mod tape;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use corpus::{gen_synthetic_corpus, AugProfile, SyntheticTask, ToyCorpus, ToyExample, MAX_TOKENS};
pub use model::{grad_check, param_shapes, ForwardOutput, Inference, ToyConfig, ToyModel, PARAM_NAMES};
pub use study::{run_study, write_study_outputs, ArmRun, Study, StudyConfig, StudyResult, StudyRow};
pub use train::{
    clip_global_norm, corpus_loss, evaluate_heldout, sequence_rmse, train, Adam, HeldoutReport, TrainReport,
};

use thiserror::Error;

use crate::evalkit::EvalError;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("invalid toy config: {0}")]
    BadConfig(String),
    #[error("invalid corpus request: {0}")]
    BadRange(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("aug id {aug_id} out of range for {n_aug_ids} ids")]
    AugIdOutOfRange { aug_id: usize, n_aug_ids: usize },
    #[error("graph consistency: {0}")]
    GraphConsistency(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
