//! Desk-scale byte-level transformer trainer.
//!
//! A single-threaded f64 decoder-only transformer with hand-written forward
//! and backward passes, used to run learning-rate sweeps end to end on one
//! core in minutes. The architecture is fixed: pre-norm blocks with RMSNorm
//! gains, rotary positions on head dimensions, swiglu MLPs, untied input and
//! output embeddings, and a bias on the output head. Width scaling follows
//! the parameter-group plan from [`crate::mup`]: per-group learning rates
//! and init scales, an embedding-output multiplier, a residual-branch
//! multiplier, and attention logits scaled by `1/d_head`.
//!
//! Everything is deterministic: one `ChaCha8Rng` stream seeded from the run
//! seed drives init and batch sampling, and single-threaded f64 arithmetic
//! makes repeated runs bit-identical.

pub mod adam;
pub mod checkpoint;
pub mod coordcheck;
pub mod data;
pub mod gradcheck;
pub mod math;
pub mod model;
pub mod train;

pub use adam::{adamw_step, AdamState, OptimizerConfig, OptimizerKind};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use coordcheck::{coord_check, CoordCheckSettings, Parameterization};
pub use data::{load_corpus, synthetic_corpus, unigram_entropy, Corpus, DEFAULT_TRAIN_FRACTION};
pub use gradcheck::grad_check;
pub use model::{Batch, Model, ModelConfig, ParamTensors, Slot, Workspace};
pub use train::{init_model, train, HistoryPoint, TrainConfig, TrainOutcome, TrainState};

use std::io;
use std::path::PathBuf;

/// Errors from model construction, data loading, and training.
#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("invalid model config: {reason}")]
    InvalidModel { reason: String },
    #[error("invalid train config: {reason}")]
    InvalidTrain { reason: String },
    #[error(transparent)]
    Mup(#[from] crate::mup::MupError),
    #[error(transparent)]
    Schedule(#[from] crate::schedule::ScheduleError),
    #[error("corpus {path}: {source}")]
    CorpusIo {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corpus {path} is empty")]
    CorpusEmpty { path: PathBuf },
    #[error("train_fraction must lie strictly between 0 and 1, got {0}")]
    BadSplitFraction(f64),
    #[error("corpus too small: need at least {needed} bytes, have {have}")]
    CorpusTooSmall { needed: usize, have: usize },
    #[error("training diverged to a non-finite loss at {tokens_seen} tokens")]
    Divergent { tokens_seen: u64 },
    #[error("checkpoint {path}: {reason}")]
    BadCheckpoint { path: PathBuf, reason: String },
    #[error("checkpoint {path}: {source}")]
    CheckpointIo {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}
