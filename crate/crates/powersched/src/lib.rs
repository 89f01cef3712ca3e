//! Learning-rate scheduling and hyperparameter transfer for language-model
//! pretraining, exercised end to end on a desk-scale trainable transformer.
//!
//! The crate is organized around one workflow:
//!
//! 1. [`schedule`] evaluates token-indexed learning-rate schedules (constant,
//!    cosine, WSD, and the batch-size-aware power schedule).
//! 2. [`mup`] derives per-parameter-group learning rates, init scales, and
//!    forward multipliers so tuned hyperparameters transfer across widths.
//! 3. [`sweep`] plans and executes (eta, batch, budget, size) grids against a
//!    trainer, persisting one JSON record per run into a resumable store.
//! 4. [`powerlaw`] turns per-cell optima into gamma = eta_opt/beta
//!    observations and fits gamma = a * T^b, which then predicts the optimal
//!    learning rate for unseen budgets as eta = beta * a * T^b.
//! 5. [`trainer`] is a self-contained f64 decoder-only transformer with a
//!    hand-written backward pass, small enough to run whole sweeps on one
//!    CPU core in minutes.
//!
//! All schedule and fit math is deterministic double precision; training runs
//! are bit-reproducible given a seed.

pub mod mup;
pub mod powerlaw;
pub mod schedule;
pub mod sweep;
pub mod trainer;

pub use mup::{attention_logit_scale, derive_plan, MupConfig, ParamGroup, ParamGroupPlan, ParamGroupPlans};
pub use powerlaw::{fit_power_law, gamma_of, predict_opt_lr, FitResult, SweepPoint};
pub use schedule::{clamp_crossover, power_lr, DecayShape, ScheduleError, ScheduleKind, ScheduleSpec};
pub use sweep::{analyze, execute, plan_runs, ModelSize, RecordStore, RunRecord, RunStatus, SweepError, SweepGrid};
pub use trainer::{ModelConfig, TrainConfig, TrainState};
