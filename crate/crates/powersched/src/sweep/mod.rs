//! Grid sweeps over learning rate, batch size, token budget, model size,
//! and seed: planning, crash-safe execution, persistence, and the
//! select-optimal / gamma-averaging analysis that feeds the power-law fit.
//!
//! A sweep is described by a [`SweepGrid`]. [`plan_runs`] expands it into the
//! full cartesian product with stable, config-derived run ids. [`execute`]
//! trains every planned run that is not already in the [`RecordStore`],
//! appending one JSON line per finished run, so an interrupted sweep resumes
//! by rerunning the same command. [`analyze`] reduces the records to
//! per-cell optima, per-budget average gamma, and a fitted power law.

mod analyze;
mod execute;
mod store;

pub use analyze::{
    analyze, cell_optima, select_optimal, write_cells_csv, write_gamma_csv, Analysis,
    CellOptimum, GammaCell, GammaRow,
};
pub use execute::{execute, CorpusTrainer, RunMetrics, RunTrainer};
pub use store::{RecordStore, RunRecord, RunStatus};

use std::io;
use std::path::PathBuf;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::powerlaw::FitError;
use crate::schedule::{DecayShape, ScheduleError, ScheduleKind, ScheduleSpec};
use crate::trainer::ModelConfig;

/// Default fraction of each run's token budget spent in the decay phase.
pub const DEFAULT_DECAY_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep grid: {reason}")]
    InvalidGrid { reason: String },
    #[error("parallelism must be at least 1")]
    InvalidParallelism,
    #[error("record store {path}: line {line} is not a valid run record: {source}")]
    CorruptStore {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("record store {path}: {source}")]
    StoreIo {
        path: PathBuf,
        source: io::Error,
    },
    #[error("no completed runs for beta={beta}, tokens={tokens}, model size {model_size}")]
    EmptyCell {
        beta: u64,
        tokens: u64,
        model_size: String,
    },
    #[error("top_k must be at least 1")]
    InvalidTopK,
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// A named model configuration, one point on the model-size axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSize {
    pub label: String,
    pub config: ModelConfig,
}

/// The full description of a sweep: every axis plus the schedule shared by
/// all runs. The swept learning rate is the WSD/cosine peak, or the
/// amplitude `a` for power schedules (whose stable-phase LR is `beta * a *
/// n^b`, so amplitude is the knob playing the role of peak LR).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    /// Strictly increasing learning rates (or power amplitudes).
    pub etas: Vec<f64>,
    /// Strictly increasing batch sizes, in sequences per optimizer step.
    pub betas: Vec<u64>,
    /// Token budgets; distinct, in the order runs should be planned.
    pub token_budgets: Vec<u64>,
    pub model_sizes: Vec<ModelSize>,
    /// Distinct trainer seeds; multiple seeds per cell are averaged by the
    /// analysis.
    pub seeds: Vec<u64>,
    /// `Constant` is rejected: a flat schedule has no budget-shaped curve to
    /// sweep.
    pub schedule_kind: ScheduleKind,
    /// Fraction of each budget spent decaying (WSD and power schedules).
    pub decay_fraction: f64,
    /// Warmup tokens for every run; must fit inside the smallest budget.
    pub warmup_tokens: u64,
    /// Decay-phase shape override; `None` keeps each schedule's default
    /// (linear for WSD, exponential for power). Must be `None` for cosine,
    /// which has no separate decay phase.
    pub decay_shape: Option<DecayShape>,
    /// Power-schedule exponent (power sweeps only).
    pub power_b: f64,
    /// Power-schedule LR ceiling (power sweeps only).
    pub eta_max: f64,
}

impl SweepGrid {
    /// Grid with the default decay fraction, no warmup, and default power
    /// parameters; adjust fields before use if needed.
    pub fn new(
        etas: Vec<f64>,
        betas: Vec<u64>,
        token_budgets: Vec<u64>,
        model_sizes: Vec<ModelSize>,
        seeds: Vec<u64>,
        schedule_kind: ScheduleKind,
    ) -> Self {
        SweepGrid {
            etas,
            betas,
            token_budgets,
            model_sizes,
            seeds,
            schedule_kind,
            decay_fraction: DEFAULT_DECAY_FRACTION,
            warmup_tokens: 0,
            decay_shape: None,
            power_b: crate::schedule::DEFAULT_POWER_B,
            eta_max: crate::schedule::DEFAULT_ETA_MAX,
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let invalid = |reason: String| Err(SweepError::InvalidGrid { reason });
        if self.etas.is_empty()
            || self.betas.is_empty()
            || self.token_budgets.is_empty()
            || self.model_sizes.is_empty()
            || self.seeds.is_empty()
        {
            return invalid("every axis needs at least one entry".into());
        }
        if self.etas[0] <= 0.0 || !self.etas.iter().all(|e| e.is_finite()) {
            return invalid("etas must be positive and finite".into());
        }
        if !self.etas.windows(2).all(|w| w[0] < w[1]) {
            return invalid("etas must be strictly increasing".into());
        }
        if self.betas[0] == 0 {
            return invalid("betas must be at least 1 sequence per step".into());
        }
        if !self.betas.windows(2).all(|w| w[0] < w[1]) {
            return invalid("betas must be strictly increasing".into());
        }
        for (i, &t) in self.token_budgets.iter().enumerate() {
            if t == 0 {
                return invalid("token budgets must be positive".into());
            }
            if self.token_budgets[..i].contains(&t) {
                return invalid(format!("duplicate token budget {t}"));
            }
        }
        for (i, size) in self.model_sizes.iter().enumerate() {
            if size.label.is_empty() {
                return invalid("model size labels must be non-empty".into());
            }
            if self.model_sizes[..i].iter().any(|s| s.label == size.label) {
                return invalid(format!("duplicate model size label {:?}", size.label));
            }
            size.config
                .validate()
                .map_err(|e| SweepError::InvalidGrid {
                    reason: format!("model size {:?}: {e}", size.label),
                })?;
        }
        for (i, &s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(&s) {
                return invalid(format!("duplicate seed {s}"));
            }
        }
        if !(self.decay_fraction > 0.0 && self.decay_fraction < 1.0) {
            return invalid(format!(
                "decay_fraction must be in (0, 1), got {}",
                self.decay_fraction
            ));
        }
        match self.schedule_kind {
            ScheduleKind::Constant => {
                return invalid("constant schedules have no swept peak; use wsd, power, or cosine".into());
            }
            ScheduleKind::Cosine => {
                if self.decay_shape.is_some() {
                    return invalid("cosine schedules have no separate decay phase to shape".into());
                }
            }
            ScheduleKind::Wsd | ScheduleKind::Power => {}
        }
        // Every (eta, beta, budget) combination must yield a valid schedule;
        // checking the extremes of each axis covers the monotone failure
        // modes (warmup/decay overflowing the smallest budget, bad LRs), but
        // budgets are checked exhaustively since they are few.
        for &tokens in &self.token_budgets {
            for &eta in [self.etas[0], *self.etas.last().unwrap()].iter() {
                for &beta in [self.betas[0], *self.betas.last().unwrap()].iter() {
                    self.schedule_for(eta, beta, tokens).validate()?;
                }
            }
        }
        Ok(())
    }

    /// The schedule for one run. `eta` is the peak LR (WSD, cosine) or the
    /// power amplitude; `beta` only matters for power schedules, whose
    /// stable phase is batch-size-aware.
    pub fn schedule_for(&self, eta: f64, beta: u64, tokens: u64) -> ScheduleSpec {
        let decay = (tokens as f64 * self.decay_fraction).round() as u64;
        let spec = match self.schedule_kind {
            ScheduleKind::Constant => ScheduleSpec::constant(eta),
            ScheduleKind::Cosine => ScheduleSpec::cosine(eta, 0.0, self.warmup_tokens, tokens),
            ScheduleKind::Wsd => ScheduleSpec::wsd(eta, self.warmup_tokens, decay, tokens),
            ScheduleKind::Power => {
                ScheduleSpec::power(beta, eta, self.power_b, self.eta_max, self.warmup_tokens)
                    .with_total_tokens(tokens)
                    .with_decay_tokens(decay)
            }
        };
        match self.decay_shape {
            Some(shape) => spec.with_decay_shape(shape),
            None => spec,
        }
    }
}

/// One planned cell of the sweep, before training.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    /// First 16 hex digits of a SHA-256 over every config field; identical
    /// configs always collide, any changed field never does.
    pub run_id: String,
    pub eta: f64,
    pub beta: u64,
    pub tokens: u64,
    pub model_size: String,
    /// Index into the grid's `model_sizes`.
    pub model_index: usize,
    pub seed: u64,
}

fn run_id(grid: &SweepGrid, eta: f64, beta: u64, tokens: u64, size: &ModelSize, seed: u64) -> String {
    let m = &size.config;
    // {:?} on f64 prints the shortest exact round-trip form, so equal values
    // always hash equally.
    let canonical = format!(
        "eta={eta:?}|beta={beta}|tokens={tokens}|size={label}|layers={}|d={}|heads={}|dh={}|mlp={}|vocab={}|seq={}|seed={seed}|kind={kind}|decay_fraction={df:?}|warmup={warmup}|shape={shape:?}|power_b={pb:?}|eta_max={em:?}",
        m.n_layers,
        m.d_model,
        m.n_heads,
        m.d_head,
        m.mlp_hidden,
        m.vocab_size,
        m.sequence_length,
        label = size.label,
        kind = grid.schedule_kind.as_str(),
        df = grid.decay_fraction,
        warmup = grid.warmup_tokens,
        shape = grid.decay_shape,
        pb = grid.power_b,
        em = grid.eta_max,
    );
    hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
}

/// Expand the grid into the full cartesian product, ordered lexicographically
/// by (eta, beta, budget, size, seed) with each axis in its list order.
pub fn plan_runs(grid: &SweepGrid) -> Result<Vec<PlannedRun>, SweepError> {
    grid.validate()?;
    let mut runs = Vec::with_capacity(
        grid.etas.len()
            * grid.betas.len()
            * grid.token_budgets.len()
            * grid.model_sizes.len()
            * grid.seeds.len(),
    );
    for &eta in &grid.etas {
        for &beta in &grid.betas {
            for &tokens in &grid.token_budgets {
                for (model_index, size) in grid.model_sizes.iter().enumerate() {
                    for &seed in &grid.seeds {
                        runs.push(PlannedRun {
                            run_id: run_id(grid, eta, beta, tokens, size, seed),
                            eta,
                            beta,
                            tokens,
                            model_size: size.label.clone(),
                            model_index,
                            seed,
                        });
                    }
                }
            }
        }
    }
    Ok(runs)
}
