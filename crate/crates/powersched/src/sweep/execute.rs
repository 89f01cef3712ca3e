//! Sweep execution: run every planned cell that the store does not already
//! have, in parallel, recording each outcome exactly once.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use crate::mup::MupConfig;
use crate::schedule::ScheduleSpec;
use crate::trainer::{init_model, train, Corpus, ModelConfig, OptimizerConfig, TrainConfig};

use super::store::{RecordStore, RunRecord, RunStatus};
use super::{PlannedRun, SweepError, SweepGrid};

/// Metrics a trainer reports for one completed run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub final_train_loss: f64,
    pub eval_ppl: f64,
}

/// One sweep cell's trainer. Implementations must be callable from worker
/// threads; a failed run reports a human-readable reason and the sweep moves
/// on.
pub trait RunTrainer: Sync {
    fn run(
        &self,
        run: &PlannedRun,
        model: &ModelConfig,
        schedule: &ScheduleSpec,
    ) -> Result<RunMetrics, String>;
}

/// The production [`RunTrainer`]: trains the byte-level transformer on a
/// shared corpus. Width-dependent µP fields and the peak learning rate are
/// filled in per run from the planned cell; the remaining base fields come
/// from `mup_base`.
pub struct CorpusTrainer<'a> {
    pub corpus: &'a Corpus,
    /// Template for per-run µP configs: `d_base`, `m_emb`, `m_res`, and
    /// `init_std` are taken from here; `d_model`, `d_head`, and `base_lr`
    /// are overridden per run.
    pub mup_base: MupConfig,
    pub optimizer: OptimizerConfig,
    pub eval_tokens: u64,
}

impl RunTrainer for CorpusTrainer<'_> {
    fn run(
        &self,
        run: &PlannedRun,
        model: &ModelConfig,
        schedule: &ScheduleSpec,
    ) -> Result<RunMetrics, String> {
        let mup = MupConfig {
            d_model: model.d_model,
            d_head: model.d_head,
            base_lr: run.eta,
            ..self.mup_base.clone()
        };
        let cfg = TrainConfig {
            batch_size: run.beta,
            total_tokens: run.tokens,
            schedule: schedule.clone(),
            mup,
            optimizer: self.optimizer,
            seed: run.seed,
            eval_tokens: self.eval_tokens,
            history_every_tokens: u64::MAX,
        };
        let mut state = init_model(model, &cfg.mup, run.seed).map_err(|e| e.to_string())?;
        let out = train(&mut state, self.corpus, &cfg).map_err(|e| e.to_string())?;
        Ok(RunMetrics {
            final_train_loss: out.final_train_loss,
            eval_ppl: out.eval_ppl,
        })
    }
}

fn record_for(run: &PlannedRun, outcome: Result<RunMetrics, String>, wall_seconds: f64) -> RunRecord {
    let mut record = RunRecord {
        run_id: run.run_id.clone(),
        eta: run.eta,
        beta: run.beta,
        tokens: run.tokens,
        model_size: run.model_size.clone(),
        seed: run.seed,
        final_train_loss: None,
        eval_ppl: None,
        wall_seconds,
        status: RunStatus::Failed,
        reason: None,
    };
    match outcome {
        Ok(m) if m.final_train_loss.is_finite() && m.eval_ppl.is_finite() && m.eval_ppl > 1.0 => {
            record.final_train_loss = Some(m.final_train_loss);
            record.eval_ppl = Some(m.eval_ppl);
            record.status = RunStatus::Done;
        }
        Ok(m) => {
            record.reason = Some(format!(
                "metrics out of range: final_train_loss={}, eval_ppl={}",
                m.final_train_loss, m.eval_ppl
            ));
        }
        Err(reason) => record.reason = Some(reason),
    }
    record
}

/// Train every planned run missing from `store`, with up to `parallelism`
/// runs in flight. Each outcome (including failures) is appended to the
/// store as it completes; a store write failure aborts the sweep. Returns
/// the full grid's records in planned order.
pub fn execute<T: RunTrainer>(
    grid: &SweepGrid,
    trainer: &T,
    parallelism: usize,
    store: &mut RecordStore,
) -> Result<Vec<RunRecord>, SweepError> {
    if parallelism == 0 {
        return Err(SweepError::InvalidParallelism);
    }
    let planned = super::plan_runs(grid)?;
    let todo: Vec<&PlannedRun> = planned
        .iter()
        .filter(|p| !store.records().iter().any(|r| r.run_id == p.run_id))
        .collect();

    if !todo.is_empty() {
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<RunRecord>();
        let mut write_error = None;
        std::thread::scope(|scope| {
            for _ in 0..parallelism.min(todo.len()) {
                let tx = tx.clone();
                let next = &next;
                let todo = &todo;
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= todo.len() {
                        break;
                    }
                    let run = todo[i];
                    let model = &grid.model_sizes[run.model_index].config;
                    let schedule = grid.schedule_for(run.eta, run.beta, run.tokens);
                    let start = Instant::now();
                    let outcome = trainer.run(run, model, &schedule);
                    let record = record_for(run, outcome, start.elapsed().as_secs_f64());
                    if tx.send(record).is_err() {
                        // Receiver bailed on a write error; stop training.
                        break;
                    }
                });
            }
            drop(tx);
            for record in rx.iter() {
                if let Err(e) = store.append(&record) {
                    write_error = Some(e);
                    // Dropping the receiver makes the workers' sends fail,
                    // which winds them down without starting new runs.
                    break;
                }
            }
        });
        if let Some(e) = write_error {
            return Err(e);
        }
    }

    let records = planned
        .iter()
        .map(|p| {
            store
                .records()
                .iter()
                .find(|r| r.run_id == p.run_id)
                .expect("every planned run was just executed or already stored")
                .clone()
        })
        .collect();
    Ok(records)
}
