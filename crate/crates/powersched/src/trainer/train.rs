//! Training loop: schedule-driven AdamW over random corpus windows.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adamw_step, AdamState, OptimizerConfig};
use super::data::Corpus;
use super::model::{backward, forward, loss_from_logits, Batch, Model, ModelConfig, ParamTensors, Workspace};
use super::TrainerError;
use crate::mup::{attention_logit_scale, derive_plan, MupConfig, ParamGroup};
use crate::schedule::{ScheduleKind, ScheduleSpec};

/// Everything a run needs besides the architecture: batch size, token
/// budget, schedule, width-scaling config, optimizer, and seed.
///
/// `mup.base_lr` only names the nominal peak for the derived plan; during
/// training the per-step base rate comes from `schedule`, and group rates
/// are derived from it each step.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Sequences per optimizer step.
    pub batch_size: u64,
    /// Total training tokens; the run executes
    /// `floor(total_tokens / (batch_size * sequence_length))` full steps and
    /// never a partial batch.
    pub total_tokens: u64,
    pub schedule: ScheduleSpec,
    pub mup: MupConfig,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Holdout tokens scored by the final evaluation (capped by holdout
    /// size, rounded up to whole windows).
    pub eval_tokens: u64,
    /// Record a history point whenever at least this many tokens have
    /// passed since the last one; 0 records every step. The final step is
    /// always recorded.
    pub history_every_tokens: u64,
}

impl TrainConfig {
    pub fn validate(&self, mcfg: &ModelConfig) -> Result<(), TrainerError> {
        let err = |reason: String| Err(TrainerError::InvalidTrain { reason });
        mcfg.validate()?;
        if self.batch_size == 0 {
            return err("batch_size must be at least 1".into());
        }
        let tokens_per_step = self
            .batch_size
            .checked_mul(mcfg.sequence_length as u64)
            .ok_or_else(|| TrainerError::InvalidTrain {
                reason: "batch_size * sequence_length overflows".into(),
            })?;
        if self.total_tokens < tokens_per_step {
            return err(format!(
                "total_tokens ({}) is smaller than one step ({} tokens): no full batch fits",
                self.total_tokens, tokens_per_step
            ));
        }
        self.schedule.validate()?;
        if self.schedule.kind == ScheduleKind::Power && self.schedule.batch_size != self.batch_size
        {
            return err(format!(
                "power schedule batch_size ({}) must match the training batch_size ({})",
                self.schedule.batch_size, self.batch_size
            ));
        }
        if let Some(total) = self.schedule.total_tokens {
            if total < self.total_tokens {
                return err(format!(
                    "schedule total_tokens ({total}) is shorter than the run ({})",
                    self.total_tokens
                ));
            }
        }
        self.mup.validate()?;
        if self.mup.d_model != mcfg.d_model || self.mup.d_head != mcfg.d_head {
            return err(format!(
                "width config (d_model {}, d_head {}) does not match the model (d_model {}, d_head {})",
                self.mup.d_model, self.mup.d_head, mcfg.d_model, mcfg.d_head
            ));
        }
        self.optimizer.validate()?;
        if self.eval_tokens == 0 {
            return err("eval_tokens must be at least 1".into());
        }
        Ok(())
    }
}

/// Model plus optimizer moments, token counter, and the rng stream that
/// drives batch sampling. Fully determined by `(configs, seed)`.
pub struct TrainState {
    pub model: Model,
    pub opt: AdamState,
    pub tokens_seen: u64,
    pub rng: ChaCha8Rng,
}

/// Builds an initialized model with per-group init scales from the
/// width-scaling plan, attention logit scale `1/d_head`, and fresh
/// optimizer state. The rng is seeded from `seed`; init draws consume its
/// prefix and batch sampling continues the same stream.
pub fn init_model(
    mcfg: &ModelConfig,
    mup: &MupConfig,
    seed: u64,
) -> Result<TrainState, TrainerError> {
    mcfg.validate()?;
    mup.validate()?;
    if mup.d_model != mcfg.d_model || mup.d_head != mcfg.d_head {
        return Err(TrainerError::InvalidModel {
            reason: format!(
                "width config (d_model {}, d_head {}) does not match the model (d_model {}, d_head {})",
                mup.d_model, mup.d_head, mcfg.d_model, mcfg.d_head
            ),
        });
    }
    let plans = derive_plan(mup)?;
    let inits = super::model::GroupInits {
        emb_std: plans.get(ParamGroup::InputEmbedding).init_std,
        head_std: plans.get(ParamGroup::OutputEmbedding).init_std,
        internal_std: plans.get(ParamGroup::InternalMatrix).init_std,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::init_with(
        mcfg.clone(),
        inits,
        mup.m_emb,
        mup.m_res,
        attention_logit_scale(mcfg.d_head),
        &mut rng,
    )?;
    Ok(TrainState {
        opt: AdamState::new(mcfg),
        model,
        tokens_seen: 0,
        rng,
    })
}

/// One recorded training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryPoint {
    /// Tokens seen after the step.
    pub tokens: u64,
    /// Training loss of the step's batch, nats per token.
    pub loss: f64,
    /// Base learning rate the step used (sampled at pre-step tokens_seen).
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<HistoryPoint>,
    pub final_train_loss: f64,
    /// exp(mean holdout cross-entropy), strictly greater than 1 for any
    /// finite loss.
    pub eval_ppl: f64,
}

fn sample_batch(batch: &mut Batch, train: &[u8], n_seqs: usize, seq: usize, rng: &mut ChaCha8Rng) {
    batch.inputs.clear();
    batch.targets.clear();
    batch.n_seqs = n_seqs;
    let max_start = train.len() - (seq + 1);
    for _ in 0..n_seqs {
        let start = rng.random_range(0..=max_start);
        batch
            .inputs
            .extend(train[start..start + seq].iter().map(|&b| b as u32));
        batch
            .targets
            .extend(train[start + 1..start + seq + 1].iter().map(|&b| b as u32));
    }
}

/// Mean cross-entropy over up to `eval_tokens` holdout tokens, taken as
/// consecutive non-overlapping windows from the start of the holdout.
fn evaluate(
    model: &Model,
    ws: &mut Workspace,
    max_seqs: usize,
    holdout: &[u8],
    eval_tokens: u64,
) -> f64 {
    let seq = model.cfg.sequence_length;
    let available = (holdout.len() - 1) / seq;
    let wanted = (eval_tokens as usize).div_ceil(seq).max(1);
    let n_windows = wanted.min(available);
    let mut batch = Batch {
        inputs: Vec::new(),
        targets: Vec::new(),
        n_seqs: 0,
    };
    let mut total = 0.0;
    let mut rows = 0usize;
    let mut w = 0;
    while w < n_windows {
        let chunk = (n_windows - w).min(max_seqs);
        batch.inputs.clear();
        batch.targets.clear();
        batch.n_seqs = chunk;
        for c in 0..chunk {
            let start = (w + c) * seq;
            batch
                .inputs
                .extend(holdout[start..start + seq].iter().map(|&b| b as u32));
            batch
                .targets
                .extend(holdout[start + 1..start + seq + 1].iter().map(|&b| b as u32));
        }
        forward(model, ws, &batch);
        let ce = loss_from_logits(ws, &batch, model.cfg.vocab_size);
        total += ce * (chunk * seq) as f64;
        rows += chunk * seq;
        w += chunk;
    }
    total / rows as f64
}

/// Runs the configured number of steps, then evaluates on the holdout.
///
/// Each step samples the schedule at the pre-step `tokens_seen` (so the
/// first step uses n = 0), trains on `batch_size` uniformly sampled
/// windows, and advances `tokens_seen` by `batch_size * sequence_length`.
/// A non-finite training loss or evaluation aborts with
/// [`TrainerError::Divergent`].
pub fn train(
    state: &mut TrainState,
    corpus: &Corpus,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome, TrainerError> {
    let mcfg = &state.model.cfg.clone();
    tcfg.validate(mcfg)?;
    let seq = mcfg.sequence_length;
    let needed = seq + 1;
    for (side, bytes) in [("train", &corpus.train), ("holdout", &corpus.holdout)] {
        if bytes.len() < needed {
            return Err(TrainerError::CorpusTooSmall {
                needed,
                have: bytes.len(),
            });
        }
        if let Some(&b) = bytes.iter().find(|&&b| (b as usize) >= mcfg.vocab_size) {
            return Err(TrainerError::InvalidTrain {
                reason: format!(
                    "{side} corpus byte {b} is outside vocab_size {}",
                    mcfg.vocab_size
                ),
            });
        }
    }

    let n_seqs = tcfg.batch_size as usize;
    let tokens_per_step = tcfg.batch_size * seq as u64;
    let steps = tcfg.total_tokens / tokens_per_step;
    let m_width = tcfg.mup.width_multiplier();

    let mut ws = Workspace::new(mcfg, n_seqs);
    let mut grads = ParamTensors::zeros(mcfg);
    let mut batch = Batch {
        inputs: Vec::with_capacity(n_seqs * seq),
        targets: Vec::with_capacity(n_seqs * seq),
        n_seqs,
    };
    let mut history = Vec::new();
    let mut last_recorded = 0u64;
    let mut final_train_loss = f64::NAN;

    for step in 0..steps {
        let lr = tcfg.schedule.lr_at(state.tokens_seen)?;
        sample_batch(&mut batch, &corpus.train, n_seqs, seq, &mut state.rng);
        forward(&state.model, &mut ws, &batch);
        let loss = loss_from_logits(&mut ws, &batch, mcfg.vocab_size);
        if !loss.is_finite() {
            return Err(TrainerError::Divergent {
                tokens_seen: state.tokens_seen,
            });
        }
        grads.zero_fill(mcfg);
        backward(&state.model, &mut ws, &batch, &mut grads);
        adamw_step(&mut state.model, &grads, &mut state.opt, &tcfg.optimizer, lr, m_width);
        state.tokens_seen += tokens_per_step;
        final_train_loss = loss;

        let due = tcfg.history_every_tokens == 0
            || state.tokens_seen - last_recorded >= tcfg.history_every_tokens;
        if due || step == steps - 1 {
            history.push(HistoryPoint {
                tokens: state.tokens_seen,
                loss,
                lr,
            });
            last_recorded = state.tokens_seen;
        }
    }

    let eval_ce = evaluate(&state.model, &mut ws, n_seqs, &corpus.holdout, tcfg.eval_tokens);
    if !eval_ce.is_finite() {
        return Err(TrainerError::Divergent {
            tokens_seen: state.tokens_seen,
        });
    }
    Ok(TrainOutcome {
        history,
        final_train_loss,
        eval_ppl: eval_ce.exp(),
    })
}
