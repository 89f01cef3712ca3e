//! The shared TOML config format.
//!
//! One optional section per module — `[schedule]`, `[mup]`, `[model]`,
//! `[train]`, `[sweep]` — with lower_snake_case keys mapping one-to-one onto
//! that module's types. Unknown keys are hard errors (they are almost always
//! typos that would otherwise silently fall back to defaults), and every
//! section present is validated against its module's invariants at load
//! time, whether or not the invoked command uses it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use powersched::mup::MupConfig;
use powersched::schedule::{
    DecayShape, ScheduleKind, ScheduleSpec, DEFAULT_ETA_MAX, DEFAULT_EXPONENTIAL_FLOOR,
    DEFAULT_POWER_A, DEFAULT_POWER_B,
};
use powersched::sweep::{ModelSize, SweepGrid, DEFAULT_DECAY_FRACTION};
use powersched::trainer::{OptimizerConfig, DEFAULT_TRAIN_FRACTION};
use powersched::ModelConfig;

use crate::error::{known_kinds, CliError};

/// Evaluation token default shared by `[train]` and `[sweep]`: enough
/// windows to make perplexity stable, small enough to be a rounding error
/// next to any training budget.
pub const DEFAULT_EVAL_TOKENS: u64 = 32_768;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolConfig {
    pub schedule: Option<ScheduleSection>,
    pub mup: Option<MupSection>,
    pub model: Option<ModelSection>,
    pub train: Option<TrainSection>,
    pub sweep: Option<SweepSection>,
}

impl ToolConfig {
    pub fn load(path: &Path) -> Result<ToolConfig, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::runtime(format!("config {}: {e}", path.display())))?;
        let cfg: ToolConfig = toml::from_str(&text)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        cfg.validate_sections()?;
        Ok(cfg)
    }

    /// Validate every present section in isolation. Cross-section
    /// requirements (which sections a command needs, width agreement) are
    /// checked by the commands themselves.
    fn validate_sections(&self) -> Result<(), CliError> {
        if let Some(s) = &self.schedule {
            s.to_spec()?;
        }
        if let Some(m) = &self.mup {
            m.check_domains()?;
        }
        if let Some(m) = &self.model {
            m.to_config()
                .validate()
                .map_err(|e| CliError::validation(format!("model: {e}")))?;
        }
        if let Some(t) = &self.train {
            t.check_domains()?;
        }
        if let Some(s) = &self.sweep {
            s.to_grid()?.validate()?;
        }
        Ok(())
    }

    pub fn require_schedule(&self) -> Result<&ScheduleSection, CliError> {
        self.schedule
            .as_ref()
            .ok_or_else(|| CliError::validation("this command needs a [schedule] section"))
    }

    pub fn require_mup(&self) -> Result<&MupSection, CliError> {
        self.mup
            .as_ref()
            .ok_or_else(|| CliError::validation("this command needs a [mup] section"))
    }

    pub fn require_model(&self) -> Result<&ModelSection, CliError> {
        self.model
            .as_ref()
            .ok_or_else(|| CliError::validation("this command needs a [model] section"))
    }

    pub fn require_train(&self) -> Result<&TrainSection, CliError> {
        self.train
            .as_ref()
            .ok_or_else(|| CliError::validation("this command needs a [train] section"))
    }

    pub fn require_sweep(&self) -> Result<&SweepSection, CliError> {
        self.sweep
            .as_ref()
            .ok_or_else(|| CliError::validation("this command needs a [sweep] section"))
    }
}

fn parse_schedule_kind(s: &str) -> Result<ScheduleKind, CliError> {
    match s {
        "constant" => Ok(ScheduleKind::Constant),
        "cosine" => Ok(ScheduleKind::Cosine),
        "wsd" => Ok(ScheduleKind::Wsd),
        "power" => Ok(ScheduleKind::Power),
        other => Err(CliError::validation(format!(
            "unknown schedule kind `{other}`; expected one of: {}",
            known_kinds()
        ))),
    }
}

fn parse_decay_shape(shape: &str, floor: Option<f64>) -> Result<DecayShape, CliError> {
    match shape {
        "linear" | "cosine" if floor.is_some() => Err(CliError::validation(
            "exponential_floor only applies to decay_shape = \"exponential\"",
        )),
        "linear" => Ok(DecayShape::Linear),
        "cosine" => Ok(DecayShape::Cosine),
        "exponential" => Ok(DecayShape::Exponential {
            floor_ratio: floor.unwrap_or(DEFAULT_EXPONENTIAL_FLOOR),
        }),
        other => Err(CliError::validation(format!(
            "unknown decay_shape `{other}`; expected linear, cosine, or exponential"
        ))),
    }
}

fn require<T>(value: Option<T>, key: &str, why: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::validation(format!("{key} is required {why}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// One of `constant`, `cosine`, `wsd`, `power`.
    pub kind: String,
    /// Peak/plateau LR; `constant`, `cosine`, and `wsd` only.
    pub peak_lr: Option<f64>,
    /// Cosine floor; `cosine` only (default 0).
    pub min_lr: Option<f64>,
    pub warmup_tokens: Option<u64>,
    pub decay_tokens: Option<u64>,
    pub total_tokens: Option<u64>,
    /// Sequences per step; `power` only (the power LR is batch-size-aware).
    pub batch_size: Option<u64>,
    pub power_a: Option<f64>,
    pub power_b: Option<f64>,
    pub eta_max: Option<f64>,
    /// `linear`, `cosine`, or `exponential`.
    pub decay_shape: Option<String>,
    /// Floor ratio for exponential decay (default 0.01).
    pub exponential_floor: Option<f64>,
}

impl ScheduleSection {
    pub fn to_spec(&self) -> Result<ScheduleSpec, CliError> {
        let kind = parse_schedule_kind(&self.kind)?;
        if kind != ScheduleKind::Power {
            for (key, set) in [
                ("batch_size", self.batch_size.is_some()),
                ("power_a", self.power_a.is_some()),
                ("power_b", self.power_b.is_some()),
                ("eta_max", self.eta_max.is_some()),
            ] {
                if set {
                    return Err(CliError::validation(format!(
                        "schedule.{key} only applies to kind = \"power\""
                    )));
                }
            }
        }
        if kind != ScheduleKind::Cosine && self.min_lr.is_some() {
            return Err(CliError::validation(
                "schedule.min_lr only applies to kind = \"cosine\"",
            ));
        }
        if kind == ScheduleKind::Power && self.peak_lr.is_some() {
            return Err(CliError::validation(
                "schedule.peak_lr does not apply to kind = \"power\"; the ceiling is eta_max",
            ));
        }
        let warmup = self.warmup_tokens.unwrap_or(0);
        let mut spec = match kind {
            ScheduleKind::Constant => ScheduleSpec::constant(require(
                self.peak_lr,
                "schedule.peak_lr",
                "for constant schedules",
            )?),
            ScheduleKind::Cosine => ScheduleSpec::cosine(
                require(self.peak_lr, "schedule.peak_lr", "for cosine schedules")?,
                self.min_lr.unwrap_or(0.0),
                warmup,
                require(self.total_tokens, "schedule.total_tokens", "for cosine schedules")?,
            ),
            ScheduleKind::Wsd => ScheduleSpec::wsd(
                require(self.peak_lr, "schedule.peak_lr", "for wsd schedules")?,
                warmup,
                self.decay_tokens.unwrap_or(0),
                require(self.total_tokens, "schedule.total_tokens", "for wsd schedules")?,
            ),
            ScheduleKind::Power => ScheduleSpec::power(
                require(self.batch_size, "schedule.batch_size", "for power schedules")?,
                self.power_a.unwrap_or(DEFAULT_POWER_A),
                self.power_b.unwrap_or(DEFAULT_POWER_B),
                self.eta_max.unwrap_or(DEFAULT_ETA_MAX),
                warmup,
            ),
        };
        if matches!(kind, ScheduleKind::Constant | ScheduleKind::Power) {
            if let Some(total) = self.total_tokens {
                spec = spec.with_total_tokens(total);
            }
            if let Some(decay) = self.decay_tokens {
                spec = spec.with_decay_tokens(decay);
            }
        }
        match &self.decay_shape {
            Some(shape) => spec = spec.with_decay_shape(parse_decay_shape(shape, self.exponential_floor)?),
            None => {
                if self.exponential_floor.is_some() {
                    return Err(CliError::validation(
                        "schedule.exponential_floor needs decay_shape = \"exponential\"",
                    ));
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MupSection {
    /// Base/proxy width the hyperparameters were tuned at.
    pub d_base: usize,
    /// Target width; defaults to `model.d_model` when a [model] section is
    /// present. Ignored by sweeps, which set widths per model size.
    pub d_model: Option<usize>,
    /// Defaults to `model.d_head` likewise.
    pub d_head: Option<usize>,
    pub m_emb: Option<f64>,
    pub m_res: Option<f64>,
    pub init_std: f64,
    /// Nominal peak LR for plan derivation; commands that have an active
    /// schedule default it to the schedule's peak. Ignored by sweeps, which
    /// set it per run.
    pub base_lr: Option<f64>,
}

impl MupSection {
    /// Domain checks possible without knowing the target width.
    fn check_domains(&self) -> Result<(), CliError> {
        let positive = |key: &str, v: Option<f64>| -> Result<(), CliError> {
            match v {
                Some(x) if !(x.is_finite() && x > 0.0) => Err(CliError::validation(format!(
                    "mup.{key} must be positive and finite, got {x}"
                ))),
                _ => Ok(()),
            }
        };
        if self.d_base == 0 {
            return Err(CliError::validation("mup.d_base must be a positive width"));
        }
        positive("m_emb", self.m_emb)?;
        positive("m_res", self.m_res)?;
        positive("init_std", Some(self.init_std))?;
        positive("base_lr", self.base_lr)?;
        Ok(())
    }

    /// Complete config, taking the target width from the section itself or
    /// from `model`, and the LR from the section or `fallback_lr`.
    pub fn to_config(
        &self,
        model: Option<&ModelConfig>,
        fallback_lr: Option<f64>,
    ) -> Result<MupConfig, CliError> {
        let d_model = self
            .d_model
            .or(model.map(|m| m.d_model))
            .ok_or_else(|| CliError::validation("mup.d_model is required (or provide a [model] section)"))?;
        let d_head = self
            .d_head
            .or(model.map(|m| m.d_head))
            .ok_or_else(|| CliError::validation("mup.d_head is required (or provide a [model] section)"))?;
        let base_lr = self
            .base_lr
            .or(fallback_lr)
            .ok_or_else(|| CliError::validation("mup.base_lr is required (or provide a [schedule] section to take the peak from)"))?;
        let cfg = MupConfig {
            d_base: self.d_base,
            d_model,
            d_head,
            m_emb: self.m_emb.unwrap_or(1.0),
            m_res: self.m_res.unwrap_or(1.0),
            init_std: self.init_std,
            base_lr,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub mlp_hidden: usize,
    pub vocab_size: usize,
    pub sequence_length: usize,
}

impl ModelSection {
    pub fn to_config(&self) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_head: self.d_head,
            mlp_hidden: self.mlp_hidden,
            vocab_size: self.vocab_size,
            sequence_length: self.sequence_length,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub weight_decay: Option<f64>,
}

impl OptimizerSection {
    pub fn to_config(&self) -> Result<OptimizerConfig, CliError> {
        let defaults = OptimizerConfig::default();
        let cfg = OptimizerConfig {
            beta1: self.beta1.unwrap_or(defaults.beta1),
            beta2: self.beta2.unwrap_or(defaults.beta2),
            eps: self.eps.unwrap_or(defaults.eps),
            weight_decay: self.weight_decay.unwrap_or(defaults.weight_decay),
            ..defaults
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Path to the byte corpus file.
    pub corpus: PathBuf,
    /// Training split; the remainder is the evaluation holdout.
    pub train_fraction: Option<f64>,
    pub batch_size: u64,
    pub total_tokens: u64,
    pub seed: Option<u64>,
    pub eval_tokens: Option<u64>,
    /// History sampling interval in tokens; 0 records every step.
    pub history_every_tokens: Option<u64>,
    pub optimizer: Option<OptimizerSection>,
}

impl TrainSection {
    fn check_domains(&self) -> Result<(), CliError> {
        if self.batch_size == 0 {
            return Err(CliError::validation("train.batch_size must be at least 1"));
        }
        if self.total_tokens == 0 {
            return Err(CliError::validation("train.total_tokens must be positive"));
        }
        if let Some(f) = self.train_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(CliError::validation(format!(
                    "train.train_fraction must lie strictly between 0 and 1, got {f}"
                )));
            }
        }
        if self.eval_tokens == Some(0) {
            return Err(CliError::validation("train.eval_tokens must be at least 1"));
        }
        self.optimizer()?;
        Ok(())
    }

    pub fn train_fraction(&self) -> f64 {
        self.train_fraction.unwrap_or(DEFAULT_TRAIN_FRACTION)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn eval_tokens(&self) -> u64 {
        self.eval_tokens.unwrap_or(DEFAULT_EVAL_TOKENS)
    }

    pub fn optimizer(&self) -> Result<OptimizerConfig, CliError> {
        match &self.optimizer {
            Some(section) => section.to_config(),
            None => Ok(OptimizerConfig::default()),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSizeSection {
    pub label: String,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub mlp_hidden: usize,
    pub vocab_size: usize,
    pub sequence_length: usize,
}

impl ModelSizeSection {
    fn to_model_size(&self) -> ModelSize {
        ModelSize {
            label: self.label.clone(),
            config: ModelConfig {
                n_layers: self.n_layers,
                d_model: self.d_model,
                n_heads: self.n_heads,
                d_head: self.d_head,
                mlp_hidden: self.mlp_hidden,
                vocab_size: self.vocab_size,
                sequence_length: self.sequence_length,
            },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Path to the byte corpus shared by every run.
    pub corpus: PathBuf,
    pub train_fraction: Option<f64>,
    /// Swept peak LRs (or power amplitudes), strictly increasing.
    pub etas: Vec<f64>,
    /// Swept batch sizes, strictly increasing.
    pub betas: Vec<u64>,
    pub token_budgets: Vec<u64>,
    pub seeds: Option<Vec<u64>>,
    /// `cosine`, `wsd`, or `power` (constant has no swept peak).
    pub schedule_kind: String,
    pub decay_fraction: Option<f64>,
    pub warmup_tokens: Option<u64>,
    pub decay_shape: Option<String>,
    pub exponential_floor: Option<f64>,
    /// Power exponent `b` (power sweeps only).
    pub power_b: Option<f64>,
    /// Power LR ceiling (power sweeps only).
    pub eta_max: Option<f64>,
    pub eval_tokens: Option<u64>,
    pub optimizer: Option<OptimizerSection>,
    pub model_sizes: Vec<ModelSizeSection>,
}

impl SweepSection {
    pub fn to_grid(&self) -> Result<SweepGrid, CliError> {
        let kind = parse_schedule_kind(&self.schedule_kind)?;
        if kind != ScheduleKind::Power {
            for (key, set) in [
                ("power_b", self.power_b.is_some()),
                ("eta_max", self.eta_max.is_some()),
            ] {
                if set {
                    return Err(CliError::validation(format!(
                        "sweep.{key} only applies to schedule_kind = \"power\""
                    )));
                }
            }
        }
        let mut grid = SweepGrid::new(
            self.etas.clone(),
            self.betas.clone(),
            self.token_budgets.clone(),
            self.model_sizes.iter().map(|s| s.to_model_size()).collect(),
            self.seeds.clone().unwrap_or_else(|| vec![0]),
            kind,
        );
        grid.decay_fraction = self.decay_fraction.unwrap_or(DEFAULT_DECAY_FRACTION);
        grid.warmup_tokens = self.warmup_tokens.unwrap_or(0);
        match &self.decay_shape {
            Some(shape) => grid.decay_shape = Some(parse_decay_shape(shape, self.exponential_floor)?),
            None => {
                if self.exponential_floor.is_some() {
                    return Err(CliError::validation(
                        "sweep.exponential_floor needs decay_shape = \"exponential\"",
                    ));
                }
            }
        }
        if let Some(b) = self.power_b {
            grid.power_b = b;
        }
        if let Some(m) = self.eta_max {
            grid.eta_max = m;
        }
        if let Some(f) = self.train_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(CliError::validation(format!(
                    "sweep.train_fraction must lie strictly between 0 and 1, got {f}"
                )));
            }
        }
        if self.eval_tokens == Some(0) {
            return Err(CliError::validation("sweep.eval_tokens must be at least 1"));
        }
        self.optimizer()?;
        Ok(grid)
    }

    pub fn train_fraction(&self) -> f64 {
        self.train_fraction.unwrap_or(DEFAULT_TRAIN_FRACTION)
    }

    pub fn eval_tokens(&self) -> u64 {
        self.eval_tokens.unwrap_or(DEFAULT_EVAL_TOKENS)
    }

    pub fn optimizer(&self) -> Result<OptimizerConfig, CliError> {
        match &self.optimizer {
            Some(section) => section.to_config(),
            None => Ok(OptimizerConfig::default()),
        }
    }
}
