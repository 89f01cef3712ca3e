//! Token-indexed learning-rate schedules.
//!
//! Schedules are functions of the number of tokens already trained, never of
//! optimizer steps; callers convert via `tokens = steps * batch_size *
//! sequence_length`. Four kinds are supported:
//!
//! - `constant`: flat at `peak_lr` (plus optional warmup/decay wrapper).
//! - `cosine`: half-cosine from `peak_lr` to `min_lr` after warmup.
//! - `wsd`: warmup, a stable plateau at exactly `peak_lr`, then a short decay.
//! - `power`: stable-phase LR is `min(eta_max, batch_size * a * n^b)`. The
//!   schedule needs no total token budget because the LR depends only on
//!   progress so far, and it is linear in the batch size wherever the
//!   `eta_max` clamp is inactive.
//!
//! All evaluation is pure double-precision arithmetic: `lr_at` is
//! deterministic and safe to call concurrently.

use std::io;

use thiserror::Error;

/// Default power-schedule amplitude `a`.
pub const DEFAULT_POWER_A: f64 = 4.0;
/// Default power-schedule exponent `b`.
pub const DEFAULT_POWER_B: f64 = -0.51;
/// Default ceiling on the power-schedule learning rate.
pub const DEFAULT_ETA_MAX: f64 = 0.02;
/// Default floor ratio for [`DecayShape::Exponential`].
pub const DEFAULT_EXPONENTIAL_FLOOR: f64 = 1e-2;

/// Schedule family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    Constant,
    Cosine,
    Wsd,
    Power,
}

impl ScheduleKind {
    /// Lowercase name as used in config files and error messages.
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Constant => "constant",
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Wsd => "wsd",
            ScheduleKind::Power => "power",
        }
    }
}

/// Shape of the terminal decay phase, applied multiplicatively to the
/// phase-entry learning rate.
///
/// `Linear` and `Cosine` reach exactly 0 at the final token; `Exponential`
/// reaches `floor_ratio * entry_lr` (a pure exponential cannot reach 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayShape {
    Linear,
    Cosine,
    Exponential { floor_ratio: f64 },
}

impl DecayShape {
    /// Decay multiplier at `progress` in (0, 1].
    fn factor(self, progress: f64) -> f64 {
        match self {
            DecayShape::Linear => 1.0 - progress,
            DecayShape::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()),
            DecayShape::Exponential { floor_ratio } => floor_ratio.powf(progress),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("power learning rate is undefined at n = 0 with a negative exponent; use a warmup phase")]
    UndefinedAtZero,
    #[error("schedule kind `{}` requires total_tokens", kind.as_str())]
    MissingTotalTokens { kind: ScheduleKind },
    #[error("token position {n} is past the schedule end ({total} total tokens)")]
    PastEnd { n: u64, total: u64 },
    #[error("curve range is empty: start {start} must be below end {end}")]
    EmptyRange { start: u64, end: u64 },
    #[error("curve stride must be at least 1 token")]
    ZeroStride,
}

fn invalid(name: &'static str, reason: impl Into<String>) -> ScheduleError {
    ScheduleError::InvalidParam { name, reason: reason.into() }
}

fn check_positive_finite(name: &'static str, value: f64) -> Result<(), ScheduleError> {
    if !value.is_finite() || value <= 0.0 {
        return Err(invalid(name, format!("must be positive and finite, got {value}")));
    }
    Ok(())
}

/// Stable-phase power learning rate: `min(eta_max, batch_size * a * n^b)`.
///
/// `n` counts tokens already trained. Errors at `n = 0` with `b < 0` (the
/// unclamped value diverges there; the warmup wrapper in [`ScheduleSpec`]
/// covers that region).
pub fn power_lr(batch_size: u64, a: f64, b: f64, eta_max: f64, n: u64) -> Result<f64, ScheduleError> {
    validate_power_params(batch_size, a, b, eta_max)?;
    if n == 0 && b < 0.0 {
        return Err(ScheduleError::UndefinedAtZero);
    }
    let unclamped = batch_size as f64 * a * (n as f64).powf(b);
    Ok(unclamped.min(eta_max))
}

/// Token count `n* = (batch_size * a / eta_max)^(1/|b|)` after which
/// [`power_lr`] drops below `eta_max` and the clamp disengages.
///
/// Returns 0 when `batch_size * a < eta_max` (the clamp never engages).
/// The crossover is returned as a real number of tokens; the clamp holds for
/// integer `n <= floor(n*)` and is off for `n > ceil(n*)`.
pub fn clamp_crossover(batch_size: u64, a: f64, b: f64, eta_max: f64) -> Result<f64, ScheduleError> {
    validate_power_params(batch_size, a, b, eta_max)?;
    if !b.is_sign_negative() || b == 0.0 {
        return Err(invalid("power_b", format!("crossover requires a negative exponent, got {b}")));
    }
    let peak = batch_size as f64 * a;
    if peak < eta_max {
        return Ok(0.0);
    }
    Ok((peak / eta_max).powf(1.0 / -b))
}

fn validate_power_params(batch_size: u64, a: f64, b: f64, eta_max: f64) -> Result<(), ScheduleError> {
    if batch_size == 0 {
        return Err(invalid("batch_size", "must be at least 1 sequence per step"));
    }
    check_positive_finite("power_a", a)?;
    if !b.is_finite() {
        return Err(invalid("power_b", format!("must be finite, got {b}")));
    }
    check_positive_finite("eta_max", eta_max)?;
    Ok(())
}

/// Full description of one learning-rate schedule, with phase boundaries in
/// tokens.
///
/// `warmup_tokens` ramps linearly from 0 to the phase-entry value; a terminal
/// decay of `decay_tokens` applies `decay_shape` multiplicatively to the
/// entry value. `total_tokens` is required by `cosine` and `wsd`; `constant`
/// and `power` are open-ended and only need it once a decay phase is in play.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    /// Plateau/peak LR for `constant`, `cosine`, `wsd`. Must stay 0 for `power`.
    pub peak_lr: f64,
    /// Power-schedule amplitude `a` (`power` only).
    pub power_a: f64,
    /// Power-schedule exponent `b` (`power` only).
    pub power_b: f64,
    /// Power-schedule LR ceiling (`power` only).
    pub eta_max: f64,
    /// Sequences per optimizer step (`power` only; the power LR is
    /// batch-size-aware).
    pub batch_size: u64,
    pub warmup_tokens: u64,
    pub decay_tokens: u64,
    pub total_tokens: Option<u64>,
    pub decay_shape: DecayShape,
    /// Cosine floor (`cosine` only).
    pub min_lr: f64,
}

impl ScheduleSpec {
    /// Flat schedule at `peak_lr`, open-ended.
    pub fn constant(peak_lr: f64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Constant,
            peak_lr,
            power_a: 0.0,
            power_b: 0.0,
            eta_max: 0.0,
            batch_size: 1,
            warmup_tokens: 0,
            decay_tokens: 0,
            total_tokens: None,
            decay_shape: DecayShape::Linear,
            min_lr: 0.0,
        }
    }

    /// Half-cosine from `peak_lr` to `min_lr` over `[warmup_tokens, total_tokens]`.
    pub fn cosine(peak_lr: f64, min_lr: f64, warmup_tokens: u64, total_tokens: u64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Cosine,
            min_lr,
            warmup_tokens,
            total_tokens: Some(total_tokens),
            ..ScheduleSpec::constant(peak_lr)
        }
    }

    /// Warmup-stable-decay: plateau at exactly `peak_lr`, linear decay by
    /// default (override with [`with_decay_shape`](Self::with_decay_shape)).
    pub fn wsd(peak_lr: f64, warmup_tokens: u64, decay_tokens: u64, total_tokens: u64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Wsd,
            warmup_tokens,
            decay_tokens,
            total_tokens: Some(total_tokens),
            ..ScheduleSpec::constant(peak_lr)
        }
    }

    /// Power schedule, open-ended: stable LR `min(eta_max, batch_size * a * n^b)`.
    pub fn power(batch_size: u64, a: f64, b: f64, eta_max: f64, warmup_tokens: u64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Power,
            peak_lr: 0.0,
            power_a: a,
            power_b: b,
            eta_max,
            batch_size,
            warmup_tokens,
            decay_tokens: 0,
            total_tokens: None,
            decay_shape: DecayShape::Exponential { floor_ratio: DEFAULT_EXPONENTIAL_FLOOR },
            min_lr: 0.0,
        }
    }

    pub fn with_decay_shape(mut self, shape: DecayShape) -> Self {
        self.decay_shape = shape;
        self
    }

    pub fn with_total_tokens(mut self, total: u64) -> Self {
        self.total_tokens = Some(total);
        self
    }

    pub fn with_decay_tokens(mut self, decay: u64) -> Self {
        self.decay_tokens = decay;
        self
    }

    /// Check every spec invariant. `lr_at` and `emit_curve` call this, so an
    /// invalid spec can never produce a learning rate.
    pub fn validate(&self) -> Result<(), ScheduleError> {
        match self.kind {
            ScheduleKind::Constant => check_positive_finite("peak_lr", self.peak_lr)?,
            ScheduleKind::Cosine => {
                check_positive_finite("peak_lr", self.peak_lr)?;
                if self.total_tokens.is_none() {
                    return Err(ScheduleError::MissingTotalTokens { kind: self.kind });
                }
                if !self.min_lr.is_finite() || self.min_lr < 0.0 {
                    return Err(invalid("min_lr", format!("must be non-negative, got {}", self.min_lr)));
                }
                if self.min_lr > self.peak_lr {
                    return Err(invalid("min_lr", "must not exceed peak_lr"));
                }
                if self.decay_tokens != 0 {
                    return Err(invalid(
                        "decay_tokens",
                        "cosine has no terminal decay phase; the half-cosine already anneals to min_lr",
                    ));
                }
            }
            ScheduleKind::Wsd => {
                check_positive_finite("peak_lr", self.peak_lr)?;
                if self.total_tokens.is_none() {
                    return Err(ScheduleError::MissingTotalTokens { kind: self.kind });
                }
            }
            ScheduleKind::Power => {
                validate_power_params(self.batch_size, self.power_a, self.power_b, self.eta_max)?;
                if self.peak_lr != 0.0 {
                    return Err(invalid(
                        "peak_lr",
                        "not used by the power schedule; the ceiling is eta_max",
                    ));
                }
            }
        }
        if self.kind != ScheduleKind::Cosine && self.min_lr != 0.0 {
            return Err(invalid("min_lr", "only the cosine schedule has a floor"));
        }
        if let DecayShape::Exponential { floor_ratio } = self.decay_shape {
            if !floor_ratio.is_finite() || floor_ratio <= 0.0 || floor_ratio >= 1.0 {
                return Err(invalid("floor_ratio", format!("must lie in (0, 1), got {floor_ratio}")));
            }
        }
        if self.decay_tokens > 0 && self.total_tokens.is_none() {
            return Err(invalid(
                "decay_tokens",
                "a decay phase needs total_tokens to locate its start",
            ));
        }
        if let Some(total) = self.total_tokens {
            if total == 0 {
                return Err(invalid("total_tokens", "must be positive"));
            }
            let reserved = self.warmup_tokens.checked_add(self.decay_tokens);
            if reserved.is_none() || reserved.unwrap() > total {
                return Err(invalid(
                    "total_tokens",
                    format!(
                        "warmup_tokens + decay_tokens = {} + {} exceeds total_tokens = {}",
                        self.warmup_tokens, self.decay_tokens, total
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Learning rate after `n` tokens trained.
    ///
    /// Piecewise: linear warmup to the phase-entry value for `n <
    /// warmup_tokens`, then the kind's stable curve, then the decay shape
    /// applied to the decay-entry value for `n > total - decay_tokens`.
    /// Deterministic bit-for-bit in `(spec, n)`.
    pub fn lr_at(&self, n: u64) -> Result<f64, ScheduleError> {
        self.validate()?;
        if let Some(total) = self.total_tokens {
            if n > total {
                return Err(ScheduleError::PastEnd { n, total });
            }
        }
        if n < self.warmup_tokens {
            let entry = self.stable_lr(self.warmup_tokens)?;
            return Ok(entry * (n as f64 / self.warmup_tokens as f64));
        }
        if self.decay_tokens > 0 {
            let decay_start = self.total_tokens.expect("validated: decay requires total") - self.decay_tokens;
            if n > decay_start {
                let entry = self.stable_lr(decay_start)?;
                let progress = (n - decay_start) as f64 / self.decay_tokens as f64;
                return Ok(entry * self.decay_shape.factor(progress));
            }
        }
        self.stable_lr(n)
    }

    /// Stable-phase value, also used for the warmup/decay entry points.
    /// For `power` at `n = 0` (possible only with zero warmup) the value is
    /// defined as the `n = 1` value to dodge the `n^b` singularity.
    fn stable_lr(&self, n: u64) -> Result<f64, ScheduleError> {
        match self.kind {
            ScheduleKind::Constant | ScheduleKind::Wsd => Ok(self.peak_lr),
            ScheduleKind::Power => {
                power_lr(self.batch_size, self.power_a, self.power_b, self.eta_max, n.max(1))
            }
            ScheduleKind::Cosine => {
                let total = self.total_tokens.expect("validated: cosine requires total");
                let span = total - self.warmup_tokens;
                if span == 0 {
                    return Ok(self.peak_lr);
                }
                let progress = (n - self.warmup_tokens) as f64 / span as f64;
                let half = 0.5 * (self.peak_lr - self.min_lr);
                Ok(self.min_lr + half * (1.0 + (std::f64::consts::PI * progress).cos()))
            }
        }
    }

    /// Sample the schedule over `[start, end]` every `stride` tokens,
    /// endpoints always included: `ceil((end - start) / stride) + 1` samples,
    /// each exactly equal to the pointwise `lr_at` value.
    pub fn emit_curve(&self, start: u64, end: u64, stride: u64) -> Result<Vec<(u64, f64)>, ScheduleError> {
        if stride == 0 {
            return Err(ScheduleError::ZeroStride);
        }
        if start > end {
            return Err(ScheduleError::EmptyRange { start, end });
        }
        let mut samples = Vec::with_capacity(((end - start) / stride + 2) as usize);
        let mut n = start;
        while n < end {
            samples.push((n, self.lr_at(n)?));
            n = n.saturating_add(stride);
        }
        samples.push((end, self.lr_at(end)?));
        Ok(samples)
    }
}

/// Write curve samples as CSV with header `tokens,lr`, learning rates printed
/// with 10 significant digits.
pub fn write_curve_csv<W: io::Write>(mut w: W, samples: &[(u64, f64)]) -> io::Result<()> {
    writeln!(w, "tokens,lr")?;
    for &(n, lr) in samples {
        writeln!(w, "{n},{lr:.9e}")?;
    }
    Ok(())
}
