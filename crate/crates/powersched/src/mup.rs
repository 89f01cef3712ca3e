//! Width-aware parameter-group scaling (maximal update parametrization).
//!
//! A [`MupConfig`] relates a target model of width `d_model` to a base/proxy
//! width `d_base` through `m_width = d_model / d_base`. [`derive_plan`] turns
//! that into one [`ParamGroupPlan`] per parameter group:
//!
//! - internal matrices: LR divided by `m_width`, init std divided by
//!   `sqrt(m_width)`;
//! - input/output embeddings: LR and init std unscaled, embedding output
//!   multiplied by `m_emb`;
//! - vector parameters (norm gains, biases): LR unscaled, gains filled with 1.
//!
//! Residual-branch outputs are additionally multiplied by `m_res` before the
//! residual add, and attention logits are divided by `d_head` (not
//! `sqrt(d_head)`). Together these keep activation scales and update sizes
//! approximately width-invariant, so a learning rate tuned on the base width
//! transfers to wider models.

use std::io;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MupError {
    #[error("invalid {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> MupError {
    MupError::InvalidParam { name, reason: reason.into() }
}

fn check_positive(name: &'static str, value: f64) -> Result<(), MupError> {
    if !value.is_finite() || value <= 0.0 {
        return Err(invalid(name, format!("must be positive and finite, got {value}")));
    }
    Ok(())
}

/// Base dimensions and multipliers from which per-group plans are derived.
#[derive(Debug, Clone, PartialEq)]
pub struct MupConfig {
    /// Base/proxy embedding width the hyperparameters were tuned at.
    pub d_base: usize,
    /// Target embedding width.
    pub d_model: usize,
    /// Attention head size; `d_model` must be divisible by it.
    pub d_head: usize,
    /// Embedding output multiplier.
    pub m_emb: f64,
    /// Residual-branch output multiplier.
    pub m_res: f64,
    /// Base initialization standard deviation.
    pub init_std: f64,
    /// Group-independent learning rate from the active schedule.
    pub base_lr: f64,
}

impl MupConfig {
    /// Width multiplier `m_width = d_model / d_base`.
    pub fn width_multiplier(&self) -> f64 {
        self.d_model as f64 / self.d_base as f64
    }

    pub fn validate(&self) -> Result<(), MupError> {
        if self.d_base == 0 {
            return Err(invalid("d_base", "must be a positive width"));
        }
        if self.d_model == 0 {
            return Err(invalid("d_model", "must be a positive width"));
        }
        if self.d_head == 0 {
            return Err(invalid("d_head", "must be a positive head size"));
        }
        if self.d_model % self.d_head != 0 {
            return Err(invalid(
                "d_model",
                format!("{} is not divisible by d_head {}", self.d_model, self.d_head),
            ));
        }
        check_positive("m_emb", self.m_emb)?;
        check_positive("m_res", self.m_res)?;
        check_positive("init_std", self.init_std)?;
        check_positive("base_lr", self.base_lr)?;
        Ok(())
    }
}

/// Parameter groups with distinct scaling rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    InputEmbedding,
    OutputEmbedding,
    InternalMatrix,
    VectorParams,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::InputEmbedding,
        ParamGroup::OutputEmbedding,
        ParamGroup::InternalMatrix,
        ParamGroup::VectorParams,
    ];

    /// Lowercase name as used in CSV exports.
    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::InputEmbedding => "input_embedding",
            ParamGroup::OutputEmbedding => "output_embedding",
            ParamGroup::InternalMatrix => "internal_matrix",
            ParamGroup::VectorParams => "vector_params",
        }
    }
}

/// Scaling plan for one parameter group.
///
/// For `vector_params`, `init_std` is the constant fill value for norm gains
/// (biases start at 0); for the other groups it is a Gaussian sampling std.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamGroupPlan {
    pub group: ParamGroup,
    pub lr: f64,
    pub init_std: f64,
    /// Multiplier applied to the group's forward output (`m_emb` on the input
    /// embedding; 1 elsewhere — `m_res` is a residual-join multiplier, not a
    /// per-group one).
    pub forward_multiplier: f64,
}

/// One plan entry per [`ParamGroup`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroupPlans {
    entries: [ParamGroupPlan; 4],
}

impl ParamGroupPlans {
    pub fn get(&self, group: ParamGroup) -> &ParamGroupPlan {
        self.entries.iter().find(|p| p.group == group).expect("one entry per group")
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamGroupPlan> {
        self.entries.iter()
    }

    /// Write the plan as CSV with header `group,lr,init_std,forward_multiplier`.
    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "group,lr,init_std,forward_multiplier")?;
        for plan in self.iter() {
            writeln!(w, "{},{},{},{}", plan.group.as_str(), plan.lr, plan.init_std, plan.forward_multiplier)?;
        }
        Ok(())
    }
}

/// Derive the per-group plan from a config.
///
/// With `m_width = m_emb = m_res = 1` the plan reduces to the standard
/// parameterization: every group at `base_lr` and `init_std`, all forward
/// multipliers 1.
pub fn derive_plan(cfg: &MupConfig) -> Result<ParamGroupPlans, MupError> {
    cfg.validate()?;
    let m_width = cfg.width_multiplier();
    let entries = [
        ParamGroupPlan {
            group: ParamGroup::InputEmbedding,
            lr: cfg.base_lr,
            init_std: cfg.init_std,
            forward_multiplier: cfg.m_emb,
        },
        ParamGroupPlan {
            group: ParamGroup::OutputEmbedding,
            lr: cfg.base_lr,
            init_std: cfg.init_std,
            forward_multiplier: 1.0,
        },
        ParamGroupPlan {
            group: ParamGroup::InternalMatrix,
            lr: cfg.base_lr / m_width,
            init_std: cfg.init_std / m_width.sqrt(),
            forward_multiplier: 1.0,
        },
        ParamGroupPlan {
            group: ParamGroup::VectorParams,
            lr: cfg.base_lr,
            init_std: 1.0,
            forward_multiplier: 1.0,
        },
    ];
    Ok(ParamGroupPlans { entries })
}

/// Attention logits are divided by `d_head`, not the conventional
/// `sqrt(d_head)`; the two rules differ whenever `d_head != 1`.
pub fn attention_logit_scale(d_head: usize) -> f64 {
    1.0 / d_head as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(d_base: usize, d_model: usize) -> MupConfig {
        MupConfig {
            d_base,
            d_model,
            d_head: 8,
            m_emb: 1.0,
            m_res: 1.0,
            init_std: 0.02,
            base_lr: 0.0016,
        }
    }

    #[test]
    fn width_multiplier_is_the_width_ratio() {
        assert_eq!(cfg(256, 128).width_multiplier(), 0.5);
        assert_eq!(cfg(256, 512).width_multiplier(), 2.0);
        assert_eq!(cfg(256, 256).width_multiplier(), 1.0);
    }

    #[test]
    fn internal_lr_divides_by_width_multiplier() {
        let plans = derive_plan(&cfg(256, 512)).unwrap();
        assert_eq!(plans.get(ParamGroup::InternalMatrix).lr, 0.0008);
        assert_eq!(plans.get(ParamGroup::InputEmbedding).lr, 0.0016);
        assert_eq!(plans.get(ParamGroup::OutputEmbedding).lr, 0.0016);
        assert_eq!(plans.get(ParamGroup::VectorParams).lr, 0.0016);
    }

    #[test]
    fn internal_init_divides_by_sqrt_width_multiplier() {
        let plans = derive_plan(&cfg(256, 512)).unwrap();
        let internal = plans.get(ParamGroup::InternalMatrix).init_std;
        let expected = 0.014142135623730951; // 0.02 / sqrt(2), frozen oracle value
        assert!((internal - expected).abs() < 1e-17);
        assert_eq!(plans.get(ParamGroup::InputEmbedding).init_std, 0.02);
    }

    #[test]
    fn identity_config_reduces_to_standard_parameterization() {
        let plans = derive_plan(&cfg(256, 256)).unwrap();
        for plan in plans.iter() {
            assert_eq!(plan.lr, 0.0016);
            assert_eq!(plan.forward_multiplier, 1.0);
            if plan.group != ParamGroup::VectorParams {
                assert_eq!(plan.init_std, 0.02);
            }
        }
    }

    #[test]
    fn embedding_multiplier_lands_on_the_input_side_only() {
        let mut c = cfg(256, 512);
        c.m_emb = 12.0;
        c.m_res = 0.26;
        let plans = derive_plan(&c).unwrap();
        assert_eq!(plans.get(ParamGroup::InputEmbedding).forward_multiplier, 12.0);
        assert_eq!(plans.get(ParamGroup::OutputEmbedding).forward_multiplier, 1.0);
        assert_eq!(plans.get(ParamGroup::InternalMatrix).forward_multiplier, 1.0);
    }

    #[test]
    fn logit_scale_is_inverse_head_size() {
        assert_eq!(attention_logit_scale(64), 0.015625);
        assert_eq!(attention_logit_scale(1), 1.0);
        assert_eq!(attention_logit_scale(4), 0.25);
    }

    #[test]
    fn validation_rejects_degenerate_configs() {
        assert!(derive_plan(&cfg(0, 256)).is_err());
        assert!(derive_plan(&cfg(256, 0)).is_err());
        let mut c = cfg(256, 260); // not divisible by d_head = 8
        assert!(derive_plan(&c).is_err());
        c = cfg(256, 256);
        c.init_std = 0.0;
        assert!(derive_plan(&c).is_err());
        c = cfg(256, 256);
        c.base_lr = f64::NAN;
        assert!(derive_plan(&c).is_err());
        c = cfg(256, 256);
        c.m_res = -0.5;
        assert!(derive_plan(&c).is_err());
    }

    #[test]
    fn plan_csv_lists_every_group() {
        let mut out = Vec::new();
        derive_plan(&cfg(256, 512)).unwrap().write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("group,lr,init_std,forward_multiplier"));
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("internal_matrix,0.0008,"));
    }

    proptest! {
        #[test]
        fn prop_internal_lr_times_width_multiplier_is_base_lr(
            log2_base in 3u32..9,
            log2_ratio in -3i32..4,
            base_lr in 1e-5f64..0.1,
        ) {
            // Exact for power-of-two width ratios, which is how width ladders
            // are laid out in practice.
            let d_base = 1usize << log2_base;
            let d_model = if log2_ratio >= 0 {
                d_base << log2_ratio
            } else {
                d_base >> (-log2_ratio) as usize
            };
            let c = MupConfig { d_head: 1, d_base, d_model, m_emb: 1.0, m_res: 1.0, init_std: 0.02, base_lr };
            let plans = derive_plan(&c).unwrap();
            let internal = plans.get(ParamGroup::InternalMatrix);
            prop_assert_eq!(internal.lr * c.width_multiplier(), plans.get(ParamGroup::InputEmbedding).lr);
            // Init variance law: std^2 * m_width is width-invariant.
            let variance_scaled = internal.init_std * internal.init_std * c.width_multiplier();
            prop_assert!((variance_scaled - 0.02 * 0.02).abs() < 1e-18);
        }

        #[test]
        fn prop_embedding_lr_is_width_independent(
            d_model1 in 1usize..2048,
            d_model2 in 1usize..2048,
            base_lr in 1e-5f64..0.1,
        ) {
            let mk = |d_model| MupConfig {
                d_base: 256, d_model, d_head: 1, m_emb: 1.0, m_res: 1.0, init_std: 0.02, base_lr,
            };
            let p1 = derive_plan(&mk(d_model1)).unwrap();
            let p2 = derive_plan(&mk(d_model2)).unwrap();
            prop_assert_eq!(p1.get(ParamGroup::InputEmbedding).lr, p2.get(ParamGroup::InputEmbedding).lr);
            prop_assert_eq!(p1.get(ParamGroup::OutputEmbedding).lr, p2.get(ParamGroup::OutputEmbedding).lr);
        }
    }
}
