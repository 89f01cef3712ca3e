//! AdamW with per-group learning rates and matrices-only weight decay.

use super::model::{Model, ModelConfig, ParamTensors, Slot};
use super::TrainerError;
use crate::mup::ParamGroup;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
}

/// Adam hyperparameters. Decay is decoupled and applies only to matrix
/// tensors (embeddings, head, attention and MLP weights), never to gains or
/// the head bias.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let err = |reason: String| Err(TrainerError::InvalidTrain { reason });
        if !(self.beta1 >= 0.0 && self.beta1 < 1.0) || !(self.beta2 >= 0.0 && self.beta2 < 1.0) {
            return err(format!(
                "adam betas must lie in [0, 1), got ({}, {})",
                self.beta1, self.beta2
            ));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return err(format!("adam eps must be positive and finite, got {}", self.eps));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return err(format!(
                "weight_decay must be non-negative and finite, got {}",
                self.weight_decay
            ));
        }
        Ok(())
    }
}

/// First and second moments plus the global step counter (1-based at the
/// first update, shared by every tensor for bias correction).
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: ParamTensors,
    pub v: ParamTensors,
    pub step: u64,
}

impl AdamState {
    pub fn new(cfg: &ModelConfig) -> AdamState {
        AdamState {
            m: ParamTensors::zeros(cfg),
            v: ParamTensors::zeros(cfg),
            step: 0,
        }
    }
}

/// One AdamW update. `base_lr` is the schedule's current learning rate;
/// internal matrices train at `base_lr / m_width`, embeddings and vector
/// parameters at `base_lr`.
pub fn adamw_step(
    model: &mut Model,
    grads: &ParamTensors,
    st: &mut AdamState,
    opt: &OptimizerConfig,
    base_lr: f64,
    m_width: f64,
) {
    st.step += 1;
    let t = st.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    for slot in Slot::all(model.cfg.n_layers) {
        let lr = match slot.group() {
            ParamGroup::InternalMatrix => base_lr / m_width,
            ParamGroup::InputEmbedding
            | ParamGroup::OutputEmbedding
            | ParamGroup::VectorParams => base_lr,
        };
        let wd = if slot.decayed() { opt.weight_decay } else { 0.0 };
        let g = grads.get(slot);
        let m = st.m.get_mut(slot);
        let v = st.v.get_mut(slot);
        let theta = model.params.get_mut(slot);
        for i in 0..theta.len() {
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            theta[i] -= lr * (mhat / (vhat.sqrt() + opt.eps) + wd * theta[i]);
        }
    }
}
