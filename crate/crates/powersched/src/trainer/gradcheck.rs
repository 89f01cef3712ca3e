//! Central-difference verification of the analytic backward pass.

use super::model::{backward, forward, loss_from_logits, Batch, ParamTensors, Slot, Workspace};
use super::train::TrainState;

/// Compares the analytic gradient of every parameter coordinate against the
/// central difference `(L(θ+ε) − L(θ−ε)) / 2ε` and returns the maximum
/// relative error `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)`.
///
/// Every coordinate runs two forward passes, so this is meant for tiny
/// configs (a few thousand parameters).
pub fn grad_check(state: &mut TrainState, batch: &Batch, epsilon: f64) -> f64 {
    let cfg = state.model.cfg.clone();
    let mut ws = Workspace::new(&cfg, batch.n_seqs);

    forward(&state.model, &mut ws, batch);
    loss_from_logits(&mut ws, batch, cfg.vocab_size);
    let mut grads = ParamTensors::zeros(&cfg);
    backward(&state.model, &mut ws, batch, &mut grads);

    let loss_at = |state: &TrainState, ws: &mut Workspace| {
        forward(&state.model, ws, batch);
        loss_from_logits(ws, batch, cfg.vocab_size)
    };

    let mut max_rel = 0.0f64;
    for slot in Slot::all(cfg.n_layers) {
        for i in 0..grads.get(slot).len() {
            let orig = state.model.params.get(slot)[i];
            state.model.params.get_mut(slot)[i] = orig + epsilon;
            let plus = loss_at(state, &mut ws);
            state.model.params.get_mut(slot)[i] = orig - epsilon;
            let minus = loss_at(state, &mut ws);
            state.model.params.get_mut(slot)[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = grads.get(slot)[i];
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}
