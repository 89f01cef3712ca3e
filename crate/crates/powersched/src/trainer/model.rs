//! Model definition, parameter storage, init, and the forward/backward pass.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::math::{matmul_nn, matmul_nn_over, matmul_tn, transpose};
use super::TrainerError;
use crate::mup::ParamGroup;

const RMS_EPS: f64 = 1e-12;
const ROPE_BASE: f64 = 10_000.0;

/// Architecture hyperparameters. `d_model` must equal `n_heads * d_head`,
/// and `d_head` must be even so rotary positions can act on pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub mlp_hidden: usize,
    pub vocab_size: usize,
    pub sequence_length: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let err = |reason: String| Err(TrainerError::InvalidModel { reason });
        if self.n_layers == 0 {
            return err("n_layers must be at least 1".into());
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_head == 0 || self.mlp_hidden == 0 {
            return err("dimensions must be positive".into());
        }
        if self.d_model != self.n_heads * self.d_head {
            return err(format!(
                "d_model ({}) must equal n_heads * d_head ({} * {})",
                self.d_model, self.n_heads, self.d_head
            ));
        }
        if self.d_head % 2 != 0 {
            return err(format!(
                "d_head ({}) must be even for rotary position pairs",
                self.d_head
            ));
        }
        if self.vocab_size < 2 {
            return err(format!("vocab_size ({}) must be at least 2", self.vocab_size));
        }
        if self.vocab_size > 256 {
            return err(format!(
                "vocab_size ({}) exceeds the byte tokenizer's 256 symbols",
                self.vocab_size
            ));
        }
        if self.sequence_length == 0 {
            return err("sequence_length must be at least 1".into());
        }
        Ok(())
    }

    /// Parameter count over all tensors, for reporting.
    pub fn n_params(&self) -> usize {
        Slot::all(self.n_layers)
            .iter()
            .map(|s| {
                let (r, c) = s.shape(self);
                r * c
            })
            .sum()
    }
}

/// Names one parameter tensor. The order of [`Slot::all`] fixes both the
/// init sampling order and the checkpoint layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Emb,
    AttnGain(usize),
    Wq(usize),
    Wk(usize),
    Wv(usize),
    Wo(usize),
    MlpGain(usize),
    WGate(usize),
    WUp(usize),
    WDown(usize),
    FinalGain,
    Head,
    HeadBias,
}

impl Slot {
    pub fn all(n_layers: usize) -> Vec<Slot> {
        let mut v = vec![Slot::Emb];
        for l in 0..n_layers {
            v.extend([
                Slot::AttnGain(l),
                Slot::Wq(l),
                Slot::Wk(l),
                Slot::Wv(l),
                Slot::Wo(l),
                Slot::MlpGain(l),
                Slot::WGate(l),
                Slot::WUp(l),
                Slot::WDown(l),
            ]);
        }
        v.extend([Slot::FinalGain, Slot::Head, Slot::HeadBias]);
        v
    }

    /// `(rows, cols)`; vectors are `(1, len)`. Weights are stored row-major
    /// as `[d_in, d_out]` and applied as `y = x * W` on row-vector
    /// activations.
    pub fn shape(self, cfg: &ModelConfig) -> (usize, usize) {
        let d = cfg.d_model;
        let h = cfg.mlp_hidden;
        let v = cfg.vocab_size;
        match self {
            Slot::Emb => (v, d),
            Slot::AttnGain(_) | Slot::MlpGain(_) | Slot::FinalGain => (1, d),
            Slot::Wq(_) | Slot::Wk(_) | Slot::Wv(_) | Slot::Wo(_) => (d, d),
            Slot::WGate(_) | Slot::WUp(_) => (d, h),
            Slot::WDown(_) => (h, d),
            Slot::Head => (d, v),
            Slot::HeadBias => (1, v),
        }
    }

    /// Which learning-rate/init group the tensor belongs to.
    pub fn group(self) -> ParamGroup {
        match self {
            Slot::Emb => ParamGroup::InputEmbedding,
            Slot::Head => ParamGroup::OutputEmbedding,
            Slot::AttnGain(_) | Slot::MlpGain(_) | Slot::FinalGain | Slot::HeadBias => {
                ParamGroup::VectorParams
            }
            _ => ParamGroup::InternalMatrix,
        }
    }

    /// True for the tensors that receive weight decay (matrices only).
    pub fn decayed(self) -> bool {
        !matches!(self.group(), ParamGroup::VectorParams)
    }

    pub fn name(self) -> String {
        match self {
            Slot::Emb => "emb".into(),
            Slot::AttnGain(l) => format!("block{l}.attn_gain"),
            Slot::Wq(l) => format!("block{l}.wq"),
            Slot::Wk(l) => format!("block{l}.wk"),
            Slot::Wv(l) => format!("block{l}.wv"),
            Slot::Wo(l) => format!("block{l}.wo"),
            Slot::MlpGain(l) => format!("block{l}.mlp_gain"),
            Slot::WGate(l) => format!("block{l}.w_gate"),
            Slot::WUp(l) => format!("block{l}.w_up"),
            Slot::WDown(l) => format!("block{l}.w_down"),
            Slot::FinalGain => "final_gain".into(),
            Slot::Head => "head".into(),
            Slot::HeadBias => "head_bias".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockParams {
    pub attn_gain: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub mlp_gain: Vec<f64>,
    pub w_gate: Vec<f64>,
    pub w_up: Vec<f64>,
    pub w_down: Vec<f64>,
}

/// All parameter tensors of one model; also reused for gradients and Adam
/// moments so the same slot addressing works everywhere.
#[derive(Clone, Debug)]
pub struct ParamTensors {
    pub emb: Vec<f64>,
    pub blocks: Vec<BlockParams>,
    pub final_gain: Vec<f64>,
    pub head: Vec<f64>,
    pub head_bias: Vec<f64>,
}

impl ParamTensors {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let zl = |slot: Slot| {
            let (r, c) = slot.shape(cfg);
            vec![0.0; r * c]
        };
        ParamTensors {
            emb: zl(Slot::Emb),
            blocks: (0..cfg.n_layers)
                .map(|l| BlockParams {
                    attn_gain: zl(Slot::AttnGain(l)),
                    wq: zl(Slot::Wq(l)),
                    wk: zl(Slot::Wk(l)),
                    wv: zl(Slot::Wv(l)),
                    wo: zl(Slot::Wo(l)),
                    mlp_gain: zl(Slot::MlpGain(l)),
                    w_gate: zl(Slot::WGate(l)),
                    w_up: zl(Slot::WUp(l)),
                    w_down: zl(Slot::WDown(l)),
                })
                .collect(),
            final_gain: zl(Slot::FinalGain),
            head: zl(Slot::Head),
            head_bias: zl(Slot::HeadBias),
        }
    }

    pub fn get(&self, slot: Slot) -> &[f64] {
        match slot {
            Slot::Emb => &self.emb,
            Slot::AttnGain(l) => &self.blocks[l].attn_gain,
            Slot::Wq(l) => &self.blocks[l].wq,
            Slot::Wk(l) => &self.blocks[l].wk,
            Slot::Wv(l) => &self.blocks[l].wv,
            Slot::Wo(l) => &self.blocks[l].wo,
            Slot::MlpGain(l) => &self.blocks[l].mlp_gain,
            Slot::WGate(l) => &self.blocks[l].w_gate,
            Slot::WUp(l) => &self.blocks[l].w_up,
            Slot::WDown(l) => &self.blocks[l].w_down,
            Slot::FinalGain => &self.final_gain,
            Slot::Head => &self.head,
            Slot::HeadBias => &self.head_bias,
        }
    }

    pub fn get_mut(&mut self, slot: Slot) -> &mut Vec<f64> {
        match slot {
            Slot::Emb => &mut self.emb,
            Slot::AttnGain(l) => &mut self.blocks[l].attn_gain,
            Slot::Wq(l) => &mut self.blocks[l].wq,
            Slot::Wk(l) => &mut self.blocks[l].wk,
            Slot::Wv(l) => &mut self.blocks[l].wv,
            Slot::Wo(l) => &mut self.blocks[l].wo,
            Slot::MlpGain(l) => &mut self.blocks[l].mlp_gain,
            Slot::WGate(l) => &mut self.blocks[l].w_gate,
            Slot::WUp(l) => &mut self.blocks[l].w_up,
            Slot::WDown(l) => &mut self.blocks[l].w_down,
            Slot::FinalGain => &mut self.final_gain,
            Slot::Head => &mut self.head,
            Slot::HeadBias => &mut self.head_bias,
        }
    }

    pub fn zero_fill(&mut self, cfg: &ModelConfig) {
        for slot in Slot::all(cfg.n_layers) {
            self.get_mut(slot).fill(0.0);
        }
    }

    pub fn all_finite(&self, cfg: &ModelConfig) -> bool {
        Slot::all(cfg.n_layers)
            .into_iter()
            .all(|s| self.get(s).iter().all(|x| x.is_finite()))
    }
}

/// Per-group init standard deviations, in the trainer's own terms so the
/// standard-parameterization baseline can reuse the same constructor.
#[derive(Clone, Copy, Debug)]
pub(super) struct GroupInits {
    pub emb_std: f64,
    pub head_std: f64,
    pub internal_std: f64,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamTensors,
    /// Multiplies the embedding output before the first block.
    pub m_emb: f64,
    /// Multiplies each branch (attention and MLP) output before its
    /// residual add.
    pub m_res: f64,
    /// Multiplies attention logits; `1/d_head` under the width-scaling
    /// rules, `1/sqrt(d_head)` in the standard baseline.
    pub logit_scale: f64,
    rope_cos: Vec<f64>,
    rope_sin: Vec<f64>,
}

impl Model {
    /// Builds and initializes a model, drawing matrix entries from the rng
    /// in [`Slot::all`] order. Gains start at 1, the head bias at 0.
    pub(super) fn init_with(
        cfg: ModelConfig,
        inits: GroupInits,
        m_emb: f64,
        m_res: f64,
        logit_scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Model, TrainerError> {
        cfg.validate()?;
        let mut params = ParamTensors::zeros(&cfg);
        for slot in Slot::all(cfg.n_layers) {
            let std = match slot.group() {
                ParamGroup::InputEmbedding => inits.emb_std,
                ParamGroup::OutputEmbedding => inits.head_std,
                ParamGroup::InternalMatrix => inits.internal_std,
                ParamGroup::VectorParams => {
                    let fill = match slot {
                        Slot::HeadBias => 0.0,
                        _ => 1.0,
                    };
                    params.get_mut(slot).fill(fill);
                    continue;
                }
            };
            let dist = Normal::new(0.0, std).map_err(|e| TrainerError::InvalidModel {
                reason: format!("init std {std} for {}: {e}", slot.name()),
            })?;
            for w in params.get_mut(slot).iter_mut() {
                *w = dist.sample(rng);
            }
        }
        let (rope_cos, rope_sin) = rope_tables(cfg.sequence_length, cfg.d_head);
        Ok(Model {
            cfg,
            params,
            m_emb,
            m_res,
            logit_scale,
            rope_cos,
            rope_sin,
        })
    }

    /// Rebuilds the derived rotary tables, e.g. after loading a checkpoint.
    pub(super) fn from_parts(
        cfg: ModelConfig,
        params: ParamTensors,
        m_emb: f64,
        m_res: f64,
        logit_scale: f64,
    ) -> Model {
        let (rope_cos, rope_sin) = rope_tables(cfg.sequence_length, cfg.d_head);
        Model {
            cfg,
            params,
            m_emb,
            m_res,
            logit_scale,
            rope_cos,
            rope_sin,
        }
    }
}

fn rope_tables(seq: usize, d_head: usize) -> (Vec<f64>, Vec<f64>) {
    let half = d_head / 2;
    let mut cos = vec![0.0; seq * half];
    let mut sin = vec![0.0; seq * half];
    for pos in 0..seq {
        for i in 0..half {
            let freq = ROPE_BASE.powf(-2.0 * i as f64 / d_head as f64);
            let angle = pos as f64 * freq;
            cos[pos * half + i] = angle.cos();
            sin[pos * half + i] = angle.sin();
        }
    }
    (cos, sin)
}

/// One training batch: `n_seqs` windows of `sequence_length` tokens each,
/// flattened row-major, with `targets[i]` the next byte after `inputs[i]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    pub n_seqs: usize,
}

struct LayerCache {
    x_in: Vec<f64>,
    norm1: Vec<f64>,
    inv_rms1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    x_mid: Vec<f64>,
    norm2: Vec<f64>,
    inv_rms2: Vec<f64>,
    gate_pre: Vec<f64>,
    sig: Vec<f64>,
    up: Vec<f64>,
    act: Vec<f64>,
}

/// Preallocated activations and scratch for up to `max_seqs` sequences.
/// One workspace serves alternating forward/backward calls; nothing inside
/// survives across calls.
pub struct Workspace {
    max_seqs: usize,
    x: Vec<f64>,
    xfn: Vec<f64>,
    inv_rms_f: Vec<f64>,
    logits: Vec<f64>,
    dlogits: Vec<f64>,
    branch: Vec<f64>,
    dx: Vec<f64>,
    dnorm: Vec<f64>,
    dq: Vec<f64>,
    dk: Vec<f64>,
    dv: Vec<f64>,
    dctx: Vec<f64>,
    dh1: Vec<f64>,
    dh2: Vec<f64>,
    wtrans: Vec<f64>,
    qh: Vec<f64>,
    kh: Vec<f64>,
    vh: Vec<f64>,
    kt: Vec<f64>,
    vt: Vec<f64>,
    ctxh: Vec<f64>,
    dqh: Vec<f64>,
    dkh: Vec<f64>,
    dvh: Vec<f64>,
    dctxh: Vec<f64>,
    dprobs: Vec<f64>,
    layers: Vec<LayerCache>,
}

impl Workspace {
    pub fn new(cfg: &ModelConfig, max_seqs: usize) -> Workspace {
        let s = cfg.sequence_length;
        let rows = max_seqs * s;
        let d = cfg.d_model;
        let h = cfg.mlp_hidden;
        let v = cfg.vocab_size;
        let dh = cfg.d_head;
        let wt = (d * d).max(d * h).max(d * v);
        let layer = || LayerCache {
            x_in: vec![0.0; rows * d],
            norm1: vec![0.0; rows * d],
            inv_rms1: vec![0.0; rows],
            q: vec![0.0; rows * d],
            k: vec![0.0; rows * d],
            v: vec![0.0; rows * d],
            probs: vec![0.0; max_seqs * cfg.n_heads * s * s],
            ctx: vec![0.0; rows * d],
            x_mid: vec![0.0; rows * d],
            norm2: vec![0.0; rows * d],
            inv_rms2: vec![0.0; rows],
            gate_pre: vec![0.0; rows * h],
            sig: vec![0.0; rows * h],
            up: vec![0.0; rows * h],
            act: vec![0.0; rows * h],
        };
        Workspace {
            max_seqs,
            x: vec![0.0; rows * d],
            xfn: vec![0.0; rows * d],
            inv_rms_f: vec![0.0; rows],
            logits: vec![0.0; rows * v],
            dlogits: vec![0.0; rows * v],
            branch: vec![0.0; rows * d],
            dx: vec![0.0; rows * d],
            dnorm: vec![0.0; rows * d],
            dq: vec![0.0; rows * d],
            dk: vec![0.0; rows * d],
            dv: vec![0.0; rows * d],
            dctx: vec![0.0; rows * d],
            dh1: vec![0.0; rows * h],
            dh2: vec![0.0; rows * h],
            wtrans: vec![0.0; wt],
            qh: vec![0.0; s * dh],
            kh: vec![0.0; s * dh],
            vh: vec![0.0; s * dh],
            kt: vec![0.0; s * dh],
            vt: vec![0.0; s * dh],
            ctxh: vec![0.0; s * dh],
            dqh: vec![0.0; s * dh],
            dkh: vec![0.0; s * dh],
            dvh: vec![0.0; s * dh],
            dctxh: vec![0.0; s * dh],
            dprobs: vec![0.0; s * s],
            layers: (0..cfg.n_layers).map(|_| layer()).collect(),
        }
    }

    /// Residual-stream RMS before the final norm, over the rows of the last
    /// forward call. Used by the coordinate check.
    pub fn residual_rms(&self, n_seqs: usize, cfg: &ModelConfig) -> f64 {
        let rows = n_seqs * cfg.sequence_length;
        let x = &self.x[..rows * cfg.d_model];
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }
}

/// `y[r] = x[r]/rms(x[r]) * gain`, recording `1/rms` per row.
fn rmsnorm_forward(
    x: &[f64],
    gain: &[f64],
    y: &mut [f64],
    inv_rms: &mut [f64],
    rows: usize,
    d: usize,
) {
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let ms = xr.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let inv = 1.0 / (ms + RMS_EPS).sqrt();
        inv_rms[r] = inv;
        let yr = &mut y[r * d..(r + 1) * d];
        for j in 0..d {
            yr[j] = xr[j] * inv * gain[j];
        }
    }
}

/// Backward of [`rmsnorm_forward`]: consumes `dy` in place, leaving `dL/dx`
/// there, and accumulates the gain gradient.
fn rmsnorm_backward(
    x: &[f64],
    gain: &[f64],
    inv_rms: &[f64],
    dy: &mut [f64],
    ggain: &mut [f64],
    rows: usize,
    d: usize,
) {
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let inv = inv_rms[r];
        let dyr = &mut dy[r * d..(r + 1) * d];
        let mut s = 0.0;
        for j in 0..d {
            ggain[j] += dyr[j] * xr[j] * inv;
            dyr[j] *= gain[j];
            s += dyr[j] * xr[j];
        }
        let scale = s * inv * inv * inv / d as f64;
        for j in 0..d {
            dyr[j] = dyr[j] * inv - xr[j] * scale;
        }
    }
}

fn rope_apply(x: &mut [f64], rows: usize, cfg: &ModelConfig, cos: &[f64], sin: &[f64]) {
    let d = cfg.d_model;
    let dh = cfg.d_head;
    let half = dh / 2;
    let s = cfg.sequence_length;
    for r in 0..rows {
        let pos = r % s;
        let (cr, sr) = (&cos[pos * half..], &sin[pos * half..]);
        for head in 0..cfg.n_heads {
            let base = r * d + head * dh;
            for i in 0..half {
                let a = x[base + 2 * i];
                let b = x[base + 2 * i + 1];
                x[base + 2 * i] = a * cr[i] - b * sr[i];
                x[base + 2 * i + 1] = a * sr[i] + b * cr[i];
            }
        }
    }
}

/// Gradient of [`rope_apply`]: rotation is orthogonal, so the backward map
/// is the inverse rotation.
fn rope_unapply(x: &mut [f64], rows: usize, cfg: &ModelConfig, cos: &[f64], sin: &[f64]) {
    let d = cfg.d_model;
    let dh = cfg.d_head;
    let half = dh / 2;
    let s = cfg.sequence_length;
    for r in 0..rows {
        let pos = r % s;
        let (cr, sr) = (&cos[pos * half..], &sin[pos * half..]);
        for head in 0..cfg.n_heads {
            let base = r * d + head * dh;
            for i in 0..half {
                let a = x[base + 2 * i];
                let b = x[base + 2 * i + 1];
                x[base + 2 * i] = a * cr[i] + b * sr[i];
                x[base + 2 * i + 1] = -a * sr[i] + b * cr[i];
            }
        }
    }
}

fn gather_head(dst: &mut [f64], src: &[f64], seq_idx: usize, head: usize, cfg: &ModelConfig) {
    let s = cfg.sequence_length;
    let d = cfg.d_model;
    let dh = cfg.d_head;
    for t in 0..s {
        let r = seq_idx * s + t;
        dst[t * dh..(t + 1) * dh].copy_from_slice(&src[r * d + head * dh..r * d + (head + 1) * dh]);
    }
}

fn scatter_head(dst: &mut [f64], src: &[f64], seq_idx: usize, head: usize, cfg: &ModelConfig) {
    let s = cfg.sequence_length;
    let d = cfg.d_model;
    let dh = cfg.d_head;
    for t in 0..s {
        let r = seq_idx * s + t;
        dst[r * d + head * dh..r * d + (head + 1) * dh].copy_from_slice(&src[t * dh..(t + 1) * dh]);
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Runs the model over `batch`, filling the workspace with activations and
/// logits. Assumes token ids are `< vocab_size` (the trainer validates the
/// corpus once up front).
pub fn forward(model: &Model, ws: &mut Workspace, batch: &Batch) {
    let cfg = &model.cfg;
    let s = cfg.sequence_length;
    let d = cfg.d_model;
    let h = cfg.mlp_hidden;
    let v = cfg.vocab_size;
    let n_seqs = batch.n_seqs;
    let rows = n_seqs * s;
    assert!(n_seqs >= 1 && n_seqs <= ws.max_seqs, "batch exceeds workspace");
    assert_eq!(batch.inputs.len(), rows);

    // Embedding lookup with the embedding-output multiplier.
    for (r, &tok) in batch.inputs.iter().enumerate() {
        let erow = &model.params.emb[tok as usize * d..(tok as usize + 1) * d];
        let xr = &mut ws.x[r * d..(r + 1) * d];
        for j in 0..d {
            xr[j] = model.m_emb * erow[j];
        }
    }

    for (l, cache) in ws.layers.iter_mut().enumerate() {
        let p = &model.params.blocks[l];
        cache.x_in[..rows * d].copy_from_slice(&ws.x[..rows * d]);

        // Attention branch.
        rmsnorm_forward(
            &cache.x_in,
            &p.attn_gain,
            &mut cache.norm1,
            &mut cache.inv_rms1,
            rows,
            d,
        );
        matmul_nn_over(&mut cache.q[..rows * d], &cache.norm1[..rows * d], &p.wq, rows, d, d);
        matmul_nn_over(&mut cache.k[..rows * d], &cache.norm1[..rows * d], &p.wk, rows, d, d);
        matmul_nn_over(&mut cache.v[..rows * d], &cache.norm1[..rows * d], &p.wv, rows, d, d);
        rope_apply(&mut cache.q, rows, cfg, &model.rope_cos, &model.rope_sin);
        rope_apply(&mut cache.k, rows, cfg, &model.rope_cos, &model.rope_sin);

        let dh = cfg.d_head;
        for seq_idx in 0..n_seqs {
            for head in 0..cfg.n_heads {
                gather_head(&mut ws.qh, &cache.q, seq_idx, head, cfg);
                gather_head(&mut ws.kh, &cache.k, seq_idx, head, cfg);
                gather_head(&mut ws.vh, &cache.v, seq_idx, head, cfg);
                transpose(&mut ws.kt, &ws.kh, s, dh);
                let pslice = &mut cache.probs
                    [(seq_idx * cfg.n_heads + head) * s * s..(seq_idx * cfg.n_heads + head + 1) * s * s];
                matmul_nn_over(pslice, &ws.qh, &ws.kt, s, dh, s);
                // Causal softmax over positions 0..=i; future slots stay 0.
                for i in 0..s {
                    let row = &mut pslice[i * s..(i + 1) * s];
                    let mut mx = f64::NEG_INFINITY;
                    for rv in row[..=i].iter_mut() {
                        *rv *= model.logit_scale;
                        mx = mx.max(*rv);
                    }
                    let mut sum = 0.0;
                    for rv in row[..=i].iter_mut() {
                        *rv = (*rv - mx).exp();
                        sum += *rv;
                    }
                    let inv = 1.0 / sum;
                    for rv in row[..=i].iter_mut() {
                        *rv *= inv;
                    }
                    row[i + 1..].fill(0.0);
                }
                matmul_nn_over(&mut ws.ctxh, pslice, &ws.vh, s, s, dh);
                scatter_head(&mut cache.ctx, &ws.ctxh, seq_idx, head, cfg);
            }
        }
        matmul_nn_over(&mut ws.branch[..rows * d], &cache.ctx[..rows * d], &p.wo, rows, d, d);
        for (xj, bj) in ws.x[..rows * d].iter_mut().zip(&ws.branch[..rows * d]) {
            *xj += model.m_res * bj;
        }
        cache.x_mid[..rows * d].copy_from_slice(&ws.x[..rows * d]);

        // MLP branch (swiglu: silu(x W_gate) ⊙ (x W_up), then W_down).
        rmsnorm_forward(
            &cache.x_mid,
            &p.mlp_gain,
            &mut cache.norm2,
            &mut cache.inv_rms2,
            rows,
            d,
        );
        matmul_nn_over(&mut cache.gate_pre[..rows * h], &cache.norm2[..rows * d], &p.w_gate, rows, d, h);
        matmul_nn_over(&mut cache.up[..rows * h], &cache.norm2[..rows * d], &p.w_up, rows, d, h);
        for i in 0..rows * h {
            let g = cache.gate_pre[i];
            let sg = sigmoid(g);
            cache.sig[i] = sg;
            cache.act[i] = g * sg * cache.up[i];
        }
        matmul_nn_over(&mut ws.branch[..rows * d], &cache.act[..rows * h], &p.w_down, rows, h, d);
        for (xj, bj) in ws.x[..rows * d].iter_mut().zip(&ws.branch[..rows * d]) {
            *xj += model.m_res * bj;
        }
    }

    rmsnorm_forward(
        &ws.x,
        &model.params.final_gain,
        &mut ws.xfn,
        &mut ws.inv_rms_f,
        rows,
        d,
    );
    matmul_nn_over(&mut ws.logits[..rows * v], &ws.xfn[..rows * d], &model.params.head, rows, d, v);
    for r in 0..rows {
        let lr = &mut ws.logits[r * v..(r + 1) * v];
        for j in 0..v {
            lr[j] += model.params.head_bias[j];
        }
    }
}

/// Mean cross-entropy (nats per token) over the batch, leaving
/// `d(loss)/d(logits)` in the workspace for a following backward pass.
pub fn loss_from_logits(ws: &mut Workspace, batch: &Batch, vocab: usize) -> f64 {
    let rows = batch.inputs.len();
    let inv_rows = 1.0 / rows as f64;
    let mut total = 0.0;
    for (r, &target) in batch.targets.iter().enumerate() {
        let lr = &ws.logits[r * vocab..(r + 1) * vocab];
        let dr = &mut ws.dlogits[r * vocab..(r + 1) * vocab];
        let mx = lr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..vocab {
            let e = (lr[j] - mx).exp();
            dr[j] = e;
            sum += e;
        }
        let lse = mx + sum.ln();
        total += lse - lr[target as usize];
        let inv = 1.0 / sum;
        for dj in dr.iter_mut() {
            *dj *= inv * inv_rows;
        }
        dr[target as usize] -= inv_rows;
    }
    total * inv_rows
}

/// Accumulates parameter gradients for the batch most recently run through
/// [`forward`] and [`loss_from_logits`]. Callers zero `grads` first.
pub fn backward(model: &Model, ws: &mut Workspace, batch: &Batch, grads: &mut ParamTensors) {
    let cfg = &model.cfg;
    let s = cfg.sequence_length;
    let d = cfg.d_model;
    let h = cfg.mlp_hidden;
    let v = cfg.vocab_size;
    let dh = cfg.d_head;
    let n_seqs = batch.n_seqs;
    let rows = n_seqs * s;

    // Head and bias.
    matmul_tn(&mut grads.head, &ws.xfn[..rows * d], &ws.dlogits[..rows * v], rows, d, v);
    for r in 0..rows {
        let dr = &ws.dlogits[r * v..(r + 1) * v];
        for j in 0..v {
            grads.head_bias[j] += dr[j];
        }
    }
    let headt = &mut ws.wtrans[..d * v];
    transpose(headt, &model.params.head, d, v);
    matmul_nn_over(&mut ws.dx[..rows * d], &ws.dlogits[..rows * v], headt, rows, v, d);

    // Final norm; ws.x still holds the final residual stream.
    rmsnorm_backward(
        &ws.x,
        &model.params.final_gain,
        &ws.inv_rms_f,
        &mut ws.dx,
        &mut grads.final_gain,
        rows,
        d,
    );

    for l in (0..cfg.n_layers).rev() {
        let cache = &ws.layers[l];
        let p = &model.params.blocks[l];
        let g = &mut grads.blocks[l];

        // MLP branch backward. dx currently holds dL/d(x_out).
        for (bj, dj) in ws.branch[..rows * d].iter_mut().zip(&ws.dx[..rows * d]) {
            *bj = model.m_res * dj;
        }
        matmul_tn(&mut g.w_down, &cache.act[..rows * h], &ws.branch[..rows * d], rows, h, d);
        let wt = &mut ws.wtrans[..h * d];
        transpose(wt, &p.w_down, h, d);
        matmul_nn_over(&mut ws.dh1[..rows * h], &ws.branch[..rows * d], wt, rows, d, h);
        // dh1 = dact; split into dgate (dh1, in place) and dup (dh2).
        for i in 0..rows * h {
            let dact = ws.dh1[i];
            let gp = cache.gate_pre[i];
            let sg = cache.sig[i];
            ws.dh2[i] = dact * gp * sg;
            ws.dh1[i] = dact * cache.up[i] * sg * (1.0 + gp * (1.0 - sg));
        }
        matmul_tn(&mut g.w_gate, &cache.norm2[..rows * d], &ws.dh1[..rows * h], rows, d, h);
        matmul_tn(&mut g.w_up, &cache.norm2[..rows * d], &ws.dh2[..rows * h], rows, d, h);
        let wt = &mut ws.wtrans[..d * h];
        transpose(wt, &p.w_gate, d, h);
        matmul_nn_over(&mut ws.dnorm[..rows * d], &ws.dh1[..rows * h], wt, rows, h, d);
        transpose(wt, &p.w_up, d, h);
        matmul_nn(&mut ws.dnorm[..rows * d], &ws.dh2[..rows * h], wt, rows, h, d);
        rmsnorm_backward(
            &cache.x_mid,
            &p.mlp_gain,
            &cache.inv_rms2,
            &mut ws.dnorm,
            &mut g.mlp_gain,
            rows,
            d,
        );
        for (dj, nj) in ws.dx[..rows * d].iter_mut().zip(&ws.dnorm[..rows * d]) {
            *dj += nj;
        }

        // Attention branch backward. dx now holds dL/d(x_mid).
        for (bj, dj) in ws.branch[..rows * d].iter_mut().zip(&ws.dx[..rows * d]) {
            *bj = model.m_res * dj;
        }
        matmul_tn(&mut g.wo, &cache.ctx[..rows * d], &ws.branch[..rows * d], rows, d, d);
        let wt = &mut ws.wtrans[..d * d];
        transpose(wt, &p.wo, d, d);
        matmul_nn_over(&mut ws.dctx[..rows * d], &ws.branch[..rows * d], wt, rows, d, d);

        for seq_idx in 0..n_seqs {
            for head in 0..cfg.n_heads {
                gather_head(&mut ws.dctxh, &ws.dctx, seq_idx, head, cfg);
                gather_head(&mut ws.qh, &cache.q, seq_idx, head, cfg);
                gather_head(&mut ws.kh, &cache.k, seq_idx, head, cfg);
                gather_head(&mut ws.vh, &cache.v, seq_idx, head, cfg);
                let pslice = &cache.probs
                    [(seq_idx * cfg.n_heads + head) * s * s..(seq_idx * cfg.n_heads + head + 1) * s * s];
                ws.dvh.fill(0.0);
                matmul_tn(&mut ws.dvh, pslice, &ws.dctxh, s, s, dh);
                transpose(&mut ws.vt, &ws.vh, s, dh);
                matmul_nn_over(&mut ws.dprobs, &ws.dctxh, &ws.vt, s, dh, s);
                // Softmax backward per causal row, then the logit scale.
                for i in 0..s {
                    let pr = &pslice[i * s..(i + 1) * s];
                    let dr = &mut ws.dprobs[i * s..(i + 1) * s];
                    let dot: f64 = pr[..=i].iter().zip(&dr[..=i]).map(|(p, dp)| p * dp).sum();
                    for j in 0..=i {
                        dr[j] = pr[j] * (dr[j] - dot) * model.logit_scale;
                    }
                    dr[i + 1..].fill(0.0);
                }
                matmul_nn_over(&mut ws.dqh, &ws.dprobs, &ws.kh, s, s, dh);
                ws.dkh.fill(0.0);
                matmul_tn(&mut ws.dkh, &ws.dprobs, &ws.qh, s, s, dh);
                scatter_head(&mut ws.dq, &ws.dqh, seq_idx, head, cfg);
                scatter_head(&mut ws.dk, &ws.dkh, seq_idx, head, cfg);
                scatter_head(&mut ws.dv, &ws.dvh, seq_idx, head, cfg);
            }
        }
        rope_unapply(&mut ws.dq, rows, cfg, &model.rope_cos, &model.rope_sin);
        rope_unapply(&mut ws.dk, rows, cfg, &model.rope_cos, &model.rope_sin);

        matmul_tn(&mut g.wq, &cache.norm1[..rows * d], &ws.dq[..rows * d], rows, d, d);
        matmul_tn(&mut g.wk, &cache.norm1[..rows * d], &ws.dk[..rows * d], rows, d, d);
        matmul_tn(&mut g.wv, &cache.norm1[..rows * d], &ws.dv[..rows * d], rows, d, d);
        let wt = &mut ws.wtrans[..d * d];
        transpose(wt, &p.wq, d, d);
        matmul_nn_over(&mut ws.dnorm[..rows * d], &ws.dq[..rows * d], wt, rows, d, d);
        transpose(wt, &p.wk, d, d);
        matmul_nn(&mut ws.dnorm[..rows * d], &ws.dk[..rows * d], wt, rows, d, d);
        transpose(wt, &p.wv, d, d);
        matmul_nn(&mut ws.dnorm[..rows * d], &ws.dv[..rows * d], wt, rows, d, d);
        rmsnorm_backward(
            &cache.x_in,
            &p.attn_gain,
            &cache.inv_rms1,
            &mut ws.dnorm,
            &mut g.attn_gain,
            rows,
            d,
        );
        for (dj, nj) in ws.dx[..rows * d].iter_mut().zip(&ws.dnorm[..rows * d]) {
            *dj += nj;
        }
    }

    // Embedding gradient through the output multiplier.
    for (r, &tok) in batch.inputs.iter().enumerate() {
        let erow = &mut grads.emb[tok as usize * d..(tok as usize + 1) * d];
        let dxr = &ws.dx[r * d..(r + 1) * d];
        for j in 0..d {
            erow[j] += model.m_emb * dxr[j];
        }
    }
}
