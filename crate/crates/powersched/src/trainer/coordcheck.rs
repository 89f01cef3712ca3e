//! Coordinate check: residual-stream scale across widths at init.
//!
//! Under the width-scaling rules the typical activation size should be
//! roughly flat as `d_model` grows; under standard parameterization it
//! grows. Comparing the two curves is the cheap smoke test that the
//! per-group init scales and multipliers are wired correctly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{forward, Batch, Model, ModelConfig, Workspace};
use super::TrainerError;
use crate::mup::{attention_logit_scale, derive_plan, MupConfig, ParamGroup};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parameterization {
    /// Per-group init scales, `1/d_head` logits, and the configured
    /// multipliers.
    MuP,
    /// One init scale everywhere, `1/sqrt(d_head)` logits, multipliers 1.
    Standard,
}

/// Shape and init settings shared by every width in a coordinate check.
/// `m_emb`/`m_res` apply to the MuP arm only.
#[derive(Clone, Copy, Debug)]
pub struct CoordCheckSettings {
    pub d_base: usize,
    pub d_head: usize,
    pub n_layers: usize,
    /// `mlp_hidden = mlp_ratio * d_model`.
    pub mlp_ratio: usize,
    pub vocab_size: usize,
    pub sequence_length: usize,
    pub n_seqs: usize,
    pub init_std: f64,
    pub m_emb: f64,
    pub m_res: f64,
}

impl Default for CoordCheckSettings {
    fn default() -> Self {
        CoordCheckSettings {
            d_base: 32,
            d_head: 8,
            n_layers: 2,
            mlp_ratio: 2,
            vocab_size: 256,
            sequence_length: 16,
            n_seqs: 4,
            init_std: 0.02,
            m_emb: 1.0,
            m_res: 1.0,
        }
    }
}

/// For each width, initializes a fresh model (rng seeded `seed + width` so
/// widths are independent), runs one forward pass on a shared random token
/// batch (rng seeded `seed`), and returns `(width, residual RMS)` measured
/// just before the final norm.
pub fn coord_check(
    widths: &[usize],
    s: &CoordCheckSettings,
    parameterization: Parameterization,
    seed: u64,
) -> Result<Vec<(usize, f64)>, TrainerError> {
    if widths.is_empty() {
        return Err(TrainerError::InvalidModel {
            reason: "coord check needs at least one width".into(),
        });
    }
    let mut token_rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = s.n_seqs * s.sequence_length;
    let batch = Batch {
        inputs: (0..rows)
            .map(|_| token_rng.random_range(0..s.vocab_size as u32))
            .collect(),
        targets: vec![0; rows],
        n_seqs: s.n_seqs,
    };

    let mut out = Vec::with_capacity(widths.len());
    for &width in widths {
        if width % s.d_head != 0 {
            return Err(TrainerError::InvalidModel {
                reason: format!("width {width} is not a multiple of d_head {}", s.d_head),
            });
        }
        let mcfg = ModelConfig {
            n_layers: s.n_layers,
            d_model: width,
            n_heads: width / s.d_head,
            d_head: s.d_head,
            mlp_hidden: s.mlp_ratio * width,
            vocab_size: s.vocab_size,
            sequence_length: s.sequence_length,
        };
        let (inits, m_emb, m_res, logit_scale) = match parameterization {
            Parameterization::MuP => {
                let mup = MupConfig {
                    d_base: s.d_base,
                    d_model: width,
                    d_head: s.d_head,
                    m_emb: s.m_emb,
                    m_res: s.m_res,
                    init_std: s.init_std,
                    // Unused by init; any positive value validates.
                    base_lr: 1.0,
                };
                let plans = derive_plan(&mup)?;
                (
                    super::model::GroupInits {
                        emb_std: plans.get(ParamGroup::InputEmbedding).init_std,
                        head_std: plans.get(ParamGroup::OutputEmbedding).init_std,
                        internal_std: plans.get(ParamGroup::InternalMatrix).init_std,
                    },
                    s.m_emb,
                    s.m_res,
                    attention_logit_scale(s.d_head),
                )
            }
            Parameterization::Standard => (
                super::model::GroupInits {
                    emb_std: s.init_std,
                    head_std: s.init_std,
                    internal_std: s.init_std,
                },
                1.0,
                1.0,
                1.0 / (s.d_head as f64).sqrt(),
            ),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(width as u64));
        let model = Model::init_with(mcfg.clone(), inits, m_emb, m_res, logit_scale, &mut rng)?;
        let mut ws = Workspace::new(&mcfg, s.n_seqs);
        forward(&model, &mut ws, &batch);
        out.push((width, ws.residual_rms(s.n_seqs, &mcfg)));
    }
    Ok(out)
}
