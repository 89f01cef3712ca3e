//! Single-file model checkpoints.
//!
//! Layout, all little-endian:
//!
//! | bytes        | content                                          |
//! |--------------|--------------------------------------------------|
//! | 0..8         | magic `b"PSCKPT01"`                              |
//! | 8..16        | `u64` header length in bytes                     |
//! | 16..16+len   | JSON header (see [`Header`])                     |
//! | rest         | `f64` tensor payloads, concatenated in slot order |
//!
//! The header records the model config, `tokens_seen`, the three forward
//! multipliers, and one `{name, rows, cols}` entry per tensor in exactly the
//! payload order, so the file is self-describing. Optimizer moments are not
//! stored: checkpoints are inspection/inference artifacts, and sweep
//! resumption re-runs whole training runs instead.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig, ParamTensors, Slot};
use super::TrainerError;

const MAGIC: &[u8; 8] = b"PSCKPT01";
const MAX_HEADER_BYTES: u64 = 1 << 20;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    tokens_seen: u64,
    m_emb: f64,
    m_res: f64,
    logit_scale: f64,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize, PartialEq, Eq)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> TrainerError {
    TrainerError::CheckpointIo {
        path: path.to_path_buf(),
        source,
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> TrainerError {
    TrainerError::BadCheckpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn expected_metas(cfg: &ModelConfig) -> Vec<TensorMeta> {
    Slot::all(cfg.n_layers)
        .into_iter()
        .map(|s| {
            let (rows, cols) = s.shape(cfg);
            TensorMeta {
                name: s.name(),
                rows,
                cols,
            }
        })
        .collect()
}

pub fn save_checkpoint(path: &Path, model: &Model, tokens_seen: u64) -> Result<(), TrainerError> {
    let header = Header {
        version: 1,
        model: model.cfg.clone(),
        tokens_seen,
        m_emb: model.m_emb,
        m_res: model.m_res,
        logit_scale: model.logit_scale,
        tensors: expected_metas(&model.cfg),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serialization is infallible");
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    (|| {
        w.write_all(MAGIC)?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for slot in Slot::all(model.cfg.n_layers) {
            for x in model.params.get(slot) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, u64), TrainerError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(bad(path, "not a checkpoint file (bad magic)"));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes).map_err(|e| io_err(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes);
    if header_len == 0 || header_len > MAX_HEADER_BYTES {
        return Err(bad(path, format!("implausible header length {header_len}")));
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    r.read_exact(&mut header_bytes).map_err(|e| io_err(path, e))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| bad(path, format!("header parse failed: {e}")))?;
    if header.version != 1 {
        return Err(bad(path, format!("unsupported version {}", header.version)));
    }
    header.model.validate().map_err(|e| bad(path, e.to_string()))?;
    if header.tensors != expected_metas(&header.model) {
        return Err(bad(path, "tensor list does not match the model config"));
    }

    let mut params = ParamTensors::zeros(&header.model);
    let mut buf = [0u8; 8];
    for slot in Slot::all(header.model.n_layers) {
        for x in params.get_mut(slot).iter_mut() {
            r.read_exact(&mut buf).map_err(|e| {
                bad(path, format!("payload truncated in {}: {e}", slot.name()))
            })?;
            *x = f64::from_le_bytes(buf);
        }
    }
    if r.read(&mut buf).map_err(|e| io_err(path, e))? != 0 {
        return Err(bad(path, "trailing bytes after the last tensor"));
    }

    let model = Model::from_parts(
        header.model,
        params,
        header.m_emb,
        header.m_res,
        header.logit_scale,
    );
    Ok((model, header.tokens_seen))
}
