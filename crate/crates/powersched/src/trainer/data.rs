//! Byte corpus loading, splitting, and a synthetic text generator.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::TrainerError;

/// Fraction of the corpus used for training when the caller does not choose.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.99;

/// A byte corpus split into a training prefix and a holdout suffix.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Vec<u8>,
    pub holdout: Vec<u8>,
    /// Hex SHA-256 of the full corpus, recorded so runs can be tied to data.
    pub sha256: String,
}

impl Corpus {
    /// Splits `bytes` at `round(len * train_fraction)`; both sides must be
    /// non-empty.
    pub fn from_bytes(bytes: Vec<u8>, train_fraction: f64) -> Result<Self, TrainerError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(TrainerError::BadSplitFraction(train_fraction));
        }
        let sha256 = hex::encode(Sha256::digest(&bytes));
        let cut = (bytes.len() as f64 * train_fraction).round() as usize;
        if cut == 0 || cut >= bytes.len() {
            return Err(TrainerError::CorpusTooSmall {
                needed: 2,
                have: bytes.len(),
            });
        }
        let mut train = bytes;
        let holdout = train.split_off(cut);
        Ok(Corpus {
            train,
            holdout,
            sha256,
        })
    }
}

/// Reads a corpus file and splits it. Empty files are rejected.
pub fn load_corpus(path: &Path, train_fraction: f64) -> Result<Corpus, TrainerError> {
    let bytes = fs::read(path).map_err(|source| TrainerError::CorpusIo {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.is_empty() {
        return Err(TrainerError::CorpusEmpty {
            path: path.to_path_buf(),
        });
    }
    Corpus::from_bytes(bytes, train_fraction)
}

const WORDS: &[&str] = &[
    "the", "rate", "of", "learning", "and", "decay", "to", "batch", "in", "tokens", "model",
    "width", "schedule", "power", "stable", "warmup", "transfer", "scale", "step", "loss", "train",
    "curve", "optimal", "budget", "sweep", "fit", "residual", "head", "gain", "norm", "byte",
    "stream", "peak", "floor", "ramp", "drop", "slope", "grid", "cell", "seed", "run", "data",
    "holdout", "eval", "base", "group", "plan", "depth", "layer", "block",
];

/// Deterministic word-salad text: skewed word frequencies with simple
/// sentence structure, so a tiny model has predictable statistics to learn.
pub fn synthetic_corpus(n_bytes: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_bytes + 16);
    let mut words_in_sentence = 0usize;
    while out.len() < n_bytes {
        // Squaring the uniform draw skews mass toward early words, giving a
        // roughly Zipf-like unigram distribution.
        let u: f64 = rng.random();
        let idx = ((u * u) * WORDS.len() as f64) as usize;
        out.extend_from_slice(WORDS[idx.min(WORDS.len() - 1)].as_bytes());
        words_in_sentence += 1;
        if words_in_sentence >= 6 && rng.random::<f64>() < 0.3 {
            out.extend_from_slice(b".\n");
            words_in_sentence = 0;
        } else {
            out.push(b' ');
        }
    }
    out.truncate(n_bytes);
    out
}

/// Empirical unigram entropy of `bytes` in nats. A context model that has
/// learned anything beats this on text with local structure.
pub fn unigram_entropy(bytes: &[u8]) -> f64 {
    let mut counts = [0u64; 256];
    for &b in bytes {
        counts[b as usize] += 1;
    }
    let n = bytes.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}
