//! Append-only JSON-lines persistence for sweep results.
//!
//! One `RunRecord` per line, flushed per append so a killed sweep loses at
//! most the line being written. Opening tolerates exactly that failure mode:
//! a torn final line is dropped (and truncated away on the next append);
//! anything else malformed is an error, since silently skipping interior
//! lines could hide completed work and retrain cells.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SweepError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Done,
    Failed,
}

/// Outcome of one sweep run, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub eta: f64,
    pub beta: u64,
    pub tokens: u64,
    pub model_size: String,
    pub seed: u64,
    /// Present for done runs; failed runs may have no usable metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_ppl: Option<f64>,
    pub wall_seconds: f64,
    pub status: RunStatus,
    /// Failure description for failed runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl RunRecord {
    pub fn is_done(&self) -> bool {
        self.status == RunStatus::Done
    }
}

/// A JSON-lines store bound to one file path. All complete records are held
/// in memory; appends go straight to disk.
#[derive(Debug)]
pub struct RecordStore {
    path: PathBuf,
    records: Vec<RunRecord>,
    /// Byte length of the valid prefix of the file. Anything past it is a
    /// torn final line from an interrupted append, discarded lazily on the
    /// next append.
    valid_bytes: u64,
    /// The last valid record line is missing its newline (interrupted after
    /// the payload but before the terminator); the next append restores it.
    needs_newline: bool,
    file: Option<File>,
}

impl RecordStore {
    /// Open (or start) the store at `path`. A missing file is an empty
    /// store; a torn final line is tolerated and dropped; a malformed line
    /// anywhere else is [`SweepError::CorruptStore`].
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, SweepError> {
        let path = path.into();
        let io_err = |source| SweepError::StoreIo {
            path: path.clone(),
            source,
        };
        let mut raw = Vec::new();
        match File::open(&path) {
            Ok(mut f) => {
                f.read_to_end(&mut raw).map_err(io_err)?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(e)),
        }

        let mut records = Vec::new();
        let mut valid_bytes = 0u64;
        let mut needs_newline = false;
        let mut offset = 0usize;
        let mut line_no = 0usize;
        while offset < raw.len() {
            line_no += 1;
            let rest = &raw[offset..];
            let (line, consumed, terminated) = match rest.iter().position(|&b| b == b'\n') {
                Some(p) => (&rest[..p], p + 1, true),
                None => (rest, rest.len(), false),
            };
            if line.iter().all(|b| b.is_ascii_whitespace()) {
                offset += consumed;
                valid_bytes = offset as u64;
                continue;
            }
            match serde_json::from_slice::<RunRecord>(line) {
                Ok(rec) => {
                    records.push(rec);
                    offset += consumed;
                    valid_bytes = offset as u64;
                    needs_newline = !terminated;
                }
                Err(source) => {
                    if offset + consumed == raw.len() {
                        // Torn final line: everything before it stays valid.
                        break;
                    }
                    return Err(SweepError::CorruptStore {
                        path,
                        line: line_no,
                        source,
                    });
                }
            }
        }

        Ok(RecordStore {
            path,
            records,
            valid_bytes,
            needs_newline,
            file: None,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    /// Append one record and flush it. The first append truncates any torn
    /// tail left by an interrupted writer.
    pub fn append(&mut self, record: &RunRecord) -> Result<(), SweepError> {
        let path = self.path.clone();
        let io_err = |source| SweepError::StoreIo {
            path: path.clone(),
            source,
        };
        if self.file.is_none() {
            let f = OpenOptions::new()
                .create(true)
                .write(true)
                .open(&self.path)
                .map_err(io_err)?;
            f.set_len(self.valid_bytes).map_err(io_err)?;
            self.file = Some(f);
        }
        let f = self.file.as_mut().unwrap();
        f.seek(SeekFrom::Start(self.valid_bytes)).map_err(io_err)?;
        let mut line = Vec::new();
        if self.needs_newline {
            line.push(b'\n');
        }
        serde_json::to_writer(&mut line, record).expect("run records always serialize");
        line.push(b'\n');
        f.write_all(&line).map_err(io_err)?;
        f.flush().map_err(io_err)?;
        self.valid_bytes += line.len() as u64;
        self.needs_newline = false;
        self.records.push(record.clone());
        Ok(())
    }
}
