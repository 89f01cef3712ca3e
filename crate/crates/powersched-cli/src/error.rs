//! Error type carrying the process exit code.
//!
//! Exit codes are uniform across commands: 2 for anything wrong with the
//! inputs (config contents, flag domains, malformed data files), 1 for
//! failures of the run itself (I/O, divergence, corrupt stores).

use powersched::powerlaw::FitError;
use powersched::schedule::ScheduleError;
use powersched::sweep::SweepError;
use powersched::trainer::TrainerError;
use powersched::{mup::MupError, ScheduleKind};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad inputs: exit code 2.
    #[error("{0}")]
    Validation(String),
    /// Runtime or I/O failure: exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        CliError::Validation(format!("schedule: {e}"))
    }
}

impl From<MupError> for CliError {
    fn from(e: MupError) -> Self {
        CliError::Validation(format!("mup: {e}"))
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Io(_) => CliError::Runtime(format!("power law: {e}")),
            _ => CliError::Validation(format!("power law: {e}")),
        }
    }
}

impl From<TrainerError> for CliError {
    fn from(e: TrainerError) -> Self {
        match e {
            TrainerError::CorpusIo { .. }
            | TrainerError::Divergent { .. }
            | TrainerError::CheckpointIo { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::CorruptStore { .. } | SweepError::StoreIo { .. } => {
                CliError::Runtime(e.to_string())
            }
            SweepError::Fit(inner) => CliError::from(inner),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Names the schedule kinds accepted in configs, for error messages.
pub fn known_kinds() -> String {
    [ScheduleKind::Constant, ScheduleKind::Cosine, ScheduleKind::Wsd, ScheduleKind::Power]
        .iter()
        .map(|k| k.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}
