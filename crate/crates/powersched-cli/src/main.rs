//! `powersched`: learning-rate schedules, width-scaled hyperparameter
//! plans, and optimal-LR sweeps from one binary.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 invalid inputs
//! (config contents, flag domains, malformed data files). All diagnostics
//! go to stderr.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Token-count flags accept plain integers or scientific notation (`2.6e10`),
/// since budgets are astronomically sized; the value must still be a whole
/// number of tokens.
fn parse_token_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("`{s}` is not a non-negative token count"));
    }
    if v > (1u64 << 53) as f64 {
        return Err(format!("`{s}` exceeds 2^53, the largest exactly representable count"));
    }
    if v.fract() != 0.0 {
        return Err(format!("`{s}` is not a whole number of tokens"));
    }
    Ok(v as u64)
}

#[derive(Parser)]
#[command(name = "powersched", version, about = "Learning-rate schedules, width-scaling plans, and optimal-LR sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a schedule's learning-rate curve to CSV (`tokens,lr`)
    ScheduleEmit {
        /// TOML config with a [schedule] section
        #[arg(long)]
        config: PathBuf,
        /// First token position to sample
        #[arg(long, value_parser = parse_token_count, default_value = "0")]
        start: u64,
        /// Last token position (defaults to the schedule's total_tokens)
        #[arg(long, value_parser = parse_token_count)]
        end: Option<u64>,
        /// Sample spacing in tokens (default: span/1000)
        #[arg(long, value_parser = parse_token_count)]
        stride: Option<u64>,
        /// Output CSV path (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the optimal learning rate `eta = beta * a * T^b`
    PredictLr {
        /// Power-law coefficient `a`
        #[arg(long)]
        a: f64,
        /// Power-law exponent `b`
        #[arg(long, allow_hyphen_values = true)]
        b: f64,
        /// Batch size in sequences per step
        #[arg(long, value_parser = parse_token_count)]
        batch_size: u64,
        /// Token budget `T` (scientific notation welcome)
        #[arg(long)]
        tokens: f64,
    },
    /// Derive the per-parameter-group scaling plan from [mup] (+[model])
    MupDerive {
        #[arg(long)]
        config: PathBuf,
        /// Also write the plan as CSV (`group,lr,init_std,forward_multiplier`)
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
    /// Fit `gamma = a * T^b` to a points CSV (`tokens,gamma`)
    Fit {
        /// Input points CSV
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Execute the [sweep] grid, resuming from the store's completed runs
    SweepRun {
        #[arg(long)]
        config: PathBuf,
        /// Concurrent training runs
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        /// JSON-lines run store (created if missing)
        #[arg(long)]
        store: PathBuf,
    },
    /// Summarize a run store: per-cell optima, gamma table, power-law fit
    SweepAnalyze {
        #[arg(long)]
        store: PathBuf,
        /// Batch sizes averaged per (budget, size) cell
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        /// Write per-cell optima CSV
        #[arg(long)]
        out_cells: Option<PathBuf>,
        /// Write pooled gamma CSV (`tokens,avg_gamma,n_batch_sizes_used,flagged`)
        #[arg(long)]
        out_gamma: Option<PathBuf>,
        /// Write fit CSV (`a,b,rmse_log,n_points`)
        #[arg(long)]
        out_fit: Option<PathBuf>,
    },
    /// One training run from [train]/[model]/[mup]/[schedule]
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Write per-step history CSV (`tokens,loss`)
        #[arg(long)]
        out_history: Option<PathBuf>,
        /// Write a model checkpoint
        #[arg(long)]
        out_checkpoint: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ScheduleEmit { config, start, end, stride, out } => {
            commands::schedule_emit(&config, start, end, stride, out.as_deref())
        }
        Command::PredictLr { a, b, batch_size, tokens } => {
            commands::predict_lr(a, b, batch_size, tokens)
        }
        Command::MupDerive { config, out_csv } => {
            commands::mup_derive(&config, out_csv.as_deref())
        }
        Command::Fit { input } => commands::fit(&input),
        Command::SweepRun { config, parallelism, store } => {
            commands::sweep_run(&config, parallelism, &store)
        }
        Command::SweepAnalyze { store, top_k, out_cells, out_gamma, out_fit } => {
            commands::sweep_analyze(
                &store,
                top_k,
                out_cells.as_deref(),
                out_gamma.as_deref(),
                out_fit.as_deref(),
            )
        }
        Command::Train { config, out_history, out_checkpoint } => {
            commands::train_run(&config, out_history.as_deref(), out_checkpoint.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
