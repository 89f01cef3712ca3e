//! One function per subcommand. Primary results go to stdout or the
//! requested output files; progress and advisory notes go to stderr.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use powersched::mup::derive_plan;
use powersched::powerlaw::{fit_power_law, predict_opt_lr, read_points_csv};
use powersched::schedule::{clamp_crossover, write_curve_csv, ScheduleKind, ScheduleSpec};
use powersched::sweep::{
    analyze, execute, write_cells_csv, write_gamma_csv, Analysis, CorpusTrainer, RecordStore,
};
use powersched::trainer::{init_model, load_corpus, save_checkpoint, train, TrainConfig};

use crate::config::ToolConfig;
use crate::error::CliError;

fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn open_file(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// `x` to `sig` significant digits in plain decimal notation.
fn format_sig(x: f64, sig: u32) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = sig as i32 - 1 - exp;
    if decimals >= 0 {
        format!("{:.*}", decimals as usize, x)
    } else {
        let scale = 10f64.powi(-decimals);
        format!("{:.0}", (x / scale).round() * scale)
    }
}

/// The schedule's nominal peak, used as the default µP base LR.
fn nominal_peak(spec: &ScheduleSpec) -> f64 {
    match spec.kind {
        ScheduleKind::Power => spec.eta_max,
        _ => spec.peak_lr,
    }
}

pub fn schedule_emit(
    config: &Path,
    start: u64,
    end: Option<u64>,
    stride: Option<u64>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = ToolConfig::load(config)?;
    let spec = cfg.require_schedule()?.to_spec()?;
    let end = end.or(spec.total_tokens).ok_or_else(|| {
        CliError::validation("--end is required for open-ended schedules (no total_tokens)")
    })?;
    let stride = stride.unwrap_or_else(|| ((end.saturating_sub(start)) / 1000).max(1));
    let samples = spec.emit_curve(start, end, stride)?;
    match out {
        Some(path) => {
            let mut w = create_file(path)?;
            write_curve_csv(&mut w, &samples)?;
            w.flush()?;
            eprintln!("wrote {} samples to {}", samples.len(), path.display());
        }
        None => write_curve_csv(io::stdout().lock(), &samples)?,
    }
    if spec.kind == ScheduleKind::Power && spec.power_b < 0.0 {
        let crossover = clamp_crossover(spec.batch_size, spec.power_a, spec.power_b, spec.eta_max)?;
        eprintln!("clamp crossover: {crossover:.4e} tokens (eta_max ceiling disengages there)");
    }
    Ok(())
}

pub fn predict_lr(a: f64, b: f64, batch_size: u64, tokens: f64) -> Result<(), CliError> {
    let lr = predict_opt_lr(a, b, batch_size, tokens)?;
    println!("{}", format_sig(lr, 4));
    Ok(())
}

pub fn mup_derive(config: &Path, out_csv: Option<&Path>) -> Result<(), CliError> {
    let cfg = ToolConfig::load(config)?;
    let mup = cfg.require_mup()?;
    let model = cfg.model.as_ref().map(|m| m.to_config());
    let fallback_lr = match &cfg.schedule {
        Some(section) => Some(nominal_peak(&section.to_spec()?)),
        None => None,
    };
    let mup_cfg = mup.to_config(model.as_ref(), fallback_lr)?;
    let plans = derive_plan(&mup_cfg)?;

    println!(
        "m_width = {} (d_model {} / d_base {})",
        mup_cfg.width_multiplier(),
        mup_cfg.d_model,
        mup_cfg.d_base
    );
    println!("{:<18} {:<24} {:<24} {}", "group", "lr", "init_std", "forward_multiplier");
    for plan in plans.iter() {
        println!(
            "{:<18} {:<24} {:<24} {}",
            plan.group.as_str(),
            plan.lr,
            plan.init_std,
            plan.forward_multiplier
        );
    }
    if let Some(path) = out_csv {
        let mut w = create_file(path)?;
        plans.write_csv(&mut w)?;
        w.flush()?;
        eprintln!("wrote plan CSV to {}", path.display());
    }
    Ok(())
}

pub fn fit(input: &Path) -> Result<(), CliError> {
    let points = read_points_csv(open_file(input)?)?;
    let result = fit_power_law(&points)?;
    result.write_csv(io::stdout().lock())?;
    Ok(())
}

pub fn sweep_run(config: &Path, parallelism: usize, store_path: &Path) -> Result<(), CliError> {
    let cfg = ToolConfig::load(config)?;
    let sweep = cfg.require_sweep()?;
    let grid = sweep.to_grid()?;
    // Width fields and base_lr in [mup] are placeholders here: every run
    // overrides them with its own model size and swept eta.
    let mup_base = cfg
        .require_mup()?
        .to_config(Some(&grid.model_sizes[0].config), Some(grid.etas[0]))?;
    let corpus = load_corpus(&sweep.corpus, sweep.train_fraction())?;
    let trainer = CorpusTrainer {
        corpus: &corpus,
        mup_base,
        optimizer: sweep.optimizer()?,
        eval_tokens: sweep.eval_tokens(),
    };
    let mut store = RecordStore::open(store_path)?;
    let stored_before = store.records().len();
    let records = execute(&grid, &trainer, parallelism, &mut store)?;
    let done = records.iter().filter(|r| r.is_done()).count();
    eprintln!(
        "sweep: {} planned runs ({} done, {} failed), {} record(s) were already stored; store {}",
        records.len(),
        done,
        records.len() - done,
        stored_before,
        store_path.display()
    );
    Ok(())
}

fn print_analysis(analysis: &Analysis) {
    println!("per-cell optima (* marks a grid-edge optimum):");
    println!(
        "{:<14} {:<14} {:<8} {:<14} {}",
        "model_size", "tokens", "beta", "eta_opt", "eval_ppl"
    );
    for c in &analysis.cells {
        let edge = if c.at_grid_edge { " *" } else { "" };
        println!(
            "{:<14} {:<14} {:<8} {:<14} {}{edge}",
            c.model_size, c.tokens, c.beta, c.eta_opt, c.eval_ppl
        );
    }
    println!();
    println!("gamma by token budget (pooled across sizes):");
    println!("{:<14} {:<24} {:<20} {}", "tokens", "avg_gamma", "n_batch_sizes_used", "flagged");
    for r in &analysis.rows {
        println!(
            "{:<14} {:<24} {:<20} {}",
            r.tokens, r.avg_gamma, r.n_batch_sizes_used, r.flagged
        );
    }
    println!();
    println!("fit: gamma = a * T^b");
    println!("a = {}", analysis.fit.a);
    println!("b = {}", analysis.fit.b);
    println!("rmse_log = {}", analysis.fit.rmse_log);
    println!("n_points = {}", analysis.fit.n_points);
}

pub fn sweep_analyze(
    store_path: &Path,
    top_k: usize,
    out_cells: Option<&Path>,
    out_gamma: Option<&Path>,
    out_fit: Option<&Path>,
) -> Result<(), CliError> {
    if !store_path.exists() {
        return Err(CliError::runtime(format!(
            "store {}: no such file",
            store_path.display()
        )));
    }
    let store = RecordStore::open(store_path)?;
    let analysis = analyze(store.records(), top_k)?;
    print_analysis(&analysis);
    if let Some(path) = out_cells {
        let mut w = create_file(path)?;
        write_cells_csv(&analysis.cells, &mut w)?;
        w.flush()?;
    }
    if let Some(path) = out_gamma {
        let mut w = create_file(path)?;
        write_gamma_csv(&analysis.rows, &mut w)?;
        w.flush()?;
    }
    if let Some(path) = out_fit {
        let mut w = create_file(path)?;
        analysis.fit.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

pub fn train_run(
    config: &Path,
    out_history: Option<&Path>,
    out_checkpoint: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = ToolConfig::load(config)?;
    let section = cfg.require_train()?;
    let model = cfg.require_model()?.to_config();
    let spec = cfg.require_schedule()?.to_spec()?;
    let mup = cfg
        .require_mup()?
        .to_config(Some(&model), Some(nominal_peak(&spec)))?;
    let corpus = load_corpus(&section.corpus, section.train_fraction())?;
    let tcfg = TrainConfig {
        batch_size: section.batch_size,
        total_tokens: section.total_tokens,
        schedule: spec,
        mup,
        optimizer: section.optimizer()?,
        seed: section.seed(),
        eval_tokens: section.eval_tokens(),
        history_every_tokens: section.history_every_tokens.unwrap_or(0),
    };
    let mut state = init_model(&model, &tcfg.mup, tcfg.seed)?;
    let outcome = train(&mut state, &corpus, &tcfg)?;

    println!("tokens_seen = {}", state.tokens_seen);
    println!("final_train_loss = {}", outcome.final_train_loss);
    println!("eval_ppl = {}", outcome.eval_ppl);

    if let Some(path) = out_history {
        let mut w = create_file(path)?;
        writeln!(w, "tokens,loss")?;
        for p in &outcome.history {
            writeln!(w, "{},{}", p.tokens, p.loss)?;
        }
        w.flush()?;
    }
    if let Some(path) = out_checkpoint {
        save_checkpoint(path, &state.model, state.tokens_seen)?;
        eprintln!("wrote checkpoint to {}", path.display());
    }
    Ok(())
}
