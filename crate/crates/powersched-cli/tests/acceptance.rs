//! Acceptance gate: nine end-to-end criteria covering the worked LR
//! prediction, exact and pipeline power-law fit recovery, schedule
//! invariants, width-scaling rules, gradient correctness, the coordinate
//! check, the desk-scale optimum-LR trend, and sweep crash robustness.
//!
//! Each criterion is one test that prints `ACCEPTANCE <n> (<name>): PASS`
//! or `: FAIL` plus the reasons. Run with `--nocapture` to see the lines.
//! The trend criterion trains 27 small models and dominates the runtime
//! (budgeted at 30 minutes on one core).

use std::fs;
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestError, TestRunner};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use powersched::mup::{derive_plan, attention_logit_scale, MupConfig, ParamGroup};
use powersched::powerlaw::{fit_power_law, SweepPoint};
use powersched::schedule::{clamp_crossover, power_lr, DecayShape, ScheduleKind, ScheduleSpec};
use powersched::sweep::{
    analyze, cell_optima, execute, select_optimal, CellOptimum, CorpusTrainer, ModelSize,
    RecordStore, RunRecord, RunStatus, SweepGrid,
};
use powersched::trainer::{
    coord_check, grad_check, init_model, synthetic_corpus, Batch, CoordCheckSettings, Corpus,
    ModelConfig, OptimizerConfig, Parameterization, DEFAULT_TRAIN_FRACTION,
};

/// Training-heavy criteria take this lock so each one's wall-clock budget is
/// measured alone rather than timeshared with the others on one core.
static HEAVY: Mutex<()> = Mutex::new(());

fn report(n: usize, name: &str, failures: Vec<String>) {
    if failures.is_empty() {
        println!("ACCEPTANCE {n} ({name}): PASS");
    } else {
        println!("ACCEPTANCE {n} ({name}): FAIL");
        for f in &failures {
            println!("  - {f}");
        }
        panic!("acceptance criterion {n} ({name}) failed");
    }
}

macro_rules! check {
    ($failures:expr, $cond:expr, $($msg:tt)+) => {
        if !$cond {
            $failures.push(format!($($msg)+));
        }
    };
}

/// Runs one property at `cases` cases and converts a counterexample into a
/// report line instead of an opaque panic.
fn run_property<S: Strategy>(
    failures: &mut Vec<String>,
    label: &str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(PropConfig {
        cases,
        failure_persistence: None,
        ..PropConfig::default()
    });
    match runner.run(&strategy, test) {
        Ok(()) => {}
        Err(TestError::Fail(reason, value)) => {
            failures.push(format!("{label}: {reason} (counterexample {value:?})"));
        }
        Err(TestError::Abort(reason)) => {
            failures.push(format!("{label}: aborted: {reason}"));
        }
    }
}

#[test]
fn criterion_1_predicted_lr_worked_example() {
    let mut failures = Vec::new();
    let out = Command::new(env!("CARGO_BIN_EXE_powersched"))
        .args(["predict-lr", "--a", "4.6", "--b", "-0.51", "--batch-size", "1024", "--tokens", "1e13"])
        .output()
        .expect("spawn predict-lr");
    check!(failures, out.status.success(), "predict-lr exited {:?}", out.status.code());
    if out.status.success() {
        let text = String::from_utf8_lossy(&out.stdout);
        match text.trim().parse::<f64>() {
            Ok(lr) => check!(
                failures,
                (lr / 0.0011 - 1.0).abs() < 0.05,
                "predicted LR {lr} is not within 5% of 0.0011"
            ),
            Err(e) => failures.push(format!("stdout {text:?} did not parse as a number: {e}")),
        }
    }
    report(1, "predict-lr worked example", failures);
}

#[test]
fn criterion_2_fit_recovery_on_a_noiseless_grid() {
    let mut failures = Vec::new();
    let (a, b) = (4.6, -0.51);
    let points: Vec<SweepPoint> = [2.0f64, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0]
        .iter()
        .map(|billions| {
            let tokens = billions * 1e9;
            SweepPoint { tokens, gamma: a * tokens.powf(b) }
        })
        .collect();
    let fit = fit_power_law(&points).expect("fit");
    check!(
        failures,
        (fit.a / a - 1.0).abs() < 1e-6,
        "a = {:.12} is not within 1e-6 relative of {a}",
        fit.a
    );
    check!(failures, (fit.b - b).abs() < 1e-9, "b = {:.15} is not within 1e-9 of {b}", fit.b);
    report(2, "power-law fit recovery", failures);
}

#[test]
fn criterion_3_pipeline_fit_recovery_from_a_synthetic_store() {
    let mut failures = Vec::new();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synthetic.jsonl");
    let (a, b) = (4.6, -0.51);
    let budgets = [1_000_000u64, 2_000_000, 4_000_000, 8_000_000];
    let betas = [8u64, 16, 32, 64];
    let multipliers = [0.25, 0.5, 1.0, 2.0, 4.0];

    // Perplexity is a log-parabola with its exact minimum on the grid point
    // eta* = beta * a * T^b, so selection recovers eta* and gamma = a * T^b.
    {
        let mut store = RecordStore::open(&path).unwrap();
        let mut i = 0;
        for &tokens in &budgets {
            for &beta in &betas {
                let eta_star = beta as f64 * a * (tokens as f64).powf(b);
                for &m in &multipliers {
                    let eta = eta_star * m;
                    let ppl = 2.0 + (eta.ln() - eta_star.ln()).powi(2);
                    store
                        .append(&RunRecord {
                            run_id: format!("syn-{i}"),
                            eta,
                            beta,
                            tokens,
                            model_size: "proxy".into(),
                            seed: 0,
                            final_train_loss: Some(ppl.ln()),
                            eval_ppl: Some(ppl),
                            wall_seconds: 0.0,
                            status: RunStatus::Done,
                            reason: None,
                        })
                        .unwrap();
                    i += 1;
                }
            }
        }
    }

    let store = RecordStore::open(&path).unwrap();
    let records = store.records();
    for &tokens in &budgets {
        for &beta in &betas {
            let eta_star = beta as f64 * a * (tokens as f64).powf(b);
            let (eta_opt, _ppl) = select_optimal(records, beta, tokens, "proxy").unwrap();
            check!(
                failures,
                eta_opt == eta_star,
                "selected {eta_opt} for beta {beta}, T {tokens}; planted {eta_star}"
            );
        }
    }
    let analysis = analyze(records, 3).expect("analysis");
    check!(
        failures,
        (analysis.fit.a / a - 1.0).abs() < 1e-6,
        "a = {:.12} is not within 1e-6 relative of {a}",
        analysis.fit.a
    );
    check!(
        failures,
        (analysis.fit.b / b - 1.0).abs() < 1e-6,
        "b = {:.15} is not within 1e-6 relative of {b}",
        analysis.fit.b
    );
    let elapsed = start.elapsed();
    check!(failures, elapsed < Duration::from_secs(1), "pipeline took {elapsed:?}, budget 1 s");
    report(3, "sweep-store pipeline fit recovery", failures);
}

fn arb_decay_shape() -> impl Strategy<Value = DecayShape> {
    prop_oneof![
        Just(DecayShape::Linear),
        Just(DecayShape::Cosine),
        (0.001f64..0.5).prop_map(|floor_ratio| DecayShape::Exponential { floor_ratio }),
    ]
}

fn arb_wsd() -> impl Strategy<Value = ScheduleSpec> {
    (1e-4f64..0.1, 1u64..1_000_000, 1u64..1_000_000, 1u64..10_000_000, arb_decay_shape())
        .prop_map(|(peak, warmup, decay, stable, shape)| {
            ScheduleSpec::wsd(peak, warmup, decay, warmup + stable + decay)
                .with_decay_shape(shape)
        })
}

/// `(beta, a, b, eta_max)` for a power schedule, beta a power of two.
fn arb_power_params() -> impl Strategy<Value = (u64, f64, f64, f64)> {
    (0u32..12, 1e-4f64..10.0, -0.9f64..-0.1, 1e-4f64..0.05)
        .prop_map(|(lb, a, b, eta_max)| (1u64 << lb, a, b, eta_max))
}

#[test]
fn criterion_4_schedule_invariant_suite() {
    let mut failures = Vec::new();

    run_property(
        &mut failures,
        "continuity at phase boundaries",
        1000,
        (arb_wsd(), arb_power_params(), 1u64..1_000_000),
        |(wsd, (beta, a, b, eta_max), warmup)| {
            // The step across each boundary may not exceed the steeper
            // neighboring phase's per-token slope.
            let w = wsd.warmup_tokens;
            let entry = wsd.lr_at(w).unwrap();
            let jump = (entry - wsd.lr_at(w - 1).unwrap()).abs();
            prop_assert!(jump <= entry / w as f64 * (1.0 + 1e-9) + 1e-18);

            let ds = wsd.total_tokens.unwrap() - wsd.decay_tokens;
            let entry = wsd.lr_at(ds).unwrap();
            let jump = (entry - wsd.lr_at(ds + 1).unwrap()).abs();
            let max_slope = match wsd.decay_shape {
                DecayShape::Linear => 1.0,
                DecayShape::Cosine => std::f64::consts::PI / 2.0,
                DecayShape::Exponential { floor_ratio } => -floor_ratio.ln(),
            } / wsd.decay_tokens as f64;
            prop_assert!(jump <= entry * max_slope * (1.0 + 1e-9) + 1e-18);

            let power = ScheduleSpec::power(beta, a, b, eta_max, warmup);
            let entry = power.lr_at(warmup).unwrap();
            let jump = (entry - power.lr_at(warmup - 1).unwrap()).abs();
            prop_assert!(jump <= entry / warmup as f64 * (1.0 + 1e-9) + 1e-18);
            Ok(())
        },
    );

    run_property(
        &mut failures,
        "WSD stable phase equals the peak LR exactly",
        1000,
        (arb_wsd(), 0.0f64..1.0),
        |(spec, frac)| {
            let start = spec.warmup_tokens;
            let end = spec.total_tokens.unwrap() - spec.decay_tokens;
            let n = start + ((end - start) as f64 * frac) as u64;
            prop_assert_eq!(spec.lr_at(n).unwrap(), spec.peak_lr);
            Ok(())
        },
    );

    run_property(
        &mut failures,
        "power LR is monotone non-increasing past the crossover",
        1000,
        (arb_power_params(), 0u64..1_000_000_000, 1u64..1_000_000_000_000),
        |((beta, a, b, eta_max), offset, gap)| {
            let n_star = clamp_crossover(beta, a, b, eta_max).unwrap();
            let n1 = (n_star.ceil() as u64).saturating_add(offset).max(1);
            let n2 = n1.saturating_add(gap);
            let lr1 = power_lr(beta, a, b, eta_max, n1).unwrap();
            let lr2 = power_lr(beta, a, b, eta_max, n2).unwrap();
            prop_assert!(lr1 >= lr2, "lr({n1}) = {lr1} < lr({n2}) = {lr2}");
            Ok(())
        },
    );

    run_property(
        &mut failures,
        "clamp boundary matches clamp_crossover within one token",
        1000,
        (2.0f64..1e9, -0.9f64..-0.1, 1e-4f64..0.05, 0u32..12),
        |(n_star_target, b, eta_max, lb)| {
            let beta = 1u64 << lb;
            // Choose the amplitude so the crossover lands at the target.
            let a = eta_max * n_star_target.powf(-b) / beta as f64;
            let n_star = clamp_crossover(beta, a, b, eta_max).unwrap();
            prop_assert!((n_star - n_star_target).abs() / n_star_target < 1e-9);
            let clamped = power_lr(beta, a, b, eta_max, n_star.floor() as u64).unwrap();
            prop_assert!(clamped >= eta_max * (1.0 - 1e-12));
            let free = power_lr(beta, a, b, eta_max, n_star.ceil() as u64 + 1).unwrap();
            prop_assert!(free < eta_max);
            Ok(())
        },
    );

    run_property(
        &mut failures,
        "unclamped power LR is linear in batch size",
        1000,
        (0u32..20, 1u32..5, 1e-4f64..10.0, -1.0f64..0.0, 1u64..1_000_000_000_000),
        |(lb, lk, a, b, n)| {
            // Power-of-two factors make the scaling exact in IEEE arithmetic.
            let beta = 1u64 << lb;
            let k = 1u64 << lk;
            let huge = 1e300; // keep the clamp out of play
            let lhs = power_lr(beta * k, a, b, huge, n).unwrap();
            let rhs = k as f64 * power_lr(beta, a, b, huge, n).unwrap();
            prop_assert_eq!(lhs, rhs);
            Ok(())
        },
    );

    report(4, "schedule invariant property suite", failures);
}

#[test]
fn criterion_5_width_scaling_identity_and_lr_rule() {
    let mut failures = Vec::new();

    run_property(
        &mut failures,
        "plan at width multiplier 1 is the standard parameterization",
        1000,
        (1usize..64, 1usize..16, 1e-3f64..1.0, 1e-5f64..0.1),
        |(d_head, mult, init_std, base_lr)| {
            let d = d_head * mult;
            let plans = derive_plan(&MupConfig {
                d_base: d,
                d_model: d,
                d_head,
                m_emb: 1.0,
                m_res: 1.0,
                init_std,
                base_lr,
            })
            .unwrap();
            for group in ParamGroup::ALL {
                let plan = plans.get(group);
                prop_assert_eq!(plan.group, group);
                prop_assert_eq!(plan.lr, base_lr);
                prop_assert_eq!(plan.forward_multiplier, 1.0);
                let expected_std =
                    if group == ParamGroup::VectorParams { 1.0 } else { init_std };
                prop_assert_eq!(plan.init_std, expected_std);
            }
            Ok(())
        },
    );

    run_property(
        &mut failures,
        "internal LR times the width multiplier equals the embedding LR",
        1000,
        (1usize..16, 1usize..8, 1u32..6, 1e-5f64..0.1, 0.1f64..8.0, 0.1f64..2.0),
        |(d_head, mult, k, base_lr, m_emb, m_res)| {
            let d_base = d_head * mult;
            let d_model = d_base << k; // power-of-two multiplier: exact
            let plans = derive_plan(&MupConfig {
                d_base,
                d_model,
                d_head,
                m_emb,
                m_res,
                init_std: 0.02,
                base_lr,
            })
            .unwrap();
            let m_width = (1u64 << k) as f64;
            prop_assert_eq!(
                plans.get(ParamGroup::InternalMatrix).lr * m_width,
                plans.get(ParamGroup::InputEmbedding).lr
            );
            prop_assert_eq!(plans.get(ParamGroup::InputEmbedding).lr, base_lr);
            Ok(())
        },
    );

    for d_head in 1usize..=1024 {
        let scale = attention_logit_scale(d_head);
        check!(
            failures,
            scale == 1.0 / d_head as f64,
            "logit scale for d_head {d_head} is {scale}, not 1/d_head"
        );
    }

    report(5, "width-scaling plan identity and LR rule", failures);
}

#[test]
fn criterion_6_gradients_match_central_differences() {
    let _lock = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut failures = Vec::new();

    let cfg = ModelConfig {
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        d_head: 8,
        mlp_hidden: 32,
        vocab_size: 32,
        sequence_length: 8,
    };
    // init_std large enough that no gradient coordinate sits at the
    // central-difference noise floor; both residual multipliers and the
    // embedding multiplier are non-trivial so their backward paths count.
    let mup = MupConfig {
        d_base: 8,
        d_model: 16,
        d_head: 8,
        m_emb: 2.0,
        m_res: 0.7,
        init_std: 0.2,
        base_lr: 0.01,
    };
    let mut state = init_model(&cfg, &mup, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(38);
    let rows = 2 * cfg.sequence_length;
    let batch = Batch {
        inputs: (0..rows).map(|_| rng.random_range(0..cfg.vocab_size as u32)).collect(),
        targets: (0..rows).map(|_| rng.random_range(0..cfg.vocab_size as u32)).collect(),
        n_seqs: 2,
    };
    let max_rel = grad_check(&mut state, &batch, 1e-5);
    check!(failures, max_rel < 1e-4, "max relative gradient error {max_rel} >= 1e-4");
    let elapsed = start.elapsed();
    check!(failures, elapsed < Duration::from_secs(60), "took {elapsed:?}, budget 1 min");
    report(6, "analytic gradients vs central differences", failures);
}

#[test]
fn criterion_7_residual_scale_coordinate_check() {
    let _lock = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut failures = Vec::new();

    let settings = CoordCheckSettings::default();
    let widths = [32usize, 64, 128];
    let scaled = coord_check(&widths, &settings, Parameterization::MuP, 17).unwrap();
    let standard = coord_check(&widths, &settings, Parameterization::Standard, 17).unwrap();

    let rms: Vec<f64> = scaled.iter().map(|&(_, r)| r).collect();
    let spread = rms.iter().cloned().fold(f64::MIN, f64::max)
        / rms.iter().cloned().fold(f64::MAX, f64::min);
    check!(
        failures,
        spread <= 2.0,
        "scaled residual RMS spread {spread:.3} exceeds 2 across widths ({rms:?})"
    );
    let std_rms: Vec<f64> = standard.iter().map(|&(_, r)| r).collect();
    check!(
        failures,
        std_rms.windows(2).all(|w| w[1] > w[0]),
        "standard residual RMS is not monotonically increasing ({std_rms:?})"
    );
    let elapsed = start.elapsed();
    check!(failures, elapsed < Duration::from_secs(60), "took {elapsed:?}, budget 1 min");
    report(7, "residual-scale coordinate check", failures);
}

#[test]
fn criterion_8_desk_scale_optimum_lr_trend() {
    let _lock = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut failures = Vec::new();

    let corpus =
        Corpus::from_bytes(synthetic_corpus(1_000_000, 11), DEFAULT_TRAIN_FRACTION).unwrap();
    let size = ModelSize {
        label: "d64".into(),
        config: ModelConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_head: 16,
            mlp_hidden: 128,
            vocab_size: 128,
            sequence_length: 32,
        },
    };
    let etas = vec![1e-3, 2e-3, 4e-3];
    let betas = vec![8u64, 16, 32];
    let budgets = vec![1_000_000u64, 2_000_000, 4_000_000];
    let mut grid = SweepGrid::new(
        etas,
        betas.clone(),
        budgets.clone(),
        vec![size],
        vec![0],
        ScheduleKind::Wsd,
    );
    grid.warmup_tokens = 20_000;

    let trainer = CorpusTrainer {
        corpus: &corpus,
        mup_base: MupConfig {
            d_base: 64,
            d_model: 64,
            d_head: 16,
            m_emb: 1.0,
            m_res: 1.0,
            init_std: 0.02,
            base_lr: 1e-3,
        },
        optimizer: OptimizerConfig::default(),
        eval_tokens: 32_768,
    };
    let dir = tempfile::tempdir().unwrap();
    let mut store = RecordStore::open(dir.path().join("trend.jsonl")).unwrap();
    let records = execute(&grid, &trainer, 1, &mut store).expect("sweep");
    let failed: Vec<&RunRecord> = records.iter().filter(|r| !r.is_done()).collect();
    check!(failures, failed.is_empty(), "{} run(s) failed: {:?}", failed.len(), failed);

    let cells = cell_optima(&records);
    println!("selected optimum LR per (batch size, budget); * marks a grid-edge optimum:");
    for c in &cells {
        println!(
            "  beta={:<3} T={:<8} eta_opt={:.1e} ppl={:.4}{}",
            c.beta,
            c.tokens,
            c.eta_opt,
            c.eval_ppl,
            if c.at_grid_edge { "  *" } else { "" }
        );
    }

    // One grid step is a factor of 2 on this eta grid.
    let one_step = 2.0 * (1.0 + 1e-9);
    let row = |pred: &dyn Fn(&CellOptimum) -> bool| -> Vec<&CellOptimum> {
        cells.iter().filter(|c| pred(c)).collect()
    };
    let mut t_violations = Vec::new();
    for &beta in &betas {
        let line = row(&|c: &CellOptimum| c.beta == beta); // ascending T
        for w in line.windows(2) {
            if w[1].eta_opt > w[0].eta_opt {
                let ratio = w[1].eta_opt / w[0].eta_opt;
                t_violations.push(format!(
                    "beta {beta}: eta_opt rose {:.1e} -> {:.1e} from T {} to {}",
                    w[0].eta_opt, w[1].eta_opt, w[0].tokens, w[1].tokens
                ));
                check!(
                    failures,
                    ratio <= one_step,
                    "beta {beta}: rise from T {} to {} is {ratio:.2}x, more than one grid step",
                    w[0].tokens,
                    w[1].tokens
                );
            }
        }
    }
    check!(
        failures,
        t_violations.len() <= 1,
        "eta_opt vs T is non-monotone {} times (one allowed): {t_violations:?}",
        t_violations.len()
    );

    let mut b_violations = Vec::new();
    for &tokens in &budgets {
        let mut line = row(&|c: &CellOptimum| c.tokens == tokens);
        line.sort_by_key(|c| c.beta);
        for w in line.windows(2) {
            if w[1].eta_opt < w[0].eta_opt {
                let ratio = w[0].eta_opt / w[1].eta_opt;
                b_violations.push(format!(
                    "T {tokens}: eta_opt fell {:.1e} -> {:.1e} from beta {} to {}",
                    w[0].eta_opt, w[1].eta_opt, w[0].beta, w[1].beta
                ));
                check!(
                    failures,
                    ratio <= one_step,
                    "T {tokens}: fall from beta {} to {} is {ratio:.2}x, more than one grid step",
                    w[0].beta,
                    w[1].beta
                );
            }
        }
    }
    check!(
        failures,
        b_violations.len() <= 1,
        "eta_opt vs beta is non-monotone {} times (one allowed): {b_violations:?}",
        b_violations.len()
    );

    // The edge flags in the report must mean what they say.
    for c in &cells {
        let on_edge = c.eta_opt == 1e-3 || c.eta_opt == 4e-3;
        check!(
            failures,
            c.at_grid_edge == on_edge,
            "cell beta {} T {}: at_grid_edge {} but eta_opt {:.1e}",
            c.beta,
            c.tokens,
            c.at_grid_edge,
            c.eta_opt
        );
    }

    let elapsed = start.elapsed();
    println!("trend sweep trained 27 runs in {elapsed:?}");
    check!(failures, elapsed < Duration::from_secs(1800), "took {elapsed:?}, budget 30 min");
    report(8, "desk-scale optimum-LR trend", failures);
}

#[test]
fn criterion_9_sweep_kill_and_resume_robustness() {
    let _lock = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let mut failures = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("corpus.bin");
    fs::write(&corpus_path, synthetic_corpus(60_000, 5)).unwrap();
    let config_path = dir.path().join("sweep.toml");
    // eta = 1e3 is far past any stable LR for this model: that cell must
    // diverge, be recorded failed, and stay out of the analysis.
    fs::write(
        &config_path,
        format!(
            "[mup]\nd_base = 16\ninit_std = 0.02\n\n\
             [sweep]\ncorpus = {corpus_path:?}\netas = [1e-3, 2e-3, 1e3]\nbetas = [4]\n\
             token_budgets = [200000, 400000]\nschedule_kind = \"wsd\"\nwarmup_tokens = 1000\n\
             eval_tokens = 512\n\n\
             [[sweep.model_sizes]]\nlabel = \"d16\"\nn_layers = 1\nd_model = 16\nn_heads = 2\n\
             d_head = 8\nmlp_hidden = 32\nvocab_size = 128\nsequence_length = 8\n"
        ),
    )
    .unwrap();
    let store_a = dir.path().join("uninterrupted.jsonl");
    let store_b = dir.path().join("resumed.jsonl");
    let sweep_cmd = |store: &std::path::Path| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_powersched"));
        cmd.args(["sweep-run", "--config"]).arg(&config_path).arg("--store").arg(store);
        cmd
    };

    let out = sweep_cmd(&store_a).output().expect("uninterrupted sweep");
    check!(
        failures,
        out.status.success(),
        "uninterrupted sweep exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );

    // Kill the second sweep as soon as its store holds one complete line.
    let mut child = sweep_cmd(&store_b)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn sweep");
    let deadline = Instant::now() + Duration::from_secs(120);
    let complete_lines = |path: &std::path::Path| -> usize {
        fs::read_to_string(path)
            .map(|s| {
                s.split_inclusive('\n')
                    .filter(|l| {
                        l.ends_with('\n')
                            && serde_json::from_str::<serde_json::Value>(l).is_ok()
                    })
                    .count()
            })
            .unwrap_or(0)
    };
    let mut saw_progress = false;
    while Instant::now() < deadline {
        if complete_lines(&store_b) >= 1 {
            saw_progress = true;
            break;
        }
        if child.try_wait().expect("poll child").is_some() {
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    child.kill().ok();
    child.wait().expect("reap child");
    check!(failures, saw_progress, "store never gained a record within 120 s");
    let at_kill = complete_lines(&store_b);
    check!(failures, at_kill < 6, "kill landed after all {at_kill} records; nothing to resume");

    let out = sweep_cmd(&store_b).output().expect("resumed sweep");
    check!(
        failures,
        out.status.success(),
        "resumed sweep exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );

    // Ignoring wall_seconds, the resumed store equals the uninterrupted one.
    let normalize = |path: &std::path::Path| -> Vec<serde_json::Value> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v["wall_seconds"] = 0.0.into();
                v
            })
            .collect()
    };
    let a = normalize(&store_a);
    let b = normalize(&store_b);
    check!(failures, a.len() == 6, "uninterrupted store has {} records, expected 6", a.len());
    check!(failures, a == b, "stores differ after resume:\n{a:#?}\nvs\n{b:#?}");

    let divergent: Vec<&serde_json::Value> =
        b.iter().filter(|v| v["eta"].as_f64() == Some(1e3)).collect();
    check!(failures, divergent.len() == 2, "expected 2 divergent records, got {divergent:?}");
    for v in &divergent {
        check!(failures, v["status"] == "failed", "divergent run not failed: {v}");
        let reason = v["reason"].as_str().unwrap_or("");
        check!(failures, reason.contains("diverg"), "reason {reason:?} does not say diverged");
    }

    let store = RecordStore::open(&store_b).unwrap();
    let analysis = analyze(store.records(), 1).expect("analysis");
    check!(
        failures,
        analysis.cells.iter().all(|c| c.eta_opt <= 2e-3),
        "a divergent eta leaked into the analysis: {:?}",
        analysis.cells
    );
    let out = Command::new(env!("CARGO_BIN_EXE_powersched"))
        .args(["sweep-analyze", "--store"])
        .arg(&store_b)
        .output()
        .expect("sweep-analyze");
    check!(
        failures,
        out.status.success(),
        "sweep-analyze exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );

    report(9, "sweep kill-and-resume robustness", failures);
}
