//! Sweep analysis: per-cell optimal learning rates, batch-size-averaged
//! gamma tables, and the power-law fit over token budgets.
//!
//! Every aggregation step orders its inputs explicitly (cells by key, seed
//! perplexities by value) so the output is a pure function of the record
//! *set*, independent of store order.

use std::collections::BTreeMap;
use std::io;

use crate::powerlaw::{fit_power_law, gamma_of, FitResult, SweepPoint};

use super::store::RunRecord;
use super::SweepError;

/// The best learning rate found in one (model size, token budget, batch
/// size) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOptimum {
    pub model_size: String,
    pub tokens: u64,
    pub beta: u64,
    pub eta_opt: f64,
    /// Mean eval perplexity over seeds at `eta_opt`.
    pub eval_ppl: f64,
    /// True when `eta_opt` sits at an end of the cell's completed eta grid,
    /// meaning the true optimum may lie outside the swept range.
    pub at_grid_edge: bool,
}

/// Gamma averaged over the best batch sizes for one (token budget, model
/// size) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaCell {
    pub tokens: u64,
    pub model_size: String,
    pub avg_gamma: f64,
    pub n_batch_sizes_used: usize,
    /// True when fewer batch sizes than requested were available or any
    /// contributing optimum sat at a grid edge.
    pub flagged: bool,
}

/// [`GammaCell`] pooled across model sizes: one fit input per token budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaRow {
    pub tokens: u64,
    pub avg_gamma: f64,
    /// The smallest batch-size count among the pooled sizes.
    pub n_batch_sizes_used: usize,
    pub flagged: bool,
}

/// Everything the analysis stage produces, from raw cell optima down to the
/// fitted `gamma = a * T^b` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub cells: Vec<CellOptimum>,
    pub per_size: Vec<GammaCell>,
    pub rows: Vec<GammaRow>,
    pub fit: FitResult,
}

/// Mean eval perplexity per eta over completed records, ascending by eta.
///
/// Per-seed perplexities are sorted before summing so the mean does not
/// depend on record order.
fn eta_means<'a, I: IntoIterator<Item = &'a RunRecord>>(records: I) -> Vec<(f64, f64)> {
    let mut by_eta: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in records {
        let Some(ppl) = r.eval_ppl else { continue };
        // Etas are positive, so the bit pattern orders like the value.
        by_eta.entry(r.eta.to_bits()).or_default().push(ppl);
    }
    by_eta
        .into_iter()
        .map(|(bits, mut ppls)| {
            ppls.sort_by(f64::total_cmp);
            let mean = ppls.iter().sum::<f64>() / ppls.len() as f64;
            (f64::from_bits(bits), mean)
        })
        .collect()
}

fn best_eta(means: &[(f64, f64)]) -> Option<(f64, f64)> {
    means
        .iter()
        .copied()
        .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.total_cmp(&y.0)))
}

/// The learning rate minimizing mean eval perplexity in one cell, with that
/// perplexity. Ties resolve to the smaller eta. Failed runs never
/// contribute; a cell with no completed runs is an error.
pub fn select_optimal(
    records: &[RunRecord],
    beta: u64,
    tokens: u64,
    model_size: &str,
) -> Result<(f64, f64), SweepError> {
    let means = eta_means(records.iter().filter(|r| {
        r.is_done() && r.beta == beta && r.tokens == tokens && r.model_size == model_size
    }));
    best_eta(&means).ok_or_else(|| SweepError::EmptyCell {
        beta,
        tokens,
        model_size: model_size.to_string(),
    })
}

/// Optimal learning rates for every populated cell, sorted by (model size,
/// tokens, beta). Cells whose runs all failed are absent.
pub fn cell_optima(records: &[RunRecord]) -> Vec<CellOptimum> {
    let done: Vec<&RunRecord> = records.iter().filter(|r| r.is_done()).collect();
    let mut keys: Vec<(&str, u64, u64)> = done
        .iter()
        .map(|r| (r.model_size.as_str(), r.tokens, r.beta))
        .collect();
    keys.sort();
    keys.dedup();

    keys.into_iter()
        .filter_map(|(size, tokens, beta)| {
            let means = eta_means(
                done.iter()
                    .copied()
                    .filter(|r| r.model_size == size && r.tokens == tokens && r.beta == beta),
            );
            let (eta_opt, eval_ppl) = best_eta(&means)?;
            // `means` is ascending in eta, so the ends are the swept extremes.
            let at_grid_edge = eta_opt == means.first().unwrap().0 || eta_opt == means.last().unwrap().0;
            Some(CellOptimum {
                model_size: size.to_string(),
                tokens,
                beta,
                eta_opt,
                eval_ppl,
                at_grid_edge,
            })
        })
        .collect()
}

/// Full analysis: cell optima, gamma averaged over the `top_k`
/// best-perplexity batch sizes per (token budget, model size), pooled
/// across sizes per budget, and the power-law fit `gamma = a * T^b`.
pub fn analyze(records: &[RunRecord], top_k: usize) -> Result<Analysis, SweepError> {
    if top_k == 0 {
        return Err(SweepError::InvalidTopK);
    }
    let cells = cell_optima(records);

    let mut size_keys: Vec<(u64, &str)> = cells
        .iter()
        .map(|c| (c.tokens, c.model_size.as_str()))
        .collect();
    size_keys.sort();
    size_keys.dedup();

    let mut per_size = Vec::with_capacity(size_keys.len());
    for (tokens, size) in size_keys {
        let mut group: Vec<&CellOptimum> = cells
            .iter()
            .filter(|c| c.tokens == tokens && c.model_size == size)
            .collect();
        // Best perplexity first; beta is unique within the group, so the
        // ranking (and with it the gamma summation order) is total.
        group.sort_by(|x, y| x.eval_ppl.total_cmp(&y.eval_ppl).then(x.beta.cmp(&y.beta)));
        group.truncate(top_k);
        let mut gamma_sum = 0.0;
        for c in &group {
            gamma_sum += gamma_of(c.eta_opt, c.beta)?;
        }
        per_size.push(GammaCell {
            tokens,
            model_size: size.to_string(),
            avg_gamma: gamma_sum / group.len() as f64,
            n_batch_sizes_used: group.len(),
            flagged: group.len() < top_k || group.iter().any(|c| c.at_grid_edge),
        });
    }

    let mut token_keys: Vec<u64> = per_size.iter().map(|c| c.tokens).collect();
    token_keys.sort_unstable();
    token_keys.dedup();

    let mut rows = Vec::with_capacity(token_keys.len());
    for tokens in token_keys {
        // `per_size` is ordered by (tokens, model_size); the filtered group
        // inherits that order.
        let group: Vec<&GammaCell> = per_size.iter().filter(|c| c.tokens == tokens).collect();
        rows.push(GammaRow {
            tokens,
            avg_gamma: group.iter().map(|c| c.avg_gamma).sum::<f64>() / group.len() as f64,
            n_batch_sizes_used: group.iter().map(|c| c.n_batch_sizes_used).min().unwrap_or(0),
            flagged: group.iter().any(|c| c.flagged),
        });
    }

    let points: Vec<SweepPoint> = rows
        .iter()
        .map(|r| SweepPoint { tokens: r.tokens as f64, gamma: r.avg_gamma })
        .collect();
    let fit = fit_power_law(&points)?;

    Ok(Analysis { cells, per_size, rows, fit })
}

/// Write the pooled gamma table with header
/// `tokens,avg_gamma,n_batch_sizes_used,flagged`.
pub fn write_gamma_csv<W: io::Write>(rows: &[GammaRow], mut w: W) -> io::Result<()> {
    writeln!(w, "tokens,avg_gamma,n_batch_sizes_used,flagged")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.tokens, r.avg_gamma, r.n_batch_sizes_used, r.flagged)?;
    }
    Ok(())
}

/// Write per-cell optima with header
/// `model_size,tokens,beta,eta_opt,eval_ppl,at_grid_edge`.
pub fn write_cells_csv<W: io::Write>(cells: &[CellOptimum], mut w: W) -> io::Result<()> {
    writeln!(w, "model_size,tokens,beta,eta_opt,eval_ppl,at_grid_edge")?;
    for c in cells {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            c.model_size, c.tokens, c.beta, c.eta_opt, c.eval_ppl, c.at_grid_edge
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::store::RunStatus;

    fn rec(eta: f64, beta: u64, tokens: u64, size: &str, seed: u64, ppl: f64) -> RunRecord {
        RunRecord {
            run_id: format!("{eta}|{beta}|{tokens}|{size}|{seed}"),
            eta,
            beta,
            tokens,
            model_size: size.to_string(),
            seed,
            final_train_loss: Some(ppl.ln()),
            eval_ppl: Some(ppl),
            wall_seconds: 0.0,
            status: RunStatus::Done,
            reason: None,
        }
    }

    fn failed(eta: f64, beta: u64, tokens: u64, size: &str, seed: u64) -> RunRecord {
        RunRecord {
            run_id: format!("failed|{eta}|{beta}|{tokens}|{size}|{seed}"),
            eta,
            beta,
            tokens,
            model_size: size.to_string(),
            seed,
            final_train_loss: None,
            eval_ppl: None,
            wall_seconds: 0.0,
            status: RunStatus::Failed,
            reason: Some("loss diverged".to_string()),
        }
    }

    #[test]
    fn select_optimal_averages_seeds_and_picks_the_minimum() {
        let records = vec![
            // eta=1e-3 mean 3.0, eta=2e-3 mean 2.5, eta=4e-3 mean 2.9.
            rec(1e-3, 8, 1000, "d32", 0, 3.2),
            rec(1e-3, 8, 1000, "d32", 1, 2.8),
            rec(2e-3, 8, 1000, "d32", 0, 2.4),
            rec(2e-3, 8, 1000, "d32", 1, 2.6),
            rec(4e-3, 8, 1000, "d32", 0, 2.9),
            rec(4e-3, 8, 1000, "d32", 1, 2.9),
        ];
        let (eta, ppl) = select_optimal(&records, 8, 1000, "d32").unwrap();
        assert_eq!(eta, 2e-3);
        assert_eq!(ppl, 2.5);

        let mut shuffled = records.clone();
        shuffled.reverse();
        shuffled.rotate_left(2);
        assert_eq!(select_optimal(&shuffled, 8, 1000, "d32").unwrap(), (eta, ppl));
    }

    #[test]
    fn exact_perplexity_ties_resolve_to_the_smaller_eta() {
        let records = vec![
            rec(0.0008, 16, 5000, "d32", 0, 2.75),
            rec(0.0016, 16, 5000, "d32", 0, 2.75),
            rec(0.0032, 16, 5000, "d32", 0, 2.80),
        ];
        let (eta, _) = select_optimal(&records, 16, 5000, "d32").unwrap();
        assert_eq!(eta, 0.0008);
    }

    #[test]
    fn selection_on_a_bowl_shaped_grid_finds_the_interior_minimum() {
        let grid = [
            (0.0032, 12.1),
            (0.0064, 11.4),
            (0.0128, 11.1),
            (0.0256, 11.3),
            (0.0512, 12.0),
        ];
        let records: Vec<RunRecord> = grid
            .iter()
            .map(|&(eta, ppl)| rec(eta, 128, 2_000_000_000, "d1024", 0, ppl))
            .collect();
        let (eta, ppl) = select_optimal(&records, 128, 2_000_000_000, "d1024").unwrap();
        assert_eq!(eta, 0.0128);
        assert_eq!(ppl, 11.1);
    }

    #[test]
    fn an_unpopulated_cell_is_an_error() {
        let records = vec![rec(1e-3, 8, 1000, "d32", 0, 3.0)];
        let err = select_optimal(&records, 16, 1000, "d32").unwrap_err();
        match err {
            SweepError::EmptyCell { beta, tokens, model_size } => {
                assert_eq!((beta, tokens, model_size.as_str()), (16, 1000, "d32"));
            }
            other => panic!("expected EmptyCell, got {other:?}"),
        }
    }

    #[test]
    fn failed_runs_are_excluded_even_when_nominally_better() {
        let mut records = vec![
            rec(1e-3, 8, 1000, "d32", 0, 3.0),
            rec(2e-3, 8, 1000, "d32", 0, 2.8),
        ];
        // A failed run at the eta that would otherwise win, with a
        // fabricated low perplexity that must be ignored.
        let mut bad = failed(4e-3, 8, 1000, "d32", 0);
        bad.eval_ppl = Some(1.5);
        records.push(bad);
        let (eta, _) = select_optimal(&records, 8, 1000, "d32").unwrap();
        assert_eq!(eta, 2e-3);

        // A cell where everything failed is empty, not best-of-failures.
        let all_failed = vec![failed(1e-3, 4, 1000, "d32", 0)];
        assert!(matches!(
            select_optimal(&all_failed, 4, 1000, "d32"),
            Err(SweepError::EmptyCell { .. })
        ));
    }

    #[test]
    fn grid_edge_optima_are_flagged_per_cell() {
        let mut records = Vec::new();
        // beta=8: minimum at the smallest eta (edge).
        for (eta, ppl) in [(1e-3, 2.0), (2e-3, 2.2), (4e-3, 2.4)] {
            records.push(rec(eta, 8, 1000, "d32", 0, ppl));
        }
        // beta=16: interior minimum.
        for (eta, ppl) in [(1e-3, 2.4), (2e-3, 2.0), (4e-3, 2.2)] {
            records.push(rec(eta, 16, 1000, "d32", 0, ppl));
        }
        // beta=32: minimum at the largest eta (edge).
        for (eta, ppl) in [(1e-3, 2.4), (2e-3, 2.2), (4e-3, 2.0)] {
            records.push(rec(eta, 32, 1000, "d32", 0, ppl));
        }
        let cells = cell_optima(&records);
        assert_eq!(cells.len(), 3);
        let by_beta = |b: u64| cells.iter().find(|c| c.beta == b).unwrap();
        assert!(by_beta(8).at_grid_edge);
        assert!(!by_beta(16).at_grid_edge);
        assert!(by_beta(32).at_grid_edge);
        // The completed-eta grid is what counts: with the edge etas failed,
        // the interior optimum of the surviving grid is an edge again.
        let mut pruned: Vec<RunRecord> = records
            .iter()
            .filter(|r| !(r.beta == 16 && r.eta == 1e-3))
            .cloned()
            .collect();
        pruned.push(failed(1e-3, 16, 1000, "d32", 0));
        let cells = cell_optima(&pruned);
        assert!(cells.iter().find(|c| c.beta == 16).unwrap().at_grid_edge);
    }

    #[test]
    fn gamma_averages_the_top_k_batch_sizes_by_perplexity() {
        let mut records = Vec::new();
        // Four betas; interior optima everywhere. Perplexity ranks the
        // betas 16 < 8 < 32 < 64, so top-3 excludes beta=64. Two budgets
        // with identical structure so the trailing fit is well-posed.
        let cells: [(u64, f64, f64); 4] = [
            (8, 2e-3, 2.10),
            (16, 4e-3, 2.05),
            (32, 8e-3, 2.20),
            (64, 1.6e-2, 2.30),
        ];
        for &tokens in &[1000u64, 2000] {
            for &(beta, opt_eta, opt_ppl) in &cells {
                records.push(rec(opt_eta / 2.0, beta, tokens, "d32", 0, opt_ppl + 0.3));
                records.push(rec(opt_eta, beta, tokens, "d32", 0, opt_ppl));
                records.push(rec(opt_eta * 2.0, beta, tokens, "d32", 0, opt_ppl + 0.4));
            }
        }
        let analysis = analyze(&records, 3).unwrap();
        assert_eq!(analysis.per_size.len(), 2);
        let cell = &analysis.per_size[0];
        assert_eq!(cell.tokens, 1000);
        let expected = (2e-3 / 8.0 + 4e-3 / 16.0 + 8e-3 / 32.0) / 3.0;
        assert_eq!(cell.avg_gamma, expected);
        assert_eq!(cell.n_batch_sizes_used, 3);
        assert!(!cell.flagged);
        assert_eq!(analysis.rows.len(), 2);
        assert_eq!(analysis.rows[0].avg_gamma, expected);
    }

    #[test]
    fn too_few_batch_sizes_uses_all_and_flags_the_row() {
        let mut records = Vec::new();
        for &tokens in &[1000u64, 2000] {
            for &beta in &[8u64, 16] {
                let opt = 1e-3 * beta as f64;
                records.push(rec(opt / 2.0, beta, tokens, "d32", 0, 2.5));
                records.push(rec(opt, beta, tokens, "d32", 0, 2.0));
                records.push(rec(opt * 2.0, beta, tokens, "d32", 0, 2.6));
            }
        }
        let analysis = analyze(&records, 3).unwrap();
        let cell = &analysis.per_size[0];
        assert_eq!(cell.n_batch_sizes_used, 2);
        assert!(cell.flagged);
        assert_eq!(cell.avg_gamma, 1e-3);
        assert!(analysis.rows[0].flagged);
    }

    #[test]
    fn an_edge_optimum_flags_the_gamma_average() {
        let mut records = Vec::new();
        for &tokens in &[1000u64, 2000] {
            for &beta in &[8u64, 16, 32] {
                let opt = 1e-3 * beta as f64;
                // beta=8's optimum sits at the smallest swept eta.
                if beta != 8 {
                    records.push(rec(opt / 2.0, beta, tokens, "d32", 0, 2.5));
                }
                records.push(rec(opt, beta, tokens, "d32", 0, 2.0));
                records.push(rec(opt * 2.0, beta, tokens, "d32", 0, 2.6));
            }
        }
        let analysis = analyze(&records, 3).unwrap();
        assert!(analysis.per_size[0].flagged);
        assert_eq!(analysis.per_size[0].n_batch_sizes_used, 3);
    }

    #[test]
    fn zero_top_k_is_rejected() {
        let records = vec![rec(1e-3, 8, 1000, "d32", 0, 2.0)];
        assert!(matches!(analyze(&records, 0), Err(SweepError::InvalidTopK)));
    }

    /// End-to-end oracle: records manufactured so the optimal learning rate
    /// is exactly `beta * 4.6 * T^-0.51` must yield that power law back
    /// from the full pipeline.
    #[test]
    fn analysis_recovers_a_planted_power_law() {
        let (a_true, b_true) = (4.6, -0.51);
        let budgets = [1_000_000u64, 2_000_000, 4_000_000, 8_000_000];
        let betas = [8u64, 16, 32, 64];
        let mut records = Vec::new();
        for &tokens in &budgets {
            let gamma_star = a_true * (tokens as f64).powf(b_true);
            for &beta in &betas {
                let eta_star = beta as f64 * gamma_star;
                for mult in [0.25, 0.5, 1.0, 2.0, 4.0] {
                    let eta = eta_star * mult;
                    let ppl = 2.0 + (eta.ln() - eta_star.ln()).powi(2);
                    records.push(rec(eta, beta, tokens, "d64", 0, ppl));
                }
            }
        }
        let analysis = analyze(&records, 3).unwrap();
        assert_eq!(analysis.rows.len(), budgets.len());
        for row in &analysis.rows {
            assert!(!row.flagged);
            assert_eq!(row.n_batch_sizes_used, 3);
            let gamma_star = a_true * (row.tokens as f64).powf(b_true);
            assert!((row.avg_gamma / gamma_star - 1.0).abs() < 1e-12);
        }
        assert!(
            (analysis.fit.a / a_true - 1.0).abs() < 1e-6,
            "a = {}",
            analysis.fit.a
        );
        assert!(
            (analysis.fit.b / b_true - 1.0).abs() < 1e-6,
            "b = {}",
            analysis.fit.b
        );
        assert!(analysis.fit.rmse_log < 1e-9);
        assert_eq!(analysis.fit.n_points, budgets.len());
    }

    #[test]
    fn analysis_is_invariant_to_record_order() {
        let mut records = Vec::new();
        for (t_idx, &tokens) in [500_000u64, 1_000_000, 2_000_000].iter().enumerate() {
            for &beta in &[8u64, 16, 32] {
                for (e_idx, mult) in [0.5, 1.0, 2.0].into_iter().enumerate() {
                    let eta = 1e-3 * beta as f64 * mult;
                    for seed in 0..2u64 {
                        let ppl = 2.0
                            + 0.1 * (e_idx as f64 - 1.0).abs()
                            + 0.01 * t_idx as f64
                            + 0.001 * seed as f64;
                        records.push(rec(eta, beta, tokens, "d32", seed, ppl));
                    }
                }
            }
        }
        let baseline = analyze(&records, 3).unwrap();
        let mut shuffled = records.clone();
        shuffled.reverse();
        shuffled.rotate_left(7);
        shuffled.swap(0, 11);
        assert_eq!(analyze(&shuffled, 3).unwrap(), baseline);
    }

    #[test]
    fn csv_writers_emit_the_pinned_headers() {
        let rows = vec![GammaRow {
            tokens: 1_000_000,
            avg_gamma: 2.5e-4,
            n_batch_sizes_used: 3,
            flagged: false,
        }];
        let mut buf = Vec::new();
        write_gamma_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "tokens,avg_gamma,n_batch_sizes_used,flagged\n1000000,0.00025,3,false\n"
        );

        let cells = vec![CellOptimum {
            model_size: "d64".to_string(),
            tokens: 1_000_000,
            beta: 16,
            eta_opt: 4e-3,
            eval_ppl: 2.25,
            at_grid_edge: true,
        }];
        let mut buf = Vec::new();
        write_cells_csv(&cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "model_size,tokens,beta,eta_opt,eval_ppl,at_grid_edge\nd64,1000000,16,0.004,2.25,true\n"
        );
    }
}
