//! Fitting the optimal-LR power law and predicting learning rates from it.
//!
//! The optimal learning rate divided by the batch size, `gamma = eta_opt /
//! beta`, follows a power law in the token budget: `gamma = a * T^b`. This
//! module fits `(a, b)` by ordinary least squares in log-log space (the
//! relation is log-linear, and OLS is deterministic and closed-form) and
//! predicts optimal learning rates for unseen budgets as `eta = beta * a *
//! T^b`. Natural logarithms throughout; `a` is recovered as `exp(intercept)`.

use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("point {index}: {reason}")]
    InvalidPoint { index: usize, reason: String },
    #[error("need at least 2 points with distinct token counts, got {distinct} distinct among {total}")]
    TooFewPoints { distinct: usize, total: usize },
    #[error("points CSV: expected header `tokens,gamma`, got `{0}`")]
    BadHeader(String),
    #[error("points CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn invalid(name: &'static str, reason: impl Into<String>) -> FitError {
    FitError::InvalidParam { name, reason: reason.into() }
}

/// One (token budget, gamma) observation.
///
/// Token counts are kept as reals: budgets are integers in practice, but the
/// fit only ever sees `ln(tokens)` and fractional values are harmless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub tokens: f64,
    pub gamma: f64,
}

/// Fitted coefficients of `gamma = a * T^b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    /// Root-mean-square residual in log-gamma space.
    pub rmse_log: f64,
    pub n_points: usize,
}

impl FitResult {
    /// Write the fit as a single CSV row with header `a,b,rmse_log,n_points`.
    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "a,b,rmse_log,n_points")?;
        writeln!(w, "{},{},{},{}", self.a, self.b, self.rmse_log, self.n_points)
    }
}

/// `gamma = eta_opt / beta`, the batch-size-normalized optimal learning rate.
pub fn gamma_of(eta_opt: f64, beta: u64) -> Result<f64, FitError> {
    if beta == 0 {
        return Err(invalid("beta", "must be at least 1 sequence per step"));
    }
    if !eta_opt.is_finite() || eta_opt <= 0.0 {
        return Err(invalid("eta_opt", format!("must be positive and finite, got {eta_opt}")));
    }
    Ok(eta_opt / beta as f64)
}

/// Predicted optimal learning rate `beta * a * T^b` for a budget of `tokens`.
pub fn predict_opt_lr(a: f64, b: f64, beta: u64, tokens: f64) -> Result<f64, FitError> {
    if !a.is_finite() || a <= 0.0 {
        return Err(invalid("a", format!("must be positive and finite, got {a}")));
    }
    if !b.is_finite() {
        return Err(invalid("b", format!("must be finite, got {b}")));
    }
    if beta == 0 {
        return Err(invalid("beta", "must be at least 1 sequence per step"));
    }
    if !tokens.is_finite() || tokens < 1.0 {
        return Err(invalid("tokens", format!("must be at least 1, got {tokens}")));
    }
    Ok(beta as f64 * a * tokens.powf(b))
}

/// Ordinary-least-squares fit of `ln gamma = ln a + b * ln T`.
///
/// Deterministic; errors when fewer than 2 distinct token counts are present
/// (the system is rank-deficient).
pub fn fit_power_law(points: &[SweepPoint]) -> Result<FitResult, FitError> {
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for (index, p) in points.iter().enumerate() {
        if !p.tokens.is_finite() || p.tokens < 1.0 {
            return Err(FitError::InvalidPoint {
                index,
                reason: format!("tokens must be at least 1, got {}", p.tokens),
            });
        }
        if !p.gamma.is_finite() || p.gamma <= 0.0 {
            return Err(FitError::InvalidPoint {
                index,
                reason: format!("gamma must be positive and finite, got {}", p.gamma),
            });
        }
        xs.push(p.tokens.ln());
        ys.push(p.gamma.ln());
    }
    let mut distinct: Vec<f64> = points.iter().map(|p| p.tokens).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(FitError::TooFewPoints { distinct: distinct.len(), total: points.len() });
    }

    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - x_mean) * (x - x_mean);
        sxy += (x - x_mean) * (y - y_mean);
    }
    let b = sxy / sxx;
    let intercept = y_mean - b * x_mean;
    let sq_resid: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + b * x);
            r * r
        })
        .sum();
    Ok(FitResult { a: intercept.exp(), b, rmse_log: (sq_resid / n).sqrt(), n_points: points.len() })
}

/// Read points from CSV with header `tokens,gamma`.
pub fn read_points_csv<R: io::Read>(reader: R) -> Result<Vec<SweepPoint>, FitError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().map(str::trim).collect();
    if cols != ["tokens", "gamma"] {
        return Err(FitError::BadHeader(cols.join(",")));
    }
    let mut points = Vec::new();
    for (index, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |field: usize, name: &'static str| -> Result<f64, FitError> {
            record
                .get(field)
                .ok_or_else(|| FitError::InvalidPoint { index, reason: format!("missing {name}") })?
                .trim()
                .parse::<f64>()
                .map_err(|e| FitError::InvalidPoint { index, reason: format!("bad {name}: {e}") })
        };
        points.push(SweepPoint { tokens: parse(0, "tokens")?, gamma: parse(1, "gamma")? });
    }
    Ok(points)
}
