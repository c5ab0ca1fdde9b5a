//! Error components, identity residuals, loss, accuracy and run records.

use std::io::{self, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::{Problem, ProblemError};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{what}: expected {expected}, got {found}")]
    Dimension { what: &'static str, expected: usize, found: usize },
    #[error("push weight of agent {0} is zero")]
    ZeroPi(usize),
}

/// `V_k = [opt_gap, consensus, state_diff, tracking]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorVector {
    /// `|x_hat - x*|^2` with `x_hat = sum_i phi_i x_i`.
    pub opt_gap: f64,
    /// `sum_i phi_i |x_i - x_hat|^2`.
    pub consensus: f64,
    /// `sum_i |x_i - x_prev_i|^2`.
    pub state_diff: f64,
    /// `sum_i pi_i |y_i / pi_i - sum_j y_j|^2`.
    pub tracking: f64,
}

impl ErrorVector {
    pub fn to_array(&self) -> [f64; 4] {
        [self.opt_gap, self.consensus, self.state_diff, self.tracking]
    }
}

/// `sum_i phi_i x_i`.
pub fn weighted_average(xs: &[&DVector<f64>], phi: &DVector<f64>) -> Result<DVector<f64>, MetricsError> {
    if xs.len() != phi.len() || xs.is_empty() {
        return Err(MetricsError::Dimension { what: "weights", expected: xs.len(), found: phi.len() });
    }
    let mut out = DVector::zeros(xs[0].len());
    for (x, w) in xs.iter().zip(phi.iter()) {
        if x.len() != out.len() {
            return Err(MetricsError::Dimension { what: "state", expected: out.len(), found: x.len() });
        }
        out.axpy(*w, x, 1.0);
    }
    Ok(out)
}

/// The four error components at one step. `ys` may be empty for methods
/// without tracking, in which case `tracking` is NaN.
pub fn error_vector(
    xs: &[&DVector<f64>],
    xs_prev: &[&DVector<f64>],
    ys: &[&DVector<f64>],
    phi: &DVector<f64>,
    pi: &DVector<f64>,
    x_star: &DVector<f64>,
) -> Result<ErrorVector, MetricsError> {
    let x_hat = weighted_average(xs, phi)?;
    if xs_prev.len() != xs.len() {
        return Err(MetricsError::Dimension { what: "previous states", expected: xs.len(), found: xs_prev.len() });
    }
    let opt_gap = (&x_hat - x_star).norm_squared();
    let consensus = xs.iter().zip(phi.iter()).map(|(x, w)| w * (*x - &x_hat).norm_squared()).sum();
    let state_diff = xs.iter().zip(xs_prev).map(|(x, p)| (*x - *p).norm_squared()).sum();
    let tracking = if ys.is_empty() { f64::NAN } else { tracking_error(ys, pi)? };
    Ok(ErrorVector { opt_gap, consensus, state_diff, tracking })
}

/// `S^2(y, pi) = sum_i pi_i |y_i / pi_i - sum_j y_j|^2`.
pub fn tracking_error(ys: &[&DVector<f64>], pi: &DVector<f64>) -> Result<f64, MetricsError> {
    if ys.len() != pi.len() {
        return Err(MetricsError::Dimension { what: "push weights", expected: ys.len(), found: pi.len() });
    }
    if let Some(i) = pi.iter().position(|&p| p <= 0.0) {
        return Err(MetricsError::ZeroPi(i));
    }
    let total = ys.iter().fold(DVector::zeros(ys[0].len()), |acc, y| acc + *y);
    Ok(ys.iter().zip(pi.iter()).map(|(y, p)| p * (*y / *p - &total).norm_squared()).sum())
}

/// `|sum_i y_i - sum_i g_i|_inf`.
pub fn sumgrad_residual(ys: &[&DVector<f64>], gs: &[&DVector<f64>]) -> f64 {
    let d = ys.first().map_or(0, |y| y.len());
    let sy = ys.iter().fold(DVector::zeros(d), |acc, y| acc + *y);
    let sg = gs.iter().fold(DVector::zeros(d), |acc, g| acc + *g);
    (sy - sg).amax()
}

/// Residual relative to the gradient sum: `r / (1 + |sum_i g_i|_inf)`.
pub fn relative_sumgrad_residual(ys: &[&DVector<f64>], gs: &[&DVector<f64>]) -> f64 {
    let d = gs.first().map_or(0, |g| g.len());
    let scale = gs.iter().fold(DVector::zeros(d), |acc, g| acc + *g).amax();
    sumgrad_residual(ys, gs) / (1.0 + scale)
}

/// `(1/n) sum_i |grad f_i(x*)|^2`.
pub fn heterogeneity(problem: &Problem, x_star: &DVector<f64>) -> f64 {
    let n = problem.n_agents();
    (0..n).map(|i| problem.local_loss_grad(i, x_star).1.norm_squared()).sum::<f64>() / n as f64
}

/// Fraction of `indices` classified correctly by `x` (a zero score counts
/// as `+1`).
pub fn accuracy(problem: &Problem, x: &DVector<f64>, indices: &[usize]) -> Result<f64, ProblemError> {
    problem.accuracy(x, indices)
}

/// One recorded row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iter: usize,
    pub errors: ErrorVector,
    /// `(1/n) sum_i f_i(x_i)`.
    pub loss: f64,
    /// Mean test accuracy of the agents' models; NaN without a test set.
    pub accuracy: f64,
    /// Relative gradient-sum residual; NaN for methods without tracking.
    pub sumgrad_residual: f64,
}

pub const CSV_HEADER: &str = "iter,opt_gap,consensus,state_diff,tracking,loss,accuracy,sumgrad_residual";

impl MetricRow {
    /// Values in CSV column order, without `iter`.
    pub fn values(&self) -> [f64; 7] {
        let e = self.errors;
        [e.opt_gap, e.consensus, e.state_diff, e.tracking, self.loss, self.accuracy, self.sumgrad_residual]
    }
}

/// Time series of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<MetricRow>,
    /// Seed of the stochastic oracle for this run.
    pub run_seed: u64,
    /// Seed of graphs, weights, data and hyperparameter draws.
    pub master_seed: u64,
    /// Initial point used for every agent, by description.
    pub initial_point: String,
    /// Serialized configuration that produced the run.
    pub config_echo: String,
}

impl RunRecord {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for row in &self.rows {
            let values: Vec<String> = row.values().iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{},{}", row.iter, values.join(","))?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&MetricRow> {
        self.rows.last()
    }
}
