//! Row-stochastic pull weights `A_k` and column-stochastic push weights
//! `B_k` aligned with a graph.
//!
//! Both matrices share one sparsity pattern: entry `(r, c)` is positive iff
//! `c -> r` is an edge or `r == c`. For `A` this is "row `r` pulls from its
//! in-neighbors"; for `B` it is "column `c` pushes to its out-neighbors".

use std::io::{self, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Digraph, DigraphSeq};

/// Stochasticity tolerance used by validation.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MixingError {
    #[error("node {0} has no self-loop")]
    MissingSelfLoop(usize),
    #[error("metropolis weights need a symmetric graph")]
    NotSymmetric,
    #[error("weight floor {0} must lie in (0, 1]")]
    InvalidFloor(f64),
}

/// How agents pick their weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum WeightRule {
    /// `1/(degree + 1)` over the neighborhood including self.
    #[default]
    Uniform,
    /// Random positive weights, each at least `floor` (capped at
    /// `1/(degree + 1)` so normalization stays feasible).
    Random { floor: f64 },
    /// Symmetric doubly-stochastic weights for undirected graphs; `A = B = W`.
    Metropolis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingPair {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Smallest positive entry of `a`.
    pub a_floor: f64,
    /// Smallest positive entry of `b`.
    pub b_floor: f64,
}

fn min_positive(m: &DMatrix<f64>) -> f64 {
    m.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min)
}

fn neighborhood_weights<R: Rng + ?Sized>(
    support: usize,
    rule: &WeightRule,
    rng: &mut R,
) -> Vec<f64> {
    match rule {
        WeightRule::Random { floor } => {
            let floor = floor.min(1.0 / support as f64);
            let raw: Vec<f64> = (0..support).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let spare = 1.0 - floor * support as f64;
            raw.iter().map(|r| floor + spare * r / total).collect()
        }
        _ => vec![1.0 / support as f64; support],
    }
}

/// Builds `(A, B)` for one graph. `rng` is consumed only by
/// [`WeightRule::Random`].
pub fn build_mixing<R: Rng + ?Sized>(
    g: &Digraph,
    rule: &WeightRule,
    rng: &mut R,
) -> Result<MixingPair, MixingError> {
    let n = g.n();
    if let Some(i) = (0..n).find(|&i| !g.has_self_loop(i)) {
        return Err(MixingError::MissingSelfLoop(i));
    }
    if let WeightRule::Random { floor } = rule {
        if !(*floor > 0.0 && *floor <= 1.0) {
            return Err(MixingError::InvalidFloor(*floor));
        }
    }
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);

    if let WeightRule::Metropolis = rule {
        if !g.is_symmetric() {
            return Err(MixingError::NotSymmetric);
        }
        let degree: Vec<usize> = (0..n).map(|i| g.in_neighbors(i).len()).collect();
        for i in 0..n {
            let mut off = 0.0;
            for j in g.in_neighbors(i) {
                let w = 1.0 / (1.0 + degree[i].max(degree[j]) as f64);
                a[(i, j)] = w;
                off += w;
            }
            a[(i, i)] = 1.0 - off;
        }
        b.copy_from(&a);
    } else {
        for i in 0..n {
            let mut support = g.in_neighbors(i);
            support.push(i);
            support.sort_unstable();
            for (j, w) in support.iter().zip(neighborhood_weights(support.len(), rule, rng)) {
                a[(i, *j)] = w;
            }
        }
        for i in 0..n {
            let mut support = g.out_neighbors(i);
            support.push(i);
            support.sort_unstable();
            for (j, w) in support.iter().zip(neighborhood_weights(support.len(), rule, rng)) {
                b[(*j, i)] = w;
            }
        }
    }
    let a_floor = min_positive(&a);
    let b_floor = min_positive(&b);
    Ok(MixingPair { a, b, a_floor, b_floor })
}

/// One mixing pair per graph. Random weights draw from a stream seeded by
/// `seed`, so the whole sequence is reproducible.
pub fn build_mixing_sequence(
    seq: &DigraphSeq,
    rule: &WeightRule,
    seed: u64,
) -> Result<Vec<MixingPair>, MixingError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d69_7869_6e67);
    let mut out: Vec<MixingPair> = Vec::with_capacity(seq.horizon());
    for (k, g) in seq.graphs.iter().enumerate() {
        // static sequences with deterministic weights reuse the previous pair
        if k > 0 && !matches!(rule, WeightRule::Random { .. }) && seq.graphs[k - 1] == *g {
            let prev = out[k - 1].clone();
            out.push(prev);
            continue;
        }
        out.push(build_mixing(g, rule, &mut rng)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MixingViolation {
    RowSum { row: usize, sum: f64 },
    ColumnSum { col: usize, sum: f64 },
    Negative { matrix: char, row: usize, col: usize, value: f64 },
    /// Positive weight on a non-edge or zero weight on an edge.
    Alignment { matrix: char, row: usize, col: usize, value: f64 },
    Floor { matrix: char, row: usize, col: usize, value: f64, floor: f64 },
    BadFloor { matrix: char, floor: f64 },
    Dimension { expected: usize, found: (usize, usize) },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MixingReport {
    pub violations: Vec<MixingViolation>,
}

impl MixingReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks stochasticity, graph alignment and weight floors; violations are
/// returned as data.
pub fn validate_mixing(pair: &MixingPair, g: &Digraph) -> MixingReport {
    let n = g.n();
    let mut violations = Vec::new();
    for m in [&pair.a, &pair.b] {
        if m.shape() != (n, n) {
            violations.push(MixingViolation::Dimension { expected: n, found: m.shape() });
        }
    }
    if !violations.is_empty() {
        return MixingReport { violations };
    }
    for row in 0..n {
        let sum: f64 = pair.a.row(row).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            violations.push(MixingViolation::RowSum { row, sum });
        }
    }
    for col in 0..n {
        let sum: f64 = pair.b.column(col).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            violations.push(MixingViolation::ColumnSum { col, sum });
        }
    }
    for (name, m, floor) in [('A', &pair.a, pair.a_floor), ('B', &pair.b, pair.b_floor)] {
        if floor.is_nan() || floor <= 0.0 {
            violations.push(MixingViolation::BadFloor { matrix: name, floor });
        }
        for row in 0..n {
            for col in 0..n {
                let value = m[(row, col)];
                if value < 0.0 {
                    violations.push(MixingViolation::Negative { matrix: name, row, col, value });
                    continue;
                }
                let edge = g.has_edge(col, row);
                if edge != (value > 0.0) {
                    violations.push(MixingViolation::Alignment { matrix: name, row, col, value });
                } else if value > 0.0 && value < floor {
                    violations.push(MixingViolation::Floor { matrix: name, row, col, value, floor });
                }
            }
        }
    }
    MixingReport { violations }
}

/// True if `w` is square, nonnegative, and both row and column sums are 1.
pub fn is_doubly_stochastic(w: &DMatrix<f64>, tol: f64) -> bool {
    w.is_square()
        && w.iter().all(|&v| v >= 0.0)
        && w.row_iter().all(|r| (r.sum() - 1.0).abs() <= tol)
        && w.column_iter().all(|c| (c.sum() - 1.0).abs() <= tol)
}

/// Dense CSV, one matrix row per line, full round-trip precision.
pub fn write_matrix_csv<W: Write>(out: &mut W, m: &DMatrix<f64>) -> io::Result<()> {
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}
