//! Local cost functions, stochastic first-order oracles and the centralized
//! reference solution.
//!
//! Agent `i` owns a shard `S_i` of the training samples and the cost
//! `f_i(x) = (1/|S_i|) sum_{j in S_i} loss_j(x) + (lambda/2)|x|^2`. The global
//! cost is `f = (1/n) sum_i f_i`.

mod data;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::{partition, Dataset, PartitionScheme};

/// Gradient-norm target of [`Problem::solve_reference`].
pub const REFERENCE_GRAD_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("data error: {0}")]
    Data(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("sample index {0} out of range")]
    SampleOutOfRange(usize),
    #[error("problem is not strongly convex (mu = {0})")]
    NotStronglyConvex(f64),
    #[error("reference solver stopped at gradient norm {grad_norm:e} after {iterations} iterations")]
    NotConverged { iterations: usize, grad_norm: f64 },
    #[error("empty evaluation set")]
    EmptyEvaluation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// Binary logistic loss on `[bias; weights]`, dimension `p + 1`.
    LogisticL2,
    /// `0.5 |x - b_j|^2` per sample, dimension `p`.
    Quadratic,
}

/// Local costs over a shared dataset split into agent shards.
#[derive(Debug, Clone)]
pub struct Problem {
    pub kind: ProblemKind,
    pub lambda: f64,
    data: Arc<Dataset>,
    shards: Vec<Vec<usize>>,
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// `1 / (1 + exp(t))` without overflow.
fn sigmoid_neg(t: f64) -> f64 {
    if t >= 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

impl Problem {
    pub fn new(
        kind: ProblemKind,
        lambda: f64,
        data: Arc<Dataset>,
        shards: Vec<Vec<usize>>,
    ) -> Result<Self, ProblemError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(ProblemError::Data(format!("regularization {lambda} must be nonnegative")));
        }
        if shards.is_empty() || shards.iter().any(Vec::is_empty) {
            return Err(ProblemError::Data("every agent needs at least one sample".into()));
        }
        if let Some(&j) = shards.iter().flatten().find(|&&j| j >= data.len()) {
            return Err(ProblemError::SampleOutOfRange(j));
        }
        Ok(Self { kind, lambda, data, shards })
    }

    pub fn n_agents(&self) -> usize {
        self.shards.len()
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            ProblemKind::LogisticL2 => self.data.feature_dim() + 1,
            ProblemKind::Quadratic => self.data.feature_dim(),
        }
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn shard(&self, agent: usize) -> &[usize] {
        &self.shards[agent]
    }

    /// Adds the gradient of one sample loss into `grad` and returns the loss.
    fn accumulate(&self, x: &[f64], j: usize, weight: f64, grad: &mut [f64]) -> f64 {
        let b = self.data.features(j);
        match self.kind {
            ProblemKind::LogisticL2 => {
                let label = self.data.label(j);
                let z = x[0] + x[1..].iter().zip(b).map(|(w, f)| w * f).sum::<f64>();
                let t = label * z;
                let coeff = -label * sigmoid_neg(t) * weight;
                grad[0] += coeff;
                for (g, f) in grad[1..].iter_mut().zip(b) {
                    *g += coeff * f;
                }
                softplus(-t)
            }
            ProblemKind::Quadratic => {
                let mut loss = 0.0;
                for ((g, xi), f) in grad.iter_mut().zip(x).zip(b) {
                    let d = xi - f;
                    *g += weight * d;
                    loss += 0.5 * d * d;
                }
                loss
            }
        }
    }

    /// Mean sample loss over `batch` plus the regularizer, and its gradient.
    pub fn loss_and_grad(&self, x: &DVector<f64>, batch: &[usize]) -> Result<(f64, DVector<f64>), ProblemError> {
        if batch.is_empty() {
            return Err(ProblemError::EmptyBatch);
        }
        if let Some(&j) = batch.iter().find(|&&j| j >= self.data.len()) {
            return Err(ProblemError::SampleOutOfRange(j));
        }
        Ok(self.batch_loss_grad(x, batch.iter().copied(), batch.len()))
    }

    fn batch_loss_grad(
        &self,
        x: &DVector<f64>,
        batch: impl Iterator<Item = usize>,
        size: usize,
    ) -> (f64, DVector<f64>) {
        let weight = 1.0 / size as f64;
        let mut grad = DVector::zeros(self.dim());
        let xs = x.as_slice();
        let mut loss = 0.0;
        for j in batch {
            loss += self.accumulate(xs, j, weight, grad.as_mut_slice());
        }
        grad.axpy(self.lambda, x, 1.0);
        (loss * weight + 0.5 * self.lambda * x.norm_squared(), grad)
    }

    /// `f_i(x)` and its gradient over the full local shard.
    pub fn local_loss_grad(&self, agent: usize, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let shard = &self.shards[agent];
        self.batch_loss_grad(x, shard.iter().copied(), shard.len())
    }

    /// `f(x) = (1/n) sum_i f_i(x)` and its gradient.
    pub fn global_loss_grad(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = self.n_agents() as f64;
        let mut total = 0.0;
        let mut grad = DVector::zeros(self.dim());
        for i in 0..self.n_agents() {
            let (f, g) = self.local_loss_grad(i, x);
            total += f;
            grad += g;
        }
        (total / n, grad / n)
    }

    /// Hessian of the global cost.
    pub fn global_hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let n = self.n_agents() as f64;
        match self.kind {
            ProblemKind::Quadratic => DMatrix::identity(d, d) * (1.0 + self.lambda),
            ProblemKind::LogisticL2 => {
                let rows: usize = self.shards.iter().map(Vec::len).sum();
                let mut weighted = DMatrix::zeros(rows, d);
                let mut r = 0;
                for shard in &self.shards {
                    for &j in shard {
                        let b = self.data.features(j);
                        let z = x[0] + x.as_slice()[1..].iter().zip(b).map(|(w, f)| w * f).sum::<f64>();
                        let s = sigmoid_neg(z);
                        let scale = (s * (1.0 - s) / (n * shard.len() as f64)).sqrt();
                        weighted[(r, 0)] = scale;
                        for (c, f) in b.iter().enumerate() {
                            weighted[(r, c + 1)] = scale * f;
                        }
                        r += 1;
                    }
                }
                let mut h = weighted.tr_mul(&weighted);
                for c in 0..d {
                    h[(c, c)] += self.lambda;
                }
                h
            }
        }
    }

    /// Smoothness and strong convexity constants `(L, mu)`.
    ///
    /// For the logistic cost, `mu = lambda` and `L` is the largest local
    /// constant `lambda + lambda_max(sum_j b~_j b~_j^T) / (4 |S_i|)` with
    /// `b~ = [1; b]`, so every `f_i` is `L`-smooth. The eigenvalue comes from
    /// power iteration.
    pub fn estimate_l_mu(&self) -> (f64, f64) {
        match self.kind {
            ProblemKind::Quadratic => (1.0 + self.lambda, 1.0 + self.lambda),
            ProblemKind::LogisticL2 => {
                let l = (0..self.n_agents())
                    .map(|i| self.lambda + self.local_scatter_eigenvalue(i) / (4.0 * self.shards[i].len() as f64))
                    .fold(0.0, f64::max);
                (l, self.lambda)
            }
        }
    }

    /// Largest eigenvalue of `sum_{j in S_i} b~_j b~_j^T`, matrix free.
    fn local_scatter_eigenvalue(&self, agent: usize) -> f64 {
        let d = self.dim();
        let apply = |v: &DVector<f64>| {
            let mut out = DVector::zeros(d);
            for &j in &self.shards[agent] {
                let b = self.data.features(j);
                let dot = v[0] + v.as_slice()[1..].iter().zip(b).map(|(x, f)| x * f).sum::<f64>();
                out[0] += dot;
                for (o, f) in out.as_mut_slice()[1..].iter_mut().zip(b) {
                    *o += dot * f;
                }
            }
            out
        };
        let mut v = DVector::from_fn(d, |i, _| 1.0 + (i % 7) as f64 * 0.1);
        v.normalize_mut();
        let mut value = 0.0;
        for _ in 0..100_000 {
            let w = apply(&v);
            let next_value = v.dot(&w);
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            v = w / norm;
            if (next_value - value).abs() <= 1e-15 * next_value {
                return next_value;
            }
            value = next_value;
        }
        value
    }

    /// Centralized minimizer `x*` of `f` and `f(x*)`, by damped Newton.
    pub fn solve_reference(&self) -> Result<(DVector<f64>, f64), ProblemError> {
        let (_, mu) = self.estimate_l_mu();
        if mu <= 0.0 {
            return Err(ProblemError::NotStronglyConvex(mu));
        }
        let mut x = DVector::zeros(self.dim());
        let max_iter = 200;
        for _ in 0..max_iter {
            let (f, g) = self.global_loss_grad(&x);
            let grad_norm = g.norm();
            if grad_norm <= REFERENCE_GRAD_TOL {
                return Ok((x, f));
            }
            let h = self.global_hessian(&x);
            let step = match h.cholesky() {
                Some(chol) => -chol.solve(&g),
                None => -&g,
            };
            let mut t = 1.0;
            // close to the optimum a full step is taken; rounding makes the
            // sufficient-decrease test unreliable there
            if grad_norm > 1e-6 {
                let slope = g.dot(&step);
                while t > 1e-10 && self.global_loss_grad(&(&x + &step * t)).0 > f + 1e-4 * t * slope {
                    t *= 0.5;
                }
            }
            x += step * t;
        }
        let (f, g) = self.global_loss_grad(&x);
        if g.norm() <= REFERENCE_GRAD_TOL {
            Ok((x, f))
        } else {
            Err(ProblemError::NotConverged { iterations: max_iter, grad_norm: g.norm() })
        }
    }

    /// Fraction of `indices` with `sign(x_0 + w^T b) == label`, where a zero
    /// score counts as `+1`. Only meaningful for the logistic cost.
    pub fn accuracy(&self, x: &DVector<f64>, indices: &[usize]) -> Result<f64, ProblemError> {
        if indices.is_empty() {
            return Err(ProblemError::EmptyEvaluation);
        }
        let correct = indices
            .iter()
            .filter(|&&j| {
                let b = self.data.features(j);
                let z = x[0] + x.as_slice()[1..].iter().zip(b).map(|(w, f)| w * f).sum::<f64>();
                let predicted = if z >= 0.0 { 1.0 } else { -1.0 };
                predicted == self.data.label(j)
            })
            .count();
        Ok(correct as f64 / indices.len() as f64)
    }

    /// One stochastic gradient of `f_i` at `x`.
    pub fn sample_gradient<R: Rng + ?Sized>(
        &self,
        agent: usize,
        x: &DVector<f64>,
        oracle: &OracleConfig,
        rng: &mut R,
    ) -> DVector<f64> {
        let shard = &self.shards[agent];
        match oracle.mode {
            OracleMode::Exact => self.local_loss_grad(agent, x).1,
            OracleMode::Minibatch => {
                let size = oracle.effective_batch(shard.len());
                let picks = index::sample(rng, shard.len(), size);
                self.batch_loss_grad(x, picks.iter().map(|k| shard[k]), size).1
            }
            OracleMode::ExactPlusNoise => {
                let mut g = self.local_loss_grad(agent, x).1;
                if oracle.sigma > 0.0 {
                    let scale = oracle.sigma / (g.len() as f64).sqrt();
                    for v in g.iter_mut() {
                        *v += scale * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                g
            }
        }
    }

    /// Variance bound `sigma^2` of the oracle, as used by the theory.
    ///
    /// Minibatch mode has no configured variance; it is evaluated at `x` as
    /// the exact without-replacement sampling variance
    /// `(m - s) / (s (m - 1)) * (1/m) sum_j |grad loss_j - grad f_i|^2`
    /// for shard size `m` and batch size `s`, maximized over agents.
    pub fn oracle_variance(&self, oracle: &OracleConfig, x: &DVector<f64>) -> f64 {
        match oracle.mode {
            OracleMode::Exact => 0.0,
            OracleMode::ExactPlusNoise => oracle.sigma * oracle.sigma,
            OracleMode::Minibatch => (0..self.n_agents())
                .map(|i| {
                    let shard = &self.shards[i];
                    let m = shard.len();
                    let s = oracle.effective_batch(m);
                    if m < 2 || s >= m {
                        return 0.0;
                    }
                    let full = self.local_loss_grad(i, x).1;
                    let spread: f64 = shard
                        .iter()
                        .map(|&j| (self.batch_loss_grad(x, std::iter::once(j), 1).1 - &full).norm_squared())
                        .sum::<f64>()
                        / m as f64;
                    (m - s) as f64 / (s as f64 * (m - 1) as f64) * spread
                })
                .fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    #[default]
    Exact,
    /// Uniform batch drawn without replacement from the local shard.
    Minibatch,
    /// Exact gradient plus isotropic Gaussian noise of total variance
    /// `sigma^2`.
    ExactPlusNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub mode: OracleMode,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub sigma: f64,
}

fn default_batch() -> usize {
    1
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { mode: OracleMode::Exact, batch_size: 1, sigma: 0.0 }
    }
}

impl OracleConfig {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn noisy(sigma: f64) -> Self {
        Self { mode: OracleMode::ExactPlusNoise, sigma, ..Self::default() }
    }

    pub fn minibatch(batch_size: usize) -> Self {
        Self { mode: OracleMode::Minibatch, batch_size, ..Self::default() }
    }

    /// True if every call returns the exact local gradient.
    pub fn is_deterministic(&self) -> bool {
        match self.mode {
            OracleMode::Exact => true,
            OracleMode::ExactPlusNoise => self.sigma == 0.0,
            OracleMode::Minibatch => false,
        }
    }

    /// Batch size clamped to `[1, local_size]`.
    pub fn effective_batch(&self, local_size: usize) -> usize {
        self.batch_size.clamp(1, local_size.max(1))
    }

    /// Logs a warning for each agent whose shard is smaller than the batch.
    pub fn warn_if_clamped(&self, problem: &Problem) {
        if self.mode != OracleMode::Minibatch {
            return;
        }
        for i in 0..problem.n_agents() {
            let m = problem.shard(i).len();
            if self.batch_size > m {
                log::warn!("batch size {} exceeds agent {i}'s {m} samples; clamped", self.batch_size);
            }
        }
    }
}
