//! Synchronous-round steppers for DSGTm-TV, DSGT and DSGD.
//!
//! Every update reads the step-`k` snapshot and writes a fresh step-`k+1`
//! state. Stochastic gradients for agent `i` at iteration `k` come from the
//! substream `(seed, oracle, i, k)`, so agents may be evaluated in parallel
//! without changing the result.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flows::StochasticFlow;
use crate::metrics::{error_vector, relative_sumgrad_residual, MetricRow, MetricsError};
use crate::mixing::{is_doubly_stochastic, MixingPair, STOCHASTIC_TOL};
use crate::problems::{OracleConfig, Problem, ProblemKind};
use crate::rng::{stream, Purpose};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("expected {expected} agents, got {found}")]
    AgentCount { expected: usize, found: usize },
    #[error("agent {agent} has dimension {found}, expected {expected}")]
    Dimension { agent: usize, expected: usize, found: usize },
    #[error("stepsize and momentum must be nonnegative (agent {0})")]
    NegativeHyper(usize),
    #[error("at least one stepsize must be positive")]
    NoPositiveStepsize,
    #[error("mixing matrices are not stochastic: {0}")]
    NotStochastic(String),
    #[error("weight matrix is not doubly stochastic")]
    NotDoublyStochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[default]
    DsgtmTv,
    Dsgt,
    Dsgd,
}

impl Algorithm {
    /// True if the method maintains the tracking variable `y`.
    pub fn tracks_gradients(&self) -> bool {
        !matches!(self, Algorithm::Dsgd)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::DsgtmTv => "dsgtm-tv",
            Algorithm::Dsgt => "dsgt",
            Algorithm::Dsgd => "dsgd",
        }
    }
}

/// Stepsize schedule of DSGD: `alpha_i` or `alpha_i / (k + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StepSchedule {
    #[default]
    Constant,
    OneOverK,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: DVector<f64>,
    pub x_prev: DVector<f64>,
    pub y: DVector<f64>,
    /// Stochastic gradient sampled at `x`.
    pub g_last: DVector<f64>,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub agents: Vec<AgentState>,
    pub iteration: usize,
}

fn sample(problem: &Problem, agent: usize, x: &DVector<f64>, oracle: &OracleConfig, seed: u64, k: usize) -> DVector<f64> {
    let mut rng = stream(seed, Purpose::Oracle, agent as u64, k as u64);
    problem.sample_gradient(agent, x, oracle, &mut rng)
}

impl NetworkState {
    /// Initial state: `x_{-1} = x_0`, `y_0 = g_0` sampled at `x_0`.
    pub fn init(
        problem: &Problem,
        x0: &[DVector<f64>],
        alphas: &[f64],
        betas: &[f64],
        oracle: &OracleConfig,
        seed: u64,
    ) -> Result<Self, EngineError> {
        let n = problem.n_agents();
        for len in [x0.len(), alphas.len(), betas.len()] {
            if len != n {
                return Err(EngineError::AgentCount { expected: n, found: len });
            }
        }
        if let Some(agent) = (0..n).find(|&i| !(alphas[i] >= 0.0 && betas[i] >= 0.0)) {
            return Err(EngineError::NegativeHyper(agent));
        }
        if alphas.iter().all(|&a| a == 0.0) {
            return Err(EngineError::NoPositiveStepsize);
        }
        let d = problem.dim();
        if let Some(agent) = x0.iter().position(|x| x.len() != d) {
            return Err(EngineError::Dimension { agent, expected: d, found: x0[agent].len() });
        }
        let agents = (0..n)
            .into_par_iter()
            .map(|i| {
                let g = sample(problem, i, &x0[i], oracle, seed, 0);
                AgentState {
                    x: x0[i].clone(),
                    x_prev: x0[i].clone(),
                    y: g.clone(),
                    g_last: g,
                    alpha: alphas[i],
                    beta: betas[i],
                }
            })
            .collect();
        Ok(Self { agents, iteration: 0 })
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn xs(&self) -> Vec<&DVector<f64>> {
        self.agents.iter().map(|a| &a.x).collect()
    }

    /// `sum_i y_i - sum_i g_i` in the max norm, and `|sum_i g_i|_inf`.
    pub fn sum_identity_gap(&self) -> (f64, f64) {
        let d = self.agents[0].x.len();
        let mut sy = DVector::zeros(d);
        let mut sg = DVector::zeros(d);
        for a in &self.agents {
            sy += &a.y;
            sg += &a.g_last;
        }
        ((sy - &sg).amax(), sg.amax())
    }
}

/// Weighted combination `sum_j w[(i, j)] v_j`, skipping zero weights.
fn mix<'a>(
    weights: &DMatrix<f64>,
    i: usize,
    vs: impl Fn(usize) -> &'a DVector<f64>,
    d: usize,
) -> DVector<f64> {
    let mut out = DVector::zeros(d);
    for j in 0..weights.ncols() {
        let w = weights[(i, j)];
        if w != 0.0 {
            out.axpy(w, vs(j), 1.0);
        }
    }
    out
}

fn check_pair(state: &NetworkState, pair: &MixingPair) -> Result<(), EngineError> {
    let n = state.n();
    if pair.a.shape() != (n, n) || pair.b.shape() != (n, n) {
        return Err(EngineError::AgentCount { expected: n, found: pair.a.nrows() });
    }
    for r in 0..n {
        let row: f64 = pair.a.row(r).sum();
        let col: f64 = pair.b.column(r).sum();
        if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
            return Err(EngineError::NotStochastic(format!("row/column {r} sums to {row}/{col}")));
        }
    }
    if pair.a.iter().chain(pair.b.iter()).any(|&v| v < 0.0) {
        return Err(EngineError::NotStochastic("negative weight".into()));
    }
    Ok(())
}

/// One DSGTm-TV round:
///
/// `x_i <- sum_j A_ij x_j - alpha_i y_i + beta_i (x_i - x_prev_i)`,
/// then `g_i` is sampled at the new `x_i` and
/// `y_i <- sum_j B_ij y_j + g_i(new) - g_i(old)`.
pub fn step_dsgtm_tv(
    state: &NetworkState,
    pair: &MixingPair,
    problem: &Problem,
    oracle: &OracleConfig,
    seed: u64,
) -> Result<NetworkState, EngineError> {
    check_pair(state, pair)?;
    let d = state.agents[0].x.len();
    let next_k = state.iteration + 1;
    let agents = (0..state.n())
        .into_par_iter()
        .map(|i| {
            let me = &state.agents[i];
            let mut x = mix(&pair.a, i, |j| &state.agents[j].x, d);
            x.axpy(-me.alpha, &me.y, 1.0);
            if me.beta != 0.0 {
                x.axpy(me.beta, &(&me.x - &me.x_prev), 1.0);
            }
            let g = sample(problem, i, &x, oracle, seed, next_k);
            let mut y = mix(&pair.b, i, |j| &state.agents[j].y, d);
            y += &g;
            y -= &me.g_last;
            AgentState { x_prev: me.x.clone(), x, y, g_last: g, alpha: me.alpha, beta: me.beta }
        })
        .collect();
    Ok(NetworkState { agents, iteration: next_k })
}

/// One DSGT round: the DSGTm-TV kernel with `A = B = W` and zero momentum.
pub fn step_dsgt(
    state: &NetworkState,
    w: &DMatrix<f64>,
    problem: &Problem,
    oracle: &OracleConfig,
    seed: u64,
) -> Result<NetworkState, EngineError> {
    if !is_doubly_stochastic(w, STOCHASTIC_TOL) {
        return Err(EngineError::NotDoublyStochastic);
    }
    let pair = MixingPair { a: w.clone(), b: w.clone(), a_floor: 0.0, b_floor: 0.0 };
    let mut plain = state.clone();
    plain.agents.iter_mut().for_each(|a| a.beta = 0.0);
    step_dsgtm_tv(&plain, &pair, problem, oracle, seed)
}

/// One DSGD round: `x_i <- sum_j W_ij x_j - alpha_k g_i(x_i)`. The `y`
/// field mirrors the gradient that was used; nothing is tracked.
pub fn step_dsgd(
    state: &NetworkState,
    w: &DMatrix<f64>,
    problem: &Problem,
    oracle: &OracleConfig,
    seed: u64,
    schedule: StepSchedule,
) -> Result<NetworkState, EngineError> {
    if !is_doubly_stochastic(w, STOCHASTIC_TOL) {
        return Err(EngineError::NotDoublyStochastic);
    }
    let d = state.agents[0].x.len();
    let k = state.iteration;
    let next_k = k + 1;
    let agents = (0..state.n())
        .into_par_iter()
        .map(|i| {
            let me = &state.agents[i];
            let alpha = match schedule {
                StepSchedule::Constant => me.alpha,
                StepSchedule::OneOverK => me.alpha / (k + 1) as f64,
            };
            let mut x = mix(w, i, |j| &state.agents[j].x, d);
            x.axpy(-alpha, &me.g_last, 1.0);
            let g = sample(problem, i, &x, oracle, seed, next_k);
            AgentState { x_prev: me.x.clone(), x, y: g.clone(), g_last: g, alpha: me.alpha, beta: me.beta }
        })
        .collect();
    Ok(NetworkState { agents, iteration: next_k })
}

/// Advances `state` by one round of `algorithm`. DSGT and DSGD use `pair.a`
/// as their weight matrix.
pub fn step(
    algorithm: Algorithm,
    state: &NetworkState,
    pair: &MixingPair,
    problem: &Problem,
    oracle: &OracleConfig,
    seed: u64,
    schedule: StepSchedule,
) -> Result<NetworkState, EngineError> {
    match algorithm {
        Algorithm::DsgtmTv => step_dsgtm_tv(state, pair, problem, oracle, seed),
        Algorithm::Dsgt => step_dsgt(state, &pair.a, problem, oracle, seed),
        Algorithm::Dsgd => step_dsgd(state, &pair.a, problem, oracle, seed, schedule),
    }
}

/// Everything one simulated run needs; built by the harness.
#[derive(Debug, Clone, Copy)]
pub struct RunInputs<'a> {
    pub algorithm: Algorithm,
    pub problem: &'a Problem,
    /// One pair per step; the run lasts `pairs.len()` steps.
    pub pairs: &'a [MixingPair],
    /// `phi_0 .. phi_H`, used for the consensus metric.
    pub phi: &'a StochasticFlow,
    /// `pi_0 .. pi_H`, used for the tracking metric.
    pub pi: &'a StochasticFlow,
    pub x_star: &'a DVector<f64>,
    pub x0: &'a [DVector<f64>],
    pub alphas: &'a [f64],
    pub betas: &'a [f64],
    pub oracle: &'a OracleConfig,
    pub schedule: StepSchedule,
    /// Record every `cadence` steps; the first and last step are always kept.
    pub cadence: usize,
    /// Test samples for the accuracy column; empty gives NaN.
    pub test: &'a [usize],
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("step {step}: {source}")]
    Step { step: usize, source: EngineError },
    #[error("step {step}: {source}")]
    Metrics { step: usize, source: MetricsError },
    #[error("flows cover {flows} vectors but the run needs {needed}")]
    FlowLength { flows: usize, needed: usize },
}

/// Metric row for the current state.
pub fn measure(state: &NetworkState, inputs: &RunInputs) -> Result<MetricRow, MetricsError> {
    let k = state.iteration;
    let xs: Vec<&DVector<f64>> = state.agents.iter().map(|a| &a.x).collect();
    let prev: Vec<&DVector<f64>> = state.agents.iter().map(|a| &a.x_prev).collect();
    let tracks = inputs.algorithm.tracks_gradients();
    let ys: Vec<&DVector<f64>> = if tracks { state.agents.iter().map(|a| &a.y).collect() } else { Vec::new() };
    let errors = error_vector(&xs, &prev, &ys, &inputs.phi.vectors[k], &inputs.pi.vectors[k], inputs.x_star)?;
    let n = state.n() as f64;
    let loss = (0..state.n()).map(|i| inputs.problem.local_loss_grad(i, &state.agents[i].x).0).sum::<f64>() / n;
    let accuracy = if inputs.test.is_empty() || inputs.problem.kind != ProblemKind::LogisticL2 {
        f64::NAN
    } else {
        xs.iter().map(|x| inputs.problem.accuracy(x, inputs.test).unwrap_or(f64::NAN)).sum::<f64>() / n
    };
    let sumgrad_residual = if tracks {
        let gs: Vec<&DVector<f64>> = state.agents.iter().map(|a| &a.g_last).collect();
        relative_sumgrad_residual(&ys, &gs)
    } else {
        f64::NAN
    };
    Ok(MetricRow { iter: k, errors, loss, accuracy, sumgrad_residual })
}

/// Runs `inputs.pairs.len()` rounds and returns the recorded rows.
pub fn run(inputs: &RunInputs) -> Result<Vec<MetricRow>, RunError> {
    let horizon = inputs.pairs.len();
    for flow in [inputs.phi, inputs.pi] {
        if flow.len() < horizon + 1 {
            return Err(RunError::FlowLength { flows: flow.len(), needed: horizon + 1 });
        }
    }
    let cadence = inputs.cadence.max(1);
    let mut state = NetworkState::init(inputs.problem, inputs.x0, inputs.alphas, inputs.betas, inputs.oracle, inputs.seed)
        .map_err(|source| RunError::Step { step: 0, source })?;
    let mut rows = vec![measure(&state, inputs).map_err(|source| RunError::Metrics { step: 0, source })?];
    for (k, pair) in inputs.pairs.iter().enumerate() {
        state = step(inputs.algorithm, &state, pair, inputs.problem, inputs.oracle, inputs.seed, inputs.schedule)
            .map_err(|source| RunError::Step { step: k, source })?;
        let done = k + 1;
        if done % cadence == 0 || done == horizon {
            rows.push(measure(&state, inputs).map_err(|source| RunError::Metrics { step: done, source })?);
        }
    }
    Ok(rows)
}
