//! Convergence-analysis constants, the 4x4 composite error system and the
//! admissible stepsize / momentum region.
//!
//! The error vector is `V = [opt_gap, consensus, state_diff, tracking]`.
//! On every step `V_{k+1} <= M V_k + b` componentwise; `rho(M) < 1`
//! certifies linear convergence to a neighborhood of size `(I - M)^{-1} b`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::flows::StochasticFlow;
use crate::graph::GraphStats;

/// Guard added to the realized maxima of `tau_k` and `c_k`.
pub const BOUND_GUARD: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("step {step}: {name} radicand {value} outside [0, 1)")]
    Radicand { step: usize, name: &'static str, value: f64 },
    #[error("flows cover {flows} vectors but step {step} needs index {needed}")]
    FlowLength { step: usize, flows: usize, needed: usize },
    #[error("{name} = {value} is not strictly below 1")]
    NotContractive { name: &'static str, value: f64 },
    #[error("empty constant list")]
    Empty,
    #[error("stepsize {alpha} outside (0, {limit})")]
    StepsizeOutOfRange { alpha: f64, limit: f64 },
    #[error("momentum {0} must be nonnegative")]
    NegativeMomentum(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("spectral radius did not converge")]
    NotConverged,
}

/// Per-step constants of the analysis for one graph step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepConstants {
    pub k: usize,
    /// `sqrt(1 / min pi_k)`.
    pub chi: f64,
    /// `sqrt(1 / min phi_k)`.
    pub varphi: f64,
    /// `sqrt(max_i phi_{k+1,i} pi_{k,i})`.
    pub gamma: f64,
    /// `n (chi_{k+1}^2 - 1)`.
    pub psi: f64,
    /// Push contraction factor of step `k`.
    pub tau: f64,
    /// Pull contraction factor of step `k`.
    pub c: f64,
    pub nu: f64,
    pub zeta: f64,
    /// `varphi_{k+1}`, kept for the one-step state-difference bound.
    pub varphi_next: f64,
    /// `phi_{k+1}^T pi_k`.
    pub phi_pi: f64,
}

/// Inputs of the two contraction radicals at one step.
#[derive(Debug, Clone, Copy)]
struct Radicals {
    min_pi: f64,
    max_pi: f64,
    max_pi_next: f64,
    min_phi_next: f64,
    max_phi: f64,
    diameter_utility: f64,
}

fn radicals(phi: &StochasticFlow, pi: &StochasticFlow, stats: &GraphStats, k: usize) -> Result<Radicals, TheoryError> {
    for flow in [phi, pi] {
        if flow.len() < k + 2 {
            return Err(TheoryError::FlowLength { step: k, flows: flow.len(), needed: k + 1 });
        }
    }
    Ok(Radicals {
        min_pi: pi.vectors[k].min(),
        max_pi: pi.vectors[k].max(),
        max_pi_next: pi.vectors[k + 1].max(),
        min_phi_next: phi.vectors[k + 1].min(),
        max_phi: phi.vectors[k].max(),
        // a single node has no paths; the product is clamped to 1
        diameter_utility: ((stats.diameter * stats.max_edge_utility) as f64).max(1.0),
    })
}

fn checked_sqrt(step: usize, name: &'static str, radicand: f64) -> Result<f64, TheoryError> {
    if (0.0..1.0).contains(&radicand) {
        Ok(radicand.sqrt())
    } else {
        Err(TheoryError::Radicand { step, name, value: radicand })
    }
}

/// `(tau_k, c_k)` for step `k`.
pub fn contraction_factors(
    phi: &StochasticFlow,
    pi: &StochasticFlow,
    stats: &GraphStats,
    a: f64,
    b: f64,
    k: usize,
) -> Result<(f64, f64), TheoryError> {
    let r = radicals(phi, pi, stats, k)?;
    let tau_rad = 1.0 - r.min_pi * r.min_pi * b * b / (r.max_pi * r.max_pi * r.max_pi_next * r.diameter_utility);
    let c_rad = 1.0 - r.min_phi_next * a * a / (r.max_phi * r.max_phi * r.diameter_utility);
    Ok((checked_sqrt(k, "tau", tau_rad)?, checked_sqrt(k, "c", c_rad)?))
}

/// All per-step constants of step `k`, given the horizon bounds
/// `tau_bar` and `c_bar` that enter `nu_k` and `zeta_k`.
#[allow(clippy::too_many_arguments)]
pub fn step_constants(
    phi: &StochasticFlow,
    pi: &StochasticFlow,
    stats: &GraphStats,
    a: f64,
    b: f64,
    l: f64,
    k: usize,
    tau_bar: f64,
    c_bar: f64,
) -> Result<StepConstants, TheoryError> {
    let (tau, c) = contraction_factors(phi, pi, stats, a, b, k)?;
    let n = pi.vectors[k].len() as f64;
    let chi = (1.0 / pi.vectors[k].min()).sqrt();
    let chi_next_sq = 1.0 / pi.vectors[k + 1].min();
    let varphi = (1.0 / phi.vectors[k].min()).sqrt();
    let varphi_next = (1.0 / phi.vectors[k + 1].min()).sqrt();
    let gamma = phi.vectors[k + 1].component_mul(&pi.vectors[k]).max().sqrt();
    let psi = n * (chi_next_sq - 1.0);
    let nu = 6.0 * l * l * chi_next_sq * tau_bar * tau_bar / (1.0 - tau_bar * tau_bar) + 3.0 * psi * l * l;
    let zeta = (c_bar * varphi_next + varphi).powi(2) * nu;
    let phi_pi = phi.vectors[k + 1].dot(&pi.vectors[k]);
    Ok(StepConstants { k, chi, varphi, gamma, psi, tau, c, nu, zeta, varphi_next, phi_pi })
}

/// First-order uncertainty of constants that depend on the approximate
/// `phi` flow, for a `phi` perturbation of `phi_tol` in the max norm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhiBands {
    pub varphi: f64,
    pub eta: f64,
    pub c: f64,
}

/// Horizon bounds of the per-step constants and the derived scalars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlobalConstants {
    pub n: usize,
    pub l: f64,
    pub mu: f64,
    pub sigma_sq: f64,
    pub c: f64,
    pub tau: f64,
    pub eta: f64,
    pub psi: f64,
    pub chi: f64,
    pub varphi: f64,
    pub nu: f64,
    pub varsigma_sq: f64,
    pub bands: PhiBands,
}

impl GlobalConstants {
    /// Assembles globals from bounds; `nu` and `varsigma^2` are derived.
    #[allow(clippy::too_many_arguments)]
    pub fn from_bounds(
        n: usize,
        l: f64,
        mu: f64,
        sigma_sq: f64,
        c: f64,
        tau: f64,
        eta: f64,
        psi: f64,
        chi: f64,
        varphi: f64,
    ) -> Result<Self, TheoryError> {
        if !(l >= mu && mu > 0.0) {
            return Err(TheoryError::Invalid(format!("need L >= mu > 0, got L = {l}, mu = {mu}")));
        }
        if !(eta > 0.0 && eta <= 1.0 + 1e-12) {
            return Err(TheoryError::Invalid(format!("eta = {eta} outside (0, 1]")));
        }
        for (name, value) in [("c", c), ("tau", tau)] {
            if !(0.0..1.0 - BOUND_GUARD).contains(&value) {
                return Err(TheoryError::NotContractive { name, value });
            }
        }
        let n_f = n as f64;
        let nu = 6.0 * l * l * chi * chi * tau * tau / (1.0 - tau * tau) + 3.0 * psi * l * l;
        // the second denominator carries eta^2: that is what the bounds on
        // the delta-certificate rows require (with eta alone the stepsize
        // bound can leave rho(M) >= 1 whenever eta < 1)
        let varsigma_sq = l * l * (n_f * eta * mu * mu + 12.0 * l * l * varphi * varphi) / (eta * mu * mu)
            + 8.0 * nu * (n_f * eta * eta * mu * mu + 48.0 * l * l * varphi * varphi)
                / (n_f * eta * eta * mu * mu * (1.0 - tau * tau));
        Ok(Self {
            n,
            l,
            mu,
            sigma_sq,
            c,
            tau,
            eta,
            psi,
            chi,
            varphi,
            nu,
            varsigma_sq,
            bands: PhiBands::default(),
        })
    }

    /// Upper end `2 / (n eta (L + mu))` of the stepsize range.
    pub fn alpha_limit(&self) -> f64 {
        2.0 / (self.n as f64 * self.eta * (self.l + self.mu))
    }
}

/// Horizon maxima / minima of the per-step constants.
///
/// `c`, `tau`, `psi` are maxima over the steps; `chi` and `varphi` are
/// maxima over every vector of the flows; `eta` is the minimum of
/// `phi_{k+1}^T pi_k`.
pub fn global_constants(
    steps: &[StepConstants],
    phi: &StochasticFlow,
    pi: &StochasticFlow,
    l: f64,
    mu: f64,
    sigma_sq: f64,
) -> Result<GlobalConstants, TheoryError> {
    if steps.is_empty() {
        return Err(TheoryError::Empty);
    }
    let max = |f: fn(&StepConstants) -> f64| steps.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    for (name, value) in [("c_k", max(|s| s.c)), ("tau_k", max(|s| s.tau))] {
        if value >= 1.0 - BOUND_GUARD {
            return Err(TheoryError::NotContractive { name, value });
        }
    }
    let c = max(|s| s.c) + BOUND_GUARD;
    let tau = max(|s| s.tau) + BOUND_GUARD;
    let psi = max(|s| s.psi);
    let chi = pi.vectors.iter().map(|v| (1.0 / v.min()).sqrt()).fold(1.0, f64::max);
    let varphi = phi.vectors.iter().map(|v| (1.0 / v.min()).sqrt()).fold(1.0, f64::max);
    let eta = steps.iter().map(|s| s.phi_pi).fold(f64::INFINITY, f64::min);
    let n = pi.vectors[0].len();
    let mut globals = GlobalConstants::from_bounds(n, l, mu, sigma_sq, c, tau, eta, psi, chi, varphi)?;
    let tol = phi.approx_tol;
    let min_phi = phi.min_entry();
    globals.bands = PhiBands {
        varphi: tol * 0.5 * min_phi.powf(-1.5),
        eta: tol,
        c: steps
            .iter()
            .map(|s| {
                let max_phi = phi.vectors[s.k].max();
                let min_next = phi.vectors[s.k + 1].min();
                // c_k^2 = 1 - min_next a^2 / (max_phi^2 DK); recover a^2 / DK from c_k
                let scale = (1.0 - s.c * s.c) * max_phi * max_phi / min_next;
                let d_min = scale / (max_phi * max_phi);
                let d_max = 2.0 * min_next * scale / max_phi.powi(3);
                if s.c > 0.0 {
                    tol * (d_min + d_max) / (2.0 * s.c)
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max),
    };
    Ok(globals)
}

/// Per-step and global constants for a realized run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkAnalysis {
    pub steps: Vec<StepConstants>,
    pub globals: GlobalConstants,
}

/// Two passes over the horizon: first `tau_k, c_k` to fix `tau` and `c`,
/// then the remaining per-step constants and the globals. `stats[k]`
/// describes graph `k`; the flows hold one more vector than there are
/// graphs.
#[allow(clippy::too_many_arguments)]
pub fn analyze_network(
    phi: &StochasticFlow,
    pi: &StochasticFlow,
    stats: &[GraphStats],
    a: f64,
    b: f64,
    l: f64,
    mu: f64,
    sigma_sq: f64,
) -> Result<NetworkAnalysis, TheoryError> {
    if stats.is_empty() {
        return Err(TheoryError::Empty);
    }
    let mut tau_max: f64 = 0.0;
    let mut c_max: f64 = 0.0;
    for (k, s) in stats.iter().enumerate() {
        let (tau, c) = contraction_factors(phi, pi, s, a, b, k)?;
        tau_max = tau_max.max(tau);
        c_max = c_max.max(c);
    }
    let tau_bar = tau_max + BOUND_GUARD;
    let c_bar = c_max + BOUND_GUARD;
    let steps = stats
        .iter()
        .enumerate()
        .map(|(k, s)| step_constants(phi, pi, s, a, b, l, k, tau_bar, c_bar))
        .collect::<Result<Vec<_>, _>>()?;
    let globals = global_constants(&steps, phi, pi, l, mu, sigma_sq)?;
    Ok(NetworkAnalysis { steps, globals })
}

/// The 4x4 system `(M, b)` at stepsize bound `alpha` and momentum bound
/// `beta`, with its scalar coefficients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositeSystem {
    #[serde(skip)]
    pub m: DMatrix<f64>,
    /// `I - M`, with the diagonal formed from the coefficients directly so
    /// that margins far below machine epsilon survive.
    #[serde(skip)]
    pub gap: DMatrix<f64>,
    #[serde(skip)]
    pub b: DVector<f64>,
    /// `m_1 .. m_11`; index 5 (`m_6`) is used only by per-step systems.
    pub coefficients: [f64; 11],
    /// `b_1 .. b_6`.
    pub offsets: [f64; 6],
    pub alpha: f64,
    pub beta: f64,
}

fn check_hyper(g: &GlobalConstants, alpha: f64, beta: f64) -> Result<(), TheoryError> {
    let limit = g.alpha_limit();
    if !(alpha > 0.0 && alpha < limit) {
        return Err(TheoryError::StepsizeOutOfRange { alpha, limit });
    }
    if beta.is_nan() || beta < 0.0 {
        return Err(TheoryError::NegativeMomentum(beta));
    }
    Ok(())
}

fn assemble(
    m: [f64; 11],
    off: [f64; 6],
    c: f64,
    tau: f64,
    alpha: f64,
    beta: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let (a2, b2) = (alpha * alpha, beta * beta);
    #[rustfmt::skip]
    let matrix = DMatrix::from_row_slice(4, 4, &[
        1.0 - m[0] * alpha, m[1] * alpha,                        m[2] * b2 / alpha, m[2] * alpha,
        m[3] * a2,          (1.0 + c * c) / 2.0 + m[3] * a2,     m[4] * b2,         m[5] * a2,
        m[6] * a2,          m[7] + m[6] * a2,                    3.0 * b2,          3.0 * a2,
        m[8] * a2,          m[9] + m[8] * a2,                    m[10] * b2,        (1.0 + tau * tau) / 2.0 + m[10] * a2,
    ]);
    let mut gap = -&matrix;
    gap[(0, 0)] = m[0] * alpha;
    gap[(1, 1)] = (1.0 - c * c) / 2.0 - m[3] * a2;
    gap[(2, 2)] = 1.0 - 3.0 * b2;
    gap[(3, 3)] = (1.0 - tau * tau) / 2.0 - m[10] * a2;
    let offsets = DVector::from_vec(vec![
        off[0] * a2,
        off[1] * a2,
        off[2] * a2,
        off[3] + off[4] * alpha + off[5] * a2,
    ]);
    (matrix, gap, offsets)
}

/// The horizon-uniform system `M(alpha, beta)`, `b(alpha)`; requires
/// `0 < alpha < 2 / (n eta (L + mu))`.
pub fn composite_system(g: &GlobalConstants, alpha: f64, beta: f64) -> Result<CompositeSystem, TheoryError> {
    check_hyper(g, alpha, beta)?;
    let n = g.n as f64;
    let (l, mu, eta, c2, vp2, nu, s2) = (g.l, g.mu, g.eta, g.c * g.c, g.varphi * g.varphi, g.nu, g.sigma_sq);
    let m5 = 2.0 * (1.0 + c2) / (1.0 - c2);
    let coefficients = [
        n * mu * eta / 2.0,
        3.0 * l * l * vp2 / mu,
        6.0 / (n * mu * eta),
        4.0 * n * l * l * vp2 * (1.0 + c2) / (1.0 - c2),
        m5,
        m5,
        6.0 * n * l * l * vp2,
        12.0 * vp2,
        2.0 * n * l * l * vp2 * nu,
        4.0 * vp2 * nu,
        nu,
    ];
    let offsets = [
        1.5 * n * s2,
        4.0 * n * (1.0 + c2) * s2 / (1.0 - c2),
        6.0 * n * s2,
        4.0 * n * g.psi * s2,
        2.0 * l * n * g.psi * s2,
        2.0 * n * nu * s2,
    ];
    let (m, gap, b) = assemble(coefficients, offsets, g.c, g.tau, alpha, beta);
    Ok(CompositeSystem { m, gap, b, coefficients, offsets, alpha, beta })
}

/// The step-`k` system `M_k(alpha, beta)`, `b_k(alpha)`, built from the
/// step's own constants and the horizon bounds `c`, `tau`, `eta`.
pub fn step_system(
    s: &StepConstants,
    g: &GlobalConstants,
    alpha: f64,
    beta: f64,
) -> Result<CompositeSystem, TheoryError> {
    check_hyper(g, alpha, beta)?;
    let n = g.n as f64;
    let (l, mu, eta, c2, s2) = (g.l, g.mu, g.eta, g.c * g.c, g.sigma_sq);
    let vp2 = s.varphi * s.varphi;
    let gamma2 = s.gamma * s.gamma;
    let m5 = 2.0 * (1.0 + c2) / (1.0 - c2);
    let coefficients = [
        n * mu * eta / 2.0,
        3.0 * l * l * vp2 / mu,
        6.0 / (n * mu * eta),
        4.0 * n * l * l * vp2 * (1.0 + c2) * gamma2 / (1.0 - c2),
        m5,
        m5 * gamma2,
        6.0 * n * l * l * vp2,
        3.0 * (g.c * s.varphi_next + s.varphi).powi(2),
        2.0 * n * l * l * vp2 * s.nu,
        s.zeta,
        s.nu,
    ];
    let offsets = [
        1.5 * n * s2,
        4.0 * n * (1.0 + c2) * gamma2 * s2 / (1.0 - c2),
        6.0 * n * s2,
        4.0 * n * s.psi * s2,
        2.0 * l * n * s.psi * s2,
        2.0 * n * s.nu * s2,
    ];
    let (m, gap, b) = assemble(coefficients, offsets, g.c, g.tau, alpha, beta);
    Ok(CompositeSystem { m, gap, b, coefficients, offsets, alpha, beta })
}

impl CompositeSystem {
    /// `1 - rho(M)`, accurate even when it is far below machine epsilon.
    pub fn margin(&self) -> f64 {
        stability_margin(&self.gap)
    }

    /// `rho(M) < 1`.
    pub fn is_contractive(&self) -> bool {
        self.margin() > 0.0
    }

    /// `(I - M)^{-1} b`, the limiting error level when `rho(M) < 1`.
    pub fn steady_state(&self) -> Option<DVector<f64>> {
        self.gap.clone().lu().solve(&self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RadiusMethod {
    PowerIteration,
    Eigenvalues,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralRadius {
    pub rho: f64,
    pub method: RadiusMethod,
}

/// Spectral radius of a square matrix.
///
/// Nonnegative matrices use power iteration on `M + I` (the shift removes
/// periodicity), stopping once the Collatz-Wielandt bounds
/// `min_i (Mv)_i / v_i <= rho <= max_i (Mv)_i / v_i` agree to `1e-13`.
/// Reducible cases whose iterate loses positivity, and matrices with
/// negative entries, fall back to the eigenvalues of the real Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<SpectralRadius, TheoryError> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(TheoryError::Invalid("spectral radius needs a nonempty square matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(TheoryError::Invalid("non-finite matrix entry".into()));
    }
    let n = m.nrows();
    if m.iter().all(|&v| v >= 0.0) {
        let shifted = m + DMatrix::<f64>::identity(n, n);
        let mut v = DVector::from_element(n, 1.0);
        for _ in 0..20_000 {
            let mv = m * &v;
            if v.iter().any(|&x| x <= f64::MIN_POSITIVE) {
                break;
            }
            let ratios = mv.component_div(&v);
            let (lo, hi) = (ratios.min(), ratios.max());
            if hi - lo <= 1e-13 * hi.max(1.0) {
                return Ok(SpectralRadius { rho: 0.5 * (lo + hi), method: RadiusMethod::PowerIteration });
            }
            let mut next = &shifted * &v;
            next /= next.max();
            v = next;
        }
    }
    let rho = balance(m)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if rho.is_finite() {
        Ok(SpectralRadius { rho, method: RadiusMethod::Eigenvalues })
    } else {
        Err(TheoryError::NotConverged)
    }
}

/// Whether the Z-matrix `gap - shift I` is a nonsingular M-matrix, i.e.
/// every pivot of elimination without pivoting is positive.
fn is_m_matrix(gap: &DMatrix<f64>, shift: f64) -> bool {
    let n = gap.nrows();
    let mut w = gap.clone();
    for i in 0..n {
        w[(i, i)] -= shift;
    }
    for p in 0..n {
        let pivot = w[(p, p)];
        if pivot.is_nan() || pivot <= 0.0 {
            return false;
        }
        for r in p + 1..n {
            let factor = w[(r, p)] / pivot;
            if factor != 0.0 {
                for c in p + 1..n {
                    w[(r, c)] -= factor * w[(p, c)];
                }
            }
        }
    }
    true
}

/// `1 - rho(M)` for nonnegative `M`, given `gap = I - M` with an accurately
/// formed diagonal. Positive margins come from bisection on the shift at
/// which `gap - shift I` stops being an M-matrix; otherwise the margin is
/// `1 - rho(M)` from [`spectral_radius`], capped at zero.
pub fn stability_margin(gap: &DMatrix<f64>) -> f64 {
    let n = gap.nrows();
    if !is_m_matrix(gap, 0.0) {
        let m = DMatrix::identity(n, n) - gap;
        return spectral_radius(&m).map_or(f64::NEG_INFINITY, |r| (1.0 - r.rho).min(0.0));
    }
    // the Perron root of M is at least its largest diagonal entry
    let (mut lo, mut hi) = (0.0, (0..n).map(|i| gap[(i, i)]).fold(f64::INFINITY, f64::min));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if is_m_matrix(gap, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Diagonal similarity `D^{-1} M D` with power-of-two entries that brings
/// row and column norms together; eigenvalues are unchanged.
fn balance(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut b = m.clone();
    loop {
        let mut done = true;
        for i in 0..n {
            let col: f64 = (0..n).filter(|&j| j != i).map(|j| b[(j, i)].abs()).sum();
            let row: f64 = (0..n).filter(|&j| j != i).map(|j| b[(i, j)].abs()).sum();
            if col == 0.0 || row == 0.0 {
                continue;
            }
            let mut f = 1.0;
            let (mut c, mut r) = (col, row);
            while c < r / 2.0 {
                c *= 2.0;
                r /= 2.0;
                f *= 2.0;
            }
            while c >= r * 2.0 {
                c /= 2.0;
                r *= 2.0;
                f /= 2.0;
            }
            if (c + r) < 0.95 * (col + row) {
                done = false;
                for j in 0..n {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
        if done {
            return b;
        }
    }
}

/// For nonnegative `M` and `level > rho(M)`, a positive `delta` with
/// `M delta < level * delta` componentwise: `delta = (level I - M)^{-1} 1`.
/// Returns `None` if the candidate fails the check.
pub fn radius_certificate(m: &DMatrix<f64>, level: f64) -> Option<DVector<f64>> {
    let n = m.nrows();
    let shifted = DMatrix::identity(n, n) * level - m;
    let delta = shifted.lu().solve(&DVector::from_element(n, 1.0))?;
    let mdelta = m * &delta;
    let ok = delta.iter().all(|&d| d > 0.0) && mdelta.iter().zip(delta.iter()).all(|(md, d)| *md < level * d);
    ok.then_some(delta)
}

/// Which of the two momentum radicals is smaller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BetaBinding {
    Stepsize,
    Stability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaBound {
    pub value: f64,
    /// `alpha sqrt((n eta L^2 (1 - tau^2) + 32 nu) / (48 (1 - tau^2)))`.
    pub stepsize_term: f64,
    /// Radicand of the second term; nonpositive means no momentum is
    /// admissible.
    pub stability_radicand: f64,
    pub binding: BetaBinding,
}

/// Admissible region: `alpha < alpha_max` and `beta < beta_bound(alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepsizeBounds {
    pub alpha_max: f64,
    /// `2 / (n eta (L + mu))`.
    pub alpha_limit: f64,
    /// `(1 - c^2) / (2 varphi varsigma sqrt(2 (1 + c^2)))`.
    pub alpha_stability: f64,
    #[serde(skip)]
    globals: GlobalConstants,
}

impl StepsizeBounds {
    pub fn beta_bound(&self, alpha: f64) -> BetaBound {
        let g = &self.globals;
        let t2 = 1.0 - g.tau * g.tau;
        let c2 = g.c * g.c;
        let stepsize_term =
            alpha * ((g.n as f64 * g.eta * g.l * g.l * t2 + 32.0 * g.nu) / (48.0 * t2)).sqrt();
        let stability_radicand = (1.0 - c2).powi(2) / (96.0 * (1.0 + c2) * g.varphi * g.varphi)
            - g.varsigma_sq * alpha * alpha / 12.0;
        if stability_radicand <= 0.0 {
            return BetaBound { value: 0.0, stepsize_term, stability_radicand, binding: BetaBinding::Stability };
        }
        let stability = stability_radicand.sqrt();
        if stepsize_term <= stability {
            BetaBound { value: stepsize_term, stepsize_term, stability_radicand, binding: BetaBinding::Stepsize }
        } else {
            BetaBound { value: stability, stepsize_term, stability_radicand, binding: BetaBinding::Stability }
        }
    }
}

/// Largest admissible stepsize bound and the momentum bound as a function
/// of the stepsize.
pub fn theorem1_bounds(g: &GlobalConstants) -> StepsizeBounds {
    let c2 = g.c * g.c;
    let alpha_limit = g.alpha_limit();
    let alpha_stability = (1.0 - c2) / (2.0 * g.varphi * g.varsigma_sq.sqrt() * (2.0 * (1.0 + c2)).sqrt());
    StepsizeBounds { alpha_max: alpha_limit.min(alpha_stability), alpha_limit, alpha_stability, globals: *g }
}
