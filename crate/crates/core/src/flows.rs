//! Stochastic weight sequences of the Lyapunov analysis.
//!
//! `pi` is the forward push flow `pi_{k+1} = B_k pi_k` from the uniform
//! vector. `phi` is an absolute probability sequence for the pull matrices,
//! `phi_{k+1}^T A_k = phi_k^T`, approximated backward from a stationary tail.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default convergence tolerance for the backward `phi` window.
pub const DEFAULT_PHI_TOL: f64 = 1e-10;

/// Default maximum number of tail multiplications for `phi`.
pub const DEFAULT_TAIL_EXTENSION: usize = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("matrix {index} is {rows}x{cols}, expected {n}x{n}")]
    Dimension { index: usize, rows: usize, cols: usize, n: usize },
    #[error("empty matrix sequence")]
    Empty,
    #[error("phi tail did not converge within {window} products at step {step}")]
    NotConverged { step: usize, window: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    Phi,
    Pi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticFlow {
    pub kind: FlowKind,
    /// `vectors[k]` is the weight vector at step `k`; there is one more
    /// vector than matrices.
    pub vectors: Vec<DVector<f64>>,
    /// Recursion residual per matrix step.
    pub residuals: Vec<f64>,
    /// Tolerance the recursion is guaranteed to meet (0 for `pi`).
    pub approx_tol: f64,
}

impl StochasticFlow {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Smallest entry over all steps and agents.
    pub fn min_entry(&self) -> f64 {
        self.vectors.iter().map(|v| v.min()).fold(f64::INFINITY, f64::min)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// CSV rows `step,v1,...,vn,residual`; the last step has no residual.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let n = self.vectors.first().map_or(0, |v| v.len());
        let header: Vec<String> = (1..=n).map(|i| format!("v{i}")).collect();
        writeln!(out, "step,{},residual", header.join(","))?;
        for (k, v) in self.vectors.iter().enumerate() {
            let values: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
            let residual = self.residuals.get(k).map_or(String::new(), |r| format!("{r:e}"));
            writeln!(out, "{k},{},{residual}", values.join(","))?;
        }
        Ok(())
    }
}

fn check_dims(ms: &[DMatrix<f64>]) -> Result<usize, FlowError> {
    let n = ms.first().ok_or(FlowError::Empty)?.nrows();
    for (index, m) in ms.iter().enumerate() {
        if m.shape() != (n, n) {
            return Err(FlowError::Dimension { index, rows: m.nrows(), cols: m.ncols(), n });
        }
    }
    Ok(n)
}

/// Forward flow `pi_0 = 1/n`, `pi_{k+1} = B_k pi_k` for `k < len(bs)`.
pub fn pi_sequence(bs: &[DMatrix<f64>]) -> Result<StochasticFlow, FlowError> {
    let n = check_dims(bs)?;
    let mut vectors = Vec::with_capacity(bs.len() + 1);
    vectors.push(DVector::from_element(n, 1.0 / n as f64));
    for b in bs {
        let next = b * vectors.last().unwrap();
        vectors.push(next);
    }
    let residuals = bs
        .iter()
        .enumerate()
        .map(|(k, b)| (&vectors[k + 1] - b * &vectors[k]).amax())
        .collect();
    Ok(StochasticFlow { kind: FlowKind::Pi, vectors, residuals, approx_tol: 0.0 })
}

/// Backward flow for the pull matrices `as_[0..H]`, producing
/// `phi_0..phi_H`.
///
/// The sequence is completed by repeating `A_{H-1}` forever. The tail vector
/// `phi_H` is then the limit of `(1/n) 1^T A_{H-1}^m`, iterated until two
/// successive rows differ by less than `tol` in the max norm (at most
/// `tail_extension` products). Earlier vectors follow exactly from
/// `phi_k^T = phi_{k+1}^T A_k`. With `tail_extension = 0` the tail is left
/// uniform and `approx_tol` reports the resulting residual instead.
pub fn phi_sequence(
    as_: &[DMatrix<f64>],
    tail_extension: usize,
    tol: f64,
) -> Result<StochasticFlow, FlowError> {
    let n = check_dims(as_)?;
    let horizon = as_.len();
    let last = &as_[horizon - 1];

    let mut tail = DVector::from_element(n, 1.0 / n as f64);
    let mut tail_residual = (last.tr_mul(&tail) - &tail).amax();
    if tail_extension > 0 {
        let mut converged = false;
        for _ in 0..tail_extension {
            let mut next = last.tr_mul(&tail);
            next /= next.sum();
            let diff = (&next - &tail).amax();
            tail = next;
            if diff < tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(FlowError::NotConverged { step: horizon, window: tail_extension });
        }
        tail_residual = (last.tr_mul(&tail) - &tail).amax();
    }

    let mut vectors = vec![DVector::zeros(n); horizon + 1];
    vectors[horizon] = tail;
    for k in (0..horizon).rev() {
        vectors[k] = as_[k].tr_mul(&vectors[k + 1]);
    }
    // the backward products are exact; only the tail carries approximation
    let mut residuals: Vec<f64> = (0..horizon)
        .map(|k| (as_[k].tr_mul(&vectors[k + 1]) - &vectors[k]).amax())
        .collect();
    if let Some(r) = residuals.last_mut() {
        *r = r.max(tail_residual);
    }
    let approx_tol = if tail_extension > 0 { tol.max(tail_residual) } else { tail_residual };
    Ok(StochasticFlow { kind: FlowKind::Phi, vectors, residuals, approx_tol })
}

/// Lower bounds `(a^n / n, b^n / n)` on the entries of `phi` and `pi`.
pub fn flow_floor(a: f64, b: f64, n: usize) -> (f64, f64) {
    let n_f = n as f64;
    (a.powi(n as i32) / n_f, b.powi(n as i32) / n_f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sequence, Digraph, GeneratorSpec};
    use crate::mixing::{build_mixing, build_mixing_sequence, WeightRule};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_pair(g: &Digraph) -> crate::mixing::MixingPair {
        build_mixing(g, &WeightRule::Uniform, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    /// Left Perron vector by power iteration on the transpose, normalized.
    fn left_perron_oracle(a: &DMatrix<f64>) -> DVector<f64> {
        let at = a.transpose();
        let mut v = DVector::from_fn(a.nrows(), |i, _| 1.0 + i as f64);
        for _ in 0..200_000 {
            let mut next = &at * &v;
            next /= next.sum();
            if (&next - &v).amax() < 1e-15 {
                return next;
            }
            v = next;
        }
        v
    }

    #[test]
    fn symmetric_cycle_pi_is_uniform() {
        let pair = uniform_pair(&Digraph::ring(3));
        let flow = pi_sequence(&vec![pair.b; 5]).unwrap();
        for v in &flow.vectors {
            for x in v.iter() {
                assert_relative_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn cycle_with_chord_pi_step() {
        let mut g = Digraph::cycle(3);
        g.add_edge(0, 2).unwrap();
        let pair = uniform_pair(&g);
        let flow = pi_sequence(std::slice::from_ref(&pair.b)).unwrap();
        // independent multiply of the uniform push matrix
        let b = DMatrix::from_row_slice(3, 3, &[
            1.0 / 3.0, 0.0, 0.5,
            1.0 / 3.0, 0.5, 0.0,
            1.0 / 3.0, 0.5, 0.5,
        ]);
        assert_relative_eq!(pair.b, b, epsilon = 1e-15);
        let expected = [5.0 / 18.0, 5.0 / 18.0, 8.0 / 18.0];
        for (x, e) in flow.vectors[1].iter().zip(expected) {
            assert_relative_eq!(*x, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_agent_flows_are_one() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let pi = pi_sequence(&vec![one.clone(); 4]).unwrap();
        let phi = phi_sequence(&vec![one; 4], 10, 1e-10).unwrap();
        for v in pi.vectors.iter().chain(&phi.vectors) {
            assert_eq!(v[0], 1.0);
        }
    }

    #[test]
    fn doubly_stochastic_phi_is_uniform() {
        let pair = uniform_pair(&Digraph::ring(3));
        let flow = phi_sequence(&vec![pair.a; 6], DEFAULT_TAIL_EXTENSION, 1e-12).unwrap();
        for v in &flow.vectors {
            for x in v.iter() {
                assert_relative_eq!(*x, 1.0 / 3.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn static_phi_is_left_perron_vector() {
        let mut g = Digraph::cycle(5);
        g.add_edge(0, 3).unwrap();
        g.add_edge(2, 4).unwrap();
        let pair = uniform_pair(&g);
        let flow = phi_sequence(&vec![pair.a.clone(); 8], DEFAULT_TAIL_EXTENSION, 1e-14).unwrap();
        let oracle = left_perron_oracle(&pair.a);
        for v in &flow.vectors {
            assert_relative_eq!(*v, oracle, epsilon = 1e-12);
        }
        assert!(flow.max_residual() <= flow.approx_tol);
    }

    #[test]
    fn tail_nonconvergence_names_the_step() {
        // a chord breaks double stochasticity, so uniform is not the tail
        let mut g = Digraph::cycle(7);
        g.add_edge(0, 3).unwrap();
        let pair = uniform_pair(&g);
        let err = phi_sequence(&vec![pair.a; 3], 2, 1e-14).unwrap_err();
        assert_eq!(err, FlowError::NotConverged { step: 3, window: 2 });
    }

    #[test]
    fn zero_extension_reports_tail_residual() {
        let mut g = Digraph::cycle(4);
        g.add_edge(0, 2).unwrap();
        let pair = uniform_pair(&g);
        let flow = phi_sequence(&vec![pair.a; 3], 0, 1e-10).unwrap();
        assert!(flow.approx_tol > 1e-6);
        assert!(flow.max_residual() <= flow.approx_tol);
    }

    #[test]
    fn floors() {
        assert_eq!(flow_floor(1.0, 1.0, 1), (1.0, 1.0));
        let (phi, pi) = flow_floor(0.5, 0.5, 3);
        assert_relative_eq!(phi, 1.0 / 24.0);
        assert_relative_eq!(pi, 1.0 / 24.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let ms = vec![DMatrix::identity(2, 2), DMatrix::identity(3, 3)];
        assert!(matches!(pi_sequence(&ms), Err(FlowError::Dimension { index: 1, .. })));
        assert_eq!(pi_sequence(&[]), Err(FlowError::Empty));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let pair = uniform_pair(&Digraph::ring(3));
        let flow = pi_sequence(&vec![pair.b; 2]).unwrap();
        let mut buf = Vec::new();
        flow.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("step,v1,v2,v3,residual"));
        assert_eq!(text.lines().count(), 4);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn generated_flows_are_stochastic_and_floored(seed in 0u64..1000, n in 2usize..9) {
            let seq = generate_sequence(n, 20, &GeneratorSpec::PerStepRandom { density: 0.25 }, seed).unwrap();
            let pairs = build_mixing_sequence(&seq, &WeightRule::Uniform, seed).unwrap();
            let a_floor = pairs.iter().map(|p| p.a_floor).fold(1.0, f64::min);
            let b_floor = pairs.iter().map(|p| p.b_floor).fold(1.0, f64::min);
            let as_: Vec<_> = pairs.iter().map(|p| p.a.clone()).collect();
            let bs: Vec<_> = pairs.iter().map(|p| p.b.clone()).collect();
            let pi = pi_sequence(&bs).unwrap();
            let phi = phi_sequence(&as_, DEFAULT_TAIL_EXTENSION, DEFAULT_PHI_TOL).unwrap();
            let (phi_floor, pi_floor) = flow_floor(a_floor, b_floor, n);
            for v in pi.vectors.iter().chain(&phi.vectors) {
                proptest::prop_assert!((v.sum() - 1.0).abs() < 1e-12);
            }
            proptest::prop_assert!(pi.min_entry() >= pi_floor);
            proptest::prop_assert!(phi.min_entry() >= phi_floor);
            proptest::prop_assert!(pi.max_residual() <= 1e-12);
            proptest::prop_assert!(phi.max_residual() <= phi.approx_tol);
        }
    }
}
