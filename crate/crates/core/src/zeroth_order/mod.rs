//! Two-point Gaussian-smoothing estimators.
//!
//! All estimators here use the symmetric difference
//! `(h(x + u z) - h(x - u z)) / (2u)` along a Gaussian direction `z`. The
//! constraint estimators return rank-one objects: every row of the Jacobian
//! estimate is a scalar multiple of the same direction.

mod streams;

pub use streams::{
    box_muller, derive_seed, fill_gaussian, AgentStreams, PerturbationStream, StreamKey, StreamTag,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("oracle returned a non-finite value ({value}) during a two-point probe")]
    NonFiniteValue { value: f64 },
    #[error("smoothing radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("smoothing gap {gap:e} exceeds bound {bound:e} at x = {x:?}")]
    BoundViolated { x: Vec<f64>, gap: f64, bound: f64 },
}

fn check_radius(u: f64) -> Result<(), EstimatorError> {
    if u > 0.0 && u.is_finite() {
        Ok(())
    } else {
        Err(EstimatorError::InvalidRadius(u))
    }
}

/// `(f_plus - f_minus) / (2u)`, rejecting non-finite observations.
#[inline]
pub fn difference_quotient(f_plus: f64, f_minus: f64, u: f64) -> Result<f64, EstimatorError> {
    for value in [f_plus, f_minus] {
        if !value.is_finite() {
            return Err(EstimatorError::NonFiniteValue { value });
        }
    }
    Ok((f_plus - f_minus) / (2.0 * u))
}

/// Writes `x + u z` and `x - u z` into the two output buffers.
#[inline]
pub fn perturb_pair(x: &[f64], u: f64, z: &[f64], plus: &mut [f64], minus: &mut [f64]) {
    for k in 0..x.len() {
        plus[k] = x[k] + u * z[k];
        minus[k] = x[k] - u * z[k];
    }
}

/// Scalar two-point difference of `f` at `x` along `z`.
pub fn two_point_scalar_diff<F>(f: F, x: &[f64], u: f64, z: &[f64]) -> Result<f64, EstimatorError>
where
    F: Fn(&[f64]) -> f64,
{
    check_radius(u)?;
    let mut plus = vec![0.0; x.len()];
    let mut minus = vec![0.0; x.len()];
    perturb_pair(x, u, z, &mut plus, &mut minus);
    difference_quotient(f(&plus), f(&minus), u)
}

/// Full gradient estimate `two_point_scalar_diff(f, x, u, z) * z`.
pub fn two_point_gradient<F>(f: F, x: &[f64], u: f64, z: &[f64]) -> Result<Vec<f64>, EstimatorError>
where
    F: Fn(&[f64]) -> f64,
{
    let c = two_point_scalar_diff(f, x, u, z)?;
    Ok(z.iter().map(|v| c * v).collect())
}

/// Reusable buffers for vector-valued probes.
#[derive(Debug, Clone, Default)]
pub struct ProbeScratch {
    plus: Vec<f64>,
    minus: Vec<f64>,
    g_plus: Vec<f64>,
    g_minus: Vec<f64>,
}

impl ProbeScratch {
    fn prepare(&mut self, d: usize, m: usize) {
        self.plus.resize(d, 0.0);
        self.minus.resize(d, 0.0);
        self.g_plus.resize(m, 0.0);
        self.g_minus.resize(m, 0.0);
    }
}

/// Per-row difference quotients of a vector-valued `g: R^d -> R^m`.
/// Costs two evaluations of `g` (that is, `2m` scalar constraint queries).
pub fn constraint_quotients_into<G>(
    g: G,
    x: &[f64],
    u: f64,
    z: &[f64],
    scratch: &mut ProbeScratch,
    out: &mut [f64],
) -> Result<(), EstimatorError>
where
    G: Fn(&[f64], &mut [f64]),
{
    scratch.prepare(x.len(), out.len());
    perturb_pair(x, u, z, &mut scratch.plus, &mut scratch.minus);
    g(&scratch.plus, &mut scratch.g_plus);
    g(&scratch.minus, &mut scratch.g_minus);
    for (j, o) in out.iter_mut().enumerate() {
        *o = difference_quotient(scratch.g_plus[j], scratch.g_minus[j], u)?;
    }
    Ok(())
}

/// Rank-one `m x d` matrix `c d^T`: row `j` is `coefficients[j] * direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOneJacobian {
    pub coefficients: Vec<f64>,
    pub direction: Vec<f64>,
}

impl RankOneJacobian {
    pub fn zeros(m: usize, d: usize) -> Self {
        Self {
            coefficients: vec![0.0; m],
            direction: vec![0.0; d],
        }
    }

    pub fn rows(&self) -> usize {
        self.coefficients.len()
    }

    pub fn cols(&self) -> usize {
        self.direction.len()
    }

    /// `out = J v`
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let proj = crate::linalg::dot(&self.direction, v);
        for (o, c) in out.iter_mut().zip(&self.coefficients) {
            *o = c * proj;
        }
    }

    /// `J^T y`
    pub fn transpose_apply(&self, y: &[f64]) -> Vec<f64> {
        let w = crate::linalg::dot(&self.coefficients, y);
        self.direction.iter().map(|d| w * d).collect()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), self.cols(), |j, k| {
            self.coefficients[j] * self.direction[k]
        })
    }
}

/// Jacobian estimate `G_i(t)` of `g` at `x` along `z_hat`.
pub fn constraint_jacobian_estimate<G>(
    g: G,
    x: &[f64],
    u: f64,
    z_hat: &[f64],
    m: usize,
) -> Result<RankOneJacobian, EstimatorError>
where
    G: Fn(&[f64], &mut [f64]),
{
    check_radius(u)?;
    let mut coefficients = vec![0.0; m];
    constraint_quotients_into(g, x, u, z_hat, &mut ProbeScratch::default(), &mut coefficients)?;
    Ok(RankOneJacobian {
        coefficients,
        direction: z_hat.to_vec(),
    })
}

/// `sum_j H_ij [y]_j`, the dual-weighted constraint gradient estimate along `z_bar`.
pub fn dual_weighted_rows<G>(
    g: G,
    x: &[f64],
    u: f64,
    z_bar: &[f64],
    y: &[f64],
) -> Result<Vec<f64>, EstimatorError>
where
    G: Fn(&[f64], &mut [f64]),
{
    Ok(constraint_jacobian_estimate(g, x, u, z_bar, y.len())?.transpose_apply(y))
}

/// Zeroth-order query tally per agent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounter {
    pub objective: Vec<u64>,
    pub constraint: Vec<u64>,
    pub feedback: Vec<u64>,
}

impl OracleCounter {
    pub fn new(n: usize) -> Self {
        Self {
            objective: vec![0; n],
            constraint: vec![0; n],
            feedback: vec![0; n],
        }
    }

    /// Objective plus scalar constraint queries for one agent (feedback
    /// observations excluded).
    pub fn queries(&self, agent: usize) -> u64 {
        self.objective[agent] + self.constraint[agent]
    }

    pub fn total_queries(&self) -> u64 {
        (0..self.objective.len()).map(|i| self.queries(i)).sum()
    }
}

/// `h(x) = x^T A x + a^T x + c` with symmetric `A`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub matrix: DMatrix<f64>,
    pub linear: Vec<f64>,
    pub constant: f64,
}

impl QuadraticForm {
    pub fn eval(&self, x: &[f64]) -> f64 {
        crate::linalg::quad_form(&self.matrix, x) + crate::linalg::dot(&self.linear, x) + self.constant
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    /// Gaussian smoothing in closed form: `h^u(x) = h(x) + u^2 tr(A)`.
    pub fn smoothed(&self, x: &[f64], u: f64) -> f64 {
        self.eval(x) + u * u * self.matrix.trace()
    }
}

/// Checks `|h^u(x) - h(x)| <= min(u M sqrt(d), u^2 L d / 2)` at every sample
/// point, returning the first witness of a violation.
pub fn smoothing_gap_bound_check(
    h: &QuadraticForm,
    u: f64,
    lipschitz: f64,
    smoothness: f64,
    samples: &[Vec<f64>],
) -> Result<(), EstimatorError> {
    check_radius(u)?;
    let d = h.dim() as f64;
    let bound = (u * lipschitz * d.sqrt()).min(0.5 * u * u * smoothness * d);
    for x in samples {
        let gap = (h.smoothed(x, u) - h.eval(x)).abs();
        // relative slack covers cancellation in smoothed - eval
        if gap > bound * (1.0 + 1e-9) + 1e-15 * h.eval(x).abs() {
            return Err(EstimatorError::BoundViolated {
                x: x.clone(),
                gap,
                bound,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    fn gaussian(seed: u64, d: usize, t: u64) -> Vec<f64> {
        PerturbationStream::new(StreamKey::new(seed, 0, 0, StreamTag::Objective), d).draw(t)
    }

    #[test]
    fn constant_function_has_zero_difference() {
        let z = gaussian(1, 4, 0);
        assert_eq!(two_point_scalar_diff(|_| 3.5, &[1.0; 4], 0.1, &z).unwrap(), 0.0);
    }

    #[test]
    fn affine_function_is_exact_for_any_radius() {
        let a = [0.3, -1.2, 2.0];
        let x = [0.5, 0.1, -0.7];
        for (t, u) in [(0, 1e-3), (1, 0.5), (2, 7.0)] {
            let z = gaussian(2, 3, t);
            let got = two_point_scalar_diff(|v| dot(&a, v) + 4.0, &x, u, &z).unwrap();
            assert!((got - dot(&a, &z)).abs() < 1e-12, "u = {u}");
        }
    }

    #[test]
    fn quadratic_difference_matches_symbolic_expansion() {
        // (x+uz)^T A (x+uz) - (x-uz)^T A (x-uz) = 4u x^T A z; even terms cancel.
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let x = [0.7, -0.4];
        let z = [1.3, 0.2];
        let got = two_point_scalar_diff(|v| crate::linalg::quad_form(&a, v), &x, 0.25, &z).unwrap();
        let az = [2.0 * 1.3 + 0.5 * 0.2, 0.5 * 1.3 + 0.2];
        assert!((got - 2.0 * dot(&x, &az)).abs() < 1e-13);
    }

    #[test]
    fn non_finite_and_bad_radius_are_rejected() {
        let z = [1.0];
        assert!(matches!(
            two_point_scalar_diff(|_| f64::NAN, &[0.0], 0.1, &z),
            Err(EstimatorError::NonFiniteValue { .. })
        ));
        assert!(matches!(
            two_point_scalar_diff(|v| v[0], &[0.0], 0.0, &z),
            Err(EstimatorError::InvalidRadius(_))
        ));
    }

    #[test]
    fn zero_constraint_gives_zero_jacobian() {
        let z = gaussian(3, 3, 0);
        let j = constraint_jacobian_estimate(|_, out| out.fill(0.0), &[1.0, 2.0, 3.0], 0.1, &z, 2)
            .unwrap();
        assert!(j.to_matrix().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn affine_constraint_rows_are_exact() {
        let q = [[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]];
        let g = |x: &[f64], out: &mut [f64]| {
            out[0] = dot(&q[0], x) + 1.0;
            out[1] = dot(&q[1], x) - 2.0;
        };
        let z = gaussian(4, 3, 0);
        let j = constraint_jacobian_estimate(g, &[0.2, 0.3, -0.1], 0.05, &z, 2).unwrap();
        let mat = j.to_matrix();
        for r in 0..2 {
            let c = dot(&q[r], &z);
            for k in 0..3 {
                assert!((mat[(r, k)] - c * z[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dual_rows_reduce_and_are_linear() {
        let g = |x: &[f64], out: &mut [f64]| {
            out[0] = x[0] * x[0] + x[1];
            out[1] = (x[0] - x[1]).powi(2);
        };
        let x = [0.4, -0.9];
        let z = gaussian(5, 2, 0);
        assert_eq!(dual_weighted_rows(g, &x, 0.1, &z, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);

        let single = |x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0] + x[1];
        let h = dual_weighted_rows(single, &x, 0.1, &z, &[1.0]).unwrap();
        let c = two_point_scalar_diff(|v| v[0] * v[0] + v[1], &x, 0.1, &z).unwrap();
        for k in 0..2 {
            assert!((h[k] - c * z[k]).abs() < 1e-14);
        }

        let y1 = [0.3, 1.1];
        let y2 = [2.0, -0.4];
        let sum = [y1[0] + y2[0], y1[1] + y2[1]];
        let a = dual_weighted_rows(g, &x, 0.1, &z, &y1).unwrap();
        let b = dual_weighted_rows(g, &x, 0.1, &z, &y2).unwrap();
        let s = dual_weighted_rows(g, &x, 0.1, &z, &sum).unwrap();
        for k in 0..2 {
            assert!((s[k] - a[k] - b[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_gap_affine_is_zero() {
        let h = QuadraticForm {
            matrix: DMatrix::zeros(3, 3),
            linear: vec![1.0, 2.0, 3.0],
            constant: 0.5,
        };
        assert!(smoothing_gap_bound_check(&h, 0.1, 1.0, 0.0, &[vec![0.0; 3]]).is_ok());
    }

    #[test]
    fn smoothing_gap_identity_is_equality_case() {
        let d = 4;
        let h = QuadraticForm {
            matrix: DMatrix::identity(d, d),
            linear: vec![0.0; d],
            constant: 0.0,
        };
        let u = 0.03;
        let x = vec![0.1; d];
        let gap = h.smoothed(&x, u) - h.eval(&x);
        assert!((gap - u * u * d as f64).abs() < 1e-15);
        // L = 2 makes u^2 L d / 2 = u^2 d exactly; a large M keeps that branch active.
        assert!(smoothing_gap_bound_check(&h, u, 1e6, 2.0, std::slice::from_ref(&x)).is_ok());
        assert!(matches!(
            smoothing_gap_bound_check(&h, u, 1e6, 1.9, &[x]),
            Err(EstimatorError::BoundViolated { .. })
        ));
    }

    #[test]
    fn counter_tallies() {
        let mut c = OracleCounter::new(2);
        c.objective[0] += 2;
        c.constraint[0] += 8;
        c.feedback[0] += 1;
        assert_eq!(c.queries(0), 10);
        assert_eq!(c.total_queries(), 10);
    }
}
