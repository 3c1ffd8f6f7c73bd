//! Coupled-constraint problem model.
//!
//! A [`ProblemInstance`] describes
//!
//! ```text
//! minimize   f0(x) = (1/n) sum_i f_i(x^1, ..., x^n)
//! subject to sum_i g_ij(x^i) <= 0   for j = 1..m
//!            x^i in X_i
//! ```
//!
//! Local costs see the joint action `x`; constraint blocks see only the
//! owning agent's action. Evaluation goes through the [`Evaluator`] trait so
//! the same instance type serves generated quadratics and user black boxes.

mod quadratic;
mod reference;
mod sets;

pub use quadratic::{
    generate_quadratic, load_instance, save_instance, GeneratorConfig, InstanceFile,
    QuadraticSpec, INSTANCE_FORMAT,
};
pub(crate) use quadratic::lambda_max;
pub use reference::{solve_reference, ReferenceOptions, ReferenceSolution};
pub use sets::{project_dual, project_dual_in_place, FeasibleSet};

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dist, norm};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid eigenvalue range [{0}, {1}]: need 0 < min <= max")]
    InvalidEigRange(f64, f64),
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),
    #[error("no Slater point found after {0} attempts")]
    InfeasibleInstance(usize),
    #[error("reference solver did not converge in {iterations} iterations (KKT residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("instance file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Pure zeroth-order oracle for a coupled problem.
///
/// Implementations must be deterministic and free of interior mutability so
/// one instance can be shared by concurrent trials.
pub trait Evaluator: Send + Sync + fmt::Debug {
    fn n_agents(&self) -> usize;

    fn n_constraints(&self) -> usize;

    /// `f_i(x)` on the joint action.
    fn local_cost(&self, agent: usize, x: &[f64]) -> f64;

    /// `g_i(x^i)` into `out` (length `m`).
    fn local_constraints(&self, agent: usize, xi: &[f64], out: &mut [f64]);

    /// `(f_i(plus), f_i(minus))`; implementations may share work between
    /// the two evaluations but must return the same values as two calls to
    /// [`Evaluator::local_cost`].
    fn local_cost_pair(&self, agent: usize, plus: &[f64], minus: &[f64]) -> (f64, f64) {
        (self.local_cost(agent, plus), self.local_cost(agent, minus))
    }

    fn global_cost(&self, x: &[f64]) -> f64 {
        let n = self.n_agents();
        (0..n).map(|i| self.local_cost(i, x)).sum::<f64>() / n as f64
    }

    /// Exact gradient of `f0`, when the model knows it.
    fn global_gradient(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// Exact gradient of `g_ij` at `x^i`, when the model knows it.
    fn constraint_gradient(&self, _agent: usize, _j: usize, _xi: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// Block layout of the joint action vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl Layout {
    pub fn new(dims: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for d in &dims {
            acc += d;
            offsets.push(acc);
        }
        Self { dims, offsets }
    }

    /// Splits `total` as evenly as possible over `n` agents, larger blocks first.
    pub fn even(total: usize, n: usize) -> Self {
        let base = total / n;
        let extra = total % n;
        Self::new((0..n).map(|i| base + usize::from(i < extra)).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }
    pub fn n(&self) -> usize {
        self.dims.len()
    }
    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }
    pub fn block(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

/// Regularity constants of an instance. Names follow the usual
/// Lipschitz (`M`) / smoothness (`L`) convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Lipschitz constant of every `f_i` over `X`.
    pub m0: f64,
    /// Smoothness constant of every `f_i`.
    pub l0: f64,
    /// Per-agent `(sum_j M_ij^2)^(1/2)`.
    pub m_agent: Vec<f64>,
    /// Per-agent `(sum_j L_ij^2)^(1/2)`.
    pub l_agent: Vec<f64>,
    pub m_g: f64,
    pub l_g: f64,
    pub l_max: f64,
    /// Bound on `||g_i(x^i)||` over `X_i`.
    pub z: f64,
    /// `sup ||x^i||` over each `X_i`.
    pub radii: Vec<f64>,
    /// `(sum_i radii_i^2)^(1/2)`.
    pub r_bar: f64,
    pub d: usize,
}

impl ProblemConstants {
    /// Aggregates per-pair constants `M_ij`, `L_ij`.
    pub fn from_pairs(
        m0: f64,
        l0: f64,
        m_pairs: &[Vec<f64>],
        l_pairs: &[Vec<f64>],
        z: f64,
        radii: Vec<f64>,
        d: usize,
    ) -> Self {
        let agg = |rows: &[Vec<f64>]| -> Vec<f64> { rows.iter().map(|r| norm(r)).collect() };
        let m_agent = agg(m_pairs);
        let l_agent = agg(l_pairs);
        let m_g = norm(&m_agent);
        let l_g = norm(&l_agent);
        let l_max = l_agent.iter().cloned().fold(0.0, f64::max);
        let r_bar = norm(&radii);
        Self {
            m0,
            l0,
            m_agent,
            l_agent,
            m_g,
            l_g,
            l_max,
            z,
            radii,
            r_bar,
            d,
        }
    }
}

/// Problem data shared read-only by every trial.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    layout: Layout,
    m: usize,
    sets: Vec<FeasibleSet>,
    evaluator: Arc<dyn Evaluator>,
    constants: ProblemConstants,
    quadratic: Option<Arc<QuadraticSpec>>,
}

/// Safety factor applied to sampled constants of black-box problems.
pub const SAMPLED_CONSTANT_FACTOR: f64 = 1.2;

impl ProblemInstance {
    pub fn new(
        layout: Layout,
        sets: Vec<FeasibleSet>,
        evaluator: Arc<dyn Evaluator>,
        constants: ProblemConstants,
    ) -> Result<Self, ProblemError> {
        if sets.len() != layout.n() || evaluator.n_agents() != layout.n() {
            return Err(ProblemError::DimensionMismatch {
                expected: layout.n(),
                got: sets.len().min(evaluator.n_agents()),
            });
        }
        for (i, s) in sets.iter().enumerate() {
            if s.dim() != layout.dims()[i] {
                return Err(ProblemError::DimensionMismatch {
                    expected: layout.dims()[i],
                    got: s.dim(),
                });
            }
        }
        Ok(Self {
            m: evaluator.n_constraints(),
            layout,
            sets,
            evaluator,
            constants,
            quadratic: None,
        })
    }

    pub(crate) fn with_quadratic(mut self, spec: Arc<QuadraticSpec>) -> Self {
        self.quadratic = Some(spec);
        self
    }

    /// Wraps a black-box evaluator, estimating Lipschitz/smoothness constants
    /// and the constraint bound `Z` from `samples` random pairs in `X`
    /// (inflated by [`SAMPLED_CONSTANT_FACTOR`]).
    pub fn from_black_box(
        layout: Layout,
        sets: Vec<FeasibleSet>,
        evaluator: Arc<dyn Evaluator>,
        samples: usize,
        seed: u64,
    ) -> Result<Self, ProblemError> {
        let constants = sample_constants(&layout, &sets, evaluator.as_ref(), samples, seed);
        Self::new(layout, sets, evaluator, constants)
    }

    pub fn n(&self) -> usize {
        self.layout.n()
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn dims(&self) -> &[usize] {
        self.layout.dims()
    }
    pub fn total_dim(&self) -> usize {
        self.layout.total()
    }
    pub fn layout(&self) -> &Layout {
        &self.layout
    }
    pub fn sets(&self) -> &[FeasibleSet] {
        &self.sets
    }
    pub fn set(&self, i: usize) -> &FeasibleSet {
        &self.sets[i]
    }
    pub fn constants(&self) -> &ProblemConstants {
        &self.constants
    }
    pub fn evaluator(&self) -> &dyn Evaluator {
        self.evaluator.as_ref()
    }
    pub fn quadratic(&self) -> Option<&QuadraticSpec> {
        self.quadratic.as_deref()
    }

    fn check_len(&self, x: &[f64]) -> Result<(), ProblemError> {
        if x.len() != self.total_dim() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.total_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `f0(x) = (1/n) sum_i f_i(x)`.
    pub fn global_objective(&self, x: &[f64]) -> Result<f64, ProblemError> {
        self.check_len(x)?;
        Ok(self.evaluator.global_cost(x))
    }

    /// `sum_i g_i(x^i)`, one entry per coupled constraint.
    pub fn constraint_sums(&self, x: &[f64]) -> Result<Vec<f64>, ProblemError> {
        self.check_len(x)?;
        let mut total = vec![0.0; self.m];
        let mut buf = vec![0.0; self.m];
        for i in 0..self.n() {
            self.evaluator
                .local_constraints(i, &x[self.layout.block(i)], &mut buf);
            for (t, b) in total.iter_mut().zip(&buf) {
                *t += b;
            }
        }
        Ok(total)
    }

    /// `||[sum_i g_i(x^i)]_+||_2`.
    pub fn constraint_violation(&self, x: &[f64]) -> Result<f64, ProblemError> {
        Ok(positive_part_norm(&self.constraint_sums(x)?))
    }

    /// Projects every block of `x` onto its local set.
    pub fn project_joint(&self, x: &mut [f64]) {
        for i in 0..self.n() {
            self.sets[i].project_in_place(&mut x[self.layout.block(i)]);
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        (0..self.n()).all(|i| self.sets[i].contains(&x[self.layout.block(i)], tol))
    }

    /// A random point of `X`.
    pub fn sample_point<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sets.iter().flat_map(|s| s.sample(rng)).collect()
    }
}

pub fn positive_part_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.max(0.0).powi(2)).sum::<f64>().sqrt()
}

fn central_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn sample_constants(
    layout: &Layout,
    sets: &[FeasibleSet],
    ev: &dyn Evaluator,
    samples: usize,
    seed: u64,
) -> ProblemConstants {
    const H: f64 = 1e-5;
    let n = layout.n();
    let m = ev.n_constraints();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha12Rng| -> Vec<f64> { sets.iter().flat_map(|s| s.sample(rng)).collect() };
    let (mut m0, mut l0, mut z) = (0.0f64, 0.0f64, 0.0f64);
    let mut m_pairs = vec![vec![0.0f64; m]; n];
    let mut l_pairs = vec![vec![0.0f64; m]; n];
    let mut ga = vec![0.0; m];
    let mut gb = vec![0.0; m];
    for _ in 0..samples {
        let a = point(&mut rng);
        let b = point(&mut rng);
        let r = dist(&a, &b);
        if r == 0.0 {
            continue;
        }
        for i in 0..n {
            let fi = |x: &[f64]| ev.local_cost(i, x);
            m0 = m0.max((fi(&a) - fi(&b)).abs() / r);
            l0 = l0.max(dist(&central_gradient(fi, &a, H), &central_gradient(fi, &b, H)) / r);
            let blk = layout.block(i);
            let (xa, xb) = (&a[blk.clone()], &b[blk]);
            let ri = dist(xa, xb);
            ev.local_constraints(i, xa, &mut ga);
            ev.local_constraints(i, xb, &mut gb);
            z = z.max(norm(&ga)).max(norm(&gb));
            if ri == 0.0 {
                continue;
            }
            for j in 0..m {
                m_pairs[i][j] = m_pairs[i][j].max((ga[j] - gb[j]).abs() / ri);
                let gj = |x: &[f64]| {
                    let mut out = vec![0.0; m];
                    ev.local_constraints(i, x, &mut out);
                    out[j]
                };
                let grad_a = central_gradient(gj, xa, H);
                let grad_b = central_gradient(gj, xb, H);
                l_pairs[i][j] = l_pairs[i][j].max(dist(&grad_a, &grad_b) / ri);
            }
        }
    }
    let k = SAMPLED_CONSTANT_FACTOR;
    let scale = |rows: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        rows.into_iter()
            .map(|r| r.into_iter().map(|v| v * k).collect())
            .collect()
    };
    ProblemConstants::from_pairs(
        m0 * k,
        l0 * k,
        &scale(m_pairs),
        &scale(l_pairs),
        z * k,
        sets.iter().map(FeasibleSet::norm_bound).collect(),
        layout.total(),
    )
}

/// Evaluator assembled from closures; handy for tests and small experiments.
#[allow(clippy::type_complexity)]
pub struct FnEvaluator {
    n: usize,
    m: usize,
    cost: Box<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>,
    constraints: Box<dyn Fn(usize, &[f64], &mut [f64]) + Send + Sync>,
}

impl FnEvaluator {
    pub fn new(
        n: usize,
        m: usize,
        cost: impl Fn(usize, &[f64]) -> f64 + Send + Sync + 'static,
        constraints: impl Fn(usize, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            m,
            cost: Box::new(cost),
            constraints: Box::new(constraints),
        }
    }
}

impl fmt::Debug for FnEvaluator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnEvaluator")
            .field("n", &self.n)
            .field("m", &self.m)
            .finish_non_exhaustive()
    }
}

impl Evaluator for FnEvaluator {
    fn n_agents(&self) -> usize {
        self.n
    }
    fn n_constraints(&self) -> usize {
        self.m
    }
    fn local_cost(&self, agent: usize, x: &[f64]) -> f64 {
        (self.cost)(agent, x)
    }
    fn local_constraints(&self, agent: usize, xi: &[f64], out: &mut [f64]) {
        (self.constraints)(agent, xi, out)
    }
}
