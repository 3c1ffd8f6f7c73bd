//! The distributed primal-dual engine.
//!
//! Each round, every agent
//!
//! 1. probes its local cost at `x +- u z` and records the scalar difference;
//! 2. extrapolates its constraint linearization into `s`;
//! 3. merges neighbor difference tables;
//! 4. mixes neighbor duals with `W`;
//! 5. takes a projected dual ascent step;
//! 6. probes its constraints along `z_bar` for the dual-weighted gradient;
//! 7. assembles the delayed partial gradient of `f0`;
//! 8. takes a projected primal step;
//! 9. folds the new iterate into the running average.
//!
//! The per-step operations are exposed as free functions; [`Simulation`]
//! drives them.

mod schedule;
mod simulation;

pub use schedule::{compute_theorem_params, ParamSchedule, StepRule, TheoremConstants, TheoremInputs};
pub use simulation::{
    run, ConsensusReport, RunOptions, Simulation, TrialResult, DIVERGENCE_FACTOR,
};

use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::linalg::dot;
use crate::problem::{project_dual_in_place, FeasibleSet};
use crate::zeroth_order::{EstimatorError, RankOneJacobian};

#[derive(Debug, Error)]
pub enum AlgorithmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid theorem constants: {0}")]
    InvalidConstants(String),
    #[error("non-finite {what} for agent {agent} at round {t}")]
    NonFiniteIterate { t: u64, agent: usize, what: &'static str },
    #[error("iterate norm {norm:e} exceeds divergence guard at round {t}")]
    Diverged { t: u64, norm: f64 },
    #[error("agent {agent} left its feasible set at round {t}")]
    InfeasibleIterate { t: u64, agent: usize },
    #[error("agent {agent} at round {t}: {source}")]
    Estimator {
        t: u64,
        agent: usize,
        #[source]
        source: EstimatorError,
    },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

/// Extrapolation memory of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Current linearization `l(t)`.
    pub ell_curr: Vec<f64>,
    /// Previous linearization `l(t-1)`.
    pub ell_prev: Vec<f64>,
    pub x_prev: Vec<f64>,
    /// Jacobian estimate taken at `x_prev`.
    pub jac_prev: RankOneJacobian,
    /// Constraint feedback observed at `x_prev`.
    pub g_prev: Vec<f64>,
    pub running_sum_x: Vec<f64>,
    pub running_sum_gamma: f64,
}

impl AgentState {
    pub fn new(x0: Vec<f64>, m: usize) -> Self {
        let d = x0.len();
        Self {
            y: vec![0.0; m],
            ell_curr: vec![0.0; m],
            ell_prev: vec![0.0; m],
            x_prev: x0.clone(),
            jac_prev: RankOneJacobian::zeros(m, d),
            g_prev: vec![0.0; m],
            running_sum_x: vec![0.0; d],
            running_sum_gamma: 0.0,
            x: x0,
        }
    }

    /// `running_sum_x / running_sum_gamma`, or `x` before any update.
    pub fn average(&self) -> Vec<f64> {
        if self.running_sum_gamma == 0.0 {
            return self.x.clone();
        }
        self.running_sum_x
            .iter()
            .map(|v| v / self.running_sum_gamma)
            .collect()
    }
}

/// Forms `l(t) = g_obs + G (x_new - x_prev)`, writes
/// `s = (1 + theta) l(t) - theta l(t-1)` and shifts the stored
/// linearizations.
pub fn extrapolate_constraint(
    state: &mut AgentState,
    g_obs: &[f64],
    jac: &RankOneJacobian,
    x_new: &[f64],
    theta: f64,
    s: &mut [f64],
) -> Result<(), AlgorithmError> {
    let m = state.ell_curr.len();
    for (len, expected) in [(g_obs.len(), m), (s.len(), m), (jac.rows(), m), (x_new.len(), state.x_prev.len())] {
        if len != expected {
            return Err(AlgorithmError::DimensionMismatch { expected, got: len });
        }
    }
    let step: f64 = jac
        .direction
        .iter()
        .zip(x_new.iter().zip(&state.x_prev))
        .map(|(z, (a, b))| z * (a - b))
        .sum();
    for j in 0..m {
        let ell = g_obs[j] + jac.coefficients[j] * step;
        s[j] = (1.0 + theta) * ell - theta * state.ell_curr[j];
        state.ell_prev[j] = state.ell_curr[j];
        state.ell_curr[j] = ell;
    }
    Ok(())
}

/// `p = sum_j W_ij y_j`, with `duals` holding all agents' duals back to back.
pub fn consensus_mix<I>(row: I, duals: &[f64], out: &mut [f64])
where
    I: IntoIterator<Item = (usize, f64)>,
{
    let m = out.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    for (j, w) in row {
        for (o, y) in out.iter_mut().zip(&duals[j * m..(j + 1) * m]) {
            *o += w * y;
        }
    }
}

/// `argmin_{y >= 0, ||y|| <= C} { -<s, y> + ||y - p||^2 / (2 mu) }`.
pub fn dual_step(p: &[f64], s: &[f64], mu: f64, bound: f64, out: &mut [f64]) {
    for ((o, pj), sj) in out.iter_mut().zip(p).zip(s) {
        *o = pj + mu * sj;
    }
    project_dual_in_place(out, bound);
}

/// `argmin_{x in X} { <v, x> + ||x - x_t||^2 / (2 eta) }`, in place on `x`.
pub fn primal_step(x: &mut [f64], v: &[f64], eta: f64, set: &FeasibleSet) {
    for (xk, vk) in x.iter_mut().zip(v) {
        *xk -= eta * vk;
    }
    set.project_in_place(x);
}

/// Root-mean-square distance of the agents' duals from their mean.
pub fn consensus_spread(duals: &[f64], m: usize) -> f64 {
    if m == 0 || duals.is_empty() {
        return 0.0;
    }
    let n = duals.len() / m;
    let mut mean = vec![0.0; m];
    for row in duals.chunks_exact(m) {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v / n as f64;
        }
    }
    let total: f64 = duals
        .chunks_exact(m)
        .map(|row| row.iter().zip(&mean).map(|(v, a)| (v - a) * (v - a)).sum::<f64>())
        .sum();
    (total / n as f64).sqrt()
}

/// Largest distance of any agent's dual from the mean.
pub fn consensus_spread_max(duals: &[f64], m: usize) -> f64 {
    if m == 0 || duals.is_empty() {
        return 0.0;
    }
    let n = duals.len() / m;
    let mut mean = vec![0.0; m];
    for row in duals.chunks_exact(m) {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v / n as f64;
        }
    }
    duals
        .chunks_exact(m)
        .map(|row| {
            let diff: Vec<f64> = row.iter().zip(&mean).map(|(v, a)| v - a).collect();
            dot(&diff, &diff).sqrt()
        })
        .fold(0.0, f64::max)
}
