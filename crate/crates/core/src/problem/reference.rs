//! Centralized reference solver.
//!
//! Augmented Lagrangian outer loop with an accelerated projected-gradient
//! inner solver (FISTA with adaptive restart and backtracking).

use serde::{Deserialize, Serialize};

use super::{positive_part_norm, ProblemError, ProblemInstance};
use crate::linalg::{dist, dot, norm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceOptions {
    /// Target KKT residual.
    pub tolerance: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub initial_penalty: f64,
    pub max_penalty: f64,
    /// Step for central differences when no analytic gradient exists.
    pub fd_step: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_outer: 200,
            max_inner: 20_000,
            initial_penalty: 1.0,
            max_penalty: 1e6,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub objective: f64,
    pub constraint_sums: Vec<f64>,
    pub kkt_residual: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

struct Oracle<'a> {
    inst: &'a ProblemInstance,
    h: f64,
    buf: Vec<f64>,
}

impl<'a> Oracle<'a> {
    fn new(inst: &'a ProblemInstance, h: f64) -> Self {
        Self {
            inst,
            h,
            buf: vec![0.0; inst.m()],
        }
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.inst.evaluator().global_cost(x)
    }

    fn objective_grad(&self, x: &[f64], out: &mut [f64]) {
        let ev = self.inst.evaluator();
        if ev.global_gradient(x, out) {
            return;
        }
        let mut probe = x.to_vec();
        for k in 0..x.len() {
            probe[k] = x[k] + self.h;
            let up = ev.global_cost(&probe);
            probe[k] = x[k] - self.h;
            let down = ev.global_cost(&probe);
            probe[k] = x[k];
            out[k] = (up - down) / (2.0 * self.h);
        }
    }

    fn sums(&mut self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let layout = self.inst.layout();
        for i in 0..self.inst.n() {
            self.inst
                .evaluator()
                .local_constraints(i, &x[layout.block(i)], &mut self.buf);
            for (o, b) in out.iter_mut().zip(&self.buf) {
                *o += b;
            }
        }
    }

    /// Adds `sum_j w_j grad G_j(x)` into `out`.
    fn add_weighted_constraint_grad(&mut self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let ev = self.inst.evaluator();
        let layout = self.inst.layout();
        let m = self.inst.m();
        for i in 0..self.inst.n() {
            let blk = layout.block(i);
            let xi = &x[blk.clone()];
            let mut grad = vec![0.0; xi.len()];
            for j in 0..m {
                if w[j] == 0.0 {
                    continue;
                }
                if !ev.constraint_gradient(i, j, xi, &mut grad) {
                    let mut probe = xi.to_vec();
                    for k in 0..xi.len() {
                        probe[k] = xi[k] + self.h;
                        ev.local_constraints(i, &probe, &mut self.buf);
                        let up = self.buf[j];
                        probe[k] = xi[k] - self.h;
                        ev.local_constraints(i, &probe, &mut self.buf);
                        let down = self.buf[j];
                        probe[k] = xi[k];
                        grad[k] = (up - down) / (2.0 * self.h);
                    }
                }
                for (o, g) in out[blk.clone()].iter_mut().zip(&grad) {
                    *o += w[j] * g;
                }
            }
        }
    }

    /// Augmented Lagrangian value and gradient.
    fn augmented(&mut self, x: &[f64], y: &[f64], rho: f64, grad: Option<&mut [f64]>) -> f64 {
        let m = y.len();
        let mut g = vec![0.0; m];
        self.sums(x, &mut g);
        let shifted: Vec<f64> = y.iter().zip(&g).map(|(yj, gj)| (yj + rho * gj).max(0.0)).collect();
        let penalty: f64 = shifted
            .iter()
            .zip(y)
            .map(|(s, yj)| s * s - yj * yj)
            .sum::<f64>()
            / (2.0 * rho);
        if let Some(out) = grad {
            self.objective_grad(x, out);
            self.add_weighted_constraint_grad(x, &shifted, out);
        }
        self.objective(x) + penalty
    }

    /// `||x - P_X(x - grad)||`.
    fn projected_step_norm(&self, x: &[f64], grad: &[f64]) -> f64 {
        let mut z: Vec<f64> = x.iter().zip(grad).map(|(a, b)| a - b).collect();
        self.inst.project_joint(&mut z);
        dist(x, &z)
    }

    fn lagrangian_grad(&mut self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.objective_grad(x, &mut out);
        self.add_weighted_constraint_grad(x, y, &mut out);
        out
    }
}

/// KKT residual `max(||x - P_X(x - grad L)||, ||[G]_+||, |<y, G>|)`.
pub(crate) fn kkt_residual(inst: &ProblemInstance, x: &[f64], y: &[f64], h: f64) -> f64 {
    let mut oracle = Oracle::new(inst, h);
    let grad = oracle.lagrangian_grad(x, y);
    let mut g = vec![0.0; inst.m()];
    oracle.sums(x, &mut g);
    oracle
        .projected_step_norm(x, &grad)
        .max(positive_part_norm(&g))
        .max(dot(y, &g).abs())
}

/// Minimizes `x -> L_rho(x, y)` over `X` starting from `x`.
fn inner_solve(
    oracle: &mut Oracle<'_>,
    x: &mut Vec<f64>,
    y: &[f64],
    rho: f64,
    lipschitz: &mut f64,
    tol: f64,
    max_iter: usize,
) -> usize {
    let d = x.len();
    let mut v = x.clone();
    let mut theta = 1.0f64;
    let mut grad = vec![0.0; d];
    let mut candidate = vec![0.0; d];
    let mut value_x = oracle.augmented(x, y, rho, None);
    for iter in 0..max_iter {
        let value_v = oracle.augmented(&v, y, rho, Some(&mut grad));
        loop {
            for k in 0..d {
                candidate[k] = v[k] - grad[k] / *lipschitz;
            }
            oracle.inst.project_joint(&mut candidate);
            let diff: Vec<f64> = candidate.iter().zip(&v).map(|(a, b)| a - b).collect();
            let model = value_v + dot(&grad, &diff) + 0.5 * *lipschitz * dot(&diff, &diff);
            let value_c = oracle.augmented(&candidate, y, rho, None);
            if value_c <= model + 1e-12 * value_v.abs().max(1.0) || *lipschitz > 1e15 {
                break;
            }
            *lipschitz *= 2.0;
        }
        let value_c = oracle.augmented(&candidate, y, rho, None);
        if value_c > value_x && theta > 1.0 {
            // Adaptive restart.
            theta = 1.0;
            v.clone_from(x);
            continue;
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta = (theta - 1.0) / theta_next;
        for k in 0..d {
            v[k] = candidate[k] + beta * (candidate[k] - x[k]);
        }
        std::mem::swap(x, &mut candidate);
        theta = theta_next;
        value_x = value_c;
        *lipschitz = (*lipschitz * 0.9).max(1e-8);

        let mut gx = vec![0.0; d];
        oracle.augmented(x, y, rho, Some(&mut gx));
        if oracle.projected_step_norm(x, &gx) <= tol {
            return iter + 1;
        }
    }
    max_iter
}

/// Solves the centralized problem to KKT accuracy `options.tolerance`.
pub fn solve_reference(
    instance: &ProblemInstance,
    options: &ReferenceOptions,
) -> Result<ReferenceSolution, ProblemError> {
    let mut oracle = Oracle::new(instance, options.fd_step);
    let m = instance.m();
    let mut x = vec![0.0; instance.total_dim()];
    instance.project_joint(&mut x);
    let mut y = vec![0.0; m];
    let mut rho = options.initial_penalty;
    let mut lipschitz = (instance.constants().l0 + rho * instance.constants().l_g).max(1.0);
    let mut inner_total = 0;
    let mut last_violation = f64::INFINITY;
    let mut g = vec![0.0; m];
    let mut residual = f64::INFINITY;
    for outer in 0..options.max_outer {
        let inner_tol = (0.1 * options.tolerance).max(1e-13);
        inner_total += inner_solve(
            &mut oracle,
            &mut x,
            &y,
            rho,
            &mut lipschitz,
            inner_tol,
            options.max_inner,
        );
        oracle.sums(&x, &mut g);
        for (yj, gj) in y.iter_mut().zip(&g) {
            *yj = (*yj + rho * gj).max(0.0);
        }
        residual = kkt_residual(instance, &x, &y, options.fd_step);
        if residual <= options.tolerance {
            return Ok(ReferenceSolution {
                objective: oracle.objective(&x),
                constraint_sums: g,
                multipliers: y,
                x,
                kkt_residual: residual,
                outer_iterations: outer + 1,
                inner_iterations: inner_total,
            });
        }
        let violation = positive_part_norm(&g);
        if violation > 0.25 * last_violation && rho < options.max_penalty {
            rho = (rho * 5.0).min(options.max_penalty);
        }
        last_violation = violation;
    }
    Err(ProblemError::NoConvergence {
        iterations: options.max_outer,
        residual,
    })
}

impl ReferenceSolution {
    pub fn multiplier_norm(&self) -> f64 {
        norm(&self.multipliers)
    }
}
