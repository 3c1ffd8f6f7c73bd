use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{consensus_mix, consensus_spread, dual_step, primal_step, AgentState, AlgorithmError, ParamSchedule};
use crate::diffusion::{assemble_grad_f0, DiffusionError, DifferenceTable, PerturbationHistory};
use crate::linalg::{dot, norm};
use crate::problem::{positive_part_norm, ProblemInstance};
use crate::topology::NetworkTopology;
use crate::zeroth_order::{
    constraint_quotients_into, AgentStreams, OracleCounter, PerturbationStream, ProbeScratch, StreamKey,
    StreamTag,
};

/// A trial aborts once `||x|| > DIVERGENCE_FACTOR * R_bar`.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    /// Record metrics every `stride` rounds (and always at the last round).
    pub stride: u64,
    /// Keep every iterate `x_{t+1}` in the result.
    pub record_iterates: bool,
    /// Check the one-round consensus contraction bound every round.
    pub monitor_consensus: bool,
    /// Probability that a directed gossip link is dropped in a round.
    pub link_drop: f64,
    /// Extra perturbation history kept beyond `diameter + 1` rounds.
    pub history_slack: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            record_iterates: false,
            monitor_consensus: false,
            link_drop: 0.0,
            history_slack: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub rounds: u64,
    pub violations: u64,
    /// Largest `after / (rho * before + mu * max ||s||)` seen.
    pub worst_ratio: f64,
}

/// Trajectories of one run, sampled at `rounds` (number of averaged iterates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u64,
    pub seed: u64,
    pub horizon: u64,
    pub rounds: Vec<u64>,
    /// `f0` at the running average.
    pub objective: Vec<f64>,
    /// `sum_i g_ij` at the running average, one vector per sample.
    pub constraint_sums: Vec<Vec<f64>>,
    /// `||[sum_i g_i]_+||` at the running average.
    pub violation: Vec<f64>,
    /// Root-mean-square dual disagreement.
    pub spread: Vec<f64>,
    /// Total objective plus constraint queries so far.
    pub oracle_cumulative: Vec<u64>,
    pub oracle_counts: OracleCounter,
    pub average: Vec<f64>,
    pub final_x: Vec<f64>,
    /// All agents' final duals, back to back.
    pub final_duals: Vec<f64>,
    pub iterates: Option<Vec<Vec<f64>>>,
    pub consensus: Option<ConsensusReport>,
}

impl TrialResult {
    pub fn final_objective(&self) -> f64 {
        *self.objective.last().unwrap_or(&f64::NAN)
    }

    pub fn final_violation(&self) -> f64 {
        *self.violation.last().unwrap_or(&f64::NAN)
    }

    /// Sample index whose round count equals `round`.
    pub fn index_of_round(&self, round: u64) -> Option<usize> {
        self.rounds.binary_search(&round).ok()
    }
}

/// Synchronous multi-agent simulation of one trial.
pub struct Simulation<'a> {
    instance: &'a ProblemInstance,
    topology: &'a NetworkTopology,
    schedule: ParamSchedule,
    options: RunOptions,
    t: u64,
    agents: Vec<AgentState>,
    streams: Vec<AgentStreams>,
    links: Vec<PerturbationStream>,
    tables: Vec<DifferenceTable>,
    snapshots: Vec<DifferenceTable>,
    histories: Vec<PerturbationHistory>,
    mixing: Vec<Vec<(usize, f64)>>,
    duals_now: Vec<f64>,
    duals_next: Vec<f64>,
    counter: OracleCounter,
    scratch: ProbeScratch,
    x_joint: Vec<f64>,
    plus: Vec<f64>,
    minus: Vec<f64>,
    z_joint: Vec<f64>,
    avg: Vec<f64>,
    s: Vec<f64>,
    p: Vec<f64>,
    coeffs: Vec<f64>,
    g_tmp: Vec<f64>,
    z_bar: Vec<f64>,
    direction: Vec<f64>,
    neighbors: Vec<usize>,
    result: TrialResult,
    trace: Option<Box<dyn Write + Send + 'a>>,
}

impl<'a> Simulation<'a> {
    pub fn new(
        instance: &'a ProblemInstance,
        topology: &'a NetworkTopology,
        schedule: ParamSchedule,
        seed: u64,
        trial: u64,
        options: RunOptions,
    ) -> Result<Self, AlgorithmError> {
        let n = instance.n();
        let m = instance.m();
        if topology.n() != n {
            return Err(AlgorithmError::DimensionMismatch {
                expected: n,
                got: topology.n(),
            });
        }
        if topology.dims() != instance.dims() {
            return Err(AlgorithmError::DimensionMismatch {
                expected: instance.total_dim(),
                got: topology.dims().iter().sum(),
            });
        }
        schedule.validate(m > 0)?;
        if options.stride == 0 {
            return Err(AlgorithmError::InvalidSchedule("stride must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&options.link_drop) {
            return Err(AlgorithmError::InvalidSchedule(format!(
                "link drop probability must lie in [0, 1), got {}",
                options.link_drop
            )));
        }
        let d = instance.total_dim();
        let max_dim = instance.dims().iter().copied().max().unwrap_or(0);
        let capacity = topology.diameter() + 1 + options.history_slack;
        let agents: Vec<AgentState> = (0..n)
            .map(|i| {
                let mut x0 = vec![0.0; instance.dims()[i]];
                instance.set(i).project_in_place(&mut x0);
                AgentState::new(x0, m)
            })
            .collect();
        let w = topology.weights();
        let mixing = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| w[(i, j)] != 0.0)
                    .map(|j| (j, w[(i, j)]))
                    .collect()
            })
            .collect();
        let tables: Vec<DifferenceTable> = (0..n).map(|i| DifferenceTable::new(i, n)).collect();
        Ok(Self {
            instance,
            topology,
            options: options.clone(),
            t: 0,
            streams: (0..n)
                .map(|i| AgentStreams::new(seed, trial, i, instance.dims()[i]))
                .collect(),
            links: (0..n)
                .map(|i| PerturbationStream::new(StreamKey::new(seed, trial, i as u64, StreamTag::Link), 1))
                .collect(),
            snapshots: tables.clone(),
            tables,
            histories: instance
                .dims()
                .iter()
                .map(|&di| PerturbationHistory::new(di, capacity))
                .collect(),
            mixing,
            duals_now: vec![0.0; n * m],
            duals_next: vec![0.0; n * m],
            counter: OracleCounter::new(n),
            scratch: ProbeScratch::default(),
            x_joint: vec![0.0; d],
            plus: vec![0.0; d],
            minus: vec![0.0; d],
            z_joint: vec![0.0; d],
            avg: vec![0.0; d],
            s: vec![0.0; m],
            p: vec![0.0; m],
            coeffs: vec![0.0; m],
            g_tmp: vec![0.0; m],
            z_bar: vec![0.0; max_dim],
            direction: vec![0.0; max_dim],
            neighbors: Vec::new(),
            result: TrialResult {
                trial,
                seed,
                horizon: schedule.horizon,
                rounds: Vec::new(),
                objective: Vec::new(),
                constraint_sums: Vec::new(),
                violation: Vec::new(),
                spread: Vec::new(),
                oracle_cumulative: Vec::new(),
                oracle_counts: OracleCounter::new(n),
                average: Vec::new(),
                final_x: Vec::new(),
                final_duals: Vec::new(),
                iterates: options.record_iterates.then(Vec::new),
                consensus: options.monitor_consensus.then(ConsensusReport::default),
            },
            agents,
            schedule,
            trace: None,
        })
    }

    /// Writes one `t i j stamp D` line per table entry after every merge.
    pub fn with_trace(mut self, out: Box<dyn Write + Send + 'a>) -> Self {
        self.trace = Some(out);
        self
    }

    pub fn round(&self) -> u64 {
        self.t
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn tables(&self) -> &[DifferenceTable] {
        &self.tables
    }

    pub fn counter(&self) -> &OracleCounter {
        &self.counter
    }

    pub fn schedule(&self) -> &ParamSchedule {
        &self.schedule
    }

    fn estimator_err(&self, agent: usize, e: DiffusionError) -> AlgorithmError {
        match e {
            DiffusionError::Estimator(source) => AlgorithmError::Estimator {
                t: self.t,
                agent,
                source,
            },
            other => AlgorithmError::Diffusion(other),
        }
    }

    /// Executes one synchronous round.
    pub fn step(&mut self) -> Result<(), AlgorithmError> {
        let t = self.t;
        let n = self.instance.n();
        let m = self.instance.m();
        let layout = self.instance.layout();
        let ev = self.instance.evaluator();
        let u = self.schedule.u;
        let theta = self.schedule.theta(t);
        let eta = self.schedule.eta(t);
        let mu = self.schedule.mu(t);
        let gamma = self.schedule.gamma(t);
        let bound = self.schedule.dual_bound;

        // Round-start snapshots that neighbors read.
        for (snap, table) in self.snapshots.iter_mut().zip(&self.tables) {
            snap.clone_from(table);
        }
        self.duals_now.copy_from_slice(&self.duals_next);
        for (i, a) in self.agents.iter().enumerate() {
            self.x_joint[layout.block(i)].copy_from_slice(&a.x);
        }

        // 1. Joint objective probe.
        for i in 0..n {
            let blk = layout.block(i);
            let slot = self.histories[i].slot_mut(t);
            self.streams[i].objective.draw_into(t, slot);
            self.z_joint[blk].copy_from_slice(slot);
        }
        for k in 0..self.x_joint.len() {
            self.plus[k] = self.x_joint[k] + u * self.z_joint[k];
            self.minus[k] = self.x_joint[k] - u * self.z_joint[k];
        }
        for i in 0..n {
            let (f_plus, f_minus) = ev.local_cost_pair(i, &self.plus, &self.minus);
            self.counter.objective[i] += 2;
            if let Err(e) = self.tables[i].record_local(t, f_plus, f_minus, u) {
                return Err(self.estimator_err(i, e));
            }
        }

        let monitor = self.options.monitor_consensus;
        let mut s_max = 0.0f64;
        for i in 0..n {
            let di = layout.dims()[i];

            // 2. Constraint extrapolation, then a fresh Jacobian and feedback at x_t.
            {
                let state = &mut self.agents[i];
                if t == 0 {
                    ev.local_constraints(i, &state.x, &mut state.g_prev);
                    self.counter.feedback[i] += 1;
                    state.ell_curr.copy_from_slice(&state.g_prev);
                    state.ell_prev.copy_from_slice(&state.g_prev);
                    self.s.copy_from_slice(&state.g_prev);
                } else {
                    let step: f64 = state
                        .jac_prev
                        .direction
                        .iter()
                        .zip(state.x.iter().zip(&state.x_prev))
                        .map(|(z, (a, b))| z * (a - b))
                        .sum();
                    for j in 0..m {
                        let ell = state.g_prev[j] + state.jac_prev.coefficients[j] * step;
                        self.s[j] = (1.0 + theta) * ell - theta * state.ell_curr[j];
                        state.ell_prev[j] = state.ell_curr[j];
                        state.ell_curr[j] = ell;
                    }
                    ev.local_constraints(i, &state.x, &mut state.g_prev);
                    self.counter.feedback[i] += 1;
                }
                if m > 0 {
                    self.streams[i].constraint.draw_into(t, &mut state.jac_prev.direction);
                    constraint_quotients_into(
                        |xi, out| ev.local_constraints(i, xi, out),
                        &state.x,
                        u,
                        &state.jac_prev.direction,
                        &mut self.scratch,
                        &mut state.jac_prev.coefficients,
                    )
                    .map_err(|source| AlgorithmError::Estimator { t, agent: i, source })?;
                    self.counter.constraint[i] += 2 * m as u64;
                }
                state.x_prev.copy_from_slice(&state.x);
            }
            if self.s.iter().any(|v| !v.is_finite()) {
                return Err(AlgorithmError::NonFiniteIterate {
                    t,
                    agent: i,
                    what: "constraint estimate",
                });
            }
            if monitor {
                s_max = s_max.max(norm(&self.s));
            }

            // 3. Gossip.
            self.neighbors.clear();
            for &k in self.topology.graph().neighbors(i) {
                if self.options.link_drop > 0.0 && self.links[i].uniform(t, k as u64) < self.options.link_drop {
                    continue;
                }
                self.neighbors.push(k);
            }
            self.tables[i].gossip_merge(&self.snapshots, &self.neighbors);
            if let Some(out) = self.trace.as_mut() {
                self.tables[i]
                    .write_trace(t, out)
                    .map_err(|e| AlgorithmError::InvalidSchedule(format!("trace output: {e}")))?;
            }

            // 4-5. Dual consensus and projected ascent.
            if m > 0 {
                consensus_mix(self.mixing[i].iter().copied(), &self.duals_now, &mut self.p);
                dual_step(&self.p, &self.s, mu, bound, &mut self.duals_next[i * m..(i + 1) * m]);
                let y = &self.duals_next[i * m..(i + 1) * m];
                if y.iter().any(|v| !(*v >= 0.0)) || norm(y) > bound * (1.0 + 1e-12) {
                    return Err(AlgorithmError::NonFiniteIterate { t, agent: i, what: "dual" });
                }
                self.agents[i].y.copy_from_slice(y);
            }

            // 6. Dual-weighted constraint gradient along z_bar.
            let z_bar = &mut self.z_bar[..di];
            let state = &mut self.agents[i];
            let mut weight = 0.0;
            if m > 0 {
                self.streams[i].dual.draw_into(t, z_bar);
                constraint_quotients_into(
                    |xi, out| ev.local_constraints(i, xi, out),
                    &state.x,
                    u,
                    z_bar,
                    &mut self.scratch,
                    &mut self.coeffs,
                )
                .map_err(|source| AlgorithmError::Estimator { t, agent: i, source })?;
                self.counter.constraint[i] += 2 * m as u64;
                weight = dot(&self.coeffs, &state.y);
            }

            // 7. Delayed partial gradient of f0.
            let v = &mut self.direction[..di];
            assemble_grad_f0(&self.tables[i], &self.histories[i], v)?;
            if m > 0 {
                for (vk, zk) in v.iter_mut().zip(z_bar.iter()) {
                    *vk += weight * zk;
                }
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(AlgorithmError::NonFiniteIterate {
                    t,
                    agent: i,
                    what: "primal direction",
                });
            }

            // 8-9. Primal step and running average.
            let set = self.instance.set(i);
            primal_step(&mut state.x, v, eta, set);
            if !set.contains(&state.x, 1e-9) {
                return Err(AlgorithmError::InfeasibleIterate { t, agent: i });
            }
            for (acc, xk) in state.running_sum_x.iter_mut().zip(&state.x) {
                *acc += gamma * xk;
            }
            state.running_sum_gamma += gamma;
        }

        for (i, a) in self.agents.iter().enumerate() {
            self.x_joint[layout.block(i)].copy_from_slice(&a.x);
        }
        let x_norm = norm(&self.x_joint);
        if !x_norm.is_finite() || x_norm > DIVERGENCE_FACTOR * self.instance.constants().r_bar.max(1.0) {
            return Err(AlgorithmError::Diverged { t, norm: x_norm });
        }
        if let Some(iterates) = self.result.iterates.as_mut() {
            iterates.push(self.x_joint.clone());
        }
        if let Some(report) = self.result.consensus.as_mut() {
            let before = consensus_spread(&self.duals_now, m);
            let after = consensus_spread(&self.duals_next, m);
            let limit = self.topology.rho() * before + mu * s_max;
            report.rounds += 1;
            if after > limit * (1.0 + 1e-12) + 1e-15 {
                report.violations += 1;
            }
            if limit > 0.0 {
                report.worst_ratio = report.worst_ratio.max(after / limit);
            }
        }

        self.t += 1;
        let done = self.t;
        if done.is_multiple_of(self.options.stride) || done == self.schedule.horizon {
            self.record();
        }
        Ok(())
    }

    /// Joint running average `x_bar`.
    pub fn average(&self) -> Vec<f64> {
        let layout = self.instance.layout();
        let mut out = vec![0.0; self.instance.total_dim()];
        for (i, a) in self.agents.iter().enumerate() {
            out[layout.block(i)].copy_from_slice(&a.average());
        }
        out
    }

    fn record(&mut self) {
        let layout = self.instance.layout();
        let m = self.instance.m();
        for (i, a) in self.agents.iter().enumerate() {
            let w = a.running_sum_gamma;
            for (o, v) in self.avg[layout.block(i)].iter_mut().zip(&a.running_sum_x) {
                *o = v / w;
            }
        }
        let ev = self.instance.evaluator();
        let mut sums = vec![0.0; m];
        for i in 0..self.instance.n() {
            ev.local_constraints(i, &self.avg[layout.block(i)], &mut self.g_tmp);
            for (acc, g) in sums.iter_mut().zip(&self.g_tmp) {
                *acc += g;
            }
        }
        let r = &mut self.result;
        r.rounds.push(self.t);
        r.objective.push(ev.global_cost(&self.avg));
        r.violation.push(positive_part_norm(&sums));
        r.constraint_sums.push(sums);
        r.spread.push(consensus_spread(&self.duals_next, m));
        r.oracle_cumulative.push(self.counter.total_queries());
    }

    /// Runs the remaining rounds and returns the trajectories.
    pub fn run(mut self) -> Result<TrialResult, AlgorithmError> {
        while self.t < self.schedule.horizon {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(mut self) -> TrialResult {
        if let Some(out) = self.trace.as_mut() {
            let _ = out.flush();
        }
        let mut r = self.result;
        r.average = {
            let layout = self.instance.layout();
            let mut out = vec![0.0; self.instance.total_dim()];
            for (i, a) in self.agents.iter().enumerate() {
                out[layout.block(i)].copy_from_slice(&a.average());
            }
            out
        };
        r.final_x = self.x_joint.clone();
        r.final_duals = self.duals_next.clone();
        r.oracle_counts = self.counter.clone();
        r
    }
}

/// One full trial from the all-zero start.
pub fn run(
    instance: &ProblemInstance,
    topology: &NetworkTopology,
    schedule: &ParamSchedule,
    seed: u64,
    trial: u64,
    options: &RunOptions,
) -> Result<TrialResult, AlgorithmError> {
    Simulation::new(instance, topology, schedule.clone(), seed, trial, options.clone())?.run()
}
