//! Property suites run by `zofo verify`.
//!
//! Each suite returns a list of named checks. A failing check carries the
//! invariant name and a witness in its detail string.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::algorithm::{dual_step, primal_step, ParamSchedule, RunOptions, Simulation};
use crate::linalg::{dist, dot, norm};
use crate::problem::{generate_quadratic, project_dual, FeasibleSet, GeneratorConfig};
use crate::topology::{metropolis_weights, validate_weights, Graph, NetworkTopology, TopologyError};
use crate::zeroth_order::{
    smoothing_gap_bound_check, two_point_scalar_diff, PerturbationStream, QuadraticForm, StreamKey, StreamTag,
};

/// Grid-search oracle tolerance for the prox steps.
pub const PROX_TOLERANCE: f64 = 2e-3;
pub const PROX_CASES: usize = 200;
pub const NONEXPANSIVE_PAIRS: usize = 10_000;
pub const DELAY_ROUNDS: u64 = 100;
pub const MONTE_CARLO_DRAWS: usize = 100_000;
pub const SMOOTHING_SAMPLES: usize = 1000;
/// Largest allowed empirical correlation between two perturbation streams.
pub const STREAM_CORRELATION_LIMIT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    DelayLaw,
    Projection,
    Estimator,
    SmoothingBound,
    Consensus,
    DoublyStochastic,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::DelayLaw,
        Suite::Projection,
        Suite::Estimator,
        Suite::SmoothingBound,
        Suite::Consensus,
        Suite::DoublyStochastic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::DelayLaw => "delay-law",
            Suite::Projection => "projection",
            Suite::Estimator => "estimator",
            Suite::SmoothingBound => "smoothing-bound",
            Suite::Consensus => "consensus",
            Suite::DoublyStochastic => "doubly-stochastic",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Suite::ALL.iter().map(|s| s.name()).collect();
                format!("unknown suite `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub invariant: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(invariant: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            invariant: invariant.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// A user-supplied consensus matrix to validate instead of the Metropolis
/// weights.
#[derive(Debug, Clone)]
pub struct InjectedWeights {
    pub graph: Graph,
    pub weights: DMatrix<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    pub weights: Option<InjectedWeights>,
}

pub fn run_suite(suite: Suite, options: &VerifyOptions) -> SuiteReport {
    let start = Instant::now();
    let checks = match suite {
        Suite::DelayLaw => delay_law(options.seed),
        Suite::Projection => projection(options.seed),
        Suite::Estimator => estimator(options.seed),
        Suite::SmoothingBound => smoothing_bound(options.seed),
        Suite::Consensus => consensus(options.seed),
        Suite::DoublyStochastic => doubly_stochastic(options),
    };
    SuiteReport {
        suite,
        checks,
        elapsed: start.elapsed(),
    }
}

/// Thirty small connected graphs: paths, rings, stars, complete graphs and
/// random connected graphs, all with at most 12 nodes.
pub fn graph_suite(seed: u64) -> Result<Vec<(String, Graph)>, TopologyError> {
    let mut out = Vec::new();
    for n in 2..=7 {
        out.push((format!("path{n}"), Graph::path(n)?));
    }
    for n in 3..=8 {
        out.push((format!("ring{n}"), Graph::ring(n)?));
    }
    for n in 3..=8 {
        out.push((format!("star{n}"), Graph::star(n)?));
    }
    for n in 2..=5 {
        out.push((format!("complete{n}"), Graph::complete(n)?));
    }
    for k in 0..8u64 {
        let n = 5 + k as usize;
        let p = 0.25 + 0.05 * (k % 4) as f64;
        out.push((format!("erdos{n}"), Graph::erdos_renyi(n, p, seed.wrapping_add(k))?));
    }
    Ok(out)
}

fn delay_law(seed: u64) -> Vec<Check> {
    let graphs = match graph_suite(seed) {
        Ok(g) => g,
        Err(e) => return vec![Check::new("graph-suite", false, e.to_string())],
    };
    let mut checks = Vec::new();
    for (name, graph) in graphs {
        checks.push(delay_law_on(&name, graph, seed));
    }
    checks
}

fn delay_law_on(name: &str, graph: Graph, seed: u64) -> Check {
    let invariant = format!("stamp = t - b_ij ({name})");
    let n = graph.len();
    let cfg = GeneratorConfig {
        seed,
        n,
        d: n,
        m: 1,
        ..GeneratorConfig::default()
    };
    let setup = generate_quadratic(&cfg)
        .map_err(|e| e.to_string())
        .and_then(|(inst, _)| {
            NetworkTopology::new(graph, inst.dims().to_vec())
                .map(|topo| (inst, topo))
                .map_err(|e| e.to_string())
        });
    let (inst, topo) = match setup {
        Ok(s) => s,
        Err(e) => return Check::new(invariant, false, e),
    };
    let sched = ParamSchedule::constant(0.01, 0.01, 0.01, 5.0, DELAY_ROUNDS);
    let mut sim = match Simulation::new(&inst, &topo, sched, seed, 0, RunOptions::default()) {
        Ok(s) => s,
        Err(e) => return Check::new(invariant, false, e.to_string()),
    };
    for t in 0..DELAY_ROUNDS {
        if let Err(e) = sim.step() {
            return Check::new(invariant, false, format!("round {t}: {e}"));
        }
        for (i, table) in sim.tables().iter().enumerate() {
            for j in 0..n {
                let b = topo.distance(i, j) as u64;
                let expected = (t >= b).then(|| t - b);
                if table.stamp(j) != expected {
                    return Check::new(
                        invariant,
                        false,
                        format!("round {t}: agent {i} holds stamp {:?} for {j}, expected {expected:?}", table.stamp(j)),
                    );
                }
            }
        }
    }
    Check::new(invariant, true, format!("{n} agents, {DELAY_ROUNDS} rounds"))
}

/// Minimizes `f` over the parameter rectangle `[lo, hi]` by repeated grid
/// refinement. Coordinates with `clamp` set stay inside their bounds; the
/// others may leave them (angles).
fn grid_argmin<F>(f: F, lo: [f64; 2], hi: [f64; 2], clamp: [bool; 2]) -> [f64; 2]
where
    F: Fn([f64; 2]) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let mut best = ([0.0; 2], f64::INFINITY);
    for level in 0..6 {
        let cells = if level == 0 { 200 } else { 80 };
        let h = [(b[0] - a[0]) / cells as f64, (b[1] - a[1]) / cells as f64];
        for i in 0..=cells {
            for j in 0..=cells {
                let p = [a[0] + i as f64 * h[0], a[1] + j as f64 * h[1]];
                let v = f(p);
                if v < best.1 {
                    best = (p, v);
                }
            }
        }
        for k in 0..2 {
            a[k] = best.0[k] - 8.0 * h[k];
            b[k] = best.0[k] + 8.0 * h[k];
            if clamp[k] {
                a[k] = a[k].max(lo[k]);
                b[k] = b[k].min(hi[k]);
            }
        }
    }
    best.0
}

/// Argmin over a disc, searched on a polar grid that contains the boundary.
fn disc_argmin<F: Fn([f64; 2]) -> f64>(f: F, center: [f64; 2], radius: f64) -> [f64; 2] {
    let to_point = |q: [f64; 2]| [center[0] + q[0] * q[1].cos(), center[1] + q[0] * q[1].sin()];
    to_point(grid_argmin(
        |q| f(to_point(q)),
        [0.0, -std::f64::consts::PI],
        [radius, std::f64::consts::PI],
        [true, false],
    ))
}

/// Argmin over `{y >= 0, ||y|| <= c}` on a polar grid.
fn quarter_disc_argmin<F: Fn([f64; 2]) -> f64>(f: F, c: f64) -> [f64; 2] {
    let to_point = |q: [f64; 2]| [q[0] * q[1].cos(), q[0] * q[1].sin()];
    to_point(grid_argmin(
        |q| f(to_point(q)),
        [0.0, 0.0],
        [c, std::f64::consts::FRAC_PI_2],
        [true, true],
    ))
}

fn projection(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x70726f6a);
    let mut worst_dual = 0.0f64;
    let mut worst_primal = 0.0f64;
    for case in 0..PROX_CASES {
        // Dual step in two dimensions.
        let p = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let s = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let mu = rng.random_range(0.1..2.0);
        let c = rng.random_range(0.2..3.0);
        let mut y = [0.0; 2];
        dual_step(&p, &s, mu, c, &mut y);
        let phi = |v: [f64; 2]| {
            -(s[0] * v[0] + s[1] * v[1]) + ((v[0] - p[0]).powi(2) + (v[1] - p[1]).powi(2)) / (2.0 * mu)
        };
        worst_dual = worst_dual.max(dist(&y, &quarter_disc_argmin(phi, c)));

        // Primal step on a ball or a box in two dimensions.
        let set = if case % 2 == 0 {
            FeasibleSet::ball(
                vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                rng.random_range(0.3..2.0),
            )
        } else {
            let lower = [rng.random_range(-2.0..0.0), rng.random_range(-2.0..0.0)];
            FeasibleSet::cube(
                lower.to_vec(),
                vec![lower[0] + rng.random_range(0.3..2.0), lower[1] + rng.random_range(0.3..2.0)],
            )
        };
        let x0 = set.sample(&mut rng);
        let v = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let eta = rng.random_range(0.05..1.5);
        let mut x = x0.clone();
        primal_step(&mut x, &v, eta, &set);
        let psi = |w: [f64; 2]| {
            v[0] * w[0] + v[1] * w[1] + ((w[0] - x0[0]).powi(2) + (w[1] - x0[1]).powi(2)) / (2.0 * eta)
        };
        let g = match &set {
            FeasibleSet::Ball { center, radius } => disc_argmin(psi, [center[0], center[1]], *radius),
            FeasibleSet::Box { lower, upper } => {
                grid_argmin(psi, [lower[0], lower[1]], [upper[0], upper[1]], [true, true])
            }
        };
        worst_primal = worst_primal.max(dist(&x, &g));
    }

    let mut worst_ratio = 0.0f64;
    for k in 0..NONEXPANSIVE_PAIRS {
        let d = 1 + k % 4;
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
        let (pa, pb) = match k % 3 {
            0 => {
                let ball = FeasibleSet::ball(vec![0.5; d], 1.5);
                (ball.project(&a), ball.project(&b))
            }
            1 => {
                let cube = FeasibleSet::cube(vec![-1.0; d], vec![2.0; d]);
                (cube.project(&a), cube.project(&b))
            }
            _ => (project_dual(&a, 2.0), project_dual(&b, 2.0)),
        };
        let base = dist(&a, &b);
        if base > 0.0 {
            worst_ratio = worst_ratio.max(dist(&pa, &pb) / base);
        }
    }
    vec![
        Check::new(
            "dual prox matches grid search",
            worst_dual <= PROX_TOLERANCE,
            format!("{PROX_CASES} cases, worst distance {worst_dual:.2e}"),
        ),
        Check::new(
            "primal prox matches grid search",
            worst_primal <= PROX_TOLERANCE,
            format!("{PROX_CASES} cases, worst distance {worst_primal:.2e}"),
        ),
        Check::new(
            "projection is nonexpansive",
            worst_ratio <= 1.0 + 1e-12,
            format!("{NONEXPANSIVE_PAIRS} pairs, worst ratio {worst_ratio:.15}"),
        ),
    ]
}

fn estimator(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x657374);
    let mut worst_affine = 0.0f64;
    for k in 0..50u64 {
        let d = 1 + (k % 8) as usize;
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c0 = rng.random_range(-5.0..5.0);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let u = [1e-3, 0.1, 1.0, 10.0][(k % 4) as usize];
        let z = PerturbationStream::new(StreamKey::new(seed, k, 0, StreamTag::Objective), d).draw(0);
        let h = |v: &[f64]| dot(&a, v) + c0;
        let got = match two_point_scalar_diff(h, &x, u, &z) {
            Ok(v) => v,
            Err(e) => return vec![Check::new("affine estimator is exact", false, e.to_string())],
        };
        // Rounding of the two evaluations, amplified by 1/(2u).
        let scale = (h(&x).abs() + u * norm(&a) * norm(&z)) / u + dot(&a, &z).abs();
        worst_affine = worst_affine.max((got - dot(&a, &z)).abs() / (scale * f64::EPSILON));
    }

    let d = 4;
    let a = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 + i as f64 * 0.5 } else { 0.2 });
    let h = QuadraticForm {
        matrix: a.clone(),
        linear: vec![0.5, -1.0, 0.25, 2.0],
        constant: 1.0,
    };
    let x = [0.3, -0.2, 0.8, -0.5];
    let mut grad = h.linear.clone();
    for (i, g) in grad.iter_mut().enumerate() {
        *g += 2.0 * (0..d).map(|j| a[(i, j)] * x[j]).sum::<f64>();
    }
    let mut stream = PerturbationStream::new(StreamKey::new(seed, 0, 0, StreamTag::Objective), d);
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut mc_error = None;
    for t in 0..MONTE_CARLO_DRAWS as u64 {
        let z = stream.draw(t);
        match two_point_scalar_diff(|v| h.eval(v), &x, 0.05, &z) {
            Ok(c) => {
                for k in 0..d {
                    let g = c * z[k];
                    sum[k] += g;
                    sum_sq[k] += g * g;
                }
            }
            Err(e) => {
                mc_error = Some(e.to_string());
                break;
            }
        }
    }
    let nf = MONTE_CARLO_DRAWS as f64;
    let mut worst_se = 0.0f64;
    for k in 0..d {
        let mean = sum[k] / nf;
        let var = (sum_sq[k] - nf * mean * mean) / (nf - 1.0);
        let se = (var / nf).sqrt();
        worst_se = worst_se.max((mean - grad[k]).abs() / se);
    }

    let mut z_stream = PerturbationStream::new(StreamKey::new(seed, 0, 0, StreamTag::Objective), d);
    let mut zh_stream = PerturbationStream::new(StreamKey::new(seed, 0, 0, StreamTag::Constraint), d);
    let mut cross = vec![0.0; d * d];
    let (mut s1, mut s2, mut q1, mut q2) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for t in 0..MONTE_CARLO_DRAWS as u64 {
        let z = z_stream.draw(t);
        let w = zh_stream.draw(t);
        for a in 0..d {
            s1[a] += z[a];
            q1[a] += z[a] * z[a];
            s2[a] += w[a];
            q2[a] += w[a] * w[a];
            for b in 0..d {
                cross[a * d + b] += z[a] * w[b];
            }
        }
    }
    let mut worst_corr = 0.0f64;
    for a in 0..d {
        for b in 0..d {
            let cov = cross[a * d + b] / nf - (s1[a] / nf) * (s2[b] / nf);
            let va = q1[a] / nf - (s1[a] / nf).powi(2);
            let vb = q2[b] / nf - (s2[b] / nf).powi(2);
            worst_corr = worst_corr.max((cov / (va * vb).sqrt()).abs());
        }
    }

    vec![
        Check::new(
            "affine estimator is exact",
            worst_affine <= 64.0,
            format!("worst error {worst_affine:.1} rounding units"),
        ),
        Check::new(
            "Monte Carlo mean within 3 standard errors",
            mc_error.is_none() && worst_se <= 3.0,
            mc_error.unwrap_or_else(|| format!("{MONTE_CARLO_DRAWS} draws, worst {worst_se:.2} standard errors")),
        ),
        Check::new(
            "independent perturbation streams",
            worst_corr <= STREAM_CORRELATION_LIMIT,
            format!("worst |correlation| {worst_corr:.4}"),
        ),
    ]
}

fn smoothing_bound(seed: u64) -> Vec<Check> {
    let cfg = GeneratorConfig {
        seed,
        n: 5,
        d: 10,
        m: 2,
        ..GeneratorConfig::default()
    };
    let (inst, spec) = match generate_quadratic(&cfg) {
        Ok(pair) => pair,
        Err(e) => return vec![Check::new("smoothing gap bound", false, e.to_string())],
    };
    let k = inst.constants();
    let d_total = inst.total_dim() as f64;
    let u_max = k.m_g / ((d_total + 6.0) * k.l_g);
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x6c656d);
    let per_block = SMOOTHING_SAMPLES / (spec.n() * spec.m()).max(1) + 1;
    let mut checked = 0;
    for i in 0..spec.n() {
        let set = inst.set(i);
        for j in 0..spec.m() {
            let p = &spec.p[i][j];
            let h = QuadraticForm {
                matrix: p.clone(),
                linear: spec.q[i][j].clone(),
                constant: spec.r[i][j],
            };
            let lam = crate::problem::lambda_max(p);
            let radius = set.norm_bound();
            let lipschitz = 2.0 * lam * radius + norm(&h.linear);
            let smoothness = 2.0 * lam;
            for _ in 0..per_block {
                let x = set.sample(&mut rng);
                let u = u_max * rng.random_range(1e-3..=1.0);
                if let Err(e) = smoothing_gap_bound_check(&h, u, lipschitz, smoothness, &[x]) {
                    return vec![Check::new("smoothing gap bound", false, format!("g_{i}{j}, u = {u:e}: {e}"))];
                }
                checked += 1;
            }
        }
    }
    vec![Check::new(
        "smoothing gap bound",
        true,
        format!("{checked} samples, u up to {u_max:.3e}"),
    )]
}

fn consensus(seed: u64) -> Vec<Check> {
    let cfg = GeneratorConfig {
        seed,
        n: 8,
        d: 16,
        m: 2,
        ..GeneratorConfig::default()
    };
    let run = generate_quadratic(&cfg).map_err(|e| e.to_string()).and_then(|(inst, _)| {
        let graph = Graph::erdos_renyi(cfg.n, 0.4, seed).map_err(|e| e.to_string())?;
        let topo = NetworkTopology::new(graph, inst.dims().to_vec()).map_err(|e| e.to_string())?;
        let sched = ParamSchedule::constant(0.01, 0.05, 0.01, 10.0, 2000);
        let options = RunOptions {
            monitor_consensus: true,
            stride: 2000,
            ..RunOptions::default()
        };
        let result = crate::algorithm::run(&inst, &topo, &sched, seed, 0, &options).map_err(|e| e.to_string())?;
        Ok((topo, result))
    });
    let (topo, result) = match run {
        Ok(r) => r,
        Err(e) => return vec![Check::new("spread contraction", false, e)],
    };
    let report = result.consensus.unwrap_or_default();
    vec![
        Check::new(
            "spread contraction",
            report.violations == 0 && report.rounds == 2000,
            format!(
                "{} rounds, {} violations, worst ratio {:.4}",
                report.rounds, report.violations, report.worst_ratio
            ),
        ),
        weights_check(topo.graph(), topo.weights(), "metropolis"),
    ]
}

fn weights_check(graph: &Graph, w: &DMatrix<f64>, label: &str) -> Check {
    match validate_weights(graph, w) {
        Ok(()) => Check::new(format!("doubly stochastic ({label})"), true, "all invariants hold"),
        Err(TopologyError::InvalidWeights { invariant, detail }) => {
            Check::new(format!("{invariant} ({label})"), false, detail)
        }
        Err(e) => Check::new(format!("doubly stochastic ({label})"), false, e.to_string()),
    }
}

fn doubly_stochastic(options: &VerifyOptions) -> Vec<Check> {
    if let Some(inj) = &options.weights {
        return vec![weights_check(&inj.graph, &inj.weights, "injected")];
    }
    match graph_suite(options.seed) {
        Ok(graphs) => graphs
            .iter()
            .map(|(name, g)| match metropolis_weights(g) {
                Ok(w) => weights_check(g, &w, name),
                Err(e) => Check::new(format!("doubly stochastic ({name})"), false, e.to_string()),
            })
            .collect(),
        Err(e) => vec![Check::new("graph-suite", false, e.to_string())],
    }
}
