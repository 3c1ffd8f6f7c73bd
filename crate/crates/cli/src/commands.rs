use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;

use zofo_core::config::{default_dual_bound, TopologySummary};
use zofo_core::harness::{trial_csv_name, write_json};
use zofo_core::verify::InjectedWeights;
use zofo_core::{
    compute_theorem_params, generate_quadratic, load_instance, run_ensemble, run_suite, save_instance,
    solve_reference, write_summary_csv, GeneratorConfig, Graph, ProblemInstance, ReferenceOptions, RunConfig,
    RunOptions, ScheduleMode, Simulation, Suite, TopologySpec, VerifyOptions,
};

use crate::{GenerateArgs, GeneratorArgs, ParamsArgs, RunArgs, SolveRefArgs, Usage, VerifyArgs};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn generator_config(a: &GeneratorArgs) -> Result<GeneratorConfig> {
    if a.eig_range.len() != 2 {
        return Err(usage("--eig-range takes MIN,MAX"));
    }
    Ok(GeneratorConfig {
        seed: a.seed,
        n: a.n,
        d: a.d,
        dims: a.dims.clone(),
        m: a.m,
        eig_range: (a.eig_range[0], a.eig_range[1]),
        radius: a.radius,
        ..GeneratorConfig::default()
    })
}

fn print_instance(instance: &ProblemInstance) {
    let k = instance.constants();
    println!(
        "agents {}  d {}  m {}  dims {:?}",
        instance.n(),
        instance.total_dim(),
        instance.m(),
        instance.dims()
    );
    println!(
        "M0 {:.6}  L0 {:.6}  M_g {:.6}  L_g {:.6}  L_max {:.6}  Z {:.6}  R_bar {:.6}",
        k.m0, k.l0, k.m_g, k.l_g, k.l_max, k.z, k.r_bar
    );
    if let Some(margin) = instance.quadratic().and_then(|q| q.slater_margin()) {
        println!("slater margin {margin:.6}");
    }
}

pub fn generate(a: GenerateArgs) -> Result<ExitCode> {
    let cfg = generator_config(&a.generator)?;
    let (instance, _) = generate_quadratic(&cfg)?;
    save_instance(&instance, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    print_instance(&instance);
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn solve_ref(a: SolveRefArgs) -> Result<ExitCode> {
    if !(a.tol > 0.0) {
        return Err(usage(format!("--tol must be positive, got {}", a.tol)));
    }
    let instance = load_instance(&a.instance).with_context(|| format!("reading {}", a.instance.display()))?;
    let options = ReferenceOptions {
        tolerance: a.tol,
        ..ReferenceOptions::default()
    };
    let sol = solve_reference(&instance, &options)?;
    println!("f* {:.12}", sol.objective);
    println!("||y*|| {:.12}", sol.multiplier_norm());
    println!("y* {:?}", sol.multipliers);
    println!("constraint sums {:?}", sol.constraint_sums);
    println!(
        "kkt residual {:.3e}  outer {}  inner {}",
        sol.kkt_residual, sol.outer_iterations, sol.inner_iterations
    );
    if let Some(out) = &a.out {
        write_json(&sol, out)?;
        println!("wrote {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_topology(s: &str) -> Result<TopologySpec> {
    match s.parse::<TopologySpec>() {
        Ok(spec) => Ok(spec),
        Err(_) if Path::new(s).is_file() => Ok(TopologySpec::File(s.to_string())),
        Err(e) => Err(usage(e.to_string())),
    }
}

fn parse_schedule(s: &str) -> Result<ScheduleMode> {
    match s {
        "constant" => Ok(ScheduleMode::Constant),
        "diminishing" => Ok(ScheduleMode::Diminishing),
        "theorem" => Ok(ScheduleMode::Theorem),
        other => Err(usage(format!(
            "unknown schedule `{other}` (expected constant, diminishing or theorem)"
        ))),
    }
}

fn run_config(a: &RunArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(path) = &a.instance {
        c.instance.file = Some(path.clone());
    }
    if let Some(seed) = a.instance_seed {
        c.instance.generator.seed = seed;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.trials {
        c.trials = v;
    }
    if let Some(v) = a.horizon {
        c.horizon = v;
    }
    if let Some(s) = &a.schedule {
        c.schedule.mode = parse_schedule(s)?;
    }
    if let Some(v) = a.eta {
        c.schedule.eta = v;
    }
    if let Some(v) = a.mu {
        c.schedule.mu = v;
    }
    if let Some(v) = a.c {
        c.schedule.c = v;
    }
    if a.u.is_some() {
        c.u = a.u;
    }
    if a.dual_bound.is_some() {
        c.dual_bound = a.dual_bound;
    }
    if let Some(t) = &a.topology {
        c.topology = parse_topology(t)?;
    }
    if let Some(v) = &a.out_dir {
        c.out_dir = v.clone();
    }
    if let Some(v) = a.stride {
        c.stride = v;
    }
    if let Some(v) = a.workers {
        c.workers = v;
    }
    c.validate()?;
    Ok(c)
}

pub fn run(a: RunArgs) -> Result<ExitCode> {
    let config = run_config(&a)?;
    let resolved = config.resolve()?;
    let out = &config.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let trial_dir = out.join("trials");
    let ensemble = run_ensemble(
        &resolved.instance,
        &resolved.topology,
        &resolved.schedule,
        &resolved.ensemble_config(Some(trial_dir)),
    )?;
    let summary = &ensemble.summary;
    for w in summary.warnings() {
        eprintln!("warning: {w}");
    }

    let summary_path = out.join("summary.csv");
    write_summary_csv(summary, &summary_path)?;
    let config_path = out.join("config.toml");
    fs::write(&config_path, config.to_toml_string()).with_context(|| format!("writing {}", config_path.display()))?;
    let mut outputs = vec!["summary.csv".to_string(), "config.toml".to_string()];
    outputs.extend(ensemble.results.iter().map(|r| format!("trials/{}", trial_csv_name(r.trial))));

    if let Some(trace_path) = &a.trace {
        let file = File::create(trace_path).with_context(|| format!("creating {}", trace_path.display()))?;
        let options = RunOptions {
            stride: config.stride,
            ..RunOptions::default()
        };
        Simulation::new(
            &resolved.instance,
            &resolved.topology,
            resolved.schedule.clone(),
            config.seed,
            0,
            options,
        )?
        .with_trace(Box::new(BufWriter::new(file)))
        .run()?;
        outputs.push(trace_path.display().to_string());
    }

    outputs.push("manifest.json".into());
    let manifest = resolved.manifest(summary.trials, summary.failed.clone(), outputs);
    write_json(&manifest, &out.join("manifest.json"))?;

    if summary.trials == 0 {
        bail!("all {} trials failed", config.trials);
    }
    let last = summary.rounds.len() - 1;
    let f_star = resolved.reference.objective;
    println!(
        "trials {}  T {}  f* {:.6}  mean f0(x_bar) {:.6}  gap {:.6}  mean violation {:.3e}",
        summary.trials,
        config.horizon,
        f_star,
        summary.objective.mean[last],
        summary.objective.mean[last] - f_star,
        summary.violation.mean[last]
    );
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

/// Whitespace-separated square matrix, one row per line.
fn parse_weights(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(k, line)| {
            line.split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| usage(format!("row {}: not a number: {v}", k + 1))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(usage("weight matrix must be square and nonempty"));
    }
    Ok(DMatrix::from_row_iterator(n, n, rows.into_iter().flatten()))
}

fn sparsity_graph(w: &DMatrix<f64>) -> Result<Graph> {
    let n = w.nrows();
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter(|&(i, j)| w[(i, j)] != 0.0 || w[(j, i)] != 0.0)
        .collect();
    Ok(Graph::from_edges(n, &edges)?)
}

pub fn verify(a: VerifyArgs) -> Result<ExitCode> {
    let suites: Vec<Suite> = if a.suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        a.suites
            .iter()
            .map(|s| s.parse::<Suite>().map_err(usage))
            .collect::<Result<_>>()?
    };
    let weights = match &a.weights {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let weights = parse_weights(&text)?;
            let graph = sparsity_graph(&weights)?;
            Some(InjectedWeights { graph, weights })
        }
        None => None,
    };
    let options = VerifyOptions { seed: a.seed, weights };
    let mut failed = 0;
    for suite in suites {
        let report = run_suite(suite, &options);
        for check in &report.checks {
            let tag = if check.passed { "PASS" } else { "FAIL" };
            println!("{tag} {suite}: {} ({})", check.invariant, check.detail);
        }
        let secs = report.elapsed.as_secs_f64();
        if report.passed() {
            println!("suite {suite} passed in {secs:.1}s");
        } else {
            failed += 1;
            println!("suite {suite} FAILED in {secs:.1}s");
        }
    }
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

pub fn params(a: ParamsArgs) -> Result<ExitCode> {
    let mut config = RunConfig {
        horizon: a.horizon,
        topology: parse_topology(&a.topology)?,
        dual_bound: a.dual_bound,
        ..RunConfig::default()
    };
    config.instance.file = a.instance.clone();
    config.instance.generator = generator_config(&a.generator)?;
    config.validate()?;
    let instance = config.load_instance()?;
    let topology = config.build_topology(&instance)?;
    let summary = TopologySummary::new(&config.topology, &topology);
    println!(
        "topology {}  n {}  edges {}  diameter {}  rho {:.6}  b_bar {:.4}  b_frak {:.4}",
        summary.spec,
        summary.n,
        summary.edges.len(),
        summary.diameter,
        summary.rho,
        summary.b_bar,
        summary.b_frak
    );
    let dual_bound = match a.dual_bound {
        Some(c) => c,
        None => {
            let r = solve_reference(&instance, &config.reference)?;
            println!("f* {:.9}  ||y*|| {:.6}", r.objective, r.multiplier_norm());
            default_dual_bound(&r)
        }
    };
    let k = compute_theorem_params(&instance, &topology, a.horizon, dual_bound)?;
    println!("T {}  C {:.6}", a.horizon, dual_bound);
    println!("xi {:.6e}  zeta {:.6e}", k.xi, k.zeta);
    println!(
        "eta {:.6e}  mu {:.6e}  u {:.6e}  primal step {:.6e}",
        k.eta, k.mu, k.u, k.eta_step
    );
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_parse_row_major() {
        let w = parse_weights("0.5 0.5\n\n0.5 0.5\n").unwrap();
        assert_eq!(w.nrows(), 2);
        assert_eq!(w[(1, 0)], 0.5);
        let w = parse_weights("1 2 3\n4 5 6\n7 8 9").unwrap();
        assert_eq!((w[(0, 2)], w[(2, 0)]), (3.0, 7.0));
    }

    #[test]
    fn malformed_weights_are_usage_errors() {
        for text in ["", "1 2\n3", "1 x\n0 1", "1 0 0\n0 1 0"] {
            let err = parse_weights(text).unwrap_err();
            assert!(err.is::<Usage>(), "{text:?}");
        }
    }

    #[test]
    fn sparsity_pattern_gives_the_graph() {
        let w = parse_weights("0.5 0.5 0\n0.5 0 0.5\n0 0.5 0.5").unwrap();
        let g = sparsity_graph(&w).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
        let disconnected = parse_weights("1 0\n0 1").unwrap();
        assert_eq!(sparsity_graph(&disconnected).unwrap().edges().count(), 0);
    }

    #[test]
    fn schedule_names() {
        assert_eq!(parse_schedule("theorem").unwrap(), ScheduleMode::Theorem);
        assert_eq!(parse_schedule("diminishing").unwrap(), ScheduleMode::Diminishing);
        assert!(parse_schedule("Constant").unwrap_err().is::<Usage>());
    }

    #[test]
    fn topology_names() {
        assert_eq!(parse_topology("ring").unwrap(), TopologySpec::Ring);
        assert!(parse_topology("hypercube").unwrap_err().is::<Usage>());
    }
}
