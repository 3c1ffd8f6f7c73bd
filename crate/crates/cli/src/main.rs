//! `zofo`: generate instances, solve them centrally, run the distributed
//! simulator, and verify its building blocks.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
//! configuration error.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use zofo_core::{AlgorithmError, ConfigError, ProblemError, TopologyError};

#[derive(Debug, Parser)]
#[command(name = "zofo", version, about = "Distributed zeroth-order primal-dual simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random quadratic instance.
    Generate(GenerateArgs),
    /// Solve an instance centrally for f* and the optimal multipliers.
    SolveRef(SolveRefArgs),
    /// Run a Monte Carlo ensemble of the distributed algorithm.
    Run(RunArgs),
    /// Run the property suites.
    Verify(VerifyArgs),
    /// Print the theorem step sizes and network metrics.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
struct GeneratorArgs {
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of agents.
    #[arg(long, default_value_t = 15)]
    n: usize,
    /// Total decision dimension, split evenly across agents.
    #[arg(long, default_value_t = 40)]
    d: usize,
    /// Explicit per-agent dimensions, comma separated.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Number of coupled constraints.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Eigenvalue range of the objective, as MIN,MAX.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.6])]
    eig_range: Vec<f64>,
    /// Radius of each agent's action ball.
    #[arg(long, default_value_t = 2.0)]
    radius: f64,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    generator: GeneratorArgs,
    /// Output instance file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SolveRefArgs {
    /// Instance file.
    #[arg(long)]
    instance: PathBuf,
    /// KKT residual tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Where to write the reference solution (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Instance file; without it the instance is generated.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Generator seed when no instance file is given.
    #[arg(long)]
    instance_seed: Option<u64>,
    /// Master seed of the trial perturbation streams.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    /// Horizon (rounds per trial).
    #[arg(long = "T")]
    horizon: Option<u64>,
    /// constant, diminishing or theorem.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// Offset of the diminishing rule 1/(sqrt(t) + c).
    #[arg(long)]
    c: Option<f64>,
    /// Smoothing radius.
    #[arg(long)]
    u: Option<f64>,
    /// Dual ball radius.
    #[arg(long = "C")]
    dual_bound: Option<f64>,
    /// complete, ring, path, star, erdos:<p>, or file:<path>.
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Record metrics every this many rounds.
    #[arg(long)]
    stride: Option<u64>,
    /// Worker threads; 0 uses one per core.
    #[arg(long)]
    workers: Option<usize>,
    /// Write the gossip protocol trace of trial 0 to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Suites to run (default: all).
    #[arg(long = "suite")]
    suites: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Consensus matrix to check instead of the Metropolis weights: one row
    /// per line, whitespace separated. The graph is its sparsity pattern.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ParamsArgs {
    /// Instance file; without it the instance is generated.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[command(flatten)]
    generator: GeneratorArgs,
    #[arg(long, default_value = "erdos:0.4")]
    topology: String,
    #[arg(long = "T", default_value_t = 200_000)]
    horizon: u64,
    /// Dual ball radius; defaults to 2 ||y*|| + 1.
    #[arg(long = "C")]
    dual_bound: Option<f64>,
}

/// An error caused by the command line or its inputs.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn problem_is_usage(e: &ProblemError) -> bool {
    !matches!(e, ProblemError::NoConvergence { .. } | ProblemError::InfeasibleInstance(_))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() || cause.is::<clap::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<ConfigError>() {
            return match e {
                ConfigError::Read { .. } | ConfigError::Parse(_) | ConfigError::Invalid(_) => 2,
                ConfigError::Problem(p) if problem_is_usage(p) => 2,
                ConfigError::Topology(_) => 2,
                ConfigError::Algorithm(AlgorithmError::InvalidSchedule(_) | AlgorithmError::InvalidConstants(_)) => 2,
                _ => 1,
            };
        }
        if let Some(p) = cause.downcast_ref::<ProblemError>() {
            return if problem_is_usage(p) { 2 } else { 1 };
        }
        if cause.is::<TopologyError>() {
            return 2;
        }
        if let Some(AlgorithmError::InvalidSchedule(_) | AlgorithmError::InvalidConstants(_)) =
            cause.downcast_ref::<AlgorithmError>()
        {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::SolveRef(a) => commands::solve_ref(a),
        Command::Run(a) => commands::run(a),
        Command::Verify(a) => commands::verify(a),
        Command::Params(a) => commands::params(a),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(exit_code(&Usage("bad".into()).into()), 2);
        let err = anyhow::Error::from(ProblemError::InvalidEigRange(0.0, 1.0)).context("generating");
        assert_eq!(exit_code(&err), 2);
        let err = anyhow::Error::from(ConfigError::Invalid("trials must be positive".into()));
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn runtime_errors_exit_one() {
        assert_eq!(exit_code(&anyhow::anyhow!("all trials failed")), 1);
        assert_eq!(exit_code(&ProblemError::InfeasibleInstance(20).into()), 1);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
