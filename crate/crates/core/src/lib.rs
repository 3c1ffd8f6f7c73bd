//! Distributed zeroth-order primal-dual optimization with coupled
//! constraints.
//!
//! `n` agents jointly minimize `f0(x) = (1/n) sum_i f_i(x)` subject to
//! `sum_i g_ij(x^i) <= 0` for `j = 1..m`, each agent observing only function
//! values. Agents estimate gradients with two-point Gaussian probes, gossip
//! objective differences through the network, and keep local copies of the
//! dual variable that they average with their neighbors.
//!
//! ```no_run
//! use zofo_core::{generate_quadratic, run, GeneratorConfig, Graph, NetworkTopology, ParamSchedule, RunOptions};
//!
//! let (instance, _) = generate_quadratic(&GeneratorConfig::default()).unwrap();
//! let graph = Graph::erdos_renyi(instance.n(), 0.4, 0).unwrap();
//! let topology = NetworkTopology::new(graph, instance.dims().to_vec()).unwrap();
//! let schedule = ParamSchedule::constant(0.002, 0.002, 0.01, 2.0, 10_000);
//! let result = run(&instance, &topology, &schedule, 0, 0, &RunOptions::default()).unwrap();
//! println!("f0(x_bar) = {}", result.final_objective());
//! ```

pub mod algorithm;
pub mod config;
pub mod diffusion;
pub mod harness;
pub mod linalg;
pub mod problem;
pub mod topology;
pub mod verify;
pub mod zeroth_order;

pub use algorithm::{
    compute_theorem_params, run, AgentState, AlgorithmError, ConsensusReport, ParamSchedule, RunOptions,
    Simulation, StepRule, TheoremConstants, TheoremInputs, TrialResult,
};
pub use config::{ConfigError, ResolvedRun, RunConfig, RunManifest, ScheduleMode};
pub use diffusion::{DifferenceTable, DiffusionError, PerturbationHistory};
pub use harness::{
    read_csv, run_ensemble, write_summary_csv, write_trial_csv, Band, CsvTable, Ensemble, EnsembleConfig,
    EnsembleSummary, FailedTrial, HarnessError, RunningAverage,
};
pub use problem::{
    generate_quadratic, load_instance, save_instance, solve_reference, FeasibleSet, GeneratorConfig,
    ProblemConstants, ProblemError, ProblemInstance, ReferenceOptions, ReferenceSolution,
};
pub use topology::{Graph, NetworkTopology, TopologyError, TopologySpec};
pub use verify::{run_suite, Suite, SuiteReport, VerifyOptions};
pub use zeroth_order::{EstimatorError, OracleCounter, StreamKey, StreamTag};
