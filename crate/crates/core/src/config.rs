//! Run configuration files and run manifests.
//!
//! A run configuration is TOML:
//!
//! ```toml
//! seed = 0
//! trials = 100
//! T = 200000
//! topology = "erdos:0.4"
//! u = 0.01
//! stride = 1000
//! out_dir = "out"
//!
//! [schedule]
//! mode = "constant"
//! eta = 0.002
//! mu = 0.002
//!
//! [instance.generator]
//! seed = 0
//! ```
//!
//! Omitted keys take their defaults. `u` defaults to the theorem smoothing
//! radius and `C` to `2 ||y*|| + 1` with `y*` from the reference solver.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithm::{compute_theorem_params, AlgorithmError, ParamSchedule, RunOptions, TheoremConstants};
use crate::harness::{EnsembleConfig, FailedTrial};
use crate::problem::{
    generate_quadratic, load_instance, solve_reference, GeneratorConfig, ProblemConstants, ProblemError,
    ProblemInstance, ReferenceOptions, ReferenceSolution,
};
use crate::topology::{NetworkTopology, TopologyError, TopologySpec};

pub const MANIFEST_FORMAT: &str = "zofo-run/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Algorithm(#[from] AlgorithmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Constant,
    Diminishing,
    Theorem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub mode: ScheduleMode,
    pub eta: f64,
    pub mu: f64,
    /// Offset of the diminishing rule.
    pub c: f64,
    pub theta: f64,
    pub gamma: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            mode: ScheduleMode::Constant,
            eta: 0.002,
            mu: 0.002,
            c: 300.0,
            theta: 1.0,
            gamma: 1.0,
        }
    }
}

/// Instance file, or generator parameters when no file is given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceConfig {
    pub file: Option<PathBuf>,
    pub generator: GeneratorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed of the trial perturbation streams.
    pub seed: u64,
    pub trials: u64,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub topology: TopologySpec,
    /// Seed of random graph generators; defaults to the generator seed.
    pub topology_seed: Option<u64>,
    pub instance: InstanceConfig,
    pub schedule: ScheduleConfig,
    pub u: Option<f64>,
    #[serde(rename = "C")]
    pub dual_bound: Option<f64>,
    pub out_dir: PathBuf,
    pub stride: u64,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
    pub reference: ReferenceOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 1,
            horizon: 1000,
            topology: TopologySpec::default(),
            topology_seed: None,
            instance: InstanceConfig::default(),
            schedule: ScheduleConfig::default(),
            u: None,
            dual_bound: None,
            out_dir: PathBuf::from("zofo-out"),
            stride: 1,
            workers: 0,
            reference: ReferenceOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run configuration always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("T must be at least 1".into());
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if let Some(u) = self.u {
            if !(u > 0.0 && u.is_finite()) {
                return bad(format!("u must be positive, got {u}"));
            }
        }
        if let Some(c) = self.dual_bound {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("C must be positive, got {c}"));
            }
        }
        let (lo, hi) = self.instance.generator.eig_range;
        if self.instance.file.is_none() && !(lo > 0.0 && lo <= hi) {
            return bad(format!("eig_range must satisfy 0 < min <= max, got ({lo}, {hi})"));
        }
        Ok(())
    }

    pub fn load_instance(&self) -> Result<ProblemInstance, ConfigError> {
        Ok(match &self.instance.file {
            Some(path) => load_instance(path)?,
            None => generate_quadratic(&self.instance.generator)?.0,
        })
    }

    pub fn build_topology(&self, instance: &ProblemInstance) -> Result<NetworkTopology, ConfigError> {
        let seed = self.topology_seed.unwrap_or(self.instance.generator.seed);
        let graph = self.topology.build(instance.n(), seed)?;
        if graph.len() != instance.n() {
            return Err(ConfigError::Invalid(format!(
                "topology has {} agents, instance has {}",
                graph.len(),
                instance.n()
            )));
        }
        Ok(NetworkTopology::new(graph, instance.dims().to_vec())?)
    }

    /// Loads or generates everything the run needs.
    pub fn resolve(&self) -> Result<ResolvedRun, ConfigError> {
        self.validate()?;
        let instance = self.load_instance()?;
        let topology = self.build_topology(&instance)?;
        let reference = solve_reference(&instance, &self.reference)?;
        let dual_bound = self
            .dual_bound
            .unwrap_or_else(|| default_dual_bound(&reference));
        let theorem = compute_theorem_params(&instance, &topology, self.horizon, dual_bound);
        let theorem = match (self.schedule.mode, theorem) {
            (ScheduleMode::Theorem, Err(e)) => return Err(e.into()),
            (_, t) => t.ok(),
        };
        let u = match (self.u, &theorem) {
            (Some(u), _) => u,
            (None, Some(k)) => k.u,
            (None, None) => {
                return Err(ConfigError::Invalid(
                    "theorem constants are unavailable; set u explicitly".into(),
                ))
            }
        };
        let s = &self.schedule;
        let mut schedule = match s.mode {
            ScheduleMode::Constant => ParamSchedule::constant(s.eta, s.mu, u, dual_bound, self.horizon),
            ScheduleMode::Diminishing => ParamSchedule::diminishing(s.c, u, dual_bound, self.horizon),
            ScheduleMode::Theorem => {
                let mut sched = ParamSchedule::theorem(theorem.clone().expect("checked above"));
                sched.u = u;
                sched
            }
        };
        schedule.theta = s.theta;
        schedule.gamma = s.gamma;
        schedule.validate(instance.m() > 0)?;
        Ok(ResolvedRun {
            config: self.clone(),
            instance,
            topology,
            reference,
            theorem,
            schedule,
        })
    }
}

/// `2 ||y*|| + 1`.
pub fn default_dual_bound(reference: &ReferenceSolution) -> f64 {
    2.0 * reference.multiplier_norm() + 1.0
}

#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub instance: ProblemInstance,
    pub topology: NetworkTopology,
    pub reference: ReferenceSolution,
    pub theorem: Option<TheoremConstants>,
    pub schedule: ParamSchedule,
}

impl ResolvedRun {
    pub fn ensemble_config(&self, trial_dir: Option<PathBuf>) -> EnsembleConfig {
        EnsembleConfig {
            master_seed: self.config.seed,
            trials: self.config.trials,
            workers: self.config.workers,
            options: RunOptions {
                stride: self.config.stride,
                ..RunOptions::default()
            },
            trial_dir,
        }
    }

    pub fn manifest(&self, completed: usize, failed: Vec<FailedTrial>, outputs: Vec<String>) -> RunManifest {
        RunManifest {
            format: MANIFEST_FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: self.config.clone(),
            master_seed: self.config.seed,
            trials: self.config.trials,
            instance: InstanceSummary::new(&self.instance),
            topology: TopologySummary::new(&self.config.topology, &self.topology),
            schedule: self.schedule.clone(),
            theorem: self.theorem.clone(),
            reference: ReferenceSummary::new(&self.reference),
            completed_trials: completed,
            failed,
            outputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub dims: Vec<usize>,
    pub generator_seed: Option<u64>,
    pub constants: ProblemConstants,
    pub slater_margin: Option<f64>,
}

impl InstanceSummary {
    pub fn new(instance: &ProblemInstance) -> Self {
        let quad = instance.quadratic();
        Self {
            n: instance.n(),
            m: instance.m(),
            d: instance.total_dim(),
            dims: instance.dims().to_vec(),
            generator_seed: quad.and_then(|q| q.seed),
            constants: instance.constants().clone(),
            slater_margin: quad.and_then(|q| q.slater_margin()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySummary {
    pub spec: String,
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub diameter: usize,
    pub rho: f64,
    pub b_bar: f64,
    pub b_frak: f64,
}

impl TopologySummary {
    pub fn new(spec: &TopologySpec, topology: &NetworkTopology) -> Self {
        Self {
            spec: spec.to_string(),
            n: topology.n(),
            edges: topology.graph().edges().collect(),
            diameter: topology.diameter(),
            rho: topology.rho(),
            b_bar: topology.b_bar(),
            b_frak: topology.b_frak(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub objective: f64,
    pub multipliers: Vec<f64>,
    pub multiplier_norm: f64,
    pub kkt_residual: f64,
}

impl ReferenceSummary {
    pub fn new(r: &ReferenceSolution) -> Self {
        Self {
            objective: r.objective,
            multipliers: r.multipliers.clone(),
            multiplier_norm: r.multiplier_norm(),
            kkt_residual: r.kkt_residual,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: String,
    pub config: RunConfig,
    pub master_seed: u64,
    pub trials: u64,
    pub instance: InstanceSummary,
    pub topology: TopologySummary,
    pub schedule: ParamSchedule,
    pub theorem: Option<TheoremConstants>,
    pub reference: ReferenceSummary,
    pub completed_trials: usize,
    pub failed: Vec<FailedTrial>,
    pub outputs: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithm::StepRule;

    fn small_toml(extra: &str) -> String {
        format!(
            "T = 50\ntopology = \"ring\"\n{extra}\n[instance.generator]\nseed = 3\nn = 3\nd = 6\nm = 1\n"
        )
    }

    #[test]
    fn defaults_describe_the_reference_experiment() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c.instance.generator.n, 15);
        assert_eq!(c.instance.generator.d, 40);
        assert_eq!(c.instance.generator.m, 2);
        assert_eq!(c.schedule.mode, ScheduleMode::Constant);
        assert_eq!(c.schedule.eta, 0.002);
        assert_eq!(c.topology, TopologySpec::ErdosRenyi { p: 0.4 });
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::from_toml_str(&small_toml("u = 0.01\nC = 3.0\n[schedule]\nmode = \"diminishing\"\nc = 300.0"))
            .unwrap();
        assert_eq!(c.schedule.mode, ScheduleMode::Diminishing);
        assert_eq!(c.u, Some(0.01));
        assert_eq!(c.dual_bound, Some(3.0));
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml_str("trials = 0").is_err());
        assert!(RunConfig::from_toml_str("u = -1.0").is_err());
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        assert!(RunConfig::from_toml_str("[instance.generator]\neig_range = [0.0, 1.0]").is_err());
        assert!(RunConfig::from_toml_str("topology = \"mesh\"").is_err());
    }

    #[test]
    fn resolve_fills_in_defaults() {
        let c = RunConfig::from_toml_str(&small_toml("")).unwrap();
        let run = c.resolve().unwrap();
        let expected_c = 2.0 * run.reference.multiplier_norm() + 1.0;
        assert_eq!(run.schedule.dual_bound, expected_c);
        assert_eq!(run.schedule.u, run.theorem.as_ref().unwrap().u);
        assert!(matches!(run.schedule.rule, StepRule::Constant { eta, mu } if eta == 0.002 && mu == 0.002));
        let manifest = run.manifest(1, Vec::new(), vec!["summary.csv".into()]);
        assert_eq!(manifest.topology.n, 3);
        assert!(manifest.instance.slater_margin.unwrap() > 0.0);
        let json = serde_json::to_string(&manifest).unwrap();
        let back: RunManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, manifest);
    }

    #[test]
    fn theorem_mode_uses_theorem_steps() {
        let c = RunConfig::from_toml_str(&small_toml("[schedule]\nmode = \"theorem\"")).unwrap();
        let run = c.resolve().unwrap();
        let k = run.theorem.clone().unwrap();
        assert_eq!(run.schedule.eta(0), k.eta_step);
        assert_eq!(run.schedule.mu(7), k.mu);
    }

    #[test]
    fn mismatched_topology_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        fs::write(&path, "2\n0 1\n").unwrap();
        let c = RunConfig::from_toml_str(&small_toml("topology_seed = 1")).unwrap();
        let c = RunConfig {
            topology: TopologySpec::File(path.display().to_string()),
            ..c
        };
        assert!(matches!(c.resolve(), Err(ConfigError::Invalid(_))));
    }
}
