mod common;

use common::*;
use proptest::prelude::*;
use zofo_core::{
    generate_quadratic, load_instance, read_csv, run, run_ensemble, save_instance, solve_reference,
    write_summary_csv, EnsembleConfig, GeneratorConfig, Graph, NetworkTopology, ParamSchedule, ReferenceOptions,
    RunOptions, TheoremConstants, TheoremInputs,
};

fn small_instance(n: usize, m: usize, seed: u64) -> zofo_core::ProblemInstance {
    generate_quadratic(&GeneratorConfig {
        seed,
        n,
        d: 2 * n,
        m,
        ..GeneratorConfig::default()
    })
    .unwrap()
    .0
}

#[test]
fn theorem_constants_match_hand_evaluation_with_unit_constants() {
    let inputs = TheoremInputs {
        m0: 1.0,
        l0: 1.0,
        m_g: 1.0,
        l_g: 1.0,
        l_max: 1.0,
        z: 1.0,
        r_bar: 1.0,
        d: 2,
        n: 2,
        b_bar: 1.0,
        b_frak: 1.0,
        rho: 0.5,
        dual_bound: 1.0,
        horizon: 100,
        constrained: true,
    };
    let k = TheoremConstants::from_inputs(inputs).unwrap();
    let xi = (2f64.sqrt() + 2.0 + 4.0 * 3f64.sqrt()) * 51f64.sqrt() + 456.0;
    assert!((k.xi - xi).abs() < 1e-9 * xi, "{} vs {xi}", k.xi);
    assert!((k.zeta - 1808.0).abs() < 1e-9, "{}", k.zeta);
    assert!((k.eta - 1.0 / (100.0 * xi).sqrt()).abs() < 1e-15);
    assert!((k.mu - 2.0 / (100.0 * 1808.0f64).sqrt()).abs() < 1e-15);
    // min(M_g / ((d + 6) L_g), 1 / sqrt(d sqrt(T) max(L0, L_g))) = min(1/8, 1/sqrt(20)).
    assert_eq!(k.u, 0.125);
}

#[test]
fn theorem_constants_match_hand_evaluation_on_generated_instance() {
    let instance = small_instance(5, 1, 3);
    let topology = NetworkTopology::new(Graph::ring(5).unwrap(), instance.dims().to_vec()).unwrap();
    let k = zofo_core::compute_theorem_params(&instance, &topology, 4000, 1.7).unwrap();
    let c = instance.constants();
    let hand = hand_theorem(
        c.m0,
        c.l0,
        c.m_g,
        c.l_g,
        c.z,
        c.r_bar,
        10.0,
        5.0,
        topology.b_bar(),
        topology.b_frak(),
        topology.rho(),
        1.7,
        4000.0,
    );
    for (got, want) in [(k.xi, hand.xi), (k.zeta, hand.zeta), (k.eta, hand.eta), (k.mu, hand.mu), (k.u, hand.u)] {
        assert!((got - want).abs() <= 1e-12 * want.abs(), "{got} vs {want}");
    }
}

#[test]
fn network_metrics_match_independent_computation() {
    for (name, graph) in graph_suite(11) {
        let n = graph.len();
        let dims: Vec<usize> = (0..n).map(|i| 1 + i % 3).collect();
        let d: usize = dims.iter().sum();
        let fw = floyd_warshall(&graph);
        let topology = NetworkTopology::new(graph, dims.clone()).unwrap();
        let mut plain = 0.0;
        let mut weighted = 0.0;
        for i in 0..n {
            for j in 0..n {
                assert_eq!(topology.distance(i, j), fw[i][j], "{name} ({i}, {j})");
                plain += (fw[i][j] * fw[i][j]) as f64;
                weighted += (fw[i][j] * fw[i][j] * dims[i]) as f64;
            }
        }
        let diameter = fw.iter().flatten().copied().max().unwrap();
        assert_eq!(topology.diameter(), diameter, "{name}");
        assert!((topology.b_bar() - (plain / (n * n) as f64).sqrt()).abs() < 1e-12, "{name}");
        assert!((topology.b_frak() - (weighted / (n * d) as f64).sqrt()).abs() < 1e-12, "{name}");
        assert!((topology.rho() - spectral_rho(topology.weights())).abs() < 1e-9, "{name}");
        assert!(doubly_stochastic_defect(topology.graph(), topology.weights()) < 1e-12, "{name}");
    }
}

#[test]
fn saved_instance_reproduces_the_run() {
    let instance = small_instance(4, 2, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inst.json");
    save_instance(&instance, &path).unwrap();
    let reloaded = load_instance(&path).unwrap();
    let topology = NetworkTopology::new(Graph::path(4).unwrap(), instance.dims().to_vec()).unwrap();
    let schedule = ParamSchedule::constant(0.01, 0.01, 0.05, 3.0, 60);
    let a = run(&instance, &topology, &schedule, 5, 2, &RunOptions::default()).unwrap();
    let b = run(&reloaded, &topology, &schedule, 5, 2, &RunOptions::default()).unwrap();
    assert_eq!(a.objective, b.objective);
    assert_eq!(a.final_x, b.final_x);
    assert_eq!(a.final_duals, b.final_duals);
}

#[test]
fn oracle_queries_follow_the_per_round_law() {
    let (n, m, t) = (4, 3, 9u64);
    let instance = small_instance(n, m, 1);
    let topology = NetworkTopology::new(Graph::ring(n).unwrap(), instance.dims().to_vec()).unwrap();
    let schedule = ParamSchedule::constant(0.01, 0.01, 0.05, 3.0, t);
    let r = run(&instance, &topology, &schedule, 0, 0, &RunOptions::default()).unwrap();
    for i in 0..n {
        assert_eq!(r.oracle_counts.objective[i], 2 * t);
        assert_eq!(r.oracle_counts.constraint[i], 4 * m as u64 * t);
        assert_eq!(r.oracle_counts.feedback[i], t);
    }
    let per_round = (n * (2 + 4 * m)) as u64;
    for (k, &round) in r.rounds.iter().enumerate() {
        assert_eq!(r.oracle_cumulative[k], per_round * round);
    }
}

#[test]
fn running_average_matches_recorded_iterates() {
    let instance = small_instance(3, 1, 2);
    let topology = NetworkTopology::new(Graph::complete(3).unwrap(), instance.dims().to_vec()).unwrap();
    let schedule = ParamSchedule::constant(0.02, 0.02, 0.05, 3.0, 40);
    let options = RunOptions {
        record_iterates: true,
        ..RunOptions::default()
    };
    let r = run(&instance, &topology, &schedule, 0, 0, &options).unwrap();
    let iterates = r.iterates.as_ref().unwrap();
    assert_eq!(iterates.len(), 40);
    let d = instance.total_dim();
    let avg: Vec<f64> = (0..d).map(|k| iterates.iter().map(|x| x[k]).sum::<f64>() / 40.0).collect();
    assert!(l2_dist(&avg, &r.average) < 1e-12);
    assert!((instance.global_objective(&avg).unwrap() - r.final_objective()).abs() < 1e-10);
}

#[test]
fn ensemble_summary_agrees_with_trials_and_survives_csv() {
    let instance = small_instance(4, 2, 4);
    let topology = NetworkTopology::new(Graph::star(4).unwrap(), instance.dims().to_vec()).unwrap();
    let schedule = ParamSchedule::constant(0.01, 0.01, 0.05, 3.0, 100);
    let config = EnsembleConfig {
        master_seed: 9,
        trials: 5,
        workers: 2,
        options: RunOptions {
            stride: 10,
            ..RunOptions::default()
        },
        trial_dir: None,
    };
    let ens = run_ensemble(&instance, &topology, &schedule, &config).unwrap();
    let last = ens.summary.rounds.len() - 1;
    let finals: Vec<f64> = ens.results.iter().map(|r| r.final_objective()).collect();
    assert!((ens.summary.objective.mean[last] - mean(&finals)).abs() < 1e-12);
    assert!((ens.summary.objective.median[last] - median(&mut finals.clone())).abs() < 1e-12);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summary.csv");
    write_summary_csv(&ens.summary, &path).unwrap();
    let table = read_csv(&path).unwrap();
    let f0 = table.column("f0_mean").unwrap();
    assert_eq!(f0.len(), ens.summary.rounds.len());
    for (a, b) in f0.iter().zip(&ens.summary.objective.mean) {
        assert_eq!(a, b);
    }
}

#[test]
fn unconstrained_problem_runs_without_dual_activity() {
    let instance = small_instance(3, 0, 6);
    let topology = NetworkTopology::new(Graph::path(3).unwrap(), instance.dims().to_vec()).unwrap();
    let k = zofo_core::compute_theorem_params(&instance, &topology, 1000, 1.0).unwrap();
    assert_eq!(k.mu, 0.0);
    let schedule = ParamSchedule::constant(0.05, 0.05, 0.02, 1.0, 3000);
    let r = run(&instance, &topology, &schedule, 0, 0, &RunOptions::default()).unwrap();
    assert!(r.final_duals.iter().all(|y| *y == 0.0));
    assert_eq!(r.oracle_counts.constraint.iter().sum::<u64>(), 0);
    let reference = solve_reference(&instance, &ReferenceOptions::default()).unwrap();
    assert!(r.final_objective() - reference.objective < 0.1 * reference.objective.abs().max(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn iterates_stay_feasible_and_duals_bounded(seed in 0u64..1000, n in 2usize..6, m in 1usize..3) {
        let instance = small_instance(n, m, seed);
        let graph = Graph::erdos_renyi(n, 0.5, seed).unwrap();
        let topology = NetworkTopology::new(graph, instance.dims().to_vec()).unwrap();
        let bound = 1.5;
        let schedule = ParamSchedule::constant(0.05, 0.05, 0.05, bound, 30);
        let r = run(&instance, &topology, &schedule, seed, 0, &RunOptions::default()).unwrap();
        prop_assert!(instance.contains(&r.final_x, 1e-9));
        prop_assert!(instance.contains(&r.average, 1e-9));
        for y in r.final_duals.chunks(m) {
            prop_assert!(y.iter().all(|v| *v >= 0.0));
            prop_assert!(l2(y) <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn same_seed_same_trajectory(seed in 0u64..1000, trial in 0u64..50) {
        let instance = small_instance(3, 1, 0);
        let topology = NetworkTopology::new(Graph::ring(3).unwrap(), instance.dims().to_vec()).unwrap();
        let schedule = ParamSchedule::constant(0.02, 0.02, 0.05, 2.0, 20);
        let a = run(&instance, &topology, &schedule, seed, trial, &RunOptions::default()).unwrap();
        let b = run(&instance, &topology, &schedule, seed, trial, &RunOptions::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}
