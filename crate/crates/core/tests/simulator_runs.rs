use byzmed::rng::{stream, Purpose};
use byzmed::simulator::{
    load_mnist_subset, run_experiment, run_round, synthetic_logistic, write_mnist_pair, ExperimentConfig, IdxImages,
    LrSchedule, ProblemConfig, TrainingProblem, TrainingState,
};
use byzmed::{AggregatorKind, AggregatorSpec, AttackSpec};

fn logistic_config(kind: AggregatorKind, attack: AttackSpec, n: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        n_workers: n,
        rounds: 60,
        batch_size: 16,
        seed,
        num_servers: 1,
        eval_every: 20,
        record_timing: false,
        lr: LrSchedule::Constant { gamma: 0.1 },
        aggregator: AggregatorSpec::new(kind).with_q(2),
        attack,
        problem: ProblemConfig::SyntheticLogistic {
            features: 6,
            samples: 300,
            test_samples: 100,
            weight_norm: 4.0,
            l2: 0.01,
            data_seed: 3,
        },
    }
}

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn same_config_same_bits() {
    for kind in AggregatorKind::ALL {
        let config = logistic_config(kind, AttackSpec::gaussian(2, 50.0), 10, 17);
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(bits(&a.params), bits(&b.params), "{kind}");
        assert_eq!(a.records, b.records);
    }
}

#[test]
fn single_worker_rules_coincide() {
    let kinds = [
        AggregatorKind::Mean,
        AggregatorKind::Medoid,
        AggregatorKind::GeoMed,
        AggregatorKind::MarMed,
        AggregatorKind::MeaMed,
    ];
    for seed in [1, 2, 3] {
        let mut reference = None;
        for kind in kinds {
            let mut config = logistic_config(kind, AttackSpec::none(), 1, seed);
            config.aggregator.q = 0;
            let params = run_experiment(&config).unwrap().params;
            match &reference {
                None => reference = Some(params),
                Some(r) => assert_eq!(bits(r), bits(&params), "{kind}"),
            }
        }
    }
}

fn unbiased(problem: &TrainingProblem, x: &[f64], batch: usize) {
    let draws = 10_000;
    let d = problem.dim();
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for t in 0..draws {
        let mut rng = stream(1, t, Purpose::Worker(0));
        let g = problem.worker_gradient(x, batch, &mut rng);
        for k in 0..d {
            sum[k] += g[k];
            sum_sq[k] += g[k] * g[k];
        }
    }
    let full = problem.full_gradient(x);
    let k = draws as f64;
    for j in 0..d {
        let mean = sum[j] / k;
        let se = ((sum_sq[j] / k - mean * mean) / k).sqrt();
        assert!((mean - full[j]).abs() <= 3.0 * se + 1e-12, "component {j}: {mean} vs {} (se {se})", full[j]);
    }
}

#[test]
fn stochastic_gradients_are_unbiased() {
    let quad = TrainingProblem::Quadratic {
        optimum: vec![1.0, -1.0, 0.5],
        noise: 0.7,
    };
    unbiased(&quad, &[0.0, 0.0, 0.0], 1);
    let logistic = synthetic_logistic(4, 200, 10, 3.0, 0.0, 8).unwrap();
    unbiased(&logistic, &[0.3, -0.2, 0.1, 0.0], 8);
}

#[test]
fn quadratic_steady_state() {
    let d = 10;
    let sigma = 0.1;
    let config = ExperimentConfig {
        n_workers: 20,
        rounds: 500,
        batch_size: 1,
        seed: 4,
        num_servers: 1,
        eval_every: 10,
        record_timing: false,
        lr: LrSchedule::Constant { gamma: 0.1 },
        aggregator: AggregatorSpec::new(AggregatorKind::Mean),
        attack: AttackSpec::none(),
        problem: ProblemConfig::Quadratic {
            optimum: (0..d).map(|i| i as f64 - 4.5).collect(),
            noise: sigma,
        },
    };
    let traj = run_experiment(&config).unwrap();
    let last = traj.records.last().unwrap();
    assert_eq!(last.round, 500);
    assert!(last.eval_metric < 0.2 * (d as f64).sqrt() * sigma, "{last:?}");
    assert!(traj.records.windows(2).all(|w| w[0].round < w[1].round));
}

#[test]
fn round_by_round_matches_full_run() {
    let config = logistic_config(AggregatorKind::MeaMed, AttackSpec::bitflip(6), 8, 2);
    let problem = config.problem.build().unwrap();
    let mut state = TrainingState::zeros(problem.dim());
    for _ in 0..config.rounds {
        run_round(&mut state, &config, &problem).unwrap();
    }
    assert_eq!(bits(&state.x), bits(&run_experiment(&config).unwrap().params));
    assert!(run_round(&mut state, &config, &problem).is_err());
}

#[test]
fn mnist_fixture_loads() {
    let dir = tempfile::tempdir().unwrap();
    let images = IdxImages {
        count: 100,
        rows: 28,
        cols: 28,
        pixels: (0..100 * 784).map(|k| (k * 7 % 256) as u8).collect(),
    };
    let labels: Vec<u8> = (0..100).map(|i| (i % 10) as u8).collect();
    write_mnist_pair(dir.path(), &images, &labels).unwrap();
    let problem = load_mnist_subset(dir.path(), 1000, 0.0).unwrap();
    assert_eq!(problem.train_len(), Some(100));
    assert_eq!(problem.dim(), 784 * 10 + 10);

    let capped = load_mnist_subset(dir.path(), 3, 0.0).unwrap();
    assert_eq!(capped.train_len(), Some(30));

    let config = ExperimentConfig {
        n_workers: 4,
        rounds: 5,
        batch_size: 8,
        seed: 1,
        num_servers: 1,
        eval_every: 5,
        record_timing: false,
        lr: LrSchedule::Constant { gamma: 0.1 },
        aggregator: AggregatorSpec::new(AggregatorKind::MarMed),
        attack: AttackSpec::none(),
        problem: ProblemConfig::Mnist {
            path: dir.path().to_path_buf(),
            max_per_class: 10,
            l2: 0.0,
        },
    };
    let traj = run_experiment(&config).unwrap();
    assert_eq!(traj.records.len(), 1);
    assert!((0.0..=1.0).contains(&traj.records[0].eval_metric));
}

#[test]
fn mnist_format_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let images = IdxImages {
        count: 100,
        rows: 28,
        cols: 28,
        pixels: vec![0; 100 * 784],
    };
    write_mnist_pair(dir.path(), &images, &[0; 99]).unwrap();
    let err = load_mnist_subset(dir.path(), 10, 0.0).unwrap_err().to_string();
    assert!(err.contains("count mismatch"), "{err}");

    std::fs::write(dir.path().join("train-images-idx3-ubyte"), [0u8; 16]).unwrap();
    let err = load_mnist_subset(dir.path(), 10, 0.0).unwrap_err().to_string();
    assert!(err.contains("bad magic"), "{err}");
}
