use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use nbv_core::eval::{bootstrap_ci, run_experiment, Artifacts, ExperimentConfig};
use nbv_core::planner::PlannerVariant;
use nbv_core::rl::QNetwork;
use nbv_core::seed;
use nbv_core::world::{generate_world, WorldConfig};
use nbv_core::Error;

fn artifacts() -> Artifacts {
    let world = generate_world(&WorldConfig::default(), 7).unwrap();
    let mut rng = seed::stream(1, &[]);
    let net = QNetwork::new(16, &[16], 30, Default::default(), &mut rng);
    Artifacts {
        world: Arc::new(world),
        classifier: None,
        nets: BTreeMap::from([(PlannerVariant::OlcOnly, Arc::new(net))]),
    }
}

#[test]
fn one_planner_one_domain_table() {
    let art = artifacts();
    let domain = art.world.domains().iter().find(|d| d.shift_strength == 0.4).unwrap().id.clone();
    let cfg = ExperimentConfig {
        planners: vec![PlannerVariant::Random],
        domains: vec![domain.clone()],
        episodes: 10,
        ..ExperimentConfig::default()
    };
    let table = run_experiment(&cfg, &art).unwrap();
    assert_eq!(table.cells.len(), 1);
    assert_eq!(table.raw.len(), 10);
    let cell = table.cell(PlannerVariant::Random, &domain).unwrap();
    let mean = table.raw.iter().map(|r| 1.0 / r.rank as f64).sum::<f64>() / 10.0;
    assert!((cell.mrr - mean).abs() < 1e-12);
    assert!(cell.ci_lo <= cell.mrr && cell.mrr <= cell.ci_hi);
}

#[test]
fn reruns_and_thread_counts_agree() {
    let cfg = ExperimentConfig {
        planners: vec![PlannerVariant::SingleView, PlannerVariant::Random, PlannerVariant::OlcOnly],
        episodes: 40,
        seed: 5,
        ..ExperimentConfig::default()
    };
    let art = artifacts();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_experiment(&cfg, &art).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(1));
    assert_eq!(one, run(3));

    let dir = tempfile::tempdir().unwrap();
    let a = one.write_all(dir.path().join("a")).unwrap();
    let b = run(3).write_all(dir.path().join("b")).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}

#[test]
fn planners_share_episode_starts() {
    let cfg = ExperimentConfig {
        planners: vec![PlannerVariant::SingleView, PlannerVariant::Random],
        episodes: 30,
        ..ExperimentConfig::default()
    };
    let table = run_experiment(&cfg, &artifacts()).unwrap();
    let half = table.raw.len() / 2;
    for (a, b) in table.raw[..half].iter().zip(&table.raw[half..]) {
        assert_eq!((a.domain.as_str(), a.episode, a.start), (b.domain.as_str(), b.episode, b.start));
    }
}

#[test]
fn missing_weights_are_reported_before_running() {
    let cfg = ExperimentConfig {
        planners: vec![PlannerVariant::Random, PlannerVariant::OlcOnly],
        episodes: 5,
        ..ExperimentConfig::default()
    };
    assert!(matches!(cfg.load_artifacts(), Err(Error::MissingArtifact { .. })));
    let mut art = artifacts();
    art.nets.clear();
    assert!(matches!(run_experiment(&cfg, &art), Err(Error::MissingArtifact { .. })));
}

#[test]
fn bootstrap_width_shrinks_with_sample_size() {
    let mut rng = seed::stream(2, &[]);
    let sample = |n: usize, rng: &mut seed::Rng| -> Vec<f64> { (0..n).map(|_| 1.0 / rng.random_range(1..=5) as f64).collect() };
    let small = sample(100, &mut rng);
    let large = sample(10_000, &mut rng);
    let (a, b) = bootstrap_ci(&small, 2000, 1).unwrap();
    let (c, d) = bootstrap_ci(&large, 2000, 1).unwrap();
    let ratio = (b - a) / (d - c);
    assert!((7.0..=13.0).contains(&ratio), "width ratio {ratio}");
}
