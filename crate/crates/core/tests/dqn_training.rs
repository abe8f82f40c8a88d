use std::sync::Arc;

use nbv_core::planner::{EnvConfig, EpisodeEnvironment, StateLayout};
use nbv_core::rl::{train_dqn, train_dqn_with, Checkpoint, DqnConfig, Environment, QNetwork, TrainControl};
use nbv_core::seed;
use nbv_core::world::{generate_world, Domain, WorldConfig};

fn small_env() -> EpisodeEnvironment {
    let world = generate_world(
        &WorldConfig {
            n_viewpoints: 150,
            ..WorldConfig::default()
        },
        4,
    )
    .unwrap();
    EpisodeEnvironment::simulated(Arc::new(world), Domain::training(), EnvConfig::default(), StateLayout::OlcOnly, None)
        .unwrap()
}

fn small_config(episodes: u64) -> DqnConfig {
    DqnConfig {
        episodes,
        hidden: vec![32, 32],
        batch_size: 16,
        target_sync_steps: 50,
        seed: 8,
        ..DqnConfig::default()
    }
}

#[test]
fn zero_episodes_returns_the_initial_network() {
    let mut env = small_env();
    let cfg = small_config(0);
    let out = train_dqn(&mut env, &cfg).unwrap();
    assert!(out.log.is_empty());
    assert!(out.finished);
    let mut init_rng = seed::stream(cfg.seed, &[seed::tag::TRAIN, 0]);
    let init = QNetwork::new(env.state_dim(), &cfg.hidden, env.n_actions(), cfg.activation, &mut init_rng);
    assert_eq!(out.net, init);
}

#[test]
fn same_seed_gives_identical_logs_and_weights() {
    let cfg = small_config(150);
    let a = train_dqn(&mut small_env(), &cfg).unwrap();
    let b = train_dqn(&mut small_env(), &cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.net, b.net);

    let other = DqnConfig { seed: 9, ..cfg };
    let c = train_dqn(&mut small_env(), &other).unwrap();
    assert_ne!(a.net, c.net);
}

#[test]
fn every_episode_logs_one_terminal_reward() {
    let out = train_dqn(&mut small_env(), &small_config(200)).unwrap();
    assert_eq!(out.log.len(), 200);
    for (i, ep) in out.log.iter().enumerate() {
        assert_eq!(ep.episode, i as u64);
        assert_eq!(ep.step_rewards.len(), 3);
        assert_eq!(ep.step_rewards[..2], [0.0, 0.0]);
        assert!(ep.step_rewards[2].abs() == 1.0);
        assert!((0.0..=1.0).contains(&ep.mrr_window));
    }
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let ck_path = dir.path().join("run.ckpt");
    let cfg = small_config(120);
    let full = train_dqn(&mut small_env(), &cfg).unwrap();

    let partial = train_dqn_with(
        &mut small_env(),
        &cfg,
        TrainControl {
            checkpoint_path: Some(ck_path.clone()),
            checkpoint_every: 25,
            stop_after: Some(70),
            resume: None,
        },
    )
    .unwrap();
    assert!(!partial.finished);
    assert_eq!(partial.log.len(), 70);

    let ck = Checkpoint::load(&ck_path).unwrap();
    assert_eq!(ck.next_episode, 70);
    let resumed = train_dqn_with(
        &mut small_env(),
        &cfg,
        TrainControl {
            resume: Some(ck),
            ..TrainControl::default()
        },
    )
    .unwrap();
    assert!(resumed.finished);
    assert_eq!(resumed.net, full.net);
    assert_eq!(resumed.log, full.log);
}

#[test]
fn resume_rejects_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    let ck_path = dir.path().join("run.ckpt");
    let cfg = small_config(30);
    train_dqn_with(
        &mut small_env(),
        &cfg,
        TrainControl {
            checkpoint_path: Some(ck_path.clone()),
            stop_after: Some(10),
            ..TrainControl::default()
        },
    )
    .unwrap();
    let ck = Checkpoint::load(&ck_path).unwrap();
    let other = DqnConfig { lr: 5e-4, ..cfg };
    let err = train_dqn_with(
        &mut small_env(),
        &other,
        TrainControl {
            resume: Some(ck),
            ..TrainControl::default()
        },
    );
    assert!(err.is_err());
}
