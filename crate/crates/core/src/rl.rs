//! Deep Q-learning with experience replay and a periodically synced target
//! network.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Grads, Mlp, Optimizer, WeightsFile};
use crate::pdv::argmax;
use crate::seed::{self, tag, Rng};

/// Q-value approximator: state vector in, one value per action out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork(pub Mlp);

impl QNetwork {
    pub fn new(state_dim: usize, hidden: &[usize], n_actions: usize, activation: Activation, rng: &mut Rng) -> Self {
        QNetwork(Mlp::init(&layer_sizes(state_dim, hidden, n_actions), activation, rng))
    }

    pub fn zeros(state_dim: usize, hidden: &[usize], n_actions: usize) -> Self {
        QNetwork(Mlp::zeros(&layer_sizes(state_dim, hidden, n_actions), Activation::Softplus))
    }

    pub fn state_dim(&self) -> usize {
        self.0.input_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.0.output_dim()
    }

    pub fn save(&self, path: impl AsRef<Path>, seed: u64, config: serde_json::Value) -> Result<()> {
        let mut f = self.0.to_weights_file(seed, config);
        f.kind = "q_network".into();
        f.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = WeightsFile::load(path)?;
        if f.kind != "q_network" {
            return Err(Error::Validation(format!(
                "expected a q_network weights file, found kind `{}`",
                f.kind
            )));
        }
        Ok(QNetwork(Mlp::from_weights_file(&f)?))
    }
}

fn layer_sizes(state_dim: usize, hidden: &[usize], n_actions: usize) -> Vec<usize> {
    let mut sizes = vec![state_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(n_actions);
    sizes
}

pub fn q_forward(net: &QNetwork, state: &[f64]) -> Result<Vec<f64>> {
    net.0.forward(state)
}

/// One replayed step. Rewards are delayed: only the terminal step carries a
/// nonzero reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    /// `None` on terminal steps.
    pub next_state: Option<Vec<f64>>,
}

impl Transition {
    pub fn new(state: Vec<f64>, action: usize, reward: f64, next_state: Option<Vec<f64>>) -> Result<Self> {
        if ![-1.0, 0.0, 1.0].contains(&reward) {
            return Err(Error::Domain(format!("reward must be -1, 0 or +1, got {reward}")));
        }
        if (reward != 0.0) != next_state.is_none() {
            return Err(Error::Domain(
                "a transition is terminal exactly when its reward is nonzero".into(),
            ));
        }
        Ok(Transition {
            state,
            action,
            reward,
            next_state,
        })
    }

    pub fn terminal(&self) -> bool {
        self.next_state.is_none()
    }
}

/// Fixed-capacity FIFO of transitions with uniform sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` draws, uniform with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<&Transition> {
        if self.items.is_empty() {
            return vec![];
        }
        (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

pub fn td_target(tr: &Transition, target_net: &QNetwork, gamma: f64) -> Result<f64> {
    match &tr.next_state {
        None => Ok(tr.reward),
        Some(next) => {
            let q = q_forward(target_net, next)?;
            Ok(tr.reward + gamma * q.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        }
    }
}

fn stack(rows: &[&[f64]], dim: usize) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::Dimension {
                context: "transition state",
                expected: dim,
                got: r.len(),
            });
        }
        x.row_mut(i).iter_mut().zip(r.iter()).for_each(|(d, s)| *d = *s);
    }
    Ok(x)
}

/// Batched TD targets.
fn batch_targets(batch: &[&Transition], target_net: &QNetwork, gamma: f64) -> Result<Vec<f64>> {
    let live: Vec<&[f64]> = batch
        .iter()
        .filter_map(|t| t.next_state.as_deref())
        .collect();
    let mut next_max = Vec::new();
    if !live.is_empty() {
        let q = target_net.0.forward_batch(stack(&live, target_net.state_dim())?.view())?;
        next_max = q
            .rows()
            .into_iter()
            .map(|r| r.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
            .collect();
    }
    let mut it = next_max.into_iter();
    Ok(batch
        .iter()
        .map(|t| match t.next_state {
            None => t.reward,
            Some(_) => t.reward + gamma * it.next().unwrap(),
        })
        .collect())
}

/// Mean squared TD error over the taken actions and its gradient with respect
/// to the online network.
pub fn td_loss_and_grad(
    net: &QNetwork,
    target_net: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::Domain("empty training batch".into()));
    }
    let targets = batch_targets(batch, target_net, gamma)?;
    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
    let cache = net.0.forward_cached(stack(&states, net.state_dim())?.view())?;
    let b = batch.len() as f64;
    let mut grad_out = Array2::zeros(cache.output.dim());
    let mut loss = 0.0;
    for (i, (t, y)) in batch.iter().zip(&targets).enumerate() {
        if t.action >= net.n_actions() {
            return Err(Error::Index {
                index: t.action,
                len: net.n_actions(),
            });
        }
        let err = cache.output[[i, t.action]] - y;
        loss += err * err;
        grad_out[[i, t.action]] = 2.0 * err / b;
    }
    Ok((loss / b, net.0.backward(&cache, &grad_out)))
}

/// One optimizer step on the batch; returns the loss before the step.
pub fn train_step(
    net: &mut QNetwork,
    target_net: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
    opt: &mut Optimizer,
) -> Result<f64> {
    let (loss, grads) = td_loss_and_grad(net, target_net, batch, gamma)?;
    if !loss.is_finite() {
        return Err(Error::Divergence { update: 0, loss });
    }
    opt.step(&mut net.0, &grads);
    Ok(loss)
}

/// Uniform random action with probability `eps`, otherwise the lowest-index
/// maximizer of `q`.
pub fn epsilon_greedy(q: &[f64], eps: f64, rng: &mut Rng) -> usize {
    if eps > 0.0 && rng.random::<f64>() < eps {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    /// Reciprocal rank of the true answer, reported on terminal steps.
    pub reciprocal_rank: Option<f64>,
}

/// Episodic environment driven by [`train_dqn`].
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Starts a new episode; all randomness of the episode derives from
    /// `episode_seed`.
    fn reset(&mut self, episode_seed: u64) -> Result<Vec<f64>>;
    fn step(&mut self, action: usize) -> Result<EnvStep>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub gamma: f64,
    pub lr: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of all episodes over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub batch_size: usize,
    /// Environment steps between target network syncs.
    pub target_sync_steps: u64,
    pub replay_capacity: usize,
    /// Transitions collected before the first update.
    pub warmup: usize,
    pub episodes: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    /// Window of the moving reciprocal-rank average in the log.
    pub mrr_window: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.95,
            lr: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.3,
            batch_size: 64,
            target_sync_steps: 1000,
            replay_capacity: 50_000,
            warmup: 64,
            episodes: 50_000,
            hidden: vec![128, 128],
            activation: Activation::Softplus,
            seed: 0,
            mrr_window: 100,
        }
    }
}

impl DqnConfig {
    /// Full-length schedule of 300k episodes.
    pub fn long_schedule() -> Self {
        DqnConfig {
            episodes: 300_000,
            ..DqnConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config(format!("epsilon must lie in [0, 1], got {e}")));
            }
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return Err(Error::Config("batch size and replay capacity must be positive".into()));
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: u64) -> f64 {
        let span = self.epsilon_decay_fraction * self.episodes as f64;
        let frac = if span <= 0.0 {
            1.0
        } else {
            (episode as f64 / span).min(1.0)
        };
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: u64,
    pub epsilon: f64,
    /// Sum of rewards, i.e. the delayed terminal reward.
    pub reward: f64,
    /// Mean pre-update loss over the episode's updates.
    pub loss: Option<f64>,
    pub mrr_window: f64,
    pub step_rewards: Vec<f64>,
}

pub fn write_log_csv(log: &[EpisodeLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "episode,epsilon,reward,loss,mrr_window").map_err(io)?;
    for r in log {
        let loss = r.loss.map(|l| l.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", r.episode, r.epsilon, r.reward, loss, r.mrr_window).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Full learner state, enough to resume training bit-identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: DqnConfig,
    pub next_episode: u64,
    pub env_steps: u64,
    pub updates: u64,
    pub online: QNetwork,
    pub target: QNetwork,
    pub optimizer: Optimizer,
    pub buffer: ReplayBuffer,
    pub rng: Rng,
    pub recent_rr: VecDeque<f64>,
    pub log: Vec<EpisodeLog>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        ciborium::into_writer(self, BufWriter::new(file))
            .map_err(|e| Error::parse(tmp.display().to_string(), e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact {
                name: "training checkpoint".into(),
                path: path.to_path_buf(),
            });
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        ciborium::from_reader(BufReader::new(file))
            .map_err(|e| Error::parse(path.display().to_string(), e))
    }
}

/// Checkpointing and interruption controls for [`train_dqn_with`].
#[derive(Debug, Clone, Default)]
pub struct TrainControl {
    pub checkpoint_path: Option<PathBuf>,
    pub checkpoint_every: u64,
    /// Stop (after checkpointing) once this many episodes are done.
    pub stop_after: Option<u64>,
    pub resume: Option<Checkpoint>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: QNetwork,
    pub log: Vec<EpisodeLog>,
    /// False when training stopped early via [`TrainControl::stop_after`].
    pub finished: bool,
}

pub fn train_dqn<E: Environment>(env: &mut E, cfg: &DqnConfig) -> Result<TrainOutcome> {
    train_dqn_with(env, cfg, TrainControl::default())
}

pub fn train_dqn_with<E: Environment>(
    env: &mut E,
    cfg: &DqnConfig,
    control: TrainControl,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut ck = match control.resume {
        Some(ck) => {
            if ck.config != *cfg {
                return Err(Error::Config("checkpoint was written with a different configuration".into()));
            }
            ck
        }
        None => {
            let mut init_rng = seed::stream(cfg.seed, &[tag::TRAIN, 0]);
            let online = QNetwork::new(env.state_dim(), &cfg.hidden, env.n_actions(), cfg.activation, &mut init_rng);
            Checkpoint {
                config: cfg.clone(),
                next_episode: 0,
                env_steps: 0,
                updates: 0,
                target: online.clone(),
                online,
                optimizer: Optimizer::adam(cfg.lr),
                buffer: ReplayBuffer::new(cfg.replay_capacity),
                rng: seed::stream(cfg.seed, &[tag::TRAIN, 1]),
                recent_rr: VecDeque::new(),
                log: Vec::new(),
            }
        }
    };
    if ck.online.state_dim() != env.state_dim() || ck.online.n_actions() != env.n_actions() {
        return Err(Error::Dimension {
            context: "q-network vs environment",
            expected: env.state_dim(),
            got: ck.online.state_dim(),
        });
    }

    while ck.next_episode < cfg.episodes {
        if control.stop_after.is_some_and(|s| ck.next_episode >= s) {
            if let Some(p) = &control.checkpoint_path {
                ck.save(p)?;
            }
            return Ok(TrainOutcome {
                net: ck.online,
                log: ck.log,
                finished: false,
            });
        }
        let ep = ck.next_episode;
        let eps = cfg.epsilon(ep);
        let mut state = env.reset(seed::derive(cfg.seed, &[tag::EPISODE, ep]))?;
        let mut step_rewards = vec![];
        let mut losses = vec![];
        let rr = loop {
            let q = q_forward(&ck.online, &state)?;
            let action = epsilon_greedy(&q, eps, &mut ck.rng);
            let out = env.step(action)?;
            step_rewards.push(out.reward);
            let next = if out.terminal { None } else { Some(out.state.clone()) };
            ck.buffer.push(Transition::new(state, action, out.reward, next)?);
            ck.env_steps += 1;

            if ck.buffer.len() >= cfg.warmup.max(1) {
                let batch = ck.buffer.sample(cfg.batch_size, &mut ck.rng);
                let loss = train_step(&mut ck.online, &ck.target, &batch, cfg.gamma, &mut ck.optimizer)
                    .map_err(|e| match e {
                        Error::Divergence { loss, .. } => Error::Divergence {
                            update: ck.updates,
                            loss,
                        },
                        other => other,
                    })?;
                ck.updates += 1;
                losses.push(loss);
            }
            if ck.env_steps % cfg.target_sync_steps.max(1) == 0 {
                ck.target = ck.online.clone();
            }
            if out.terminal {
                break out.reciprocal_rank;
            }
            state = out.state;
        };

        ck.recent_rr.push_back(rr.unwrap_or(0.0));
        if ck.recent_rr.len() > cfg.mrr_window.max(1) {
            ck.recent_rr.pop_front();
        }
        let mrr_window = ck.recent_rr.iter().sum::<f64>() / ck.recent_rr.len() as f64;
        ck.log.push(EpisodeLog {
            episode: ep,
            epsilon: eps,
            reward: step_rewards.iter().sum(),
            loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            mrr_window,
            step_rewards,
        });
        ck.next_episode += 1;

        if let Some(p) = &control.checkpoint_path {
            if control.checkpoint_every > 0 && ck.next_episode % control.checkpoint_every == 0 {
                ck.save(p)?;
            }
        }
    }
    if let Some(p) = &control.checkpoint_path {
        ck.save(p)?;
    }
    Ok(TrainOutcome {
        net: ck.online,
        log: ck.log,
        finished: true,
    })
}
