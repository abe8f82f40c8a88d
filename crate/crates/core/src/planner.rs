//! Active place-recognition episodes and the planners that drive them.
//!
//! An episode observes at a random start viewpoint, then takes `horizon`
//! forward actions, observing after each. The Bayes filter integrates every
//! observation; the place belief at the final viewpoint is the answer, and
//! its top-1 match against the true place decides the delayed reward.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::actions::ActionSet;
use crate::bayes::{viewpoint_to_place, BayesFilter, MotionModel};
use crate::error::{Error, Result};
use crate::features::{fuse_with, rrf_with, RrfConfig};
use crate::ingest::PdvTable;
use crate::pdv::{argmax, Pdv};
use crate::proxy::{ilc, ActionClassifier};
use crate::rl::{q_forward, EnvStep, Environment, QNetwork};
use crate::seed::{self, tag};
use crate::world::{Domain, TrajectoryWorld};

/// Which cues make up the planner's state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateLayout {
    /// ILC reciprocal ranks followed by OLC reciprocal ranks.
    Fused,
    OlcOnly,
    IlcOnly,
}

impl StateLayout {
    pub fn dim(self, n_actions: usize, n_places: usize) -> usize {
        match self {
            StateLayout::Fused => n_actions + n_places,
            StateLayout::OlcOnly => n_places,
            StateLayout::IlcOnly => n_actions,
        }
    }

    fn needs_ilc(self) -> bool {
        !matches!(self, StateLayout::OlcOnly)
    }
}

/// Where place-level classifier PDVs come from.
#[derive(Debug, Clone)]
pub enum PlaceCue {
    Simulated,
    Table(Arc<PdvTable>),
}

/// Where action-level PDVs come from.
#[derive(Debug, Clone)]
pub enum IlcProvider {
    Classifier(Arc<ActionClassifier>),
    Table(Arc<PdvTable>),
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Actions per episode.
    pub horizon: usize,
    pub actions: ActionSet,
    pub motion: MotionModel,
    pub rrf: RrfConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            horizon: 3,
            actions: ActionSet::default(),
            motion: MotionModel::deterministic(),
            rrf: RrfConfig::default(),
        }
    }
}

/// One viewpoint of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub viewpoint: usize,
    /// Meters moved to reach this viewpoint (`None` at the start).
    pub action_m: Option<usize>,
    pub place_pdv: Pdv,
    pub ilc: Option<Pdv>,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EpisodeEnvironment {
    world: Arc<TrajectoryWorld>,
    domain: Domain,
    cfg: EnvConfig,
    layout: StateLayout,
    place_cue: PlaceCue,
    ilc: IlcProvider,
    filter: BayesFilter,
    episode_seed: u64,
    viewpoint: usize,
    step: usize,
    started: bool,
    trace: Vec<StepRecord>,
}

impl EpisodeEnvironment {
    pub fn new(
        world: Arc<TrajectoryWorld>,
        domain: Domain,
        cfg: EnvConfig,
        layout: StateLayout,
        place_cue: PlaceCue,
        ilc: IlcProvider,
    ) -> Result<Self> {
        let n_actions = cfg.actions.len();
        match (&ilc, layout.needs_ilc()) {
            (IlcProvider::None, true) => {
                return Err(Error::Config(format!(
                    "state layout {layout:?} needs an ILC provider"
                )))
            }
            (IlcProvider::Classifier(c), _) => {
                if c.n_actions() != n_actions {
                    return Err(Error::Dimension {
                        context: "classifier actions",
                        expected: n_actions,
                        got: c.n_actions(),
                    });
                }
                if c.descriptor_dim() != world.descriptor_dim() {
                    return Err(Error::Dimension {
                        context: "classifier descriptor",
                        expected: world.descriptor_dim(),
                        got: c.descriptor_dim(),
                    });
                }
            }
            (IlcProvider::Table(t), _) if t.dim() != n_actions => {
                return Err(Error::Dimension {
                    context: "ingested action PDVs",
                    expected: n_actions,
                    got: t.dim(),
                });
            }
            _ => {}
        }
        if let PlaceCue::Table(t) = &place_cue {
            if t.dim() != world.n_places() {
                return Err(Error::Dimension {
                    context: "ingested place PDVs",
                    expected: world.n_places(),
                    got: t.dim(),
                });
            }
        }
        let filter = BayesFilter::new(world.n_viewpoints(), cfg.motion);
        Ok(EpisodeEnvironment {
            world,
            domain,
            cfg,
            layout,
            place_cue,
            ilc,
            filter,
            episode_seed: 0,
            viewpoint: 0,
            step: 0,
            started: false,
            trace: vec![],
        })
    }

    /// Simulated cues, classifier ILC when a layout needs it.
    pub fn simulated(
        world: Arc<TrajectoryWorld>,
        domain: Domain,
        cfg: EnvConfig,
        layout: StateLayout,
        classifier: Option<Arc<ActionClassifier>>,
    ) -> Result<Self> {
        let ilc = classifier.map_or(IlcProvider::None, IlcProvider::Classifier);
        Self::new(world, domain, cfg, layout, PlaceCue::Simulated, ilc)
    }

    pub fn world(&self) -> &TrajectoryWorld {
        &self.world
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn layout(&self) -> StateLayout {
        self.layout
    }

    pub fn belief(&self) -> &Pdv {
        self.filter.belief()
    }

    pub fn viewpoint(&self) -> usize {
        self.viewpoint
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_terminal(&self) -> bool {
        self.started && self.step == self.cfg.horizon
    }

    pub fn trace(&self) -> &[StepRecord] {
        &self.trace
    }

    pub fn state_dim(&self) -> usize {
        self.layout.dim(self.cfg.actions.len(), self.world.n_places())
    }

    /// Largest start viewpoint whose worst-case trajectory stays on the route.
    pub fn max_valid_start(&self) -> Option<usize> {
        let reach = self.cfg.horizon * self.cfg.actions.max_meters();
        (self.world.n_viewpoints() - 1).checked_sub(reach)
    }

    /// Uniform start draw; starts that could be pushed off the route are
    /// replaced with fresh draws.
    pub fn sample_start(&self, episode_seed: u64) -> Result<usize> {
        let limit = self.max_valid_start().ok_or_else(|| {
            Error::Config("route too short for the episode horizon and action set".into())
        })?;
        let mut rng = seed::stream(episode_seed, &[tag::START]);
        loop {
            let s = rng.random_range(0..self.world.n_viewpoints());
            if s <= limit {
                return Ok(s);
            }
            log::debug!("start {s} would leave the route; resampling");
        }
    }

    fn observe_place(&self, v: usize) -> Result<Pdv> {
        match &self.place_cue {
            PlaceCue::Simulated => {
                let mut rng = seed::stream(self.episode_seed, &[tag::OBSERVE, self.domain.seed, v as u64]);
                self.world.observe(v, &self.domain, &mut rng)
            }
            PlaceCue::Table(t) => Ok(t.get(&self.domain.id, v)?.clone()),
        }
    }

    fn observe_action(&self, v: usize) -> Result<Option<Pdv>> {
        match &self.ilc {
            IlcProvider::None => Ok(None),
            IlcProvider::Table(t) => Ok(Some(t.get(&self.domain.id, v)?.clone())),
            IlcProvider::Classifier(c) => {
                let mut rng = seed::stream(self.episode_seed, &[tag::DESCRIPTOR, self.domain.seed, v as u64]);
                let d = self.world.descriptor(v, &self.domain, &mut rng)?;
                Ok(Some(ilc(c, &d)?))
            }
        }
    }

    /// Observes at the current viewpoint, updates the filter and records the
    /// step.
    fn sense(&mut self, action_m: Option<usize>) -> Result<Vec<f64>> {
        let v = self.viewpoint;
        let obs = self.observe_place(v)?;
        self.filter.correct_with_place_pdv(&obs, &self.world)?;
        let olc = viewpoint_to_place(self.filter.belief(), &self.world)?;
        let action_pdv = if self.layout.needs_ilc() {
            self.observe_action(v)?
        } else {
            None
        };
        let n_actions = self.cfg.actions.len();
        let state = match self.layout {
            StateLayout::OlcOnly => rrf_with(&olc, self.cfg.rrf)?.0,
            StateLayout::IlcOnly => rrf_with(action_pdv.as_ref().unwrap(), self.cfg.rrf)?.0,
            StateLayout::Fused => {
                fuse_with(action_pdv.as_ref().unwrap(), &olc, n_actions, self.world.n_places(), self.cfg.rrf)?.0
            }
        };
        self.trace.push(StepRecord {
            t: self.step,
            viewpoint: v,
            action_m,
            place_pdv: olc,
            ilc: action_pdv,
            state: state.clone(),
        });
        Ok(state)
    }

    /// Starts an episode at `start`, or at a sampled valid start. Applies the
    /// first observation before returning the state.
    pub fn reset_at(&mut self, start: Option<usize>, episode_seed: u64) -> Result<Vec<f64>> {
        self.episode_seed = episode_seed;
        let s = match start {
            Some(s) if s >= self.world.n_viewpoints() => {
                return Err(Error::Index {
                    index: s,
                    len: self.world.n_viewpoints(),
                })
            }
            Some(s) => s,
            None => self.sample_start(episode_seed)?,
        };
        self.filter.reset();
        self.viewpoint = s;
        self.step = 0;
        self.started = true;
        self.trace.clear();
        self.sense(None)
    }

    /// Place belief at the current viewpoint.
    pub fn place_belief(&self) -> Result<Pdv> {
        viewpoint_to_place(self.filter.belief(), &self.world)
    }

    pub fn true_place(&self) -> usize {
        self.world.place_of(self.viewpoint)
    }

    /// Moves by action `action`, senses, and returns `(state, reward,
    /// terminal)`. The reward is zero until the last step, then +1 if the top
    /// place matches the true place and -1 otherwise.
    pub fn step_action(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool)> {
        if !self.started {
            return Err(Error::State("step before reset".into()));
        }
        if self.is_terminal() {
            return Err(Error::State("episode already terminal".into()));
        }
        if action >= self.cfg.actions.len() {
            return Err(Error::Index {
                index: action,
                len: self.cfg.actions.len(),
            });
        }
        let m = self.cfg.actions.meters(action);
        self.viewpoint = (self.viewpoint + m).min(self.world.n_viewpoints() - 1);
        self.filter.predict(m)?;
        self.step += 1;
        let state = self.sense(Some(m))?;
        let terminal = self.step == self.cfg.horizon;
        let reward = if terminal {
            let olc = &self.trace.last().unwrap().place_pdv;
            if olc.argmax() == self.true_place() {
                1.0
            } else {
                -1.0
            }
        } else {
            0.0
        };
        Ok((state, reward, terminal))
    }

    /// 1-based rank of the true place in the current place belief.
    pub fn true_rank(&self) -> usize {
        self.trace
            .last()
            .map_or(usize::MAX, |r| r.place_pdv.rank_of(self.true_place()))
    }
}

impl Environment for EpisodeEnvironment {
    fn state_dim(&self) -> usize {
        EpisodeEnvironment::state_dim(self)
    }

    fn n_actions(&self) -> usize {
        self.cfg.actions.len()
    }

    fn reset(&mut self, episode_seed: u64) -> Result<Vec<f64>> {
        self.reset_at(None, episode_seed)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        let (state, reward, terminal) = self.step_action(action)?;
        Ok(EnvStep {
            state,
            reward,
            terminal,
            reciprocal_rank: terminal.then(|| 1.0 / self.true_rank() as f64),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerVariant {
    SingleView,
    Random,
    OlcOnly,
    IlcOnly,
    Proposed,
}

impl PlannerVariant {
    pub const ALL: [PlannerVariant; 5] = [
        PlannerVariant::SingleView,
        PlannerVariant::Random,
        PlannerVariant::OlcOnly,
        PlannerVariant::IlcOnly,
        PlannerVariant::Proposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlannerVariant::SingleView => "single_view",
            PlannerVariant::Random => "random",
            PlannerVariant::OlcOnly => "olc_only",
            PlannerVariant::IlcOnly => "ilc_only",
            PlannerVariant::Proposed => "proposed",
        }
    }

    /// State layout of the learned variants.
    pub fn layout(self) -> Option<StateLayout> {
        match self {
            PlannerVariant::OlcOnly => Some(StateLayout::OlcOnly),
            PlannerVariant::IlcOnly => Some(StateLayout::IlcOnly),
            PlannerVariant::Proposed => Some(StateLayout::Fused),
            _ => None,
        }
    }

    pub fn is_learned(self) -> bool {
        self.layout().is_some()
    }
}

impl fmt::Display for PlannerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlannerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlannerVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = PlannerVariant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown planner `{s}`; valid planners: {}", names.join(", ")))
            })
    }
}

/// Action-selection policy for an episode.
#[derive(Debug, Clone)]
pub enum Planner {
    SingleView,
    Random,
    Learned {
        variant: PlannerVariant,
        net: Arc<QNetwork>,
    },
}

impl Planner {
    pub fn learned(variant: PlannerVariant, net: Arc<QNetwork>) -> Result<Self> {
        if !variant.is_learned() {
            return Err(Error::Config(format!("{variant} is not a learned planner")));
        }
        Ok(Planner::Learned { variant, net })
    }

    pub fn variant(&self) -> PlannerVariant {
        match self {
            Planner::SingleView => PlannerVariant::SingleView,
            Planner::Random => PlannerVariant::Random,
            Planner::Learned { variant, .. } => *variant,
        }
    }

    /// State layout the planner reads; baselines ignore the state and use the
    /// cheapest layout.
    pub fn layout(&self) -> StateLayout {
        self.variant().layout().unwrap_or(StateLayout::OlcOnly)
    }

    /// Next action, or `None` for the single-view baseline which never moves.
    pub fn next_action(&self, state: &[f64], n_actions: usize, rng: &mut seed::Rng) -> Result<Option<usize>> {
        match self {
            Planner::SingleView => Ok(None),
            Planner::Random => Ok(Some(rng.random_range(0..n_actions))),
            Planner::Learned { net, .. } => Ok(Some(argmax(&q_forward(net, state)?))),
        }
    }
}

/// Outcome of one evaluated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub planner: PlannerVariant,
    pub domain: String,
    pub episode: u64,
    pub start: usize,
    /// Meters moved at each step.
    pub actions: Vec<usize>,
    pub final_viewpoint: usize,
    pub true_place: usize,
    pub rank: usize,
    pub final_place_pdv: Pdv,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<StepRecord>,
}

impl EpisodeResult {
    pub fn reciprocal_rank(&self) -> f64 {
        1.0 / self.rank as f64
    }
}

/// Runs one full episode. Everything random derives from `episode_seed`, so
/// two planners given the same seed start at the same viewpoint and see the
/// same noise at any viewpoint they both visit.
pub fn run_episode(
    env: &mut EpisodeEnvironment,
    planner: &Planner,
    episode: u64,
    episode_seed: u64,
    keep_trace: bool,
) -> Result<EpisodeResult> {
    run_episode_from(env, planner, episode, episode_seed, None, keep_trace)
}

/// [`run_episode`] with an optional fixed start viewpoint.
pub fn run_episode_from(
    env: &mut EpisodeEnvironment,
    planner: &Planner,
    episode: u64,
    episode_seed: u64,
    start: Option<usize>,
    keep_trace: bool,
) -> Result<EpisodeResult> {
    if let Planner::Learned { net, .. } = planner {
        if net.state_dim() != env.state_dim() || net.n_actions() != env.config().actions.len() {
            return Err(Error::Dimension {
                context: "planner network vs environment state",
                expected: env.state_dim(),
                got: net.state_dim(),
            });
        }
    }
    let mut policy_rng = seed::stream(episode_seed, &[tag::POLICY]);
    let mut state = env.reset_at(start, episode_seed)?;
    let start = env.viewpoint();
    let mut actions = vec![];
    while !env.is_terminal() {
        let Some(a) = planner.next_action(&state, env.config().actions.len(), &mut policy_rng)? else {
            break;
        };
        actions.push(env.config().actions.meters(a));
        state = env.step_action(a)?.0;
    }
    let last = env.trace().last().expect("reset records a step");
    Ok(EpisodeResult {
        planner: planner.variant(),
        domain: env.domain().id.clone(),
        episode,
        start,
        actions,
        final_viewpoint: env.viewpoint(),
        true_place: env.true_place(),
        rank: env.true_rank(),
        final_place_pdv: last.place_pdv.clone(),
        steps: if keep_trace { env.trace().to_vec() } else { vec![] },
    })
}
