//! Next-best-view planning for active place recognition on synthetic
//! one-dimensional trajectory worlds.
//!
//! The pipeline mirrors a camera-based active localization stack with the
//! CNN replaced by a parameterized observation model:
//!
//! * [`world`] holds the trajectory, its place partitioning and the simulated
//!   place classifier (with per-domain appearance shift).
//! * [`bayes`] is a histogram Bayes filter over travel distance, plus the
//!   viewpoint/place belief conversions.
//! * [`features`] turns beliefs into reciprocal-rank feature vectors.
//! * [`proxy`] trains the single-action classifier whose output is the
//!   scene-level action cue.
//! * [`rl`] is a small deep Q-learning stack with experience replay.
//! * [`planner`] wires everything into episodes and implements the baselines.
//! * [`eval`] computes MRR tables with bootstrap intervals.

pub mod actions;
pub mod bayes;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod nn;
pub mod pdv;
pub mod planner;
pub mod proxy;
pub mod rl;
pub mod seed;
pub mod world;

pub use actions::ActionSet;
pub use error::{Error, Result};
pub use pdv::Pdv;
