//! Reciprocal-rank features and the fused planner state.
//!
//! An RRF vector keeps each entry at its original index and replaces the
//! probability with `1 / (k + rank)`, where rank is the 1-based descending
//! position. Only the ordering of the input survives, so the feature is blind
//! to calibration drift in the classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdv::Pdv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrfVector(pub Vec<f64>);

/// Planner input: ILC block first, then OLC block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl RrfVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Rank smoothing constant. `0` gives plain reciprocal rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RrfConfig {
    pub k: f64,
}

/// 1-based descending ranks, ties broken by lower index first.
pub fn ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable sort keeps index order among equal values
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0; values.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    ranks
}

pub fn rrf_with(pdv: &Pdv, cfg: RrfConfig) -> Result<RrfVector> {
    if pdv.is_empty() {
        return Err(Error::Dimension {
            context: "rrf input",
            expected: 1,
            got: 0,
        });
    }
    Ok(RrfVector(
        ranks(pdv.as_slice())
            .into_iter()
            .map(|r| 1.0 / (cfg.k + r as f64))
            .collect(),
    ))
}

pub fn rrf(pdv: &Pdv) -> Result<RrfVector> {
    rrf_with(pdv, RrfConfig::default())
}

/// Concatenates `rrf(ilc)` and `rrf(olc)`, checking both block sizes.
pub fn fuse(ilc: &Pdv, olc: &Pdv, n_actions: usize, n_places: usize) -> Result<StateVector> {
    fuse_with(ilc, olc, n_actions, n_places, RrfConfig::default())
}

pub fn fuse_with(
    ilc: &Pdv,
    olc: &Pdv,
    n_actions: usize,
    n_places: usize,
    cfg: RrfConfig,
) -> Result<StateVector> {
    if ilc.len() != n_actions {
        return Err(Error::Dimension {
            context: "ILC block",
            expected: n_actions,
            got: ilc.len(),
        });
    }
    if olc.len() != n_places {
        return Err(Error::Dimension {
            context: "OLC block",
            expected: n_places,
            got: olc.len(),
        });
    }
    let mut values = rrf_with(ilc, cfg)?.0;
    values.extend(rrf_with(olc, cfg)?.0);
    Ok(StateVector(values))
}
