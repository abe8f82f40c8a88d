use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Forward moves available to the robot, in meters, indexed by action id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ActionSet(Vec<usize>);

impl ActionSet {
    pub fn new(meters: Vec<usize>) -> Result<Self> {
        if meters.is_empty() {
            return Err(Error::Config("action set is empty".into()));
        }
        if meters.contains(&0) {
            return Err(Error::Config("actions must move at least 1 m".into()));
        }
        Ok(ActionSet(meters))
    }

    /// `1, 2, ..., max_m` meters.
    pub fn forward(max_m: usize) -> Self {
        ActionSet((1..=max_m.max(1)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn meters(&self, action: usize) -> usize {
        self.0[action]
    }

    pub fn max_meters(&self) -> usize {
        *self.0.iter().max().unwrap()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl Default for ActionSet {
    fn default() -> Self {
        ActionSet::forward(30)
    }
}

impl TryFrom<Vec<usize>> for ActionSet {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        ActionSet::new(v)
    }
}

impl From<ActionSet> for Vec<usize> {
    fn from(a: ActionSet) -> Self {
        a.0
    }
}
