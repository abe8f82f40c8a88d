//! Probability distribution vectors.
//!
//! A [`Pdv`] is the common currency of the pipeline: viewpoint beliefs, place
//! beliefs and action beliefs are all nonnegative vectors summing to one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum - 1|` accepted by [`Pdv::new`].
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Pdv(Vec<f64>);

impl Pdv {
    /// Wraps `values`, checking nonnegativity and unit sum.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidPdv("empty vector".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidPdv(format!("entry {i} = {v}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidPdv(format!("sums to {sum}")));
        }
        Ok(Pdv(values))
    }

    /// Scales a nonnegative vector to unit sum.
    pub fn normalize(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidPdv("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidPdv("negative or non-finite entry".into()));
        }
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Err(Error::DegenerateBelief);
        }
        values.iter_mut().for_each(|v| *v /= sum);
        Ok(Pdv(values))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform PDV needs at least one entry");
        Pdv(vec![1.0 / n as f64; n])
    }

    pub fn delta(n: usize, at: usize) -> Self {
        assert!(at < n, "delta index {at} out of range {n}");
        let mut v = vec![0.0; n];
        v[at] = 1.0;
        Pdv(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// 1-based descending rank of entry `i`. Entries equal to `self[i]` with a
    /// lower index rank ahead of it.
    pub fn rank_of(&self, i: usize) -> usize {
        let target = self.0[i];
        1 + self
            .0
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > target || (v == target && j < i))
            .count()
    }
}

impl TryFrom<Vec<f64>> for Pdv {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Pdv::new(values)
    }
}

impl From<Pdv> for Vec<f64> {
    fn from(p: Pdv) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for Pdv {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the maximum of `values`, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_vectors() {
        assert!(Pdv::new(vec![]).is_err());
        assert!(Pdv::new(vec![0.5, 0.4]).is_err());
        assert!(Pdv::new(vec![1.5, -0.5]).is_err());
        assert!(Pdv::new(vec![f64::NAN, 1.0]).is_err());
        assert!(Pdv::normalize(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn rank_uses_stable_ties() {
        let p = Pdv::new(vec![0.25, 0.25, 0.25, 0.25]).unwrap();
        let ranks: Vec<_> = (0..4).map(|i| p.rank_of(i)).collect();
        assert_eq!(ranks, vec![1, 2, 3, 4]);
        let p = Pdv::new(vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(p.rank_of(1), 1);
        assert_eq!(p.rank_of(0), 3);
        assert_eq!(p.argmax(), 1);
    }

    #[test]
    fn serde_validates() {
        let p: Pdv = serde_json::from_str("[0.5,0.5]").unwrap();
        assert_eq!(p.len(), 2);
        assert!(serde_json::from_str::<Pdv>("[0.5,0.6]").is_err());
    }
}
