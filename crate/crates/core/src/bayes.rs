//! Histogram Bayes filter over travel distance (Markov localization at 1 m
//! resolution) and the viewpoint/place belief conversions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdv::Pdv;
use crate::world::TrajectoryWorld;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    #[default]
    Deterministic,
    Gaussian,
}

/// Odometry noise law. Mass that would leave the trajectory piles up on the
/// nearest end cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MotionModel {
    pub kind: MotionKind,
    #[serde(default)]
    pub sigma_m: f64,
}

impl MotionModel {
    pub fn deterministic() -> Self {
        MotionModel::default()
    }

    pub fn gaussian(sigma_m: f64) -> Self {
        MotionModel {
            kind: MotionKind::Gaussian,
            sigma_m,
        }
    }

    /// Discretized zero-mean kernel as `(offset, weight)` pairs on ±3σ.
    fn kernel(&self) -> Result<Vec<(isize, f64)>> {
        match self.kind {
            MotionKind::Deterministic => Ok(vec![(0, 1.0)]),
            MotionKind::Gaussian => {
                let s = self.sigma_m;
                if !(s.is_finite() && s >= 0.0) {
                    return Err(Error::Domain(format!("motion sigma must be >= 0, got {s}")));
                }
                if s == 0.0 {
                    return Ok(vec![(0, 1.0)]);
                }
                let half = (3.0 * s).ceil() as isize;
                let raw: Vec<(isize, f64)> = (-half..=half)
                    .map(|k| (k, (-(k as f64).powi(2) / (2.0 * s * s)).exp()))
                    .collect();
                let total: f64 = raw.iter().map(|(_, w)| w).sum();
                Ok(raw.into_iter().map(|(k, w)| (k, w / total)).collect())
            }
        }
    }
}

/// Shifts the belief forward by `action_m` cells and spreads it with the
/// motion kernel, clamping at both ends of the trajectory.
pub fn motion_update(belief: &Pdv, action_m: usize, mm: &MotionModel) -> Result<Pdv> {
    if action_m == 0 {
        return Err(Error::Domain("action must move at least 1 m".into()));
    }
    let kernel = mm.kernel()?;
    let n = belief.len();
    let last = n as isize - 1;
    let mut out = vec![0.0; n];
    for (v, &p) in belief.as_slice().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let centre = v as isize + action_m as isize;
        for &(k, w) in &kernel {
            let t = (centre + k).clamp(0, last) as usize;
            out[t] += p * w;
        }
    }
    Pdv::normalize(out)
}

/// Pointwise product of belief and likelihood, renormalized.
pub fn perception_update(belief: &Pdv, likelihood: &[f64]) -> Result<Pdv> {
    if likelihood.len() != belief.len() {
        return Err(Error::Dimension {
            context: "perception likelihood",
            expected: belief.len(),
            got: likelihood.len(),
        });
    }
    if likelihood.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::Domain("likelihood entries must be finite and >= 0".into()));
    }
    let post: Vec<f64> = belief
        .as_slice()
        .iter()
        .zip(likelihood)
        .map(|(b, l)| b * l)
        .collect();
    if post.iter().sum::<f64>() <= 0.0 {
        return Err(Error::DegenerateBelief);
    }
    Pdv::normalize(post)
}

/// Marginalizes a viewpoint belief onto place classes.
pub fn viewpoint_to_place(belief: &Pdv, world: &TrajectoryWorld) -> Result<Pdv> {
    if belief.len() != world.n_viewpoints() {
        return Err(Error::Dimension {
            context: "viewpoint belief",
            expected: world.n_viewpoints(),
            got: belief.len(),
        });
    }
    let mut out = vec![0.0; world.n_places()];
    for (&c, &p) in world.place_map().iter().zip(belief.as_slice()) {
        out[c] += p;
    }
    Pdv::normalize(out)
}

/// Spreads each place's probability evenly over that place's viewpoints.
pub fn place_to_viewpoint(place_pdv: &Pdv, world: &TrajectoryWorld) -> Result<Pdv> {
    if place_pdv.len() != world.n_places() {
        return Err(Error::Dimension {
            context: "place belief",
            expected: world.n_places(),
            got: place_pdv.len(),
        });
    }
    let values = world
        .place_map()
        .iter()
        .map(|&c| place_pdv.get(c) / world.place_size(c) as f64)
        .collect();
    Pdv::normalize(values)
}

/// Running filter state. A degenerate correction resets the belief to uniform
/// instead of failing, so the filter always holds a valid distribution.
#[derive(Debug, Clone)]
pub struct BayesFilter {
    belief: Pdv,
    motion: MotionModel,
}

impl BayesFilter {
    pub fn new(n_viewpoints: usize, motion: MotionModel) -> Self {
        BayesFilter {
            belief: Pdv::uniform(n_viewpoints),
            motion,
        }
    }

    pub fn belief(&self) -> &Pdv {
        &self.belief
    }

    pub fn reset(&mut self) {
        self.belief = Pdv::uniform(self.belief.len());
    }

    pub fn predict(&mut self, action_m: usize) -> Result<()> {
        self.belief = motion_update(&self.belief, action_m, &self.motion)?;
        Ok(())
    }

    /// Applies a likelihood; returns `false` if the posterior was degenerate
    /// and the belief was reset.
    pub fn correct(&mut self, likelihood: &[f64]) -> Result<bool> {
        match perception_update(&self.belief, likelihood) {
            Ok(b) => {
                self.belief = b;
                Ok(true)
            }
            Err(Error::DegenerateBelief) => {
                log::warn!("degenerate posterior, resetting belief to uniform");
                self.reset();
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }

    /// Perception update from a place-level classifier PDV, lifted to
    /// viewpoints with [`place_to_viewpoint`].
    pub fn correct_with_place_pdv(&mut self, place_pdv: &Pdv, world: &TrajectoryWorld) -> Result<bool> {
        let lik = place_to_viewpoint(place_pdv, world)?;
        self.correct(lik.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::world::{DescriptorSpec, Domain, ObservationModel};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn world(n: usize, place_len: usize) -> TrajectoryWorld {
        let c = n.div_ceil(place_len);
        let confusion = (0..c).map(|_| vec![1.0 / c as f64; c]).collect();
        TrajectoryWorld::new(
            n,
            place_len,
            ObservationModel {
                confusion,
                featureless: vec![0.0; n],
            },
            DescriptorSpec::default(),
            vec![Domain::training()],
        )
        .unwrap()
    }

    /// Direct convolution over all (source, offset) pairs; independent of the
    /// sparse loop in `motion_update`.
    fn convolve_oracle(belief: &[f64], action: usize, kernel: &[(isize, f64)]) -> Vec<f64> {
        let n = belief.len();
        let mut out = vec![0.0; n];
        for t in 0..n {
            for (s, &p) in belief.iter().enumerate() {
                for &(k, w) in kernel {
                    let dest = s as isize + action as isize + k;
                    let dest = if dest < 0 {
                        0
                    } else if dest >= n as isize {
                        n - 1
                    } else {
                        dest as usize
                    };
                    if dest == t {
                        out[t] += p * w;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn deterministic_shift_and_clamp() {
        let mm = MotionModel::deterministic();
        let b = motion_update(&Pdv::delta(10, 3), 2, &mm).unwrap();
        assert_eq!(b, Pdv::delta(10, 5));
        let b = motion_update(&Pdv::delta(10, 8), 5, &mm).unwrap();
        assert_eq!(b, Pdv::delta(10, 9));
    }

    #[test]
    fn uniform_shift_matches_convolution() {
        let mm = MotionModel::deterministic();
        let n = 20;
        let b = motion_update(&Pdv::uniform(n), 4, &mm).unwrap();
        let oracle = convolve_oracle(Pdv::uniform(n).as_slice(), 4, &[(0, 1.0)]);
        for (x, y) in b.as_slice().iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-15);
        }
        assert_eq!(b.get(0), 0.0);
        assert!((b.get(n - 1) - 5.0 / n as f64).abs() < 1e-15);
    }

    #[test]
    fn gaussian_motion_matches_convolution() {
        let mm = MotionModel::gaussian(0.5);
        let kernel = mm.kernel().unwrap();
        assert_eq!(kernel.len(), 5);
        let mut rng = seed::stream(3, &[]);
        let raw: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let b = Pdv::normalize(raw).unwrap();
        let got = motion_update(&b, 7, &mm).unwrap();
        let oracle = convolve_oracle(b.as_slice(), 7, &kernel);
        for (x, y) in got.as_slice().iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_action_is_rejected() {
        let r = motion_update(&Pdv::uniform(4), 0, &MotionModel::deterministic());
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn two_cell_perception() {
        let p = perception_update(&Pdv::uniform(2), &[0.8, 0.2]).unwrap();
        assert!((p.get(0) - 0.8).abs() < 1e-15);
        assert!((p.get(1) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn uniform_likelihood_is_identity() {
        let b = Pdv::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let p = perception_update(&b, &[0.7; 4]).unwrap();
        for (x, y) in p.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn perception_matches_enumeration() {
        let mut rng = seed::stream(11, &[]);
        let prior: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let lik: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let prior = Pdv::normalize(prior).unwrap();
        let got = perception_update(&prior, &lik).unwrap();
        // Bayes rule, one hypothesis at a time
        let evidence: f64 = (0..50).map(|j| prior.get(j) * lik[j]).sum();
        for i in 0..50 {
            let expected = prior.get(i) * lik[i] / evidence;
            assert!((got.get(i) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_posterior() {
        let b = Pdv::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            perception_update(&b, &[0.0, 1.0]),
            Err(Error::DegenerateBelief)
        ));
        let mut f = BayesFilter::new(2, MotionModel::deterministic());
        f.correct(&[1.0, 0.0]).unwrap();
        assert!(!f.correct(&[0.0, 1.0]).unwrap());
        assert_eq!(f.belief(), &Pdv::uniform(2));
    }

    #[test]
    fn likelihood_length_mismatch() {
        assert!(matches!(
            perception_update(&Pdv::uniform(3), &[1.0, 1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn conversions_on_small_world() {
        let w = world(4, 2);
        let p = viewpoint_to_place(&Pdv::uniform(4), &w).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        let p = viewpoint_to_place(&Pdv::delta(4, 2), &w).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 1.0]);
        let v = place_to_viewpoint(&Pdv::new(vec![1.0, 0.0]).unwrap(), &w).unwrap();
        assert_eq!(v.as_slice(), &[0.5, 0.5, 0.0, 0.0]);
        let v = place_to_viewpoint(&Pdv::uniform(2), &w).unwrap();
        assert_eq!(v.as_slice(), &[0.25; 4]);
        assert!(matches!(
            viewpoint_to_place(&Pdv::uniform(3), &w),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            place_to_viewpoint(&Pdv::uniform(3), &w),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn marginal_matches_per_class_sum() {
        let w = world(37, 5);
        let mut rng = seed::stream(2, &[]);
        let b = Pdv::normalize((0..37).map(|_| rng.random::<f64>()).collect()).unwrap();
        let got = viewpoint_to_place(&b, &w).unwrap();
        for c in 0..w.n_places() {
            let s: f64 = (c * 5..((c + 1) * 5).min(37)).map(|v| b.get(v)).sum();
            assert!((got.get(c) - s).abs() < 1e-15);
        }
    }

    fn pdv_strategy(n: usize) -> impl Strategy<Value = Pdv> {
        prop::collection::vec(0.001f64..1.0, n).prop_map(|v| Pdv::normalize(v).unwrap())
    }

    proptest! {
        #[test]
        fn motion_conserves_mass(b in pdv_strategy(40), a in 1usize..35, sigma in 0.0f64..2.0) {
            for mm in [MotionModel::deterministic(), MotionModel::gaussian(sigma)] {
                let out = motion_update(&b, a, &mm).unwrap();
                // compare the raw (pre-normalization) mass via the oracle
                let raw = convolve_oracle(b.as_slice(), a, &mm.kernel().unwrap());
                prop_assert!((raw.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!((out.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn perception_is_scale_invariant(b in pdv_strategy(25), lik in prop::collection::vec(0.01f64..1.0, 25), k in 0.01f64..100.0) {
            let a = perception_update(&b, &lik).unwrap();
            let scaled: Vec<f64> = lik.iter().map(|l| l * k).collect();
            let c = perception_update(&b, &scaled).unwrap();
            for (x, y) in a.as_slice().iter().zip(c.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn place_round_trip(p in pdv_strategy(7)) {
            let w = world(33, 5);
            let back = viewpoint_to_place(&place_to_viewpoint(&p, &w).unwrap(), &w).unwrap();
            for (x, y) in back.as_slice().iter().zip(p.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
