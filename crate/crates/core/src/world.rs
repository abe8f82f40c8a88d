//! Discretized trajectory worlds and the simulated place classifier.
//!
//! A world is a chain of viewpoints at 1 m spacing along a route, cut into
//! contiguous place blocks of `place_len_m` viewpoints. The place classifier is
//! replaced by an observation model: each viewpoint reports a row of a
//! row-stochastic confusion matrix, flattened toward uniform where the scene is
//! featureless and perturbed by multiplicative gamma noise whose strength is set
//! by the test domain.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdv::Pdv;
use crate::seed::{self, tag, Rng};

const ROW_TOLERANCE: f64 = 1e-9;

/// A test or training condition. Larger `shift_strength` means the classifier
/// output and the scene descriptors drift further from what was seen in
/// training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub id: String,
    pub shift_strength: f64,
    pub seed: u64,
    /// Weight of an extra blend of every confusion row toward uniform.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub confusion_blend: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl Domain {
    pub fn new(id: impl Into<String>, shift_strength: f64, seed: u64) -> Self {
        Domain {
            id: id.into(),
            shift_strength,
            seed,
            confusion_blend: 0.0,
        }
    }

    /// The training condition: no shift.
    pub fn training() -> Self {
        Domain::new("train", 0.0, 0)
    }

    /// Standard five-domain test sweep, shift 0.2 through 0.6.
    pub fn shifted_sweep() -> Vec<Domain> {
        [0.2, 0.3, 0.4, 0.5, 0.6]
            .iter()
            .enumerate()
            .map(|(i, &s)| Domain::new(format!("shift-{s:.1}"), s, 101 + i as u64))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.shift_strength.is_finite() && self.shift_strength >= 0.0) {
            return Err(Error::Validation(format!(
                "domain `{}`: shift_strength must be >= 0",
                self.id
            )));
        }
        if !(0.0..=1.0).contains(&self.confusion_blend) {
            return Err(Error::Validation(format!(
                "domain `{}`: confusion_blend must lie in [0, 1]",
                self.id
            )));
        }
        Ok(())
    }
}

/// Parameters of the synthetic scene descriptor (the stand-in for the
/// saliency image fed to the action classifier).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorSpec {
    /// Gaussian noise standard deviation in an unshifted domain.
    pub noise_base: f64,
    /// Additional noise standard deviation per unit of domain shift.
    pub noise_per_shift: f64,
    /// Number of pure-noise channels appended to the descriptor.
    pub nuisance_dims: usize,
}

impl Default for DescriptorSpec {
    fn default() -> Self {
        DescriptorSpec {
            noise_base: 0.0,
            noise_per_shift: 0.5,
            nuisance_dims: 4,
        }
    }
}

/// Simulated classifier behaviour: confusion rows plus per-viewpoint
/// featureless degree.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub confusion: Vec<Vec<f64>>,
    pub featureless: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDescriptor(pub Vec<f64>);

impl SceneDescriptor {
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

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWorld {
    n_viewpoints: usize,
    place_len_m: usize,
    place_of: Vec<usize>,
    obs: ObservationModel,
    descriptor: DescriptorSpec,
    domains: Vec<Domain>,
}

/// Generation parameters for [`generate_world`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_viewpoints: usize,
    pub place_len_m: usize,
    /// Longest forward action the world must accommodate.
    pub max_action_m: usize,
    /// Fraction of viewpoints covered by featureless runs.
    pub featureless_fraction: f64,
    pub featureless_run_min_m: usize,
    pub featureless_run_max_m: usize,
    /// Featureless degree assigned inside runs.
    pub featureless_degree: f64,
    /// Range the per-class confusion diagonal is drawn from.
    pub confusion_diag_min: f64,
    pub confusion_diag_max: f64,
    /// Decay length, in places, of off-diagonal confusion mass.
    pub confusion_spread: f64,
    pub descriptor: DescriptorSpec,
    pub domains: Vec<Domain>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let mut domains = vec![Domain::training()];
        domains.extend(Domain::shifted_sweep());
        WorldConfig {
            n_viewpoints: 400,
            place_len_m: 25,
            max_action_m: 30,
            featureless_fraction: 0.3,
            featureless_run_min_m: 40,
            featureless_run_max_m: 80,
            featureless_degree: 1.0,
            confusion_diag_min: 0.5,
            confusion_diag_max: 0.8,
            confusion_spread: 1.5,
            descriptor: DescriptorSpec::default(),
            domains,
        }
    }
}

impl WorldConfig {
    /// Full-size route geometry: 6.3 km at 1 m resolution cut into 100 m places.
    pub fn long_route() -> Self {
        WorldConfig {
            n_viewpoints: 6300,
            place_len_m: 100,
            ..WorldConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_viewpoints == 0 {
            return Err(Error::Config("n_viewpoints must be positive".into()));
        }
        if self.place_len_m == 0 {
            return Err(Error::Config("place_len_m must be at least 1".into()));
        }
        if self.max_action_m == 0 {
            return Err(Error::Config("max_action_m must be at least 1".into()));
        }
        if self.n_viewpoints < 2 * self.max_action_m {
            return Err(Error::Config(format!(
                "n_viewpoints ({}) must be at least twice max_action_m ({})",
                self.n_viewpoints, self.max_action_m
            )));
        }
        if !(0.0..=1.0).contains(&self.featureless_fraction)
            || !(0.0..=1.0).contains(&self.featureless_degree)
        {
            return Err(Error::Config(
                "featureless fraction and degree must lie in [0, 1]".into(),
            ));
        }
        if self.featureless_fraction > 0.0
            && (self.featureless_run_min_m == 0
                || self.featureless_run_min_m > self.featureless_run_max_m)
        {
            return Err(Error::Config("invalid featureless run length range".into()));
        }
        if !(0.0 < self.confusion_diag_min
            && self.confusion_diag_min <= self.confusion_diag_max
            && self.confusion_diag_max <= 1.0)
        {
            return Err(Error::Config("confusion diagonal range must satisfy 0 < min <= max <= 1".into()));
        }
        if !(self.confusion_spread > 0.0) {
            return Err(Error::Config("confusion_spread must be positive".into()));
        }
        for d in &self.domains {
            d.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Builds a world from `config`. The result depends only on `(config, seed)`.
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<TrajectoryWorld> {
    config.validate()?;
    let mut rng = seed::stream(seed, &[tag::WORLD]);
    let n = config.n_viewpoints;
    let n_places = n.div_ceil(config.place_len_m);

    let confusion = (0..n_places)
        .map(|i| {
            if n_places == 1 {
                return vec![1.0];
            }
            let diag = rng.random_range(config.confusion_diag_min..=config.confusion_diag_max);
            let mut row: Vec<f64> = (0..n_places)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        let dist = (i as f64 - j as f64).abs();
                        (-dist / config.confusion_spread).exp() * rng.random_range(0.5..1.5)
                    }
                })
                .collect();
            let off: f64 = row.iter().sum();
            row.iter_mut().for_each(|w| *w *= (1.0 - diag) / off);
            row[i] = diag;
            renormalize_row(&mut row);
            row
        })
        .collect();

    let featureless = featureless_runs(config, &mut rng);
    TrajectoryWorld::new(
        n,
        config.place_len_m,
        ObservationModel {
            confusion,
            featureless,
        },
        config.descriptor.clone(),
        config.domains.clone(),
    )
}

fn renormalize_row(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|w| *w /= s);
}

fn featureless_runs(config: &WorldConfig, rng: &mut Rng) -> Vec<f64> {
    let n = config.n_viewpoints;
    let mut mask = vec![0.0; n];
    let target = (config.featureless_fraction * n as f64).round() as usize;
    if target == 0 {
        return mask;
    }
    let mut covered = 0;
    let mut attempts = 0;
    while covered < target && attempts < 10_000 {
        attempts += 1;
        let max_len = config.featureless_run_max_m.min(n);
        let min_len = config.featureless_run_min_m.min(max_len);
        let len = rng.random_range(min_len..=max_len).min(target - covered).max(1);
        let start = rng.random_range(0..=n - len);
        // keep at least one featured viewpoint between runs
        let lo = start.saturating_sub(1);
        let hi = (start + len + 1).min(n);
        if mask[lo..hi].iter().any(|&f| f > 0.0) {
            continue;
        }
        mask[start..start + len]
            .iter_mut()
            .for_each(|f| *f = config.featureless_degree);
        covered += len;
    }
    if covered < target {
        log::warn!("placed only {covered} of {target} featureless viewpoints");
    }
    mask
}

impl TrajectoryWorld {
    /// Assembles and validates a world from explicit parts.
    pub fn new(
        n_viewpoints: usize,
        place_len_m: usize,
        obs: ObservationModel,
        descriptor: DescriptorSpec,
        domains: Vec<Domain>,
    ) -> Result<Self> {
        if n_viewpoints == 0 {
            return Err(Error::Validation("n_viewpoints must be positive".into()));
        }
        if place_len_m == 0 {
            return Err(Error::Validation("place_len_m must be at least 1".into()));
        }
        let n_places = n_viewpoints.div_ceil(place_len_m);
        if obs.confusion.len() != n_places {
            return Err(Error::Validation(format!(
                "confusion has {} rows, expected {n_places}",
                obs.confusion.len()
            )));
        }
        for (i, row) in obs.confusion.iter().enumerate() {
            if row.len() != n_places {
                return Err(Error::Validation(format!(
                    "confusion row {i} has {} entries, expected {n_places}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Validation(format!(
                    "confusion row {i} has a negative or non-finite entry"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::Validation(format!(
                    "confusion row {i} sums to {s}, expected 1"
                )));
            }
        }
        if obs.featureless.len() != n_viewpoints {
            return Err(Error::Validation(format!(
                "featureless has {} entries, expected {n_viewpoints}",
                obs.featureless.len()
            )));
        }
        if let Some(v) = obs.featureless.iter().position(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Validation(format!(
                "featureless degree at viewpoint {v} is outside [0, 1]"
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &domains {
            d.validate()?;
            if !seen.insert(d.id.as_str()) {
                return Err(Error::Validation(format!("duplicate domain id `{}`", d.id)));
            }
        }
        let place_of = (0..n_viewpoints).map(|v| v / place_len_m).collect();
        Ok(TrajectoryWorld {
            n_viewpoints,
            place_len_m,
            place_of,
            obs,
            descriptor,
            domains,
        })
    }

    pub fn n_viewpoints(&self) -> usize {
        self.n_viewpoints
    }

    pub fn place_len_m(&self) -> usize {
        self.place_len_m
    }

    pub fn n_places(&self) -> usize {
        self.obs.confusion.len()
    }

    pub fn place_of(&self, v: usize) -> usize {
        self.place_of[v]
    }

    pub fn place_map(&self) -> &[usize] {
        &self.place_of
    }

    /// Number of viewpoints in place `c`.
    pub fn place_size(&self, c: usize) -> usize {
        let start = c * self.place_len_m;
        (start + self.place_len_m).min(self.n_viewpoints) - start
    }

    pub fn observation_model(&self) -> &ObservationModel {
        &self.obs
    }

    pub fn featureless(&self, v: usize) -> f64 {
        self.obs.featureless[v]
    }

    pub fn descriptor_spec(&self) -> &DescriptorSpec {
        &self.descriptor
    }

    /// Length of a [`SceneDescriptor`]: place embedding, featureless channel,
    /// nuisance channels.
    pub fn descriptor_dim(&self) -> usize {
        self.n_places() + 1 + self.descriptor.nuisance_dims
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn domain(&self, id: &str) -> Result<&Domain> {
        self.domains
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::Config(format!("world has no domain `{id}`")))
    }

    fn check_viewpoint(&self, v: usize) -> Result<()> {
        if v >= self.n_viewpoints {
            Err(Error::Index {
                index: v,
                len: self.n_viewpoints,
            })
        } else {
            Ok(())
        }
    }

    /// Classifier output before domain noise:
    /// `(1 - f) * row + f * uniform`, then the domain's confusion blend.
    pub fn expected_observation(&self, v: usize, domain: &Domain) -> Result<Pdv> {
        self.check_viewpoint(v)?;
        let row = &self.obs.confusion[self.place_of[v]];
        let f = self.obs.featureless[v];
        let w = domain.confusion_blend;
        let u = 1.0 / row.len() as f64;
        let values = row
            .iter()
            .map(|&p| {
                let flat = (1.0 - f) * p + f * u;
                (1.0 - w) * flat + w * u
            })
            .collect();
        Pdv::normalize(values)
    }

    /// Samples the simulated classifier PDV at viewpoint `v`.
    pub fn observe(&self, v: usize, domain: &Domain, rng: &mut Rng) -> Result<Pdv> {
        let expected = self.expected_observation(v, domain)?;
        let s = domain.shift_strength;
        if s == 0.0 {
            return Ok(expected);
        }
        let gamma = Gamma::new(1.0 / s, s)
            .map_err(|e| Error::Domain(format!("invalid shift strength {s}: {e}")))?;
        let noisy: Vec<f64> = expected
            .as_slice()
            .iter()
            .map(|&p| p * gamma.sample(rng))
            .collect();
        match Pdv::normalize(noisy) {
            Ok(p) => Ok(p),
            // every draw underflowed; fall back to the noiseless report
            Err(_) => Ok(expected),
        }
    }

    /// Descriptor without noise.
    pub fn clean_descriptor(&self, v: usize) -> Result<SceneDescriptor> {
        self.check_viewpoint(v)?;
        let f = self.obs.featureless[v];
        let mut values = vec![0.0; self.descriptor_dim()];
        values[self.place_of[v]] = 1.0 - f;
        values[self.n_places()] = f;
        Ok(SceneDescriptor(values))
    }

    /// Noise standard deviation of descriptors in `domain`.
    pub fn descriptor_sigma(&self, domain: &Domain) -> f64 {
        self.descriptor.noise_base + self.descriptor.noise_per_shift * domain.shift_strength
    }

    /// Samples the scene descriptor at `v`: clean descriptor plus isotropic
    /// Gaussian noise whose scale grows with the domain shift.
    pub fn descriptor(&self, v: usize, domain: &Domain, rng: &mut Rng) -> Result<SceneDescriptor> {
        let mut d = self.clean_descriptor(v)?;
        let sigma = self.descriptor_sigma(domain);
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma)
                .map_err(|e| Error::Domain(format!("invalid descriptor noise {sigma}: {e}")))?;
            d.0.iter_mut().for_each(|x| *x += normal.sample(rng));
        }
        Ok(d)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_json()?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = WorldFile {
            n_viewpoints: self.n_viewpoints,
            place_len_m: self.place_len_m,
            confusion: self.obs.confusion.clone(),
            featureless: self
                .obs
                .featureless
                .iter()
                .map(|&f| FeaturelessEntry::Degree(f))
                .collect(),
            descriptor: self.descriptor.clone(),
            domains: self.domains.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::parse("world json", e))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: WorldFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            Error::parse(
                "world json",
                format!(
                    "field `{}` (line {}, column {}): {}",
                    e.path(),
                    inner.line(),
                    inner.column(),
                    inner
                ),
            )
        })?;
        let featureless = resolve_featureless(file.featureless, file.n_viewpoints)?;
        TrajectoryWorld::new(
            file.n_viewpoints,
            file.place_len_m,
            ObservationModel {
                confusion: file.confusion,
                featureless,
            },
            file.descriptor,
            file.domains,
        )
    }
}

/// On-disk world layout.
#[derive(Debug, Serialize, Deserialize)]
struct WorldFile {
    n_viewpoints: usize,
    place_len_m: usize,
    confusion: Vec<Vec<f64>>,
    featureless: Vec<FeaturelessEntry>,
    #[serde(default)]
    descriptor: DescriptorSpec,
    #[serde(default)]
    domains: Vec<Domain>,
}

/// Either a bare degree (viewpoint given by position) or a timestamped record
/// as produced when discretizing a logged image stream.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum FeaturelessEntry {
    Degree(f64),
    Record {
        viewpoint: usize,
        featureless: f64,
        #[serde(default)]
        timestamp: f64,
    },
}

/// Turns the file's featureless entries into a dense per-viewpoint vector.
/// Duplicate records for one viewpoint keep the latest timestamp.
fn resolve_featureless(entries: Vec<FeaturelessEntry>, n: usize) -> Result<Vec<f64>> {
    if entries
        .iter()
        .all(|e| matches!(e, FeaturelessEntry::Degree(_)))
    {
        return Ok(entries
            .into_iter()
            .map(|e| match e {
                FeaturelessEntry::Degree(f) => f,
                FeaturelessEntry::Record { .. } => unreachable!(),
            })
            .collect());
    }
    let mut latest: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for (pos, e) in entries.into_iter().enumerate() {
        let (v, f, ts) = match e {
            FeaturelessEntry::Degree(f) => (pos, f, f64::NEG_INFINITY),
            FeaturelessEntry::Record {
                viewpoint,
                featureless,
                timestamp,
            } => (viewpoint, featureless, timestamp),
        };
        match latest.get(&v) {
            Some(&(_, prev)) if prev > ts => {}
            Some(_) => {
                log::debug!("viewpoint {v}: duplicate record, keeping timestamp {ts}");
                latest.insert(v, (f, ts));
            }
            None => {
                latest.insert(v, (f, ts));
            }
        }
    }
    if latest.len() != n || latest.keys().next_back().is_some_and(|&v| v >= n) {
        return Err(Error::Validation(format!(
            "featureless records cover {} distinct viewpoints, expected exactly 0..{n}",
            latest.len()
        )));
    }
    Ok(latest.into_values().map(|(f, _)| f).collect())
}
