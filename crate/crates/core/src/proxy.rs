//! Single-action proxy task and the action classifier.
//!
//! Every start viewpoint is labeled with the action that, in a one-step
//! episode, leaves the true place ranked highest in the final place belief.
//! A small classifier then learns descriptor -> best action; its softmax
//! output is the compact action-level cue (ILC) handed to the planner.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actions::ActionSet;
use crate::bayes::{viewpoint_to_place, BayesFilter, MotionModel};
use crate::error::{Error, Result};
use crate::nn::{Activation, Grads, Mlp, Optimizer, WeightsFile};
use crate::pdv::{argmax, Pdv};
use crate::seed::{self, tag, Rng};
use crate::world::{Domain, SceneDescriptor, TrajectoryWorld};

/// How single-step episodes are simulated while labeling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LabelConfig {
    pub motion: MotionModel,
    /// Draw noisy observations instead of using the expected classifier
    /// output.
    #[serde(default)]
    pub sampled: bool,
}

/// Reciprocal rank of the true place after observing at `v`, moving
/// `action_m` and observing again, starting from a uniform belief.
pub fn vpr_score(
    world: &TrajectoryWorld,
    v: usize,
    action_m: usize,
    domain: &Domain,
    cfg: &LabelConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let end = v + action_m;
    if end >= world.n_viewpoints() {
        return Err(Error::Index {
            index: end,
            len: world.n_viewpoints(),
        });
    }
    let observe = |u: usize, rng: &mut Rng| {
        if cfg.sampled {
            world.observe(u, domain, rng)
        } else {
            world.expected_observation(u, domain)
        }
    };
    let mut filter = BayesFilter::new(world.n_viewpoints(), cfg.motion);
    filter.correct_with_place_pdv(&observe(v, rng)?, world)?;
    filter.predict(action_m)?;
    filter.correct_with_place_pdv(&observe(end, rng)?, world)?;
    let place = viewpoint_to_place(filter.belief(), world)?;
    Ok(1.0 / place.rank_of(world.place_of(end)) as f64)
}

/// Best single action at `v`, or `None` when some action would leave the
/// trajectory. Ties go to the smallest action index.
pub fn best_action_label(
    world: &TrajectoryWorld,
    v: usize,
    domain: &Domain,
    actions: &ActionSet,
    cfg: &LabelConfig,
    rng: &mut Rng,
) -> Result<Option<usize>> {
    if v >= world.n_viewpoints() {
        return Err(Error::Index {
            index: v,
            len: world.n_viewpoints(),
        });
    }
    if v + actions.max_meters() >= world.n_viewpoints() {
        return Ok(None);
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (a, &m) in actions.as_slice().iter().enumerate() {
        let s = vpr_score(world, v, m, domain, cfg, rng)?;
        if s > best_score {
            best = a;
            best_score = s;
        }
    }
    Ok(Some(best))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyRecord {
    pub viewpoint: usize,
    pub domain: String,
    pub descriptor: SceneDescriptor,
    pub best_action: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProxyDataset {
    pub n_actions: usize,
    pub records: Vec<ProxyRecord>,
}

impl ProxyDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Count of records per label.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_actions];
        for r in &self.records {
            h[r.best_action] += 1;
        }
        h
    }

    /// Writes `viewpoint,domain,d_0..d_k,label`.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let dim = self.records.first().map_or(0, |r| r.descriptor.len());
        let mut header = vec!["viewpoint".to_string(), "domain".to_string()];
        header.extend((0..dim).map(|i| format!("d_{i}")));
        header.push("label".into());
        let csv_err = |e: csv::Error| Error::parse(path.display().to_string(), e);
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![r.viewpoint.to_string(), r.domain.clone()];
            row.extend(r.descriptor.as_slice().iter().map(|x| x.to_string()));
            row.push(r.best_action.to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>, n_actions: usize) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let ctx = path.display().to_string();
        let mut records = vec![];
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| Error::parse(&ctx, e))?;
            let at = |what: &str, e: &dyn std::fmt::Display| {
                Error::parse(&ctx, format!("record {}: {what}: {e}", line + 1))
            };
            if row.len() < 3 {
                return Err(at("row", &"too few columns"));
            }
            let viewpoint = row[0].parse().map_err(|e| at("viewpoint", &e))?;
            let label: usize = row[row.len() - 1].parse().map_err(|e| at("label", &e))?;
            if label >= n_actions {
                return Err(at("label", &format!("{label} >= {n_actions}")));
            }
            let descriptor = (2..row.len() - 1)
                .map(|i| row[i].parse::<f64>().map_err(|e| at("descriptor", &e)))
                .collect::<Result<Vec<_>>>()?;
            records.push(ProxyRecord {
                viewpoint,
                domain: row[1].to_string(),
                descriptor: SceneDescriptor(descriptor),
                best_action: label,
            });
        }
        Ok(ProxyDataset { n_actions, records })
    }
}

/// Samples `n_samples` start viewpoints, resampling those whose longest
/// action would leave the trajectory, and labels each one.
pub fn build_proxy_dataset(
    world: &TrajectoryWorld,
    domain: &Domain,
    actions: &ActionSet,
    n_samples: usize,
    seed: u64,
    cfg: &LabelConfig,
) -> Result<ProxyDataset> {
    let limit = world.n_viewpoints().saturating_sub(actions.max_meters());
    if limit == 0 {
        return Err(Error::Config(
            "world is shorter than the longest action; no valid start viewpoints".into(),
        ));
    }
    let records = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::stream(seed, &[tag::PROXY, i]);
            loop {
                let v = rng.random_range(0..world.n_viewpoints());
                if let Some(label) = best_action_label(world, v, domain, actions, cfg, &mut rng)? {
                    let descriptor = world.descriptor(v, domain, &mut rng)?;
                    return Ok(ProxyRecord {
                        viewpoint: v,
                        domain: domain.id.clone(),
                        descriptor,
                        best_action: label,
                    });
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProxyDataset {
        n_actions: actions.len(),
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub holdout_fraction: f64,
    pub temperature: f64,
    /// Fail when held-out accuracy ends below this value.
    pub min_heldout_accuracy: Option<f64>,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![64],
            activation: Activation::Softplus,
            lr: 3e-3,
            epochs: 40,
            batch_size: 64,
            holdout_fraction: 0.2,
            temperature: 1.0,
            min_heldout_accuracy: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_train: usize,
    pub n_heldout: usize,
    pub train_accuracy: f64,
    pub heldout_accuracy: f64,
    pub final_loss: f64,
}

/// Descriptor -> action PDV model.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionClassifier {
    net: Mlp,
    temperature: f64,
}

impl ActionClassifier {
    pub fn new(net: Mlp, temperature: f64) -> Self {
        ActionClassifier { net, temperature }
    }

    /// All-zero weights: predicts the uniform PDV.
    pub fn zeros(descriptor_dim: usize, hidden: &[usize], n_actions: usize) -> Self {
        let mut sizes = vec![descriptor_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_actions);
        ActionClassifier::new(Mlp::zeros(&sizes, Activation::Softplus), 1.0)
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn n_actions(&self) -> usize {
        self.net.output_dim()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Mean cross-entropy of `labels` under the tempered softmax, and its
    /// gradient.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Grads)> {
        let cache = self.net.forward_cached(x)?;
        let mut probs = cache.output.mapv(|z| z / self.temperature);
        softmax_rows(&mut probs);
        let b = labels.len() as f64;
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            loss -= probs[[i, y]].max(1e-300).ln();
            probs[[i, y]] -= 1.0;
        }
        let grad_out = probs / (b * self.temperature);
        Ok((loss / b, self.net.backward(&cache, &grad_out)))
    }

    pub fn save(&self, path: impl AsRef<Path>, actions: &ActionSet, seed: u64) -> Result<()> {
        let mut f = self.net.to_weights_file(
            seed,
            serde_json::json!({
                "temperature": self.temperature,
                "actions": actions.as_slice(),
            }),
        );
        f.kind = "action_classifier".into();
        f.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = WeightsFile::load(path)?;
        if f.kind != "action_classifier" {
            return Err(Error::Validation(format!(
                "expected an action_classifier weights file, found kind `{}`",
                f.kind
            )));
        }
        let temperature = f.config["temperature"].as_f64().unwrap_or(1.0);
        Ok(ActionClassifier::new(Mlp::from_weights_file(&f)?, temperature))
    }
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Action-specific PDV for a scene descriptor.
pub fn ilc(clf: &ActionClassifier, desc: &SceneDescriptor) -> Result<Pdv> {
    let logits = clf.net.forward(desc.as_slice())?;
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits
        .iter()
        .map(|z| ((z - m) / clf.temperature).exp())
        .collect();
    Pdv::normalize(exp)
}

fn design_matrix(records: &[&ProxyRecord], dim: usize) -> Array2<f64> {
    let mut x = Array2::zeros((records.len(), dim));
    for (i, r) in records.iter().enumerate() {
        x.row_mut(i)
            .iter_mut()
            .zip(r.descriptor.as_slice())
            .for_each(|(d, s)| *d = *s);
    }
    x
}

fn accuracy(clf: &ActionClassifier, records: &[&ProxyRecord], dim: usize) -> Result<f64> {
    if records.is_empty() {
        return Ok(0.0);
    }
    let logits = clf.net.forward_batch(design_matrix(records, dim).view())?;
    let hits = logits
        .axis_iter(Axis(0))
        .zip(records)
        .filter(|(row, r)| argmax(row.as_slice().unwrap()) == r.best_action)
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Mini-batch Adam on cross-entropy. Deterministic for a fixed
/// `(dataset, cfg)`.
pub fn train_action_classifier(
    ds: &ProxyDataset,
    cfg: &ClassifierConfig,
) -> Result<(ActionClassifier, TrainReport)> {
    let first = ds
        .records
        .first()
        .ok_or_else(|| Error::Config("cannot train a classifier on an empty dataset".into()))?;
    let dim = first.descriptor.len();
    if let Some(r) = ds.records.iter().find(|r| r.descriptor.len() != dim) {
        return Err(Error::Dimension {
            context: "proxy descriptor",
            expected: dim,
            got: r.descriptor.len(),
        });
    }
    if !(cfg.lr > 0.0 && cfg.temperature > 0.0 && cfg.batch_size > 0) {
        return Err(Error::Config("classifier lr, temperature and batch size must be positive".into()));
    }
    let mut rng = seed::stream(cfg.seed, &[tag::TRAIN]);
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut rng);
    let n_held = ((ds.len() as f64) * cfg.holdout_fraction).round() as usize;
    let n_held = n_held.min(ds.len().saturating_sub(1));
    let (held_idx, train_idx) = idx.split_at(n_held);
    let train: Vec<&ProxyRecord> = train_idx.iter().map(|&i| &ds.records[i]).collect();
    let held: Vec<&ProxyRecord> = held_idx.iter().map(|&i| &ds.records[i]).collect();

    let mut sizes = vec![dim];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(ds.n_actions);

    let hist = ds.label_histogram();
    if hist.iter().filter(|&&c| c > 0).count() == 1 {
        let only = first.best_action;
        log::warn!("proxy dataset has a single label ({only}); returning a constant classifier");
        let mut net = Mlp::zeros(&sizes, cfg.activation);
        let mut params = net.flat_params();
        // output bias sits at the end of the flat vector
        let bias_start = params.len() - ds.n_actions;
        params[bias_start + only] = (0.9 * (ds.n_actions.max(2) - 1) as f64 / 0.1).ln();
        net.set_flat_params(&params)?;
        let clf = ActionClassifier::new(net, 1.0);
        let report = TrainReport {
            n_train: train.len(),
            n_heldout: held.len(),
            train_accuracy: accuracy(&clf, &train, dim)?,
            heldout_accuracy: accuracy(&clf, &held, dim)?,
            final_loss: 0.0,
        };
        return Ok((clf, report));
    }

    let mut clf = ActionClassifier::new(
        Mlp::init(&sizes, cfg.activation, &mut rng),
        cfg.temperature,
    );
    let mut opt = Optimizer::adam(cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut final_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ProxyRecord> = chunk.iter().map(|&i| train[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|r| r.best_action).collect();
            let x = design_matrix(&batch, dim);
            let (loss, grads) = clf.loss_and_grad(x.view(), &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { update: 0, loss });
            }
            total += loss * batch.len() as f64;
            opt.step(&mut clf.net, &grads);
        }
        final_loss = total / train.len() as f64;
    }
    let report = TrainReport {
        n_train: train.len(),
        n_heldout: held.len(),
        train_accuracy: accuracy(&clf, &train, dim)?,
        heldout_accuracy: accuracy(&clf, &held, dim)?,
        final_loss,
    };
    if let Some(min) = cfg.min_heldout_accuracy {
        if report.heldout_accuracy < min {
            return Err(Error::Validation(format!(
                "classifier held-out accuracy {:.3} below required {min:.3}",
                report.heldout_accuracy
            )));
        }
    }
    Ok((clf, report))
}
