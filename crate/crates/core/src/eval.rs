//! MRR metric, bootstrap intervals and the planner-by-domain experiment
//! harness.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{run_episode, EnvConfig, EpisodeEnvironment, EpisodeResult, Planner, PlannerVariant};
use crate::proxy::{
    build_proxy_dataset, train_action_classifier, ActionClassifier, ClassifierConfig, LabelConfig, TrainReport,
};
use crate::rl::{train_dqn, DqnConfig, EpisodeLog, QNetwork};
use crate::seed::{self, tag};
use crate::world::{generate_world, Domain, TrajectoryWorld, WorldConfig};

/// Reciprocal rank, or zero when `rank` falls outside the shortlist.
pub fn reciprocal_rank(rank: usize, shortlist: Option<usize>) -> f64 {
    match shortlist {
        Some(k) if rank > k => 0.0,
        _ => 1.0 / rank as f64,
    }
}

pub fn mrr(results: &[EpisodeResult], shortlist: Option<usize>) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Domain("MRR of an empty result list".into()));
    }
    let sum: f64 = results.iter().map(|r| reciprocal_rank(r.rank, shortlist)).sum();
    Ok(sum / results.len() as f64)
}

/// Percentile bootstrap 95% interval of the mean.
pub fn bootstrap_ci(values: &[f64], n_resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Domain("bootstrap of an empty sample".into()));
    }
    if n_resamples < 100 {
        return Err(Error::Config(format!("need at least 100 bootstrap resamples, got {n_resamples}")));
    }
    let mut rng = seed::stream(seed, &[tag::BOOTSTRAP]);
    let n = values.len();
    let mut means: Vec<f64> = (0..n_resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (n_resamples - 1) as f64).round() as usize).min(n_resamples - 1)];
    let mean = values.iter().sum::<f64>() / n as f64;
    // Keep the interval around the sample mean despite rounding in the
    // resampled means.
    Ok((at(0.025).min(mean), at(0.975).max(mean)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// World file; when absent a world is generated from `world_config`.
    pub world: Option<PathBuf>,
    pub world_config: WorldConfig,
    pub world_seed: u64,
    /// Domain ids to evaluate; empty means every domain but the training one.
    pub domains: Vec<String>,
    pub planners: Vec<PlannerVariant>,
    pub episodes: usize,
    pub seed: u64,
    /// Q-network weights per learned planner.
    pub weights: BTreeMap<PlannerVariant, PathBuf>,
    pub classifier: Option<PathBuf>,
    pub env: EnvConfig,
    /// Top-k shortlist; ranks beyond it score zero.
    pub shortlist: Option<usize>,
    pub bootstrap_resamples: usize,
    /// Keep per-step traces in the raw results.
    pub trace: bool,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: None,
            world_config: WorldConfig::default(),
            world_seed: 0,
            domains: vec![],
            planners: PlannerVariant::ALL.to_vec(),
            episodes: 5000,
            seed: 0,
            weights: BTreeMap::new(),
            classifier: None,
            env: EnvConfig::default(),
            shortlist: None,
            bootstrap_resamples: 1000,
            trace: true,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes per cell must be at least 1".into()));
        }
        if self.planners.is_empty() {
            return Err(Error::Config("no planners selected".into()));
        }
        if self.shortlist == Some(0) {
            return Err(Error::Config("shortlist length must be at least 1".into()));
        }
        Ok(())
    }

    /// Loads the world, classifier and Q-networks the planners need. Missing
    /// files are reported before any episode runs.
    pub fn load_artifacts(&self) -> Result<Artifacts> {
        self.validate()?;
        let world = match &self.world {
            Some(p) => TrajectoryWorld::load(p)?,
            None => generate_world(&self.world_config, self.world_seed)?,
        };
        let mut nets = BTreeMap::new();
        for &v in self.planners.iter().filter(|v| v.is_learned()) {
            let path = self.weights.get(&v).ok_or_else(|| Error::MissingArtifact {
                name: format!("{v} weights"),
                path: PathBuf::new(),
            })?;
            nets.insert(v, Arc::new(QNetwork::load(path)?));
        }
        let needs_ilc = self
            .planners
            .iter()
            .any(|v| matches!(v, PlannerVariant::IlcOnly | PlannerVariant::Proposed));
        let classifier = match (&self.classifier, needs_ilc) {
            (Some(p), _) => Some(Arc::new(ActionClassifier::load(p)?)),
            (None, true) => {
                return Err(Error::MissingArtifact {
                    name: "action classifier".into(),
                    path: PathBuf::new(),
                })
            }
            (None, false) => None,
        };
        Ok(Artifacts {
            world: Arc::new(world),
            classifier,
            nets,
        })
    }
}

/// Inputs shared by every episode of an experiment.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub world: Arc<TrajectoryWorld>,
    pub classifier: Option<Arc<ActionClassifier>>,
    pub nets: BTreeMap<PlannerVariant, Arc<QNetwork>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub planner: PlannerVariant,
    pub domain: String,
    pub mrr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub planners: Vec<PlannerVariant>,
    pub domains: Vec<String>,
    /// Row-major: planner, then domain.
    pub cells: Vec<Cell>,
    pub raw: Vec<EpisodeResult>,
}

impl ResultTable {
    pub fn cell(&self, planner: PlannerVariant, domain: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.planner == planner && c.domain == domain)
    }

    /// Planner rows by domain columns; each cell reads `mrr [lo, hi] n`.
    pub fn write_table_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
        let csv_err = |e: csv::Error| Error::parse(path.display().to_string(), e);
        let mut header = vec!["planner".to_string()];
        header.extend(self.domains.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for &p in &self.planners {
            let mut row = vec![p.name().to_string()];
            for d in &self.domains {
                let c = self.cell(p, d).expect("cell for every planner and domain");
                row.push(format!("{:.4} [{:.4}, {:.4}] n={}", c.mrr, c.ci_lo, c.ci_hi, c.episodes));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// One row per cell, full precision.
    pub fn write_long_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
        for c in &self.cells {
            w.serialize(c).map_err(|e| Error::parse(path.display().to_string(), e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_raw_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.raw {
            serde_json::to_writer(&mut w, r).map_err(|e| Error::parse(path.display().to_string(), e))?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes `table.csv`, `long.csv` and `raw.jsonl` into `dir` and returns
    /// their paths.
    pub fn write_all(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let table = dir.join("table.csv");
        let long = dir.join("long.csv");
        let raw = dir.join("raw.jsonl");
        self.write_table_csv(&table)?;
        self.write_long_csv(&long)?;
        self.write_raw_jsonl(&raw)?;
        Ok(vec![table, long, raw])
    }

    /// Plain-text rendering for terminals.
    pub fn render(&self) -> String {
        let mut out = format!("{:<12}", "planner");
        for d in &self.domains {
            out.push_str(&format!(" {d:>24}"));
        }
        out.push('\n');
        for &p in &self.planners {
            out.push_str(&format!("{:<12}", p.name()));
            for d in &self.domains {
                let c = self.cell(p, d).unwrap();
                out.push_str(&format!(" {:>8.4} [{:.3},{:.3}]", c.mrr, c.ci_lo, c.ci_hi));
            }
            out.push('\n');
        }
        out
    }
}

/// Seed of evaluation episode `i`. Shared by all planners and domains so
/// their comparisons use common random numbers.
pub fn eval_episode_seed(seed: u64, i: u64) -> u64 {
    seed::derive(seed, &[tag::EPISODE, 1, i])
}

/// Runs every planner in every selected domain. The result depends only on
/// the config and artifacts, not on the number of worker threads.
pub fn run_experiment(cfg: &ExperimentConfig, art: &Artifacts) -> Result<ResultTable> {
    cfg.validate()?;
    let domains: Vec<Domain> = if cfg.domains.is_empty() {
        art.world
            .domains()
            .iter()
            .filter(|d| d.shift_strength > 0.0)
            .cloned()
            .collect()
    } else {
        cfg.domains
            .iter()
            .map(|id| art.world.domain(id).cloned())
            .collect::<Result<_>>()?
    };
    if domains.is_empty() {
        return Err(Error::Config("no evaluation domains".into()));
    }
    let mut cells = vec![];
    let mut raw = vec![];
    for &variant in &cfg.planners {
        let planner = match variant {
            PlannerVariant::SingleView => Planner::SingleView,
            PlannerVariant::Random => Planner::Random,
            v => {
                let net = art.nets.get(&v).ok_or_else(|| Error::MissingArtifact {
                    name: format!("{v} weights"),
                    path: PathBuf::new(),
                })?;
                Planner::learned(v, net.clone())?
            }
        };
        for domain in &domains {
            let env = EpisodeEnvironment::simulated(
                art.world.clone(),
                domain.clone(),
                cfg.env.clone(),
                planner.layout(),
                art.classifier.clone(),
            )?;
            let results = (0..cfg.episodes as u64)
                .into_par_iter()
                .map_init(
                    || env.clone(),
                    |env, i| run_episode(env, &planner, i, eval_episode_seed(cfg.seed, i), cfg.trace),
                )
                .collect::<Result<Vec<_>>>()?;
            let rr: Vec<f64> = results.iter().map(|r| reciprocal_rank(r.rank, cfg.shortlist)).collect();
            let ci_seed = seed::derive(cfg.seed, &[seed::label_hash(variant.name()), seed::label_hash(&domain.id)]);
            let (ci_lo, ci_hi) = bootstrap_ci(&rr, cfg.bootstrap_resamples, ci_seed)?;
            cells.push(Cell {
                planner: variant,
                domain: domain.id.clone(),
                mrr: mrr(&results, cfg.shortlist)?,
                ci_lo,
                ci_hi,
                episodes: results.len(),
            });
            raw.extend(results);
        }
    }
    Ok(ResultTable {
        planners: cfg.planners.clone(),
        domains: domains.into_iter().map(|d| d.id).collect(),
        cells,
        raw,
    })
}

/// End-to-end synthetic benchmark: world, proxy classifier, one Q-network per
/// learned planner (all on the training domain), then evaluation on the
/// shifted domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub world: WorldConfig,
    pub world_seed: u64,
    pub proxy_samples: usize,
    pub label: LabelConfig,
    pub classifier: ClassifierConfig,
    pub dqn: DqnConfig,
    pub env: EnvConfig,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    pub shortlist: Option<usize>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            world: WorldConfig::default(),
            world_seed: 7,
            proxy_samples: 20_000,
            label: LabelConfig::default(),
            classifier: ClassifierConfig::default(),
            // 50k episodes leave the fused-state planner under-trained
            dqn: DqnConfig {
                episodes: 100_000,
                ..DqnConfig::default()
            },
            env: EnvConfig::default(),
            eval_episodes: 2000,
            eval_seed: 1,
            shortlist: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedBenchmark {
    pub artifacts: Artifacts,
    pub classifier_report: TrainReport,
    pub logs: BTreeMap<PlannerVariant, Vec<EpisodeLog>>,
}

pub fn train_benchmark(cfg: &BenchmarkConfig) -> Result<TrainedBenchmark> {
    let world = Arc::new(generate_world(&cfg.world, cfg.world_seed)?);
    let train = world
        .domains()
        .iter()
        .find(|d| d.shift_strength == 0.0)
        .cloned()
        .unwrap_or_else(Domain::training);
    log::info!("labeling {} proxy samples", cfg.proxy_samples);
    let ds = build_proxy_dataset(
        &world,
        &train,
        &cfg.env.actions,
        cfg.proxy_samples,
        seed::derive(cfg.world_seed, &[tag::PROXY]),
        &cfg.label,
    )?;
    let (clf, classifier_report) = train_action_classifier(&ds, &cfg.classifier)?;
    log::info!("classifier held-out accuracy {:.3}", classifier_report.heldout_accuracy);
    let clf = Arc::new(clf);
    let learned = [PlannerVariant::OlcOnly, PlannerVariant::IlcOnly, PlannerVariant::Proposed];
    let trained = learned
        .par_iter()
        .map(|&v| {
            let mut env = EpisodeEnvironment::simulated(
                world.clone(),
                train.clone(),
                cfg.env.clone(),
                v.layout().unwrap(),
                Some(clf.clone()),
            )?;
            log::info!("training {v} for {} episodes", cfg.dqn.episodes);
            let out = train_dqn(&mut env, &cfg.dqn)?;
            Ok((v, out))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut nets = BTreeMap::new();
    let mut logs = BTreeMap::new();
    for (v, out) in trained {
        nets.insert(v, Arc::new(out.net));
        logs.insert(v, out.log);
    }
    Ok(TrainedBenchmark {
        artifacts: Artifacts {
            world,
            classifier: Some(clf),
            nets,
        },
        classifier_report,
        logs,
    })
}

/// Evaluates a trained benchmark on every shifted domain with all planners.
pub fn evaluate_benchmark(cfg: &BenchmarkConfig, trained: &TrainedBenchmark) -> Result<ResultTable> {
    let exp = ExperimentConfig {
        world_config: cfg.world.clone(),
        world_seed: cfg.world_seed,
        episodes: cfg.eval_episodes,
        seed: cfg.eval_seed,
        env: cfg.env.clone(),
        shortlist: cfg.shortlist,
        trace: false,
        ..ExperimentConfig::default()
    };
    run_experiment(&exp, &trained.artifacts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdv::Pdv;

    fn result(rank: usize) -> EpisodeResult {
        EpisodeResult {
            planner: PlannerVariant::Random,
            domain: "d".into(),
            episode: 0,
            start: 0,
            actions: vec![],
            final_viewpoint: 0,
            true_place: 0,
            rank,
            final_place_pdv: Pdv::uniform(4),
            steps: vec![],
        }
    }

    #[test]
    fn mrr_examples() {
        let rs: Vec<_> = [1, 2, 4].into_iter().map(result).collect();
        assert!((mrr(&rs, None).unwrap() - 1.75 / 3.0).abs() < 1e-15);
        let ones: Vec<_> = (0..5).map(|_| result(1)).collect();
        assert_eq!(mrr(&ones, None).unwrap(), 1.0);
        let far: Vec<_> = (0..5).map(|_| result(9)).collect();
        assert_eq!(mrr(&far, Some(5)).unwrap(), 0.0);
        assert_eq!(mrr(&[result(3)], None).unwrap(), 1.0 / 3.0);
        assert!(matches!(mrr(&[], None), Err(Error::Domain(_))));
    }

    #[test]
    fn bootstrap_constant_and_contains_mean() {
        assert_eq!(bootstrap_ci(&[0.25; 50], 200, 1).unwrap(), (0.25, 0.25));
        let xs: Vec<f64> = (1..=200).map(|i| 1.0 / i as f64).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let (lo, hi) = bootstrap_ci(&xs, 500, 3).unwrap();
        assert!(lo <= mean && mean <= hi && lo < hi);
        assert!(bootstrap_ci(&xs, 10, 3).is_err());
    }
}
