mod inspect;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use nbv_core::eval::{self, BenchmarkConfig, ExperimentConfig, ResultTable};
use nbv_core::planner::{EnvConfig, EpisodeEnvironment, PlannerVariant};
use nbv_core::proxy::{self, ActionClassifier, ClassifierConfig, LabelConfig};
use nbv_core::rl::{self, Checkpoint, DqnConfig, TrainControl};
use nbv_core::world::{self, TrajectoryWorld, WorldConfig};

use crate::manifest::{beside, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "nbv", version, about = "Next-best-view planning for active place recognition on synthetic routes")]
struct Cli {
    /// Directory for outputs whose path is not given explicitly.
    #[arg(long, global = true, env = "NBV_OUT_DIR", default_value = "nbv-out")]
    out_dir: PathBuf,

    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic trajectory world.
    GenWorld(GenWorldArgs),
    /// Train the action classifier or a planner.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Evaluate planners across domains.
    Eval(EvalArgs),
    /// Print one evaluated episode step by step.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct GenWorldArgs {
    /// World config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    viewpoints: Option<usize>,
    #[arg(long)]
    place_len: Option<usize>,
    #[arg(long)]
    featureless: Option<f64>,
    #[arg(long)]
    max_action: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Subcommand)]
enum TrainCommand {
    /// Label proxy episodes and fit the descriptor -> action classifier.
    Proxy(TrainProxyArgs),
    /// Train a DQN planner.
    Dqn(TrainDqnArgs),
}

#[derive(Debug, Args)]
struct TrainProxyArgs {
    #[arg(long)]
    world: PathBuf,
    /// Classifier config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    min_accuracy: Option<f64>,
    /// Label with sampled instead of expected observations.
    #[arg(long)]
    sampled: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the labeled dataset as CSV.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainDqnArgs {
    #[arg(long, value_parser = parse_variant)]
    variant: PlannerVariant,
    #[arg(long)]
    world: PathBuf,
    /// Action classifier weights (needed by ilc_only and proposed).
    #[arg(long)]
    classifier: Option<PathBuf>,
    /// DQN config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    domain: Option<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Training log CSV (defaults next to the weights).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Checkpoint file (defaults next to the weights).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    checkpoint_every: u64,
    /// Continue from the checkpoint file.
    #[arg(long)]
    resume: bool,
    /// Stop after this many episodes, leaving a checkpoint behind.
    #[arg(long, hide = true)]
    stop_after: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// Full synthetic benchmark: train every planner, then evaluate five
    /// shifted domains with all five planners.
    PaperShape,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Experiment config JSON; flags override its fields.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    world: Option<PathBuf>,
    /// Comma-separated planner names.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    planners: Option<Vec<PlannerVariant>>,
    /// Comma-separated domain ids.
    #[arg(long, value_delimiter = ',')]
    domains: Option<Vec<String>>,
    /// Episodes per planner and domain.
    #[arg(long)]
    episodes: Option<usize>,
    /// Training episodes per planner (preset only).
    #[arg(long)]
    train_episodes: Option<u64>,
    /// Proxy samples (preset only).
    #[arg(long)]
    proxy_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Planner weights as `variant=path`; repeatable.
    #[arg(long = "weights", value_parser = parse_weights)]
    weights: Vec<(PlannerVariant, PathBuf)>,
    #[arg(long)]
    classifier: Option<PathBuf>,
    /// Score ranks beyond this shortlist length as zero.
    #[arg(long)]
    shortlist: Option<usize>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Drop per-step traces from raw.jsonl.
    #[arg(long)]
    no_trace: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// `raw.jsonl:N`, N being the 0-based record index.
    #[arg(long)]
    episode: String,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

fn parse_variant(s: &str) -> std::result::Result<PlannerVariant, String> {
    s.parse().map_err(|e: nbv_core::Error| e.to_string())
}

fn parse_weights(s: &str) -> std::result::Result<(PlannerVariant, PathBuf), String> {
    let (v, p) = s
        .split_once('=')
        .ok_or_else(|| format!("expected `variant=path`, got `{s}`"))?;
    Ok((parse_variant(v)?, PathBuf::from(p)))
}

/// Errors the user can fix by changing flags or inputs.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<nbv_core::Error>() {
            return if e.is_usage() { 2 } else { 1 };
        }
    }
    1
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(nbv_core::Error::MissingArtifact {
            name: "config file".into(),
            path: path.to_path_buf(),
        }
        .into());
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| usage(format!("{}: field `{}`: {}", path.display(), e.path(), e.inner())))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn gen_world(args: GenWorldArgs) -> Result<()> {
    let mut cfg: WorldConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => WorldConfig::default(),
    };
    if let Some(n) = args.viewpoints {
        cfg.n_viewpoints = n;
    }
    if let Some(l) = args.place_len {
        cfg.place_len_m = l;
    }
    if let Some(f) = args.featureless {
        cfg.featureless_fraction = f;
    }
    if let Some(m) = args.max_action {
        cfg.max_action_m = m;
    }
    let w = world::generate_world(&cfg, args.seed)?;
    ensure_parent(&args.output)?;
    w.save(&args.output)?;

    let mut m = RunManifest::start(serde_json::to_value(&cfg)?);
    m.seed("world", args.seed);
    if let Some(p) = &args.config {
        m.input(p)?;
    }
    m.artifact(&args.output)?;
    m.finish(&beside(&args.output))?;
    println!(
        "wrote {} ({} viewpoints, {} places)",
        args.output.display(),
        w.n_viewpoints(),
        w.n_places()
    );
    Ok(())
}

fn training_domain(w: &TrajectoryWorld, id: Option<&str>) -> Result<world::Domain> {
    match id {
        Some(id) => Ok(w.domain(id)?.clone()),
        None => Ok(w
            .domains()
            .iter()
            .find(|d| d.shift_strength == 0.0)
            .cloned()
            .unwrap_or_else(world::Domain::training)),
    }
}

fn train_proxy(args: TrainProxyArgs, out_dir: &Path) -> Result<()> {
    let w = TrajectoryWorld::load(&args.world)?;
    let mut cfg: ClassifierConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => ClassifierConfig::default(),
    };
    cfg.seed = args.seed;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if args.min_accuracy.is_some() {
        cfg.min_heldout_accuracy = args.min_accuracy;
    }
    let label = LabelConfig {
        sampled: args.sampled,
        ..LabelConfig::default()
    };
    let domain = training_domain(&w, args.domain.as_deref())?;
    let actions = EnvConfig::default().actions;
    let ds = proxy::build_proxy_dataset(&w, &domain, &actions, args.samples, args.seed, &label)?;
    let (clf, report) = proxy::train_action_classifier(&ds, &cfg)?;

    let output = args.output.unwrap_or_else(|| out_dir.join("classifier.json"));
    ensure_parent(&output)?;
    clf.save(&output, &actions, args.seed)?;
    let mut m = RunManifest::start(serde_json::json!({
        "classifier": cfg,
        "label": label,
        "samples": args.samples,
        "domain": domain.id,
        "report": report,
    }));
    m.seed("proxy", args.seed).input(&args.world)?;
    m.artifact(&output)?;
    if let Some(p) = &args.dataset {
        ensure_parent(p)?;
        ds.save_csv(p)?;
        m.artifact(p)?;
    }
    m.finish(&beside(&output))?;
    println!(
        "held-out accuracy {:.4} (train {:.4}, {} / {} records)",
        report.heldout_accuracy, report.train_accuracy, report.n_train, report.n_heldout
    );
    println!("wrote {}", output.display());
    Ok(())
}

fn train_dqn(args: TrainDqnArgs, out_dir: &Path) -> Result<()> {
    let Some(layout) = args.variant.layout() else {
        return Err(usage(format!(
            "{} is not a learned planner; choose olc_only, ilc_only or proposed",
            args.variant
        )));
    };
    let w = Arc::new(TrajectoryWorld::load(&args.world)?);
    let mut cfg: DqnConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => DqnConfig::default(),
    };
    if let Some(e) = args.episodes {
        cfg.episodes = e;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let classifier = match &args.classifier {
        Some(p) => Some(Arc::new(ActionClassifier::load(p)?)),
        None if args.variant == PlannerVariant::OlcOnly => None,
        None => return Err(usage(format!("--classifier is required for {}", args.variant))),
    };
    let domain = training_domain(&w, args.domain.as_deref())?;
    let env_cfg = EnvConfig::default();
    let mut env = EpisodeEnvironment::simulated(w, domain.clone(), env_cfg.clone(), layout, classifier)?;

    let output = args
        .output
        .unwrap_or_else(|| out_dir.join(format!("dqn_{}.json", args.variant)));
    ensure_parent(&output)?;
    let log_path = args.log.unwrap_or_else(|| output.with_extension("log.csv"));
    let ckpt_path = args.checkpoint.unwrap_or_else(|| output.with_extension("ckpt"));
    let resume = if args.resume {
        Some(Checkpoint::load(&ckpt_path)?)
    } else {
        None
    };
    let control = TrainControl {
        checkpoint_path: Some(ckpt_path.clone()),
        checkpoint_every: args.checkpoint_every,
        stop_after: args.stop_after,
        resume,
    };
    let out = rl::train_dqn_with(&mut env, &cfg, control)?;
    if !out.finished {
        println!(
            "stopped after {} episodes; checkpoint at {}",
            out.log.len(),
            ckpt_path.display()
        );
        return Ok(());
    }
    let snapshot = serde_json::json!({
        "variant": args.variant,
        "dqn": cfg,
        "env": env_cfg,
        "domain": domain.id,
    });
    out.net.save(&output, cfg.seed, snapshot.clone())?;
    rl::write_log_csv(&out.log, &log_path)?;

    let mut m = RunManifest::start(snapshot);
    m.seed("dqn", cfg.seed).input(&args.world)?;
    if let Some(p) = &args.classifier {
        m.input(p)?;
    }
    m.artifact(&output)?.artifact(&log_path)?;
    m.finish(&beside(&output))?;
    let tail = &out.log[out.log.len().saturating_sub(cfg.mrr_window)..];
    let mean_reward = tail.iter().map(|l| l.reward).sum::<f64>() / tail.len().max(1) as f64;
    println!(
        "trained {} for {} episodes; recent mean reward {mean_reward:.3}",
        args.variant,
        out.log.len()
    );
    println!("wrote {} and {}", output.display(), log_path.display());
    Ok(())
}

fn write_results(
    table: &ResultTable,
    dir: &Path,
    mut m: RunManifest,
) -> Result<()> {
    for p in table.write_all(dir)? {
        m.artifact(&p)?;
    }
    m.finish(&dir.join("manifest.json"))?;
    print!("{}", table.render());
    println!("wrote results to {}", dir.display());
    Ok(())
}

fn eval_preset(args: &EvalArgs, dir: &Path) -> Result<()> {
    let mut cfg = BenchmarkConfig::default();
    if let Some(n) = args.episodes {
        cfg.eval_episodes = n;
    }
    if let Some(n) = args.train_episodes {
        cfg.dqn.episodes = n;
    }
    if let Some(n) = args.proxy_samples {
        cfg.proxy_samples = n;
    }
    if let Some(s) = args.seed {
        cfg.eval_seed = s;
    }
    cfg.shortlist = args.shortlist.or(cfg.shortlist);
    let trained = eval::train_benchmark(&cfg)?;
    println!(
        "action classifier held-out accuracy {:.4}",
        trained.classifier_report.heldout_accuracy
    );

    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut m = RunManifest::start(serde_json::to_value(&cfg)?);
    m.seed("world", cfg.world_seed)
        .seed("dqn", cfg.dqn.seed)
        .seed("classifier", cfg.classifier.seed)
        .seed("eval", cfg.eval_seed);
    let art = &trained.artifacts;
    let world_path = dir.join("world.json");
    art.world.save(&world_path)?;
    m.artifact(&world_path)?;
    let clf_path = dir.join("classifier.json");
    art.classifier
        .as_ref()
        .expect("benchmark trains a classifier")
        .save(&clf_path, &cfg.env.actions, cfg.classifier.seed)?;
    m.artifact(&clf_path)?;
    for (v, net) in &art.nets {
        let path = dir.join(format!("dqn_{v}.json"));
        net.save(&path, cfg.dqn.seed, serde_json::json!({ "variant": v, "dqn": cfg.dqn }))?;
        m.artifact(&path)?;
        let log_path = dir.join(format!("dqn_{v}.log.csv"));
        rl::write_log_csv(&trained.logs[v], &log_path)?;
        m.artifact(&log_path)?;
    }
    let table = eval::evaluate_benchmark(&cfg, &trained)?;
    write_results(&table, dir, m)
}

fn eval_experiment(args: &EvalArgs, dir: &Path) -> Result<()> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(w) = &args.world {
        cfg.world = Some(w.clone());
    }
    if let Some(p) = &args.planners {
        cfg.planners = p.clone();
    }
    if let Some(d) = &args.domains {
        cfg.domains = d.clone();
    }
    if let Some(n) = args.episodes {
        cfg.episodes = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    for (v, p) in &args.weights {
        cfg.weights.insert(*v, p.clone());
    }
    if let Some(c) = &args.classifier {
        cfg.classifier = Some(c.clone());
    }
    if args.shortlist.is_some() {
        cfg.shortlist = args.shortlist;
    }
    if args.no_trace {
        cfg.trace = false;
    }
    cfg.output = Some(dir.to_path_buf());
    let art = cfg.load_artifacts()?;

    let mut m = RunManifest::start(serde_json::to_value(&cfg)?);
    m.seed("eval", cfg.seed);
    if cfg.world.is_none() {
        m.seed("world", cfg.world_seed);
    }
    let inputs: Vec<&PathBuf> = args
        .config
        .iter()
        .chain(cfg.world.iter())
        .chain(cfg.classifier.iter())
        .chain(cfg.weights.values())
        .collect();
    for p in inputs {
        m.input(p)?;
    }
    let table = eval::run_experiment(&cfg, &art)?;
    write_results(&table, dir, m)
}

fn eval(args: EvalArgs, out_dir: &Path) -> Result<()> {
    if args.config.is_none() && args.preset.is_none() && args.world.is_none() {
        return Err(usage("eval needs --config, --preset or --world"));
    }
    let dir = args.output.clone().unwrap_or_else(|| out_dir.join("eval"));
    let threads = match args.parallelism {
        Some(0) => return Err(usage("--parallelism must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("starting worker threads")?;
    pool.install(|| match args.preset {
        Some(Preset::PaperShape) => eval_preset(&args, &dir),
        None => eval_experiment(&args, &dir),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenWorld(a) => gen_world(a),
        Command::Train(TrainCommand::Proxy(a)) => train_proxy(a, &cli.out_dir),
        Command::Train(TrainCommand::Dqn(a)) => train_dqn(a, &cli.out_dir),
        Command::Eval(a) => eval(a, &cli.out_dir),
        Command::Inspect(a) => inspect::run(&a.episode, matches!(a.format, Format::Csv)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
