//! Command-line front end: `prepare`, `eigens`, `train`, `evaluate` and
//! `analyze`. Every subcommand validates its inputs, writes a run manifest,
//! then does the work.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{run_experiment, AnalysisContext, Experiment};
use crate::checkpoint::Checkpoint;
use crate::dataio::{self, InputFormat, InteractionDataset, SplitConfig, SplitLabel};
use crate::error::{Error, Result};
use crate::eval::{evaluate_embeddings, EvalOptions, RecallNormalization};
use crate::gde::GdeBases;
use crate::graph::hex;
use crate::pipeline::{train_model, ModelKind, RunConfig};
use crate::spectral::EigenMethod;
use crate::train::LossKind;

/// Environment variable that overrides where spectral bases are cached.
pub const CACHE_ENV: &str = "GDE_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "gde", version, about = "Spectral collaborative filtering with a graph denoising encoder")]
pub struct Cli {
    /// Worker threads. Computation is sequential, so only 1 is accepted.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load interactions, split them and write the split to a directory.
    Prepare(PrepareArgs),
    /// Compute and cache the spectral bases a run configuration needs.
    Eigens(EigensArgs),
    /// Train a model and write its checkpoint, log and test report.
    Train(TrainArgs),
    /// Score a checkpoint against a split.
    Evaluate(EvaluateArgs),
    /// Run one diagnostic experiment.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: InputFormat,
    #[arg(long, default_value_t = 0.2)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.05)]
    pub valid_frac: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EigensArgs {
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub method: Option<EigenMethod>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, value_enum)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Comma-separated cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "10,20")]
    pub k: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Target::Test)]
    pub target: Target,
    #[arg(long, value_enum, default_value_t = RecallNormalization::Truncated)]
    pub normalization: RecallNormalization,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Target {
    Valid,
    Test,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    /// A split directory written by `prepare`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    /// Variation groups for the band experiment.
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Provenance of one CLI invocation, written before any heavy work.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub input_hashes: BTreeMap<String, String>,
    pub tool_version: String,
    pub started_unix: u64,
}

impl RunManifest {
    fn new(subcommand: &str, config: serde_json::Value, seeds: Vec<u64>, input_hashes: BTreeMap<String, String>) -> Self {
        RunManifest {
            subcommand: subcommand.into(),
            config,
            seeds,
            input_hashes,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::config(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn split_file(dir: &Path) -> Result<PathBuf> {
    require_exists(dir, "split directory")?;
    let f = dir.join("pairs.tsv");
    require_exists(&f, "split file")?;
    Ok(f)
}

/// Seed of a split written by `prepare`, when recorded.
fn split_seed(dir: &Path) -> Option<u64> {
    let text = fs::read_to_string(dir.join("split.json")).ok()?;
    serde_json::from_str::<SplitConfig>(&text).ok().map(|c| c.seed)
}

fn cache_dir(split: &Path) -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| split.join("cache"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn prepare(a: &PrepareArgs) -> Result<()> {
    let cfg = SplitConfig::new(a.train_frac, a.valid_frac, a.seed);
    cfg.validate()?;
    require_exists(&a.input, "input")?;
    let source = if a.format == InputFormat::Movielens && a.input.is_dir() {
        a.input.join("u.data")
    } else {
        a.input.clone()
    };
    require_exists(&source, "input")?;
    let hashes = BTreeMap::from([(source.display().to_string(), file_hash(&source)?)]);
    RunManifest::new("prepare", serde_json::to_value(cfg)?, vec![a.seed], hashes).write(&a.out.join("manifest.json"))?;
    let ds = dataio::load_interactions(&a.input, a.format)?;
    let ds = dataio::split(&ds, &cfg)?;
    ds.save_split(&a.out)?;
    write_json(&a.out.join("split.json"), &cfg)?;
    eprintln!("{}", serde_json::to_string(&ds.stats())?);
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig> {
    require_exists(path, "config")?;
    RunConfig::load(path)
}

fn eigens(a: &EigensArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?.with_seed(a.seed);
    if let Some(m) = a.method {
        cfg.eigen.method = m;
    }
    cfg.gde.validate()?;
    let pairs = split_file(&a.split)?;
    let hashes = BTreeMap::from([(pairs.display().to_string(), file_hash(&pairs)?)]);
    RunManifest::new("eigens", serde_json::to_value(&cfg)?, vec![a.seed], hashes).write(&a.out.join("manifest.json"))?;
    let ds = InteractionDataset::load_split(&a.split)?;
    let g = dataio::interaction_matrix(&ds, SplitLabel::Train)?;
    let bases = GdeBases::compute_cached(&g, &cfg.gde, &cfg.eigen, Some(&a.out))?;
    let summary = serde_json::json!({
        "basis_hash": bases.fingerprint(),
        "user_smoothed": bases.user_smoothed.eigenvalues,
        "user_rough": bases.user_rough.eigenvalues,
        "item_smoothed": bases.item_smoothed.eigenvalues,
        "item_rough": bases.item_rough.eigenvalues,
    });
    write_json(&a.out.join("eigenvalues.json"), &summary)
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?.with_seed(a.seed);
    if let Some(l) = a.loss {
        cfg.train.loss = l;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate(a.model)?;
    let pairs = split_file(&a.split)?;
    let hashes = BTreeMap::from([(pairs.display().to_string(), file_hash(&pairs)?)]);
    let snapshot = serde_json::json!({ "model": a.model, "run": cfg.resolved(a.model) });
    RunManifest::new("train", snapshot, vec![a.seed], hashes).write(&a.out.join("manifest.json"))?;

    let ds = InteractionDataset::load_split(&a.split)?;
    let cache = cache_dir(&a.split);
    let trained = train_model(a.model, &cfg, &ds, Some(&cache))?;
    trained.history.write_csv(&a.out.join("train_log.csv"))?;
    trained.checkpoint.save(&a.out.join("checkpoint.bin"))?;
    let report = trained.evaluate(&ds, SplitLabel::Test, &EvalOptions::default())?;
    fs::write(a.out.join("report.json"), report.to_json()?)?;
    eprintln!(
        "best epoch {}: test recall@20 {:.4} ndcg@20 {:.4}",
        trained.history.best_epoch,
        report.recall(20),
        report.ndcg(20)
    );
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(Error::config("--k needs positive cutoffs"));
    }
    require_exists(&a.checkpoint, "checkpoint")?;
    let pairs = split_file(&a.split)?;
    let hashes = BTreeMap::from([
        (pairs.display().to_string(), file_hash(&pairs)?),
        (a.checkpoint.display().to_string(), file_hash(&a.checkpoint)?),
    ]);
    let snapshot = serde_json::json!({
        "k": a.k,
        "target": format!("{:?}", a.target).to_lowercase(),
        "normalization": a.normalization,
    });
    RunManifest::new("evaluate", snapshot, Vec::new(), hashes).write(&a.out.with_extension("manifest.json"))?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let ds = InteractionDataset::load_split(&a.split)?;
    let target = match a.target {
        Target::Valid => SplitLabel::Valid,
        Target::Test => SplitLabel::Test,
    };
    let opts = EvalOptions {
        ks: a.k.clone(),
        normalization: a.normalization,
        per_user: false,
    };
    let report = evaluate_embeddings(&ckpt.user_output, &ckpt.item_output, &ds, target, &opts)?;
    fs::write(&a.out, report.to_json()?).map_err(|e| Error::io(format!("writing {}", a.out.display()), e))
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(g) = a.groups {
        cfg.analysis.groups = g;
    }
    if cfg.analysis.groups == 0 {
        return Err(Error::config("--groups must be positive"));
    }
    if a.seeds.is_empty() {
        return Err(Error::config("--seeds needs at least one seed"));
    }
    let pairs = split_file(&a.dataset)?;
    let hashes = BTreeMap::from([(pairs.display().to_string(), file_hash(&pairs)?)]);
    let snapshot = serde_json::json!({ "experiment": a.experiment, "run": cfg });
    RunManifest::new("analyze", snapshot, a.seeds.clone(), hashes).write(&a.out.join("manifest.json"))?;
    let ds = InteractionDataset::load_split(&a.dataset)?;
    let ctx = AnalysisContext {
        ds: &ds,
        dataset_label: a.dataset.display().to_string(),
        split_seed: split_seed(&a.dataset),
        base: cfg,
        cache_dir: Some(cache_dir(&a.dataset)),
        output: a.out.clone(),
    };
    let out = run_experiment(a.experiment, &ctx, &a.seeds)?;
    out.write(&a.out)?;
    for (k, v) in &out.summary {
        eprintln!("{k}\t{v}");
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    if cli.threads != 1 {
        return Err(Error::config("only --threads 1 is supported; computation is sequential"));
    }
    match &cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Eigens(a) => eigens(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Analyze(a) => analyze(a),
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let cat = e.category();
            eprintln!("error ({}): {e}", format!("{cat:?}").to_lowercase());
            cat.exit_code()
        }
    }
}
