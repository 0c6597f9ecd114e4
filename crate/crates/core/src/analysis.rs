//! Diagnostic experiments over spectral feature bands: band importance,
//! feature removal sweeps, filter weight curves, kernel comparison, ablation
//! and convergence traces. Every procedure returns data (metric tables and
//! curve points); nothing here renders plots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::{filter_weight, uniform_weights, LightGcnConfig, LightGcnModel};
use crate::checkpoint::config_hash;
use crate::dataio::{interaction_matrix, InteractionDataset, SplitLabel};
use crate::error::{Error, Result};
use crate::eval::{evaluate_embeddings, EvalOptions, EvalReport};
use crate::gde::{over_smoothing_ratio, GdeBases, Kernel, SmoothingFilter};
use crate::graph::normalized_adjacency;
use crate::linalg::{self, gemm, DenseMatrix};
use crate::pipeline::{train_gde_on, ModelKind, RunConfig};
use crate::spectral::{self, band_partition, BandPartition, SpectralBasis};
use crate::train::{fit, EpochRecord, LossKind, Trainable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Bands,
    Removal,
    Curves,
    Kernels,
    Ablation,
    Convergence,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Bands => "bands",
            Experiment::Removal => "removal",
            Experiment::Curves => "curves",
            Experiment::Kernels => "kernels",
            Experiment::Ablation => "ablation",
            Experiment::Convergence => "convergence",
        }
    }
}

/// One weight-function arm of the kernel comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelArm {
    pub name: String,
    pub kernel: Kernel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Overrides the run's learning rate for this arm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
}

impl KernelArm {
    fn new(name: &str, kernel: Kernel, beta: Option<f64>) -> Self {
        KernelArm {
            name: name.into(),
            kernel,
            beta,
            learning_rate: None,
        }
    }
}

pub fn default_kernel_arms() -> Vec<KernelArm> {
    vec![
        KernelArm::new("log", Kernel::Log, None),
        KernelArm::new("poly", Kernel::Poly, None),
        KernelArm::new("rational", Kernel::Rational, None),
        KernelArm::new("exp_pos", Kernel::Exp, Some(4.0)),
        KernelArm::new("exp_neg", Kernel::Exp, Some(-2.0)),
        KernelArm::new("attention", Kernel::Attention, None),
    ]
}

/// Settings shared by the diagnostic experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Equal-width variation groups for band importance.
    pub groups: usize,
    /// Layers of the polynomial filter used on cropped adjacency matrices.
    pub filter_layers: usize,
    pub self_loops: bool,
    /// Largest adjacency the dense full spectrum is computed for.
    pub spectrum_guard: usize,
    pub filter_learning_rate: f64,
    pub filter_epochs: usize,
    pub removal_thresholds: Vec<f64>,
    pub kernel_arms: Vec<KernelArm>,
    /// Dropout of the two dropout arms of the ablation; the run's dropout
    /// when absent.
    pub ablation_dropout: Option<f64>,
    /// Fraction of the best validation Recall@20 that counts as converged.
    pub convergence_fraction: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            groups: 10,
            filter_layers: 2,
            self_loops: true,
            spectrum_guard: 4000,
            filter_learning_rate: 10.0,
            filter_epochs: 60,
            removal_thresholds: vec![0.05, 0.1, 0.25, 0.5, 1.0, 1.5, 2.0],
            kernel_arms: default_kernel_arms(),
            ablation_dropout: None,
            convergence_fraction: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub series: String,
    pub y: f64,
}

/// Result of one trained (or evaluated) arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub seed: u64,
    /// The configuration change relative to the experiment's base run.
    pub overrides: serde_json::Value,
    pub config_hash: String,
    pub split_seed: Option<u64>,
    pub basis_hash: Option<String>,
    /// Number of spectral features behind the arm's operator, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<usize>,
    pub best_epoch: usize,
    pub test: EvalReport,
}

/// Declared shape of an experiment, written next to its results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub dataset: String,
    pub arms: Vec<String>,
    pub seeds: Vec<u64>,
    pub output: String,
    pub base_config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub spec: ExperimentSpec,
    pub arms: Vec<ArmResult>,
    pub curves: Vec<CurvePoint>,
    /// Named scalar findings, e.g. per-arm means or epochs to convergence.
    pub summary: BTreeMap<String, f64>,
}

impl ExperimentOutput {
    /// Mean of `metric(report)` over the seeds of `arm`.
    pub fn arm_mean(&self, arm: &str, metric: impl Fn(&EvalReport) -> f64) -> Option<f64> {
        let v: Vec<f64> = self.arms.iter().filter(|a| a.arm == arm).map(|a| metric(&a.test)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Writes `experiment.json`, `arms.csv` and, when present, `curves.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        std::fs::write(dir.join("experiment.json"), serde_json::to_vec_pretty(self)?)?;
        let mut w = csv::Writer::from_path(dir.join("arms.csv"))?;
        w.write_record(["arm", "seed", "features", "recall@10", "ndcg@10", "recall@20", "ndcg@20", "best_epoch"])?;
        for a in &self.arms {
            w.write_record([
                a.arm.clone(),
                a.seed.to_string(),
                a.features.map(|f| f.to_string()).unwrap_or_default(),
                a.test.recall(10).to_string(),
                a.test.ndcg(10).to_string(),
                a.test.recall(20).to_string(),
                a.test.ndcg(20).to_string(),
                a.best_epoch.to_string(),
            ])?;
        }
        w.flush()?;
        if !self.curves.is_empty() {
            write_curves(&dir.join("curves.csv"), &self.curves)?;
        }
        Ok(())
    }
}

pub fn write_curves(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Inputs shared by every experiment.
#[derive(Clone, Debug)]
pub struct AnalysisContext<'a> {
    pub ds: &'a InteractionDataset,
    pub dataset_label: String,
    pub split_seed: Option<u64>,
    pub base: RunConfig,
    pub cache_dir: Option<PathBuf>,
    pub output: PathBuf,
}

fn eval_opts() -> EvalOptions {
    EvalOptions {
        ks: vec![10, 20],
        ..Default::default()
    }
}

impl AnalysisContext<'_> {
    fn spec(&self, name: &str, arms: Vec<String>, seeds: &[u64]) -> ExperimentSpec {
        ExperimentSpec {
            name: name.into(),
            dataset: self.dataset_label.clone(),
            arms,
            seeds: seeds.to_vec(),
            output: self.output.display().to_string(),
            base_config: serde_json::to_value(&self.base).expect("run configuration serializes"),
        }
    }

    fn test(&self, users: &DenseMatrix, items: &DenseMatrix) -> Result<EvalReport> {
        evaluate_embeddings(users, items, self.ds, SplitLabel::Test, &eval_opts())
    }
}

/// LightGCN-style propagation restricted to a set of spectral features:
/// output = `V diag(w) Vᵀ E`. Only `C = Vᵀ E` affects the output, so it is
/// trained in place of `E`; plain SGD on `E` gives the same outputs.
#[derive(Clone, Debug)]
pub struct SpectralFilterModel {
    factor: Arc<DenseMatrix>,
    weights: Vec<f64>,
    coeff: DenseMatrix,
    users: usize,
    rows: Vec<usize>,
    weighted: DenseMatrix,
}

impl SpectralFilterModel {
    /// `factor` is `(users + items) × r` with orthonormal columns. The raw
    /// table is drawn exactly as the sparse LightGCN model draws it.
    pub fn new(factor: Arc<DenseMatrix>, weights: Vec<f64>, users: usize, dim: usize, seed: u64) -> Result<Self> {
        if weights.len() != factor.cols() {
            return Err(Error::config("filter weights do not match the feature count"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = linalg::xavier_uniform(factor.rows(), dim, &mut rng);
        let coeff = factor.t_matmul(&e);
        Ok(SpectralFilterModel {
            factor,
            weights,
            coeff,
            users,
            rows: Vec::new(),
            weighted: DenseMatrix::zeros(0, 0),
        })
    }

    fn output_rows(&self, weighted: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(weighted.rows(), self.coeff.cols());
        if self.coeff.rows() > 0 {
            gemm(&mut out, false, weighted.view(), self.coeff.view(), 1.0);
        }
        out
    }
}

impl Trainable for SpectralFilterModel {
    fn user_count(&self) -> usize {
        self.users
    }

    fn item_count(&self) -> usize {
        self.factor.rows() - self.users
    }

    fn forward_batch(&mut self, users: &[usize], items: &[usize], _rng: &mut ChaCha8Rng) -> Result<(DenseMatrix, DenseMatrix)> {
        self.rows = users.iter().copied().chain(items.iter().map(|&i| i + self.users)).collect();
        let mut weighted = self.factor.select_rows(&self.rows);
        weighted.scale_columns(&self.weights);
        let out = self.output_rows(&weighted);
        self.weighted = weighted;
        let nu = users.len();
        let ou = out.select_rows(&(0..nu).collect::<Vec<_>>());
        let oi = out.select_rows(&(nu..out.rows()).collect::<Vec<_>>());
        Ok((ou, oi))
    }

    fn backward_batch(&mut self, grad_users: &DenseMatrix, grad_items: &DenseMatrix, lr: f64) -> Result<()> {
        if self.coeff.rows() == 0 {
            return Ok(());
        }
        let mut g = DenseMatrix::zeros(self.rows.len(), self.coeff.cols());
        g.data_mut()[..grad_users.data().len()].copy_from_slice(grad_users.data());
        g.data_mut()[grad_users.data().len()..].copy_from_slice(grad_items.data());
        gemm(&mut self.coeff, true, self.weighted.view().transpose(), g.view(), -lr);
        Ok(())
    }

    fn output_embeddings(&self) -> Result<(DenseMatrix, DenseMatrix)> {
        let mut weighted = (*self.factor).clone();
        weighted.scale_columns(&self.weights);
        let out = self.output_rows(&weighted);
        let users: Vec<usize> = (0..self.users).collect();
        let items: Vec<usize> = (self.users..out.rows()).collect();
        Ok((out.select_rows(&users), out.select_rows(&items)))
    }
}

/// Full spectrum of the normalized bipartite adjacency of the training graph,
/// cached under `cache_dir` when given.
pub fn adjacency_spectrum(ds: &InteractionDataset, settings: &AnalysisConfig, cache_dir: Option<&Path>) -> Result<SpectralBasis> {
    let g = interaction_matrix(ds, SplitLabel::Train)?;
    let a = normalized_adjacency(&g, settings.self_loops);
    let path = cache_dir.map(|d| {
        let hash = a.fingerprint();
        d.join(format!("{}-full-{}.basis", a.kind.name(), &hash[..16]))
    });
    if let Some(p) = &path {
        if let Ok(b) = SpectralBasis::load(p) {
            if b.source_hash == a.fingerprint() {
                return Ok(b);
            }
        }
    }
    let full = spectral::full_spectrum(&a, settings.spectrum_guard)?;
    if let (Some(p), Some(d)) = (&path, cache_dir) {
        std::fs::create_dir_all(d).map_err(|e| Error::io(format!("creating {}", d.display()), e))?;
        full.save(p)?;
    }
    Ok(full)
}

/// A uniformly random orthonormal `n × r` basis (QR of a Gaussian matrix).
pub fn random_orthonormal(n: usize, r: usize, seed: u64) -> DenseMatrix {
    if r == 0 {
        return DenseMatrix::zeros(n, 0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DenseMatrix::from_fn(n, r, |_, _| StandardNormal.sample(&mut rng));
    linalg::orthonormalize_columns(&g)
}

/// Group whose variation interval holds `1` (eigenvalue 0), the bulk of
/// the spectrum that carries neither neighbour similarity nor difference.
pub fn middle_group(partition: &BandPartition) -> usize {
    let b = &partition.boundaries;
    let groups = b.len() - 1;
    (0..groups)
        .find(|&g| b[g] <= 1.0 && 1.0 < b[g + 1])
        .unwrap_or_else(|| {
            (0..groups)
                .min_by(|&x, &y| {
                    let mx = (b[x] + b[x + 1]) / 2.0 - 1.0;
                    let my = (b[y] + b[y + 1]) / 2.0 - 1.0;
                    mx.abs().total_cmp(&my.abs())
                })
                .unwrap_or(0)
        })
}

enum FilterBasis<'a> {
    Spectrum(&'a SpectralBasis, Vec<usize>),
    Random { eigenvalues: Vec<f64>, seed: u64 },
}

impl AnalysisContext<'_> {
    fn filter_run(&self) -> RunConfig {
        let mut cfg = self.base.clone();
        cfg.train.learning_rate = self.base.analysis.filter_learning_rate;
        cfg.train.epochs = self.base.analysis.filter_epochs;
        cfg.lightgcn = LightGcnConfig {
            layers: self.base.analysis.filter_layers,
            layer_weights: None,
            self_loops: self.base.analysis.self_loops,
        };
        cfg
    }

    /// Trains the cropped propagation model on `basis` and evaluates it.
    fn filter_arm(&self, arm: &str, basis: FilterBasis<'_>, spectrum: &SpectralBasis, seed: u64) -> Result<ArmResult> {
        let cfg = self.filter_run().with_seed(seed);
        let h = uniform_weights(self.base.analysis.filter_layers);
        let n = spectrum.dimension();
        let users = self.ds.user_count;
        let dim = cfg.gde.embed_dim;
        let (features, basis_hash, overrides, report, best_epoch);
        match basis {
            FilterBasis::Spectrum(full, cols) if cols.len() == full.count() => {
                // Every feature kept: the cropped matrix is the adjacency
                // itself, so propagate sparsely.
                let g = interaction_matrix(self.ds, SplitLabel::Train)?;
                let mut model = LightGcnModel::lightgcn(&g, &cfg.lightgcn, dim, seed)?;
                let hist = fit(&mut model, self.ds, &cfg.train)?;
                let (ou, oi) = model.output_embeddings()?;
                report = self.test(&ou, &oi)?;
                best_epoch = hist.best_epoch;
                features = cols.len();
                basis_hash = Some(full.fingerprint());
                overrides = serde_json::json!({ "kept": "all" });
            }
            FilterBasis::Spectrum(full, cols) => {
                let sub = full.select(&cols);
                let weights: Vec<f64> = sub.eigenvalues.iter().map(|&l| filter_weight(l, &h, false)).collect();
                let (r, hist) = self.train_filter(Arc::new(sub.features.clone()), weights, users, dim, seed, &cfg)?;
                report = r;
                best_epoch = hist;
                features = cols.len();
                basis_hash = Some(sub.fingerprint());
                let (lo, hi) = cols
                    .iter()
                    .map(|&c| 1.0 - full.eigenvalues[c])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                overrides = serde_json::json!({ "kept": cols.len(), "variation_min": lo, "variation_max": hi });
            }
            FilterBasis::Random { eigenvalues, seed: basis_seed } => {
                let q = random_orthonormal(n, eigenvalues.len(), basis_seed);
                let weights: Vec<f64> = eigenvalues.iter().map(|&l| filter_weight(l, &h, false)).collect();
                let (r, hist) = self.train_filter(Arc::new(q), weights, users, dim, seed, &cfg)?;
                report = r;
                best_epoch = hist;
                features = eigenvalues.len();
                basis_hash = None;
                overrides = serde_json::json!({ "kept": eigenvalues.len(), "basis": "random", "basis_seed": basis_seed });
            }
        }
        Ok(ArmResult {
            arm: arm.into(),
            seed,
            overrides,
            config_hash: config_hash(&cfg.to_json()),
            split_seed: self.split_seed,
            basis_hash,
            features: Some(features),
            best_epoch,
            test: report,
        })
    }

    fn train_filter(
        &self,
        factor: Arc<DenseMatrix>,
        weights: Vec<f64>,
        users: usize,
        dim: usize,
        seed: u64,
        cfg: &RunConfig,
    ) -> Result<(EvalReport, usize)> {
        let mut model = SpectralFilterModel::new(factor, weights, users, dim, seed)?;
        let hist = if model.coeff.rows() == 0 {
            None
        } else {
            Some(fit(&mut model, self.ds, &cfg.train)?)
        };
        let (ou, oi) = model.output_embeddings()?;
        Ok((self.test(&ou, &oi)?, hist.map_or(0, |h| h.best_epoch)))
    }
}

/// Trains the cropped propagation model once per variation group, once on a
/// random orthonormal basis with each group's eigenvalues, and once on the
/// whole and on an empty spectrum. `only` restricts the arms by name
/// (`all`, `none`, `band-<g>`, `random-<g>`).
pub fn band_importance(ctx: &AnalysisContext<'_>, seeds: &[u64], only: Option<&[String]>) -> Result<ExperimentOutput> {
    check_seeds(seeds)?;
    let spectrum = adjacency_spectrum(ctx.ds, &ctx.base.analysis, ctx.cache_dir.as_deref())?;
    let partition = band_partition(&spectrum, ctx.base.analysis.groups)?;
    let mut arms: Vec<(String, Vec<usize>, bool)> = vec![
        ("all".into(), (0..spectrum.count()).collect(), false),
        ("none".into(), Vec::new(), false),
    ];
    for g in 0..ctx.base.analysis.groups {
        let members = partition.members(g);
        if members.is_empty() {
            continue;
        }
        arms.push((format!("band-{g}"), members.clone(), false));
        arms.push((format!("random-{g}"), members, true));
    }
    if let Some(only) = only {
        arms.retain(|(name, _, _)| only.contains(name));
        if arms.is_empty() {
            return Err(Error::config("none of the requested band arms exist"));
        }
    }
    let mut results = Vec::new();
    for &seed in seeds {
        for (name, cols, random) in &arms {
            let basis = if *random {
                FilterBasis::Random {
                    eigenvalues: cols.iter().map(|&c| spectrum.eigenvalues[c]).collect(),
                    seed: seed.wrapping_mul(1_000_003).wrapping_add(cols.len() as u64),
                }
            } else {
                FilterBasis::Spectrum(&spectrum, cols.clone())
            };
            results.push(ctx.filter_arm(name, basis, &spectrum, seed)?);
        }
    }
    let mut summary = BTreeMap::new();
    summary.insert("middle_group".into(), middle_group(&partition) as f64);
    for g in 0..ctx.base.analysis.groups {
        summary.insert(format!("group_{g}_features"), partition.members(g).len() as f64);
        summary.insert(format!("group_{g}_variation_min"), partition.boundaries[g]);
        summary.insert(format!("group_{g}_variation_max"), partition.boundaries[g + 1]);
    }
    let names = arms.iter().map(|a| a.0.clone()).collect();
    let mut out = ExperimentOutput {
        spec: ctx.spec("bands", names, seeds),
        arms: results,
        curves: Vec::new(),
        summary,
    };
    add_arm_means(&mut out);
    Ok(out)
}

/// Keeps only features with variation below each threshold and trains the
/// cropped propagation model on what is left.
pub fn removal_sweep(ctx: &AnalysisContext<'_>, seeds: &[u64]) -> Result<ExperimentOutput> {
    check_seeds(seeds)?;
    if ctx.base.analysis.removal_thresholds.is_empty() {
        return Err(Error::config("removal sweep needs at least one threshold"));
    }
    let spectrum = adjacency_spectrum(ctx.ds, &ctx.base.analysis, ctx.cache_dir.as_deref())?;
    let variation = spectral::variation(&spectrum);
    let mut results = Vec::new();
    let mut curves = Vec::new();
    for &seed in seeds {
        for &x in &ctx.base.analysis.removal_thresholds {
            let kept: Vec<usize> = (0..variation.len()).filter(|&t| variation[t] < x).collect();
            let arm = format!("below-{x}");
            let r = ctx.filter_arm(&arm, FilterBasis::Spectrum(&spectrum, kept), &spectrum, seed)?;
            curves.push(CurvePoint {
                x,
                series: format!("ndcg@20 seed {seed}"),
                y: r.test.ndcg(20),
            });
            results.push(r);
        }
    }
    let names = ctx.base.analysis.removal_thresholds.iter().map(|x| format!("below-{x}")).collect();
    let mut out = ExperimentOutput {
        spec: ctx.spec("removal", names, seeds),
        arms: results,
        curves,
        summary: BTreeMap::new(),
    };
    add_arm_means(&mut out);
    Ok(out)
}

/// Normalized filter weight against eigenvalue for polynomial filters of
/// several depths, their Laplacian counterparts, exponential kernels and an
/// ideal band-pass reference.
pub fn filter_curve(layers: &[usize], betas: &[f64], grid: usize) -> Result<Vec<CurvePoint>> {
    if grid < 2 {
        return Err(Error::config("curve grid needs at least two points"));
    }
    // (−1, 1]: the left end is open.
    let xs: Vec<f64> = (1..=grid).map(|k| -1.0 + 2.0 * k as f64 / grid as f64).collect();
    let mut pts = Vec::new();
    for &k in layers {
        let w = uniform_weights(k);
        for &x in &xs {
            pts.push(CurvePoint {
                x,
                series: format!("lightgcn K={k}"),
                y: filter_weight(x, &w, true),
            });
        }
        // Laplacian filter in terms of the adjacency eigenvalue; its largest
        // value on the grid is at the left end.
        let lmax = xs.iter().map(|&x| filter_weight(1.0 - x, &w, false)).fold(f64::NEG_INFINITY, f64::max);
        for &x in &xs {
            pts.push(CurvePoint {
                x,
                series: format!("laplacian K={k}"),
                y: filter_weight(1.0 - x, &w, false) / lmax,
            });
        }
    }
    for &beta in betas {
        let top = if beta >= 0.0 { 1.0 } else { xs[0] };
        for &x in &xs {
            pts.push(CurvePoint {
                x,
                series: format!("exp beta={beta}"),
                y: over_smoothing_ratio(SmoothingFilter::Exp { beta }, x, top),
            });
        }
    }
    for &x in &xs {
        pts.push(CurvePoint {
            x,
            series: "ideal band-pass".into(),
            y: if x.abs() >= 0.5 { 1.0 } else { 0.0 },
        });
    }
    Ok(pts)
}

/// (increasing, positive Taylor coefficients, infinitely differentiable)
pub fn kernel_properties(kernel: Kernel, beta: f64) -> Option<(bool, bool, bool)> {
    match kernel {
        Kernel::Log => Some((true, false, true)),
        Kernel::Poly => Some((true, true, false)),
        Kernel::Rational => Some((true, true, true)),
        Kernel::Exp => Some((beta > 0.0, beta > 0.0, true)),
        Kernel::ExpDegreeAdaptive | Kernel::Attention => None,
    }
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    Ok(())
}

fn add_arm_means(out: &mut ExperimentOutput) {
    let names: Vec<String> = out.spec.arms.clone();
    for name in names {
        for (label, k, f) in [
            ("ndcg@10", 10, true),
            ("ndcg@20", 20, true),
            ("recall@20", 20, false),
        ] {
            let m = out.arm_mean(&name, |r| if f { r.ndcg(k) } else { r.recall(k) });
            if let Some(m) = m {
                out.summary.insert(format!("{name}/{label}"), m);
            }
        }
    }
}

/// Bases with enough features for every encoder arm of an experiment.
fn shared_bases(ctx: &AnalysisContext<'_>, cfg: &RunConfig) -> Result<GdeBases> {
    let g = interaction_matrix(ctx.ds, SplitLabel::Train)?;
    GdeBases::compute_cached(&g, &cfg.gde, &cfg.eigen, ctx.cache_dir.as_deref())
}

fn encoder_arm(
    ctx: &AnalysisContext<'_>,
    arm: &str,
    cfg: &RunConfig,
    bases: &GdeBases,
    overrides: serde_json::Value,
) -> Result<(ArmResult, Vec<EpochRecord>)> {
    let kind = if cfg.gde.kernel == Kernel::Attention {
        ModelKind::GdeAttn
    } else {
        ModelKind::Gde
    };
    let t = train_gde_on(cfg, ctx.ds, bases, kind)?;
    let report = t.evaluate(ctx.ds, SplitLabel::Test, &eval_opts())?;
    Ok((
        ArmResult {
            arm: arm.into(),
            seed: cfg.train.seed,
            overrides,
            config_hash: t.checkpoint.config_hash(),
            split_seed: ctx.split_seed,
            basis_hash: t.basis_hash.clone(),
            features: Some(cfg.gde.smoothed_users + cfg.gde.rough_users + cfg.gde.smoothed_items + cfg.gde.rough_items),
            best_epoch: t.history.best_epoch,
            test: report,
        },
        t.history.records,
    ))
}

/// One encoder per weight function over identical smoothed-only bases.
pub fn kernel_comparison(ctx: &AnalysisContext<'_>, seeds: &[u64]) -> Result<ExperimentOutput> {
    check_seeds(seeds)?;
    if ctx.base.analysis.kernel_arms.is_empty() {
        return Err(Error::config("kernel comparison needs at least one arm"));
    }
    let mut base = ctx.base.clone();
    // Kernels such as log(αλ) are undefined near λ = 0, so the comparison
    // uses smoothed features only.
    base.gde.rough_users = 0;
    base.gde.rough_items = 0;
    let bases = shared_bases(ctx, &base)?;
    let mut results = Vec::new();
    for &seed in seeds {
        for arm in &ctx.base.analysis.kernel_arms {
            let mut cfg = base.clone().with_seed(seed);
            cfg.gde.kernel = arm.kernel;
            if let Some(b) = arm.beta {
                cfg.gde.beta = b;
            }
            if let Some(lr) = arm.learning_rate {
                cfg.train.learning_rate = lr;
            }
            let overrides = serde_json::to_value(arm)?;
            results.push(encoder_arm(ctx, &arm.name, &cfg, &bases, overrides)?.0);
        }
    }
    let mut summary = BTreeMap::new();
    for arm in &ctx.base.analysis.kernel_arms {
        let beta = arm.beta.unwrap_or(base.gde.beta);
        if let Some((inc, pos, inf)) = kernel_properties(arm.kernel, beta) {
            summary.insert(format!("{}/increasing", arm.name), inc as u8 as f64);
            summary.insert(format!("{}/positive_coefficients", arm.name), pos as u8 as f64);
            summary.insert(format!("{}/infinitely_differentiable", arm.name), inf as u8 as f64);
        }
    }
    let names = ctx.base.analysis.kernel_arms.iter().map(|a| a.name.clone()).collect();
    let mut out = ExperimentOutput {
        spec: ctx.spec("kernels", names, seeds),
        arms: results,
        curves: Vec::new(),
        summary,
    };
    add_arm_means(&mut out);
    Ok(out)
}

/// `plain` (no dropout, BPR), `drop` (dropout, BPR) and `drop+adaptive`.
pub fn ablation(ctx: &AnalysisContext<'_>, seeds: &[u64]) -> Result<ExperimentOutput> {
    check_seeds(seeds)?;
    let p = ctx.base.analysis.ablation_dropout.unwrap_or(ctx.base.gde.dropout);
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::config("ablation needs a dropout rate in (0, 1)"));
    }
    let bases = shared_bases(ctx, &ctx.base)?;
    let arms = [
        ("plain", 0.0, LossKind::Bpr),
        ("drop", p, LossKind::Bpr),
        ("drop+adaptive", p, LossKind::Adaptive),
    ];
    let mut results = Vec::new();
    for &seed in seeds {
        for (name, dropout, loss) in arms {
            let mut cfg = ctx.base.clone().with_seed(seed);
            cfg.gde.dropout = dropout;
            cfg.train.loss = loss;
            let overrides = serde_json::json!({ "dropout": dropout, "loss": loss });
            results.push(encoder_arm(ctx, name, &cfg, &bases, overrides)?.0);
        }
    }
    let mut out = ExperimentOutput {
        spec: ctx.spec("ablation", arms.iter().map(|a| a.0.to_string()).collect(), seeds),
        arms: results,
        curves: Vec::new(),
        summary: BTreeMap::new(),
    };
    add_arm_means(&mut out);
    Ok(out)
}

/// First epoch whose validation Recall@20 reaches `fraction` of the best one.
pub fn epochs_to_fraction(records: &[EpochRecord], fraction: f64) -> Option<usize> {
    let best = records.iter().filter_map(|r| r.valid_recall).fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return None;
    }
    records
        .iter()
        .find(|r| r.valid_recall.is_some_and(|v| v >= fraction * best))
        .map(|r| r.epoch)
}

/// The same encoder trained with BPR and with the adaptive loss, validated
/// every epoch without early stopping.
pub fn convergence_trace(ctx: &AnalysisContext<'_>, seeds: &[u64]) -> Result<ExperimentOutput> {
    check_seeds(seeds)?;
    let bases = shared_bases(ctx, &ctx.base)?;
    let mut results = Vec::new();
    let mut curves = Vec::new();
    let mut summary = BTreeMap::new();
    let arms = [("bpr", LossKind::Bpr), ("adaptive", LossKind::Adaptive)];
    for &seed in seeds {
        for (name, loss) in arms {
            let mut cfg = ctx.base.clone().with_seed(seed);
            cfg.train.loss = loss;
            cfg.train.eval_every = 1;
            cfg.train.patience = 0;
            let overrides = serde_json::json!({ "loss": loss });
            let (r, records) = encoder_arm(ctx, name, &cfg, &bases, overrides)?;
            for rec in &records {
                if let Some(v) = rec.valid_recall {
                    curves.push(CurvePoint {
                        x: rec.epoch as f64,
                        series: format!("{name} recall@20(valid) seed {seed}"),
                        y: v,
                    });
                }
                if rec.epoch > 0 {
                    curves.push(CurvePoint {
                        x: rec.epoch as f64,
                        series: format!("{name} neg_grad seed {seed}"),
                        y: rec.neg_grad,
                    });
                }
            }
            let e = epochs_to_fraction(&records, ctx.base.analysis.convergence_fraction);
            summary.insert(format!("{name}/seed{seed}/epochs_to_converge"), e.map_or(f64::NAN, |e| e as f64));
            results.push(r);
        }
    }
    let mut out = ExperimentOutput {
        spec: ctx.spec("convergence", arms.iter().map(|a| a.0.to_string()).collect(), seeds),
        arms: results,
        curves,
        summary,
    };
    add_arm_means(&mut out);
    Ok(out)
}

pub fn run_experiment(exp: Experiment, ctx: &AnalysisContext<'_>, seeds: &[u64]) -> Result<ExperimentOutput> {
    match exp {
        Experiment::Bands => band_importance(ctx, seeds, None),
        Experiment::Removal => removal_sweep(ctx, seeds),
        Experiment::Kernels => kernel_comparison(ctx, seeds),
        Experiment::Ablation => ablation(ctx, seeds),
        Experiment::Convergence => convergence_trace(ctx, seeds),
        Experiment::Curves => Ok(ExperimentOutput {
            spec: ctx.spec("curves", Vec::new(), seeds),
            arms: Vec::new(),
            curves: filter_curve(&[1, 2, 3, 4, 10], &[4.0, -2.0], 200)?,
            summary: BTreeMap::new(),
        }),
    }
}
