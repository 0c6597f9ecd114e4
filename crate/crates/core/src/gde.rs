//! Graph denoising encoder: spectral features of the user and item
//! hypergraphs, reweighted by a kernel over their eigenvalues, form a
//! low-rank relation operator that maps raw embeddings to output embeddings.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, InteractionGraph};
use crate::linalg::{self, dot, gemm, DenseMatrix};
use crate::spectral::{self, EigenOptions, SpectralBasis};
use crate::train::Trainable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `e^{βλ}`
    Exp,
    /// `e^{(β − ln d)λ}` with `d` the node degree.
    ExpDegreeAdaptive,
    /// `ln(αλ)`
    Log,
    /// `Σ_k α_k λ^k`
    Poly,
    /// `1 / (1 − αλ)`
    Rational,
    /// Learned per-node weights (sigmoid scores, softmax over features).
    Attention,
}

impl Kernel {
    pub fn is_static(self) -> bool {
        matches!(self, Kernel::Exp | Kernel::Log | Kernel::Poly | Kernel::Rational)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelParams {
    /// `α` of the log kernel.
    pub log_scale: f64,
    /// `α_0..α_K` of the polynomial kernel.
    pub poly_coefficients: Vec<f64>,
    /// `α` of the rational kernel.
    pub rational_scale: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            log_scale: 10.0,
            poly_coefficients: vec![1.0; 4],
            rational_scale: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdeConfig {
    pub embed_dim: usize,
    pub beta: f64,
    pub kernel: Kernel,
    pub kernel_params: KernelParams,
    /// Smoothed features kept on the user side.
    pub smoothed_users: usize,
    pub smoothed_items: usize,
    /// Rough features kept on each side.
    pub rough_users: usize,
    pub rough_items: usize,
    pub dropout: f64,
    pub seed: u64,
    pub attention_dim: usize,
}

impl Default for GdeConfig {
    fn default() -> Self {
        GdeConfig {
            embed_dim: 64,
            beta: 4.5,
            kernel: Kernel::Exp,
            kernel_params: KernelParams::default(),
            smoothed_users: 0,
            smoothed_items: 0,
            rough_users: 0,
            rough_items: 0,
            dropout: 0.0,
            seed: 0,
            attention_dim: 16,
        }
    }
}

impl GdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !self.beta.is_finite() {
            return Err(Error::config("beta must be finite"));
        }
        if self.smoothed_users + self.rough_users == 0 || self.smoothed_items + self.rough_items == 0 {
            return Err(Error::config("each side needs at least one spectral feature"));
        }
        if self.kernel == Kernel::Attention && self.attention_dim == 0 {
            return Err(Error::config("attention_dim must be positive"));
        }
        if self.kernel == Kernel::Poly && self.kernel_params.poly_coefficients.is_empty() {
            return Err(Error::config("poly kernel needs at least one coefficient"));
        }
        Ok(())
    }
}

/// Elementwise kernel weights for the static kernels.
pub fn gamma_static(eigenvalues: &[f64], kernel: Kernel, beta: f64, params: &KernelParams) -> Result<Vec<f64>> {
    eigenvalues
        .iter()
        .map(|&l| match kernel {
            Kernel::Exp => Ok((beta * l).exp()),
            Kernel::Log => {
                let arg = params.log_scale * l;
                if arg <= 0.0 {
                    Err(Error::Domain(format!("log kernel evaluated at non-positive argument {arg}")))
                } else {
                    Ok(arg.ln())
                }
            }
            Kernel::Poly => Ok(params.poly_coefficients.iter().rev().fold(0.0, |acc, c| acc * l + c)),
            Kernel::Rational => {
                let x = params.rational_scale * l;
                if x >= 1.0 {
                    Err(Error::Domain(format!("rational kernel pole: αλ = {x} >= 1")))
                } else {
                    Ok(1.0 / (1.0 - x))
                }
            }
            Kernel::ExpDegreeAdaptive | Kernel::Attention => Err(Error::config(format!(
                "{kernel:?} is not a static kernel"
            ))),
        })
        .collect()
}

/// `e^{(β − ln d_u) λ_g}` for every node `u` and feature `g`.
pub fn gamma_degree_adaptive(eigenvalues: &[f64], degrees: &[f64], beta: f64) -> Result<DenseMatrix> {
    if let Some(d) = degrees.iter().find(|&&d| !(d >= 1.0)) {
        return Err(Error::Domain(format!("degree-adaptive kernel needs degrees >= 1, got {d}")));
    }
    Ok(DenseMatrix::from_fn(degrees.len(), eigenvalues.len(), |u, g| {
        ((beta - degrees[u].ln()) * eigenvalues[g]).exp()
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `d1 × features`
    pub w1: DenseMatrix,
    /// `d1 × nodes`
    pub w2: DenseMatrix,
    /// Length `2 d1`; the first half scores the node side.
    pub a: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(d1: usize, features: usize, nodes: usize) -> Self {
        AttentionParams {
            w1: DenseMatrix::zeros(d1, features),
            w2: DenseMatrix::zeros(d1, nodes),
            a: vec![0.0; 2 * d1],
        }
    }

    pub fn xavier(d1: usize, features: usize, nodes: usize, rng: &mut impl Rng) -> Self {
        let a = linalg::xavier_uniform(1, 2 * d1, rng).into_data();
        AttentionParams {
            w1: linalg::xavier_uniform(d1, features, rng),
            w2: linalg::xavier_uniform(d1, nodes, rng),
            a,
        }
    }

    fn d1(&self) -> usize {
        self.w1.rows()
    }

    fn check(&self, nodes: usize, features: usize) -> Result<()> {
        let d1 = self.d1();
        if self.w1.cols() != features || self.w2.shape() != (d1, nodes) || self.a.len() != 2 * d1 {
            return Err(Error::config(format!(
                "attention parameter shapes {:?}/{:?}/{} do not match {nodes} nodes and {features} features",
                self.w1.shape(),
                self.w2.shape(),
                self.a.len()
            )));
        }
        Ok(())
    }

    /// `W1ᵀ a_1` and `W2ᵀ a_2`: the score is bilinear, so only these
    /// projections enter the forward pass.
    fn projections(&self) -> (Vec<f64>, Vec<f64>) {
        let d1 = self.d1();
        let (a1, a2) = self.a.split_at(d1);
        let mut w1 = vec![0.0; self.w1.cols()];
        let mut w2 = vec![0.0; self.w2.cols()];
        for k in 0..d1 {
            linalg::axpy(a1[k], self.w1.row(k), &mut w1);
            linalg::axpy(a2[k], self.w2.row(k), &mut w2);
        }
        (w1, w2)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intermediate values of an attention forward pass over a set of rows.
struct AttentionPass {
    /// Softmax output, `rows × features`.
    weights: DenseMatrix,
    /// Sigmoid scores before the softmax.
    scores: DenseMatrix,
}

/// `P' = P diag(λ)`: features scaled by their eigenvalues.
fn variation_encoded(features: &DenseMatrix, eigenvalues: &[f64]) -> DenseMatrix {
    let mut p = features.clone();
    p.scale_columns(eigenvalues);
    p
}

fn attention_rows(encoded: &DenseMatrix, rows: &[usize], params: &AttentionParams) -> AttentionPass {
    let g = encoded.cols();
    let (w1, w2) = params.projections();
    // Feature-side term: β_g = w2 · P'_{:,g}.
    let mut beta = vec![0.0; g];
    for v in 0..encoded.rows() {
        linalg::axpy(w2[v], encoded.row(v), &mut beta);
    }
    let mut scores = DenseMatrix::zeros(rows.len(), g);
    let mut weights = DenseMatrix::zeros(rows.len(), g);
    for (r, &u) in rows.iter().enumerate() {
        let alpha = dot(&w1, encoded.row(u));
        let s = scores.row_mut(r);
        for (x, &b) in s.iter_mut().zip(&beta) {
            *x = sigmoid(alpha + b);
        }
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w = weights.row_mut(r);
        let mut total = 0.0;
        for (wx, &sx) in w.iter_mut().zip(scores.row(r)) {
            *wx = (sx - max).exp();
            total += *wx;
        }
        w.iter_mut().for_each(|x| *x /= total);
    }
    AttentionPass { weights, scores }
}

/// Attention weights for every node: sigmoid of the bilinear score followed by
/// a softmax over features, so each row sums to one.
pub fn gamma_attention(features: &DenseMatrix, eigenvalues: &[f64], params: &AttentionParams) -> Result<DenseMatrix> {
    if eigenvalues.len() != features.cols() {
        return Err(Error::config("eigenvalue count does not match feature count"));
    }
    params.check(features.rows(), features.cols())?;
    let encoded = variation_encoded(features, eigenvalues);
    let rows: Vec<usize> = (0..features.rows()).collect();
    Ok(attention_rows(&encoded, &rows, params).weights)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gamma {
    /// One weight per feature, shared by all nodes.
    PerFeature(Vec<f64>),
    /// `nodes × features`.
    PerNode(DenseMatrix),
}

/// Concatenates bases column-wise and scatters their rows into the original
/// node index space; dropped nodes get zero rows.
fn expand_bases(bases: &[&SpectralBasis]) -> Result<(DenseMatrix, Vec<f64>)> {
    let Some(first) = bases.first() else {
        return Err(Error::input("at least one basis is required"));
    };
    if bases
        .iter()
        .any(|b| b.source_hash != first.source_hash || b.nodes != first.nodes)
    {
        return Err(Error::input("bases come from different source matrices"));
    }
    let n = first.full_dimension;
    let g: usize = bases.iter().map(|b| b.count()).sum();
    let mut features = DenseMatrix::zeros(n, g);
    let mut eigenvalues = Vec::with_capacity(g);
    let mut col = 0;
    for b in bases {
        for (local, &node) in b.nodes.iter().enumerate() {
            features.row_mut(node)[col..col + b.count()].copy_from_slice(b.features.row(local));
        }
        eigenvalues.extend_from_slice(&b.eigenvalues);
        col += b.count();
    }
    Ok((features, eigenvalues))
}

/// Low-rank relation operator with row `u` equal to
/// `Σ_g γ(u,g) P_{u,g} P_{:,g}`, summed over every supplied band.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationOperator {
    pub features: DenseMatrix,
    pub eigenvalues: Vec<f64>,
    pub gamma: Gamma,
}

pub fn relation_matrix(bases: &[&SpectralBasis], gamma: Gamma) -> Result<RelationOperator> {
    let (features, eigenvalues) = expand_bases(bases)?;
    RelationOperator::new(features, eigenvalues, gamma)
}

impl RelationOperator {
    pub fn new(features: DenseMatrix, eigenvalues: Vec<f64>, gamma: Gamma) -> Result<Self> {
        let ok = match &gamma {
            Gamma::PerFeature(w) => w.len() == features.cols(),
            Gamma::PerNode(w) => w.shape() == features.shape(),
        };
        if !ok || eigenvalues.len() != features.cols() {
            return Err(Error::config("kernel weights do not match the basis"));
        }
        Ok(RelationOperator {
            features,
            eigenvalues,
            gamma,
        })
    }

    pub fn dimension(&self) -> usize {
        self.features.rows()
    }

    pub fn rank(&self) -> usize {
        self.features.cols()
    }

    /// `P ⊙ Γ` restricted to `rows`.
    fn weighted_rows(&self, rows: &[usize]) -> DenseMatrix {
        let mut w = self.features.select_rows(rows);
        match &self.gamma {
            Gamma::PerFeature(g) => w.scale_columns(g),
            Gamma::PerNode(g) => {
                for (r, &u) in rows.iter().enumerate() {
                    for (x, s) in w.row_mut(r).iter_mut().zip(g.row(u)) {
                        *x *= s;
                    }
                }
            }
        }
        w
    }

    /// Dense rows of the operator.
    pub fn rows(&self, rows: &[usize]) -> DenseMatrix {
        self.weighted_rows(rows).matmul_t(&self.features)
    }

    /// Operator times `x` without forming the dense operator.
    pub fn apply(&self, x: &DenseMatrix) -> DenseMatrix {
        let all: Vec<usize> = (0..self.dimension()).collect();
        let coeff = self.features.t_matmul(x);
        self.weighted_rows(&all).matmul(&coeff)
    }

    pub fn to_dense(&self, guard: usize) -> Result<DenseMatrix> {
        if self.dimension() > guard {
            return Err(Error::config(format!(
                "refusing to densify a {0}x{0} relation operator (guard {guard})",
                self.dimension()
            )));
        }
        let all: Vec<usize> = (0..self.dimension()).collect();
        Ok(self.rows(&all))
    }

    /// Dense operator with each entry dropped with probability `p` and the
    /// survivors scaled by `1/(1−p)`.
    pub fn masked_dense(&self, p: f64, rng: &mut impl Rng, guard: usize) -> Result<DenseMatrix> {
        let mut m = self.to_dense(guard)?;
        apply_dropout(m.data_mut(), p, rng, None);
        Ok(m)
    }
}

/// 32-bit draw threshold for dropping an entry, and the matching rescale.
fn dropout_threshold(p: f64) -> (u64, f64) {
    const SPAN: f64 = 4_294_967_296.0;
    let threshold = (p * SPAN).round().min(SPAN - 1.0);
    (threshold as u64, SPAN / (SPAN - threshold))
}

/// Inverted dropout in place. Records kept positions in `keep` when given.
/// Each entry consumes 32 random bits; the rescaling uses the keep
/// probability of the resulting integer threshold, so the mask stays
/// unbiased.
fn apply_dropout(values: &mut [f64], p: f64, rng: &mut impl Rng, mut keep: Option<&mut Vec<bool>>) {
    if p <= 0.0 {
        return;
    }
    let (threshold, scale) = dropout_threshold(p);
    if let Some(k) = keep.as_deref_mut() {
        k.clear();
        k.reserve(values.len());
    }
    for chunk in values.chunks_mut(2) {
        let bits = rng.next_u64();
        for (x, draw) in chunk.iter_mut().zip([bits & 0xffff_ffff, bits >> 32]) {
            let kept = draw >= threshold;
            *x = if kept { *x * scale } else { 0.0 };
            if let Some(k) = keep.as_deref_mut() {
                k.push(kept);
            }
        }
    }
}

/// The four feature sets a model needs.
#[derive(Clone, Debug, PartialEq)]
pub struct GdeBases {
    pub user_smoothed: SpectralBasis,
    pub user_rough: SpectralBasis,
    pub item_smoothed: SpectralBasis,
    pub item_rough: SpectralBasis,
}

impl GdeBases {
    pub fn compute(g: &InteractionGraph, cfg: &GdeConfig, opts: &EigenOptions) -> Result<Self> {
        Self::compute_cached(g, cfg, opts, None)
    }

    /// Like [`GdeBases::compute`], reusing bases stored under `cache_dir`.
    pub fn compute_cached(g: &InteractionGraph, cfg: &GdeConfig, opts: &EigenOptions, cache_dir: Option<&Path>) -> Result<Self> {
        let au = graph::hypergraph_user(g)?;
        let ai = graph::hypergraph_item(g)?;
        let (user_smoothed, user_rough) =
            spectral::eigs_bands_cached(&au, cfg.smoothed_users, cfg.rough_users, opts, cache_dir)?;
        let (item_smoothed, item_rough) =
            spectral::eigs_bands_cached(&ai, cfg.smoothed_items, cfg.rough_items, opts, cache_dir)?;
        Ok(GdeBases {
            user_smoothed,
            user_rough,
            item_smoothed,
            item_rough,
        })
    }

    /// Truncates to the counts requested by `cfg` (bases may be larger).
    pub fn truncate(&self, cfg: &GdeConfig) -> Result<Self> {
        let cut = |b: &SpectralBasis, k: usize| -> Result<SpectralBasis> {
            if k > b.count() {
                return Err(Error::config(format!(
                    "config asks for {k} features but only {} were computed",
                    b.count()
                )));
            }
            Ok(b.select(&(0..k).collect::<Vec<_>>()))
        };
        Ok(GdeBases {
            user_smoothed: cut(&self.user_smoothed, cfg.smoothed_users)?,
            user_rough: cut(&self.user_rough, cfg.rough_users)?,
            item_smoothed: cut(&self.item_smoothed, cfg.smoothed_items)?,
            item_rough: cut(&self.item_rough, cfg.rough_items)?,
        })
    }

    pub fn fingerprint(&self) -> String {
        [&self.user_smoothed, &self.user_rough, &self.item_smoothed, &self.item_rough]
            .iter()
            .map(|b| b.fingerprint())
            .collect::<Vec<_>>()
            .join(":")
    }
}

#[derive(Clone, Debug, PartialEq)]
enum SideWeights {
    Fixed(Gamma),
    Attention(AttentionParams),
}

#[derive(Clone, Debug, PartialEq)]
struct Side {
    features: DenseMatrix,
    eigenvalues: Vec<f64>,
    /// `P diag(λ)`, only kept for the attention kernel.
    encoded: Option<DenseMatrix>,
    weights: SideWeights,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct SideCache {
    rows: Vec<usize>,
    /// Masked relation rows used in the forward pass (dropout only).
    relation: DenseMatrix,
    keep: Vec<bool>,
    /// `P_B ⊙ Γ_B` and `Pᵀ E` (no dropout only).
    weighted: DenseMatrix,
    coeff: DenseMatrix,
    attention: Option<(DenseMatrix, DenseMatrix)>,
}

impl Side {
    fn build(bases: [&SpectralBasis; 2], degrees: &[f64], cfg: &GdeConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let parts: Vec<&SpectralBasis> = bases.into_iter().filter(|b| b.count() > 0).collect();
        let (features, eigenvalues) = expand_bases(&parts)?;
        let n = features.rows();
        let weights = match cfg.kernel {
            Kernel::ExpDegreeAdaptive => {
                let kept = &parts[0].nodes;
                let local: Vec<f64> = kept.iter().map(|&u| degrees[u]).collect();
                let w = gamma_degree_adaptive(&eigenvalues, &local, cfg.beta)?;
                let mut full = DenseMatrix::zeros(n, eigenvalues.len());
                for (r, &u) in kept.iter().enumerate() {
                    full.row_mut(u).copy_from_slice(w.row(r));
                }
                SideWeights::Fixed(Gamma::PerNode(full))
            }
            Kernel::Attention => {
                SideWeights::Attention(AttentionParams::xavier(cfg.attention_dim, eigenvalues.len(), n, rng))
            }
            k => SideWeights::Fixed(Gamma::PerFeature(gamma_static(
                &eigenvalues,
                k,
                cfg.beta,
                &cfg.kernel_params,
            )?)),
        };
        let encoded = matches!(weights, SideWeights::Attention(_)).then(|| variation_encoded(&features, &eigenvalues));
        Ok(Side {
            features,
            eigenvalues,
            encoded,
            weights,
        })
    }

    fn operator(&self) -> Result<RelationOperator> {
        let gamma = match &self.weights {
            SideWeights::Fixed(g) => g.clone(),
            SideWeights::Attention(p) => {
                let all: Vec<usize> = (0..self.features.rows()).collect();
                Gamma::PerNode(attention_rows(self.encoded.as_ref().unwrap(), &all, p).weights)
            }
        };
        RelationOperator::new(self.features.clone(), self.eigenvalues.clone(), gamma)
    }

    /// `P_B ⊙ Γ_B` for the batch rows, plus attention intermediates.
    fn weighted_rows(&self, rows: &[usize]) -> (DenseMatrix, Option<(DenseMatrix, DenseMatrix)>) {
        let mut w = self.features.select_rows(rows);
        match &self.weights {
            SideWeights::Fixed(Gamma::PerFeature(g)) => {
                w.scale_columns(g);
                (w, None)
            }
            SideWeights::Fixed(Gamma::PerNode(g)) => {
                for (r, &u) in rows.iter().enumerate() {
                    for (x, s) in w.row_mut(r).iter_mut().zip(g.row(u)) {
                        *x *= s;
                    }
                }
                (w, None)
            }
            SideWeights::Attention(p) => {
                let pass = attention_rows(self.encoded.as_ref().unwrap(), rows, p);
                for r in 0..rows.len() {
                    for (x, s) in w.row_mut(r).iter_mut().zip(pass.weights.row(r)) {
                        *x *= s;
                    }
                }
                (w, Some((pass.weights, pass.scores)))
            }
        }
    }

    fn forward_batch(&self, rows: &[usize], emb: &DenseMatrix, p: f64, rng: &mut ChaCha8Rng, cache: &mut SideCache) -> DenseMatrix {
        let (w, attention) = self.weighted_rows(rows);
        if p <= 0.0 {
            // Without a mask the relation rows never need to be formed.
            let coeff = self.features.t_matmul(emb);
            let out = w.matmul(&coeff);
            *cache = SideCache {
                rows: rows.to_vec(),
                weighted: w,
                coeff,
                attention,
                ..Default::default()
            };
            return out;
        }
        let mut relation = w.matmul_t(&self.features);
        let mut keep = std::mem::take(&mut cache.keep);
        // Only the attention gradient needs the mask afterwards.
        let record = attention.is_some().then_some(&mut keep);
        apply_dropout(relation.data_mut(), p, rng, record);
        let out = relation.matmul(emb);
        *cache = SideCache {
            rows: rows.to_vec(),
            relation,
            keep,
            attention,
            ..Default::default()
        };
        out
    }

    fn backward_batch(&mut self, cache: &SideCache, grad: &DenseMatrix, emb: &mut DenseMatrix, p: f64, lr: f64) {
        if let (SideWeights::Attention(params), Some((weights, scores))) = (&mut self.weights, &cache.attention) {
            let encoded = self.encoded.as_ref().unwrap();
            // Gradient with respect to the (unmasked) relation rows, times P.
            let dp = if p > 0.0 {
                let mut d = grad.matmul_t(emb);
                let scale = dropout_threshold(p).1;
                for (x, &k) in d.data_mut().iter_mut().zip(&cache.keep) {
                    *x = if k { *x * scale } else { 0.0 };
                }
                d.matmul(&self.features)
            } else {
                grad.matmul_t(&cache.coeff)
            };
            let g = self.features.cols();
            let b = cache.rows.len();
            let mut alpha_bar = vec![0.0; b];
            let mut beta_bar = vec![0.0; g];
            for (r, &u) in cache.rows.iter().enumerate() {
                let gw: Vec<f64> = (0..g).map(|k| self.features.get(u, k) * dp.get(r, k)).collect();
                let wrow = weights.row(r);
                let inner = dot(wrow, &gw);
                for k in 0..g {
                    let s = scores.get(r, k);
                    let z_bar = wrow[k] * (gw[k] - inner) * s * (1.0 - s);
                    alpha_bar[r] += z_bar;
                    beta_bar[k] += z_bar;
                }
            }
            let mut w1_bar = vec![0.0; g];
            for (r, &u) in cache.rows.iter().enumerate() {
                linalg::axpy(alpha_bar[r], encoded.row(u), &mut w1_bar);
            }
            let w2_bar = encoded.matvec(&beta_bar);
            let d1 = params.d1();
            let a_bar: Vec<f64> = (0..d1)
                .map(|k| dot(params.w1.row(k), &w1_bar))
                .chain((0..d1).map(|k| dot(params.w2.row(k), &w2_bar)))
                .collect();
            for k in 0..d1 {
                let (a1, a2) = (params.a[k], params.a[d1 + k]);
                linalg::axpy(-lr * a1, &w1_bar, params.w1.row_mut(k));
                linalg::axpy(-lr * a2, &w2_bar, params.w2.row_mut(k));
            }
            linalg::axpy(-lr, &a_bar, &mut params.a);
        }
        // E ← E − lr · L_Bᵀ G
        if p > 0.0 {
            gemm(emb, true, cache.relation.view().transpose(), grad.view(), -lr);
        } else {
            let reduced = cache.weighted.t_matmul(grad);
            gemm(emb, true, self.features.view(), reduced.view(), -lr);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GdeModel {
    pub config: GdeConfig,
    pub user_embedding: DenseMatrix,
    pub item_embedding: DenseMatrix,
    user_side: Side,
    item_side: Side,
    user_cache: SideCache,
    item_cache: SideCache,
}

impl GdeModel {
    /// Builds a model over precomputed bases. Degrees index the original node
    /// space and are only used by the degree-adaptive kernel.
    pub fn new(config: GdeConfig, bases: &GdeBases, user_degree: &[f64], item_degree: &[f64]) -> Result<Self> {
        config.validate()?;
        let bases = bases.truncate(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let m = bases.user_smoothed.full_dimension;
        let n = bases.item_smoothed.full_dimension;
        let user_embedding = linalg::xavier_uniform(m, config.embed_dim, &mut rng);
        let item_embedding = linalg::xavier_uniform(n, config.embed_dim, &mut rng);
        let user_side = Side::build([&bases.user_smoothed, &bases.user_rough], user_degree, &config, &mut rng)?;
        let item_side = Side::build([&bases.item_smoothed, &bases.item_rough], item_degree, &config, &mut rng)?;
        Ok(GdeModel {
            config,
            user_embedding,
            item_embedding,
            user_side,
            item_side,
            user_cache: SideCache::default(),
            item_cache: SideCache::default(),
        })
    }

    pub fn from_graph(config: GdeConfig, g: &InteractionGraph, opts: &EigenOptions) -> Result<(Self, GdeBases)> {
        config.validate()?;
        let bases = GdeBases::compute(g, &config, opts)?;
        let model = GdeModel::new(config, &bases, &g.user_degree, &g.item_degree)?;
        Ok((model, bases))
    }

    pub fn user_operator(&self) -> Result<RelationOperator> {
        self.user_side.operator()
    }

    pub fn item_operator(&self) -> Result<RelationOperator> {
        self.item_side.operator()
    }

    /// Output embeddings. With `training` set, relation entries are dropped
    /// at the configured rate (dense, so only for small graphs).
    pub fn forward(&self, training: bool, rng: &mut impl Rng) -> Result<(DenseMatrix, DenseMatrix)> {
        let uo = self.user_operator()?;
        let io = self.item_operator()?;
        if training && self.config.dropout > 0.0 {
            let guard = 4096;
            let lu = uo.masked_dense(self.config.dropout, rng, guard)?;
            let li = io.masked_dense(self.config.dropout, rng, guard)?;
            return Ok((lu.matmul(&self.user_embedding), li.matmul(&self.item_embedding)));
        }
        Ok((uo.apply(&self.user_embedding), io.apply(&self.item_embedding)))
    }
}

impl Trainable for GdeModel {
    fn user_count(&self) -> usize {
        self.user_embedding.rows()
    }

    fn item_count(&self) -> usize {
        self.item_embedding.rows()
    }

    fn forward_batch(&mut self, users: &[usize], items: &[usize], rng: &mut ChaCha8Rng) -> Result<(DenseMatrix, DenseMatrix)> {
        let p = self.config.dropout;
        let ou = self
            .user_side
            .forward_batch(users, &self.user_embedding, p, rng, &mut self.user_cache);
        let oi = self
            .item_side
            .forward_batch(items, &self.item_embedding, p, rng, &mut self.item_cache);
        Ok((ou, oi))
    }

    fn backward_batch(&mut self, grad_users: &DenseMatrix, grad_items: &DenseMatrix, lr: f64) -> Result<()> {
        let p = self.config.dropout;
        self.user_side
            .backward_batch(&self.user_cache, grad_users, &mut self.user_embedding, p, lr);
        self.item_side
            .backward_batch(&self.item_cache, grad_items, &mut self.item_embedding, p, lr);
        Ok(())
    }

    fn output_embeddings(&self) -> Result<(DenseMatrix, DenseMatrix)> {
        self.forward(false, &mut ChaCha8Rng::seed_from_u64(0))
    }
}

/// Inner-product preference of user `u` for item `i`.
pub fn score(users: &DenseMatrix, items: &DenseMatrix, u: usize, i: usize) -> Result<f64> {
    if u >= users.rows() {
        return Err(Error::Index { index: u, len: users.rows() });
    }
    if i >= items.rows() {
        return Err(Error::Index { index: i, len: items.rows() });
    }
    Ok(dot(users.row(u), items.row(i)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "filter", rename_all = "snake_case")]
pub enum SmoothingFilter {
    /// Exponential kernel of the encoder.
    Exp { beta: f64 },
    /// Uniform-weight layer stack of depth `layers`.
    LightGcn { layers: usize },
}

/// Weight of a feature at `lambda` relative to the one at `lambda_max`.
pub fn over_smoothing_ratio(filter: SmoothingFilter, lambda: f64, lambda_max: f64) -> f64 {
    match filter {
        SmoothingFilter::Exp { beta } => (beta * (lambda - lambda_max)).exp(),
        SmoothingFilter::LightGcn { layers } => {
            let w = 1.0 / (layers + 1) as f64;
            let (mut num, mut den) = (0.0, 0.0);
            let (mut pl, mut pm) = (1.0, 1.0);
            for _ in 0..=layers {
                num += pl * w;
                den += pm * w;
                pl *= lambda;
                pm *= lambda_max;
            }
            num / den
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_kernels_at_reference_points() {
        let p = KernelParams::default();
        let e = gamma_static(&[0.0, 1.0], Kernel::Exp, 4.0, &p).unwrap();
        assert_eq!(e[0], 1.0);
        assert!((e[1] - 54.598150033144236).abs() < 1e-12);
        let r = gamma_static(&[1.0], Kernel::Rational, 0.0, &p).unwrap();
        assert!((r[0] - 10.0).abs() < 1e-12);
        let poly = gamma_static(&[0.5], Kernel::Poly, 0.0, &p).unwrap();
        assert!((poly[0] - 1.875).abs() < 1e-15);
        assert!(matches!(gamma_static(&[0.0], Kernel::Log, 0.0, &p), Err(Error::Domain(_))));
        let pole = KernelParams { rational_scale: 1.0, ..p };
        assert!(matches!(gamma_static(&[1.0], Kernel::Rational, 0.0, &pole), Err(Error::Domain(_))));
    }

    #[test]
    fn degree_adaptive_reference_points() {
        let lam = [0.0, 0.3, 1.0];
        let unit = gamma_degree_adaptive(&lam, &[1.0], 2.0).unwrap();
        let plain = gamma_static(&lam, Kernel::Exp, 2.0, &KernelParams::default()).unwrap();
        assert_eq!(unit.row(0), &plain[..]);
        let flat = gamma_degree_adaptive(&lam, &[4.5f64.exp()], 4.5).unwrap();
        assert!(flat.row(0).iter().all(|w| (w - 1.0).abs() < 1e-12));
        assert!(gamma_degree_adaptive(&lam, &[0.0], 1.0).is_err());
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = linalg::xavier_uniform(6, 4, &mut rng);
        let lam = [1.0, 0.7, 0.2, 0.05];
        let params = AttentionParams::xavier(3, 4, 6, &mut rng);
        let w = gamma_attention(&p, &lam, &params).unwrap();
        for r in 0..6 {
            assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let zero = gamma_attention(&p, &lam, &AttentionParams::zeros(3, 4, 6)).unwrap();
        assert!(zero.data().iter().all(|x| (x - 0.25).abs() < 1e-15));
        let bad = AttentionParams::zeros(3, 5, 6);
        assert!(gamma_attention(&p, &lam, &bad).is_err());
    }

    #[test]
    fn over_smoothing_reference_points() {
        let g = over_smoothing_ratio(SmoothingFilter::Exp { beta: 4.0 }, 0.5, 1.0);
        assert!((g - (-2.0f64).exp()).abs() < 1e-15);
        let l = over_smoothing_ratio(SmoothingFilter::LightGcn { layers: 2 }, 0.5, 1.0);
        assert!((l - 1.75 / 3.0).abs() < 1e-15);
        assert!(over_smoothing_ratio(SmoothingFilter::LightGcn { layers: 1000 }, 0.9, 1.0) < 0.01);
    }

    #[test]
    fn score_checks_bounds() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![3.0, -1.0]]).unwrap();
        assert_eq!(score(&a, &b, 0, 0).unwrap(), 1.0);
        assert!(matches!(score(&a, &b, 1, 0), Err(Error::Index { .. })));
    }

    /// A side whose basis is the first `g` columns of a random orthonormal
    /// matrix, with attention weights.
    fn attention_side(n: usize, g: usize, seed: u64) -> Side {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = linalg::orthonormalize_columns(&linalg::xavier_uniform(n, g, &mut rng));
        let eigenvalues: Vec<f64> = (0..g).map(|k| 1.0 - k as f64 / g as f64).collect();
        let params = AttentionParams::xavier(3, g, n, &mut rng);
        Side {
            encoded: Some(variation_encoded(&q, &eigenvalues)),
            features: q,
            eigenvalues,
            weights: SideWeights::Attention(params),
        }
    }

    fn attention_gradients_match_differences(p: f64) {
        let (n, g, d) = (9, 4, 3);
        let side = attention_side(n, g, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let emb = linalg::xavier_uniform(n, d, &mut rng);
        let rows = [1usize, 4, 7];
        let upstream = linalg::xavier_uniform(rows.len(), d, &mut rng);
        // f = <upstream, forward(rows)> with a fixed dropout mask.
        let f = |s: &Side, e: &DenseMatrix| {
            let mut cache = SideCache::default();
            let out = s.forward_batch(&rows, e, p, &mut ChaCha8Rng::seed_from_u64(99), &mut cache);
            dot(out.data(), upstream.data())
        };
        let mut cache = SideCache::default();
        side.forward_batch(&rows, &emb, p, &mut ChaCha8Rng::seed_from_u64(99), &mut cache);
        let (mut stepped, mut emb_stepped) = (side.clone(), emb.clone());
        stepped.backward_batch(&cache, &upstream, &mut emb_stepped, p, 1.0);
        let (SideWeights::Attention(before), SideWeights::Attention(after)) = (&side.weights, &stepped.weights) else {
            unreachable!()
        };
        let h = 1e-6;
        let check = |analytic: f64, perturb: &dyn Fn(f64) -> f64| {
            let numeric = (perturb(h) - perturb(-h)) / (2.0 * h);
            assert!((analytic - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()), "analytic {analytic} vs numeric {numeric}");
        };
        for k in 0..6 {
            check(before.a[k] - after.a[k], &|eps| {
                let mut s = side.clone();
                let SideWeights::Attention(q) = &mut s.weights else { unreachable!() };
                q.a[k] += eps;
                f(&s, &emb)
            });
        }
        for (r, c) in [(0, 0), (1, 2), (2, 3)] {
            check(before.w1.get(r, c) - after.w1.get(r, c), &|eps| {
                let mut s = side.clone();
                let SideWeights::Attention(q) = &mut s.weights else { unreachable!() };
                q.w1.set(r, c, q.w1.get(r, c) + eps);
                f(&s, &emb)
            });
        }
        for (r, c) in [(0, 1), (2, 4), (1, 8)] {
            check(before.w2.get(r, c) - after.w2.get(r, c), &|eps| {
                let mut s = side.clone();
                let SideWeights::Attention(q) = &mut s.weights else { unreachable!() };
                q.w2.set(r, c, q.w2.get(r, c) + eps);
                f(&s, &emb)
            });
        }
        for (r, c) in [(0, 0), (4, 1), (8, 2)] {
            check(emb.get(r, c) - emb_stepped.get(r, c), &|eps| {
                let mut e = emb.clone();
                e.set(r, c, e.get(r, c) + eps);
                f(&side, &e)
            });
        }
    }

    #[test]
    fn attention_gradients_without_dropout() {
        attention_gradients_match_differences(0.0);
    }

    #[test]
    fn attention_gradients_with_dropout() {
        attention_gradients_match_differences(0.3);
    }

    #[test]
    fn batch_forward_paths_agree_without_a_mask() {
        let side = attention_side(9, 4, 2);
        let emb = linalg::xavier_uniform(9, 3, &mut ChaCha8Rng::seed_from_u64(1));
        let rows = [0usize, 3, 8];
        let out = side.forward_batch(&rows, &emb, 0.0, &mut ChaCha8Rng::seed_from_u64(0), &mut SideCache::default());
        let dense = side.operator().unwrap().rows(&rows).matmul(&emb);
        assert!(out.max_abs_diff(&dense) < 1e-12);
    }
}
