//! Matrix factorization and LightGCN baselines, the Laplacian (rough-emphasis)
//! filter, and polynomial filter-weight curves.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{laplacian, normalized_adjacency, InteractionGraph};
use crate::linalg::{self, dot, DenseMatrix};
use crate::sparse::CsrMatrix;
use crate::spectral::LowRankOperator;
use crate::train::Trainable;

/// Plain embedding tables scored by inner product.
#[derive(Clone, Debug, PartialEq)]
pub struct MfModel {
    pub user_embedding: DenseMatrix,
    pub item_embedding: DenseMatrix,
    last_users: Vec<usize>,
    last_items: Vec<usize>,
}

impl MfModel {
    pub fn new(users: usize, items: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("embed_dim must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::from_embeddings(
            linalg::xavier_uniform(users, dim, &mut rng),
            linalg::xavier_uniform(items, dim, &mut rng),
        ))
    }

    pub fn from_embeddings(user_embedding: DenseMatrix, item_embedding: DenseMatrix) -> Self {
        MfModel {
            user_embedding,
            item_embedding,
            last_users: Vec::new(),
            last_items: Vec::new(),
        }
    }
}

pub fn mf_score(model: &MfModel, u: usize, i: usize) -> Result<f64> {
    crate::gde::score(&model.user_embedding, &model.item_embedding, u, i)
}

fn sgd_rows(table: &mut DenseMatrix, rows: &[usize], grad: &DenseMatrix, lr: f64) {
    for (r, &k) in rows.iter().enumerate() {
        linalg::axpy(-lr, grad.row(r), table.row_mut(k));
    }
}

impl Trainable for MfModel {
    fn user_count(&self) -> usize {
        self.user_embedding.rows()
    }

    fn item_count(&self) -> usize {
        self.item_embedding.rows()
    }

    fn forward_batch(&mut self, users: &[usize], items: &[usize], _rng: &mut ChaCha8Rng) -> Result<(DenseMatrix, DenseMatrix)> {
        self.last_users = users.to_vec();
        self.last_items = items.to_vec();
        Ok((self.user_embedding.select_rows(users), self.item_embedding.select_rows(items)))
    }

    fn backward_batch(&mut self, grad_users: &DenseMatrix, grad_items: &DenseMatrix, lr: f64) -> Result<()> {
        sgd_rows(&mut self.user_embedding, &self.last_users, grad_users, lr);
        sgd_rows(&mut self.item_embedding, &self.last_items, grad_items, lr);
        Ok(())
    }

    fn output_embeddings(&self) -> Result<(DenseMatrix, DenseMatrix)> {
        Ok((self.user_embedding.clone(), self.item_embedding.clone()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LightGcnConfig {
    pub layers: usize,
    /// `layers + 1` weights; uniform `1/(K+1)` when absent.
    pub layer_weights: Option<Vec<f64>>,
    pub self_loops: bool,
}

impl Default for LightGcnConfig {
    fn default() -> Self {
        LightGcnConfig {
            layers: 2,
            layer_weights: None,
            self_loops: false,
        }
    }
}

impl LightGcnConfig {
    pub fn weights(&self) -> Result<Vec<f64>> {
        match &self.layer_weights {
            None => Ok(uniform_weights(self.layers)),
            Some(w) if w.len() == self.layers + 1 && w.iter().all(|x| x.is_finite()) => Ok(w.clone()),
            Some(w) => Err(Error::config(format!(
                "{} layers need {} layer weights, got {}",
                self.layers,
                self.layers + 1,
                w.len()
            ))),
        }
    }
}

pub fn uniform_weights(layers: usize) -> Vec<f64> {
    vec![1.0 / (layers + 1) as f64; layers + 1]
}

/// `Σ_k w_k Pᵏ X` by repeated sparse products.
pub fn polynomial_propagate(p: &CsrMatrix, x: &DenseMatrix, weights: &[f64]) -> DenseMatrix {
    let mut out = x.clone();
    out.scale(weights.first().copied().unwrap_or(0.0));
    let mut h = x.clone();
    let mut next = DenseMatrix::zeros(x.rows(), x.cols());
    for &w in &weights[1..] {
        p.mul_dense_into(&h, &mut next);
        std::mem::swap(&mut h, &mut next);
        linalg::axpy(w, h.data(), out.data_mut());
    }
    out
}

/// `Σ_k α_k Âᵏ E` over the user-then-item embedding table.
pub fn lightgcn_forward(g: &InteractionGraph, e: &DenseMatrix, cfg: &LightGcnConfig) -> Result<DenseMatrix> {
    let weights = cfg.weights()?;
    check_table(g, e)?;
    let a = normalized_adjacency(g, cfg.self_loops);
    Ok(polynomial_propagate(&a.values, e, &weights))
}

/// `Σ_k α_k Lᵏ E` with `L = I − Â`.
pub fn laplacian_forward(g: &InteractionGraph, e: &DenseMatrix, cfg: &LightGcnConfig) -> Result<DenseMatrix> {
    let weights = cfg.weights()?;
    check_table(g, e)?;
    let l = laplacian(&normalized_adjacency(g, cfg.self_loops))?;
    Ok(polynomial_propagate(&l.values, e, &weights))
}

fn check_table(g: &InteractionGraph, e: &DenseMatrix) -> Result<()> {
    let n = g.user_count() + g.item_count();
    if e.rows() != n {
        return Err(Error::config(format!("embedding table has {} rows, graph has {n} nodes", e.rows())));
    }
    Ok(())
}

/// `Σ_k α_k λᵏ`, or that divided by `Σ_k α_k` (its value at `λ = 1`) when
/// `normalized`.
pub fn filter_weight(lambda: f64, weights: &[f64], normalized: bool) -> f64 {
    let mut raw = 0.0;
    let mut pow = 1.0;
    for &w in weights {
        raw += w * pow;
        pow *= lambda;
    }
    if normalized {
        raw / weights.iter().sum::<f64>()
    } else {
        raw
    }
}

/// A symmetric linear map applied to a node-by-dimension table.
pub trait Propagation {
    fn propagate(&self, x: &DenseMatrix) -> DenseMatrix;
}

/// Sparse polynomial in a propagation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialFilter {
    pub matrix: CsrMatrix,
    pub weights: Vec<f64>,
}

impl Propagation for PolynomialFilter {
    fn propagate(&self, x: &DenseMatrix) -> DenseMatrix {
        polynomial_propagate(&self.matrix, x, &self.weights)
    }
}

impl Propagation for LowRankOperator {
    fn propagate(&self, x: &DenseMatrix) -> DenseMatrix {
        self.apply(x)
    }
}

/// One embedding table over users then items, propagated by a fixed
/// symmetric operator. LightGCN and its spectrally cropped variants.
#[derive(Debug)]
pub struct PropagatedModel<P> {
    pub embedding: DenseMatrix,
    pub users: usize,
    pub operator: Arc<P>,
    output: Option<DenseMatrix>,
    last_users: Vec<usize>,
    last_items: Vec<usize>,
}

impl<P> Clone for PropagatedModel<P> {
    fn clone(&self) -> Self {
        PropagatedModel {
            embedding: self.embedding.clone(),
            users: self.users,
            operator: Arc::clone(&self.operator),
            output: None,
            last_users: Vec::new(),
            last_items: Vec::new(),
        }
    }
}

pub type LightGcnModel = PropagatedModel<PolynomialFilter>;

impl LightGcnModel {
    pub fn lightgcn(g: &InteractionGraph, cfg: &LightGcnConfig, dim: usize, seed: u64) -> Result<Self> {
        let weights = cfg.weights()?;
        let a = normalized_adjacency(g, cfg.self_loops);
        PropagatedModel::new(
            PolynomialFilter {
                matrix: a.values,
                weights,
            },
            g.user_count(),
            g.item_count(),
            dim,
            seed,
        )
    }
}

impl<P: Propagation> PropagatedModel<P> {
    pub fn new(operator: P, users: usize, items: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("embed_dim must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = linalg::xavier_uniform(users + items, dim, &mut rng);
        Ok(PropagatedModel {
            embedding,
            users,
            operator: Arc::new(operator),
            output: None,
            last_users: Vec::new(),
            last_items: Vec::new(),
        })
    }

    pub fn forward(&self) -> DenseMatrix {
        self.operator.propagate(&self.embedding)
    }

    fn split(&self, full: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
        let users: Vec<usize> = (0..self.users).collect();
        let items: Vec<usize> = (self.users..full.rows()).collect();
        (full.select_rows(&users), full.select_rows(&items))
    }
}

impl<P: Propagation> Trainable for PropagatedModel<P> {
    fn user_count(&self) -> usize {
        self.users
    }

    fn item_count(&self) -> usize {
        self.embedding.rows() - self.users
    }

    fn forward_batch(&mut self, users: &[usize], items: &[usize], _rng: &mut ChaCha8Rng) -> Result<(DenseMatrix, DenseMatrix)> {
        let full = self.forward();
        let ou = full.select_rows(users);
        let shifted: Vec<usize> = items.iter().map(|&i| i + self.users).collect();
        let oi = full.select_rows(&shifted);
        self.output = Some(full);
        self.last_users = users.to_vec();
        self.last_items = shifted;
        Ok((ou, oi))
    }

    fn backward_batch(&mut self, grad_users: &DenseMatrix, grad_items: &DenseMatrix, lr: f64) -> Result<()> {
        let mut g = DenseMatrix::zeros(self.embedding.rows(), self.embedding.cols());
        for (r, &k) in self.last_users.iter().enumerate() {
            g.row_mut(k).copy_from_slice(grad_users.row(r));
        }
        for (r, &k) in self.last_items.iter().enumerate() {
            g.row_mut(k).copy_from_slice(grad_items.row(r));
        }
        // The operator is symmetric, so it is its own adjoint.
        let back = self.operator.propagate(&g);
        linalg::axpy(-lr, back.data(), self.embedding.data_mut());
        self.output = None;
        Ok(())
    }

    fn output_embeddings(&self) -> Result<(DenseMatrix, DenseMatrix)> {
        Ok(self.split(&self.forward()))
    }
}

/// Inner product of two embedding rows (convenience for callers holding a
/// combined table).
pub fn table_score(table: &DenseMatrix, users: usize, u: usize, i: usize) -> Result<f64> {
    if u >= users || users + i >= table.rows() {
        return Err(Error::Index {
            index: if u >= users { u } else { i },
            len: if u >= users { users } else { table.rows() - users },
        });
    }
    Ok(dot(table.row(u), table.row(users + i)))
}
