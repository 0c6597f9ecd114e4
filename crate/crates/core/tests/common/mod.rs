#![allow(dead_code)]

use gde_core::gde::{gamma_static, relation_matrix, Gamma, Kernel, KernelParams};
use gde_core::graph::InteractionGraph;
use gde_core::linalg::DenseMatrix;
use gde_core::spectral::SpectralBasis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random bipartite graph in which every user and every item has at least
/// one edge, so no node is dropped from the co-interaction matrices.
pub fn connected_graph(users: usize, items: usize, density: f64, seed: u64) -> InteractionGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for u in 0..users {
        pairs.push((u, rng.random_range(0..items)));
    }
    for i in 0..items {
        pairs.push((rng.random_range(0..users), i));
    }
    for u in 0..users {
        for i in 0..items {
            if rng.random::<f64>() < density {
                pairs.push((u, i));
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    InteractionGraph::from_pairs(users, items, &pairs).unwrap()
}

/// `Σ_{k≤terms} β^k/k! · Ā^k` with `Ā^0 = P Pᵀ`, the projection onto the kept
/// features.
pub fn exp_series(bases: &[&SpectralBasis], beta: f64, terms: usize) -> DenseMatrix {
    let n = bases[0].dimension();
    let mut proj = DenseMatrix::zeros(n, n);
    let mut cropped = DenseMatrix::zeros(n, n);
    for b in bases {
        let mut scaled = b.features.clone();
        scaled.scale_columns(&b.eigenvalues);
        proj = add(&proj, &b.features.matmul_t(&b.features));
        cropped = add(&cropped, &scaled.matmul_t(&b.features));
    }
    let mut term = proj.clone();
    let mut sum = proj;
    for k in 1..=terms {
        term = term.matmul(&cropped);
        term.scale(beta / k as f64);
        sum = add(&sum, &term);
    }
    sum
}

pub fn add(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) + b.get(i, j))
}

/// Dense relation operator of the exponential kernel over `bases`.
pub fn exp_relation(bases: &[&SpectralBasis], beta: f64) -> DenseMatrix {
    let lambdas: Vec<f64> = bases.iter().flat_map(|b| b.eigenvalues.clone()).collect();
    let w = gamma_static(&lambdas, Kernel::Exp, beta, &KernelParams::default()).unwrap();
    relation_matrix(bases, Gamma::PerFeature(w)).unwrap().to_dense(1000).unwrap()
}
