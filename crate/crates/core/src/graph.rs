//! Interaction graphs and the propagation matrices built from them: the
//! normalized bipartite adjacency, the user/item hypergraph operators and the
//! normalized Laplacian.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::sparse::CsrMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    /// Binary user × item matrix.
    pub r: CsrMatrix,
    pub user_degree: Vec<f64>,
    pub item_degree: Vec<f64>,
}

impl InteractionGraph {
    pub fn from_pairs(users: usize, items: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let triplets: Vec<_> = pairs.iter().map(|&(u, i)| (u, i, 1.0)).collect();
        // Duplicate pairs would sum to 2; clamp back to a binary matrix.
        let r = CsrMatrix::from_triplets(users, items, &triplets)?.map_values(|_| 1.0);
        Ok(Self::from_matrix(r))
    }

    pub fn from_matrix(r: CsrMatrix) -> Self {
        let user_degree = r.row_sums();
        let item_degree = r.col_sums();
        InteractionGraph {
            r,
            user_degree,
            item_degree,
        }
    }

    pub fn user_count(&self) -> usize {
        self.r.nrows()
    }

    pub fn item_count(&self) -> usize {
        self.r.ncols()
    }

    pub fn edge_count(&self) -> usize {
        self.r.nnz()
    }

    /// The same graph with users and items swapped.
    pub fn transpose(&self) -> InteractionGraph {
        InteractionGraph {
            r: self.r.transpose(),
            user_degree: self.item_degree.clone(),
            item_degree: self.user_degree.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    BipartiteAdjacency,
    HyperUser,
    HyperItem,
    Laplacian,
}

impl MatrixKind {
    pub fn name(self) -> &'static str {
        match self {
            MatrixKind::BipartiteAdjacency => "bipartite_adjacency",
            MatrixKind::HyperUser => "hyper_user",
            MatrixKind::HyperItem => "hyper_item",
            MatrixKind::Laplacian => "laplacian",
        }
    }
}

/// A symmetric sparse operator over a node set. Hypergraph operators drop
/// degree-0 nodes; `nodes[k]` is the original index of local row `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationMatrix {
    pub values: CsrMatrix,
    pub kind: MatrixKind,
    pub nodes: Vec<usize>,
    /// Size of the original node set before dropping isolated nodes.
    pub full_dimension: usize,
}

impl PropagationMatrix {
    pub fn dimension(&self) -> usize {
        self.values.nrows()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.values.to_dense()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        self.values.matvec(x, y)
    }

    /// Content hash of kind, shape and entries.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.kind.name().as_bytes());
        h.update((self.values.nrows() as u64).to_le_bytes());
        h.update((self.full_dimension as u64).to_le_bytes());
        for &n in &self.nodes {
            h.update((n as u64).to_le_bytes());
        }
        for &p in self.values.indptr() {
            h.update((p as u64).to_le_bytes());
        }
        for &j in self.values.indices() {
            h.update((j as u64).to_le_bytes());
        }
        for &v in self.values.values() {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn inv_sqrt(d: f64) -> f64 {
    if d > 0.0 {
        1.0 / d.sqrt()
    } else {
        0.0
    }
}

/// `D̃^{-1/2} Ã D̃^{-1/2}` over the (M+N) user-then-item node set, where
/// `Ã = A + I` when `self_loops` is set.
pub fn normalized_adjacency(g: &InteractionGraph, self_loops: bool) -> PropagationMatrix {
    let (m, n) = (g.user_count(), g.item_count());
    let dim = m + n;
    let loop_weight = if self_loops { 1.0 } else { 0.0 };
    let deg: Vec<f64> = g
        .user_degree
        .iter()
        .chain(&g.item_degree)
        .map(|d| d + loop_weight)
        .collect();
    let norm = |a: usize, b: usize| inv_sqrt(deg[a] * deg[b]);

    let mut indptr = Vec::with_capacity(dim + 1);
    let mut indices = Vec::with_capacity(2 * g.edge_count() + dim);
    let mut values = Vec::with_capacity(2 * g.edge_count() + dim);
    indptr.push(0);
    for u in 0..m {
        if self_loops {
            indices.push(u);
            values.push(norm(u, u));
        }
        for &i in g.r.row(u).0 {
            indices.push(m + i);
            values.push(norm(u, m + i));
        }
        indptr.push(indices.len());
    }
    let rt = g.r.transpose();
    for i in 0..n {
        for &u in rt.row(i).0 {
            indices.push(u);
            values.push(norm(u, m + i));
        }
        if self_loops {
            indices.push(m + i);
            values.push(norm(m + i, m + i));
        }
        indptr.push(indices.len());
    }
    let values = CsrMatrix::from_parts(dim, dim, indptr, indices, values)
        .expect("adjacency assembly produces sorted rows");
    PropagationMatrix {
        values,
        kind: MatrixKind::BipartiteAdjacency,
        nodes: (0..dim).collect(),
        full_dimension: dim,
    }
}

/// `S Sᵀ` with `S = D_u^{-1/2} R D_i^{-1/2}`, restricted to users with at
/// least one interaction.
pub fn hypergraph_user(g: &InteractionGraph) -> Result<PropagationMatrix> {
    hypergraph(g, MatrixKind::HyperUser)
}

/// Item-side counterpart of [`hypergraph_user`]: users act as hyper-edges.
pub fn hypergraph_item(g: &InteractionGraph) -> Result<PropagationMatrix> {
    hypergraph(&g.transpose(), MatrixKind::HyperItem)
}

fn hypergraph(g: &InteractionGraph, kind: MatrixKind) -> Result<PropagationMatrix> {
    if g.edge_count() == 0 {
        return Err(Error::EmptyGraph);
    }
    let nodes: Vec<usize> = (0..g.user_count()).filter(|&u| g.user_degree[u] > 0.0).collect();
    let sub = g.r.scale(
        &g.user_degree.iter().map(|&d| inv_sqrt(d)).collect::<Vec<_>>(),
        &g.item_degree.iter().map(|&d| inv_sqrt(d)).collect::<Vec<_>>(),
    );
    // Keep only non-isolated rows; columns of isolated items are already empty.
    let mut indptr = vec![0];
    let mut indices = Vec::with_capacity(sub.nnz());
    let mut values = Vec::with_capacity(sub.nnz());
    for &u in &nodes {
        let (c, v) = sub.row(u);
        indices.extend_from_slice(c);
        values.extend_from_slice(v);
        indptr.push(indices.len());
    }
    let s = CsrMatrix::from_parts(nodes.len(), sub.ncols(), indptr, indices, values)?;
    let values = s.matmul(&s.transpose());
    Ok(PropagationMatrix {
        values,
        kind,
        nodes,
        full_dimension: g.user_count(),
    })
}

/// `I − p`. Shares the eigenvectors of `p`; eigenvalues map to `1 − λ`.
pub fn laplacian(p: &PropagationMatrix) -> Result<PropagationMatrix> {
    if p.kind == MatrixKind::Laplacian {
        return Err(Error::input("laplacian expects an adjacency-kind matrix"));
    }
    Ok(PropagationMatrix {
        values: p.values.add_identity(-1.0, 1.0),
        kind: MatrixKind::Laplacian,
        nodes: p.nodes.clone(),
        full_dimension: p.full_dimension,
    })
}

/// Unit-norm square-root degree vector over the kept nodes: the leading
/// eigenvector of a hypergraph operator.
pub fn sqrt_degree_vector(degrees: &[f64], nodes: &[usize]) -> Vec<f64> {
    let mut v: Vec<f64> = nodes.iter().map(|&k| degrees[k].sqrt()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(users: usize, items: usize, pairs: &[(usize, usize)]) -> InteractionGraph {
        InteractionGraph::from_pairs(users, items, pairs).unwrap()
    }

    #[test]
    fn single_edge_adjacency() {
        let g = graph(1, 1, &[(0, 0)]);
        let with = normalized_adjacency(&g, true).to_dense();
        assert_eq!(with.data(), &[0.5, 0.5, 0.5, 0.5]);
        let without = normalized_adjacency(&g, false).to_dense();
        assert_eq!(without.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn edgeless_graph_with_loops_is_identity() {
        let g = graph(2, 3, &[]);
        let a = normalized_adjacency(&g, true).to_dense();
        assert_eq!(a, DenseMatrix::identity(5));
        assert!(matches!(hypergraph_user(&g), Err(Error::EmptyGraph)));
    }

    #[test]
    fn small_user_hypergraph() {
        let g = graph(2, 2, &[(0, 0), (1, 0), (1, 1)]);
        let a = hypergraph_user(&g).unwrap().to_dense();
        let off = 0.5 / 2f64.sqrt();
        let want = DenseMatrix::from_rows(&[vec![0.5, off], vec![off, 0.75]]).unwrap();
        assert!(a.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn item_hypergraph_of_one_user_two_items() {
        let g = graph(1, 2, &[(0, 0), (0, 1)]);
        let a = hypergraph_item(&g).unwrap().to_dense();
        assert!(a.max_abs_diff(&DenseMatrix::from_fn(2, 2, |_, _| 0.5)) < 1e-15);
    }

    #[test]
    fn item_hypergraph_is_user_hypergraph_of_transpose() {
        let g = graph(3, 4, &[(0, 0), (0, 3), (1, 1), (2, 1), (2, 3)]);
        let a = hypergraph_item(&g).unwrap();
        let b = hypergraph_user(&g.transpose()).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.nodes, b.nodes);
    }

    #[test]
    fn disconnected_users_have_no_cross_terms() {
        let g = graph(2, 2, &[(0, 0), (1, 1)]);
        let a = hypergraph_user(&g).unwrap().to_dense();
        assert_eq!(a, DenseMatrix::identity(2));
    }

    #[test]
    fn isolated_nodes_are_dropped() {
        let g = graph(3, 3, &[(0, 1), (2, 1)]);
        let a = hypergraph_user(&g).unwrap();
        assert_eq!(a.nodes, vec![0, 2]);
        assert_eq!(a.full_dimension, 3);
        let b = hypergraph_item(&g).unwrap();
        assert_eq!(b.nodes, vec![1]);
        assert!((b.to_dense().get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn laplacian_of_two_node_adjacency() {
        let g = graph(1, 1, &[(0, 0)]);
        let l = laplacian(&normalized_adjacency(&g, true)).unwrap().to_dense();
        let want = DenseMatrix::from_rows(&[vec![0.5, -0.5], vec![-0.5, 0.5]]).unwrap();
        assert!(l.max_abs_diff(&want) < 1e-15);
        assert!(laplacian(&laplacian(&normalized_adjacency(&g, true)).unwrap()).is_err());
    }
}
