//! Truncated eigendecompositions of propagation matrices, feature variation,
//! cropped low-rank operators and variation-band partitions.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{hex, MatrixKind, PropagationMatrix};
use crate::lanczos::{self, LanczosOptions};
use crate::linalg::{self, DenseMatrix};

/// Largest matrix the dense oracle will decompose.
pub const DENSE_ORACLE_GUARD: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    /// Largest eigenvalues, sorted descending.
    Smoothed,
    /// Smallest eigenvalues, sorted ascending.
    Rough,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EigenMethod {
    /// Dense below the size threshold, Lanczos above it.
    #[default]
    Auto,
    Lanczos,
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenOptions {
    pub tol: f64,
    pub seed: u64,
    pub method: EigenMethod,
    /// `Auto` switches to Lanczos above this dimension.
    pub dense_threshold: usize,
    pub max_restarts: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-8,
            seed: 0,
            method: EigenMethod::Auto,
            dense_threshold: DENSE_ORACLE_GUARD,
            max_restarts: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralBasis {
    /// `dimension × count`, orthonormal columns.
    pub features: DenseMatrix,
    pub eigenvalues: Vec<f64>,
    pub band: Band,
    pub source_kind: MatrixKind,
    /// Content hash of the matrix the basis was computed from.
    pub source_hash: String,
    /// Original node index of each row (see [`PropagationMatrix::nodes`]).
    pub nodes: Vec<usize>,
    pub full_dimension: usize,
}

impl SpectralBasis {
    pub fn dimension(&self) -> usize {
        self.features.rows()
    }

    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Sub-basis with the given columns, in the given order.
    pub fn select(&self, columns: &[usize]) -> SpectralBasis {
        SpectralBasis {
            features: self.features.select_columns(columns),
            eigenvalues: columns.iter().map(|&c| self.eigenvalues[c]).collect(),
            band: self.band,
            source_kind: self.source_kind,
            source_hash: self.source_hash.clone(),
            nodes: self.nodes.clone(),
            full_dimension: self.full_dimension,
        }
    }

    /// Largest `‖A v − λ v‖` over the columns.
    pub fn max_residual(&self, p: &PropagationMatrix) -> f64 {
        let n = self.dimension();
        let mut av = vec![0.0; n];
        (0..self.count())
            .map(|t| {
                let v = self.features.column(t);
                p.matvec(&v, &mut av);
                let lam = self.eigenvalues[t];
                av.iter().zip(&v).map(|(a, b)| (a - lam * b).powi(2)).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn orthonormality_error(&self) -> f64 {
        linalg::orthonormality_error(&self.features)
    }

    /// Hash over eigenvalues and features, used to prove that experiment arms
    /// share a basis.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.source_hash.as_bytes());
        for v in &self.eigenvalues {
            h.update(v.to_le_bytes());
        }
        for v in self.features.data() {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(
            fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?,
        );
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        for v in [self.dimension(), self.count(), self.full_dimension] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&[band_code(self.band), kind_code(self.source_kind)])?;
        let hash = self.source_hash.as_bytes();
        w.write_all(&(hash.len() as u32).to_le_bytes())?;
        w.write_all(hash)?;
        for &n in &self.nodes {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for v in &self.eigenvalues {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.features.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SpectralBasis> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let bad = |message: &str| Error::Format {
            path: path.to_path_buf(),
            line: 0,
            message: message.to_string(),
        };
        let mut r = ByteReader { bytes: &bytes, pos: 0 };
        if r.take(CACHE_MAGIC.len()).ok_or_else(|| bad("truncated header"))? != CACHE_MAGIC {
            return Err(bad("not a basis cache file"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != CACHE_VERSION {
            return Err(bad("unsupported basis cache version"));
        }
        let dim = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        let count = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        let full_dimension = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        let codes = r.take(2).ok_or_else(|| bad("truncated header"))?;
        let band = band_from(codes[0]).ok_or_else(|| bad("unknown band code"))?;
        let kind = kind_from(codes[1]).ok_or_else(|| bad("unknown matrix kind"))?;
        let hash_len = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let hash = r.take(hash_len).ok_or_else(|| bad("truncated header"))?;
        let source_hash = String::from_utf8(hash.to_vec()).map_err(|_| bad("bad source hash"))?;
        let nodes = (0..dim)
            .map(|_| r.u64().map(|v| v as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated node map"))?;
        let eigenvalues = (0..count)
            .map(|_| r.f64())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated eigenvalues"))?;
        let data = (0..dim * count)
            .map(|_| r.f64())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated features"))?;
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(SpectralBasis {
            features: DenseMatrix::from_vec(dim, count, data)?,
            eigenvalues,
            band,
            source_kind: kind,
            source_hash,
            nodes,
            full_dimension,
        })
    }
}

const CACHE_MAGIC: &[u8; 8] = b"GDEBASIS";
const CACHE_VERSION: u32 = 1;

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

fn band_code(b: Band) -> u8 {
    match b {
        Band::Smoothed => 0,
        Band::Rough => 1,
    }
}

fn band_from(c: u8) -> Option<Band> {
    match c {
        0 => Some(Band::Smoothed),
        1 => Some(Band::Rough),
        _ => None,
    }
}

fn kind_code(k: MatrixKind) -> u8 {
    match k {
        MatrixKind::BipartiteAdjacency => 0,
        MatrixKind::HyperUser => 1,
        MatrixKind::HyperItem => 2,
        MatrixKind::Laplacian => 3,
    }
}

fn kind_from(c: u8) -> Option<MatrixKind> {
    match c {
        0 => Some(MatrixKind::BipartiteAdjacency),
        1 => Some(MatrixKind::HyperUser),
        2 => Some(MatrixKind::HyperItem),
        3 => Some(MatrixKind::Laplacian),
        _ => None,
    }
}

/// Cache file name for a basis request; the source hash keys the content.
pub fn cache_path(dir: &Path, p: &PropagationMatrix, band: Band, count: usize, opts: &EigenOptions) -> PathBuf {
    let band = match band {
        Band::Smoothed => "smoothed",
        Band::Rough => "rough",
    };
    let hash = p.fingerprint();
    let method = match opts.method {
        EigenMethod::Dense => "dense".to_string(),
        EigenMethod::Lanczos => format!("lanczos{}", opts.seed),
        EigenMethod::Auto if p.dimension() <= opts.dense_threshold => "dense".to_string(),
        EigenMethod::Auto => format!("lanczos{}", opts.seed),
    };
    dir.join(format!(
        "{}-{band}-{count}-{method}-{:e}-{}.basis",
        p.kind.name(),
        opts.tol,
        &hash[..16]
    ))
}

/// Flips each column so its largest-magnitude entry is positive (first such
/// entry on ties).
fn fix_signs(v: &mut DenseMatrix) {
    for j in 0..v.cols() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..v.rows() {
            let a = v.get(i, j).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if v.rows() > 0 && v.get(best, j) < 0.0 {
            for i in 0..v.rows() {
                v.set(i, j, -v.get(i, j));
            }
        }
    }
}

fn basis_from(p: &PropagationMatrix, band: Band, eigenvalues: Vec<f64>, mut features: DenseMatrix) -> SpectralBasis {
    fix_signs(&mut features);
    SpectralBasis {
        features,
        eigenvalues,
        band,
        source_kind: p.kind,
        source_hash: p.fingerprint(),
        nodes: p.nodes.clone(),
        full_dimension: p.full_dimension,
    }
}

/// Full spectrum by dense symmetric eigendecomposition, eigenvalues sorted
/// descending (ties keep the solver's index order). Refuses matrices larger
/// than `guard`.
pub fn full_spectrum(p: &PropagationMatrix, guard: usize) -> Result<SpectralBasis> {
    let n = p.dimension();
    if n > guard {
        return Err(Error::config(format!(
            "dense eigendecomposition of a {n}-dimensional matrix exceeds the size guard of {guard}"
        )));
    }
    let (vals, vecs) = linalg::symmetric_eigen(&p.to_dense())?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let features = vecs.select_columns(&order);
    let eigenvalues = order.iter().map(|&k| vals[k]).collect();
    Ok(basis_from(p, Band::Smoothed, eigenvalues, features))
}

/// Reference full spectrum for testing the truncated solver.
pub fn dense_eig_oracle(p: &PropagationMatrix) -> Result<SpectralBasis> {
    full_spectrum(p, DENSE_ORACLE_GUARD)
}

/// The `count` largest (smoothed) or smallest (rough) eigenpairs of `p`.
pub fn eigs_band(p: &PropagationMatrix, count: usize, band: Band, opts: &EigenOptions) -> Result<SpectralBasis> {
    let (smoothed, rough) = match band {
        Band::Smoothed => (count, 0),
        Band::Rough => (0, count),
    };
    let (s, r) = eigs_bands(p, smoothed, rough, opts)?;
    Ok(match band {
        Band::Smoothed => s,
        Band::Rough => r,
    })
}

/// Both ends of the spectrum at once; the dense path decomposes `p` only
/// once.
pub fn eigs_bands(
    p: &PropagationMatrix,
    smoothed: usize,
    rough: usize,
    opts: &EigenOptions,
) -> Result<(SpectralBasis, SpectralBasis)> {
    let n = p.dimension();
    for count in [smoothed, rough] {
        if count > n {
            return Err(Error::config(format!(
                "requested {count} eigenpairs of a {n}-dimensional matrix"
            )));
        }
    }
    if !(opts.tol > 0.0) {
        return Err(Error::config("eigensolver tolerance must be positive"));
    }
    let use_dense = match opts.method {
        EigenMethod::Dense => true,
        EigenMethod::Lanczos => false,
        EigenMethod::Auto => n <= opts.dense_threshold,
    };
    let (s, r) = if use_dense {
        let full = full_spectrum(p, n.max(opts.dense_threshold))?;
        let s = full.select(&(0..smoothed).collect::<Vec<_>>());
        let mut r = full.select(&(0..rough).map(|k| n - 1 - k).collect::<Vec<_>>());
        r.band = Band::Rough;
        (s, r)
    } else {
        (
            lanczos_band(p, smoothed, Band::Smoothed, opts)?,
            lanczos_band(p, rough, Band::Rough, opts)?,
        )
    };
    for b in [&s, &r] {
        let residual = b.max_residual(p);
        if residual > opts.tol {
            return Err(Error::Convergence {
                iterations: 0,
                residual,
            });
        }
    }
    Ok((s, r))
}

fn lanczos_band(p: &PropagationMatrix, count: usize, band: Band, opts: &EigenOptions) -> Result<SpectralBasis> {
    let n = p.dimension();
    if count == 0 {
        return Ok(basis_from(p, band, Vec::new(), DenseMatrix::zeros(n, 0)));
    }
    let lopts = LanczosOptions {
        tol: opts.tol,
        seed: opts.seed,
        max_restarts: opts.max_restarts,
        subspace: 0,
    };
    match band {
        Band::Smoothed => {
            let op = |x: &[f64], y: &mut [f64]| p.matvec(x, y);
            let r = lanczos::largest(&op, n, count, &lopts)?;
            Ok(basis_from(p, band, r.values, r.vectors))
        }
        Band::Rough => {
            // Largest eigenpairs of I − A are the smallest of A.
            let op = |x: &[f64], y: &mut [f64]| {
                p.matvec(x, y);
                for (yi, xi) in y.iter_mut().zip(x) {
                    *yi = xi - *yi;
                }
            };
            let r = lanczos::largest(&op, n, count, &lopts)?;
            let values = r.values.iter().map(|mu| 1.0 - mu).collect();
            Ok(basis_from(p, band, values, r.vectors))
        }
    }
}

/// [`eigs_bands`] backed by an on-disk cache keyed by the matrix content,
/// band, count and solver settings.
pub fn eigs_bands_cached(
    p: &PropagationMatrix,
    smoothed: usize,
    rough: usize,
    opts: &EigenOptions,
    dir: Option<&Path>,
) -> Result<(SpectralBasis, SpectralBasis)> {
    let Some(dir) = dir else {
        return eigs_bands(p, smoothed, rough, opts);
    };
    let sp = cache_path(dir, p, Band::Smoothed, smoothed, opts);
    let rp = cache_path(dir, p, Band::Rough, rough, opts);
    if let (Ok(s), Ok(r)) = (SpectralBasis::load(&sp), SpectralBasis::load(&rp)) {
        if s.source_hash == p.fingerprint() && r.source_hash == s.source_hash {
            return Ok((s, r));
        }
    }
    let (s, r) = eigs_bands(p, smoothed, rough, opts)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    s.save(&sp)?;
    r.save(&rp)?;
    Ok((s, r))
}

/// Variation `1 − λ` of every feature.
pub fn variation(basis: &SpectralBasis) -> Vec<f64> {
    basis.eigenvalues.iter().map(|l| 1.0 - l).collect()
}

/// `‖v − A v‖` computed directly for every feature.
pub fn variation_direct(basis: &SpectralBasis, p: &PropagationMatrix) -> Vec<f64> {
    let n = basis.dimension();
    let mut av = vec![0.0; n];
    (0..basis.count())
        .map(|t| {
            let v = basis.features.column(t);
            p.matvec(&v, &mut av);
            v.iter().zip(&av).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        })
        .collect()
}

/// `V diag(w) Vᵀ` kept in factored form.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankOperator {
    pub factor: DenseMatrix,
    pub weights: Vec<f64>,
}

impl LowRankOperator {
    pub fn dimension(&self) -> usize {
        self.factor.rows()
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    /// Replaces every weight `w` by `f(w)`.
    pub fn map_weights(&self, f: impl Fn(f64) -> f64) -> LowRankOperator {
        LowRankOperator {
            factor: self.factor.clone(),
            weights: self.weights.iter().map(|&w| f(w)).collect(),
        }
    }

    pub fn apply(&self, x: &DenseMatrix) -> DenseMatrix {
        if self.rank() == 0 {
            return DenseMatrix::zeros(self.dimension(), x.cols());
        }
        let mut coeff = self.factor.t_matmul(x);
        for (t, &w) in self.weights.iter().enumerate() {
            coeff.row_mut(t).iter_mut().for_each(|c| *c *= w);
        }
        self.factor.matmul(&coeff)
    }

    /// Densifies; refuses above `guard` rows.
    pub fn to_dense(&self, guard: usize) -> Result<DenseMatrix> {
        if self.dimension() > guard {
            return Err(Error::config(format!(
                "refusing to densify a {0}x{0} operator (guard {guard})",
                self.dimension()
            )));
        }
        let mut scaled = self.factor.clone();
        scaled.scale_columns(&self.weights);
        Ok(scaled.matmul_t(&self.factor))
    }
}

/// `Σ_t λ_t v_t v_tᵀ` over the union of the given sub-bases, which must all
/// come from the same source matrix.
pub fn cropped_matrix(parts: &[&SpectralBasis]) -> Result<LowRankOperator> {
    let Some(first) = parts.first() else {
        return Err(Error::input("cropped_matrix needs at least one basis"));
    };
    if parts
        .iter()
        .any(|b| b.source_hash != first.source_hash || b.dimension() != first.dimension())
    {
        return Err(Error::input("bases come from different source matrices"));
    }
    let n = first.dimension();
    let rank: usize = parts.iter().map(|b| b.count()).sum();
    let mut factor = DenseMatrix::zeros(n, rank);
    let mut weights = Vec::with_capacity(rank);
    let mut col = 0;
    for b in parts {
        for t in 0..b.count() {
            factor.set_column(col, &b.features.column(t));
            weights.push(b.eigenvalues[t]);
            col += 1;
        }
    }
    Ok(LowRankOperator { factor, weights })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandPartition {
    /// `group_count + 1` variation thresholds; group `g` covers
    /// `[boundaries[g], boundaries[g+1])`, the last one closed.
    pub boundaries: Vec<f64>,
    pub group_assignment: Vec<usize>,
    pub group_mass: Vec<f64>,
}

impl BandPartition {
    pub fn members(&self, group: usize) -> Vec<usize> {
        (0..self.group_assignment.len())
            .filter(|&t| self.group_assignment[t] == group)
            .collect()
    }
}

/// Equal-width variation bins over `[min variation, max variation]`.
pub fn band_partition(full: &SpectralBasis, group_count: usize) -> Result<BandPartition> {
    if group_count < 1 {
        return Err(Error::config("band partition needs at least one group"));
    }
    let var = variation(full);
    if var.is_empty() {
        return Err(Error::input("empty spectrum"));
    }
    let lo = var.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = var.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / group_count as f64;
    let boundaries: Vec<f64> = (0..=group_count)
        .map(|g| if g == group_count { hi } else { lo + width * g as f64 })
        .collect();
    let group_assignment: Vec<usize> = var
        .iter()
        .map(|&v| {
            if width <= 0.0 {
                0
            } else {
                (((v - lo) / width).floor() as usize).min(group_count - 1)
            }
        })
        .collect();
    let mut group_mass = vec![0.0; group_count];
    for &g in &group_assignment {
        group_mass[g] += 1.0;
    }
    let total = var.len() as f64;
    group_mass.iter_mut().for_each(|m| *m /= total);
    Ok(BandPartition {
        boundaries,
        group_assignment,
        group_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{hypergraph_user, InteractionGraph};
    use crate::sparse::CsrMatrix;

    fn from_dense(a: &DenseMatrix, kind: MatrixKind) -> PropagationMatrix {
        PropagationMatrix {
            values: CsrMatrix::from_dense(a),
            kind,
            nodes: (0..a.rows()).collect(),
            full_dimension: a.rows(),
        }
    }

    #[test]
    fn leading_pair_of_small_hypergraph() {
        let g = InteractionGraph::from_pairs(2, 2, &[(0, 0), (1, 0), (1, 1)]).unwrap();
        let p = hypergraph_user(&g).unwrap();
        for method in [EigenMethod::Dense, EigenMethod::Lanczos] {
            let opts = EigenOptions { method, ..Default::default() };
            let b = eigs_band(&p, 1, Band::Smoothed, &opts).unwrap();
            assert!((b.eigenvalues[0] - 1.0).abs() < 1e-12);
            let want = [1.0 / 3f64.sqrt(), 2f64.sqrt() / 3f64.sqrt()];
            assert!((b.features.get(0, 0) - want[0]).abs() < 1e-10);
            assert!((b.features.get(1, 0) - want[1]).abs() < 1e-10);
            let r = eigs_band(&p, 1, Band::Rough, &opts).unwrap();
            assert!((r.eigenvalues[0] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_on_diagonal() {
        let p = from_dense(
            &DenseMatrix::from_rows(&[vec![0.3, 0.0], vec![0.0, 0.7]]).unwrap(),
            MatrixKind::HyperUser,
        );
        let b = dense_eig_oracle(&p).unwrap();
        assert!((b.eigenvalues[0] - 0.7).abs() < 1e-15 && (b.eigenvalues[1] - 0.3).abs() < 1e-15);
        assert_eq!(b.features.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn oracle_refuses_large_matrices() {
        let p = from_dense(&DenseMatrix::identity(3), MatrixKind::HyperUser);
        assert!(matches!(full_spectrum(&p, 2), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn count_above_dimension_is_rejected() {
        let p = from_dense(&DenseMatrix::identity(3), MatrixKind::HyperUser);
        assert!(matches!(
            eigs_band(&p, 4, Band::Smoothed, &EigenOptions::default()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn binning_three_features_into_two_groups() {
        let p = from_dense(
            &DenseMatrix::from_fn(3, 3, |i, j| if i == j { [1.0, 0.5, 0.0][i] } else { 0.0 }),
            MatrixKind::HyperUser,
        );
        let full = dense_eig_oracle(&p).unwrap();
        let part = band_partition(&full, 2).unwrap();
        assert_eq!(part.group_assignment, vec![0, 1, 1]);
        assert!((part.group_mass[0] - 1.0 / 3.0).abs() < 1e-15);
        let one = band_partition(&full, 1).unwrap();
        assert_eq!(one.group_assignment, vec![0, 0, 0]);
        assert!(band_partition(&full, 0).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let g = InteractionGraph::from_pairs(3, 3, &[(0, 0), (1, 0), (1, 1), (2, 2)]).unwrap();
        let p = hypergraph_user(&g).unwrap();
        let b = eigs_band(&p, 2, Band::Smoothed, &EigenOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = cache_path(dir.path(), &p, Band::Smoothed, 2, &EigenOptions::default());
        b.save(&path).unwrap();
        assert_eq!(SpectralBasis::load(&path).unwrap(), b);
    }

    #[test]
    fn mixed_sources_are_rejected() {
        let a = from_dense(&DenseMatrix::identity(2), MatrixKind::HyperUser);
        let b = from_dense(&DenseMatrix::from_fn(2, 2, |_, _| 0.5), MatrixKind::HyperUser);
        let ba = dense_eig_oracle(&a).unwrap();
        let bb = dense_eig_oracle(&b).unwrap();
        assert!(cropped_matrix(&[&ba, &bb]).is_err());
        assert_eq!(cropped_matrix(&[&ba.select(&[])]).unwrap().to_dense(10).unwrap(), DenseMatrix::zeros(2, 2));
    }
}
