//! Lanczos iteration with full reorthogonalization, explicit restarts and
//! locking of converged Ritz pairs. Finds the largest eigenpairs of a
//! symmetric operator given only its action on vectors.
//!
//! Locked vectors are deflated out of every new Krylov space, so repeated
//! eigenvalues are recovered one copy at a time. Once enough pairs are locked
//! a final search of the complement checks that nothing larger was skipped.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, axpy, dot, norm, DenseMatrix};

#[derive(Clone, Copy, Debug)]
pub struct LanczosOptions {
    /// Target residual `‖A v − λ v‖` for every returned pair.
    pub tol: f64,
    pub seed: u64,
    /// Cap on Krylov restarts across the whole solve.
    pub max_restarts: usize,
    /// Krylov space size per cycle; `0` picks one from the request size.
    pub subspace: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            tol: 1e-8,
            seed: 0,
            max_restarts: 500,
            subspace: 0,
        }
    }
}

pub struct LanczosResult {
    /// Descending.
    pub values: Vec<f64>,
    /// `n × count`, columns matching `values`.
    pub vectors: DenseMatrix,
    pub restarts: usize,
    pub matvecs: usize,
}

struct Counter<'a, F> {
    op: &'a F,
    calls: usize,
}

impl<F: Fn(&[f64], &mut [f64])> Counter<'_, F> {
    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        self.calls += 1;
        (self.op)(x, y)
    }
}

/// Two passes of classical Gram-Schmidt against every vector in `bases`.
fn orthogonalize(v: &mut [f64], bases: &[&[Vec<f64>]]) {
    for _ in 0..2 {
        for basis in bases {
            for q in basis.iter() {
                let c = dot(q, v);
                axpy(-c, q, v);
            }
        }
    }
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng, locked: &[Vec<f64>]) -> Option<Vec<f64>> {
    for _ in 0..8 {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        orthogonalize(&mut v, &[locked]);
        let nv = norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            return Some(v);
        }
    }
    None
}

fn normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let nv = norm(&v);
    if nv > 1e-10 {
        v.iter_mut().for_each(|x| *x /= nv);
        Some(v)
    } else {
        None
    }
}

/// Largest `count` eigenpairs of the symmetric operator `op` on `R^n`.
pub fn largest<F>(op: &F, n: usize, count: usize, opts: &LanczosOptions) -> Result<LanczosResult>
where
    F: Fn(&[f64], &mut [f64]),
{
    if count > n {
        return Err(Error::config(format!("requested {count} eigenpairs of a {n}-dimensional operator")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::config("eigensolver tolerance must be positive"));
    }
    let mut op = Counter { op, calls: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let lock_tol = opts.tol * 0.1;

    let mut locked: Vec<Vec<f64>> = Vec::new();
    let mut locked_vals: Vec<f64> = Vec::new();
    let mut restarts = 0usize;
    let mut worst_residual = f64::INFINITY;

    'outer: loop {
        if count == 0 {
            break;
        }
        let searching = locked.len() < count;
        // In the verification phase we look for a single missed pair.
        let need = if searching { count - locked.len() } else { 1 };
        let room = n - locked.len();
        if room == 0 {
            break;
        }
        let m = if opts.subspace > 0 {
            opts.subspace.max(need + 1)
        } else {
            (2 * need + 40).max(60)
        }
        .min(room);
        // Ritz vectors carried over a restart.
        let keep = (need + (m - need) / 2).min(m.saturating_sub(1)).max(need.min(m));

        // Orthonormal basis and its image under the operator.
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut w: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut next = random_unit(n, &mut rng, &locked);
        loop {
            if restarts >= opts.max_restarts {
                return Err(Error::Convergence {
                    iterations: restarts,
                    residual: worst_residual,
                });
            }
            restarts += 1;

            while v.len() < m {
                let mut x = next.take().unwrap_or_default();
                if !x.is_empty() {
                    orthogonalize(&mut x, &[&locked, &v]);
                }
                let x = match normalized(x) {
                    Some(x) => x,
                    None => {
                        // Invariant subspace: continue from a fresh direction so
                        // degenerate spectra are fully explored.
                        let fresh = random_unit(n, &mut rng, &locked).and_then(|mut r| {
                            orthogonalize(&mut r, &[&v]);
                            normalized(r)
                        });
                        match fresh {
                            Some(x) => x,
                            None => break,
                        }
                    }
                };
                let mut ax = vec![0.0; n];
                op.apply(&x, &mut ax);
                let mut r = ax.clone();
                v.push(x);
                orthogonalize(&mut r, &[&locked, &v]);
                w.push(ax);
                next = Some(r);
            }
            let k = v.len();
            if k == 0 {
                break 'outer;
            }
            let mut h = DenseMatrix::from_fn(k, k, |i, j| dot(&v[i], &w[j]));
            for i in 0..k {
                for j in (i + 1)..k {
                    let avg = 0.5 * (h.get(i, j) + h.get(j, i));
                    h.set(i, j, avg);
                    h.set(j, i, avg);
                }
            }
            let (theta, s) = linalg::symmetric_eigen(&h)?;

            // Ritz pairs, largest first, with exact residuals from the stored
            // images.
            let take = keep.max(need).min(k);
            let mut ys = Vec::with_capacity(take);
            let mut zs = Vec::with_capacity(take);
            let mut residuals = Vec::with_capacity(take);
            for r in 0..take {
                let col = k - 1 - r;
                let mut y = vec![0.0; n];
                let mut z = vec![0.0; n];
                for i in 0..k {
                    axpy(s.get(i, col), &v[i], &mut y);
                    axpy(s.get(i, col), &w[i], &mut z);
                }
                let res: Vec<f64> = z.iter().zip(&y).map(|(a, b)| a - theta[col] * b).collect();
                residuals.push(res);
                ys.push(y);
                zs.push(z);
            }
            let wanted = need.min(take);
            let norms: Vec<f64> = residuals.iter().map(|r| norm(r)).collect();
            worst_residual = norms[..wanted].iter().copied().fold(0.0, f64::max);
            if worst_residual <= lock_tol {
                if searching {
                    for r in 0..wanted {
                        locked.push(std::mem::take(&mut ys[r]));
                        locked_vals.push(theta[k - 1 - r]);
                    }
                    continue 'outer;
                }
                let mut sorted = locked_vals.clone();
                sorted.sort_by(|a, b| b.total_cmp(a));
                let kth = sorted[count - 1];
                let top = theta[k - 1];
                if top > kth + opts.tol {
                    locked.push(std::mem::take(&mut ys[0]));
                    locked_vals.push(top);
                    continue 'outer;
                }
                // Nothing above the locked set remains.
                return finish(&mut op, n, count, locked, restarts);
            }
            // Thick restart: keep the leading Ritz vectors and continue the
            // Krylov sequence from the largest residual direction.
            let lead = (0..take).max_by(|&a, &b| norms[a].total_cmp(&norms[b])).unwrap();
            next = Some(std::mem::take(&mut residuals[lead]));
            let kept = take.min(m.saturating_sub(1)).max(1);
            ys.truncate(kept);
            zs.truncate(kept);
            v = ys;
            w = zs;
        }
    }
    finish(&mut op, n, count, locked, restarts)
}

/// Rayleigh-Ritz over the locked vectors, keeping the top `count`.
fn finish<F: Fn(&[f64], &mut [f64])>(
    op: &mut Counter<'_, F>,
    n: usize,
    count: usize,
    locked: Vec<Vec<f64>>,
    restarts: usize,
) -> Result<LanczosResult> {
    let l = locked.len();
    if l < count {
        return Err(Error::Numeric(format!("only {l} of {count} eigenpairs could be isolated")));
    }
    let mut y = DenseMatrix::zeros(n, l);
    for (j, v) in locked.iter().enumerate() {
        y.set_column(j, v);
    }
    let y = if l > 0 { linalg::orthonormalize_columns(&y) } else { y };
    let mut ay = DenseMatrix::zeros(n, l);
    let mut buf = vec![0.0; n];
    for j in 0..l {
        op.apply(&y.column(j), &mut buf);
        ay.set_column(j, &buf);
    }
    let mut h = y.t_matmul(&ay);
    // Symmetrize against rounding before the small dense solve.
    for i in 0..l {
        for j in (i + 1)..l {
            let avg = 0.5 * (h.get(i, j) + h.get(j, i));
            h.set(i, j, avg);
            h.set(j, i, avg);
        }
    }
    let (vals, vecs) = linalg::symmetric_eigen(&h)?;
    let order: Vec<usize> = (0..l).rev().take(count).collect();
    let rotated = y.matmul(&vecs.select_columns(&order));
    Ok(LanczosResult {
        values: order.iter().map(|&c| vals[c]).collect(),
        vectors: rotated,
        restarts,
        matvecs: op.calls,
    })
}
