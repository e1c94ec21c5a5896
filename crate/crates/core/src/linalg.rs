//! Dense linear-algebra kernels shared by the solver modules.
//!
//! Matrices are `nalgebra` column-major `DMatrix<f64>`. The hot loops (Hessian
//! assembly, the trailing update of the blocked Cholesky factorization) split
//! work over contiguous column blocks, which run on the rayon pool when the
//! `parallel` feature is enabled and [`Execution::Parallel`] is requested.
//! Every output entry is produced by exactly one task with a fixed summation
//! order, so sequential and parallel runs are bitwise identical.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Unit roundoff of IEEE double precision, 2^-53.
pub const UNIT_ROUNDOFF: f64 = f64::EPSILON / 2.0;

const CHOLESKY_BLOCK: usize = 96;

/// Whether data-parallel inner loops may use the rayon thread pool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be dispatched to rayon.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Runs `f(chunk_index, chunk)` over consecutive `chunk_len`-sized pieces of `data`.
pub(crate) fn for_each_chunk_mut<F>(data: &mut [f64], chunk_len: usize, exec: Execution, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(k, c)| f(k, c));
        return;
    }
    let _ = exec;
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(k, c)| f(k, c));
}

/// Maps `f` over `0..n`, collecting results in index order.
pub(crate) fn map_indices<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// In-place lower Cholesky factorization `A = L Lᵗ`.
///
/// Only the lower triangle of `a` is read; on success it holds `L` and the
/// strict upper triangle is zeroed. On failure returns the index of the first
/// pivot that is not strictly positive.
pub fn cholesky_in_place(a: &mut DMatrix<f64>, exec: Execution) -> Result<(), usize> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky of a non-square matrix");
    let nb = CHOLESKY_BLOCK;
    let mut k0 = 0;
    while k0 < n {
        let k1 = (k0 + nb).min(n);
        factor_panel(a, k0, k1)?;
        if k1 < n {
            let panel = a.view((k1, k0), (n - k1, k1 - k0)).clone_owned();
            let data = a.as_mut_slice();
            let trailing = &mut data[k1 * n..];
            for_each_chunk_mut(trailing, nb * n, exec, |blk, cols| {
                let j0 = k1 + blk * nb;
                let width = cols.len() / n;
                let mut view = nalgebra::DMatrixViewMut::from_slice(cols, n, width);
                let mut target = view.rows_mut(j0, n - j0);
                let left = panel.rows(j0 - k1, n - j0);
                let right = panel.rows(j0 - k1, width).transpose();
                target.gemm(-1.0, &left, &right, 1.0);
            });
        }
        k0 = k1;
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Ok(())
}

/// Unblocked factorization of columns `k0..k1` including the sub-diagonal panel.
fn factor_panel(a: &mut DMatrix<f64>, k0: usize, k1: usize) -> Result<(), usize> {
    let n = a.nrows();
    for j in k0..k1 {
        // Apply updates from earlier columns of this panel.
        for k in k0..j {
            let ljk = a[(j, k)];
            if ljk != 0.0 {
                for i in j..n {
                    let v = a[(i, k)];
                    a[(i, j)] -= v * ljk;
                }
            }
        }
        let d = a[(j, j)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let ljj = d.sqrt();
        a[(j, j)] = ljj;
        let inv = 1.0 / ljj;
        for i in j + 1..n {
            a[(i, j)] *= inv;
        }
    }
    Ok(())
}

/// Solves `L Lᵗ x = b` in place given the Cholesky factor `L`.
pub fn cholesky_solve_in_place(l: &DMatrix<f64>, b: &mut DVector<f64>) {
    let n = l.nrows();
    for j in 0..n {
        let xj = b[j] / l[(j, j)];
        b[j] = xj;
        for i in j + 1..n {
            b[i] -= l[(i, j)] * xj;
        }
    }
    for j in (0..n).rev() {
        let mut s = b[j];
        for i in j + 1..n {
            s -= l[(i, j)] * b[i];
        }
        b[j] = s / l[(j, j)];
    }
}

/// Solves `L Lᵗ X = B` column by column.
pub fn cholesky_solve_matrix(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = b.clone();
    for mut col in out.column_iter_mut() {
        let mut v = DVector::from_column_slice(col.as_slice());
        cholesky_solve_in_place(l, &mut v);
        col.copy_from(&v);
    }
    out
}

/// `log det A = 2 Σ log L_kk` from a Cholesky factor.
pub fn cholesky_logdet(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Computes `X = A R⁻¹` for an upper-triangular `R`.
pub fn right_solve_upper(a: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    const BLOCK: usize = 16;
    let n = r.nrows();
    let mut x = a.clone();
    let mut jb = 0;
    while jb < n {
        let bs = BLOCK.min(n - jb);
        if jb > 0 {
            let upd = x.columns(0, jb) * r.view((0, jb), (jb, bs));
            let mut blk = x.columns_mut(jb, bs);
            blk -= upd;
        }
        for j in jb..jb + bs {
            for k in jb..j {
                let rkj = r[(k, j)];
                if rkj != 0.0 {
                    let (src, mut dst) = x.columns_range_pair_mut(k, j);
                    dst.axpy(-rkj, &src, 1.0);
                }
            }
            let inv = 1.0 / r[(j, j)];
            x.column_mut(j).scale_mut(inv);
        }
        jb += bs;
    }
    x
}

/// Householder QR returning the thin factors `(Q, R)`.
pub fn thin_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = a.clone().qr();
    (qr.q(), qr.r())
}

/// Indices of a well-conditioned column subset chosen by Householder QR with
/// column pivoting, stopping once the largest remaining column norm falls
/// below `M · ‖A‖ · u`. Ties go to the smaller index.
pub fn pivoted_columns(a: &DMatrix<f64>) -> Vec<usize> {
    let (m, p) = a.shape();
    let mut work = a.clone();
    let mut perm: Vec<usize> = (0..p).collect();
    let anorm = (0..p).map(|j| a.column(j).norm()).fold(0.0, f64::max);
    let tol = m as f64 * anorm * UNIT_ROUNDOFF;
    let mut rank = 0;
    for k in 0..p.min(m) {
        let mut best = k;
        let mut best_norm = -1.0;
        for j in k..p {
            let nrm = work.view((k, j), (m - k, 1)).norm();
            if nrm > best_norm || (nrm == best_norm && perm[j] < perm[best]) {
                best = j;
                best_norm = nrm;
            }
        }
        if !(best_norm > tol) {
            break;
        }
        work.swap_columns(k, best);
        perm.swap(k, best);
        let x = work.view((k, k), (m - k, 1)).clone_owned();
        let alpha = if x[0] >= 0.0 { -best_norm } else { best_norm };
        let mut v = x;
        v[0] -= alpha;
        let vn = v.norm();
        if vn > 0.0 {
            v /= vn;
            for j in k..p {
                let d = v.column(0).dot(&work.view((k, j), (m - k, 1)));
                let mut col = work.view_mut((k, j), (m - k, 1));
                col -= &v * (2.0 * d);
            }
        }
        rank += 1;
    }
    let mut keep: Vec<usize> = perm[..rank].to_vec();
    keep.sort_unstable();
    keep
}

/// `Aᵗ B` through the blocked matrix product, which is much faster than
/// `tr_mul` for tall operands.
pub fn at_b(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b
}

/// Cholesky factorization with diagonal pivoting of a positive semidefinite
/// matrix, stopped once every remaining pivot is at most `tol`.
///
/// Returns the pivot order and `R` (`k × p`, columns in pivot order) with
/// `G[perm, perm] ≈ Rᵗ R`. Ties go to the smaller original index.
pub fn pivoted_cholesky(g: &DMatrix<f64>, tol: f64) -> (Vec<usize>, DMatrix<f64>) {
    let p = g.nrows();
    let mut a = g.clone();
    let mut perm: Vec<usize> = (0..p).collect();
    let mut k = 0;
    while k < p {
        let mut j = k;
        for i in k + 1..p {
            if a[(i, i)] > a[(j, j)] || (a[(i, i)] == a[(j, j)] && perm[i] < perm[j]) {
                j = i;
            }
        }
        let d = a[(j, j)];
        if !(d > tol) {
            break;
        }
        a.swap_rows(k, j);
        a.swap_columns(k, j);
        perm.swap(k, j);
        let rkk = d.sqrt();
        a[(k, k)] = rkk;
        for i in k + 1..p {
            a[(k, i)] /= rkk;
        }
        for jj in k + 1..p {
            let rkj = a[(k, jj)];
            for i in k + 1..p {
                a[(i, jj)] -= a[(k, i)] * rkj;
            }
        }
        k += 1;
    }
    let r = DMatrix::from_fn(k, p, |i, j| if j >= i { a[(i, j)] } else { 0.0 });
    (perm, r)
}

/// Factors `A ≈ Q R` with `Q` an orthonormal basis of the numerical range of
/// `A` and `R = Qᵗ A`.
///
/// The column subset is chosen by pivoted Cholesky of `AᵗA`, then
/// `Q = A₁ R₁⁻¹` is reorthogonalized once by Cholesky QR. Each row of `Q` is a
/// combination of the same row of `A`, so rows that are small in `A` stay
/// small in `Q` to full relative accuracy. Directions with singular values
/// below about `√(p·u) · ‖A‖` are dropped.
pub fn row_scaled_range(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, p) = a.shape();
    let g = at_b(a, a);
    let gmax = (0..p).map(|i| g[(i, i)]).fold(0.0, f64::max);
    let tol = (m.max(p) as f64) * UNIT_ROUNDOFF * gmax;
    let (perm, r) = pivoted_cholesky(&g, tol);
    let k = r.nrows();
    if k == 0 {
        return (DMatrix::zeros(m, 0), DMatrix::zeros(0, p));
    }
    let a1 = a.select_columns(&perm[..k]);
    let q1 = right_solve_upper(&a1, &r.columns(0, k).into_owned());
    let mut g1 = at_b(&q1, &q1);
    let q = match cholesky_in_place(&mut g1, Execution::Sequential) {
        Ok(()) => right_solve_upper(&q1, &g1.transpose()),
        Err(_) => thin_qr(&q1).0,
    };
    let r = at_b(&q, a);
    (q, r)
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let sv = if a.nrows() >= a.ncols() {
        a.clone().singular_values()
    } else {
        a.transpose().singular_values()
    };
    sv.iter().cloned().fold(0.0, f64::max)
}

/// Orthonormal basis of the range of `a` together with its numerical rank,
/// using the singular-value threshold `max(m, n) · σ_max · u`.
pub fn range_basis(a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (DMatrix::zeros(m, 0), 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = m.max(n) as f64 * smax * UNIT_ROUNDOFF;
    let mut keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > tol)
        .collect();
    keep.sort_by(|&x, &y| {
        svd.singular_values[y]
            .partial_cmp(&svd.singular_values[x])
            .unwrap()
    });
    let basis = DMatrix::from_fn(m, keep.len(), |i, j| u[(i, keep[j])]);
    (basis, keep.len())
}

/// Orthonormal basis of the orthogonal complement of `range(u)`, where `u`
/// has orthonormal columns. Built from the Householder reflectors of `u`.
pub fn orthogonal_complement(u: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, r) = u.shape();
    let mut work = u.clone();
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(r);
    for k in 0..r {
        let x = work.view((k, k), (m - k, 1)).clone_owned();
        let alpha = x.norm();
        let mut v = DVector::zeros(m);
        v.rows_mut(k, m - k).copy_from(&x.column(0));
        let s = if x[(0, 0)] >= 0.0 { 1.0 } else { -1.0 };
        v[k] += s * alpha;
        let vn = v.norm();
        if vn > 0.0 {
            v /= vn;
        }
        for c in k..r {
            let d = v.dot(&work.column(c));
            work.column_mut(c).axpy(-2.0 * d, &v, 1.0);
        }
        reflectors.push(v);
    }
    let mut z = DMatrix::zeros(m, m - r);
    for (c, j) in (r..m).enumerate() {
        let mut e = DVector::zeros(m);
        e[j] = 1.0;
        for v in reflectors.iter().rev() {
            let d = v.dot(&e);
            e.axpy(-2.0 * d, v, 1.0);
        }
        z.column_mut(c).copy_from(&e);
    }
    z
}

pub fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sorted_symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<f64> = a.clone().symmetric_eigenvalues().iter().cloned().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}
