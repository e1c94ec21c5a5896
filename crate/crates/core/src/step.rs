//! Linear systems with the Hessian of the backward-Euler step objective
//! `g(z) = F(z) + ‖z − z_old‖² / (2τ)`, optionally with the kernel penalty.
//!
//! The Hessian has the form `D + L C Lᵗ` with `D` diagonal, `L = diag(2z) [W/√N | Q]`
//! and `C = diag(I, −2η I)`, where `W` holds the symmetric products of the
//! orthonormal basis and `Q` spans the range of `V(Φ²)`. Since every column of
//! `W` lies in that range, `L C Lᵗ = diag(2z) Q (TTᵗ − 2ηI) Qᵗ diag(2z)` with
//! `T = Qᵗ W/√N`, which has rank `dim Φ²` instead of `N(N+1)/2`; this form is
//! used whenever `Q` is supplied.
//!
//! For small `M` the Hessian is assembled densely and factored by Cholesky.
//! Otherwise the factorization splits the indices: rows where the diagonal
//! dominates are eliminated with a low-rank update, and the remaining rows
//! form a dense Schur complement.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Execution};

/// How the Newton system is factored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HessianStrategy {
    /// Structured above the dense cap, otherwise whichever is cheaper.
    #[default]
    Auto,
    Dense,
    Structured,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HessianOptions {
    pub strategy: HessianStrategy,
    /// Largest `M` for which an `M × M` matrix may be formed.
    pub dense_cap: usize,
    pub exec: Execution,
}

impl Default for HessianOptions {
    fn default() -> Self {
        HessianOptions { strategy: HessianStrategy::Auto, dense_cap: 4000, exec: Execution::default() }
    }
}

/// Everything needed to form `Hess g` at one point.
pub struct StepSystem<'a> {
    /// Orthonormal basis values `Ṽ` at the current point.
    pub vtilde: &'a DMatrix<f64>,
    pub z: &'a DVector<f64>,
    /// `∂_i E(w) + 2η (π_K w)_i`.
    pub grad_e: &'a DVector<f64>,
    pub tau: f64,
    /// `(η, Q)` with `Q` an orthonormal basis of the range of `V(Φ²)`.
    pub penalty: Option<(f64, &'a DMatrix<f64>)>,
    /// Orthonormal basis of the range of `V(Φ²)`. Must be the penalty's `Q`
    /// when both are set.
    pub range: Option<&'a DMatrix<f64>>,
}

impl StepSystem<'_> {
    fn m(&self) -> usize {
        self.z.len()
    }

    fn n(&self) -> usize {
        self.vtilde.ncols()
    }

    fn eta(&self) -> f64 {
        self.penalty.map_or(0.0, |(e, _)| e)
    }

    /// Diagonal part excluding the low-rank term.
    fn base_diagonal(&self) -> DVector<f64> {
        let eta = self.eta();
        let inv_tau = 1.0 / self.tau;
        DVector::from_fn(self.m(), |i, _| {
            let zi = self.z[i];
            2.0 * self.grad_e[i] + 8.0 * eta * zi * zi + inv_tau
        })
    }

    /// Diagonal of the low-rank term, `(L C Lᵗ)_ii`.
    fn lowrank_diagonal(&self) -> DVector<f64> {
        let nf = self.n() as f64;
        let eta = self.eta();
        DVector::from_fn(self.m(), |i, _| {
            let b = self.vtilde.row(i).norm_squared();
            let mut h = b * b / nf;
            if let Some((_, q)) = self.penalty {
                h -= 2.0 * eta * q.row(i).norm_squared();
            }
            4.0 * self.z[i] * self.z[i] * h
        })
    }

    fn lowrank_rank(&self) -> usize {
        match self.range {
            Some(q) => q.ncols(),
            None => {
                let n = self.n();
                n * (n + 1) / 2 + self.penalty.map_or(0, |(_, q)| q.ncols())
            }
        }
    }

    /// Rows `idx` of `W/√N`, columns ordered `(h, k)` with `h ≤ k`, off-diagonal
    /// products weighted by `√2`.
    fn products(&self, idx: &[usize]) -> DMatrix<f64> {
        let n = self.n();
        let scale = 1.0 / (n as f64).sqrt();
        let mut w = DMatrix::zeros(idx.len(), n * (n + 1) / 2);
        let mut c = 0;
        for h in 0..n {
            for k in h..n {
                let s = if h == k { scale } else { std::f64::consts::SQRT_2 * scale };
                let (vh, vk) = (self.vtilde.column(h), self.vtilde.column(k));
                for (dst, &i) in w.column_mut(c).iter_mut().zip(idx) {
                    *dst = s * vh[i] * vk[i];
                }
                c += 1;
            }
        }
        w
    }

    /// The middle factor `C`.
    fn coefficient(&self) -> DMatrix<f64> {
        let eta = self.eta();
        match self.range {
            Some(q) => {
                if let Some((_, qp)) = self.penalty {
                    debug_assert!(std::ptr::eq(q, qp), "range and penalty bases differ");
                }
                let all: Vec<usize> = (0..self.m()).collect();
                let t = linalg::at_b(q, &self.products(&all));
                let mut c = &t * t.transpose();
                for i in 0..c.nrows() {
                    c[(i, i)] -= 2.0 * eta;
                }
                symmetrize(&mut c);
                c
            }
            None => {
                let p = self.n() * (self.n() + 1) / 2;
                let r2 = self.penalty.map_or(0, |(_, q)| q.ncols());
                DMatrix::from_fn(p + r2, p + r2, |i, j| match (i == j, i < p) {
                    (false, _) => 0.0,
                    (true, true) => 1.0,
                    (true, false) => -2.0 * eta,
                })
            }
        }
    }

    /// Rows `idx` of `L`.
    fn lowrank_rows(&self, idx: &[usize]) -> DMatrix<f64> {
        let mut l = match (self.range, self.penalty) {
            (Some(q), _) => q.select_rows(idx),
            (None, None) => self.products(idx),
            (None, Some((_, q))) => {
                let w = self.products(idx);
                let mut l = DMatrix::zeros(idx.len(), w.ncols() + q.ncols());
                l.columns_mut(0, w.ncols()).copy_from(&w);
                l.columns_mut(w.ncols(), q.ncols()).copy_from(&q.select_rows(idx));
                l
            }
        };
        for (row, &i) in idx.iter().enumerate() {
            l.row_mut(row).scale_mut(2.0 * self.z[i]);
        }
        l
    }

    /// `Hess g` as a dense `M × M` matrix.
    pub fn assemble_dense(&self, exec: Execution) -> DMatrix<f64> {
        let m = self.m();
        let nf = self.n() as f64;
        let eta = self.eta();
        let mut h = self.vtilde * self.vtilde.transpose();
        let proj = self.penalty.map(|(_, q)| q * q.transpose());
        let d = self.base_diagonal();
        let z = self.z;
        linalg::for_each_chunk_mut(h.as_mut_slice(), m * 32, exec, |blk, cols| {
            for (jj, col) in cols.chunks_mut(m).enumerate() {
                let j = blk * 32 + jj;
                let zj = 4.0 * z[j];
                match &proj {
                    None => {
                        for (i, x) in col.iter_mut().enumerate() {
                            *x = zj * z[i] * (*x * *x / nf);
                        }
                    }
                    Some(p) => {
                        for (i, x) in col.iter_mut().enumerate() {
                            *x = zj * z[i] * (*x * *x / nf - 2.0 * eta * p[(i, j)]);
                        }
                    }
                }
                // The identity part of the penalty is already in `d`.
                col[j] += d[j];
            }
        });
        h
    }

    /// `Hess g · u` without forming any `M × M` matrix.
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        let idx: Vec<usize> = (0..self.m()).collect();
        let l = self.lowrank_rows(&idx);
        let t = self.coefficient() * l.tr_mul(u);
        self.base_diagonal().component_mul(u) + l * t
    }
}

/// A factorization of `Hess g` ready for repeated solves.
pub enum StepFactor {
    Dense(DMatrix<f64>),
    Structured(Box<Structured>),
}

impl StepFactor {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            StepFactor::Dense(l) => {
                let mut x = b.clone();
                linalg::cholesky_solve_in_place(l, &mut x);
                x
            }
            StepFactor::Structured(s) => s.solve(b),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, StepFactor::Dense(_))
    }
}

/// Factors `Hess g`, failing with `IndefiniteHessian` when it is not positive definite.
pub fn factor(sys: &StepSystem<'_>, opts: &HessianOptions) -> Result<StepFactor> {
    let m = sys.m();
    let use_dense = match opts.strategy {
        HessianStrategy::Dense => {
            if m > opts.dense_cap {
                return Err(Error::DenseCapExceeded { m, cap: opts.dense_cap });
            }
            true
        }
        HessianStrategy::Structured => false,
        HessianStrategy::Auto => {
            if m > opts.dense_cap {
                false
            } else {
                let split = Split::new(sys);
                let r = sys.lowrank_rank() as f64;
                let (nr, ns) = (split.r.len() as f64, split.s.len() as f64);
                let structured = 2.0 * nr * r * r + ns * ns * ns / 3.0 + ns * ns * r;
                let dense = (m as f64).powi(3) / 3.0 + (m * m * sys.n()) as f64;
                dense <= structured
            }
        }
    };
    if use_dense {
        let mut h = sys.assemble_dense(opts.exec);
        linalg::cholesky_in_place(&mut h, opts.exec).map_err(|pivot| Error::IndefiniteHessian { pivot })?;
        Ok(StepFactor::Dense(h))
    } else {
        Ok(StepFactor::Structured(Box::new(Structured::new(sys, opts.exec)?)))
    }
}

/// Index split: `r` rows are diagonally dominated, `s` rows are not.
struct Split {
    r: Vec<usize>,
    s: Vec<usize>,
    d: DVector<f64>,
}

impl Split {
    fn new(sys: &StepSystem<'_>) -> Split {
        let d = sys.base_diagonal();
        let h = sys.lowrank_diagonal();
        let (mut r, mut s) = (Vec::new(), Vec::new());
        for i in 0..d.len() {
            if d[i] <= 0.0 || h[i].abs() > d[i] {
                s.push(i);
            } else {
                r.push(i);
            }
        }
        Split { r, s, d }
    }
}

/// Block elimination of `D + L C Lᵗ`.
pub struct Structured {
    r: Vec<usize>,
    s: Vec<usize>,
    dr_isqrt: DVector<f64>,
    q: DMatrix<f64>,
    minv: DMatrix<f64>,
    l_r: DMatrix<f64>,
    l_s: DMatrix<f64>,
    c: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

impl Structured {
    fn new(sys: &StepSystem<'_>, exec: Execution) -> Result<Structured> {
        let split = Split::new(sys);
        let c = sys.coefficient();
        let l_r = sys.lowrank_rows(&split.r);
        let l_s = sys.lowrank_rows(&split.s);
        let dr_isqrt = DVector::from_fn(split.r.len(), |k, _| 1.0 / split.d[split.r[k]].sqrt());
        let mut lt = l_r.clone();
        for mut col in lt.column_iter_mut() {
            col.component_mul_assign(&dr_isqrt);
        }
        let (q, rt) = if lt.nrows() > 0 {
            linalg::row_scaled_range(&lt)
        } else {
            (DMatrix::zeros(0, 0), DMatrix::zeros(0, c.nrows()))
        };
        let k = rt.nrows();
        // I + R̃ C R̃ᵗ is congruent to the normalized R block.
        let rc = &rt * &c;
        let mut ipt = &rc * rt.transpose();
        for i in 0..k {
            ipt[(i, i)] += 1.0;
        }
        symmetrize(&mut ipt);
        let mut chol = ipt;
        linalg::cholesky_in_place(&mut chol, exec).map_err(|p| Error::IndefiniteHessian {
            pivot: split.r.get(p).copied().unwrap_or(0),
        })?;
        let minv = linalg::cholesky_solve_matrix(&chol, &DMatrix::identity(k, k));

        // C_eff = C − C R̃ᵗ (I + T)⁻¹ R̃ C.
        let mut c_eff = &c - rc.transpose() * &minv * &rc;
        symmetrize(&mut c_eff);
        let mut sigma = &l_s * c_eff * l_s.transpose();
        for (a, &i) in split.s.iter().enumerate() {
            sigma[(a, a)] += split.d[i];
        }
        symmetrize(&mut sigma);
        linalg::cholesky_in_place(&mut sigma, exec).map_err(|p| Error::IndefiniteHessian { pivot: split.s[p] })?;
        Ok(Structured { r: split.r, s: split.s, dr_isqrt, q, minv, l_r, l_s, c, sigma })
    }

    fn solve_rr(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut t = b.component_mul(&self.dr_isqrt);
        if self.q.ncols() > 0 {
            let a = self.q.tr_mul(&t);
            let corr = &self.minv * &a - a;
            t.gemv(1.0, &self.q, &corr, 1.0);
        }
        t.component_mul(&self.dr_isqrt)
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let b_r = DVector::from_fn(self.r.len(), |k, _| b[self.r[k]]);
        let mut b_s = DVector::from_fn(self.s.len(), |k, _| b[self.s[k]]);
        let y_r = self.solve_rr(&b_r);
        let t = &self.c * self.l_r.tr_mul(&y_r);
        b_s.gemv(-1.0, &self.l_s, &t, 1.0);
        linalg::cholesky_solve_in_place(&self.sigma, &mut b_s);
        let u = &self.c * self.l_s.tr_mul(&b_s);
        let mut rhs = b_r;
        rhs.gemv(-1.0, &self.l_r, &u, 1.0);
        let x_r = self.solve_rr(&rhs);
        let mut x = DVector::zeros(b.len());
        for (k, &i) in self.r.iter().enumerate() {
            x[i] = x_r[k];
        }
        for (k, &i) in self.s.iter().enumerate() {
            x[i] = b_s[k];
        }
        x
    }

    /// Number of rows handled by the dense Schur complement.
    pub fn schur_size(&self) -> usize {
        self.s.len()
    }
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}
