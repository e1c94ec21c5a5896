//! Weighted orthonormal bases, the reproducing kernel, the Bergman function,
//! and exact first and second derivatives of `E` and `F`.

use nalgebra::{DMatrix, DVector};

use crate::design::{SqrtDesign, Vandermonde};
use crate::error::{Error, Result};
use crate::linalg::{self, Execution, UNIT_ROUNDOFF};

/// The basis of Φ orthonormal for `⟨φ,ψ⟩_w = Σ w_i φ(x_i) ψ(x_i)`, evaluated
/// at every candidate point.
#[derive(Clone, Debug)]
pub struct WeightedOnb {
    vtilde: DMatrix<f64>,
    condition_estimate: f64,
    logdet: f64,
}

impl WeightedOnb {
    /// `Ṽ[i][j] = φ_j(x_i; w)`.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.vtilde
    }

    pub fn m(&self) -> usize {
        self.vtilde.nrows()
    }

    pub fn n(&self) -> usize {
        self.vtilde.ncols()
    }

    /// Ratio of extreme pivots of the first triangular factor.
    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    /// `log det G(w)` accumulated from both triangular factors.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// `‖Ṽᵗ diag(w) Ṽ − I‖_max`.
    pub fn orthonormality_residual(&self, z: &SqrtDesign) -> f64 {
        let w = z.values().map(|v| v * v);
        let mut a = self.vtilde.clone();
        for mut col in a.column_iter_mut() {
            col.component_mul_assign(&w);
        }
        let g = self.vtilde.tr_mul(&a);
        linalg::max_abs(&(g - DMatrix::identity(self.n(), self.n())))
    }
}

/// One QR pass: returns `(V R⁻¹, R)` for the QR factorization of `diag(|z|) V`.
fn orthogonalize(v: &DMatrix<f64>, zabs: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut a = v.clone();
    for mut col in a.column_iter_mut() {
        col.component_mul_assign(zabs);
    }
    let threshold = a.nrows() as f64 * a.norm() * UNIT_ROUNDOFF;
    let r = a.qr().r();
    let n = v.ncols();
    if r.nrows() < n {
        return Err(Error::SupportRankDeficient { pivot: 0.0, threshold });
    }
    let pivot = (0..n).map(|k| r[(k, k)].abs()).fold(f64::INFINITY, f64::min);
    if !(pivot > threshold) {
        return Err(Error::SupportRankDeficient { pivot, threshold });
    }
    Ok((linalg::right_solve_upper(v, &r), r))
}

/// Orthonormalizes `V` for the weights `w = z²` with two QR passes.
pub fn weighted_onb(v: &Vandermonde, z: &SqrtDesign) -> Result<WeightedOnb> {
    onb_from_matrix(v.values(), z)
}

pub(crate) fn onb_from_matrix(v: &DMatrix<f64>, z: &SqrtDesign) -> Result<WeightedOnb> {
    if z.len() != v.nrows() {
        return Err(Error::Dimension(format!(
            "square-root design has {} entries for {} points",
            z.len(),
            v.nrows()
        )));
    }
    let zabs = z.values().abs();
    let (v1, r1) = orthogonalize(v, &zabs)?;
    let (vt, r2) = orthogonalize(&v1, &zabs)?;
    let n = v.ncols();
    let d1: Vec<f64> = (0..n).map(|k| r1[(k, k)].abs()).collect();
    let logdet = 2.0 * (d1.iter().map(|d| d.ln()).sum::<f64>()
        + (0..n).map(|k| r2[(k, k)].abs().ln()).sum::<f64>());
    let dmax = d1.iter().cloned().fold(0.0, f64::max);
    let dmin = d1.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(WeightedOnb { vtilde: vt, condition_estimate: dmax / dmin, logdet })
}

/// Bergman function values and the squared kernel matrix.
#[derive(Clone, Debug)]
pub struct KernelMatrices {
    pub b: DVector<f64>,
    pub k2: DMatrix<f64>,
}

pub fn kernel_matrices(onb: &WeightedOnb, exec: Execution) -> KernelMatrices {
    let mut k2 = kernel_matrix(onb);
    let m = onb.m();
    linalg::for_each_chunk_mut(k2.as_mut_slice(), m * 64, exec, |_, cols| {
        for x in cols.iter_mut() {
            *x *= *x;
        }
    });
    KernelMatrices { b: bergman(onb), k2 }
}

/// `K(x_i, x_j; w)` for all pairs.
pub fn kernel_matrix(onb: &WeightedOnb) -> DMatrix<f64> {
    onb.values() * onb.values().transpose()
}

/// `B(x_i; w) = Σ_j φ_j(x_i; w)²`.
pub fn bergman(onb: &WeightedOnb) -> DVector<f64> {
    let vt = onb.values();
    DVector::from_fn(vt.nrows(), |i, _| vt.row(i).norm_squared())
}

/// `∂_i E(w) = 1 − B_i / N`.
pub fn grad_e(onb: &WeightedOnb) -> DVector<f64> {
    grad_e_from_bergman(&bergman(onb), onb.n())
}

pub(crate) fn grad_e_from_bergman(b: &DVector<f64>, n: usize) -> DVector<f64> {
    let nf = n as f64;
    b.map(|bi| 1.0 - bi / nf)
}

/// `∂²_{ij} E(w) = K(x_i, x_j; w)² / N`, materialized densely.
pub fn hess_e(onb: &WeightedOnb) -> DMatrix<f64> {
    hess_e_with(onb, Execution::default())
}

pub fn hess_e_with(onb: &WeightedOnb, exec: Execution) -> DMatrix<f64> {
    let nf = onb.n() as f64;
    let mut h = kernel_matrix(onb);
    let m = onb.m();
    linalg::for_each_chunk_mut(h.as_mut_slice(), m * 64, exec, |_, cols| {
        for x in cols.iter_mut() {
            *x = *x * *x / nf;
        }
    });
    h
}

/// `uᵗ Hess E(w) u` as the sum of squares `Σ_{h,k} (Σ_i u_i φ_h φ_k)² / N`.
///
/// This form is nonnegative by construction and vanishes to roundoff squared on
/// the kernel of `V(Φ²)ᵗ`, unlike the explicit product with the dense Hessian.
pub fn hess_e_quadratic_form(onb: &WeightedOnb, u: &DVector<f64>) -> f64 {
    let vt = onb.values();
    let mut scaled = vt.clone();
    for mut col in scaled.column_iter_mut() {
        col.component_mul_assign(u);
    }
    let moments = linalg::at_b(vt, &scaled);
    moments.norm_squared() / onb.n() as f64
}

/// `Hess E(w) u` without forming the `M × M` matrix.
pub fn hess_e_apply(onb: &WeightedOnb, u: &DVector<f64>) -> DVector<f64> {
    let vt = onb.values();
    let mut scaled = vt.clone();
    for mut col in scaled.column_iter_mut() {
        col.component_mul_assign(u);
    }
    let moments = linalg::at_b(vt, &scaled);
    let t = vt * moments;
    let nf = onb.n() as f64;
    DVector::from_fn(vt.nrows(), |i, _| vt.row(i).dot(&t.row(i)) / nf)
}

/// `∂_i F(z) = 2 z_i (1 − B_i / N)`.
pub fn grad_f(z: &SqrtDesign, onb: &WeightedOnb) -> DVector<f64> {
    let ge = grad_e(onb);
    grad_f_from_grad_e(z, &ge)
}

pub(crate) fn grad_f_from_grad_e(z: &SqrtDesign, ge: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(z.len(), |i, _| 2.0 * z.values()[i] * ge[i])
}

/// `Hess F(z) = 4 diag(z) Hess E diag(z) + 2 diag(1 − B/N)`.
pub fn hess_f(z: &SqrtDesign, onb: &WeightedOnb) -> DMatrix<f64> {
    let mut h = hess_e(onb);
    let zv = z.values();
    let ge = grad_e(onb);
    let m = onb.m();
    for j in 0..m {
        for i in 0..m {
            h[(i, j)] *= 4.0 * zv[i] * zv[j];
        }
        h[(j, j)] += 2.0 * ge[j];
    }
    h
}

/// Row-wise symmetric products `W` with `W Wᵗ = K ∘ K`: column `(h, k)` holds
/// `φ_h φ_k`, scaled by `√2` when `h ≠ k`.
pub fn symmetric_products(onb: &WeightedOnb) -> DMatrix<f64> {
    let vt = onb.values();
    let (m, n) = vt.shape();
    let p = n * (n + 1) / 2;
    let mut w = DMatrix::zeros(m, p);
    let mut c = 0;
    for h in 0..n {
        for k in h..n {
            let s = if h == k { 1.0 } else { std::f64::consts::SQRT_2 };
            for i in 0..m {
                w[(i, c)] = s * vt[(i, h)] * vt[(i, k)];
            }
            c += 1;
        }
    }
    w
}
