//! Caratheodory–Tchakaloff compression: a design with the same Φ²-moments
//! supported on at most `N₂` points, computed by nonnegative least squares.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::design::Design;
use crate::error::{Error, Result};
use crate::linalg::UNIT_ROUNDOFF;
use crate::regularization::Phi2Space;

#[derive(Clone, Debug, Serialize)]
pub struct CompressedDesign {
    /// Retained candidate indices, ascending.
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    /// `‖V(Φ²)ᵗ w_c − m‖∞`.
    pub moment_residual: f64,
    /// `‖m‖∞` for the original moments.
    pub moment_scale: f64,
    /// False when the input support was already below `N₂`.
    pub compressed: bool,
    m: usize,
}

impl CompressedDesign {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The compressed weights scattered back onto all `M` candidates.
    pub fn to_design(&self) -> Design {
        let mut w = DVector::zeros(self.m);
        for (&i, &x) in self.indices.iter().zip(&self.weights) {
            w[i] = x;
        }
        Design::new(w).expect("compressed weights are nonnegative")
    }
}

/// Solves `min ‖A x − b‖₂` subject to `x ≥ 0` by the Lawson–Hanson active-set
/// method. Among equal gradient entries the smallest index enters first.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (m, n) = a.shape();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let anorm1 = (0..n).map(|j| a.column(j).lp_norm(1)).fold(0.0, f64::max);
    let tol = 10.0 * f64::EPSILON * anorm1 * m.max(n) as f64;
    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        let grad = a.tr_mul(&(b - a * &x));
        let mut entering = None;
        let mut best = tol;
        for j in 0..n {
            if !passive[j] && grad[j] > best {
                best = grad[j];
                entering = Some(j);
            }
        }
        let Some(j) = entering else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let s_p = least_squares_columns(a, &idx, b);
            if s_p.iter().all(|&v| v > 0.0) {
                for (k, &i) in idx.iter().enumerate() {
                    x[i] = s_p[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &i) in idx.iter().enumerate() {
                if s_p[k] <= 0.0 {
                    let denom = x[i] - s_p[k];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (k, &i) in idx.iter().enumerate() {
                x[i] += alpha * (s_p[k] - x[i]);
            }
            let floor = 10.0 * UNIT_ROUNDOFF * x.amax();
            for &i in &idx {
                if x[i] <= floor {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

/// Least-squares solution restricted to the columns `idx`.
fn least_squares_columns(a: &DMatrix<f64>, idx: &[usize], b: &DVector<f64>) -> DVector<f64> {
    let sub = DMatrix::from_fn(a.nrows(), idx.len(), |i, k| a[(i, idx[k])]);
    if sub.nrows() >= sub.ncols() {
        let qr = sub.qr();
        let qtb = qr.q().tr_mul(b);
        let r = qr.r();
        r.solve_upper_triangular(&qtb).unwrap_or_else(|| DVector::zeros(idx.len()))
    } else {
        sub.svd(true, true).solve(b, UNIT_ROUNDOFF).unwrap_or_else(|_| DVector::zeros(idx.len()))
    }
}

/// Replaces `w` by a nonnegative design with the same Φ²-moments.
///
/// Nothing is done when the support is already smaller than `N₂`.
pub fn compress(w: &Design, p2: &Phi2Space) -> Result<CompressedDesign> {
    if w.len() != p2.m() {
        return Err(Error::Dimension(format!("design has {} weights for {} points", w.len(), p2.m())));
    }
    let support = w.support();
    let n2 = p2.n2();
    let m = p2.moments(w.weights());
    let scale = m.amax();
    if support.len() < n2 {
        let weights: Vec<f64> = support.iter().map(|&i| w.weights()[i]).collect();
        let mut out = CompressedDesign {
            indices: support,
            weights,
            moment_residual: 0.0,
            moment_scale: scale,
            compressed: false,
            m: w.len(),
        };
        out.moment_residual = residual(p2, &out, &m);
        return Ok(out);
    }
    let v2 = p2.values();
    // Columns of A are rows of V(Φ²) restricted to the support, equilibrated.
    let mut a = DMatrix::from_fn(n2, support.len(), |h, k| v2[(support[k], h)]);
    let norms: Vec<f64> = (0..support.len()).map(|k| a.column(k).norm()).collect();
    for (k, &nrm) in norms.iter().enumerate() {
        if nrm > 0.0 {
            a.column_mut(k).scale_mut(1.0 / nrm);
        }
    }
    let y = nnls(&a, &m);
    let ymax = y.amax();
    let keep: Vec<usize> = (0..y.len()).filter(|&k| y[k] > UNIT_ROUNDOFF * ymax).collect();
    let mut yk: Vec<f64> = keep.iter().map(|&k| y[k]).collect();
    let refined = least_squares_columns(&a, &keep, &m);
    if refined.iter().all(|&v| v > 0.0) {
        yk = refined.iter().cloned().collect();
    }
    let indices: Vec<usize> = keep.iter().map(|&k| support[k]).collect();
    let weights: Vec<f64> = keep.iter().zip(&yk).map(|(&k, &v)| v / norms[k]).collect();
    let mut out = CompressedDesign { indices, weights, moment_residual: 0.0, moment_scale: scale, compressed: true, m: w.len() };
    out.moment_residual = residual(p2, &out, &m);
    let limit = 1e-8 * scale;
    if !(out.moment_residual <= limit) {
        return Err(Error::MomentMismatch { residual: out.moment_residual, limit });
    }
    Ok(out)
}

fn residual(p2: &Phi2Space, c: &CompressedDesign, m: &DVector<f64>) -> f64 {
    let mut r = -m.clone();
    for (&i, &x) in c.indices.iter().zip(&c.weights) {
        r.axpy(x, &p2.values().row(i).transpose(), 1.0);
    }
    r.amax()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nnls_matches_known_solution() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0, 0.0]);
        let x = nnls(&a, &b);
        // Unconstrained optimum (1, -1) is infeasible; with x₂ = 0, x₁ = 1/2.
        assert!((x[0] - 0.5).abs() < 1e-14);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn nnls_interior_solution() {
        let a = DMatrix::from_row_slice(3, 2, &[2.0, 1.0, 1.0, 3.0, 0.0, 1.0]);
        let xt = DVector::from_vec(vec![0.7, 0.2]);
        let x = nnls(&a, &(&a * &xt));
        assert!((x - xt).amax() < 1e-13);
    }

    #[test]
    fn single_moment_keeps_one_point() {
        let p2 = Phi2Space::from_matrix(DMatrix::from_element(3, 1, 1.0));
        let w = Design::from_vec(vec![0.2, 0.5, 0.3]).unwrap();
        let c = compress(&w, &p2).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c.weights[0] - 1.0).abs() < 1e-15);
        assert!(c.compressed);
    }

    #[test]
    fn small_support_is_returned_unchanged() {
        let v2 = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let p2 = Phi2Space::from_matrix(v2);
        let w = Design::from_vec(vec![0.5, 0.0, 0.5]).unwrap();
        let c = compress(&w, &p2).unwrap();
        assert!(!c.compressed);
        assert_eq!(c.indices, vec![0, 2]);
    }
}
