//! The product space Φ², the projector onto `Ker V(Φ²)ᵗ`, the penalized
//! energies `E_η`, `F_η`, and η-continuation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::design::{evaluate_basis, energy_f, SqrtDesign, Vandermonde};
use crate::error::{Error, Result};
use crate::flow::{solve_adaptive, Evaluation, FlowOutcome, FlowParams, Objective};
use crate::linalg::{self, Execution};

/// Evaluations of a basis of `Φ² = span{φ_i φ_j}` on the candidate set.
#[derive(Clone, Debug)]
pub struct Phi2Space {
    v2: DMatrix<f64>,
}

impl Phi2Space {
    pub fn from_matrix(v2: DMatrix<f64>) -> Self {
        Phi2Space { v2 }
    }

    /// The `M × N₂` matrix `V(Φ²; X)`.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.v2
    }

    pub fn n2(&self) -> usize {
        self.v2.ncols()
    }

    pub fn m(&self) -> usize {
        self.v2.nrows()
    }

    /// `V(Φ²)ᵗ w`.
    pub fn moments(&self, w: &DVector<f64>) -> DVector<f64> {
        self.v2.tr_mul(w)
    }
}

/// Builds Φ² from products of the model basis, or from the degree-`2d`
/// basis for total-degree models, and keeps a linearly independent subset
/// of columns.
pub fn build_phi2(v: &Vandermonde) -> Phi2Space {
    let raw = match v.basis() {
        BasisSpec::TotalDegree { degree } => evaluate_basis(
            v.points(),
            &BasisSpec::total_degree(2 * degree),
            v.domain(),
            Execution::default(),
        ),
        BasisSpec::Explicit(_) => product_columns(v.values()),
    };
    let keep = linalg::pivoted_columns(&raw);
    let v2 = DMatrix::from_fn(raw.nrows(), keep.len(), |i, j| raw[(i, keep[j])]);
    Phi2Space { v2 }
}

/// Columns `V[:, i] ∘ V[:, j]` for `i ≤ j`.
pub fn product_columns(v: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = v.shape();
    let mut out = DMatrix::zeros(m, n * (n + 1) / 2);
    let mut c = 0;
    for i in 0..n {
        for j in i..n {
            out.set_column(c, &v.column(i).component_mul(&v.column(j)));
            c += 1;
        }
    }
    out
}

/// Orthogonal projection onto `K = Ker V(Φ²)ᵗ`, stored through an orthonormal
/// basis `Q` of the range of `V(Φ²)`: `π_K v = v − Q Qᵗ v`.
#[derive(Clone, Debug)]
pub struct KernelProjector {
    q: DMatrix<f64>,
}

impl KernelProjector {
    /// Orthonormal basis of `range V(Φ²)`, the complement of `K`.
    pub fn range(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn m(&self) -> usize {
        self.q.nrows()
    }

    /// `d = dim K`.
    pub fn kernel_dim(&self) -> usize {
        self.q.nrows() - self.q.ncols()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.kernel_dim() == 0 {
            return DVector::zeros(v.len());
        }
        let c = self.q.tr_mul(v);
        let mut out = v.clone();
        out.gemv(-1.0, &self.q, &c, 1.0);
        out
    }

    /// An explicit orthonormal basis `Z` (`M × d`) of `K`. Refuses when `M`
    /// exceeds `cap`, since `Z` is nearly `M × M`.
    pub fn kernel_basis(&self, cap: usize) -> Result<DMatrix<f64>> {
        if self.m() > cap {
            return Err(Error::DenseCapExceeded { m: self.m(), cap });
        }
        Ok(linalg::orthogonal_complement(&self.q))
    }
}

pub fn kernel_projector(p2: &Phi2Space) -> KernelProjector {
    let (q, _) = linalg::range_basis(p2.values());
    KernelProjector { q }
}

/// The map η ↦ σ(η) between continuation rounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum EtaMap {
    /// σ(η) = η².
    Square,
    /// σ(η) = factor · η.
    Scale { factor: f64 },
}

impl EtaMap {
    pub fn apply(&self, eta: f64) -> f64 {
        match *self {
            EtaMap::Square => eta * eta,
            EtaMap::Scale { factor } => factor * eta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EtaSchedule {
    pub eta0: f64,
    pub sigma: EtaMap,
    pub n_max_eta: usize,
    pub toll_eta: f64,
}

impl Default for EtaSchedule {
    fn default() -> Self {
        EtaSchedule { eta0: 1e-2, sigma: EtaMap::Square, n_max_eta: 8, toll_eta: 1e-8 }
    }
}

impl EtaSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0 && self.eta0 < 1.0) {
            return Err(Error::InvalidConfig("eta0 must lie in (0, 1)".into()));
        }
        if !(self.sigma.apply(self.eta0) < self.eta0) {
            return Err(Error::InvalidConfig("sigma must decrease eta".into()));
        }
        if self.n_max_eta == 0 || !(self.toll_eta > 0.0) {
            return Err(Error::InvalidConfig("n_max_eta and toll_eta must be positive".into()));
        }
        Ok(())
    }
}

/// `F_η(z) = F(z) + η ‖π_K s(z)‖²`.
pub fn energy_f_eta(v: &Vandermonde, z: &SqrtDesign, eta: f64, p: &KernelProjector) -> Result<f64> {
    let f = energy_f(v, z)?;
    if eta == 0.0 {
        return Ok(f);
    }
    let w = z.values().map(|x| x * x);
    Ok(f + eta * p.apply(&w).norm_squared())
}

/// `∇F_η(z) = ∇F(z) + 4η z ∘ π_K s(z)`.
pub fn grad_f_eta(v: &Vandermonde, z: &SqrtDesign, eta: f64, p: &KernelProjector) -> Result<DVector<f64>> {
    Ok(evaluate_eta(v, z, eta, p)?.grad)
}

/// `Hess F_η(z) = Hess F + 4η diag(π_K s(z)) + 8η diag(z) P_K diag(z)`, dense.
pub fn hess_f_eta(v: &Vandermonde, z: &SqrtDesign, eta: f64, p: &KernelProjector) -> Result<DMatrix<f64>> {
    let obj = Objective::regularized(v, eta, p);
    let ev = obj.evaluate(z)?;
    Ok(obj.hessian(&ev, z, Execution::default()))
}

fn evaluate_eta(v: &Vandermonde, z: &SqrtDesign, eta: f64, p: &KernelProjector) -> Result<Evaluation> {
    Objective::regularized(v, eta, p).evaluate(z)
}

/// One continuation round.
#[derive(Clone, Debug)]
pub struct EtaRound {
    pub eta: f64,
    pub outcome: FlowOutcome,
    /// `‖z*_η − z_start‖₂`.
    pub change: f64,
}

#[derive(Clone, Debug)]
pub struct RegularizedOutcome {
    pub z: SqrtDesign,
    pub eta_final: f64,
    pub rounds: Vec<EtaRound>,
}

/// Minimizes `F_η` for a decreasing sequence of η, warm-starting each round
/// from the previous minimizer.
///
/// Rounds use the tolerance `max(toll, η/100)`. Once the sequence stops, the
/// last round is continued at full tolerance so the returned point meets
/// `toll` regardless of η.
pub fn solve_regularized(
    v: &Vandermonde,
    z0: &SqrtDesign,
    sched: &EtaSchedule,
    p: &FlowParams,
    proj: &KernelProjector,
) -> Result<RegularizedOutcome> {
    sched.validate()?;
    let toll = p.toll_for(v.m());
    let mut rounds = Vec::new();
    if proj.kernel_dim() == 0 {
        let out = solve_adaptive(&Objective::energy_f(v), z0, p)?;
        let change = (out.z.values() - z0.values()).norm();
        let z = out.z.clone();
        rounds.push(EtaRound { eta: sched.eta0, outcome: out, change });
        return Ok(RegularizedOutcome { z, eta_final: sched.eta0, rounds });
    }
    let mut z = z0.clone();
    let mut eta = sched.eta0;
    let mut tau = p.tau0;
    for n in 0..sched.n_max_eta {
        let obj = Objective::regularized(v, eta, proj);
        let pn = FlowParams { toll: Some(toll.max(eta * 1e-2)), tau0: tau, ..p.clone() };
        let out = solve_adaptive(&obj, &z, &pn)?;
        let change = (out.z.values() - z.values()).norm();
        z = out.z.clone();
        tau = out.tau;
        rounds.push(EtaRound { eta, outcome: out, change });
        if n > 0 && change <= sched.toll_eta {
            break;
        }
        if n + 1 < sched.n_max_eta {
            eta = sched.sigma.apply(eta);
        }
    }
    let obj = Objective::regularized(v, eta, proj);
    let ev = obj.evaluate(&z)?;
    if linalg::norm_inf(&ev.grad) > toll {
        let pn = FlowParams { tau0: tau, ..p.clone() };
        let out = solve_adaptive(&obj, &z, &pn)?;
        let change = (out.z.values() - z.values()).norm();
        z = out.z.clone();
        rounds.push(EtaRound { eta, outcome: out, change });
    }
    Ok(RegularizedOutcome { z, eta_final: eta, rounds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_vandermonde, CandidateSet};

    fn line(points: &[f64], degree: usize) -> Vandermonde {
        let rows: Vec<Vec<f64>> = points.iter().map(|&x| vec![x]).collect();
        let x = CandidateSet::from_rows(&rows).unwrap();
        build_vandermonde(&x, &BasisSpec::monomials_1d(degree)).unwrap()
    }

    #[test]
    fn phi2_of_affine_line_is_quadratics() {
        let v = line(&[-1.0, 0.0, 1.0], 1);
        let p2 = build_phi2(&v);
        assert_eq!(p2.n2(), 3);
        let proj = kernel_projector(&p2);
        assert_eq!(proj.kernel_dim(), 0);
        let u = DVector::from_vec(vec![0.3, -0.2, 0.9]);
        assert_eq!(proj.apply(&u), DVector::zeros(3));
    }

    #[test]
    fn constants_on_two_points() {
        let v = line(&[-1.0, 1.0], 0);
        let p2 = build_phi2(&v);
        assert_eq!(p2.n2(), 1);
        let proj = kernel_projector(&p2);
        assert_eq!(proj.kernel_dim(), 1);
        let e0 = DVector::from_vec(vec![1.0, 0.0]);
        let col = proj.apply(&e0);
        assert!((col - DVector::from_vec(vec![0.5, -0.5])).amax() < 1e-15);
        let z = proj.kernel_basis(100).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((z[(0, 0)].abs() - s).abs() < 1e-15);
        assert!((z[(0, 0)] + z[(1, 0)]).abs() < 1e-15);
    }

    #[test]
    fn pivoting_drops_dependent_columns() {
        let a = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 3.0, 1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 5.0, 6.0]);
        assert_eq!(linalg::pivoted_columns(&a).len(), 2);
        assert_eq!(product_columns(&a).ncols(), 6);
    }

    #[test]
    fn eta_zero_matches_f_bitwise() {
        let v = line(&[-1.0, -0.3, 0.2, 0.6, 1.0], 1);
        let proj = kernel_projector(&build_phi2(&v));
        assert_eq!(proj.kernel_dim(), 2);
        let z = SqrtDesign::from_vec(vec![0.3, 0.5, -0.2, 0.7, 0.4]);
        let f = energy_f(&v, &z).unwrap();
        assert_eq!(energy_f_eta(&v, &z, 0.0, &proj).unwrap().to_bits(), f.to_bits());
        let g0 = grad_f_eta(&v, &z, 0.0, &proj).unwrap();
        let g = crate::kernel::grad_f(&z, &crate::kernel::weighted_onb(&v, &z).unwrap());
        assert_eq!(g0, g);
    }

    #[test]
    fn schedule_validation() {
        assert!(EtaSchedule::default().validate().is_ok());
        let bad = EtaSchedule { sigma: EtaMap::Scale { factor: 2.0 }, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
