//! Candidate sets, Vandermonde matrices, designs and the design energies.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::basis::{chebyshev_values, total_degree_exponents, BasisSpec, BoundingBox};
use crate::error::{Error, Result};
use crate::linalg::{self, Execution, UNIT_ROUNDOFF};

/// A finite set of `M` points in ℝⁿ, stored row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    points: DMatrix<f64>,
}

/// Groups of bitwise-identical points.
#[derive(Clone, Debug, Default, Serialize)]
pub struct DuplicateReport {
    pub groups: Vec<Vec<usize>>,
}

impl DuplicateReport {
    pub fn duplicate_count(&self) -> usize {
        self.groups.iter().map(|g| g.len() - 1).sum()
    }
}

impl CandidateSet {
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InvalidConfig(
                "candidate set needs at least one point of dimension >= 1".into(),
            ));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("candidate coordinates must be finite".into()));
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidConfig("points have differing dimensions".into()));
        }
        let m = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        Self::new(m)
    }

    /// Reads one point per row; a first row that does not parse as numbers is
    /// treated as a header.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)?;
        let mut rows = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parsed: std::result::Result<Vec<f64>, _> =
                rec.iter().map(|s| s.parse::<f64>()).collect();
            match parsed {
                Ok(r) => rows.push(r),
                Err(_) if k == 0 => continue,
                Err(e) => {
                    return Err(Error::InvalidConfig(format!("row {}: {e}", k + 1)));
                }
            }
        }
        Self::from_rows(&rows)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().cloned().collect()
    }

    pub fn bounding_box(&self) -> BoundingBox {
        let n = self.dim();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for i in 0..self.len() {
            for d in 0..n {
                lo[d] = lo[d].min(self.points[(i, d)]);
                hi[d] = hi[d].max(self.points[(i, d)]);
            }
        }
        BoundingBox { lo, hi }
    }

    pub fn duplicates(&self) -> DuplicateReport {
        let mut seen: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
        for i in 0..self.len() {
            let key = self.points.row(i).iter().map(|x| (x + 0.0).to_bits()).collect();
            seen.entry(key).or_default().push(i);
        }
        let mut groups: Vec<Vec<usize>> = seen.into_values().filter(|g| g.len() > 1).collect();
        groups.sort();
        DuplicateReport { groups }
    }
}

/// `V[i][j] = φ_j(x_i)` together with the data needed to evaluate related bases.
#[derive(Clone, Debug)]
pub struct Vandermonde {
    values: DMatrix<f64>,
    rank: usize,
    basis: BasisSpec,
    domain: BoundingBox,
    points: CandidateSet,
    phi2_range: OnceLock<DMatrix<f64>>,
}

impl Vandermonde {
    /// Orthonormal basis of the range of `V(Φ²)`, computed on first use.
    pub fn phi2_range(&self) -> &DMatrix<f64> {
        self.phi2_range.get_or_init(|| {
            crate::regularization::kernel_projector(&crate::regularization::build_phi2(self)).range().clone()
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }
    pub fn domain(&self) -> &BoundingBox {
        &self.domain
    }
    pub fn points(&self) -> &CandidateSet {
        &self.points
    }
    /// Number of candidate points `M`.
    pub fn m(&self) -> usize {
        self.values.nrows()
    }
    /// Dimension `N` of the model space.
    pub fn n(&self) -> usize {
        self.values.ncols()
    }
}

/// Evaluates a basis on every candidate point without any rank check.
pub fn evaluate_basis(
    x: &CandidateSet,
    basis: &BasisSpec,
    domain: &BoundingBox,
    exec: Execution,
) -> DMatrix<f64> {
    let m = x.len();
    let dim = x.dim();
    let ncols = basis.len(dim);
    let rows: Vec<Vec<f64>> = match basis {
        BasisSpec::TotalDegree { degree } => {
            let exps = total_degree_exponents(dim, *degree);
            linalg::map_indices(m, exec, |i| {
                let p = x.point(i);
                let mut t = vec![0.0; dim];
                domain.to_reference(&p, &mut t);
                let mut cheb: Vec<Vec<f64>> = Vec::with_capacity(dim);
                for &td in &t {
                    let mut v = Vec::new();
                    chebyshev_values(td, *degree, &mut v);
                    cheb.push(v);
                }
                exps.iter()
                    .map(|a| a.iter().enumerate().map(|(d, &k)| cheb[d][k]).product())
                    .collect()
            })
        }
        BasisSpec::Explicit(fs) => linalg::map_indices(m, exec, |i| {
            let p = x.point(i);
            fs.iter().map(|f| f(&p)).collect()
        }),
    };
    DMatrix::from_fn(m, ncols, |i, j| rows[i][j])
}

/// Numerical rank with threshold `M · ‖V‖₂ · u`.
pub fn numerical_rank(v: &DMatrix<f64>) -> usize {
    if v.is_empty() {
        return 0;
    }
    let sv = if v.nrows() >= v.ncols() {
        v.clone().singular_values()
    } else {
        v.transpose().singular_values()
    };
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tol = v.nrows() as f64 * smax * UNIT_ROUNDOFF;
    sv.iter().filter(|&&s| s > tol).count()
}

pub fn build_vandermonde(x: &CandidateSet, basis: &BasisSpec) -> Result<Vandermonde> {
    build_vandermonde_with(x, basis, Execution::default())
}

pub fn build_vandermonde_with(
    x: &CandidateSet,
    basis: &BasisSpec,
    exec: Execution,
) -> Result<Vandermonde> {
    let domain = x.bounding_box();
    let values = evaluate_basis(x, basis, &domain, exec);
    let n = values.ncols();
    if n == 0 {
        return Err(Error::InvalidConfig("empty basis".into()));
    }
    let rank = numerical_rank(&values);
    if rank < n {
        return Err(Error::RankDeficient { expected: n, rank });
    }
    Ok(Vandermonde { values, rank, basis: basis.clone(), domain, points: x.clone(), phi2_range: OnceLock::new() })
}

/// Nonnegative design weights on the candidate set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Design {
    #[serde(serialize_with = "serialize_vector")]
    w: DVector<f64>,
}

impl Design {
    pub fn new(w: DVector<f64>) -> Result<Self> {
        if let Some((index, &value)) = w.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeWeight { index, value });
        }
        Ok(Self { w })
    }

    pub fn from_vec(w: Vec<f64>) -> Result<Self> {
        Self::new(DVector::from_vec(w))
    }

    pub fn uniform(m: usize) -> Self {
        Self { w: DVector::from_element(m, 1.0 / m as f64) }
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.w.sum()
    }

    pub fn normalized(&self) -> Self {
        let s = self.mass();
        if s > 0.0 {
            Self { w: &self.w / s }
        } else {
            self.clone()
        }
    }

    /// Cutoff below which a weight is not reported as support: `1e-12 · max w`.
    pub fn support_threshold(&self) -> f64 {
        SUPPORT_RELATIVE_THRESHOLD * self.w.max()
    }

    pub fn support(&self) -> Vec<usize> {
        let t = self.support_threshold();
        (0..self.w.len()).filter(|&i| self.w[i] > t).collect()
    }

    pub fn sqrt(&self) -> SqrtDesign {
        SqrtDesign { z: self.w.map(f64::sqrt) }
    }

    /// Weights summed over groups of identical points (reporting only).
    pub fn merged_support(&self, x: &CandidateSet) -> Vec<(usize, f64)> {
        let dups = x.duplicates();
        let mut owner: Vec<usize> = (0..self.len()).collect();
        for g in &dups.groups {
            for &i in g {
                owner[i] = g[0];
            }
        }
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for i in self.support() {
            *acc.entry(owner[i]).or_default() += self.w[i];
        }
        let mut out: Vec<(usize, f64)> = acc.into_iter().collect();
        out.sort_by_key(|p| p.0);
        out
    }
}

fn serialize_vector<S: serde::Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

pub const SUPPORT_RELATIVE_THRESHOLD: f64 = 1e-12;

/// Signed square root `z` of a design, `w = z²` componentwise.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SqrtDesign {
    #[serde(serialize_with = "serialize_vector")]
    z: DVector<f64>,
}

impl SqrtDesign {
    pub fn new(z: DVector<f64>) -> Self {
        Self { z }
    }

    pub fn from_vec(z: Vec<f64>) -> Self {
        Self { z: DVector::from_vec(z) }
    }

    /// `z_i = 1/√M`, the square root of the uniform design.
    pub fn uniform(m: usize) -> Self {
        Self { z: DVector::from_element(m, 1.0 / (m as f64).sqrt()) }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// The coordinate square map `s(z)`.
    pub fn square(&self) -> Design {
        Design { w: self.z.map(|v| v * v) }
    }

    pub fn abs(&self) -> Self {
        Self { z: self.z.abs() }
    }
}

impl std::ops::Neg for SqrtDesign {
    type Output = SqrtDesign;
    fn neg(self) -> SqrtDesign {
        SqrtDesign { z: -self.z }
    }
}

/// `G(w) = Vᵗ diag(w) V` with its log-determinant (`None` when singular).
#[derive(Clone, Debug)]
pub struct InformationMatrix {
    pub g: DMatrix<f64>,
    pub logdet: Option<f64>,
}

impl InformationMatrix {
    pub fn is_singular(&self) -> bool {
        self.logdet.is_none()
    }

    pub fn det(&self) -> f64 {
        self.logdet.map(f64::exp).unwrap_or(0.0)
    }
}

fn scaled_rows(v: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut a = v.clone();
    for mut col in a.column_iter_mut() {
        col.component_mul_assign(s);
    }
    a
}

pub fn gram_matrix(v: &Vandermonde, w: &Design) -> Result<InformationMatrix> {
    if w.len() != v.m() {
        return Err(Error::Dimension(format!(
            "design has {} weights for {} candidate points",
            w.len(),
            v.m()
        )));
    }
    let a = scaled_rows(v.values(), &w.weights().map(f64::sqrt));
    let g = crate::linalg::at_b(&a, &a);
    let logdet = logdet_spd(&g);
    Ok(InformationMatrix { g, logdet })
}

/// Cholesky log-determinant with an eigenvalue fallback; `None` means singular.
pub fn logdet_spd(g: &DMatrix<f64>) -> Option<f64> {
    if g.iter().all(|x| *x == 0.0) {
        return None;
    }
    let mut l = g.clone();
    if linalg::cholesky_in_place(&mut l, Execution::Sequential).is_ok() {
        return Some(linalg::cholesky_logdet(&l));
    }
    let ev = linalg::sorted_symmetric_eigenvalues(g);
    if ev.iter().any(|&e| e <= 0.0) {
        None
    } else {
        Some(ev.iter().map(|e| e.ln()).sum())
    }
}

/// `log det G(w)` from the QR factorization of `diag(√w) V`: `2 Σ log |r_kk|`.
pub fn logdet_via_qr(v: &Vandermonde, w: &Design) -> Option<f64> {
    let a = scaled_rows(v.values(), &w.weights().map(f64::sqrt));
    let r = a.qr().r();
    let mut s = 0.0;
    for k in 0..r.nrows().min(r.ncols()) {
        let d = r[(k, k)].abs();
        if d == 0.0 {
            return None;
        }
        s += d.ln();
    }
    if r.nrows() < v.n() {
        return None;
    }
    Some(2.0 * s)
}

/// Design energy `E(w) = -(1/N) log det G(w) + ‖w‖₁`; `+∞` when `G` is singular.
pub fn energy_e(v: &Vandermonde, w: &Design) -> Result<f64> {
    if let Some((index, &value)) = w.weights().iter().enumerate().find(|(_, x)| **x < 0.0) {
        return Err(Error::NegativeWeight { index, value });
    }
    let info = gram_matrix(v, w)?;
    Ok(match info.logdet {
        Some(ld) => -ld / v.n() as f64 + w.mass(),
        None => f64::INFINITY,
    })
}

/// `F(z) = E(s(z))`.
pub fn energy_f(v: &Vandermonde, z: &SqrtDesign) -> Result<f64> {
    energy_e(v, &z.square())
}
