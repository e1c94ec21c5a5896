//! Model bases: total-degree Chebyshev product polynomials or explicit function lists.

use std::fmt;
use std::sync::Arc;

/// A scalar basis function on ℝⁿ.
pub type BasisFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// The model space Φ.
#[derive(Clone)]
pub enum BasisSpec {
    /// Tensor Chebyshev polynomials `T_a(t_1)…T_a(t_n)` with `|a| ≤ degree`,
    /// evaluated on coordinates mapped from the bounding box of the candidate
    /// set to `[-1, 1]ⁿ`.
    TotalDegree { degree: usize },
    /// An explicit list of functions evaluated on raw coordinates.
    Explicit(Vec<BasisFn>),
}

impl fmt::Debug for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisSpec::TotalDegree { degree } => write!(f, "TotalDegree({degree})"),
            BasisSpec::Explicit(fs) => write!(f, "Explicit({} functions)", fs.len()),
        }
    }
}

impl BasisSpec {
    pub fn total_degree(degree: usize) -> Self {
        BasisSpec::TotalDegree { degree }
    }

    /// Monomials `1, x, …, x^degree` of the first coordinate.
    pub fn monomials_1d(degree: usize) -> Self {
        let fs = (0..=degree)
            .map(|k| Arc::new(move |x: &[f64]| x[0].powi(k as i32)) as BasisFn)
            .collect();
        BasisSpec::Explicit(fs)
    }

    /// Number of functions before any rank reduction.
    pub fn len(&self, dim: usize) -> usize {
        match self {
            BasisSpec::TotalDegree { degree } => binomial(dim + degree, dim),
            BasisSpec::Explicit(fs) => fs.len(),
        }
    }

    pub fn is_empty(&self, dim: usize) -> bool {
        self.len(dim) == 0
    }

    pub fn degree(&self) -> Option<usize> {
        match self {
            BasisSpec::TotalDegree { degree } => Some(*degree),
            BasisSpec::Explicit(_) => None,
        }
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Multi-indices of total degree at most `degree` in `dim` variables,
/// graded by total degree and lexicographically descending within a grade.
pub fn total_degree_exponents(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(binomial(dim + degree, dim));
    for total in 0..=degree {
        let mut current = vec![0; dim];
        push_compositions(total, 0, &mut current, &mut out);
    }
    out
}

fn push_compositions(remaining: usize, pos: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let dim = current.len();
    if pos + 1 == dim {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for k in (0..=remaining).rev() {
        current[pos] = k;
        push_compositions(remaining - k, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// `T_0(t), …, T_degree(t)` by the three-term recurrence.
pub fn chebyshev_values(t: f64, degree: usize, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if degree >= 1 {
        out.push(t);
    }
    for k in 2..=degree {
        let next = 2.0 * t * out[k - 1] - out[k - 2];
        out.push(next);
    }
}

/// Axis-aligned box used to map coordinates onto `[-1, 1]ⁿ`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn to_reference(&self, x: &[f64], out: &mut [f64]) {
        for (d, o) in out.iter_mut().enumerate() {
            let width = self.hi[d] - self.lo[d];
            *o = if width > 0.0 {
                (2.0 * (x[d] - self.lo[d]) / width - 1.0).clamp(-1.0, 1.0)
            } else {
                0.0
            };
        }
    }
}
