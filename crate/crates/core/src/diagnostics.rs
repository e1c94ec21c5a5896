//! KKT residuals, the multiplicative baseline, well-posedness probing,
//! Hessian spectra, error estimates and convergence-rate summaries.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{energy_e, Design, SqrtDesign, Vandermonde};
use crate::error::{Error, Result};
use crate::flow::{FlowTrace, Objective};
use crate::kernel::{self, WeightedOnb};
use crate::linalg::{self, Execution};
use crate::regularization::{KernelProjector, Phi2Space};

#[derive(Clone, Debug, Serialize)]
pub struct KktReport {
    pub residual_vector: Vec<f64>,
    pub max_residual: f64,
    pub support: Vec<usize>,
    pub mass_error: f64,
}

/// KKT residual of `E` at `w`: `|1 − B_i/N|` on the support and
/// `max(0, B_i/N − 1)` elsewhere.
pub fn kkt_residual(w: &Design, onb: &WeightedOnb) -> KktReport {
    kkt_from_gradient(w, &kernel::grad_e(onb))
}

/// The same two-case residual for an arbitrary gradient in `w`.
pub fn kkt_from_gradient(w: &Design, grad: &DVector<f64>) -> KktReport {
    let t = w.support_threshold();
    let residual_vector: Vec<f64> = (0..w.len())
        .map(|i| if w.weights()[i] > t { grad[i].abs() } else { (-grad[i]).max(0.0) })
        .collect();
    let max_residual = residual_vector.iter().cloned().fold(0.0, f64::max);
    KktReport { residual_vector, max_residual, support: w.support(), mass_error: (w.mass() - 1.0).abs() }
}

/// Bergman function for `w`, computed through a Cholesky factor of `G(w)`.
pub fn bergman_via_gram(v: &Vandermonde, w: &Design) -> Result<DVector<f64>> {
    let vals = v.values();
    let mut a = vals.clone();
    let s = w.weights().map(f64::sqrt);
    for mut col in a.column_iter_mut() {
        col.component_mul_assign(&s);
    }
    let mut g = linalg::at_b(&a, &a);
    linalg::cholesky_in_place(&mut g, Execution::Sequential)
        .map_err(|_| Error::SupportRankDeficient { pivot: 0.0, threshold: 0.0 })?;
    let y = linalg::right_solve_upper(vals, &g.transpose());
    let mut b = DVector::zeros(vals.nrows());
    for col in y.column_iter() {
        b.zip_apply(&col, |bi, yi| *bi += yi * yi);
    }
    Ok(b)
}

/// One multiplicative update `w_i ← w_i B_i / N`, renormalized.
pub fn titterington_step(w: &Design, onb: &WeightedOnb) -> Design {
    let b = kernel::bergman(onb);
    multiplicative_update(w, &b, onb.n())
}

fn multiplicative_update(w: &Design, b: &DVector<f64>, n: usize) -> Design {
    let nf = n as f64;
    let raw = w.weights().component_mul(b) / nf;
    let s = raw.sum();
    Design::new(raw / s).expect("multiplicative update keeps weights nonnegative")
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TitteringtonRow {
    pub iter: usize,
    pub kkt_residual: f64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TitteringtonOutcome {
    pub w: Design,
    pub kkt: KktReport,
    pub iterations: usize,
    pub logdet: f64,
    /// Rows recorded at every iteration up to 100, then at a thinning stride.
    pub trace: Vec<TitteringtonRow>,
    /// Upper bound `max_i B_i − N` on `log det G* − log det G(w)`.
    pub gap_bound: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TitteringtonOptions {
    pub toll: f64,
    pub n_max: usize,
    /// Also stop once the certified log-determinant gap is below this value.
    pub gap_toll: Option<f64>,
    /// Stop after this many seconds of wall-clock time (not an error).
    pub time_limit_s: Option<f64>,
}

impl Default for TitteringtonOptions {
    fn default() -> Self {
        TitteringtonOptions { toll: 1e-8, n_max: 1_000_000, gap_toll: None, time_limit_s: None }
    }
}

fn record(iter: usize) -> bool {
    if iter <= 100 {
        return true;
    }
    let mut stride = 1;
    while stride * 100 < iter {
        stride *= 10;
    }
    iter % stride == 0
}

/// Iterates the multiplicative algorithm until the KKT residual drops to
/// `toll`, the optional gap or time limit is hit, or `n_max` iterations pass.
pub fn titterington_solve(v: &Vandermonde, w0: &Design, opts: &TitteringtonOptions) -> Result<TitteringtonOutcome> {
    let start = Instant::now();
    let n = v.n();
    let mut w = w0.normalized();
    let mut trace = Vec::new();
    let mut iter = 0;
    loop {
        let b = bergman_via_gram(v, &w)?;
        let ge = kernel::grad_e_from_bergman(&b, n);
        let kkt = kkt_from_gradient(&w, &ge);
        let gap = b.max() - n as f64;
        if record(iter) {
            trace.push(TitteringtonRow { iter, kkt_residual: kkt.max_residual, elapsed_s: start.elapsed().as_secs_f64() });
        }
        let timed_out = opts.time_limit_s.is_some_and(|t| start.elapsed().as_secs_f64() >= t);
        let gap_ok = opts.gap_toll.is_some_and(|g| gap <= g);
        if kkt.max_residual <= opts.toll || gap_ok || timed_out {
            if trace.last().map(|r| r.iter) != Some(iter) {
                trace.push(TitteringtonRow { iter, kkt_residual: kkt.max_residual, elapsed_s: start.elapsed().as_secs_f64() });
            }
            let logdet = crate::design::gram_matrix(v, &w)?.logdet.unwrap_or(f64::NEG_INFINITY);
            return Ok(TitteringtonOutcome { w, kkt, iterations: iter, logdet, trace, gap_bound: gap });
        }
        if iter == opts.n_max {
            return Err(Error::TitteringtonNonConvergence(opts.n_max));
        }
        w = multiplicative_update(&w, &b, n);
        iter += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    WellPosedEvidence,
    IllPosedCertified,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct WellPosednessCertificate {
    pub verdict: Verdict,
    /// A move `t·u` with `V(Φ²)ᵗ u = 0` and `w + t·u ≥ 0`.
    pub witness: Option<Vec<f64>>,
    pub witness_distance: f64,
    pub kernel_dim: usize,
    /// Dimension of the kernel restricted to the support of `w`.
    pub support_kernel_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeOptions {
    /// Random unit combinations of kernel basis columns to try.
    pub random_directions: usize,
    pub seed: u64,
    /// Largest `M` for which the full kernel basis is formed.
    pub dense_cap: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions { random_directions: 8, seed: 0, dense_cap: 4000 }
    }
}

/// Closed-form interval `{t : w + t u ≥ 0}`.
pub fn feasible_interval(w: &DVector<f64>, u: &DVector<f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..w.len() {
        let wi = w[i].max(0.0);
        if u[i] > 0.0 {
            lo = lo.max(-wi / u[i]);
        } else if u[i] < 0.0 {
            hi = hi.min(wi / -u[i]);
        }
    }
    (lo, hi)
}

/// Looks for a second design with the same Φ²-moments along kernel directions.
///
/// Directions supported on the support of `w` are tried first, since every
/// nonzero one of them can be followed both ways. Columns of a full kernel
/// basis and random combinations of them follow when `M` is small enough.
pub fn wellposedness_probe(
    w_out: &Design,
    p2: &Phi2Space,
    proj: &KernelProjector,
    opts: &ProbeOptions,
) -> WellPosednessCertificate {
    let w = w_out.weights();
    let m = w.len();
    let kernel_dim = proj.kernel_dim();
    let mut cert = WellPosednessCertificate {
        verdict: Verdict::Inconclusive,
        witness: None,
        witness_distance: 0.0,
        kernel_dim,
        support_kernel_dim: 0,
    };
    if kernel_dim == 0 {
        cert.verdict = Verdict::WellPosedEvidence;
        return cert;
    }
    let v2 = p2.values();
    let v2norm = v2.norm();
    let wscale = w.amax();
    let support = w_out.support();
    let vs = DMatrix::from_fn(support.len(), v2.ncols(), |k, j| v2[(support[k], j)]);
    let (range, _) = linalg::range_basis(&vs);
    let local = linalg::orthogonal_complement(&range);
    cert.support_kernel_dim = local.ncols();

    let mut candidates: Vec<DVector<f64>> = Vec::new();
    for c in 0..local.ncols() {
        let mut u = DVector::zeros(m);
        for (k, &i) in support.iter().enumerate() {
            u[i] = local[(k, c)];
        }
        candidates.push(u);
    }
    if let Ok(z) = proj.kernel_basis(opts.dense_cap) {
        for c in 0..z.ncols() {
            candidates.push(z.column(c).into_owned());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for _ in 0..opts.random_directions {
            let y = DVector::from_fn(z.ncols(), |_, _| rng.random_range(-1.0..1.0));
            let u = &z * y;
            let nrm = u.norm();
            if nrm > 0.0 {
                candidates.push(u / nrm);
            }
        }
    }

    let mut best: Option<(f64, DVector<f64>)> = None;
    for u in candidates {
        if v2.tr_mul(&u).amax() > 1e-10 * v2norm * u.norm() {
            continue;
        }
        let (lo, hi) = feasible_interval(w, &u);
        let t = if hi >= -lo { hi } else { lo };
        let t = if t.is_finite() { t } else { continue };
        if t.abs() <= 1e-8 * wscale {
            continue;
        }
        let dist = t.abs() * u.norm();
        if best.as_ref().is_none_or(|(d, _)| dist > *d) {
            best = Some((dist, u * t));
        }
    }
    if let Some((dist, step)) = best {
        cert.verdict = Verdict::IllPosedCertified;
        cert.witness_distance = dist;
        cert.witness = Some(step.iter().cloned().collect());
    }
    cert
}

/// Marks a probe as well-posed evidence when the kernel restricted to the
/// support is trivial and every off-support gradient entry is strictly positive:
/// any other optimum would share `G`, hence the gradient, hence the support.
pub fn strengthen_with_gradient(cert: &mut WellPosednessCertificate, w: &Design, grad_e: &DVector<f64>) {
    if cert.verdict != Verdict::Inconclusive || cert.support_kernel_dim != 0 {
        return;
    }
    let t = w.support_threshold();
    let strict = (0..w.len()).all(|i| w.weights()[i] > t || grad_e[i] > 1e-8);
    if strict {
        cert.verdict = Verdict::WellPosedEvidence;
    }
}

/// `|E(w + step) − E(w)|` for a probe witness.
pub fn witness_energy_change(v: &Vandermonde, w: &Design, step: &[f64]) -> Result<f64> {
    let moved = DVector::from_fn(w.len(), |i, _| (w.weights()[i] + step[i]).max(0.0));
    Ok((energy_e(v, &Design::new(moved)?)? - energy_e(v, w)?).abs())
}

/// Ascending eigenvalues of `Hess F` (or `Hess F_η`) at `z`.
pub fn hessian_spectrum(obj: &Objective<'_>, z: &SqrtDesign, cap: usize) -> Result<Vec<f64>> {
    let m = z.len();
    if m > cap {
        return Err(Error::DenseCapExceeded { m, cap });
    }
    let ev = obj.evaluate(z)?;
    let h = obj.hessian(&ev, z, Execution::default());
    Ok(linalg::sorted_symmetric_eigenvalues(&h))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentCase {
    ThetaHalf,
    Unknown,
}

/// Heuristic a-posteriori bound `|z − z*| ≲ ‖∇F(z)‖ / C`.
#[derive(Clone, Debug, Serialize)]
pub struct ErrorEstimate {
    pub c_hat: Option<f64>,
    pub bound: Option<f64>,
    pub exponent_case: ExponentCase,
    pub restricted_hessian_ratio: f64,
    pub min_offsupport_gradient: Option<f64>,
    pub grad_norm: f64,
}

/// Checks that the Hessian of `E` restricted to the support is positive
/// definite and that the gradient is strictly positive off the support. When
/// both hold, `C` is estimated as half the smallest eigenvalue of `Hess F`,
/// computed from the support block and the decoupled off-support diagonal.
pub fn error_estimate(v: &Vandermonde, z: &SqrtDesign) -> Result<ErrorEstimate> {
    let obj = Objective::energy_f(v);
    let ev = obj.evaluate(z)?;
    let w = z.square();
    let support = w.support();
    let t = w.support_threshold();
    let n = ev.onb.n() as f64;
    let vt = ev.onb.values();
    let s = support.len();
    let sub = DMatrix::from_fn(s, vt.ncols(), |k, j| vt[(support[k], j)]);
    let mut he = &sub * sub.transpose();
    he.apply(|x| *x = *x * *x / n);
    let he_ev = linalg::sorted_symmetric_eigenvalues(&he);
    let (lmin, lmax) = (he_ev[0], *he_ev.last().unwrap());
    let ratio = lmin / lmax;
    let off: Vec<f64> = (0..w.len()).filter(|&i| w.weights()[i] <= t).map(|i| ev.grad_e[i]).collect();
    let min_off = off.iter().cloned().fold(None, |a: Option<f64>, x| Some(a.map_or(x, |a| a.min(x))));
    let grad_norm = ev.grad.norm();
    let case = if ratio > 1e-8 && min_off.is_none_or(|g| g > 1e-8) {
        ExponentCase::ThetaHalf
    } else {
        ExponentCase::Unknown
    };
    let (c_hat, bound) = if case == ExponentCase::ThetaHalf {
        let mut hf = DMatrix::from_fn(s, s, |a, b| {
            let (i, j) = (support[a], support[b]);
            4.0 * z.values()[i] * z.values()[j] * he[(a, b)]
        });
        for (a, &i) in support.iter().enumerate() {
            hf[(a, a)] += 2.0 * ev.grad_e[i];
        }
        let mut lam = linalg::sorted_symmetric_eigenvalues(&hf)[0];
        if let Some(g) = min_off {
            lam = lam.min(2.0 * g);
        }
        let c = lam / 2.0;
        (Some(c), Some(grad_norm / c))
    } else {
        (None, None)
    };
    Ok(ErrorEstimate {
        c_hat,
        bound,
        exponent_case: case,
        restricted_hessian_ratio: ratio,
        min_offsupport_gradient: min_off,
        grad_norm,
    })
}

/// Tail behaviour of `‖∇F‖∞` along a trace.
#[derive(Clone, Debug, Serialize)]
pub struct RateReport {
    /// Successive ratios `r_{k+1}/r_k` over the tail.
    pub tail_ratios: Vec<f64>,
    /// Least-squares slope of `log10 r_k` against `k` on the tail.
    pub slope: Option<f64>,
    pub superlinear: bool,
}

/// Summarizes the last `tail` accepted steps whose residual lies above `floor`.
pub fn rate_analysis(trace: &FlowTrace, tail: usize, floor: f64) -> RateReport {
    let res: Vec<(usize, f64)> = trace.rows.iter().filter(|r| r.grad_inf > floor).map(|r| (r.k, r.grad_inf)).collect();
    let start = res.len().saturating_sub(tail + 1);
    let seg = &res[start..];
    let tail_ratios: Vec<f64> = seg.windows(2).map(|p| p[1].1 / p[0].1).collect();
    let slope = if seg.len() >= 2 {
        let nf = seg.len() as f64;
        let mx = seg.iter().map(|p| p.0 as f64).sum::<f64>() / nf;
        let my = seg.iter().map(|p| p.1.log10()).sum::<f64>() / nf;
        let sxy: f64 = seg.iter().map(|p| (p.0 as f64 - mx) * (p.1.log10() - my)).sum();
        let sxx: f64 = seg.iter().map(|p| (p.0 as f64 - mx).powi(2)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    } else {
        None
    };
    let superlinear = tail_ratios.len() >= 2 && tail_ratios.windows(2).all(|p| p[1] < p[0]);
    RateReport { tail_ratios, slope, superlinear }
}
