#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use optdesign::{build_vandermonde, BasisSpec, CandidateSet, Vandermonde};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random points in `[-1, 1]ⁿ` with a total-degree basis of at most `n_max`
/// functions, redrawn until the Vandermonde matrix has full column rank.
pub fn random_instance(r: &mut ChaCha8Rng, n_max: usize, m_max: usize) -> Vandermonde {
    loop {
        let dim = r.random_range(1..=2);
        let max_deg = if dim == 1 { n_max - 1 } else { (1..).take_while(|d| (d + 1) * (d + 2) / 2 <= n_max).last().unwrap_or(0) };
        let deg = r.random_range(0..=max_deg);
        let n = if dim == 1 { deg + 1 } else { (deg + 1) * (deg + 2) / 2 };
        let m = r.random_range((n + 1).min(m_max)..=m_max);
        let pts = DMatrix::from_fn(m, dim, |_, _| r.random_range(-1.0..1.0));
        let Ok(x) = CandidateSet::new(pts) else { continue };
        if let Ok(v) = build_vandermonde(&x, &BasisSpec::total_degree(deg)) {
            if v.rank() == v.n() {
                return v;
            }
        }
    }
}

/// Entries drawn from `[lo, hi]`.
pub fn random_positive(r: &mut ChaCha8Rng, m: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(m, |_, _| r.random_range(lo..hi))
}

/// Central-difference gradient with steps `h_i`.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let (mut p, mut q) = (x.clone(), x.clone());
        p[i] += h[i];
        q[i] -= h[i];
        (f(&p) - f(&q)) / (2.0 * h[i])
    })
}

/// Central-difference Jacobian of `g`, column `j` from steps in `x_j`.
pub fn fd_jacobian(g: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let (mut p, mut q) = (x.clone(), x.clone());
        p[j] += h[j];
        q[j] -= h[j];
        let col = (g(&p) - g(&q)) / (2.0 * h[j]);
        out.set_column(j, &col);
    }
    out
}

/// `‖a − b‖∞ / ‖b‖∞` over all entries.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Exhaustive search of `det G` over the simplex `{w₁ + w₂ + w₃ = 1}` for
/// `X = {−1, 0, 1}` and `Φ = {1, x}`, where `det G = (w₁ + w₃) − (w₃ − w₁)²`.
pub fn brute_force_line(step: f64) -> [f64; 3] {
    let k = (1.0 / step).round() as usize;
    let mut best = (f64::NEG_INFINITY, [0.0; 3]);
    for i in 0..=k {
        for j in 0..=(k - i) {
            let (w1, w3) = (i as f64 * step, j as f64 * step);
            let d = (w1 + w3) - (w3 - w1) * (w3 - w1);
            if d > best.0 {
                best = (d, [w1, 1.0 - w1 - w3, w3]);
            }
        }
    }
    best.1
}

/// Largest relative finite-difference errors of `∇E, Hess E, ∇F, Hess F,
/// ∇F_η, Hess F_η` on one random instance.
pub fn calculus_errors(seed: u64) -> [f64; 6] {
    use optdesign::design::{energy_e, energy_f, Design, SqrtDesign};
    use optdesign::kernel::{grad_e, grad_f, hess_e, hess_f, weighted_onb};
    use optdesign::regularization::{build_phi2, energy_f_eta, grad_f_eta, hess_f_eta, kernel_projector};

    let mut r = rng(seed);
    let v = random_instance(&mut r, 6, 30);
    let m = v.m();
    let w = random_positive(&mut r, m, 0.5 / m as f64, 1.5 / m as f64);
    let z = {
        let mut z = w.map(f64::sqrt);
        // Mixed signs exercise the signed square root.
        for i in 0..m {
            if r.random_bool(0.3) {
                z[i] = -z[i];
            }
        }
        z
    };
    let hw = w.map(|x| 1e-4 * x);
    let hz = z.map(|x| 1e-4 * x.abs());

    let e = |w: &DVector<f64>| energy_e(&v, &Design::new(w.clone()).unwrap()).unwrap();
    let ge = |w: &DVector<f64>| grad_e(&weighted_onb(&v, &Design::new(w.clone()).unwrap().sqrt()).unwrap());
    let onb_w = weighted_onb(&v, &Design::new(w.clone()).unwrap().sqrt()).unwrap();
    let e1 = rel_err(fd_gradient(e, &w, &hw).as_slice(), ge(&w).as_slice());
    let e2 = rel_err(fd_jacobian(ge, &w, &hw).as_slice(), hess_e(&onb_w).as_slice());

    let sz = |z: &DVector<f64>| SqrtDesign::new(z.clone());
    let f = |z: &DVector<f64>| energy_f(&v, &sz(z)).unwrap();
    let gf = |z: &DVector<f64>| grad_f(&sz(z), &weighted_onb(&v, &sz(z)).unwrap());
    let onb_z = weighted_onb(&v, &sz(&z)).unwrap();
    let e3 = rel_err(fd_gradient(f, &z, &hz).as_slice(), gf(&z).as_slice());
    let e4 = rel_err(fd_jacobian(gf, &z, &hz).as_slice(), hess_f(&sz(&z), &onb_z).as_slice());

    let proj = kernel_projector(&build_phi2(&v));
    let eta = r.random_range(0.1..2.0);
    let fe = |z: &DVector<f64>| energy_f_eta(&v, &sz(z), eta, &proj).unwrap();
    let gfe = |z: &DVector<f64>| grad_f_eta(&v, &sz(z), eta, &proj).unwrap();
    let e5 = rel_err(fd_gradient(fe, &z, &hz).as_slice(), gfe(&z).as_slice());
    let e6 = rel_err(fd_jacobian(gfe, &z, &hz).as_slice(), hess_f_eta(&v, &sz(&z), eta, &proj).unwrap().as_slice());
    [e1, e2, e3, e4, e5, e6]
}

/// Kernel characterization of `Hess E` on one instance with `M ≤ 12`:
/// returns the largest `uᵗHu / (‖H‖‖u‖²)` over an orthonormal basis of
/// `Ker V(Φ²)ᵗ` and the smallest one over unit vectors of its complement.
pub fn kernel_characterization(seed: u64) -> Option<(f64, f64)> {
    use optdesign::design::Design;
    use optdesign::kernel::{hess_e, hess_e_quadratic_form, weighted_onb};
    use optdesign::regularization::product_columns;

    let mut r = rng(seed);
    let v = random_instance(&mut r, 4, 12);
    let m = v.m();
    let w = Design::new(random_positive(&mut r, m, 0.5, 1.5)).unwrap().normalized();
    let onb = weighted_onb(&v, &w.sqrt()).unwrap();
    let h = hess_e(&onb);
    let hnorm = h.clone().svd(false, false).singular_values.max();

    // Square padding gives the full left singular basis of V(Φ²).
    let v2 = product_columns(v.values());
    let mut padded = DMatrix::zeros(m, m.max(v2.ncols()));
    padded.view_mut((0, 0), (m, v2.ncols())).copy_from(&v2);
    let svd = padded.svd(true, false);
    let u = svd.u.unwrap();
    let smax = svd.singular_values.max();
    let tol = smax * m as f64 * f64::EPSILON * 10.0;
    let (mut null, mut range) = (Vec::new(), Vec::new());
    for k in 0..m {
        let col = u.column(k).into_owned();
        if svd.singular_values[k] > tol {
            range.push(col);
        } else {
            null.push(col);
        }
    }
    if null.is_empty() {
        return None;
    }
    let kernel = null.iter().map(|u| hess_e_quadratic_form(&onb, u) / hnorm).fold(0.0f64, f64::max);
    let mut probes = range.clone();
    for _ in 0..10 {
        let mut u = DVector::zeros(m);
        for b in &range {
            u.axpy(r.random_range(-1.0..1.0), b, 1.0);
        }
        probes.push(u.normalize());
    }
    let complement = probes.iter().map(|u| hess_e_quadratic_form(&onb, u) / hnorm).fold(f64::INFINITY, f64::min);
    Some((kernel, complement))
}

/// Compresses a random full-support design; returns `(support, N₂, relative
/// moment error, mass error)`.
pub fn compression_invariants(seed: u64) -> (usize, usize, f64, f64) {
    use optdesign::compress;
    use optdesign::design::Design;
    use optdesign::regularization::build_phi2;

    let mut r = rng(seed);
    loop {
        let v = random_instance(&mut r, 6, 60);
        let p2 = build_phi2(&v);
        if v.m() < p2.n2() {
            continue;
        }
        let w = Design::new(random_positive(&mut r, v.m(), 0.1, 1.0)).unwrap().normalized();
        let c = compress(&w, &p2).unwrap();
        let wc = c.to_design();
        let m0 = p2.moments(w.weights());
        let m1 = p2.moments(wc.weights());
        let rel = (&m1 - &m0).amax() / m0.amax();
        return (c.len(), p2.n2(), rel, (wc.mass() - w.mass()).abs());
    }
}

/// Runs `steps` multiplicative updates from a random design and returns the
/// most negative change of `log det G` between consecutive steps.
pub fn titterington_worst_decrease(seed: u64, steps: usize) -> f64 {
    use optdesign::design::{gram_matrix, Design};
    use optdesign::diagnostics::titterington_step;
    use optdesign::kernel::weighted_onb;

    let mut r = rng(seed);
    let v = random_instance(&mut r, 10, 40);
    let mut w = Design::new(random_positive(&mut r, v.m(), 0.1, 1.0)).unwrap().normalized();
    let mut prev = gram_matrix(&v, &w).unwrap().logdet.unwrap();
    let mut worst = f64::INFINITY;
    for _ in 0..steps {
        w = titterington_step(&w, &weighted_onb(&v, &w.sqrt()).unwrap());
        let ld = gram_matrix(&v, &w).unwrap().logdet.unwrap();
        worst = worst.min(ld - prev);
        prev = ld;
    }
    worst
}
