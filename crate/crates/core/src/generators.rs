//! Built-in candidate sets. Random clouds use `ChaCha8Rng` seeded with
//! `seed_from_u64`, which is portable across platforms.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::design::CandidateSet;
use crate::error::{Error, Result};

/// Chebyshev–Lobatto nodes `cos(kπ/deg)`, `k = 0..=deg`.
pub fn chebyshev_lobatto(deg: usize) -> Vec<f64> {
    (0..=deg)
        .map(|k| {
            // Exact zero at the midpoint for even degree.
            if 2 * k == deg {
                0.0
            } else {
                (k as f64 * PI / deg as f64).cos()
            }
        })
        .collect()
}

/// Tensor grid of Chebyshev–Lobatto nodes in `[-1, 1]ⁿ`, `M = (deg+1)ⁿ`.
pub fn gen_chebyshev_lobatto_grid(deg: usize, n: usize) -> Result<CandidateSet> {
    if deg == 0 || n == 0 {
        return Err(Error::InvalidConfig("grid degree and dimension must be at least 1".into()));
    }
    let nodes = chebyshev_lobatto(deg);
    let per = deg + 1;
    let m = per.pow(n as u32);
    let pts = DMatrix::from_fn(m, n, |i, d| {
        let idx = (i / per.pow(d as u32)) % per;
        nodes[idx]
    });
    CandidateSet::new(pts)
}

/// `M` independent uniform points in `[-1, 1]²`.
pub fn gen_uniform_cloud(m: usize, seed: u64) -> Result<CandidateSet> {
    if m == 0 {
        return Err(Error::InvalidConfig("uniform cloud needs at least one point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = DMatrix::zeros(m, 2);
    for i in 0..m {
        for d in 0..2 {
            pts[(i, d)] = rng.random_range(-1.0..=1.0);
        }
    }
    CandidateSet::new(pts)
}

/// `M` independent standard bivariate normal points.
pub fn gen_gaussian_cloud(m: usize, seed: u64) -> Result<CandidateSet> {
    if m == 0 {
        return Err(Error::InvalidConfig("gaussian cloud needs at least one point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = DMatrix::zeros(m, 2);
    for i in 0..m {
        for d in 0..2 {
            pts[(i, d)] = rng.sample(StandardNormal);
        }
    }
    CandidateSet::new(pts)
}

/// Polar mesh of the closed unit disk: `d` circles with Chebyshev–Lobatto
/// radii `cos(jπ/(2d))`, `j = 0..d`, each carrying `4d` equispaced angles
/// `kπ/(2d)`, plus the center once. `M = 4d² + 1`.
pub fn gen_disk_admissible_mesh(mesh_degree: usize) -> Result<CandidateSet> {
    if mesh_degree == 0 {
        return Err(Error::InvalidConfig("mesh degree must be at least 1".into()));
    }
    let d = mesh_degree;
    let mut rows = vec![vec![0.0, 0.0]];
    for j in 0..d {
        let r = (j as f64 * PI / (2 * d) as f64).cos();
        for k in 0..4 * d {
            let th = k as f64 * PI / (2 * d) as f64;
            rows.push(vec![r * th.cos(), r * th.sin()]);
        }
    }
    CandidateSet::from_rows(&rows)
}
