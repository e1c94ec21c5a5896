mod common;

use common::*;
use optdesign::design::{build_vandermonde, CandidateSet, Design, SqrtDesign};
use optdesign::diagnostics::{titterington_solve, titterington_step, TitteringtonOptions};
use optdesign::kernel::weighted_onb;
use optdesign::{solve_adaptive, solve_fixed_step, BasisSpec, FlowParams, Objective};

fn line() -> optdesign::Vandermonde {
    let x = CandidateSet::from_rows(&[vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
    build_vandermonde(&x, &BasisSpec::monomials_1d(1)).unwrap()
}

#[test]
fn brute_force_oracle_is_the_endpoint_design() {
    let w = brute_force_line(1e-3);
    assert_eq!(w.map(|x| (x * 1e3).round() / 1e3), [0.5, 0.0, 0.5]);
}

#[test]
fn all_solvers_agree_with_the_line_oracle() {
    let oracle = [0.5, 0.0, 0.5];
    let v = line();
    let obj = Objective::energy_f(&v);
    let z0 = SqrtDesign::uniform(3);
    let fixed = solve_fixed_step(&obj, &z0, &FlowParams::fixed(1.0)).unwrap().z.square();
    let adaptive = solve_adaptive(&obj, &z0, &FlowParams::default()).unwrap().z.square();
    let opts = TitteringtonOptions { toll: 1e-9, ..Default::default() };
    let titt = titterington_solve(&v, &Design::uniform(3), &opts).unwrap().w;
    for w in [fixed, adaptive, titt] {
        for i in 0..3 {
            assert!((w.weights()[i] - oracle[i]).abs() <= 1e-6, "{:?}", w.weights());
        }
    }
}

#[test]
fn hess_e_vanishes_exactly_on_the_moment_kernel() {
    let mut seen = 0;
    for seed in 0..40 {
        if let Some((kernel, complement)) = kernel_characterization(seed) {
            seen += 1;
            assert!(kernel <= 1e-18, "seed {seed}: kernel ratio {kernel:e}");
            assert!(complement >= 1e-10, "seed {seed}: complement ratio {complement:e}");
        }
    }
    assert!(seen >= 10);
}

#[test]
fn compression_preserves_moments_and_mass() {
    for seed in 0..10 {
        let (support, n2, moments, mass) = compression_invariants(seed);
        assert!(support <= n2);
        assert!(moments <= 1e-10, "seed {seed}: moments {moments:e}");
        assert!(mass <= 1e-12, "seed {seed}: mass {mass:e}");
    }
}

#[test]
fn multiplicative_steps_never_decrease_the_determinant() {
    for seed in 0..3 {
        let worst = titterington_worst_decrease(seed, 300);
        assert!(worst >= -1e-12, "seed {seed}: {worst:e}");
    }
}

#[test]
fn multiplicative_fixed_points() {
    let v = line();
    let w = Design::from_vec(vec![0.5, 0.0, 0.5]).unwrap();
    let w1 = titterington_step(&w, &weighted_onb(&v, &w.sqrt()).unwrap());
    assert!((w1.weights() - w.weights()).amax() <= 1e-15);

    let x = CandidateSet::from_rows(&[vec![-1.0], vec![0.5], vec![1.0]]).unwrap();
    let v = build_vandermonde(&x, &BasisSpec::monomials_1d(2)).unwrap();
    let w = Design::uniform(3);
    let w1 = titterington_step(&w, &weighted_onb(&v, &w.sqrt()).unwrap());
    assert!((w1.weights() - w.weights()).amax() <= 1e-15);
}
