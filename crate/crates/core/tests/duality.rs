use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use srlab::convex::{Exponent, PdhgOptions};
use srlab::interpdual::{duality_gap, exponents, solve_s, verify_interpolation_bound, Case};
use srlab::regularity::SampledControl;
use srlab::stats::dyadic;
use srlab::variation::TestFunction;

#[test]
fn random_controls_close_the_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = PdhgOptions::default();
    for _ in 0..5 {
        let vals: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u = SampledControl::new(DMatrix::from_row_slice(1, 256, &vals), 0.0, 1.0, 0.125).unwrap();
        let m = 10f64.powf(rng.random_range(-1.0..1.0));
        // the solvers run on a coarser grid; the control is cell-averaged onto it
        let p = duality_gap(&u, m, Exponent::Two, Exponent::Two, 64, &opts).unwrap();
        assert!(p.converged);
        assert!(p.relative_gap <= 1e-6, "{}", p.relative_gap);
        assert!(p.s_value <= 0.0 && p.k_value >= 0.0);
        assert_eq!(p.primal_argmax.intervals(), 64);
    }
}

#[test]
fn primal_is_monotone_on_dyadic_grid() {
    let u = SampledControl::step_function(128, 0.125).unwrap();
    let opts = PdhgOptions::default();
    let mut last = 0.0;
    for m in dyadic(64.0, 10).into_iter().rev() {
        let s = solve_s(&u, m, Exponent::One, Exponent::Two, 128, &opts).unwrap().value;
        assert!(s <= last + 1e-7 * (1.0 + s.abs()), "M = {}: {} > {}", m, s, last);
        last = s;
    }
}

#[test]
fn abnormal_control_ratios_vanish() {
    let ex = exponents(2.0, Case::Global.zeta(3), Case::Global).unwrap();
    for n in [128, 256] {
        let mut v = DMatrix::zeros(2, n);
        v.row_mut(0).fill(1.0);
        let u = SampledControl::new(v, 0.0, 1.0, 0.125).unwrap();
        let batch: Vec<TestFunction> = (0..50).map(|s| TestFunction::random(n, s).unwrap()).collect();
        let grid: Vec<f64> = (-4..=8).map(|e| 2f64.powi(e)).collect();
        let rep = verify_interpolation_bound(&u, 1.0, &ex, &batch, &grid, &PdhgOptions::default()).unwrap();
        assert_eq!(rep.evaluated, 50);
        assert!(rep.max_ratio.abs() < 1e-12);
        assert_eq!(rep.max_surrogate, 0.0);
    }
}
