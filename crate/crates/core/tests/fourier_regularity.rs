use srlab::regularity::{fit_exponent, holder_constant, smooth_approx_rate, RateVerdict, SampledControl};
use srlab::spectral::{ell_gamma_norm, fourier_coeffs, partial_sum_error, periodic_bridge, SeriesVerdict};
use srlab::stats::log_grid;

#[test]
fn step_function_calibration() {
    let u = SampledControl::step_function(4096, 0.125).unwrap();
    let alpha = fit_exponent(&u, 2.0, &u.dyadic_shifts()).unwrap().alpha();
    assert!((alpha - 0.5).abs() < 0.03);
    // omega_2(h) = 2 sqrt(h) exactly for a unit jump of height 2
    let c = holder_constant(&u, 2.0, 0.5).unwrap();
    assert!((c.value / 2.0 - 1.0).abs() < 0.02, "{}", c.value);

    let tab = partial_sum_error(&u, &[4, 8, 16, 32, 64, 128, 256]).unwrap();
    assert!((tab.slope.unwrap() + 0.5).abs() < 0.05);
    assert!(tab.rows.windows(2).all(|w| w[1].1 <= w[0].1));

    let t = fourier_coeffs(&u, 2047).unwrap();
    assert_eq!(ell_gamma_norm(&t, 2.0).unwrap().verdict, SeriesVerdict::Converging);
    assert_eq!(ell_gamma_norm(&t, 1.0).unwrap().verdict, SeriesVerdict::Diverging);

    let b = periodic_bridge(&u, 2.0, 0.05).unwrap();
    assert!(b.consistent, "{:?}", b);
}

#[test]
fn mollified_step_rates() {
    let u = SampledControl::step_function(2048, 0.125).unwrap();
    let eps = log_grid(1e-2, 1e-1, 5);
    assert_eq!(smooth_approx_rate(&u, 2.0, &eps).unwrap().verdict, RateVerdict::Bounded);
    assert_eq!(smooth_approx_rate(&u, 1.0, &eps).unwrap().verdict, RateVerdict::Diverging);
}

#[test]
fn parseval_on_band_limited_samples() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let coef: Vec<(f64, f64)> = (0..10).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let u = SampledControl::from_fn(1, 128, 0.125, |t| {
        let tau = 2.0 * std::f64::consts::PI * t;
        vec![coef.iter().enumerate().map(|(m, (a, b))| a * (m as f64 * tau).cos() + b * (m as f64 * tau).sin()).sum()]
    })
    .unwrap();
    let t = fourier_coeffs(&u, 63).unwrap();
    let norm2 = u.lp_norm(2.0).powi(2);
    assert!((t.energy() - norm2).abs() <= 1e-10);
    for m in 1..=63 {
        assert_eq!(t.coefficient(0, -m), t.coefficient(0, m).conj());
    }
}
