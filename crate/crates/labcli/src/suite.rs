//! The acceptance criteria as runnable checks, in a full and a reduced (smoke)
//! size.

use std::time::Instant;

use nalgebra::DMatrix;
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use srlab::convex::{Exponent, PdhgOptions};
use srlab::geodesics::{
    ballbox_probe, integrate, solve_shortest, variational_flow, SolverOptions, Trajectory,
    BALLBOX_GRID,
};
use srlab::interpdual::{
    admissible_ranges, duality_gap_cells, exponents, sqrt_lemma_check, verify_interpolation_bound,
    AdmissibleRanges, Bound, Case,
};
use srlab::regularity::{
    fit_exponent, holder_constant, poincare_ratio, ExponentFit, SampledControl, DEFAULT_DELTA,
};
use srlab::spectral::{fourier_coeffs, partial_sum_error, weighted_sum, SeriesVerdict};
use srlab::stats::log_grid;
use srlab::variation::{endpoint_order, first_order_check, project_to_h, TestFunction};
use srlab::{SrError, SrStructure};

use crate::oracles;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Suite {
    Smoke,
    Full,
}

impl std::str::FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "smoke" => Ok(Suite::Smoke),
            "full" => Ok(Suite::Full),
            other => Err(format!("unknown suite '{}' (smoke, full)", other)),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    pub measured: String,
    pub expected: String,
    pub seconds: f64,
    pub budget_seconds: Option<f64>,
    /// Extra lines: sub-measurements, supplementary cases, analysis notes.
    pub detail: Vec<String>,
}

impl Outcome {
    pub fn line(&self) -> String {
        let budget = self
            .budget_seconds
            .map(|b| format!(" / {:.0}s", b))
            .unwrap_or_default();
        format!(
            "[{}] criterion {:>2} {}: measured {} | expected {} | {:.2}s{}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.measured,
            self.expected,
            self.seconds,
            budget
        )
    }
}

/// Criteria whose stated target cannot be met by a faithful implementation,
/// with the reason. They still run and still report FAIL.
pub const UNATTAINABLE: &[(u8, &str)] = &[(
    4,
    "on the Martinet abnormal line the first-order endpoint term vanishes for every \
     test function (the only bracket [f1, f2] = -(0, 0, x2) is zero along x2 = 0), so the \
     unprojected deviation is O(lambda^2) and its slope is 2, not 1",
)];

pub const TITLES: [&str; 11] = [
    "square-root inequality",
    "zero duality gap",
    "Hoelder estimator calibration",
    "second-variation order",
    "first-variation bound",
    "ball-box exponents",
    "modulus exponents of geodesic controls",
    "Fourier partial sums and weighted sums",
    "exponent arithmetic",
    "Poincare identity",
    "interpolation bound stability",
];

pub fn run_criterion(id: u8, suite: Suite) -> Outcome {
    let start = Instant::now();
    let (pass, measured, expected, budget, detail) = match id {
        1 => c1(suite),
        2 => c2(suite),
        3 => c3(suite),
        4 => c4(suite),
        5 => c5(suite),
        6 => c6(suite),
        7 => c7(suite),
        8 => c8(suite),
        9 => c9(),
        10 => c10(suite),
        11 => c11(suite),
        _ => Ok((false, "-".into(), "criterion 1..=11".into(), None, vec![])),
    }
    .unwrap_or_else(|e| (false, format!("error: {}", e), "-".into(), None, vec![]));
    let seconds = start.elapsed().as_secs_f64();
    let in_time = budget.is_none_or(|b| seconds < b);
    let mut detail = detail;
    if !in_time {
        detail.push(format!("runtime {:.2}s exceeds budget", seconds));
    }
    Outcome {
        id,
        title: TITLES.get(id as usize - 1).copied().unwrap_or("unknown"),
        pass: pass && in_time,
        measured,
        expected,
        seconds,
        budget_seconds: budget,
        detail,
    }
}

pub fn run_suite(suite: Suite, mut on_done: impl FnMut(&Outcome)) -> Vec<Outcome> {
    (1..=11)
        .map(|id| {
            let o = run_criterion(id, suite);
            on_done(&o);
            o
        })
        .collect()
}

type Check = srlab::Result<(bool, String, String, Option<f64>, Vec<String>)>;

fn pick(suite: Suite, full: usize, smoke: usize) -> usize {
    match suite {
        Suite::Full => full,
        Suite::Smoke => smoke,
    }
}

fn c1(suite: Suite) -> Check {
    let count = pick(suite, 10_000, 1_000);
    let n = 128;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = 0;
    let mut min_slack = f64::INFINITY;
    for i in 0..count {
        let q = rng.random_range(1.0..=2.0);
        let l = 10f64.powf(rng.random_range(-1.0..1.0));
        let saturate = i % 10 == 0;
        let u: Vec<f64> = (0..n)
            .map(|_| {
                if saturate {
                    if rng.random_bool(0.5) { l } else { -l }
                } else {
                    l * rng.random_range(-1.0..=1.0)
                }
            })
            .collect();
        let scale = l * 10f64.powf(rng.random_range(-3.0..1.5));
        let psi: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let c = sqrt_lemma_check(&u, &psi, l, q)?;
        if c.violations > 0 || c.slack < 0.0 {
            bad += 1;
        }
        min_slack = min_slack.min(c.slack);
    }
    Ok((
        bad == 0,
        format!("{} violations in {} instances", bad, count),
        "0 violations".into(),
        Some(10.0),
        vec![format!("smallest slack {:.3e}", min_slack)],
    ))
}

fn c2(suite: Suite) -> Check {
    let opts = PdhgOptions::default();
    let count = pick(suite, 20, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let two = Exponent::Two;
    let mut worst_gap = 0.0f64;
    let mut all_converged = true;
    for _ in 0..count {
        let u: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = 10f64.powf(rng.random_range(-1.0..1.0));
        let p = duality_gap_cells(&u, m, two, two, &opts)?;
        worst_gap = worst_gap.max(p.relative_gap);
        all_converged &= p.converged;
    }
    let mut worst_oracle = 0.0f64;
    let mut cases: Vec<(Vec<f64>, f64)> = vec![(
        (0..8).map(|i| if i < 4 { -1.0 } else { 1.0 }).collect(),
        1.0,
    )];
    for _ in 0..count {
        let u: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        cases.push((u, 10f64.powf(rng.random_range(-1.0..1.0))));
    }
    for (u, m) in &cases {
        let p = duality_gap_cells(u, *m, two, two, &opts)?;
        let os = oracles::primal_s_l2(u, *m);
        let ok = oracles::dual_k_l2(u, *m);
        worst_oracle = worst_oracle.max((p.s_value - os).abs()).max((p.k_value - ok).abs());
    }
    Ok((
        worst_gap <= 1e-2 && worst_oracle <= 1e-3,
        format!("max relative gap {:.2e}, max oracle deviation {:.2e}", worst_gap, worst_oracle),
        "gap <= 1e-2, oracle deviation <= 1e-3".into(),
        Some(120.0),
        vec![
            format!("{} matched solves at N = 64, {} oracle cases at N = 8", count, cases.len()),
            format!("all solves converged: {}", all_converged),
        ],
    ))
}

fn c3(_suite: Suite) -> Check {
    let u = SampledControl::step_function(4096, DEFAULT_DELTA)?;
    let alpha = fit_exponent(&u, 2.0, &u.dyadic_shifts())?.alpha();
    // a jump of height 2 gives omega_2(h) = 2 sqrt(h)
    let c = holder_constant(&u, 2.0, 0.5)?.value;
    let rel = (c / 2.0 - 1.0).abs();
    Ok((
        (alpha - 0.5).abs() <= 0.03 && rel <= 0.02,
        format!("alpha {:.4}, c {:.4}", alpha, c),
        "alpha 0.50 +- 0.03, c 2.0 +- 2%".into(),
        Some(1.0),
        vec![],
    ))
}

fn abnormal_line(n: usize) -> srlab::Result<(SrStructure, Trajectory)> {
    let s = SrStructure::martinet();
    let mut u = DMatrix::zeros(2, n);
    u.row_mut(0).fill(1.0);
    let t = integrate(&s, &[0.0; 3], &u)?;
    Ok((s, t))
}

fn constant_field(s: &SrStructure) -> usize {
    (0..s.rank()).find(|&i| s.is_field_constant(i)).unwrap_or(0)
}

fn slopes(
    s: &SrStructure,
    t: &Trajectory,
    field: usize,
    seed: u64,
) -> srlab::Result<(f64, f64, bool, f64)> {
    let flow = variational_flow(s, t)?;
    let phi = TestFunction::random(t.intervals(), seed)?;
    let proj = project_to_h(&phi, t, &flow, s, field)?;
    let lambdas = log_grid(1e-3, 1e-1, 7);
    let a = endpoint_order(s, t, &proj.phi, &lambdas, field)?.slope;
    let b = endpoint_order(s, t, &phi, &lambdas, field)?.slope;
    Ok((a, b, proj.degenerate, proj.residual))
}

fn c4(suite: Suite) -> Check {
    let n = 256;
    let seeds = pick(suite, 3, 1) as u64;
    let (s, t) = abnormal_line(n)?;
    let field = constant_field(&s);
    let mut worst_proj = 0.0f64;
    let mut worst_unproj = 0.0f64;
    let mut proj_slopes = Vec::new();
    let mut unproj_slopes = Vec::new();
    let mut degenerate = true;
    for seed in 0..seeds {
        let (a, b, deg, _) = slopes(&s, &t, field, seed)?;
        degenerate &= deg;
        worst_proj = worst_proj.max((a - 2.0).abs());
        worst_unproj = worst_unproj.max((b - 1.0).abs());
        proj_slopes.push(a);
        unproj_slopes.push(b);
    }
    let mut detail = vec![
        format!("varied field f{} (constant), {} test functions", field + 1, seeds),
        format!("projection degenerate (moments vanish): {}", degenerate),
        format!("projected slopes {:?}", round4(&proj_slopes)),
        format!("unprojected slopes {:?}", round4(&unproj_slopes)),
    ];
    // supplementary: a normal Martinet geodesic, where the first-order term survives
    let sp = solve_shortest(&s, &[0.0; 3], &[1.0, 0.5, 0.1], n, &SolverOptions::default())?;
    let (a, b, deg, res) = slopes(&s, &sp.trajectory, field, 5)?;
    detail.push(format!(
        "supplementary normal geodesic to (1, 0.5, 0.1): projected {:.4}, unprojected {:.4}, degenerate {}, residual {:.1e}",
        a, b, deg, res
    ));
    if let Some((_, why)) = UNATTAINABLE.iter().find(|(i, _)| *i == 4) {
        detail.push(format!("analysis: {}", why));
    }
    Ok((
        worst_proj <= 0.15 && worst_unproj <= 0.15,
        format!(
            "projected slope {:.4}, unprojected slope {:.4}",
            proj_slopes[0], unproj_slopes[0]
        ),
        "projected 2.0 +- 0.15, unprojected 1.0 +- 0.15".into(),
        Some(30.0),
        detail,
    ))
}

fn round4(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

fn c5(suite: Suite) -> Check {
    let n = pick(suite, 256, 128);
    let count = pick(suite, 20, 5) as u64;
    let lambdas = [1e-3, 1e-2, 1e-1];
    let opts = SolverOptions::default();
    let cases = [
        (SrStructure::heisenberg(), vec![1.0, 0.5, 0.3]),
        (SrStructure::martinet(), vec![1.0, 0.5, 0.1]),
    ];
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut detail = Vec::new();
    for (s, target) in &cases {
        let sp = solve_shortest(s, &[0.0; 3], target, n, &opts)?;
        let t = &sp.trajectory;
        let mut c = 0.0;
        for seed in 0..count {
            let phi = TestFunction::random(n, 100 + seed)?;
            for field in 0..s.rank() {
                let r = first_order_check(s, t, &phi, &lambdas, field)?;
                c = r.c;
                for row in &r.rows {
                    worst = worst.max(row.max_violation);
                    if row.max_violation > 1e-8 {
                        violations += 1;
                    }
                }
            }
        }
        detail.push(format!("{}: lemma constant c = {:.3e}", s.name(), c));
    }
    Ok((
        violations == 0,
        format!("{} violations, largest excess {:.3e}", violations, worst),
        "0 violations beyond 1e-8".into(),
        Some(60.0),
        detail,
    ))
}

fn c6(_suite: Suite) -> Check {
    let h = SrStructure::heisenberg();
    let radii = [0.4, 0.2, 0.1, 0.05, 0.025];
    let opts = SolverOptions::default();
    let v = ballbox_probe(&h, &[0.0; 3], &[0.0, 0.0, 1.0], &radii, BALLBOX_GRID, &opts, 0.05)?;
    let z = ballbox_probe(&h, &[0.0; 3], &[1.0, 0.0, 0.0], &radii, BALLBOX_GRID, &opts, 0.05)?;
    let (ev, ez) = (v.exponent.unwrap_or(f64::NAN), z.exponent.unwrap_or(f64::NAN));
    let mut detail = vec![];
    detail.extend(v.failures.iter().chain(&z.failures).cloned());
    if let Some(c) = v.c_bb_lower {
        detail.push(format!("vertical c_bb lower bound {:.4}", c));
    }
    Ok((
        (ev - 0.5).abs() <= 0.05 && (ez - 1.0).abs() <= 0.05,
        format!("vertical {:.4}, horizontal {:.4}", ev, ez),
        "vertical 0.50 +- 0.05, horizontal 1.00 +- 0.05".into(),
        Some(300.0),
        detail,
    ))
}

/// Heisenberg geodesic targets used by several criteria.
const HEIS_TARGETS: [[f64; 3]; 3] = [[1.0, 0.5, 0.3], [0.5, -0.8, 0.2], [-0.7, 0.3, -0.4]];

fn c7(suite: Suite) -> Check {
    let h = SrStructure::heisenberg();
    let n = 256;
    let opts = SolverOptions::default();
    let mut alphas = Vec::new();
    for x1 in HEIS_TARGETS.iter().take(pick(suite, 3, 1)) {
        let sp = solve_shortest(&h, &[0.0; 3], x1, n, &opts)?;
        let u = SampledControl::from_trajectory(&sp.trajectory, DEFAULT_DELTA)?;
        alphas.push(fit_exponent(&u, 2.0, &u.dyadic_shifts())?.alpha());
    }
    let (_, ab) = abnormal_line(n)?;
    let u = SampledControl::from_trajectory(&ab, DEFAULT_DELTA)?;
    let mut invariant = true;
    for p in [1.0, 2.0, f64::INFINITY] {
        invariant &= matches!(fit_exponent(&u, p, &u.dyadic_shifts())?, ExponentFit::ExactInvariance);
        invariant &= holder_constant(&u, p, 0.5)?.value == 0.0;
    }
    let min_alpha = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((
        min_alpha >= 0.9 && invariant,
        format!(
            "(a) min L2 exponent {:.4} over {} geodesics; (b) exact invariance {}",
            min_alpha,
            alphas.len(),
            invariant
        ),
        "(a) >= 0.9; (b) all moduli zero".into(),
        Some(300.0),
        vec![format!("exponents {:?}", round4(&alphas))],
    ))
}

fn c8(_suite: Suite) -> Check {
    let u = SampledControl::step_function(16384, DEFAULT_DELTA)?;
    let tab = partial_sum_error(&u, &[4, 8, 16, 32, 64, 128, 256])?;
    let slope = tab.slope.unwrap_or(f64::NAN);
    let t = fourier_coeffs(&u, 2048)?;
    let lo = weighted_sum(&t, 0.4)?;
    let hi = weighted_sum(&t, 0.6)?;
    Ok((
        (slope + 0.5).abs() <= 0.05
            && lo.verdict == SeriesVerdict::Converging
            && hi.verdict == SeriesVerdict::Diverging,
        format!(
            "slope {:.4}; alpha 0.4 {:?} (ratio {:.4}), alpha 0.6 {:?} (ratio {:.4})",
            slope, lo.verdict, lo.doubling_ratio, hi.verdict, hi.doubling_ratio
        ),
        "slope -0.50 +- 0.05; 0.4 converging, 0.6 diverging".into(),
        Some(5.0),
        vec![],
    ))
}

fn c9() -> Check {
    let mut errors = Vec::new();
    let mut check = |name: String, got: f64, want: f64| {
        if (got - want).abs() > 1e-12 {
            errors.push(format!("{}: {} != {}", name, got, want));
        }
    };
    let e = exponents(2.0, 2.0 / 3.0, Case::Local)?;
    check("theta(2, 2/3)".into(), e.theta, 0.5);
    check("kappa(2, 2/3)".into(), e.kappa, 1.25);
    for z in [0.05, 0.25, 0.5, 2.0 / 3.0, 0.9, 0.999] {
        let e = exponents(1.0, z, Case::Global)?;
        check(format!("theta(1, {})", z), e.theta, 0.0);
        check(format!("kappa(1, {})", z), e.kappa, 1.0);
    }
    // closed-form bounds recomputed here, independently of admissible_ranges
    let mut symbolic = 0;
    for s in 2..=4i64 {
        for p in 2..=4i64 {
            let pr = Rational64::from_integer(p);
            let sm1 = Rational64::from_integer(s - 1);
            let w = admissible_ranges(s, pr, Case::Local)?;
            let want = AdmissibleRanges::Local {
                alpha: Bound {
                    value: Rational64::new(2, 1) / (pr * sm1),
                    inclusive: p == 2,
                },
            };
            if w != want {
                errors.push(format!("alpha bound s={} p={}: {:?}", s, p, w));
            }
            symbolic += 1;
            let admissible = pr >= Rational64::from_integer(2) + Rational64::from_integer(1) / sm1;
            match admissible_ranges(s, pr, Case::Global) {
                Ok(g) => {
                    let beta_sup = Rational64::from_integer(1) / (pr * sm1);
                    if !admissible || g != (AdmissibleRanges::Global { beta: Bound { value: beta_sup, inclusive: false }, s }) {
                        errors.push(format!("beta bound s={} p={}", s, p));
                    }
                    let beta = beta_sup / 2;
                    let kb = g.kappa_bound(beta)?;
                    let want = Rational64::from_integer(1) - beta * Rational64::from_integer(s - 2);
                    if kb.value != want || kb.inclusive {
                        errors.push(format!("kappa bound s={} p={}", s, p));
                    }
                    symbolic += 1;
                }
                Err(SrError::Domain(_)) if !admissible => symbolic += 1,
                Err(e) => errors.push(format!("s={} p={}: {}", s, p, e)),
            }
        }
    }
    Ok((
        errors.is_empty(),
        format!("{} mismatches; {} symbolic range cases", errors.len(), symbolic),
        "exact values to 1e-12, bounds identical".into(),
        None,
        errors,
    ))
}

fn c10(suite: Suite) -> Check {
    let opts = SolverOptions::default();
    let n = pick(suite, 256, 128);
    let mut cases: Vec<(SrStructure, Vec<f64>)> = HEIS_TARGETS
        .iter()
        .map(|x| (SrStructure::heisenberg(), x.to_vec()))
        .collect();
    cases.push((SrStructure::martinet(), vec![1.0, 0.5, 0.1]));
    cases.push((SrStructure::martinet(), vec![0.6, -0.4, -0.2]));
    let mut worst = 0.0f64;
    let mut ratios_ok = true;
    let mut detail = Vec::new();
    for (s, x1) in &cases {
        let sp = solve_shortest(s, &vec![0.0; s.dim()], x1, n, &opts)?;
        let u = SampledControl::from_trajectory(&sp.trajectory, DEFAULT_DELTA)?;
        let r = poincare_ratio(&u, 2.0, 0.5)?;
        match r.identity_residual {
            Some(v) => worst = worst.max(v),
            None => {
                worst = f64::INFINITY;
                detail.push(format!("{} {:?}: speed not constant", s.name(), x1));
            }
        }
        ratios_ok &= r.ratio.is_finite() && r.ratio > 0.0;
    }
    // synthetic nonconstant controls
    let synth = [
        SampledControl::step_function(256, DEFAULT_DELTA)?,
        SampledControl::from_fn(2, 256, DEFAULT_DELTA, |t| vec![(5.0 * t).cos(), (5.0 * t).sin()])?,
        SampledControl::from_fn(1, 256, DEFAULT_DELTA, |t| vec![(t * 37.0).sin().signum() * t])?,
    ];
    for u in &synth {
        let r = poincare_ratio(u, 2.0, 0.5)?;
        ratios_ok &= r.ratio.is_finite() && r.ratio > 0.0;
    }
    detail.push(format!("{} geodesics, {} synthetic controls", cases.len(), synth.len()));
    Ok((
        worst <= 1e-8 && ratios_ok,
        format!("max identity residual {:.2e}; ratios finite and positive {}", worst, ratios_ok),
        "residual <= 1e-8; ratios finite, > 0".into(),
        None,
        detail,
    ))
}

fn rel_diff(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

fn interpolation_pair(
    controls: [(SampledControl, f64); 2],
    count: u64,
    m_grid: &[f64],
) -> srlab::Result<(f64, f64, f64, bool)> {
    let ex = exponents(2.0, Case::Global.zeta(3), Case::Global)?;
    let opts = PdhgOptions::default();
    let mut out = Vec::new();
    for (u, l) in &controls {
        let l = *l;
        let batch: Vec<TestFunction> = (0..count)
            .map(|s| TestFunction::random(u.n(), s))
            .collect::<srlab::Result<_>>()?;
        out.push(verify_interpolation_bound(u, l, &ex, &batch, m_grid, &opts)?);
    }
    let bounded = out
        .iter()
        .all(|r| r.max_surrogate.is_finite() && r.sweep.iter().all(|s| s.surrogate.is_finite()));
    Ok((out[0].max_ratio, out[1].max_ratio, out[0].max_surrogate.max(out[1].max_surrogate), bounded))
}

fn c11(suite: Suite) -> Check {
    let count = pick(suite, 500, 100) as u64;
    let m_grid: Vec<f64> = (-4..=8).map(|e| 2f64.powi(e)).collect();
    let abnormal = |n: usize| {
        let mut v = DMatrix::zeros(2, n);
        v.row_mut(0).fill(1.0);
        SampledControl::new(v, 0.0, 1.0, DEFAULT_DELTA)
    };
    let (a, b, sur, bounded) = interpolation_pair([(abnormal(128)?, 1.0), (abnormal(256)?, 1.0)], count, &m_grid)?;
    let diff = rel_diff(a, b);
    // supplementary: a Heisenberg geodesic control, same exponents
    let h = SrStructure::heisenberg();
    let opts = SolverOptions::default();
    let mut sup = Vec::new();
    for n in [128, 256] {
        let sp = solve_shortest(&h, &[0.0; 3], &HEIS_TARGETS[0], n, &opts)?;
        let u = SampledControl::from_trajectory(&sp.trajectory, DEFAULT_DELTA)?;
        sup.push((u, sp.trajectory.length));
    }
    let sup: [(SampledControl, f64); 2] = sup.try_into().expect("two grids");
    let (ha, hb, hs, hbounded) = interpolation_pair(sup, count.min(100), &m_grid)?;
    Ok((
        diff <= 0.2 && bounded,
        format!("max ratio {:.4e} (N=128) vs {:.4e} (N=256), surrogate max {:.3e}", a, b, sur),
        "ratio change <= 20%, surrogate bounded".into(),
        None,
        vec![format!(
            "supplementary Heisenberg geodesic: max ratio {:.4} vs {:.4} (change {:.1}%), surrogate max {:.4}, bounded {}",
            ha,
            hb,
            100.0 * rel_diff(ha, hb),
            hs,
            hbounded
        )],
    ))
}
