//! The endpoint variation `y(t, lambda)` obtained by perturbing the first
//! control by `-lambda phi'`, projection of test functions onto the moment
//! constraints, and the first/second order endpoint bounds.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Result, SrError};
use crate::geodesics::{gronwall_bound, integrate, variational_flow, Rk4, Trajectory, VariationalFlow};
use crate::srgeom::SrStructure;
use crate::stats::linear_fit;

/// Continuous piecewise-linear function on the uniform grid of [0, 1] with
/// `phi(0) = phi(1) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestFunction {
    values: Vec<f64>,
}

impl TestFunction {
    /// `values` holds `phi(t_0), ..., phi(t_N)`; the end values must be exactly zero.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(SrError::Dimension("test function needs N >= 1".into()));
        }
        if values[0] != 0.0 || values[values.len() - 1] != 0.0 {
            return Err(SrError::Precondition("test function must vanish at 0 and 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SrError::Range("non-finite test function value".into()));
        }
        Ok(Self { values })
    }

    /// Interior node values `phi(t_1), ..., phi(t_{N-1})`.
    pub fn from_interior(n: usize, interior: &[f64]) -> Result<Self> {
        if interior.len() + 1 != n {
            return Err(SrError::Dimension(format!(
                "{} interior values for {} intervals",
                interior.len(),
                n
            )));
        }
        let mut v = Vec::with_capacity(n + 1);
        v.push(0.0);
        v.extend_from_slice(interior);
        v.push(0.0);
        Self::new(v)
    }

    /// Samples `f` at the interior nodes; end values are set to zero.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let interior: Vec<f64> = (1..n).map(|i| f(i as f64 / n as f64)).collect();
        Self::from_interior(n, &interior)
    }

    pub fn zero(n: usize) -> Self {
        Self {
            values: vec![0.0; n + 1],
        }
    }

    /// Tent of height 1 centred at `center` with half-width `half_width`.
    pub fn hat(n: usize, center: f64, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0) || center - half_width < 0.0 || center + half_width > 1.0 {
            return Err(SrError::Range("hat support must lie in [0, 1]".into()));
        }
        Self::from_fn(n, |t| (1.0 - (t - center).abs() / half_width).max(0.0))
    }

    /// `sin(m pi t)`.
    pub fn sine(n: usize, m: u32) -> Result<Self> {
        if m == 0 {
            return Err(SrError::Range("sine mode must be >= 1".into()));
        }
        Self::from_fn(n, |t| (m as f64 * std::f64::consts::PI * t).sin())
    }

    /// Random sine series `sum_{m <= 8} a_m sin(m pi t) / m` with seeded Gaussian-ish coefficients.
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<f64> = (1..=8)
            .map(|m| rng.random_range(-1.0..1.0) / m as f64)
            .collect();
        Self::from_fn(n, |t| {
            coeffs
                .iter()
                .enumerate()
                .map(|(i, a)| a * ((i + 1) as f64 * std::f64::consts::PI * t).sin())
                .sum()
        })
    }

    /// Parses `hat`, `sine-<m>` or `random-<seed>`.
    pub fn family(spec: &str, n: usize) -> Result<Self> {
        let spec = spec.trim();
        if spec == "hat" {
            return Self::hat(n, 0.5, 0.5);
        }
        if let Some(m) = spec.strip_prefix("sine-") {
            let m = m
                .parse()
                .map_err(|_| SrError::Parse(format!("bad sine mode in '{}'", spec)))?;
            return Self::sine(n, m);
        }
        if let Some(s) = spec.strip_prefix("random-") {
            let s = s
                .parse()
                .map_err(|_| SrError::Parse(format!("bad seed in '{}'", spec)))?;
            return Self::random(n, s);
        }
        Err(SrError::Parse(format!(
            "unknown test function family '{}' (hat, sine-m, random-seed)",
            spec
        )))
    }

    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.intervals() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interior(&self) -> &[f64] {
        &self.values[1..self.values.len() - 1]
    }

    /// Forward differences, one per interval.
    pub fn derivative(&self) -> Vec<f64> {
        let n = self.intervals() as f64;
        self.values.windows(2).map(|w| (w[1] - w[0]) * n).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    /// `||phi||_p` by the trapezoid rule on the nodes (equal to the spacing times
    /// the interior sum since the ends vanish).
    pub fn norm(&self, p: f64) -> f64 {
        lp(self.interior(), p, self.spacing())
    }

    /// `||phi'||_p`, rectangle rule on the intervals.
    pub fn derivative_norm(&self, p: f64) -> f64 {
        lp(&self.derivative(), p, self.spacing())
    }

    /// `phi(t)` by linear interpolation.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.intervals();
        let s = (t.clamp(0.0, 1.0) * n as f64).min(n as f64);
        let i = (s.floor() as usize).min(n - 1);
        let w = s - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }
}

pub(crate) fn lp(v: &[f64], p: f64, spacing: f64) -> f64 {
    if p.is_infinite() {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    } else if p == 1.0 {
        v.iter().map(|x| x.abs()).sum::<f64>() * spacing
    } else if p == 2.0 {
        (v.iter().map(|x| x * x).sum::<f64>() * spacing).sqrt()
    } else {
        (v.iter().map(|x| x.abs().powf(p)).sum::<f64>() * spacing).powf(1.0 / p)
    }
}

fn check_field(s: &SrStructure, field: usize) -> Result<()> {
    if field >= s.rank() {
        return Err(SrError::Range(format!("field {} of {}", field, s.rank())));
    }
    Ok(())
}

fn check_grid(traj: &Trajectory, phi: &TestFunction) -> Result<()> {
    if traj.intervals() != phi.intervals() {
        return Err(SrError::Dimension(format!(
            "trajectory has {} intervals, test function {}",
            traj.intervals(),
            phi.intervals()
        )));
    }
    Ok(())
}

/// Controls with `u_field` replaced by `u_field - lambda phi'`.
fn varied_controls(traj: &Trajectory, phi: &TestFunction, lambda: f64, field: usize) -> DMatrix<f64> {
    let mut v = traj.controls.clone();
    for (i, d) in phi.derivative().iter().enumerate() {
        v[(field, i)] -= lambda * d;
    }
    v
}

/// Length of the varied curve from `sqrt(l^2 - 2 lambda u phi' + lambda^2 phi'^2)`,
/// valid when the original control has constant speed `l`.
pub fn varied_length_sqrt(traj: &Trajectory, phi: &TestFunction, lambda: f64, field: usize) -> f64 {
    let l = traj.length;
    let h = traj.dt();
    phi.derivative()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let u = traj.controls[(field, i)];
            let w = u - lambda * d;
            (w * w + (l - u) * (l + u)).max(0.0).sqrt()
        })
        .sum::<f64>()
        * h
}

/// Integrates `y' = sum_j u_j f_j(y) - lambda phi' f_field(y)`, `y(0) = x(0)`.
pub fn vary(
    s: &SrStructure,
    traj: &Trajectory,
    phi: &TestFunction,
    lambda: f64,
    field: usize,
) -> Result<Trajectory> {
    check_field(s, field)?;
    check_grid(traj, phi)?;
    if !(lambda >= 0.0) {
        return Err(SrError::Range(format!("lambda = {} must be >= 0", lambda)));
    }
    let mut y = integrate(s, &traj.start(), &varied_controls(traj, phi, lambda, field))?;
    if traj.speed_deviation() <= 1e-10 * traj.length.max(1.0) {
        y.length = varied_length_sqrt(traj, phi, lambda, field);
    }
    Ok(y)
}

/// Constraint integrals `int phi m dt` with
/// `m(t) = P(t)^{-1} sum_{j != field} u_j [f_j, f_field](x(t))`, as an n x (N-1)
/// matrix acting on the interior node values. Two Gauss points per interval;
/// the state and the flow there come from partial RK4 steps.
pub fn moment_matrix(
    s: &SrStructure,
    traj: &Trajectory,
    flow: &VariationalFlow,
    field: usize,
) -> Result<DMatrix<f64>> {
    check_field(s, field)?;
    let (n, k) = (s.dim(), s.rank());
    let big_n = traj.intervals();
    if flow.matrices.len() != big_n + 1 {
        return Err(SrError::Dimension("flow and trajectory grids differ".into()));
    }
    let h = traj.dt();
    let mut rk = Rk4::new(n, k);
    let mut out = vec![0.0; n];
    let mut jx = vec![0.0; n * n];
    let mut ju = vec![0.0; n * k];
    let mut c = DMatrix::zeros(n, big_n.saturating_sub(1));
    let g = 0.5 / 3f64.sqrt();
    for i in 0..big_n {
        let x = traj.state(i);
        let u = traj.control(i);
        for frac in [0.5 - g, 0.5 + g] {
            rk.step_jac(s, &x, &u, frac * h, &mut out, &mut jx, &mut ju);
            let mut b = DVector::zeros(n);
            for j in 0..k {
                if j != field && u[j] != 0.0 {
                    b += s.bracket_unchecked(j, field, &out) * u[j];
                }
            }
            if b.iter().all(|v| *v == 0.0) {
                continue;
            }
            let partial = DMatrix::from_row_slice(n, n, &jx);
            let local = partial.lu().solve(&b).ok_or_else(|| {
                SrError::Degenerate("singular partial-step flow".into())
            })?;
            let m = &flow.inverses[i] * local;
            let w = 0.5 * h;
            // hat functions of the two end nodes of interval i
            if i >= 1 {
                let col = i - 1;
                for d in 0..n {
                    c[(d, col)] += w * (1.0 - frac) * m[d];
                }
            }
            if i + 1 < big_n {
                for d in 0..n {
                    c[(d, i)] += w * frac * m[d];
                }
            }
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, Serialize)]
pub struct Projection {
    pub phi: TestFunction,
    /// Set when the moment functionals vanish (no constraint to impose).
    pub degenerate: bool,
    pub rank: usize,
    /// Largest moment integral before and after projection.
    pub initial_residual: f64,
    pub residual: f64,
}

/// Relative singular value cut-off of the moment matrix.
const MOMENT_RTOL: f64 = 1e-10;

/// Orthogonal projection of the interior node values onto the kernel of the
/// moment integrals.
pub fn project_to_h(
    phi: &TestFunction,
    traj: &Trajectory,
    flow: &VariationalFlow,
    s: &SrStructure,
    field: usize,
) -> Result<Projection> {
    check_grid(traj, phi)?;
    let c = moment_matrix(s, traj, flow, field)?;
    let x = DVector::from_column_slice(phi.interior());
    let initial = (&c * &x).amax();
    let svd = c.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax <= 1e-13 * traj.length.max(1.0) {
        return Ok(Projection {
            phi: phi.clone(),
            degenerate: true,
            rank: 0,
            initial_residual: initial,
            residual: initial,
        });
    }
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let mut y = x.clone();
    let mut rank = 0;
    for (r, sv) in svd.singular_values.iter().enumerate() {
        if *sv > MOMENT_RTOL * smax {
            rank += 1;
            let row = vt.row(r);
            let coef = row.dot(&x.transpose());
            y -= row.transpose() * coef;
        }
    }
    let projected = TestFunction::from_interior(phi.intervals(), y.as_slice())?;
    Ok(Projection {
        residual: (&c * &y).amax(),
        phi: projected,
        degenerate: false,
        rank,
        initial_residual: initial,
    })
}

/// Explicit constant of the first/second variation bounds in terms of the
/// number of fields `k`, the control bound `big_l` and the field bound `c_f`.
pub fn lemma_constant(k: usize, big_l: f64, c_f: f64) -> f64 {
    let a = k as f64 * big_l * c_f;
    let e = a.exp();
    let second = a * e * e * (1.0 + 2.0 * a * e + a * a * e * e);
    1f64.max(a * e).max(second)
}

#[derive(Clone, Debug, Serialize)]
pub struct FirstOrderRow {
    pub lambda: f64,
    /// `max_t |y(t) - x(t)|`.
    pub max_deviation: f64,
    /// `max_t (|y(t) - x(t)| - lambda(|phi(t)| + c l ||phi||_1))`.
    pub max_violation: f64,
    /// Largest operator norm of the flow along the varied curve and its Gronwall bound.
    pub flow_norm: f64,
    pub gronwall: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FirstOrderReport {
    pub c: f64,
    pub rows: Vec<FirstOrderRow>,
    pub max_violation: f64,
}

pub fn first_order_check(
    s: &SrStructure,
    traj: &Trajectory,
    phi: &TestFunction,
    lambdas: &[f64],
    field: usize,
) -> Result<FirstOrderReport> {
    let c = lemma_constant(s.rank(), traj.control_sup(), s.field_bound());
    let l = traj.length;
    let phi1 = phi.norm(1.0);
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let y = vary(s, traj, phi, lambda, field)?;
        let mut max_dev = 0.0f64;
        let mut max_vio = f64::NEG_INFINITY;
        for i in 0..=traj.intervals() {
            let d = (y.states.row(i) - traj.states.row(i)).norm();
            let bound = lambda * (phi.values()[i].abs() + c * l * phi1);
            max_dev = max_dev.max(d);
            max_vio = max_vio.max(d - bound);
        }
        let flow = variational_flow(s, &y)?;
        rows.push(FirstOrderRow {
            lambda,
            max_deviation: max_dev,
            max_violation: max_vio,
            flow_norm: flow.max_norms().0,
            gronwall: gronwall_bound(s, &y),
        });
    }
    let max_violation = rows.iter().map(|r| r.max_violation).fold(f64::NEG_INFINITY, f64::max);
    Ok(FirstOrderReport {
        c,
        rows,
        max_violation,
    })
}

/// Endpoint deviations below this are treated as no signal.
pub const FLAT_THRESHOLD: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct EndpointOrder {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    /// `exp(intercept) / ||phi||_2^2`.
    pub empirical_c: f64,
    /// `(lambda, |y(1, lambda) - x(1)|)`.
    pub points: Vec<(f64, f64)>,
    /// Points dropped for falling below the flat threshold.
    pub dropped: usize,
}

/// Log-log fit of `|y(1, lambda) - x(1)|` against `lambda`.
pub fn endpoint_order(
    s: &SrStructure,
    traj: &Trajectory,
    phi: &TestFunction,
    lambdas: &[f64],
    field: usize,
) -> Result<EndpointOrder> {
    let end = DVector::from_row_slice(&traj.end());
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let y = vary(s, traj, phi, lambda, field)?;
        let dev = (DVector::from_row_slice(&y.end()) - &end).norm();
        points.push((lambda, dev));
    }
    let used: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.1 >= FLAT_THRESHOLD && p.0 > 0.0)
        .map(|p| (p.0.ln(), p.1.ln()))
        .collect();
    if used.is_empty() {
        return Err(SrError::InsufficientData(
            "endpoint deviation is flat (below 1e-12 for every lambda)".into(),
        ));
    }
    if used.len() < 3 {
        return Err(SrError::InsufficientData(format!(
            "only {} endpoint deviations above 1e-12",
            used.len()
        )));
    }
    let fit = linear_fit(&used);
    let n2 = phi.norm(2.0);
    Ok(EndpointOrder {
        slope: fit.slope,
        intercept: fit.intercept,
        residual: fit.residual,
        empirical_c: fit.intercept.exp() / (n2 * n2),
        dropped: points.len() - used.len(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_function_basics() {
        assert!(TestFunction::new(vec![0.0, 1.0, 0.5]).is_err());
        let h = TestFunction::hat(8, 0.5, 0.5).unwrap();
        assert_eq!(h.values()[4], 1.0);
        assert_eq!(h.derivative(), vec![2.0, 2.0, 2.0, 2.0, -2.0, -2.0, -2.0, -2.0]);
        // exact integrals of the tent: ||phi||_1 = 1/2, ||phi'||_2 = 2
        assert!((h.norm(1.0) - 0.5).abs() < 1e-15);
        assert!((h.derivative_norm(2.0) - 2.0).abs() < 1e-15);
        assert_eq!(h.eval(0.25), 0.5);
        assert!(TestFunction::family("sine-3", 16).is_ok());
        assert!(TestFunction::family("random-7", 16).unwrap() == TestFunction::random(16, 7).unwrap());
        assert!(TestFunction::family("cosine", 16).is_err());
    }

    fn abnormal(n: usize) -> (SrStructure, Trajectory) {
        let s = SrStructure::martinet();
        let mut u = DMatrix::zeros(2, n);
        u.row_mut(0).fill(1.0);
        let t = integrate(&s, &[0.0, 0.0, 0.0], &u).unwrap();
        (s, t)
    }

    /// Unit-speed Heisenberg curve with a rotating control.
    fn circle(n: usize) -> (SrStructure, Trajectory) {
        let s = SrStructure::heisenberg();
        let u = DMatrix::from_fn(2, n, |j, i| {
            let a = 3.0 * (i as f64 + 0.5) / n as f64;
            if j == 0 { a.cos() } else { a.sin() }
        });
        let t = integrate(&s, &[0.2, -0.1, 0.0], &u).unwrap();
        (s, t)
    }

    #[test]
    fn zero_variation_is_identity() {
        let (s, t) = circle(64);
        let phi = TestFunction::random(64, 1).unwrap();
        let y = vary(&s, &t, &phi, 0.0, 0).unwrap();
        assert_eq!(y.states, t.states);
        let y = vary(&s, &t, &TestFunction::zero(64), 0.7, 1).unwrap();
        assert_eq!(y.states, t.states);
        assert!(vary(&s, &t, &phi, -1.0, 0).is_err());
        assert!(vary(&s, &t, &TestFunction::zero(32), 0.1, 0).is_err());
    }

    #[test]
    fn length_formulas_agree() {
        let (s, t) = circle(128);
        for seed in 0..5 {
            let phi = TestFunction::random(128, seed).unwrap();
            for lambda in [1e-3, 0.1, 0.8] {
                for field in 0..2 {
                    let y = vary(&s, &t, &phi, lambda, field).unwrap();
                    let direct = integrate(&s, &t.start(), &y.controls).unwrap().length;
                    assert!((y.length - direct).abs() < 1e-12, "{} vs {}", y.length, direct);
                }
            }
        }
    }

    #[test]
    fn projection_properties() {
        let (s, t) = circle(128);
        let flow = variational_flow(&s, &t).unwrap();
        for seed in 0..4 {
            let phi = TestFunction::random(128, seed).unwrap();
            let p = project_to_h(&phi, &t, &flow, &s, 0).unwrap();
            assert!(!p.degenerate);
            assert!(p.residual <= 1e-10, "{}", p.residual);
            assert!(p.phi.norm(2.0) <= phi.norm(2.0) + 1e-15);
            let again = project_to_h(&p.phi, &t, &flow, &s, 0).unwrap();
            let d = again.phi.values().iter().zip(p.phi.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d <= 1e-12, "{}", d);
        }
    }

    #[test]
    fn vanishing_brackets_are_flagged() {
        let (s, t) = abnormal(64);
        let flow = variational_flow(&s, &t).unwrap();
        let phi = TestFunction::sine(64, 1).unwrap();
        for field in 0..2 {
            let p = project_to_h(&phi, &t, &flow, &s, field).unwrap();
            assert!(p.degenerate);
            assert_eq!(p.phi, phi);
        }
        // varying the first field only reparametrizes the line
        let err = endpoint_order(&s, &t, &phi, &[1e-3, 1e-2, 1e-1], 0).unwrap_err();
        assert!(matches!(err, SrError::InsufficientData(_)));
    }

    #[test]
    fn projected_away_is_flat() {
        let (s, t) = circle(64);
        let r = endpoint_order(&s, &t, &TestFunction::zero(64), &[1e-3, 1e-2, 1e-1], 0);
        assert!(matches!(r, Err(SrError::InsufficientData(_))));
    }

    #[test]
    fn lemma_constant_formula() {
        assert_eq!(lemma_constant(2, 0.0, 3.0), 1.0);
        let a: f64 = 2.0 * 0.5 * 0.3;
        let want = a * (2.0 * a).exp() * (1.0 + 2.0 * a * a.exp() + a * a * (2.0 * a).exp());
        assert!((lemma_constant(2, 0.5, 0.3) - want.max(1.0).max(a * a.exp())).abs() < 1e-15);
    }

    #[test]
    fn first_order_bound_on_circle() {
        let (s, t) = circle(128);
        let phi = TestFunction::hat(128, 0.5, 0.5).unwrap();
        let r = first_order_check(&s, &t, &phi, &[0.0, 1e-3, 1e-2, 1e-1], 0).unwrap();
        assert_eq!(r.rows[0].max_deviation, 0.0);
        assert!(r.max_violation <= 1e-8);
        assert!(r.rows.iter().all(|row| row.flow_norm <= row.gronwall));
    }
}
