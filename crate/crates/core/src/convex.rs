//! Norm-ball projections and a Chambolle-Pock primal-dual iteration.

use serde::Serialize;

use crate::error::{Result, SrError};

/// The exponents handled exactly: 1, 2 and infinity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Exponent {
    One,
    Two,
    Inf,
}

impl Exponent {
    pub fn from_f64(p: f64) -> Result<Self> {
        if p == 1.0 {
            Ok(Exponent::One)
        } else if p == 2.0 {
            Ok(Exponent::Two)
        } else if p.is_infinite() && p > 0.0 {
            Ok(Exponent::Inf)
        } else {
            Err(SrError::Domain(format!("exponent {} not in {{1, 2, inf}}", p)))
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Exponent::One => 1.0,
            Exponent::Two => 2.0,
            Exponent::Inf => f64::INFINITY,
        }
    }

    pub fn conjugate(self) -> Self {
        match self {
            Exponent::One => Exponent::Inf,
            Exponent::Two => Exponent::Two,
            Exponent::Inf => Exponent::One,
        }
    }

    /// `1/p`.
    pub fn reciprocal(self) -> f64 {
        match self {
            Exponent::One => 1.0,
            Exponent::Two => 0.5,
            Exponent::Inf => 0.0,
        }
    }

    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            Exponent::One => v.iter().map(|x| x.abs()).sum(),
            Exponent::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Exponent::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    /// Euclidean projection onto `{ ||x||_p <= radius }`, in place.
    pub fn project(self, v: &mut [f64], radius: f64) {
        match self {
            Exponent::Two => {
                let n = self.norm(v);
                if n > radius {
                    let s = radius / n;
                    v.iter_mut().for_each(|x| *x *= s);
                }
            }
            Exponent::Inf => v.iter_mut().for_each(|x| *x = x.clamp(-radius, radius)),
            Exponent::One => project_l1(v, radius),
        }
    }
}

/// Sort-based projection onto the l1 ball (soft threshold at the simplex level).
fn project_l1(v: &mut [f64], radius: f64) {
    if radius <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let total: f64 = v.iter().map(|x| x.abs()).sum();
    if total <= radius {
        return;
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, m) in mags.iter().enumerate() {
        cum += m;
        let t = (cum - radius) / (i + 1) as f64;
        if *m > t {
            theta = t;
        } else {
            break;
        }
    }
    v.iter_mut()
        .for_each(|x| *x = x.signum() * (x.abs() - theta).max(0.0));
}

#[derive(Clone, Copy, Debug)]
pub struct PdhgOptions {
    pub max_iter: usize,
    /// Relative change of the monitored objective over one check window.
    pub rel_tol: f64,
    /// Step-scaled movement of `(x, y)` in one iteration, relative to the
    /// step-scaled size of `(x, y)`. Guards against plateaus where x sits still
    /// while y is still moving.
    pub res_tol: f64,
    pub check_every: usize,
}

impl Default for PdhgOptions {
    fn default() -> Self {
        Self {
            max_iter: 100_000,
            rel_tol: 1e-9,
            res_tol: 1e-6,
            check_every: 50,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PdhgResult {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Operator pieces of `min_x f(x) + h(Kx)`.
pub trait Splitting {
    fn primal_dim(&self) -> usize;
    fn dual_dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]);
    /// `prox_{tau f}`, in place.
    fn prox_f(&self, tau: f64, x: &mut [f64]);
    /// `prox_{sigma h*}`, in place.
    fn prox_h_conj(&self, sigma: f64, y: &mut [f64]);
    /// Value monitored by the stopping rule.
    fn objective(&self, x: &[f64]) -> f64;
}

/// Chambolle-Pock with over-relaxation theta = 1; requires `tau sigma ||K||^2 < 1`.
/// Returns the best iterate (by `objective`) among the start and the checkpoints.
pub fn pdhg<P: Splitting>(
    p: &P,
    x0: Vec<f64>,
    tau: f64,
    sigma: f64,
    opts: &PdhgOptions,
) -> PdhgResult {
    let mut x = x0;
    let mut x_bar = x.clone();
    let mut x_old = x.clone();
    let mut y = vec![0.0; p.dual_dim()];
    let mut y_old = y.clone();
    let mut kx = vec![0.0; p.dual_dim()];
    let mut kty = vec![0.0; p.primal_dim()];
    let mut last = p.objective(&x);
    let mut best = (last, x.clone());
    let mut converged = false;
    let mut it = 0;
    while it < opts.max_iter {
        it += 1;
        y_old.copy_from_slice(&y);
        p.apply(&x_bar, &mut kx);
        for (yi, ki) in y.iter_mut().zip(&kx) {
            *yi += sigma * ki;
        }
        p.prox_h_conj(sigma, &mut y);
        p.apply_adjoint(&y, &mut kty);
        x_old.copy_from_slice(&x);
        for (xi, ki) in x.iter_mut().zip(&kty) {
            *xi -= tau * ki;
        }
        p.prox_f(tau, &mut x);
        for ((b, xn), xo) in x_bar.iter_mut().zip(&x).zip(&x_old) {
            *b = 2.0 * xn - xo;
        }
        if it % opts.check_every == 0 {
            let obj = p.objective(&x);
            let change = (obj - last).abs() / obj.abs().max(last.abs()).max(1e-300);
            last = obj;
            if obj < best.0 {
                best = (obj, x.clone());
            }
            let flat = change < opts.rel_tol || (obj == 0.0 && change.is_nan());
            if flat && residual(&x, &x_old, &y, &y_old, tau, sigma) <= opts.res_tol {
                converged = true;
                break;
            }
        }
    }
    let obj = p.objective(&x);
    if obj < best.0 {
        best = (obj, x);
    }
    PdhgResult {
        objective: best.0,
        x: best.1,
        y,
        iterations: it,
        converged,
    }
}

fn residual(x: &[f64], x_old: &[f64], y: &[f64], y_old: &[f64], tau: f64, sigma: f64) -> f64 {
    let norm = |a: &[f64]| a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    let moved = dist(x, x_old) / tau + dist(y, y_old) / sigma;
    let size = norm(x) / tau + norm(y) / sigma;
    if moved == 0.0 {
        0.0
    } else {
        moved / size
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_l1(v: &[f64], r: f64) -> Vec<f64> {
        // bisection on the threshold
        let f = |t: f64| v.iter().map(|x| (x.abs() - t).max(0.0)).sum::<f64>();
        let (mut lo, mut hi) = (0.0, v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        v.iter().map(|x| x.signum() * (x.abs() - hi).max(0.0)).collect()
    }

    proptest! {
        #[test]
        fn l1_projection_matches_bisection(v in prop::collection::vec(-5.0f64..5.0, 1..30), r in 0.01f64..10.0) {
            let mut p = v.clone();
            Exponent::One.project(&mut p, r);
            prop_assert!(Exponent::One.norm(&p) <= r * (1.0 + 1e-12) + 1e-12);
            if Exponent::One.norm(&v) > r {
                let b = brute_l1(&v, r);
                for (a, c) in p.iter().zip(&b) {
                    prop_assert!((a - c).abs() < 1e-9);
                }
            } else {
                prop_assert_eq!(p, v);
            }
        }

        #[test]
        fn projections_are_nonexpansive(a in prop::collection::vec(-5.0f64..5.0, 8), b in prop::collection::vec(-5.0f64..5.0, 8), r in 0.1f64..4.0) {
            for e in [Exponent::One, Exponent::Two, Exponent::Inf] {
                let (mut pa, mut pb) = (a.clone(), b.clone());
                e.project(&mut pa, r);
                e.project(&mut pb, r);
                let d0: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
                let d1: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum();
                prop_assert!(d1 <= d0 + 1e-12);
                prop_assert!(e.norm(&pa) <= r * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn conjugates() {
        assert_eq!(Exponent::One.conjugate(), Exponent::Inf);
        assert_eq!(Exponent::Two.conjugate(), Exponent::Two);
        assert!(Exponent::from_f64(3.0).is_err());
        assert_eq!(Exponent::from_f64(f64::INFINITY).unwrap(), Exponent::Inf);
    }

    /// min ||x - c||_1 + ||D x||_2^2-free check: lasso-like toy with known answer
    /// min_x |x - 3| + 0.5 |x|  (scalar, K = I, h = 0.5 |.|) has x = 3.
    struct Toy;
    impl Splitting for Toy {
        fn primal_dim(&self) -> usize {
            1
        }
        fn dual_dim(&self) -> usize {
            1
        }
        fn apply(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[0];
        }
        fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
            out[0] = y[0];
        }
        fn prox_f(&self, tau: f64, x: &mut [f64]) {
            let d = x[0] - 3.0;
            x[0] = 3.0 + d.signum() * (d.abs() - tau).max(0.0);
        }
        fn prox_h_conj(&self, _sigma: f64, y: &mut [f64]) {
            y[0] = y[0].clamp(-0.5, 0.5);
        }
        fn objective(&self, x: &[f64]) -> f64 {
            (x[0] - 3.0).abs() + 0.5 * x[0].abs()
        }
    }

    #[test]
    fn toy_problem() {
        let r = pdhg(&Toy, vec![0.0], 0.9, 0.9, &PdhgOptions::default());
        assert!((r.x[0] - 3.0).abs() < 1e-8, "{:?}", r);
    }
}
