//! L_p moduli of continuity, Hölder constants and Besov norms of sampled
//! controls, plus the Poincaré ratio and mollifier approximation rates.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SrError};
use crate::geodesics::Trajectory;
use crate::stats::linear_fit;

pub const DEFAULT_DELTA: f64 = 0.125;

/// Relative size under which a modulus counts as exactly zero.
const ZERO_RTOL: f64 = 1e-14;

/// Piecewise-constant samples of a k-vector control on `[t1, t2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledControl {
    /// k x N.
    values: DMatrix<f64>,
    t1: f64,
    t2: f64,
    /// Window parameter in units of cells.
    delta_cells: usize,
}

impl SampledControl {
    pub fn new(values: DMatrix<f64>, t1: f64, t2: f64, delta: f64) -> Result<Self> {
        let n = values.ncols();
        if n == 0 || values.nrows() == 0 {
            return Err(SrError::Dimension("empty control".into()));
        }
        if !(t2 > t1) {
            return Err(SrError::Range("need t1 < t2".into()));
        }
        let width = t2 - t1;
        if !(delta > 0.0) || delta > width / 4.0 + 1e-12 * width {
            return Err(SrError::Range(format!(
                "delta = {} must lie in (0, (t2 - t1)/4]",
                delta
            )));
        }
        let spacing = width / n as f64;
        let delta_cells = (delta / spacing).round() as usize;
        if delta_cells < 8 {
            return Err(SrError::Range(format!(
                "delta covers {} samples, at least 8 are needed",
                delta_cells
            )));
        }
        Ok(Self {
            values,
            t1,
            t2,
            delta_cells,
        })
    }

    /// Samples `f` at the cell midpoints of `[0, 1]`.
    pub fn from_fn(k: usize, n: usize, delta: f64, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let mut values = DMatrix::zeros(k, n);
        for i in 0..n {
            let v = f((i as f64 + 0.5) / n as f64);
            for j in 0..k {
                values[(j, i)] = v[j];
            }
        }
        Self::new(values, 0.0, 1.0, delta)
    }

    /// `sign(t - 1/2)` on `[0, 1]`; N must be even so the jump sits on a node.
    pub fn step_function(n: usize, delta: f64) -> Result<Self> {
        Self::from_fn(1, n, delta, |t| vec![if t < 0.5 { -1.0 } else { 1.0 }])
    }

    pub fn from_trajectory(traj: &Trajectory, delta: f64) -> Result<Self> {
        Self::new(traj.controls.clone(), 0.0, 1.0, delta)
    }

    /// First component as a scalar control.
    pub fn component(&self, j: usize) -> Result<Self> {
        if j >= self.k() {
            return Err(SrError::Range(format!("component {} of {}", j, self.k())));
        }
        Ok(Self {
            values: DMatrix::from_row_slice(1, self.n(), self.values.row(j).clone_owned().as_slice()),
            ..self.clone()
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.t1, self.t2)
    }

    pub fn spacing(&self) -> f64 {
        (self.t2 - self.t1) / self.n() as f64
    }

    pub fn delta(&self) -> f64 {
        self.delta_cells as f64 * self.spacing()
    }

    pub fn delta_cells(&self) -> usize {
        self.delta_cells
    }

    fn pointwise_norm(&self, i: usize) -> f64 {
        self.values.column(i).norm()
    }

    fn lp_of(&self, vals: impl Iterator<Item = f64>, p: f64) -> f64 {
        if p.is_infinite() {
            vals.fold(0.0, f64::max)
        } else if p == 1.0 {
            vals.sum::<f64>() * self.spacing()
        } else if p == 2.0 {
            (vals.map(|v| v * v).sum::<f64>() * self.spacing()).sqrt()
        } else {
            (vals.map(|v| v.powf(p)).sum::<f64>() * self.spacing()).powf(1.0 / p)
        }
    }

    /// `||u||_p` over the whole interval (rectangle rule, Euclidean norm in R^k).
    pub fn lp_norm(&self, p: f64) -> f64 {
        self.lp_of((0..self.n()).map(|i| self.pointwise_norm(i)), p)
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.k())
            .map(|j| self.values.row(j).sum() / self.n() as f64)
            .collect()
    }

    /// Rounds a shift to the nearest multiple of the spacing; errors if beyond delta.
    pub fn shift_cells(&self, h: f64) -> Result<i64> {
        let m = (h / self.spacing()).round() as i64;
        if m.unsigned_abs() as usize > self.delta_cells {
            return Err(SrError::Range(format!(
                "|h| = {} exceeds delta = {}",
                h.abs(),
                self.delta()
            )));
        }
        Ok(m)
    }

    /// `omega_p` for the shift of `m` cells.
    pub fn modulus_cells(&self, p: f64, m: i64) -> Result<f64> {
        let d = self.delta_cells;
        let n = self.n();
        if m.unsigned_abs() as usize > d {
            return Err(SrError::Range(format!("shift of {} cells exceeds {}", m, d)));
        }
        if m == 0 {
            return Ok(0.0);
        }
        // I_+ = (t1, t2 - delta), I_- = (t1 + delta, t2)
        let cells = if m > 0 { 0..n - d } else { d..n };
        let diffs = cells.map(|i| {
            let src = (i as i64 + m) as usize;
            (self.values.column(src) - self.values.column(i)).norm()
        });
        Ok(self.lp_of(diffs, p))
    }

    /// `omega_p(h, u) = ||u(. + h) - u||_{L_p(I_sign h)}`, h rounded to the grid.
    pub fn modulus(&self, p: f64, h: f64) -> Result<f64> {
        self.modulus_cells(p, self.shift_cells(h)?)
    }

    /// Shifts delta, delta/2, ... down to one cell.
    pub fn dyadic_shifts(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut m = self.delta_cells;
        while m >= 1 {
            out.push(m as f64 * self.spacing());
            m /= 2;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HolderConstant {
    pub value: f64,
    pub h_at_sup: f64,
    pub h_min: f64,
    /// The supremum sits at the smallest available shift, so the reported
    /// value is capped by the grid rather than stabilized.
    pub sup_at_grid_floor: bool,
}

/// `c^alpha_p(u) = sup_{0 < |h| <= delta} omega_p(h, u) / |h|^alpha` over grid shifts.
pub fn holder_constant(u: &SampledControl, p: f64, alpha: f64) -> Result<HolderConstant> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(SrError::Range(format!("alpha = {} outside (0, 1]", alpha)));
    }
    let d = u.delta_cells() as i64;
    let dt = u.spacing();
    let mut best = (0.0, dt);
    for m in (1..=d).flat_map(|m| [m, -m]) {
        let h = m.unsigned_abs() as f64 * dt;
        let r = u.modulus_cells(p, m)? / h.powf(alpha);
        if r > best.0 {
            best = (r, h);
        }
    }
    let scale = u.lp_norm(p);
    Ok(HolderConstant {
        value: best.0,
        h_at_sup: best.1,
        h_min: dt,
        sup_at_grid_floor: best.0 > ZERO_RTOL * scale && (best.1 - dt).abs() < 0.5 * dt,
    })
}

/// `||u||_p + c^alpha_p(u)`.
pub fn besov_norm(u: &SampledControl, p: f64, alpha: f64) -> Result<f64> {
    Ok(u.lp_norm(p) + holder_constant(u, p, alpha)?.value)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ExponentFit {
    Fitted {
        alpha: f64,
        residual: f64,
        /// `(h, omega_p(h))` pairs used in the fit.
        points: Vec<(f64, f64)>,
    },
    /// Every modulus vanished: u is shift invariant on the window, consistent
    /// with any exponent (reported as +inf).
    ExactInvariance,
}

impl ExponentFit {
    pub fn alpha(&self) -> f64 {
        match self {
            ExponentFit::Fitted { alpha, .. } => *alpha,
            ExponentFit::ExactInvariance => f64::INFINITY,
        }
    }
}

/// Least-squares slope of `log omega_p(h)` against `log h`.
pub fn fit_exponent(u: &SampledControl, p: f64, h_grid: &[f64]) -> Result<ExponentFit> {
    let scale = u.lp_norm(p).max(f64::MIN_POSITIVE);
    let mut pts = Vec::new();
    let mut any_nonzero = false;
    for &h in h_grid {
        if !(h > 0.0) || h > u.delta() * (1.0 + 1e-12) {
            return Err(SrError::Range(format!("shift {} outside (0, delta]", h)));
        }
        let m = u.shift_cells(h)?;
        if m == 0 {
            return Err(SrError::Range(format!("shift {} below grid spacing", h)));
        }
        let w = u.modulus_cells(p, m)?;
        if w > ZERO_RTOL * scale {
            any_nonzero = true;
            pts.push((m as f64 * u.spacing(), w));
        }
    }
    if !any_nonzero {
        return Ok(ExponentFit::ExactInvariance);
    }
    if pts.len() < 3 {
        return Err(SrError::InsufficientData(format!(
            "{} nonzero moduli, need at least 3",
            pts.len()
        )));
    }
    let logs: Vec<(f64, f64)> = pts.iter().map(|(h, w)| (h.ln(), w.ln())).collect();
    let f = linear_fit(&logs);
    Ok(ExponentFit::Fitted {
        alpha: f.slope,
        residual: f.residual,
        points: pts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoincareReport {
    pub ratio: f64,
    pub holder: f64,
    pub deviation_norm: f64,
    pub mean: Vec<f64>,
    /// `| ||u - mean||_2^2 - (l^2 - |mean|^2) |` when |u| is constant to 1e-8.
    pub identity_residual: Option<f64>,
}

/// `c^alpha_p(u) / ||u - mean(u)||_p`.
pub fn poincare_ratio(u: &SampledControl, p: f64, alpha: f64) -> Result<PoincareReport> {
    let mean = u.mean();
    let centered = DMatrix::from_fn(u.k(), u.n(), |j, i| u.values[(j, i)] - mean[j]);
    let dev = SampledControl {
        values: centered,
        ..u.clone()
    };
    let deviation_norm = dev.lp_norm(p);
    if deviation_norm <= ZERO_RTOL * u.lp_norm(p).max(f64::MIN_POSITIVE) {
        return Err(SrError::Degenerate("control is constant".into()));
    }
    let holder = holder_constant(u, p, alpha)?.value;
    let speeds: Vec<f64> = (0..u.n()).map(|i| u.pointwise_norm(i)).collect();
    let width = u.t2 - u.t1;
    let l = speeds.iter().sum::<f64>() * u.spacing() / width;
    let constant_speed = speeds.iter().all(|s| (s - l).abs() <= 1e-8 * l.max(1.0));
    let identity_residual = constant_speed.then(|| {
        let mean_sq: f64 = mean.iter().map(|m| m * m).sum();
        let lhs = dev.lp_norm(2.0).powi(2) / width;
        (lhs - (l * l - mean_sq)).abs()
    });
    Ok(PoincareReport {
        ratio: holder / deviation_norm,
        holder,
        deviation_norm,
        mean,
        identity_residual,
    })
}

// Mollifier: K(x) = exp(-1/(1-x^2)) / Z on (-1, 1).

const CDF_CELLS: usize = 1 << 13;

struct Bump {
    z: f64,
    cdf: Vec<f64>,
}

fn bump_raw(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - x * x)).exp()
    }
}

const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

fn gauss(a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    GL5.iter().map(|(x, w)| w * f(c + r * x)).sum::<f64>() * r
}

fn bump() -> &'static Bump {
    static TABLE: OnceLock<Bump> = OnceLock::new();
    TABLE.get_or_init(|| {
        let h = 2.0 / CDF_CELLS as f64;
        let mut cdf = Vec::with_capacity(CDF_CELLS + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 0..CDF_CELLS {
            let a = -1.0 + i as f64 * h;
            acc += gauss(a, a + h, bump_raw);
            cdf.push(acc);
        }
        let z = acc;
        cdf.iter_mut().for_each(|c| *c /= z);
        Bump { z, cdf }
    })
}

/// Normalized kernel.
pub fn kernel(x: f64) -> f64 {
    bump_raw(x) / bump().z
}

#[cfg(test)]
fn kernel_prime(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        let d = 1.0 - x * x;
        kernel(x) * (-2.0 * x / (d * d))
    }
}

/// Kernel distribution function, cubic Hermite on a fine table.
pub fn kernel_cdf(x: f64) -> f64 {
    if x <= -1.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let b = bump();
    let h = 2.0 / CDF_CELLS as f64;
    let s = (x + 1.0) / h;
    let i = (s.floor() as usize).min(CDF_CELLS - 1);
    let t = s - i as f64;
    let x0 = -1.0 + i as f64 * h;
    let (y0, y1) = (b.cdf[i], b.cdf[i + 1]);
    let (m0, m1) = (kernel(x0) * h, kernel(x0 + h) * h);
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * m0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * m1
}

/// Mollification of a piecewise-constant control (constant extension outside
/// the interval), represented through its jumps.
struct Mollified<'a> {
    u: &'a SampledControl,
    nodes: Vec<f64>,
    /// Cell index on the right of each jump.
    cells: Vec<usize>,
    jumps: Vec<Vec<f64>>,
    b: f64,
}

impl<'a> Mollified<'a> {
    fn new(u: &'a SampledControl, b: f64) -> Self {
        let mut nodes = Vec::new();
        let mut cells = Vec::new();
        let mut jumps = Vec::new();
        for i in 1..u.n() {
            let j: Vec<f64> = (0..u.k())
                .map(|r| u.values[(r, i)] - u.values[(r, i - 1)])
                .collect();
            if j.iter().any(|v| *v != 0.0) {
                nodes.push(u.t1 + i as f64 * u.spacing());
                cells.push(i);
                jumps.push(j);
            }
        }
        Self {
            u,
            nodes,
            cells,
            jumps,
            b,
        }
    }

    fn active(&self, a: f64, c: f64) -> std::ops::Range<usize> {
        let lo = self.nodes.partition_point(|s| *s <= a - self.b);
        let hi = self.nodes.partition_point(|s| *s < c + self.b);
        lo..hi.max(lo)
    }

    /// w(t) = u_0 + sum_j J_j C((t - s_j)/b).
    fn value(&self, t: f64, out: &mut [f64]) {
        let range = self.active(t, t);
        // jumps left of the window are fully switched on
        let base = if range.start == 0 { 0 } else { self.cells[range.start - 1] };
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.u.values[(r, base)];
        }
        for idx in range {
            let c = kernel_cdf((t - self.nodes[idx]) / self.b);
            for (o, j) in out.iter_mut().zip(&self.jumps[idx]) {
                *o += c * j;
            }
        }
    }

    fn derivative_norm(&self, t: f64) -> f64 {
        let mut acc = vec![0.0; self.u.k()];
        for idx in self.active(t, t) {
            let w = kernel((t - self.nodes[idx]) / self.b) / self.b;
            for (a, j) in acc.iter_mut().zip(&self.jumps[idx]) {
                *a += w * j;
            }
        }
        acc.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Kernel reach in cells, plus a guard cell.
    fn reach(&self) -> usize {
        (self.b / self.u.spacing()).ceil() as usize + 2
    }

    /// Wide kernels over many jumps are evaluated as Toeplitz products by FFT.
    fn use_fft(&self) -> bool {
        self.reach() > 32 && self.nodes.len() > 64
    }

    /// w at `t1 + (c + theta) dt` for every cell c; row r is component r.
    fn values_at_offset(&self, theta: f64) -> Vec<Vec<f64>> {
        let (n, k, dt) = (self.u.n(), self.u.k(), self.u.spacing());
        let ext = self.reach();
        let weights: Vec<f64> = (0..=2 * ext)
            .map(|e| {
                let d = e as f64 - ext as f64;
                kernel_cdf((d + theta) * dt / self.b) - kernel_cdf((d + theta - 1.0) * dt / self.b)
            })
            .collect();
        (0..k)
            .map(|r| {
                let extended: Vec<f64> = (0..n + 2 * ext)
                    .map(|a| {
                        let i = (a as i64 - ext as i64).clamp(0, n as i64 - 1) as usize;
                        self.u.values[(r, i)]
                    })
                    .collect();
                let conv = convolve(&extended, &weights);
                conv[2 * ext..2 * ext + n].to_vec()
            })
            .collect()
    }

    /// w' at `t1 + (c + theta) dt`, Euclidean norm over components.
    fn derivative_at_offset(&self, theta: f64) -> Vec<f64> {
        let (n, k, dt) = (self.u.n(), self.u.k(), self.u.spacing());
        let ext = self.reach();
        let weights: Vec<f64> = (0..=2 * ext)
            .map(|e| {
                let d = e as f64 - ext as f64;
                kernel((d + theta) * dt / self.b) / self.b
            })
            .collect();
        let mut acc = vec![0.0; n];
        for r in 0..k {
            let mut jumps = vec![0.0; n + 2 * ext];
            for (cell, j) in self.cells.iter().zip(&self.jumps) {
                jumps[cell + ext] = j[r];
            }
            let conv = convolve(&jumps, &weights);
            for (a, v) in acc.iter_mut().zip(&conv[2 * ext..2 * ext + n]) {
                *a += v * v;
            }
        }
        acc.iter().map(|a| a.sqrt()).collect()
    }

    /// `||w - u||_2` by composite Gauss quadrature on each cell.
    fn l2_error(&self) -> f64 {
        let dt = self.u.spacing();
        let sub = ((dt / self.b * 8.0).ceil() as usize).max(1);
        let h = dt / sub as f64;
        if self.use_fft() {
            let mut total = 0.0;
            for s in 0..sub {
                for (x, wg) in GL5 {
                    let theta = (s as f64 + 0.5 * (1.0 + x)) / sub as f64;
                    let vals = self.values_at_offset(theta);
                    for (r, row) in vals.iter().enumerate() {
                        for (c, v) in row.iter().enumerate() {
                            total += 0.5 * h * wg * (v - self.u.values[(r, c)]).powi(2);
                        }
                    }
                }
            }
            return total.sqrt();
        }
        let mut w = vec![0.0; self.u.k()];
        let mut total = 0.0;
        for i in 0..self.u.n() {
            let a = self.u.t1 + i as f64 * dt;
            if self.active(a, a + dt).is_empty() {
                continue;
            }
            for s in 0..sub {
                let sa = a + s as f64 * h;
                total += gauss(sa, sa + h, |t| {
                    self.value(t, &mut w);
                    w.iter()
                        .enumerate()
                        .map(|(r, v)| (v - self.u.values[(r, i)]).powi(2))
                        .sum()
                });
            }
        }
        total.sqrt()
    }

    /// Sup of |w'| sampled at spacing min(b, dt)/32 near the jumps.
    fn derivative_sup(&self) -> f64 {
        const PER_CELL: usize = 32;
        if self.use_fft() {
            return (0..PER_CELL)
                .flat_map(|r| self.derivative_at_offset(r as f64 / PER_CELL as f64))
                .fold(0.0, f64::max);
        }
        let step = self.b.min(self.u.spacing()) / PER_CELL as f64;
        let mut windows: Vec<(f64, f64)> = Vec::new();
        for s in &self.nodes {
            let (a, c) = ((s - self.b).max(self.u.t1), (s + self.b).min(self.u.t2));
            match windows.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(c),
                _ => windows.push((a, c)),
            }
        }
        let mut best: f64 = 0.0;
        for (a, c) in windows {
            let m = ((c - a) / step).ceil() as usize;
            for i in 0..=m {
                best = best.max(self.derivative_norm(a + (c - a) * i as f64 / m.max(1) as f64));
            }
        }
        best
    }
}

/// Full linear convolution of two real sequences.
fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    use rustfft::{num_complex::Complex, FftPlanner};
    let len = a.len() + b.len() - 1;
    let size = len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |v: &[f64]| {
        let mut out: Vec<Complex<f64>> = v.iter().map(|x| Complex::new(*x, 0.0)).collect();
        out.resize(size, Complex::new(0.0, 0.0));
        out
    };
    let (mut fa, mut fb) = (pad(a), pad(b));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa[..len].iter().map(|c| c.re / size as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproxRow {
    pub eps: f64,
    pub bandwidth: f64,
    pub l2_error: f64,
    pub scaled_derivative: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RateVerdict {
    Bounded,
    Diverging,
    Undetermined,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproxRateTable {
    pub gamma: f64,
    pub rows: Vec<ApproxRow>,
    pub sup_scaled_derivative: f64,
    /// Log-log slope of `eps^gamma ||w'||_inf` against `eps`.
    pub slope: Option<f64>,
    pub verdict: RateVerdict,
    pub failures: Vec<String>,
}

/// Slope below which the last column is declared to diverge as eps -> 0.
pub const DIVERGENCE_SLOPE: f64 = -0.1;

/// For each eps picks a bandwidth with `||w - u||_2` in `[eps/2, eps]` and
/// records `eps^gamma ||w'||_inf`.
pub fn smooth_approx_rate(u: &SampledControl, gamma: f64, eps_grid: &[f64]) -> Result<ApproxRateTable> {
    if !(gamma > 0.0) {
        return Err(SrError::Range("gamma must be positive".into()));
    }
    let unorm = u.lp_norm(2.0);
    if eps_grid.iter().any(|e| !(*e > 0.0) || *e > unorm * (1.0 + 1e-12)) {
        return Err(SrError::Range("eps values must lie in (0, ||u||_2]".into()));
    }
    let width = u.t2 - u.t1;
    let b_min = u.spacing() / 64.0;
    let results: Vec<std::result::Result<ApproxRow, String>> = eps_grid
        .par_iter()
        .map(|&eps| {
            let err = |b: f64| Mollified::new(u, b).l2_error();
            let (mut lo, mut hi) = (b_min, width);
            let (e_lo, e_hi) = (err(lo), err(hi));
            if e_lo > eps {
                return Err(format!("eps = {}: too rough at grid scale (error {:e})", eps, e_lo));
            }
            if e_hi < 0.5 * eps {
                return Err(format!("eps = {}: unreachable (max error {:e})", eps, e_hi));
            }
            // aim at 3 eps / 4 so that the selected error is a fixed fraction of eps
            let target = 0.75 * eps;
            let mut pick = None;
            for _ in 0..200 {
                let mid = (lo * hi).sqrt();
                let e = err(mid);
                if e >= 0.5 * eps && e <= eps {
                    pick = Some((mid, e));
                    if (e - target).abs() <= 1e-3 * eps {
                        break;
                    }
                }
                if e > target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let (b, e) = pick.ok_or_else(|| format!("eps = {}: bisection stalled", eps))?;
            let dsup = Mollified::new(u, b).derivative_sup();
            Ok(ApproxRow {
                eps,
                bandwidth: b,
                l2_error: e,
                scaled_derivative: eps.powf(gamma) * dsup,
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(msg) => failures.push(msg),
        }
    }
    let sup = rows.iter().map(|r| r.scaled_derivative).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.scaled_derivative > 0.0)
        .map(|r| (r.eps.ln(), r.scaled_derivative.ln()))
        .collect();
    let slope = (pts.len() >= 3).then(|| linear_fit(&pts).slope);
    let verdict = match (slope, rows.iter().all(|r| r.scaled_derivative == 0.0) && !rows.is_empty()) {
        (_, true) => RateVerdict::Bounded,
        (Some(s), _) if s < DIVERGENCE_SLOPE => RateVerdict::Diverging,
        (Some(_), _) => RateVerdict::Bounded,
        (None, _) => RateVerdict::Undetermined,
    };
    Ok(ApproxRateTable {
        gamma,
        rows,
        sup_scaled_derivative: sup,
        slope,
        verdict,
        failures,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModulusTable {
    pub p: f64,
    pub rows: Vec<(f64, f64)>,
    pub fit: Option<ExponentFit>,
    pub fit_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularityReport {
    pub delta: f64,
    pub h_min: f64,
    pub moduli: Vec<ModulusTable>,
    /// `(p, alpha, constant)`.
    pub holder_constants: Vec<(f64, f64, HolderConstant)>,
    /// `(p, alpha, norm)`.
    pub besov_norms: Vec<(f64, f64, f64)>,
    pub poincare: Option<PoincareReport>,
    pub approx_rates: Vec<ApproxRateTable>,
}

/// Collects moduli, fits, Hölder/Besov values and the Poincaré ratio (at p = 2,
/// first alpha) for one control.
pub fn regularity_report(
    u: &SampledControl,
    ps: &[f64],
    alphas: &[f64],
    gammas: &[f64],
    eps_grid: &[f64],
) -> Result<RegularityReport> {
    let shifts = u.dyadic_shifts();
    let mut moduli = Vec::new();
    for &p in ps {
        let rows = shifts
            .iter()
            .map(|&h| Ok((h, u.modulus(p, h)?)))
            .collect::<Result<Vec<_>>>()?;
        let (fit, fit_error) = match fit_exponent(u, p, &shifts) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        moduli.push(ModulusTable {
            p,
            rows,
            fit,
            fit_error,
        });
    }
    let mut holder_constants = Vec::new();
    let mut besov_norms = Vec::new();
    for &p in ps {
        for &a in alphas {
            let c = holder_constant(u, p, a)?;
            besov_norms.push((p, a, u.lp_norm(p) + c.value));
            holder_constants.push((p, a, c));
        }
    }
    let poincare = alphas
        .first()
        .and_then(|&a| poincare_ratio(u, 2.0, a).ok());
    let approx_rates = gammas
        .iter()
        .map(|&g| smooth_approx_rate(u, g, eps_grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(RegularityReport {
        delta: u.delta(),
        h_min: u.spacing(),
        moduli,
        holder_constants,
        besov_norms,
        poincare,
        approx_rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn step(n: usize) -> SampledControl {
        SampledControl::step_function(n, 0.25).unwrap()
    }

    #[test]
    fn construction_checks() {
        assert!(SampledControl::step_function(64, 0.3).is_err());
        assert!(SampledControl::step_function(16, 0.25).is_err());
        assert!(SampledControl::step_function(32, 0.25).is_ok());
        let u = step(64);
        assert!(u.modulus(2.0, 0.3).is_err());
        assert_eq!(u.modulus(2.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn step_modulus_is_two_sqrt_h() {
        let u = step(1024);
        for m in 1..=256 {
            let h = m as f64 / 1024.0;
            let w = u.modulus(2.0, h).unwrap();
            assert!((w - 2.0 * h.sqrt()).abs() < 1e-12, "h = {}", h);
            assert!((u.modulus(2.0, -h).unwrap() - w).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_control() {
        let u = SampledControl::from_fn(2, 128, 0.125, |_| vec![0.3, -1.0]).unwrap();
        assert_eq!(u.modulus(1.0, 0.1).unwrap(), 0.0);
        assert_eq!(holder_constant(&u, 2.0, 0.5).unwrap().value, 0.0);
        let b = besov_norm(&u, 2.0, 0.5).unwrap();
        assert!((b - (0.09f64 + 1.0).sqrt()).abs() < 1e-14);
        assert_eq!(fit_exponent(&u, 2.0, &u.dyadic_shifts()).unwrap(), ExponentFit::ExactInvariance);
        assert!(matches!(poincare_ratio(&u, 2.0, 0.5), Err(SrError::Degenerate(_))));
        let zero = SampledControl::from_fn(1, 64, 0.125, |_| vec![0.0]).unwrap();
        assert_eq!(besov_norm(&zero, 2.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn step_holder_and_besov() {
        let u = step(1024);
        let c = holder_constant(&u, 2.0, 0.5).unwrap();
        assert!((c.value - 2.0).abs() < 0.04);
        let c6 = holder_constant(&u, 2.0, 0.6).unwrap();
        assert!(c6.sup_at_grid_floor);
        assert!((c6.value - 2.0 * (1.0f64 / 1024.0).powf(-0.1)).abs() < 1e-10);
        assert!((besov_norm(&u, 2.0, 0.5).unwrap() - 3.0).abs() < 0.06);
        let fit = fit_exponent(&u, 2.0, &u.dyadic_shifts()).unwrap();
        assert!((fit.alpha() - 0.5).abs() < 0.03);
        let pr = poincare_ratio(&u, 2.0, 0.5).unwrap();
        assert!((pr.ratio - 2.0).abs() < 0.04);
    }

    #[test]
    fn sine_is_lipschitz() {
        let u = SampledControl::from_fn(1, 2048, 0.125, |t| vec![(2.0 * PI * t).sin()]).unwrap();
        let shifts: Vec<f64> = u.dyadic_shifts().into_iter().filter(|h| *h <= 1.0 / 32.0).collect();
        let fit = fit_exponent(&u, 2.0, &shifts).unwrap();
        assert!((fit.alpha() - 1.0).abs() < 0.05, "{:?}", fit);
    }

    #[test]
    fn fit_needs_three_points() {
        let u = step(256);
        let err = fit_exponent(&u, 2.0, &[1.0 / 64.0, 1.0 / 128.0]).unwrap_err();
        assert!(matches!(err, SrError::InsufficientData(_)));
    }

    #[test]
    fn kernel_normalization() {
        let mass: f64 = (0..2000)
            .map(|i| {
                let a = -1.0 + i as f64 * 0.001;
                gauss(a, a + 0.001, kernel)
            })
            .sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert!((kernel_cdf(0.0) - 0.5).abs() < 1e-12);
        for x in [-0.7, -0.2, 0.33, 0.9] {
            assert!((kernel_cdf(x) + kernel_cdf(-x) - 1.0).abs() < 1e-12);
            let fd = (kernel_cdf(x + 1e-6) - kernel_cdf(x - 1e-6)) / 2e-6;
            assert!((fd - kernel(x)).abs() < 1e-6);
        }
        assert!(kernel_prime(0.5) < 0.0);
    }

    #[test]
    fn fft_and_direct_mollifier_agree() {
        let u = SampledControl::from_fn(2, 512, 0.125, |t| {
            vec![(2.0 * PI * t).sin(), (3.0 * t).exp() * 0.1]
        })
        .unwrap();
        let m = Mollified::new(&u, 0.09);
        assert!(m.use_fft());
        let mut w = vec![0.0; 2];
        let vals = m.values_at_offset(0.3);
        let ders = m.derivative_at_offset(0.3);
        for c in [0, 7, 100, 300, 511] {
            let t = (c as f64 + 0.3) / 512.0;
            m.value(t, &mut w);
            assert!((w[0] - vals[0][c]).abs() < 1e-11 && (w[1] - vals[1][c]).abs() < 1e-11);
            assert!((m.derivative_norm(t) - ders[c]).abs() < 1e-9);
        }
        let fast = m.l2_error();
        let direct = {
            let mut total = 0.0;
            for i in 0..u.n() {
                let a = i as f64 / 512.0;
                total += gauss(a, a + 1.0 / 512.0, |t| {
                    m.value(t, &mut w);
                    (w[0] - u.values[(0, i)]).powi(2) + (w[1] - u.values[(1, i)]).powi(2)
                });
            }
            total.sqrt()
        };
        assert!((fast - direct).abs() < 1e-10 * direct.max(1.0));
    }

    #[test]
    fn approx_rate_verdicts() {
        let u = step(4096);
        let eps = [0.4, 0.2, 0.1, 0.05, 0.025];
        let bounded = smooth_approx_rate(&u, 2.0, &eps).unwrap();
        assert!(bounded.failures.is_empty(), "{:?}", bounded.failures);
        assert_eq!(bounded.verdict, RateVerdict::Bounded, "{:?}", bounded);
        for r in &bounded.rows {
            assert!(r.l2_error >= 0.5 * r.eps && r.l2_error <= r.eps);
        }
        let diverging = smooth_approx_rate(&u, 0.5, &eps).unwrap();
        assert_eq!(diverging.verdict, RateVerdict::Diverging);

        let smooth = SampledControl::from_fn(1, 4096, 0.125, |t| vec![(2.0 * PI * t).sin()]).unwrap();
        let t = smooth_approx_rate(&smooth, 1.0, &[0.1, 0.05, 0.025, 0.0125]).unwrap();
        assert_eq!(t.verdict, RateVerdict::Bounded, "{:?}", t);
        assert!(t.sup_scaled_derivative <= 2.0 * PI * 0.1 + 1e-9);
    }
}
