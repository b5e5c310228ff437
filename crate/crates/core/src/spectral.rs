//! Fourier coefficients of sampled controls: weighted coefficient sums, l_gamma
//! norms, partial-sum errors and their decay, with doubling-ratio diagnostics.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Result, SrError};
use crate::regularity::{fit_exponent, SampledControl};
use crate::stats::linear_fit;

/// Doubling ratios above `1 + DOUBLING_TOL` are read as divergence.
pub const DOUBLING_TOL: f64 = 0.05;

/// Coefficients `u^m`, `0 <= m <= m_max`, of the control mapped to the unit
/// period; negative indices are the conjugates.
#[derive(Clone, Debug, Serialize)]
pub struct FourierTable {
    /// `coeffs[m][j]` for component j.
    coeffs: Vec<Vec<(f64, f64)>>,
    pub source_n: usize,
    pub m_max: usize,
}

fn spectrum(u: &SampledControl) -> Vec<Vec<Complex64>> {
    let n = u.n();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    (0..u.k())
        .map(|j| {
            let mut buf: Vec<Complex64> = u
                .values()
                .row(j)
                .iter()
                .map(|v| Complex64::new(*v, 0.0))
                .collect();
            fft.process(&mut buf);
            // midpoint rule: sample i sits at (i + 1/2)/N
            buf.iter()
                .enumerate()
                .map(|(m, c)| {
                    let ang = -std::f64::consts::PI * m as f64 / n as f64;
                    c * Complex64::from_polar(1.0 / n as f64, ang)
                })
                .collect()
        })
        .collect()
}

pub fn fourier_coeffs(u: &SampledControl, m_max: usize) -> Result<FourierTable> {
    let n = u.n();
    if m_max + 1 > n / 2 {
        return Err(SrError::Range(format!(
            "m_max = {} aliases on {} samples (need m_max <= {})",
            m_max,
            n,
            (n / 2).saturating_sub(1)
        )));
    }
    let spec = spectrum(u);
    let coeffs = (0..=m_max)
        .map(|m| spec.iter().map(|c| (c[m].re, c[m].im)).collect())
        .collect();
    Ok(FourierTable {
        coeffs,
        source_n: n,
        m_max,
    })
}

impl FourierTable {
    pub fn k(&self) -> usize {
        self.coeffs[0].len()
    }

    pub fn coefficient(&self, j: usize, m: i64) -> Complex64 {
        let (re, im) = self.coeffs[m.unsigned_abs() as usize][j];
        if m < 0 {
            Complex64::new(re, -im)
        } else {
            Complex64::new(re, im)
        }
    }

    /// `|u^m|`, Euclidean over components.
    pub fn magnitude(&self, m: i64) -> f64 {
        self.coeffs[m.unsigned_abs() as usize]
            .iter()
            .map(|(a, b)| a * a + b * b)
            .sum::<f64>()
            .sqrt()
    }

    /// `sum_{|m| <= m_max} |u^m|^2`.
    pub fn energy(&self) -> f64 {
        (0..=self.m_max as i64)
            .map(|m| {
                let a = self.magnitude(m);
                if m == 0 {
                    a * a
                } else {
                    2.0 * a * a
                }
            })
            .sum()
    }

    /// Log-log slope of `|u^m|` over `lo <= m <= hi`, ignoring zero coefficients.
    pub fn decay_slope(&self, lo: usize, hi: usize) -> Option<f64> {
        let pts: Vec<(f64, f64)> = (lo.max(1)..=hi.min(self.m_max))
            .filter_map(|m| {
                let a = self.magnitude(m as i64);
                (a > 1e-13).then(|| ((m as f64).ln(), a.ln()))
            })
            .collect();
        (pts.len() >= 3).then(|| linear_fit(&pts).slope)
    }

    /// `sum_{0 < |m| <= m} w(m) |u^m|^p`.
    fn partial(&self, upto: usize, weight: impl Fn(f64) -> f64, p: f64) -> f64 {
        (1..=upto)
            .map(|m| 2.0 * weight(m as f64) * self.magnitude(m as i64).powf(p))
            .sum()
    }

    /// Fitted `|u^m|^2 ~ C m^{-b}` over the last decade of the table.
    fn last_decade(&self) -> Option<(f64, f64)> {
        let hi = self.m_max;
        let lo = (hi / 10).max(1);
        let pts: Vec<(f64, f64)> = (lo..=hi)
            .filter_map(|m| {
                let a = self.magnitude(m as i64);
                (a > 1e-13).then(|| ((m as f64).ln(), (a * a).ln()))
            })
            .collect();
        if pts.len() < 3 {
            return None;
        }
        let f = linear_fit(&pts);
        Some((f.intercept.exp(), -f.slope))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SeriesVerdict {
    Converging,
    Diverging,
    /// No nonzero coefficients to judge.
    Trivial,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeriesDiagnostic {
    pub parameter: f64,
    pub value: f64,
    /// `S(m_max) / S(m_max / 2)`.
    pub doubling_ratio: f64,
    /// Tail beyond `m_max` from the fitted decay (infinite if not summable).
    pub tail: f64,
    pub verdict: SeriesVerdict,
    /// Set when the verdict was overridden by monotonicity in the parameter.
    pub enforced: bool,
}

fn verdict(ratio: f64, full: f64) -> SeriesVerdict {
    if full == 0.0 {
        SeriesVerdict::Trivial
    } else if ratio <= 1.0 + DOUBLING_TOL {
        SeriesVerdict::Converging
    } else {
        SeriesVerdict::Diverging
    }
}

/// `sum_{0 < |m| <= m_max} |m|^{2 alpha} |u^m|^2`.
pub fn weighted_sum(t: &FourierTable, alpha: f64) -> Result<SeriesDiagnostic> {
    if !(alpha >= 0.0) {
        return Err(SrError::Range(format!("alpha = {} must be >= 0", alpha)));
    }
    let w = |m: f64| m.powf(2.0 * alpha);
    let full = t.partial(t.m_max, w, 2.0);
    let half = t.partial(t.m_max / 2, w, 2.0);
    let ratio = if half > 0.0 { full / half } else { 1.0 };
    let tail = match t.last_decade() {
        Some((c, b)) if b - 2.0 * alpha > 1.0 => {
            let e = b - 2.0 * alpha - 1.0;
            2.0 * c * (t.m_max as f64).powf(-e) / e
        }
        Some(_) => f64::INFINITY,
        None => 0.0,
    };
    Ok(SeriesDiagnostic {
        parameter: alpha,
        value: full,
        doubling_ratio: ratio,
        tail,
        verdict: verdict(ratio, full),
        enforced: false,
    })
}

/// Weighted sums for several alphas, with verdicts made monotone: once some
/// alpha diverges, every larger alpha is reported divergent.
pub fn weighted_sums(t: &FourierTable, alphas: &[f64]) -> Result<Vec<SeriesDiagnostic>> {
    let mut out: Vec<SeriesDiagnostic> = alphas.iter().map(|a| weighted_sum(t, *a)).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|a, b| out[*a].parameter.total_cmp(&out[*b].parameter));
    let mut diverged = false;
    for i in order {
        if diverged && out[i].verdict == SeriesVerdict::Converging {
            out[i].verdict = SeriesVerdict::Diverging;
            out[i].enforced = true;
        }
        diverged |= out[i].verdict == SeriesVerdict::Diverging;
    }
    Ok(out)
}

/// `(sum_{|m| <= m_max} |u^m|^gamma)^{1/gamma}` with the doubling ratio of the
/// gamma-power sums.
pub fn ell_gamma_norm(t: &FourierTable, gamma: f64) -> Result<SeriesDiagnostic> {
    if !(gamma >= 1.0) {
        return Err(SrError::Range(format!("gamma = {} must be >= 1", gamma)));
    }
    let zero = t.magnitude(0).powf(gamma);
    let full = zero + t.partial(t.m_max, |_| 1.0, gamma);
    let half = zero + t.partial(t.m_max / 2, |_| 1.0, gamma);
    let ratio = if half > 0.0 { full / half } else { 1.0 };
    let tail = match t.last_decade() {
        Some((c, b)) if b * gamma / 2.0 > 1.0 => {
            let e = b * gamma / 2.0 - 1.0;
            2.0 * c.powf(gamma / 2.0) * (t.m_max as f64).powf(-e) / e
        }
        Some(_) => f64::INFINITY,
        None => 0.0,
    };
    Ok(SeriesDiagnostic {
        parameter: gamma,
        value: full.powf(1.0 / gamma),
        doubling_ratio: ratio,
        tail,
        verdict: verdict(ratio, full),
        enforced: false,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PartialSumTable {
    /// `(N', ||u - S_N'||_2)`.
    pub rows: Vec<(usize, f64)>,
    /// Log-log slope over rows above the machine floor; `None` if fewer than 3.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// Rows at the machine floor (excluded from the fit).
    pub at_floor: usize,
}

/// `||u - S_N'||_2` from the discarded coefficients of the full discrete spectrum.
pub fn partial_sum_error(u: &SampledControl, n_list: &[usize]) -> Result<PartialSumTable> {
    let n = u.n();
    let m_max = (n / 2).saturating_sub(1);
    if let Some(bad) = n_list.iter().find(|v| **v > m_max) {
        return Err(SrError::Range(format!("N' = {} exceeds m_max = {}", bad, m_max)));
    }
    let spec = spectrum(u);
    let power: Vec<f64> = (0..n)
        .map(|m| spec.iter().map(|c| c[m].norm_sqr()).sum())
        .collect();
    let total: f64 = power.iter().sum();
    let floor = 1e-13 * total.sqrt().max(1e-300);
    let mut rows = Vec::with_capacity(n_list.len());
    for &np in n_list {
        // indices N'+1 ..= N-N'-1 are the frequencies with |m| > N'
        let e: f64 = power[np + 1..n - np].iter().sum();
        rows.push((np, e.sqrt()));
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.1 > floor && r.0 > 0)
        .map(|r| ((r.0 as f64).ln(), r.1.ln()))
        .collect();
    let at_floor = rows.iter().filter(|r| r.1 <= floor).count();
    let (slope, intercept) = if pts.len() >= 3 {
        let f = linear_fit(&pts);
        (Some(f.slope), Some(f.intercept))
    } else {
        (None, None)
    };
    Ok(PartialSumTable {
        rows,
        slope,
        intercept,
        at_floor,
    })
}

/// `||u({t + h}) - u(t)||_p` over the whole period, shift in whole cells.
pub fn periodic_modulus(u: &SampledControl, p: f64, cells: usize) -> f64 {
    let n = u.n();
    let h = 1.0 / n as f64;
    let v = u.values();
    let diffs = (0..n).map(|i| (v.column((i + cells) % n) - v.column(i)).norm());
    if p.is_infinite() {
        diffs.fold(0.0, f64::max)
    } else {
        (diffs.map(|d| d.powf(p)).sum::<f64>() * h).powf(1.0 / p)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BridgeReport {
    pub p: f64,
    /// Exponent of the interval modulus (windowed shifts).
    pub alpha: f64,
    /// Exponent of the periodic modulus.
    pub alpha_periodic: f64,
    /// `min(alpha, 1/p)`.
    pub lower: f64,
    /// `lower - tol <= alpha_periodic <= alpha + tol`.
    pub consistent: bool,
}

/// Compares the periodic and interval Hoelder exponents on dyadic shifts.
pub fn periodic_bridge(u: &SampledControl, p: f64, tol: f64) -> Result<BridgeReport> {
    let shifts = u.dyadic_shifts();
    let alpha = fit_exponent(u, p, &shifts)?.alpha();
    let h = u.spacing() / (u.interval().1 - u.interval().0);
    let pts: Vec<(f64, f64)> = shifts
        .iter()
        .filter_map(|s| {
            let cells = (s / u.spacing()).round() as usize;
            let w = periodic_modulus(u, p, cells);
            (w > 0.0 && cells > 0).then(|| ((cells as f64 * h).ln(), w.ln()))
        })
        .collect();
    let alpha_periodic = if pts.len() >= 3 {
        linear_fit(&pts).slope
    } else if pts.is_empty() {
        f64::INFINITY
    } else {
        return Err(SrError::InsufficientData("too few nonzero periodic moduli".into()));
    };
    let lower = alpha.min(1.0 / p);
    Ok(BridgeReport {
        p,
        alpha,
        alpha_periodic,
        lower,
        consistent: alpha_periodic >= lower - tol && alpha_periodic <= alpha + tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn control(n: usize, f: impl Fn(f64) -> f64) -> SampledControl {
        SampledControl::from_fn(1, n, 0.125, |t| vec![f(t)]).unwrap()
    }

    #[test]
    fn constant_and_cosine() {
        let t = fourier_coeffs(&control(64, |_| 3.0), 31).unwrap();
        assert!((t.coefficient(0, 0).re - 3.0).abs() < 1e-14);
        assert!((1..=31).all(|m| t.magnitude(m) < 1e-12));
        let t = fourier_coeffs(&control(64, |s| (2.0 * PI * s).cos()), 31).unwrap();
        assert!((t.coefficient(0, 1) - Complex64::new(0.5, 0.0)).norm() < 1e-12);
        assert!((t.coefficient(0, -1) - Complex64::new(0.5, 0.0)).norm() < 1e-12);
        assert!((2..=31).all(|m| t.magnitude(m) < 1e-10));
        assert!(fourier_coeffs(&control(64, |_| 1.0), 32).is_err());
    }

    #[test]
    fn square_wave_decay() {
        let u = SampledControl::step_function(4096, 0.125).unwrap();
        let t = fourier_coeffs(&u, 255).unwrap();
        for m in [1i64, 3, 5, 51] {
            let exact = 2.0 / (PI * m as f64);
            assert!((t.magnitude(m) / exact - 1.0).abs() < 1e-3, "m = {}", m);
            assert!(t.magnitude(m + 1) < 1e-12);
        }
        let odd: Vec<(f64, f64)> = (0..64)
            .map(|i| 2 * i + 1)
            .map(|m| ((m as f64).ln(), t.magnitude(m).ln()))
            .collect();
        assert!((linear_fit(&odd).slope + 1.0).abs() < 0.02);
    }

    #[test]
    fn trig_polynomial_partial_sums() {
        let u = control(128, |s| 1.0 + (2.0 * PI * s).sin() + 0.5 * (6.0 * PI * s).cos());
        let tab = partial_sum_error(&u, &[1, 2, 3, 4, 8]).unwrap();
        assert!(tab.rows[0].1 > 0.1);
        assert!(tab.rows[2..].iter().all(|r| r.1 < 1e-13));
        assert_eq!(tab.at_floor, 3);
        assert!(tab.slope.is_none());
    }

    #[test]
    fn monotone_verdicts() {
        let u = SampledControl::step_function(16384, 0.125).unwrap();
        let t = fourier_coeffs(&u, 2048).unwrap();
        let v = weighted_sums(&t, &[0.6, 0.4, 0.0, 1.0]).unwrap();
        assert_eq!(v[0].verdict, SeriesVerdict::Diverging);
        assert_eq!(v[1].verdict, SeriesVerdict::Converging);
        assert_eq!(v[2].verdict, SeriesVerdict::Converging);
        assert_eq!(v[3].verdict, SeriesVerdict::Diverging);
        let c = fourier_coeffs(&control(64, |_| 2.0), 31).unwrap();
        assert_eq!(weighted_sum(&c, 0.3).unwrap().value, 0.0);
        assert_eq!(weighted_sum(&c, 0.3).unwrap().verdict, SeriesVerdict::Trivial);
        assert!((ell_gamma_norm(&c, 1.5).unwrap().value - 2.0).abs() < 1e-12);
    }
}
