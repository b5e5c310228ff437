//! Small fitting helpers shared by the diagnostics.

/// Least-squares line through `(x, y)` points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square of the residuals.
    pub residual: f64,
}

pub fn linear_fit(points: &[(f64, f64)]) -> LineFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let residual = (points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    LineFit {
        slope,
        intercept,
        residual,
    }
}

/// Log-spaced values from `lo` to `hi` inclusive with `per_decade` points per decade.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let m = ((decades * per_decade as f64).round() as usize).max(1);
    (0..=m)
        .map(|i| lo * 10f64.powf(decades * i as f64 / m as f64))
        .collect()
}

/// `a, a/2, a/4, ...` (`count` values).
pub fn dyadic(a: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| a / 2f64.powi(i as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 * i as f64 - 1.0)).collect();
        let f = linear_fit(&pts);
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept + 1.0).abs() < 1e-14);
        assert!(f.residual < 1e-14);
    }

    #[test]
    fn grids() {
        let g = log_grid(1e-3, 1e-1, 7);
        assert_eq!(g.len(), 15);
        assert!((g[0] - 1e-3).abs() < 1e-18 && (g[14] - 1e-1).abs() < 1e-15);
        assert_eq!(dyadic(1.0, 3), vec![1.0, 0.5, 0.25]);
    }
}
