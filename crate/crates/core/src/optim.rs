//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

#[derive(Clone, Copy, Debug)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the gradient 2-norm falls below this value.
    pub grad_tol: f64,
    /// Stop when the relative decrease of f over one step is below this value.
    pub ftol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 12,
            max_iter: 2000,
            grad_tol: 1e-10,
            ftol: 1e-15,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, where `fg(x, grad)` returns f(x) and writes the gradient.
pub fn lbfgs<F>(mut fg: F, x0: Vec<f64>, opts: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut evals = 1;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut dir = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iter = 0;

    while iter < opts.max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if !(gnorm > opts.grad_tol) {
            break;
        }
        // two-loop recursion
        dir.copy_from_slice(&g);
        for (idx, (s, y, rho)) in hist.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha[idx] = a;
            for (d, yi) in dir.iter_mut().zip(y) {
                *d -= a * yi;
            }
        }
        let gamma = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / gnorm.max(1e-300),
        };
        dir.iter_mut().for_each(|d| *d *= gamma);
        for (idx, (s, y, rho)) in hist.iter().enumerate() {
            let b = rho * dot(y, &dir);
            for (d, si) in dir.iter_mut().zip(s) {
                *d += (alpha[idx] - b) * si;
            }
        }
        dir.iter_mut().for_each(|d| *d = -*d);
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            // lost descent; restart from steepest descent
            hist.clear();
            for (d, gi) in dir.iter_mut().zip(&g) {
                *d = -gi / gnorm;
            }
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut f_new;
        let mut accepted = false;
        loop {
            for ((xn, xi), di) in x_new.iter_mut().zip(&x).zip(&dir) {
                *xn = xi + step * di;
            }
            f_new = fg(&x_new, &mut g_new);
            evals += 1;
            if f_new.is_finite() && f_new <= f + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                break;
            }
        }
        if !accepted {
            break;
        }
        iter += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let decrease = f - f_new;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        if decrease.abs() <= opts.ftol * f.abs().max(1e-300) {
            break;
        }
    }
    let grad_norm = dot(&g, &g).sqrt();
    LbfgsResult {
        x,
        f,
        grad_norm,
        iterations: iter,
        evaluations: evals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let res = lbfgs(
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            vec![-1.2, 1.0],
            &LbfgsOptions::default(),
        );
        assert!((res.x[0] - 1.0).abs() < 1e-6 && (res.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ill_conditioned_quadratic() {
        let scales: Vec<f64> = (0..50).map(|i| 10f64.powf(i as f64 / 10.0)).collect();
        let res = lbfgs(
            |x, g| {
                let mut f = 0.0;
                for i in 0..x.len() {
                    g[i] = scales[i] * (x[i] - 1.0);
                    f += 0.5 * scales[i] * (x[i] - 1.0).powi(2);
                }
                f
            },
            vec![0.0; 50],
            &LbfgsOptions {
                grad_tol: 1e-9,
                ..Default::default()
            },
        );
        assert!(res.x.iter().all(|v| (v - 1.0).abs() < 1e-6), "{:?}", res);
    }
}
