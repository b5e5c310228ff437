//! Small-grid reference solutions computed by routes independent of the
//! primal-dual solver, used to cross-check it.

/// Solves the tridiagonal system `(a I + b T) x = g` where `T` is the
/// Dirichlet second-difference matrix `tridiag(-1, 2, -1)`.
fn tridiag_solve(a: f64, b: f64, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let diag = a + 2.0 * b;
    let off = -b;
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = off / diag;
    d[0] = g[0] / diag;
    for i in 1..n {
        let m = diag - off * c[i - 1];
        c[i] = off / m;
        d[i] = (g[i] - off * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_nodes(phi: &[f64]) -> Vec<f64> {
    let n = phi.len() + 1;
    (0..n)
        .map(|i| {
            let a = if i + 1 < n { phi[i] } else { 0.0 };
            let b = if i > 0 { phi[i - 1] } else { 0.0 };
            a - b
        })
        .collect()
}

/// Primal value `S` for `r = q = 2` by bisection over the ratio of the two
/// Lagrange multipliers of the ball constraints.
pub fn primal_s_l2(u: &[f64], m: f64) -> f64 {
    let n = u.len();
    let h = 1.0 / n as f64;
    let g: Vec<f64> = (1..n).map(|j| u[j - 1] - u[j]).collect();
    if m == 0.0 || l2(&g) == 0.0 {
        return 0.0;
    }
    let rho1 = h.powf(-0.5);
    let rho2 = m * h.powf(0.5);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    // multiplier mix t: (1 - t) on the value ball, t on the derivative ball
    let ratio = |t: f64| {
        let v = tridiag_solve(1.0 - t, t, &g);
        (l2(&v) / l2(&diff_nodes(&v)), v)
    };
    let target = rho1 / rho2;
    let (r0, v0) = ratio(0.0);
    if r0 >= target {
        return -dot(&g, &v0) * rho1 / l2(&v0);
    }
    let (r1, v1) = ratio(1.0);
    if r1 <= target {
        return -dot(&g, &v1) * rho2 / l2(&diff_nodes(&v1));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid).0 < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let v = ratio(0.5 * (lo + hi)).1;
    -dot(&g, &v) * rho1 / l2(&v)
}

/// `||w'||_2 + M ||u - w||_2` on the staggered grid.
pub fn dual_objective_l2(u: &[f64], m: f64, w: &[f64]) -> f64 {
    let n = u.len() as f64;
    let h = 1.0 / n;
    let d: f64 = w.windows(2).map(|p| ((p[1] - p[0]) / h).powi(2)).sum::<f64>() * h;
    let e: f64 = w.iter().zip(u).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * h;
    d.sqrt() + m * e.sqrt()
}

/// Dual value by compass search from several starting points.
pub fn dual_k_l2(u: &[f64], m: f64) -> f64 {
    let n = u.len();
    let mean = u.iter().sum::<f64>() / n as f64;
    let amp = u.iter().fold(0.0f64, |a, v| a.max((v - mean).abs())).max(1e-12);
    let starts: Vec<Vec<f64>> = vec![
        u.to_vec(),
        vec![mean; n],
        vec![0.0; n],
        u.iter().map(|v| 0.5 * (v + mean)).collect(),
    ];
    let f = |w: &[f64]| dual_objective_l2(u, m, w);
    let mut best = f64::INFINITY;
    for mut w in starts {
        let mut fw = f(&w);
        let mut step = amp;
        let mut sweeps = 0;
        while step > 1e-13 * amp {
            let mut improved = false;
            sweeps += 1;
            for i in 0..n {
                for dir in [1.0, -1.0] {
                    let old = w[i];
                    w[i] = old + dir * step;
                    let v = f(&w);
                    if v < fw - 1e-15 * fw.abs() {
                        fw = v;
                        improved = true;
                    } else {
                        w[i] = old;
                    }
                }
                // paired moves keep the difference fixed while sliding a block
                if i + 1 < n {
                    for dir in [1.0, -1.0] {
                        let (a, b) = (w[i], w[i + 1]);
                        w[i] = a + dir * step;
                        w[i + 1] = b + dir * step;
                        let v = f(&w);
                        if v < fw - 1e-15 * fw.abs() {
                            fw = v;
                            improved = true;
                        } else {
                            w[i] = a;
                            w[i + 1] = b;
                        }
                    }
                }
            }
            if !improved || sweeps >= 1000 {
                step *= 0.5;
                sweeps = 0;
            }
        }
        best = best.min(fw);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn step8() -> Vec<f64> {
        (0..8).map(|i| if i < 4 { -1.0 } else { 1.0 }).collect()
    }

    #[test]
    fn step_values() {
        assert!((primal_s_l2(&step8(), 1.0) + 1.0).abs() < 1e-9);
        assert!((dual_k_l2(&step8(), 1.0) - 1.0).abs() < 1e-9);
        assert_eq!(primal_s_l2(&[0.7; 8], 3.0), 0.0);
    }

    #[test]
    fn weak_duality_and_agreement() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let u: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = rng.random_range(0.2..5.0);
            let s = primal_s_l2(&u, m);
            assert!(s <= 0.0);
            for _ in 0..20 {
                let w: Vec<f64> = (0..8).map(|_| rng.random_range(-1.5..1.5)).collect();
                assert!(dual_objective_l2(&u, m, &w) >= -s - 1e-12);
            }
            assert!((dual_k_l2(&u, m) + s).abs() < 1e-6 * (1.0 + s.abs()));
        }
    }
}
