//! Sub-Riemannian structures given by polynomial orthonormal frames.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SrError};
use crate::poly::{DifferentiatedField, PolyField};

/// Central-difference step for the finite-difference bracket.
pub const FD_STEP: f64 = 1e-5;
/// Relative singular-value threshold used by every rank test.
pub const RANK_RTOL: f64 = 1e-8;

/// Samples per axis when bounding fields and checking the frame rank.
const SAMPLES_PER_AXIS: usize = 9;

/// Axis-aligned compact box.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(SrError::Dimension("box bounds must have equal, positive length".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(SrError::InvalidStructure("box needs lo < hi on every axis".into()));
        }
        Ok(Self { lo, hi })
    }

    /// The cube `[-a, a]^n`.
    pub fn cube(n: usize, a: f64) -> Self {
        Self {
            lo: vec![-a; n],
            hi: vec![a; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    /// Tensor grid with `m` points per axis, endpoints included.
    pub fn grid(&self, m: usize) -> Vec<Vec<f64>> {
        let n = self.dim();
        let total = m.pow(n as u32);
        (0..total)
            .map(|mut idx| {
                (0..n)
                    .map(|d| {
                        let i = idx % m;
                        idx /= m;
                        let s = if m == 1 { 0.5 } else { i as f64 / (m - 1) as f64 };
                        self.lo[d] + s * (self.hi[d] - self.lo[d])
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum JacobianMode {
    #[default]
    Analytic,
    FiniteDifference,
}

/// Rank-k distribution on a box in R^n spanned by a declared orthonormal frame.
#[derive(Clone, Debug)]
pub struct SrStructure {
    name: String,
    fields: Vec<DifferentiatedField>,
    declared_step: usize,
    domain: BoxDomain,
    field_bound: f64,
    metric: Option<DMatrix<f64>>,
    jacobian_mode: JacobianMode,
}

fn rank_of(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_RTOL * smax).count()
}

impl SrStructure {
    /// Builds a structure and validates rank, dimensions and the bracket condition
    /// at the box centre. `metric` is an optional Gram matrix on R^n used only by
    /// [`SrStructure::orthonormality_residual`].
    pub fn new(
        name: impl Into<String>,
        frame: Vec<PolyField>,
        declared_step: usize,
        domain: BoxDomain,
        metric: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let k = frame.len();
        if k == 0 {
            return Err(SrError::InvalidStructure("empty frame".into()));
        }
        let n = frame[0].dim();
        if frame.iter().any(|f| f.dim() != n) || domain.dim() != n {
            return Err(SrError::Dimension("frame and box dimensions differ".into()));
        }
        if k >= n {
            return Err(SrError::InvalidStructure(format!(
                "rank {} must be below dimension {}",
                k, n
            )));
        }
        if declared_step < 2 {
            return Err(SrError::InvalidStructure("declared step must be at least 2".into()));
        }
        if let Some(g) = &metric {
            if g.nrows() != n || g.ncols() != n {
                return Err(SrError::Dimension("metric must be n x n".into()));
            }
        }
        let fields: Vec<_> = frame.into_iter().map(DifferentiatedField::new).collect();
        let mut s = Self {
            name: name.into(),
            fields,
            declared_step,
            domain,
            field_bound: 0.0,
            metric,
            jacobian_mode: JacobianMode::Analytic,
        };

        let mut bound: f64 = 0.0;
        for x in s.domain.grid(SAMPLES_PER_AXIS) {
            let frame = s.frame_unchecked(&x);
            if rank_of(&frame) < k {
                return Err(SrError::InvalidStructure(format!(
                    "frame loses rank at {:?}",
                    x
                )));
            }
            for f in &s.fields {
                bound = bound
                    .max(f.eval(&x).norm())
                    .max(f.jacobian_at(&x).norm())
                    .max(f.hessian_norm_at(&x));
            }
        }
        s.field_bound = bound;
        Ok(s)
    }

    pub fn heisenberg() -> Self {
        let f1 = PolyField::parse(&["1", "0", "-x2/2"]).unwrap();
        let f2 = PolyField::parse(&["0", "1", "x1/2"]).unwrap();
        Self::new("heisenberg", vec![f1, f2], 2, BoxDomain::cube(3, 2.0), None).unwrap()
    }

    pub fn martinet() -> Self {
        let f1 = PolyField::parse(&["1", "0", "x2^2/2"]).unwrap();
        let f2 = PolyField::parse(&["0", "1", "0"]).unwrap();
        Self::new("martinet", vec![f1, f2], 3, BoxDomain::cube(3, 2.0), None).unwrap()
    }

    pub fn engel() -> Self {
        let f1 = PolyField::parse(&["1", "0", "0", "0"]).unwrap();
        let f2 = PolyField::parse(&["0", "1", "x1", "x1^2/2"]).unwrap();
        Self::new("engel", vec![f1, f2], 3, BoxDomain::cube(4, 2.0), None).unwrap()
    }

    pub fn catalogue(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "heisenberg" => Ok(Self::heisenberg()),
            "martinet" => Ok(Self::martinet()),
            "engel" => Ok(Self::engel()),
            other => Err(SrError::InvalidStructure(format!(
                "unknown catalogue entry '{}'",
                other
            ))),
        }
    }

    pub fn with_jacobian_mode(mut self, mode: JacobianMode) -> Self {
        self.jacobian_mode = mode;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.fields[0].dim()
    }

    pub fn rank(&self) -> usize {
        self.fields.len()
    }

    pub fn declared_step(&self) -> usize {
        self.declared_step
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    /// Sampled bound `c_f` on the fields and their first two derivatives.
    pub fn field_bound(&self) -> f64 {
        self.field_bound
    }

    pub fn metric(&self) -> Option<&DMatrix<f64>> {
        self.metric.as_ref()
    }

    pub fn frame(&self) -> Vec<&PolyField> {
        self.fields.iter().map(|f| &f.field).collect()
    }

    pub fn is_field_constant(&self, i: usize) -> bool {
        self.fields[i].field.is_constant()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(SrError::Dimension(format!(
                "point has {} coordinates, expected {}",
                x.len(),
                self.dim()
            )));
        }
        if !self.domain.contains(x) {
            return Err(SrError::OutsideDomain { point: x.to_vec() });
        }
        Ok(())
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.rank() {
            return Err(SrError::Range(format!(
                "field index {} out of range 0..{}",
                i,
                self.rank()
            )));
        }
        Ok(())
    }

    fn frame_unchecked(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, self.rank(), |c, j| {
            self.fields[j].field.components()[c].eval(x)
        })
    }

    /// n x k matrix whose column `i` is `f_i(x)`.
    pub fn eval_frame(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        Ok(self.frame_unchecked(x))
    }

    pub fn field_at(&self, i: usize, x: &[f64]) -> DVector<f64> {
        self.fields[i].eval(x)
    }

    pub fn field_jacobian(&self, i: usize, x: &[f64]) -> DMatrix<f64> {
        match self.jacobian_mode {
            JacobianMode::Analytic => self.fields[i].jacobian_at(x),
            JacobianMode::FiniteDifference => self.fd_jacobian(i, x),
        }
    }

    pub fn field_hessian_apply(&self, i: usize, x: &[f64], a: &[f64], b: &[f64]) -> DVector<f64> {
        self.fields[i].hessian_apply(x, a, b)
    }

    fn fd_jacobian(&self, i: usize, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        for d in 0..n {
            xp[d] = x[d] + FD_STEP;
            xm[d] = x[d] - FD_STEP;
            let col = (self.fields[i].eval(&xp) - self.fields[i].eval(&xm)) / (2.0 * FD_STEP);
            jac.set_column(d, &col);
            xp[d] = x[d];
            xm[d] = x[d];
        }
        jac
    }

    /// Writes `sum_j u_j f_j(x)` into `out`.
    #[inline]
    pub(crate) fn drift_into(&self, x: &[f64], u: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (f, &uj) in self.fields.iter().zip(u) {
            if uj == 0.0 {
                continue;
            }
            f.eval_into(x, scratch);
            for (o, s) in out.iter_mut().zip(scratch.iter()) {
                *o += uj * s;
            }
        }
    }

    /// Column-major frame values, `out[j * n + c] = f_j(x)_c`.
    #[inline]
    pub(crate) fn frame_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for (j, f) in self.fields.iter().enumerate() {
            f.eval_into(x, &mut out[j * n..(j + 1) * n]);
        }
    }

    /// Row-major `sum_j u_j Df_j(x)` into `out` (n*n).
    #[inline]
    pub(crate) fn drift_jacobian_into(
        &self,
        x: &[f64],
        u: &[f64],
        scratch: &mut [f64],
        out: &mut [f64],
    ) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (f, &uj) in self.fields.iter().zip(u) {
            if uj == 0.0 {
                continue;
            }
            f.jacobian_into(x, scratch);
            for (o, s) in out.iter_mut().zip(scratch.iter()) {
                *o += uj * s;
            }
        }
    }

    /// Symbolic bracket `[f_i, f_j]`.
    pub fn bracket_field(&self, i: usize, j: usize) -> PolyField {
        self.fields[i].field.bracket(&self.fields[j].field)
    }

    /// `[f_i, f_j](x) = Df_j f_i - Df_i f_j` (zero-based indices).
    pub fn lie_bracket(&self, i: usize, j: usize, x: &[f64]) -> Result<DVector<f64>> {
        self.check_index(i)?;
        self.check_index(j)?;
        self.check_point(x)?;
        Ok(self.bracket_unchecked(i, j, x))
    }

    pub(crate) fn bracket_unchecked(&self, i: usize, j: usize, x: &[f64]) -> DVector<f64> {
        let fi = self.fields[i].eval(x);
        let fj = self.fields[j].eval(x);
        self.field_jacobian(j, x) * fi - self.field_jacobian(i, x) * fj
    }

    /// Bracket from central-difference Jacobians regardless of the configured mode.
    pub fn lie_bracket_fd(&self, i: usize, j: usize, x: &[f64]) -> Result<DVector<f64>> {
        self.check_index(i)?;
        self.check_index(j)?;
        self.check_point(x)?;
        let fi = self.fields[i].eval(x);
        let fj = self.fields[j].eval(x);
        Ok(self.fd_jacobian(j, x) * fi - self.fd_jacobian(i, x) * fj)
    }

    /// `[f_i,[f_j,f_l]] + [f_j,[f_l,f_i]] + [f_l,[f_i,f_j]]` evaluated at `x`, max-norm.
    pub fn jacobi_residual(&self, i: usize, j: usize, l: usize, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let f = |a: usize| &self.fields[a].field;
        let t1 = f(i).bracket(&f(j).bracket(f(l)));
        let t2 = f(j).bracket(&f(l).bracket(f(i)));
        let t3 = f(l).bracket(&f(i).bracket(f(j)));
        Ok((t1.eval(x) + t2.eval(x) + t3.eval(x)).amax())
    }

    /// Smallest bracket length whose iterated brackets span R^n at `x`.
    pub fn step_at(&self, x: &[f64], max_depth: usize) -> Result<usize> {
        self.check_point(x)?;
        if max_depth < self.declared_step {
            return Err(SrError::Precondition(format!(
                "max_depth {} below declared step {}",
                max_depth, self.declared_step
            )));
        }
        let n = self.dim();
        let base: Vec<&PolyField> = self.fields.iter().map(|f| &f.field).collect();
        let mut level: Vec<PolyField> = base.iter().map(|f| (*f).clone()).collect();
        let mut columns: Vec<DVector<f64>> = level.iter().map(|f| f.eval(x)).collect();
        let mut rank = 0;
        for depth in 1..=max_depth {
            if depth > 1 {
                // right-normed brackets [f_a, B] already span each graded piece
                let mut next = Vec::new();
                for f in &base {
                    for b in &level {
                        let br = f.bracket(b);
                        if !br.is_zero() {
                            next.push(br);
                        }
                    }
                }
                columns.extend(next.iter().map(|f| f.eval(x)));
                level = next;
            }
            let m = DMatrix::from_columns(&columns);
            rank = rank_of(&m);
            if rank == n {
                return Ok(depth);
            }
        }
        Err(SrError::HormanderViolation {
            max_depth,
            rank,
            dim: n,
        })
    }

    /// Max of `|g(f_i, f_j) - delta_ij|` over the sample points; zero when the
    /// metric is defined by the frame itself.
    pub fn orthonormality_residual(&self, points: &[Vec<f64>]) -> Result<f64> {
        let Some(g) = &self.metric else {
            for p in points {
                self.check_point(p)?;
            }
            return Ok(0.0);
        };
        let mut worst: f64 = 0.0;
        for p in points {
            let frame = self.eval_frame(p)?;
            let gram = frame.transpose() * g * &frame;
            for i in 0..self.rank() {
                for j in 0..self.rank() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((gram[(i, j)] - target).abs());
                }
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(s: &SrStructure, m: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| {
                (0..s.dim())
                    .map(|d| rng.random_range(s.domain().lo[d]..s.domain().hi[d]))
                    .collect()
            })
            .collect()
    }

    fn all() -> Vec<SrStructure> {
        vec![SrStructure::heisenberg(), SrStructure::martinet(), SrStructure::engel()]
    }

    #[test]
    fn frames_at_reference_points() {
        let h = SrStructure::heisenberg().eval_frame(&[0.0; 3]).unwrap();
        assert_eq!(h, DMatrix::from_column_slice(3, 2, &[1., 0., 0., 0., 1., 0.]));
        let m = SrStructure::martinet().eval_frame(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(m, DMatrix::from_column_slice(3, 2, &[1., 0., 0.5, 0., 1., 0.]));
        assert!(matches!(
            SrStructure::martinet().eval_frame(&[3.0, 0.0, 0.0]),
            Err(SrError::OutsideDomain { .. })
        ));
    }

    #[test]
    fn frame_has_full_rank_on_random_points() {
        for s in all() {
            for p in random_points(&s, 50, 1) {
                assert_eq!(rank_of(&s.eval_frame(&p).unwrap()), 2);
            }
        }
    }

    #[test]
    fn hand_computed_brackets() {
        let h = SrStructure::heisenberg();
        let m = SrStructure::martinet();
        let e = SrStructure::engel();
        for p in random_points(&h, 20, 2) {
            let b = h.lie_bracket(0, 1, &p).unwrap();
            assert_eq!(b, DVector::from_vec(vec![0.0, 0.0, 1.0]));
            let b = m.lie_bracket(0, 1, &p).unwrap();
            assert!((b - DVector::from_vec(vec![0.0, 0.0, -p[1]])).amax() < 1e-15);
        }
        for p in random_points(&e, 20, 3) {
            let b = e.lie_bracket(0, 1, &p).unwrap();
            assert!((b - DVector::from_vec(vec![0.0, 0.0, 1.0, p[0]])).amax() < 1e-15);
        }
    }

    #[test]
    fn antisymmetry_and_fd_agreement() {
        for s in all() {
            let fd = s.clone().with_jacobian_mode(JacobianMode::FiniteDifference);
            for p in random_points(&s, 100, 4) {
                let a = s.lie_bracket(0, 1, &p).unwrap();
                let b = s.lie_bracket(1, 0, &p).unwrap();
                assert!((&a + &b).amax() <= 1e-10);
                assert!(s.lie_bracket(1, 1, &p).unwrap().amax() == 0.0);
                let c = s.lie_bracket_fd(0, 1, &p).unwrap();
                assert!((&a - &c).amax() <= 1e-5);
                let d = fd.lie_bracket(1, 0, &p).unwrap();
                assert!((&c + &d).amax() <= 1e-5);
            }
        }
    }

    #[test]
    fn jacobi_identity() {
        for s in all() {
            for p in random_points(&s, 100, 5) {
                for (i, j, l) in [(0, 0, 1), (0, 1, 1), (1, 0, 1)] {
                    assert!(s.jacobi_residual(i, j, l, &p).unwrap() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn steps() {
        let h = SrStructure::heisenberg();
        let m = SrStructure::martinet();
        let e = SrStructure::engel();
        assert_eq!(h.step_at(&[0.3, -1.0, 0.2], 4).unwrap(), 2);
        assert_eq!(m.step_at(&[0.0, 0.0, 0.0], 4).unwrap(), 3);
        assert_eq!(m.step_at(&[0.0, 1.0, 0.0], 4).unwrap(), 2);
        assert_eq!(e.step_at(&[0.0; 4], 5).unwrap(), 3);
        assert!(matches!(h.step_at(&[0.0; 3], 1), Err(SrError::Precondition(_))));
        for s in all() {
            for p in random_points(&s, 30, 6) {
                let st = s.step_at(&p, 6).unwrap();
                assert!(st >= 2 && st <= s.declared_step());
            }
        }
    }

    #[test]
    fn hormander_failure_is_reported() {
        // integrable distribution: brackets stay inside span(e1, e2)
        let f1 = PolyField::parse(&["1", "0", "0"]).unwrap();
        let f2 = PolyField::parse(&["0", "1", "0"]).unwrap();
        let s = SrStructure::new("flat", vec![f1, f2], 2, BoxDomain::cube(3, 1.0), None).unwrap();
        assert_eq!(
            s.step_at(&[0.0; 3], 4),
            Err(SrError::HormanderViolation { max_depth: 4, rank: 2, dim: 3 })
        );
    }

    #[test]
    fn orthonormality() {
        let h = SrStructure::heisenberg();
        assert_eq!(h.orthonormality_residual(&random_points(&h, 10, 7)).unwrap(), 0.0);
        assert_eq!(h.orthonormality_residual(&[]).unwrap(), 0.0);
        let f1 = PolyField::parse(&["1", "0", "0"]).unwrap();
        let f2 = PolyField::parse(&["1", "1", "x1"]).unwrap();
        let s = SrStructure::new(
            "skew",
            vec![f1, f2],
            2,
            BoxDomain::cube(3, 1.0),
            Some(DMatrix::identity(3, 3)),
        )
        .unwrap();
        assert!(s.orthonormality_residual(&[vec![0.0; 3]]).unwrap() > 0.5);
    }

    #[test]
    fn field_bound_dominates_samples() {
        for s in all() {
            let cf = s.field_bound();
            assert!(cf.is_finite() && cf > 0.0);
            for p in random_points(&s, 50, 8) {
                for i in 0..s.rank() {
                    assert!(s.field_at(i, &p).norm() <= cf + 1e-12);
                    assert!(s.field_jacobian(i, &p).norm() <= cf + 1e-12);
                }
            }
        }
    }

    #[test]
    fn invalid_structures() {
        let f = PolyField::parse(&["1", "0"]).unwrap();
        assert!(SrStructure::new("x", vec![f.clone(), f.clone()], 2, BoxDomain::cube(2, 1.0), None).is_err());
        let g = PolyField::parse(&["1", "0", "0"]).unwrap();
        assert!(SrStructure::new("x", vec![g.clone(), g], 2, BoxDomain::cube(3, 1.0), None).is_err());
        assert!(SrStructure::catalogue("nope").is_err());
        assert_eq!(SrStructure::catalogue("Engel").unwrap().dim(), 4);
    }
}
