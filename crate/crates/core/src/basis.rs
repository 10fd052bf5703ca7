//! B-spline bases, difference penalties, quadrature weights and the tensor
//! product design rows that turn a trajectory into a row of the regression
//! matrix for the surface coefficients.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, FgamError, Result};

/// Highest spline degree supported by the stack-allocated evaluation buffers.
pub const MAX_DEGREE: usize = 7;
const BUF: usize = MAX_DEGREE + 1;

/// A B-spline basis defined by a strictly increasing knot vector.
///
/// The knot vector carries `degree` knots beyond each end of the domain, so
/// the basis is a partition of unity on `[lo, hi]` and every basis function is
/// a shifted copy of the same piecewise polynomial on uniform knots.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    degree: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    /// Equally spaced knots with `num_basis` functions on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, num_basis: usize, degree: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(FgamError::invalid(format!(
                "spline domain must be a finite interval with lo < hi, got [{lo}, {hi}]"
            )));
        }
        if num_basis <= degree {
            return Err(FgamError::invalid(format!(
                "need more basis functions ({num_basis}) than the degree ({degree})"
            )));
        }
        let segments = num_basis - degree;
        let h = (hi - lo) / segments as f64;
        let knots = (0..segments + 2 * degree + 1)
            .map(|i| {
                let k = i as isize - degree as isize;
                // pin the domain ends exactly
                if k == 0 {
                    lo
                } else if k == segments as isize {
                    hi
                } else {
                    lo + k as f64 * h
                }
            })
            .collect();
        Self::from_knots(degree, knots)
    }

    /// Basis on an explicit knot vector. The domain is
    /// `[knots[degree], knots[len - degree - 1]]`.
    pub fn from_knots(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(FgamError::invalid(format!(
                "spline degree {degree} exceeds the supported maximum {MAX_DEGREE}"
            )));
        }
        if knots.len() < 2 * degree + 2 {
            return Err(FgamError::invalid(format!(
                "a degree-{degree} basis needs at least {} knots, got {}",
                2 * degree + 2,
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FgamError::invalid("knots must be finite and strictly increasing"));
        }
        Ok(SplineBasis { degree, knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[self.degree], self.knots[self.num_basis()])
    }

    /// Clamp `x` to the domain; the flag reports whether clamping happened.
    pub fn clamp(&self, x: f64) -> (f64, bool) {
        let (lo, hi) = self.domain();
        if x < lo {
            (lo, true)
        } else if x > hi {
            (hi, true)
        } else {
            (x, false)
        }
    }

    /// Knot span index `i` with `knots[i] <= x < knots[i + 1]`, restricted to
    /// the domain (the right end belongs to the last span).
    fn span(&self, x: f64) -> usize {
        let p = self.degree;
        let n = self.num_basis();
        if x >= self.knots[n] {
            return n - 1;
        }
        if x <= self.knots[p] {
            return p;
        }
        let (mut low, mut high) = (p, n);
        while high - low > 1 {
            let mid = (low + high) / 2;
            if x < self.knots[mid] {
                high = mid;
            } else {
                low = mid;
            }
        }
        low
    }

    /// Values and derivatives up to `order` of the `degree + 1` basis
    /// functions that are nonzero at `x` (which must lie in the domain).
    /// Returns the index of the first nonzero function; `ders[k][r]` is the
    /// k-th derivative of basis function `first + r`.
    pub(crate) fn local_derivs(&self, x: f64, order: usize, ders: &mut [[f64; BUF]; 3]) -> usize {
        debug_assert!(order <= 2);
        let p = self.degree;
        let u = &self.knots;
        let i = self.span(x);

        let mut ndu = [[0.0f64; BUF]; BUF];
        let mut left = [0.0f64; BUF];
        let mut right = [0.0f64; BUF];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[i + 1 - j];
            right[j] = u[i + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        for row in ders.iter_mut() {
            row.fill(0.0);
        }
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let n = order.min(p);
        if n > 0 {
            let mut a = [[0.0f64; BUF]; 2];
            for r in 0..=p {
                let (mut s1, mut s2) = (0usize, 1usize);
                a[0][0] = 1.0;
                for k in 1..=n {
                    let mut d = 0.0;
                    let rk = r as isize - k as isize;
                    let pk = p - k;
                    if rk >= 0 {
                        let rk = rk as usize;
                        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                        d = a[s2][0] * ndu[rk][pk];
                    }
                    let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                    let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                    for j in j1..=j2 {
                        let idx = (rk + j as isize) as usize;
                        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                        d += a[s2][j] * ndu[idx][pk];
                    }
                    if r <= pk {
                        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                        d += a[s2][k] * ndu[r][pk];
                    }
                    ders[k][r] = d;
                    std::mem::swap(&mut s1, &mut s2);
                }
            }
            let mut fac = p as f64;
            for k in 1..=n {
                for v in ders[k].iter_mut().take(p + 1) {
                    *v *= fac;
                }
                fac *= (p - k) as f64;
            }
        }
        i - p
    }

    /// Dense evaluation matrix, one row per point. Points outside the domain
    /// are clamped to the nearest end.
    pub fn eval(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        self.dense(points, 0)
    }

    /// Dense matrix of `order`-th derivatives (order 1 or 2).
    pub fn deriv(&self, points: &[f64], order: usize) -> Result<DMatrix<f64>> {
        if order == 0 || order > 2 {
            return Err(FgamError::invalid(format!("derivative order must be 1 or 2, got {order}")));
        }
        if order > self.degree {
            return Err(FgamError::invalid(format!(
                "derivative order {order} exceeds spline degree {}",
                self.degree
            )));
        }
        self.dense(points, order)
    }

    fn dense(&self, points: &[f64], order: usize) -> Result<DMatrix<f64>> {
        if points.is_empty() {
            return Err(FgamError::invalid("no evaluation points"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(FgamError::invalid("evaluation points must be finite"));
        }
        let mut out = DMatrix::zeros(points.len(), self.num_basis());
        let mut ders = [[0.0; BUF]; 3];
        for (row, &x) in points.iter().enumerate() {
            let (xc, clamped) = self.clamp(x);
            if clamped && order > 0 {
                continue;
            }
            let first = self.local_derivs(xc, order, &mut ders);
            for r in 0..=self.degree {
                out[(row, first + r)] = ders[order][r];
            }
        }
        Ok(out)
    }
}

/// A d-th order difference operator and its gram matrix `DᵀD`.
#[derive(Debug, Clone)]
pub struct DifferencePenalty {
    pub order: usize,
    pub matrix: DMatrix<f64>,
    pub gram: DMatrix<f64>,
}

/// Forward differences of order `d` on `k` coefficients; first-order rows
/// are `[-1, 1]`.
pub fn difference_matrix(k: usize, d: usize) -> Result<DifferencePenalty> {
    if d == 0 || d >= k {
        return Err(FgamError::invalid(format!(
            "difference order must satisfy 1 <= d < K, got d = {d}, K = {k}"
        )));
    }
    let mut coef = vec![0.0f64; d + 1];
    let mut binom = 1.0f64;
    for (j, c) in coef.iter_mut().enumerate() {
        let sign = if (d - j) % 2 == 0 { 1.0 } else { -1.0 };
        *c = sign * binom;
        binom = binom * (d - j) as f64 / (j + 1) as f64;
    }
    let mut matrix = DMatrix::zeros(k - d, k);
    for row in 0..k - d {
        for (j, c) in coef.iter().enumerate() {
            matrix[(row, row + j)] = *c;
        }
    }
    let gram = matrix.transpose() * &matrix;
    Ok(DifferencePenalty {
        order: d,
        matrix,
        gram,
    })
}

/// Trapezoid weights for an increasing grid.
pub fn quadrature_weights(t: &[f64]) -> Result<Vec<f64>> {
    if t.len() < 2 {
        return Err(FgamError::invalid("quadrature needs at least two grid points"));
    }
    if t.iter().any(|v| !v.is_finite()) || t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FgamError::invalid("quadrature grid must be finite and strictly increasing"));
    }
    let n = t.len();
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = 0.5 * (t[i + 1] - t[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    Ok(w)
}

/// Integration grid for the functional covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingGrid {
    t: Vec<f64>,
    weights: Vec<f64>,
}

impl WorkingGrid {
    pub fn new(t: Vec<f64>) -> Result<Self> {
        let weights = quadrature_weights(&t)?;
        Ok(WorkingGrid { t, weights })
    }

    /// `size` equally spaced points including both ends.
    pub fn uniform(lo: f64, hi: f64, size: usize) -> Result<Self> {
        if size < 2 || !(hi > lo) {
            return Err(FgamError::invalid(format!(
                "uniform grid needs size >= 2 and lo < hi, got size {size} on [{lo}, {hi}]"
            )));
        }
        let h = (hi - lo) / (size - 1) as f64;
        let t = (0..size)
            .map(|i| if i == size - 1 { hi } else { lo + i as f64 * h })
            .collect();
        Self::new(t)
    }

    pub fn points(&self) -> &[f64] {
        &self.t
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.t[0]
    }

    pub fn hi(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Piecewise-linear interpolation of grid values `f` at `s` (held
    /// constant outside the grid).
    pub fn interpolate(&self, f: &[f64], s: f64) -> f64 {
        let t = &self.t;
        let n = t.len();
        if s <= t[0] {
            return f[0];
        }
        if s >= t[n - 1] {
            return f[n - 1];
        }
        let j = t.partition_point(|&v| v <= s).saturating_sub(1).min(n - 2);
        let w = (s - t[j]) / (t[j + 1] - t[j]);
        (1.0 - w) * f[j] + w * f[j + 1]
    }
}

/// Row `z` with `z[j * K_t + k] = Σ_t L_t B^X_j(x(t)) B^T_k(t)`.
pub fn tensor_design_row(
    x: &[f64],
    basis_x: &SplineBasis,
    basis_t: &SplineBasis,
    grid: &WorkingGrid,
) -> Result<DVector<f64>> {
    let tb = TensorBasis::new(basis_x.clone(), basis_t.clone(), grid.clone())?;
    let mut z = DVector::zeros(tb.dim());
    tb.design_row(x, z.as_mut_slice())?;
    Ok(z)
}

/// The marginal bases of the surface together with the integration grid,
/// with the t-basis pre-evaluated on the grid.
#[derive(Debug, Clone)]
pub struct TensorBasis {
    basis_x: SplineBasis,
    basis_t: SplineBasis,
    grid: WorkingGrid,
    t_first: Vec<usize>,
    t_vals: Vec<[f64; BUF]>,
}

impl TensorBasis {
    pub fn new(basis_x: SplineBasis, basis_t: SplineBasis, grid: WorkingGrid) -> Result<Self> {
        let mut t_first = Vec::with_capacity(grid.len());
        let mut t_vals = Vec::with_capacity(grid.len());
        let mut ders = [[0.0; BUF]; 3];
        for &t in grid.points() {
            let (tc, _) = basis_t.clamp(t);
            t_first.push(basis_t.local_derivs(tc, 0, &mut ders));
            t_vals.push(ders[0]);
        }
        Ok(TensorBasis {
            basis_x,
            basis_t,
            grid,
            t_first,
            t_vals,
        })
    }

    pub fn basis_x(&self) -> &SplineBasis {
        &self.basis_x
    }

    pub fn basis_t(&self) -> &SplineBasis {
        &self.basis_t
    }

    pub fn grid(&self) -> &WorkingGrid {
        &self.grid
    }

    pub fn kx(&self) -> usize {
        self.basis_x.num_basis()
    }

    pub fn kt(&self) -> usize {
        self.basis_t.num_basis()
    }

    /// Number of surface coefficients, `K_x K_t`.
    pub fn dim(&self) -> usize {
        self.kx() * self.kt()
    }

    /// Writes the design row of trajectory `x` (values on the grid) into
    /// `out` and returns how many grid values had to be clamped into the
    /// x-basis domain.
    pub fn design_row(&self, x: &[f64], out: &mut [f64]) -> Result<usize> {
        check_len("design row trajectory", self.grid.len(), x.len())?;
        check_len("design row output", self.dim(), out.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FgamError::invalid("trajectory contains non-finite values"));
        }
        out.fill(0.0);
        let kt = self.kt();
        let px = self.basis_x.degree();
        let pt = self.basis_t.degree();
        let mut ders = [[0.0; BUF]; 3];
        let mut clamped = 0;
        for (ti, (&xv, &w)) in x.iter().zip(self.grid.weights()).enumerate() {
            let (xc, c) = self.basis_x.clamp(xv);
            clamped += c as usize;
            let jx = self.basis_x.local_derivs(xc, 0, &mut ders);
            let jt = self.t_first[ti];
            let tv = &self.t_vals[ti];
            for a in 0..=px {
                let wa = w * ders[0][a];
                let base = (jx + a) * kt + jt;
                for b in 0..=pt {
                    out[base + b] += wa * tv[b];
                }
            }
        }
        Ok(clamped)
    }

    /// Surface value `Σ_jk B^X_j(x) B^T_k(t) θ_jk`.
    pub fn surface(&self, theta: &[f64], x: f64, t: f64) -> f64 {
        let mut dx = [[0.0; BUF]; 3];
        let mut dt = [[0.0; BUF]; 3];
        let (xc, _) = self.basis_x.clamp(x);
        let (tc, _) = self.basis_t.clamp(t);
        let jx = self.basis_x.local_derivs(xc, 0, &mut dx);
        let jt = self.basis_t.local_derivs(tc, 0, &mut dt);
        let kt = self.kt();
        let mut s = 0.0;
        for a in 0..=self.basis_x.degree() {
            for b in 0..=self.basis_t.degree() {
                s += dx[0][a] * dt[0][b] * theta[(jx + a) * kt + jt + b];
            }
        }
        s
    }

    /// Local basis information along a trajectory, for derivatives of the
    /// design row with respect to the trajectory values.
    pub fn local(&self, x: &[f64]) -> Result<LocalDesign> {
        check_len("local design trajectory", self.grid.len(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FgamError::invalid("trajectory contains non-finite values"));
        }
        let order = self.basis_x.degree().min(2);
        let mut first = Vec::with_capacity(x.len());
        let mut vals = Vec::with_capacity(x.len());
        let mut clamped = 0;
        for &xv in x {
            let mut ders = [[0.0; BUF]; 3];
            let (xc, c) = self.basis_x.clamp(xv);
            clamped += c as usize;
            first.push(self.basis_x.local_derivs(xc, order, &mut ders));
            if c {
                // the clamped row is flat in x
                ders[1].fill(0.0);
                ders[2].fill(0.0);
            }
            vals.push(ders);
        }
        Ok(LocalDesign {
            first,
            vals,
            clamped,
        })
    }

    /// `Σ_t weight_t · (B^X⁽ᵏ⁾(x_t) ⊗ B^T(t_t))`, written into `out`.
    pub fn weighted_rows(&self, local: &LocalDesign, order: usize, weights: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let kt = self.kt();
        let px = self.basis_x.degree();
        let pt = self.basis_t.degree();
        for ti in 0..self.grid.len() {
            let w = weights[ti];
            if w == 0.0 {
                continue;
            }
            let jx = local.first[ti];
            let jt = self.t_first[ti];
            let xv = &local.vals[ti][order];
            let tv = &self.t_vals[ti];
            for a in 0..=px {
                let wa = w * xv[a];
                if wa == 0.0 {
                    continue;
                }
                let base = (jx + a) * kt + jt;
                for b in 0..=pt {
                    out[base + b] += wa * tv[b];
                }
            }
        }
    }

    /// Per grid point contractions `wᵀ(B^X⁽ᵏ⁾(x_t) ⊗ B^T(t_t))`.
    pub fn contract(&self, local: &LocalDesign, order: usize, w: &[f64], out: &mut [f64]) {
        let kt = self.kt();
        let px = self.basis_x.degree();
        let pt = self.basis_t.degree();
        for (ti, o) in out.iter_mut().enumerate().take(self.grid.len()) {
            let jx = local.first[ti];
            let jt = self.t_first[ti];
            let xv = &local.vals[ti][order];
            let tv = &self.t_vals[ti];
            let mut s = 0.0;
            for a in 0..=px {
                let base = (jx + a) * kt + jt;
                let mut inner = 0.0;
                for b in 0..=pt {
                    inner += w[base + b] * tv[b];
                }
                s += xv[a] * inner;
            }
            *o = s;
        }
    }
}

/// Nonzero x-basis values and derivatives at each grid point of a trajectory.
#[derive(Debug, Clone)]
pub struct LocalDesign {
    first: Vec<usize>,
    vals: Vec<[[f64; BUF]; 3]>,
    pub clamped: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_zero_indicator() {
        let b = SplineBasis::from_knots(0, vec![0.0, 1.0]).unwrap();
        assert_eq!(b.num_basis(), 1);
        let m = b.eval(&[0.5]).unwrap();
        assert_eq!(m[(0, 0)], 1.0);
    }

    #[test]
    fn cubic_values_at_interior_knot() {
        let b = SplineBasis::uniform(0.0, 1.0, 10, 3).unwrap();
        let knot = b.knots()[5];
        let m = b.eval(&[knot]).unwrap();
        let nz: Vec<f64> = m.row(0).iter().copied().filter(|v| v.abs() > 1e-14).collect();
        assert_eq!(nz.len(), 3);
        for (v, e) in nz.iter().zip([1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0]) {
            assert!((v - e).abs() < 1e-14, "{v} vs {e}");
        }
    }

    #[test]
    fn count_matches_interior_knots_plus_degree() {
        for degree in 0..=4 {
            let b = SplineBasis::uniform(-2.0, 3.0, degree + 6, degree).unwrap();
            let interior = b.knots().iter().filter(|&&k| k > -2.0 && k < 3.0).count();
            assert_eq!(b.num_basis(), interior + degree + 1);
        }
    }

    #[test]
    fn linear_slopes() {
        let b = SplineBasis::uniform(0.0, 1.0, 5, 1).unwrap();
        let h = 0.25;
        let d = b.deriv(&[0.1, 0.6], 1).unwrap();
        for r in 0..2 {
            let nz: Vec<f64> = d.row(r).iter().copied().filter(|v| v.abs() > 0.0).collect();
            assert_eq!(nz.len(), 2);
            assert!((nz[0] + 1.0 / h).abs() < 1e-12);
            assert!((nz[1] - 1.0 / h).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(SplineBasis::from_knots(1, vec![0.0, 1.0, 1.0, 2.0]).is_err());
        let b = SplineBasis::uniform(0.0, 1.0, 5, 1).unwrap();
        assert!(b.eval(&[]).is_err());
        assert!(b.deriv(&[0.5], 2).is_err());
        assert!(difference_matrix(3, 3).is_err());
        assert!(quadrature_weights(&[1.0]).is_err());
        assert!(quadrature_weights(&[0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn difference_matrices() {
        let d = difference_matrix(4, 2).unwrap();
        let expect = DMatrix::from_row_slice(2, 4, &[1.0, -2.0, 1.0, 0.0, 0.0, 1.0, -2.0, 1.0]);
        assert_eq!(d.matrix, expect);
        let d = difference_matrix(3, 1).unwrap();
        let expect = DMatrix::from_row_slice(2, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0]);
        assert_eq!(d.matrix, expect);
        let d = difference_matrix(10, 2).unwrap();
        let eig = d.gram.clone().symmetric_eigen();
        let max = eig.eigenvalues.max();
        let rank = eig.eigenvalues.iter().filter(|&&e| e > 1e-10 * max).count();
        assert_eq!(rank, 8);
    }

    #[test]
    fn trapezoid_weights() {
        let w = quadrature_weights(&[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(w, vec![0.25, 0.5, 0.25]);
        let g = WorkingGrid::uniform(0.0, 10.0, 37).unwrap();
        assert!((g.weights().iter().sum::<f64>() - 10.0).abs() < 1e-12);
        let g = WorkingGrid::uniform(0.0, 1.0, 50).unwrap();
        assert!((g.integrate(g.points()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn design_row_sums_to_domain_length() {
        let grid = WorkingGrid::uniform(0.0, 10.0, 50).unwrap();
        let bx = SplineBasis::uniform(-3.0, 3.0, 10, 3).unwrap();
        let bt = SplineBasis::uniform(0.0, 10.0, 10, 3).unwrap();
        let x: Vec<f64> = grid.points().iter().map(|t| 2.0 * (t / 3.0).sin()).collect();
        let z = tensor_design_row(&x, &bx, &bt, &grid).unwrap();
        assert!((z.sum() - 10.0).abs() < 1e-12);
        let c = vec![0.7; 50];
        let z = tensor_design_row(&c, &bx, &bt, &grid).unwrap();
        let ones = DVector::from_element(100, 1.0);
        assert!((z.dot(&ones) - 10.0).abs() < 1e-12);
        let bad = vec![f64::NAN; 50];
        assert!(tensor_design_row(&bad, &bx, &bt, &grid).is_err());
    }
}
