//! Functional linear model baseline `y = α + ∫ β(t) X(t) dt + ε` with a
//! P-spline `β` and REML-selected smoothing.

use nalgebra::{DMatrix, DVector};

use crate::basis::{difference_matrix, SplineBasis, WorkingGrid};
use crate::error::{check_len, FgamError, Result};

/// Tiny ridge on the penalty nullspace of `β`.
const NULL_RIDGE: f64 = 1e-8;

/// Log-spaced grid used for the smoothing parameter.
pub fn flm_lambda_grid() -> Vec<f64> {
    (0..49).map(|i| 10f64.powf(-6.0 + 0.25 * i as f64)).collect()
}

#[derive(Debug, Clone)]
pub struct FlmFit {
    pub intercept: f64,
    pub coef: DVector<f64>,
    pub basis: SplineBasis,
    pub grid: WorkingGrid,
    pub lambda: f64,
    pub sigma2: f64,
}

/// `z_ik = Σ_t w_t x_i(t) B_k(t)`.
pub fn flm_design(trajectories: &DMatrix<f64>, grid: &WorkingGrid, basis: &SplineBasis) -> Result<DMatrix<f64>> {
    check_len("FLM trajectory grid", grid.len(), trajectories.ncols())?;
    let b = basis.eval(grid.points())?;
    let w = DMatrix::from_diagonal(&DVector::from_column_slice(grid.weights()));
    Ok(trajectories * w * b)
}

/// Fits the model on trajectories given on `grid` (`N × T`).
pub fn fit_flm(
    trajectories: &DMatrix<f64>,
    y: &DVector<f64>,
    grid: &WorkingGrid,
    kt: usize,
    order: usize,
    lambdas: &[f64],
) -> Result<FlmFit> {
    check_len("FLM responses", trajectories.nrows(), y.len())?;
    let basis = SplineBasis::uniform(grid.lo(), grid.hi(), kt, 3)?;
    let z = flm_design(trajectories, grid, &basis)?;
    let n = y.len();
    let p = kt + 1;
    let mut x = DMatrix::zeros(n, p);
    x.column_mut(0).fill(1.0);
    x.view_mut((0, 1), (n, kt)).copy_from(&z);
    let mut s = DMatrix::zeros(p, p);
    let pen = difference_matrix(kt, order)?.gram;
    s.view_mut((1, 1), (kt, kt)).copy_from(&pen);
    for k in 1..p {
        s[(k, k)] += NULL_RIDGE;
    }
    let xtx = x.tr_mul(&x);
    let xty = x.tr_mul(y);
    let m_p = 1 + order;
    if n <= m_p {
        return Err(FgamError::invalid("too few subjects for the functional linear model"));
    }
    let nu = (n - m_p) as f64;
    let mut best: Option<(f64, DVector<f64>, f64, f64)> = None;
    for &lambda in lambdas {
        let a = &xtx + &s * lambda;
        let Some(ch) = a.cholesky() else { continue };
        let g = ch.solve(&xty);
        let rss = (y - &x * &g).norm_squared() + lambda * g.dot(&(&s * &g));
        let s2 = rss / nu;
        if !(s2 > 0.0) {
            continue;
        }
        let logdet: f64 = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let crit = nu * s2.ln() + logdet - (kt - order) as f64 * lambda.ln();
        if best.as_ref().is_none_or(|b| crit < b.0) {
            best = Some((crit, g, lambda, s2));
        }
    }
    let (_, g, lambda, sigma2) = best.ok_or_else(|| {
        FgamError::numerical("functional linear model", "no smoothing parameter gave a solvable fit")
    })?;
    Ok(FlmFit {
        intercept: g[0],
        coef: g.rows(1, kt).into_owned(),
        basis,
        grid: grid.clone(),
        lambda,
        sigma2,
    })
}

impl FlmFit {
    pub fn beta(&self, t: &[f64]) -> Result<DVector<f64>> {
        Ok(self.basis.eval(t)? * &self.coef)
    }

    pub fn predict(&self, trajectories: &DMatrix<f64>) -> Result<DVector<f64>> {
        let z = flm_design(trajectories, &self.grid, &self.basis)?;
        Ok((z * &self.coef).add_scalar(self.intercept))
    }

    /// The implied surface `α/|T| + β(t) x`.
    pub fn surface(&self, xs: &[f64], ts: &[f64]) -> Result<DMatrix<f64>> {
        let b = self.beta(ts)?;
        let c = self.intercept / (self.grid.hi() - self.grid.lo());
        Ok(DMatrix::from_fn(xs.len(), ts.len(), |a, k| c + b[k] * xs[a]))
    }
}
