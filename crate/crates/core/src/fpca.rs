//! Functional principal components for sparse, noisy trajectories: smoothed
//! mean and covariance, noise variance, eigenpairs and conditional-expectation
//! scores.

use nalgebra::{DMatrix, DVector};

use crate::basis::{SplineBasis, WorkingGrid};
use crate::data::{SparseFunctionalDataset, Subject};
use crate::error::{FgamError, Result};
use crate::smooth::{default_lambda_grid, fit_pspline, fit_surface, PSplineFit};

#[derive(Debug, Clone)]
pub struct FpcaOptions {
    pub grid_size: usize,
    pub pve: f64,
    /// Upper bound on the number of components; `None` means no cap.
    pub max_components: Option<usize>,
    pub mean_basis: usize,
    pub cov_basis: usize,
    /// Grid range; defaults to the pooled observation range.
    pub domain: Option<(f64, f64)>,
    pub lambdas: Vec<f64>,
}

impl Default for FpcaOptions {
    fn default() -> Self {
        FpcaOptions {
            grid_size: 50,
            pve: 0.99,
            max_components: Some(4),
            mean_basis: 15,
            cov_basis: 10,
            domain: None,
            lambdas: default_lambda_grid(),
        }
    }
}

/// Warnings raised while building the initial decomposition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FpcaDiagnostics {
    /// The noise variance estimate was not positive and got floored.
    pub sigma_floored: bool,
    /// Sum of negative eigenvalues relative to the positive ones.
    pub negative_mass: f64,
    /// Ratio of the largest to the smallest retained eigenvalue.
    pub condition: f64,
    pub ill_conditioned: bool,
}

#[derive(Debug, Clone)]
pub struct FpcaResult {
    pub grid: WorkingGrid,
    pub mu: DVector<f64>,
    /// Eigenfunctions on the grid, one column per component.
    pub phi: DMatrix<f64>,
    pub nu: DVector<f64>,
    pub sigma_x2: f64,
    /// Conditional-expectation scores, one row per subject.
    pub scores: DMatrix<f64>,
    pub pve: f64,
    pub covariance: DMatrix<f64>,
    pub diagnostics: FpcaDiagnostics,
}

/// A subject's observation-time view of the decomposition.
#[derive(Debug, Clone)]
pub struct SubjectProjection {
    /// Eigenfunctions at the subject's times (`n_i × M`).
    pub phi: DMatrix<f64>,
    /// Observations minus the mean at the subject's times.
    pub resid: DVector<f64>,
}

impl FpcaResult {
    pub fn num_components(&self) -> usize {
        self.nu.len()
    }

    /// Linear interpolation of the mean and eigenfunctions to `s.times`.
    pub fn project(&self, s: &Subject) -> SubjectProjection {
        let m = self.num_components();
        let mut phi = DMatrix::zeros(s.n_obs(), m);
        let mut resid = DVector::zeros(s.n_obs());
        for (r, (&t, &x)) in s.times.iter().zip(&s.values).enumerate() {
            resid[r] = x - self.grid.interpolate(self.mu.as_slice(), t);
            for c in 0..m {
                phi[(r, c)] = self.grid.interpolate(self.phi.column(c).as_slice(), t);
            }
        }
        SubjectProjection { phi, resid }
    }

    /// Trajectory `μ + Φξ` on the grid.
    pub fn trajectory(&self, xi: &[f64]) -> DVector<f64> {
        let mut x = self.mu.clone();
        for (c, v) in xi.iter().enumerate() {
            x.axpy(*v, &self.phi.column(c), 1.0);
        }
        x
    }

    pub fn blup(&self, s: &Subject) -> Result<DVector<f64>> {
        let p = self.project(s);
        blup_scores(&p.phi, &p.resid, &self.nu, self.sigma_x2)
    }
}

/// Penalized-spline fit of the pooled observations.
pub fn estimate_mean(data: &SparseFunctionalDataset, grid: &WorkingGrid, opts: &FpcaOptions) -> Result<PSplineFit> {
    let mut t = Vec::with_capacity(data.total_obs());
    let mut x = Vec::with_capacity(data.total_obs());
    for s in data.subjects() {
        t.extend_from_slice(&s.times);
        x.extend_from_slice(&s.values);
    }
    let (lo, hi) = t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Err(FgamError::Data("all observation times are identical".into()));
    }
    let basis = SplineBasis::uniform(grid.lo(), grid.hi(), opts.mean_basis, 3)?;
    fit_pspline(&t, &x, basis, 2, &opts.lambdas)
}

/// Smoothed covariance on `grid × grid` from off-diagonal raw products.
pub fn estimate_covariance(
    data: &SparseFunctionalDataset,
    mean: &PSplineFit,
    grid: &WorkingGrid,
    opts: &FpcaOptions,
) -> Result<DMatrix<f64>> {
    if data.subjects().iter().all(|s| s.n_obs() < 2) {
        return Err(FgamError::Data("no subject has two or more observations".into()));
    }
    let mut raw = Vec::new();
    for s in data.subjects() {
        let m = mean.eval(&s.times)?;
        let r: Vec<f64> = s.values.iter().zip(&m).map(|(x, m)| x - m).collect();
        for l in 0..s.n_obs() {
            for k in 0..s.n_obs() {
                raw.push(RawProduct {
                    s: s.times[l],
                    t: s.times[k],
                    value: r[l] * r[k],
                    diagonal: l == k,
                });
            }
        }
    }
    smooth_raw_covariance(&raw, grid, opts)
}

/// One raw covariance product `r(s) r(t)` of a single subject.
#[derive(Debug, Clone, Copy)]
pub struct RawProduct {
    pub s: f64,
    pub t: f64,
    pub value: f64,
    /// Product of an observation with itself.
    pub diagonal: bool,
}

/// Tensor P-spline fit to the off-diagonal raw products, symmetrized and
/// evaluated on the grid. Diagonal products are skipped.
pub fn smooth_raw_covariance(raw: &[RawProduct], grid: &WorkingGrid, opts: &FpcaOptions) -> Result<DMatrix<f64>> {
    let triples = raw.iter().filter(|p| !p.diagonal).map(|p| (p.s, p.t, p.value));
    let basis = SplineBasis::uniform(grid.lo(), grid.hi(), opts.cov_basis, 3)?;
    let fit = fit_surface(triples, basis, 3, &opts.lambdas)?;
    let g = fit.eval_grid(grid.points())?;
    Ok((&g + g.transpose()) * 0.5)
}

/// Window of the middle two thirds (0-based, end exclusive).
pub fn middle_window(t: usize) -> std::ops::Range<usize> {
    let cut = t / 6;
    cut..t - cut
}

/// Mean of `raw − smooth` over the middle two thirds, floored at `floor`.
/// The flag reports whether flooring happened.
pub fn estimate_noise_variance(raw_diag: &[f64], smooth_diag: &[f64], floor: f64) -> Result<(f64, bool)> {
    if raw_diag.len() != smooth_diag.len() || raw_diag.is_empty() {
        return Err(FgamError::invalid("noise variance inputs must be nonempty and equal length"));
    }
    let w = middle_window(raw_diag.len());
    let n = w.len() as f64;
    let v = w.map(|i| raw_diag[i] - smooth_diag[i]).sum::<f64>() / n;
    if v > floor {
        Ok((v, false))
    } else {
        Ok((floor, true))
    }
}

/// Eigen-decomposition of a covariance operator on the grid.
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    pub nu: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub pve: f64,
    pub negative_mass: f64,
}

/// Eigenpairs of the integral operator with kernel `g`, normalized so each
/// eigenfunction has unit quadrature norm.
pub fn eigendecompose(g: &DMatrix<f64>, grid: &WorkingGrid, pve_target: f64, max_m: Option<usize>) -> Result<Eigenpairs> {
    let t = grid.len();
    if g.nrows() != t || g.ncols() != t {
        return Err(FgamError::DimensionMismatch {
            context: "eigendecompose",
            expected: t,
            found: g.nrows(),
        });
    }
    let sw: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let a = DMatrix::from_fn(t, t, |i, j| {
        let v = 0.5 * (g[(i, j)] + g[(j, i)]);
        sw[i] * v * sw[j]
    });
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    // rounding noise around zero counts as zero
    let tol = 1e-12 * eig.eigenvalues.amax();
    let pos: f64 = eig.eigenvalues.iter().filter(|&&v| v > tol).sum();
    let neg: f64 = -eig.eigenvalues.iter().filter(|&&v| v < -tol).sum::<f64>();
    if !(pos > 0.0) {
        return Err(FgamError::numerical("eigendecompose", "covariance has no positive eigenvalues"));
    }
    let n_pos = order.iter().take_while(|&&i| eig.eigenvalues[i] > tol).count();
    let cap = max_m.unwrap_or(n_pos).min(n_pos).max(1);
    let mut m = 0;
    let mut acc = 0.0;
    while m < cap {
        acc += eig.eigenvalues[order[m]];
        m += 1;
        if acc / pos >= pve_target {
            break;
        }
    }
    let mut nu = DVector::zeros(m);
    let mut phi = DMatrix::zeros(t, m);
    for c in 0..m {
        let o = order[c];
        nu[c] = eig.eigenvalues[o];
        let mut col = DVector::from_fn(t, |i, _| eig.eigenvectors[(i, o)] / sw[i]);
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        phi.set_column(c, &col);
    }
    Ok(Eigenpairs {
        nu,
        phi,
        pve: acc / pos,
        negative_mass: neg / pos,
    })
}

/// Posterior mean of the scores given one subject's residuals, in the
/// `M × M` form `S Φᵀ r / σ²` with `S = (ΦᵀΦ/σ² + diag(1/ν))⁻¹`.
pub fn blup_scores(phi_i: &DMatrix<f64>, resid: &DVector<f64>, nu: &DVector<f64>, sigma_x2: f64) -> Result<DVector<f64>> {
    if !(sigma_x2 > 0.0) {
        return Err(FgamError::invalid("noise variance must be positive"));
    }
    if phi_i.nrows() == 0 {
        return Err(FgamError::Data("subject has no observations".into()));
    }
    let (s, _) = score_posterior(phi_i, nu, sigma_x2)?;
    Ok(s * phi_i.tr_mul(resid) / sigma_x2)
}

/// Covariance `S` of the score conditional given the trajectory data, and
/// its Cholesky factor (lower triangular).
pub fn score_posterior(phi_i: &DMatrix<f64>, nu: &DVector<f64>, sigma_x2: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut prec = phi_i.tr_mul(phi_i) / sigma_x2;
    for (c, v) in nu.iter().enumerate() {
        prec[(c, c)] += 1.0 / v;
    }
    let chol = prec
        .cholesky()
        .ok_or_else(|| FgamError::numerical("score posterior", "precision is not positive definite"))?;
    let s = chol.inverse();
    let s = (&s + s.transpose()) * 0.5;
    let l = s
        .clone()
        .cholesky()
        .ok_or_else(|| FgamError::numerical("score posterior", "covariance is not positive definite"))?
        .l();
    Ok((s, l))
}

/// The full initialization pipeline.
pub fn pace_init(data: &SparseFunctionalDataset, opts: &FpcaOptions) -> Result<FpcaResult> {
    let (lo, hi) = opts.domain.unwrap_or_else(|| data.time_range());
    let grid = WorkingGrid::uniform(lo, hi, opts.grid_size)?;
    let mean_fit = estimate_mean(data, &grid, opts)?;
    let mu = DVector::from_vec(mean_fit.eval(grid.points())?);
    let cov = estimate_covariance(data, &mean_fit, &grid, opts)?;

    // raw diagonal: smoothed squared residuals
    let mut t = Vec::with_capacity(data.total_obs());
    let mut r2 = Vec::with_capacity(data.total_obs());
    let mut all = Vec::with_capacity(data.total_obs());
    for s in data.subjects() {
        let m = mean_fit.eval(&s.times)?;
        for ((ti, xi), mi) in s.times.iter().zip(&s.values).zip(&m) {
            t.push(*ti);
            r2.push((xi - mi) * (xi - mi));
            all.push(*xi);
        }
    }
    let basis = SplineBasis::uniform(grid.lo(), grid.hi(), opts.mean_basis, 3)?;
    let raw_diag = fit_pspline(&t, &r2, basis, 2, &opts.lambdas)?.eval(grid.points())?;
    let smooth_diag: Vec<f64> = (0..grid.len()).map(|i| cov[(i, i)]).collect();
    let n = all.len() as f64;
    let mean_all = all.iter().sum::<f64>() / n;
    let pooled_var = all.iter().map(|v| (v - mean_all).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let floor = 1e-4 * pooled_var.max(f64::MIN_POSITIVE);
    let (sigma_x2, sigma_floored) = estimate_noise_variance(&raw_diag, &smooth_diag, floor)?;

    let ep = eigendecompose(&cov, &grid, opts.pve, opts.max_components)?;
    let condition = ep.nu[0] / ep.nu[ep.nu.len() - 1];
    let diagnostics = FpcaDiagnostics {
        sigma_floored,
        negative_mass: ep.negative_mass,
        condition,
        ill_conditioned: sigma_floored || ep.negative_mass > 0.05 || condition > 1e6,
    };

    let mut res = FpcaResult {
        grid,
        mu,
        phi: ep.phi,
        nu: ep.nu,
        sigma_x2,
        scores: DMatrix::zeros(data.len(), 0),
        pve: ep.pve,
        covariance: cov,
        diagnostics,
    };
    let m = res.num_components();
    let mut scores = DMatrix::zeros(data.len(), m);
    for (i, s) in data.subjects().iter().enumerate() {
        let xi = res.blup(s)?;
        scores.set_row(i, &xi.transpose());
    }
    res.scores = scores;
    Ok(res)
}
