//! Pieces shared by the samplers: priors, surface bases, the
//! reparameterization and per-subject data views.

use nalgebra::{DMatrix, DVector};

use crate::basis::{difference_matrix, SplineBasis, TensorBasis};
use crate::data::SparseFunctionalDataset;
use crate::error::{check_len, FgamError, Result};
use crate::fpca::{FpcaResult, SubjectProjection};
use crate::reparam::ReparamBasis;

/// Prior settings. `(a_s, b_s)` and `(a_x, b_x)` are inverse-gamma shape and
/// scale for the response and measurement-error variances; `(a_l, b_l)`
/// enter the smoothing-parameter prior as `λ^{a_l+1} e^{-b_l λ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    pub a_s: f64,
    pub b_s: f64,
    pub a_x: f64,
    pub b_x: f64,
    pub a_l: f64,
    pub b_l: f64,
    pub sigma_beta2: f64,
    pub sigma_eta2: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            a_s: 0.01,
            b_s: 0.01,
            a_x: 0.01,
            b_x: 0.01,
            a_l: 0.01,
            b_l: 0.01,
            sigma_beta2: 1e6,
            sigma_eta2: 1e6,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.a_s,
            self.b_s,
            self.a_x,
            self.b_x,
            self.a_l,
            self.b_l,
            self.sigma_beta2,
            self.sigma_eta2,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(FgamError::invalid("all hyperparameters must be positive and finite"))
        }
    }
}

/// Tensor-product surface settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceOptions {
    pub kx: usize,
    pub kt: usize,
    pub dx: usize,
    pub dt: usize,
    pub degree: usize,
}

impl Default for SurfaceOptions {
    fn default() -> Self {
        SurfaceOptions {
            kx: 10,
            kt: 10,
            dx: 2,
            dt: 2,
            degree: 3,
        }
    }
}

/// Everything the fitters need that stays fixed during a run.
#[derive(Debug, Clone)]
pub struct FgamModel {
    pub fpca: FpcaResult,
    pub tensor: TensorBasis,
    pub reparam: ReparamBasis,
    pub hyper: Hyperparameters,
    pub projections: Vec<SubjectProjection>,
    pub y: DVector<f64>,
    /// Offset design, `N × p0`.
    pub u: DMatrix<f64>,
    pub n_obs: usize,
    /// Known trajectories on the grid (`N × T`); scores are not updated when set.
    pub fixed: Option<DMatrix<f64>>,
}

impl FgamModel {
    /// Model on the initial decomposition; the x-basis spans the initial
    /// trajectories widened by 10% of their range on each side.
    pub fn new(
        data: &SparseFunctionalDataset,
        fpca: FpcaResult,
        surface: SurfaceOptions,
        hyper: Hyperparameters,
    ) -> Result<Self> {
        check_len("fpca scores", data.len(), fpca.scores.nrows())?;
        let mut trajs = DMatrix::zeros(data.len(), fpca.grid.len());
        for i in 0..data.len() {
            let x = fpca.trajectory(fpca.scores.row(i).transpose().as_slice());
            trajs.set_row(i, &x.transpose());
        }
        Self::build(data, fpca, surface, hyper, &trajs, None)
    }

    /// Model whose trajectories are known on the grid.
    pub fn with_trajectories(
        data: &SparseFunctionalDataset,
        fpca: FpcaResult,
        trajectories: DMatrix<f64>,
        surface: SurfaceOptions,
        hyper: Hyperparameters,
    ) -> Result<Self> {
        check_len("fixed trajectories (rows)", data.len(), trajectories.nrows())?;
        check_len("fixed trajectories (columns)", fpca.grid.len(), trajectories.ncols())?;
        let t = trajectories.clone();
        Self::build(data, fpca, surface, hyper, &t, Some(trajectories))
    }

    fn build(
        data: &SparseFunctionalDataset,
        fpca: FpcaResult,
        surface: SurfaceOptions,
        hyper: Hyperparameters,
        trajs: &DMatrix<f64>,
        fixed: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        hyper.validate()?;
        if trajs.iter().any(|v| !v.is_finite()) {
            return Err(FgamError::Data("trajectories contain non-finite values".into()));
        }
        let (lo, hi) = (trajs.min(), trajs.max());
        let pad = if hi > lo { 0.1 * (hi - lo) } else { 1.0 };
        let bx = SplineBasis::uniform(lo - pad, hi + pad, surface.kx, surface.degree)?;
        let bt = SplineBasis::uniform(fpca.grid.lo(), fpca.grid.hi(), surface.kt, surface.degree)?;
        let dx = difference_matrix(surface.kx, surface.dx)?;
        let dt = difference_matrix(surface.kt, surface.dt)?;
        let reparam = ReparamBasis::from_penalties(&dx, &dt)?;
        let tensor = TensorBasis::new(bx, bt, fpca.grid.clone())?;
        let projections = data.subjects().iter().map(|s| fpca.project(s)).collect();
        Ok(FgamModel {
            tensor,
            reparam,
            hyper,
            projections,
            y: data.responses(),
            u: data.offsets(),
            n_obs: data.total_obs(),
            fixed,
            fpca,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p0(&self) -> usize {
        self.u.ncols()
    }

    pub fn num_components(&self) -> usize {
        self.fpca.num_components()
    }

    /// Coefficients `θ` in tensor layout.
    pub fn theta(&self, beta: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
        &self.reparam.t0 * beta + &self.reparam.tp * delta
    }

    /// Trajectory of subject `i` for scores `xi` (or its fixed trajectory).
    pub fn trajectory(&self, i: usize, xi: &[f64]) -> DVector<f64> {
        match &self.fixed {
            Some(f) => f.row(i).transpose(),
            None => self.fpca.trajectory(xi),
        }
    }

    /// Design row for a trajectory on the grid; returns the clamp count.
    pub fn design_row(&self, x: &[f64], out: &mut [f64]) -> Result<usize> {
        self.tensor.design_row(x, out)
    }

    /// `F(x, t)` for coefficients `theta`.
    pub fn surface(&self, theta: &DVector<f64>, x: f64, t: f64) -> f64 {
        self.tensor.surface(theta.as_slice(), x, t)
    }
}
