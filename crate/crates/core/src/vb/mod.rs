//! Mean-field variational Bayes by coordinate ascent, with Laplace
//! approximations for the score densities.

pub mod bound;
pub mod laguerre;
pub mod laplace;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::Subject;
use crate::error::{check_len, FgamError, Result};
use crate::mcmc::{McmcState, Prediction};
use crate::model::FgamModel;

pub use bound::{lower_bound, BoundTerms};
pub use laguerre::{gauss_laguerre, lambda_moments, LaguerreRule, LambdaMoments};
pub use laplace::{laplace_fit, LaplaceFit, NewtonOptions, ScoreContext, SubjectTerms, TaylorMoments};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbConfig {
    /// Relative change in the lower bound that ends the iterations.
    pub tol: f64,
    pub max_iter: usize,
    pub laguerre_points: usize,
    pub newton: NewtonOptions,
    /// Freezing these gives the purely conjugate coordinate ascent.
    pub update_scores: bool,
    pub update_lambda: bool,
}

impl Default for VbConfig {
    fn default() -> Self {
        VbConfig {
            tol: 1e-6,
            max_iter: 200,
            laguerre_points: 25,
            newton: NewtonOptions::default(),
            update_scores: true,
            update_lambda: true,
        }
    }
}

impl VbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || self.laguerre_points == 0 {
            return Err(FgamError::invalid(
                "VB tolerance, iteration cap and quadrature size must be positive",
            ));
        }
        Ok(())
    }
}

/// Variational parameters.
#[derive(Debug, Clone)]
pub struct VbState {
    pub mu_eta0: DVector<f64>,
    pub sigma_eta0: DMatrix<f64>,
    pub mu_beta: DVector<f64>,
    pub sigma_beta: DMatrix<f64>,
    pub mu_delta: DVector<f64>,
    pub sigma_delta: DMatrix<f64>,
    pub lambda_x: LambdaMoments,
    pub lambda_t: LambdaMoments,
    /// Inverse-gamma shape and scale of `q(σ²)`.
    pub shape_s: f64,
    pub scale_s: f64,
    pub shape_x: f64,
    pub scale_x: f64,
    /// Score modes (`N × M`).
    pub xi0: DMatrix<f64>,
    /// Per-subject score precision and covariance.
    pub precision: Vec<DMatrix<f64>>,
    pub cov: Vec<DMatrix<f64>>,
    /// `E_ξ(b_ξ)` rows (`N × K`).
    pub eb: DMatrix<f64>,
    /// `Σ_i E_ξ(b_ξ b_ξᵀ)`.
    pub ebb_sum: DMatrix<f64>,
    pub bound_history: Vec<f64>,
    pub bound_terms: Option<BoundTerms>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of iterations in which the bound went down.
    pub bound_decreases: usize,
    pub largest_decrease: f64,
    /// Subjects whose Laplace precision was regularized in the last sweep.
    pub regularized: Vec<usize>,
    /// Clamped grid values in the last sweep's design rows.
    pub clamped: usize,
}

impl VbState {
    /// Starting point: identity covariances, zero means, unit scales and
    /// smoothing parameters, scores at the initial decomposition.
    pub fn initial(model: &FgamModel) -> Result<Self> {
        let h = &model.hyper;
        let m = model.num_components();
        let k = model.tensor.dim();
        let n = model.n();
        let unit = LambdaMoments {
            mean: 1.0,
            mean_log: 0.0,
            log_norm: 0.0,
            rate: h.b_l,
        };
        let mut st = VbState {
            mu_eta0: DVector::zeros(model.p0()),
            sigma_eta0: DMatrix::identity(model.p0(), model.p0()),
            mu_beta: DVector::zeros(model.reparam.null_dim()),
            sigma_beta: DMatrix::identity(model.reparam.null_dim(), model.reparam.null_dim()),
            mu_delta: DVector::zeros(model.reparam.pen_dim()),
            sigma_delta: DMatrix::identity(model.reparam.pen_dim(), model.reparam.pen_dim()),
            lambda_x: unit,
            lambda_t: unit,
            shape_s: h.a_s + 0.5 * n as f64,
            scale_s: 1.0,
            shape_x: h.a_x + 0.5 * model.n_obs as f64,
            scale_x: 1.0,
            xi0: model.fpca.scores.clone(),
            precision: vec![DMatrix::identity(m, m); n],
            cov: vec![DMatrix::identity(m, m); n],
            eb: DMatrix::zeros(n, k),
            ebb_sum: DMatrix::zeros(k, k),
            bound_history: Vec::new(),
            bound_terms: None,
            iterations: 0,
            converged: false,
            bound_decreases: 0,
            largest_decrease: 0.0,
            regularized: Vec::new(),
            clamped: 0,
        };
        if let Some(f) = &model.fixed {
            let mut row = vec![0.0; k];
            for i in 0..n {
                st.clamped += model.design_row(f.row(i).transpose().as_slice(), &mut row)?;
                st.eb.row_mut(i).copy_from_slice(&row);
            }
            st.ebb_sum = st.eb.tr_mul(&st.eb);
            for c in st.cov.iter_mut() {
                c.fill(0.0);
            }
        }
        Ok(st)
    }

    pub fn inv_sigma2(&self) -> f64 {
        self.shape_s / self.scale_s
    }

    pub fn inv_sigma_x2(&self) -> f64 {
        self.shape_x / self.scale_x
    }

    pub fn mu_theta(&self, model: &FgamModel) -> DVector<f64> {
        model.theta(&self.mu_beta, &self.mu_delta)
    }

    /// `T_0 Σ_β T_0ᵀ + T_p Σ_δ T_pᵀ`.
    pub fn sigma_theta(&self, model: &FgamModel) -> DMatrix<f64> {
        let r = &model.reparam;
        &r.t0 * &self.sigma_beta * r.t0.transpose() + &r.tp * &self.sigma_delta * r.tp.transpose()
    }

    /// Trajectories at the score modes (`N × T`), or the fixed ones.
    pub fn trajectories(&self, model: &FgamModel) -> DMatrix<f64> {
        if let Some(f) = &model.fixed {
            return f.clone();
        }
        let mut out = DMatrix::zeros(model.n(), model.fpca.grid.len());
        for i in 0..model.n() {
            let x = model.fpca.trajectory(self.xi0.row(i).transpose().as_slice());
            out.set_row(i, &x.transpose());
        }
        out
    }

    /// Fitted linear predictor `Uμ_η + E(b)ᵀ μ_θ`.
    pub fn fitted(&self, model: &FgamModel) -> DVector<f64> {
        &model.u * &self.mu_eta0 + &self.eb * self.mu_theta(model)
    }

    /// Posterior-mean surface and pointwise standard deviation on `xs × ts`.
    pub fn surface_summary(&self, model: &FgamModel, xs: &[f64], ts: &[f64]) -> crate::mcmc::SurfaceSummary {
        let mt = self.mu_theta(model);
        let st = self.sigma_theta(model);
        let mut mean = DMatrix::zeros(xs.len(), ts.len());
        let mut sd = DMatrix::zeros(xs.len(), ts.len());
        for (a, &x) in xs.iter().enumerate() {
            for (b, &t) in ts.iter().enumerate() {
                let s = crate::mcmc::surface_stencil(model, x, t);
                mean[(a, b)] = s.iter().map(|&(k, w)| w * mt[k]).sum();
                let mut v = 0.0;
                for &(k1, w1) in &s {
                    for &(k2, w2) in &s {
                        v += w1 * w2 * st[(k1, k2)];
                    }
                }
                sd[(a, b)] = v.max(0.0).sqrt();
            }
        }
        crate::mcmc::SurfaceSummary { mean, sd }
    }

    /// Warm start for the sampler: variational means, with variances at
    /// `1 / E_q(1/σ²)`.
    pub fn to_mcmc_state(&self, model: &FgamModel) -> McmcState {
        McmcState {
            eta0: self.mu_eta0.clone(),
            beta: self.mu_beta.clone(),
            delta: self.mu_delta.clone(),
            lambda_x: self.lambda_x.mean,
            lambda_t: self.lambda_t.mean,
            sigma2: self.scale_s / self.shape_s,
            sigma_x2: if model.fixed.is_some() {
                model.fpca.sigma_x2
            } else {
                self.scale_x / self.shape_x
            },
            xi: self.xi0.clone(),
        }
    }
}

fn subject_terms(model: &FgamModel, st: &VbState) -> Vec<SubjectTerms> {
    let u_eta = &model.u * &st.mu_eta0;
    model
        .projections
        .iter()
        .enumerate()
        .map(|(i, p)| SubjectTerms {
            gram: p.phi.tr_mul(&p.phi),
            phi_r: p.phi.tr_mul(&p.resid),
            y_tilde: model.y[i] - u_eta[i],
        })
        .collect()
}

/// Laplace step for every subject, then the Taylor moments of the design rows.
pub fn update_scores(model: &FgamModel, st: &mut VbState, opts: &NewtonOptions) -> Result<()> {
    if model.fixed.is_some() {
        return Ok(());
    }
    let mt = st.mu_theta(model);
    let sig = st.sigma_theta(model);
    let ctx = ScoreContext {
        tensor: &model.tensor,
        mu: &model.fpca.mu,
        phi: &model.fpca.phi,
        nu: &model.fpca.nu,
        mu_theta: &mt,
        sigma_theta: &sig,
        inv_sigma2: st.inv_sigma2(),
        inv_sigma_x2: st.inv_sigma_x2(),
    };
    let terms = subject_terms(model, st);
    let results: Vec<Result<(LaplaceFit, TaylorMoments)>> = (0..model.n())
        .into_par_iter()
        .map(|i| {
            let start = st.xi0.row(i).transpose();
            let fit = laplace_fit(&ctx, &terms[i], &start, opts)?;
            let mom = fit.moments(&ctx)?;
            Ok((fit, mom))
        })
        .collect();
    let k = model.tensor.dim();
    let m = model.num_components();
    let n = model.n();
    // Σ_i E(b_i b_iᵀ) = FᵀF with one row block per subject.
    let mut f = DMatrix::zeros(n * (m + 1), k);
    st.regularized.clear();
    st.clamped = 0;
    for (i, r) in results.into_iter().enumerate() {
        let (fit, mom) = r?;
        st.xi0.set_row(i, &fit.mode.transpose());
        if fit.regularized {
            st.regularized.push(i);
        }
        st.precision[i] = fit.precision;
        st.cov[i] = fit.cov;
        st.eb.set_row(i, &mom.eb.transpose());
        let base = i * (m + 1);
        f.set_row(base, &mom.eb.transpose());
        for c in 0..m {
            f.set_row(base + 1 + c, &mom.jl.column(c).transpose());
        }
        st.clamped += mom.clamped;
    }
    st.ebb_sum = f.transpose() * &f;
    Ok(())
}

fn spd_inverse(mut prec: DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    prec = (&prec + prec.transpose()) * 0.5;
    let chol = prec
        .cholesky()
        .ok_or_else(|| FgamError::numerical(context, "precision is not positive definite"))?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

pub fn update_eta0(model: &FgamModel, st: &mut VbState) -> Result<()> {
    let p0 = model.p0();
    if p0 == 0 {
        return Ok(());
    }
    let is2 = st.inv_sigma2();
    let mut prec = model.u.tr_mul(&model.u) * is2;
    for j in 0..p0 {
        prec[(j, j)] += 1.0 / model.hyper.sigma_eta2;
    }
    st.sigma_eta0 = spd_inverse(prec, "q(eta0) update")?;
    let resid = &model.y - &st.eb * st.mu_theta(model);
    st.mu_eta0 = &st.sigma_eta0 * model.u.tr_mul(&resid) * is2;
    Ok(())
}

/// `E(B)ᵀ (y − Uμ_η)`.
fn eb_response(model: &FgamModel, st: &VbState) -> DVector<f64> {
    let y_tilde = &model.y - &model.u * &st.mu_eta0;
    st.eb.tr_mul(&y_tilde)
}

pub fn update_beta(model: &FgamModel, st: &mut VbState) -> Result<()> {
    let r = &model.reparam;
    let is2 = st.inv_sigma2();
    let ebb_t0 = &st.ebb_sum * &r.t0;
    let mut prec = r.t0.tr_mul(&ebb_t0) * is2;
    for j in 0..r.null_dim() {
        prec[(j, j)] += 1.0 / model.hyper.sigma_beta2;
    }
    st.sigma_beta = spd_inverse(prec, "q(beta) update")?;
    let rhs = eb_response(model, st) - &st.ebb_sum * (&r.tp * &st.mu_delta);
    st.mu_beta = &st.sigma_beta * r.t0.tr_mul(&rhs) * is2;
    Ok(())
}

pub fn update_delta(model: &FgamModel, st: &mut VbState) -> Result<()> {
    let r = &model.reparam;
    let is2 = st.inv_sigma2();
    let ebb_tp = &st.ebb_sum * &r.tp;
    let mut prec = r.tp.tr_mul(&ebb_tp) * is2;
    let pd = r.penalty_diag(st.lambda_x.mean, st.lambda_t.mean);
    for j in 0..r.pen_dim() {
        prec[(j, j)] += pd[j];
    }
    st.sigma_delta = spd_inverse(prec, "q(delta) update")?;
    let rhs = eb_response(model, st) - &st.ebb_sum * (&r.t0 * &st.mu_beta);
    st.mu_delta = &st.sigma_delta * r.tp.tr_mul(&rhs) * is2;
    Ok(())
}

/// `b_l + ½ (tr(Ψ Σ_δ) + μ_δᵀ Ψ μ_δ)` for one axis.
pub fn lambda_rate(b_l: f64, psi: &DVector<f64>, mu_delta: &DVector<f64>, sigma_delta: &DMatrix<f64>) -> f64 {
    let q: f64 = psi
        .iter()
        .enumerate()
        .map(|(j, p)| p * (sigma_delta[(j, j)] + mu_delta[j] * mu_delta[j]))
        .sum();
    b_l + 0.5 * q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    T,
}

pub fn update_lambda(model: &FgamModel, st: &mut VbState, rule: &LaguerreRule, axis: Axis) -> Result<()> {
    let r = &model.reparam;
    let b_l = model.hyper.b_l;
    match axis {
        Axis::X => {
            let rate = lambda_rate(b_l, &r.psi_x, &st.mu_delta, &st.sigma_delta);
            st.lambda_x = lambda_moments(rule, &r.psi_x, &r.psi_t, st.lambda_t.mean, rate)?;
        }
        Axis::T => {
            let rate = lambda_rate(b_l, &r.psi_t, &st.mu_delta, &st.sigma_delta);
            st.lambda_t = lambda_moments(rule, &r.psi_t, &r.psi_x, st.lambda_x.mean, rate)?;
        }
    }
    Ok(())
}

/// `Σ_i [‖x̃_i − μ(t_i) − Φ(t_i)ξ_{i,0}‖² + tr(Φ(t_i)ᵀΦ(t_i) Λ_i⁻¹)]`.
pub fn trajectory_rss(model: &FgamModel, st: &VbState) -> f64 {
    model
        .projections
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let e = &p.resid - &p.phi * st.xi0.row(i).transpose();
            let g = p.phi.tr_mul(&p.phi);
            e.norm_squared() + (g * &st.cov[i]).trace()
        })
        .sum()
}

pub fn update_sigma_x2(model: &FgamModel, st: &mut VbState) -> Result<()> {
    if model.fixed.is_some() {
        return Ok(());
    }
    st.scale_x = model.hyper.b_x + 0.5 * trajectory_rss(model, st);
    if !(st.scale_x > 0.0 && st.scale_x.is_finite()) {
        return Err(FgamError::numerical("q(sigma_x^2) update", format!("scale {} is not positive", st.scale_x)));
    }
    Ok(())
}

/// `E_q ‖y − Uη₀ − η₁‖²`.
pub fn expected_rss(model: &FgamModel, st: &VbState) -> f64 {
    let mt = st.mu_theta(model);
    let sig = st.sigma_theta(model);
    let ebm = &st.eb * &mt;
    let resid = &model.y - &model.u * &st.mu_eta0 - &ebm;
    let uu = model.u.tr_mul(&model.u);
    resid.norm_squared()
        + (uu * &st.sigma_eta0).trace()
        + st.ebb_sum.component_mul(&sig).sum()
        + mt.dot(&(&st.ebb_sum * &mt))
        - ebm.norm_squared()
}

pub fn update_sigma2(model: &FgamModel, st: &mut VbState) -> Result<()> {
    st.scale_s = model.hyper.b_s + 0.5 * expected_rss(model, st);
    if !(st.scale_s > 0.0 && st.scale_s.is_finite()) {
        return Err(FgamError::numerical(
            "q(sigma^2) update",
            format!("scale {} is not positive; the expected residual sum of squares is negative", st.scale_s),
        ));
    }
    Ok(())
}

/// Runs the coordinate ascent from `init` (or the default start).
pub fn run_vb(model: &FgamModel, config: &VbConfig, init: Option<VbState>) -> Result<VbState> {
    config.validate()?;
    let rule = gauss_laguerre(config.laguerre_points, model.hyper.a_l + 1.0)?;
    let mut st = match init {
        Some(s) => s,
        None => VbState::initial(model)?,
    };
    for it in 1..=config.max_iter {
        if config.update_scores {
            update_scores(model, &mut st, &config.newton)?;
        }
        update_eta0(model, &mut st)?;
        update_beta(model, &mut st)?;
        update_delta(model, &mut st)?;
        if config.update_lambda {
            update_lambda(model, &mut st, &rule, Axis::X)?;
            update_lambda(model, &mut st, &rule, Axis::T)?;
        }
        update_sigma_x2(model, &mut st)?;
        update_sigma2(model, &mut st)?;
        let terms = lower_bound(model, &st)?;

        let b = terms.total();
        st.iterations = it;
        if let Some(&prev) = st.bound_history.last() {
            let rel = (b - prev) / prev.abs().max(1e-300);
            if rel < 0.0 {
                st.bound_decreases += 1;
                st.largest_decrease = st.largest_decrease.max(-rel);
            }
            st.bound_history.push(b);
            st.bound_terms = Some(terms);
            if rel.abs() < config.tol {
                st.converged = true;
                break;
            }
        } else {
            st.bound_history.push(b);
            st.bound_terms = Some(terms);
        }
    }
    Ok(st)
}

fn predict_row(model: &FgamModel, st: &VbState, x: &[f64], u: &DVector<f64>) -> Result<Prediction> {
    let mut row = vec![0.0; model.tensor.dim()];
    model.design_row(x, &mut row)?;
    let z = DVector::from_column_slice(&row);
    let mean = z.dot(&st.mu_theta(model)) + u.dot(&st.mu_eta0);
    let var = z.dot(&(st.sigma_theta(model) * &z)) + u.dot(&(&st.sigma_eta0 * u));
    let sd = var.max(0.0).sqrt();
    Ok(Prediction {
        mean,
        lower: mean - 1.959_963_984_540_054 * sd,
        upper: mean + 1.959_963_984_540_054 * sd,
    })
}

/// Predictions for new subjects from their score posterior means under the
/// variational measurement-error variance.
pub fn predict_vb(model: &FgamModel, st: &VbState, subjects: &[Subject]) -> Result<Vec<Prediction>> {
    let sx2 = if model.fixed.is_some() {
        model.fpca.sigma_x2
    } else {
        st.scale_x / st.shape_x
    };
    subjects
        .iter()
        .map(|s| {
            if s.n_obs() == 0 {
                return Err(FgamError::Data(format!("subject {} has no observations", s.id)));
            }
            check_len("new subject offsets", model.p0(), s.u.len())?;
            let p = model.fpca.project(s);
            let xi = crate::fpca::blup_scores(&p.phi, &p.resid, &model.fpca.nu, sx2)?;
            let x = model.fpca.trajectory(xi.as_slice());
            predict_row(model, st, x.as_slice(), &DVector::from_column_slice(&s.u))
        })
        .collect()
}

/// Predictions from known trajectories (`n × T`) and offsets (`n × p0`).
pub fn predict_vb_trajectories(
    model: &FgamModel,
    st: &VbState,
    trajectories: &DMatrix<f64>,
    offsets: &DMatrix<f64>,
) -> Result<Vec<Prediction>> {
    check_len("offset rows", trajectories.nrows(), offsets.nrows())?;
    check_len("offset columns", model.p0(), offsets.ncols())?;
    (0..trajectories.nrows())
        .map(|i| {
            let x = trajectories.row(i).transpose();
            predict_row(model, st, x.as_slice(), &offsets.row(i).transpose())
        })
        .collect()
}
