//! Gibbs sampler with Metropolis-Hastings score updates and slice-sampled
//! smoothing parameters.

pub mod slice;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::data::Subject;
use crate::error::{check_len, FgamError, Result};
use crate::fpca::SubjectProjection;
use crate::model::FgamModel;
use crate::rng::substream;

pub use slice::{slice_step, LambdaTarget};

/// Stream index reserved for the sequential (non-subject) updates.
const GLOBAL_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig {
    /// Total iterations, burn-in included.
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub slice_width: f64,
    pub max_doublings: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iters: 11_000,
            burnin: 1_000,
            thin: 1,
            seed: 1,
            slice_width: 2.0,
            max_doublings: 60,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters <= self.burnin {
            return Err(FgamError::invalid(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iters, self.burnin
            )));
        }
        if self.thin == 0 {
            return Err(FgamError::invalid("thinning interval must be at least 1"));
        }
        if !(self.slice_width > 0.0) {
            return Err(FgamError::invalid("slice width must be positive"));
        }
        Ok(())
    }

    /// Number of stored draws.
    pub fn num_draws(&self) -> usize {
        (self.iters - self.burnin) / self.thin
    }
}

/// One point of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcState {
    pub eta0: DVector<f64>,
    pub beta: DVector<f64>,
    pub delta: DVector<f64>,
    pub lambda_x: f64,
    pub lambda_t: f64,
    pub sigma2: f64,
    pub sigma_x2: f64,
    /// Scores, `N × M`.
    pub xi: DMatrix<f64>,
}

impl McmcState {
    /// Cold start: zero coefficients, unit smoothing parameters, the
    /// response variance, and the initial decomposition's scores.
    pub fn initial(model: &FgamModel) -> Self {
        let n = model.n() as f64;
        let mean = model.y.mean();
        let var = model.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        McmcState {
            eta0: DVector::zeros(model.p0()),
            beta: DVector::zeros(model.reparam.null_dim()),
            delta: DVector::zeros(model.reparam.pen_dim()),
            lambda_x: 1.0,
            lambda_t: 1.0,
            sigma2: if var > 0.0 { var } else { 1.0 },
            sigma_x2: model.fpca.sigma_x2,
            xi: model.fpca.scores.clone(),
        }
    }

    fn check(&self, model: &FgamModel) -> Result<()> {
        check_len("initial eta0", model.p0(), self.eta0.len())?;
        check_len("initial beta", model.reparam.null_dim(), self.beta.len())?;
        check_len("initial delta", model.reparam.pen_dim(), self.delta.len())?;
        check_len("initial score rows", model.n(), self.xi.nrows())?;
        check_len("initial score columns", model.num_components(), self.xi.ncols())?;
        let positive = [self.lambda_x, self.lambda_t, self.sigma2, self.sigma_x2];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(FgamError::invalid("initial variances and smoothing parameters must be positive"));
        }
        Ok(())
    }
}

/// Stored draws after burn-in and thinning.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    /// Iteration (1-based) each draw was taken at.
    pub iterations: Vec<usize>,
    pub eta0: Vec<DVector<f64>>,
    pub beta: Vec<DVector<f64>>,
    pub delta: Vec<DVector<f64>>,
    pub lambda_x: Vec<f64>,
    pub lambda_t: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub sigma_x2: Vec<f64>,
    /// Score draws; empty when the trajectories were held fixed.
    pub xi: Vec<DMatrix<f64>>,
    /// Linear predictor `Uη0 + Zθ` per draw.
    pub fitted: Vec<DVector<f64>>,
    /// Average over draws of the conditional mean of `θ` given the rest.
    pub theta_rb: DVector<f64>,
    /// Score acceptance rate per subject, over all iterations.
    pub acceptance: Vec<f64>,
    /// Design-row grid values clamped into the x-basis domain, summed over iterations.
    pub clamped: usize,
    pub last: McmcState,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn theta(&self, model: &FgamModel, d: usize) -> DVector<f64> {
        model.theta(&self.beta[d], &self.delta[d])
    }

    /// Plain average of the `θ` draws.
    pub fn theta_mean(&self, model: &FgamModel) -> DVector<f64> {
        let mut acc = DVector::zeros(model.tensor.dim());
        for d in 0..self.len() {
            acc += self.theta(model, d);
        }
        acc / self.len() as f64
    }

    /// Posterior mean of the scores (`N × M`).
    pub fn xi_mean(&self) -> Option<DMatrix<f64>> {
        let first = self.xi.first()?;
        let mut acc = DMatrix::zeros(first.nrows(), first.ncols());
        for x in &self.xi {
            acc += x;
        }
        Some(acc / self.xi.len() as f64)
    }

    /// Posterior mean trajectories on the grid (`N × T`).
    pub fn trajectory_mean(&self, model: &FgamModel) -> DMatrix<f64> {
        let n = model.n();
        let t = model.fpca.grid.len();
        let mut out = DMatrix::zeros(n, t);
        match (&model.fixed, self.xi_mean()) {
            (Some(f), _) => out.copy_from(f),
            (None, Some(xi)) => {
                for i in 0..n {
                    let x = model.fpca.trajectory(xi.row(i).transpose().as_slice());
                    out.set_row(i, &x.transpose());
                }
            }
            (None, None) => {}
        }
        out
    }

    pub fn mean_acceptance(&self) -> f64 {
        if self.acceptance.is_empty() {
            return f64::NAN;
        }
        self.acceptance.iter().sum::<f64>() / self.acceptance.len() as f64
    }

    /// Surface mean (from `theta_rb`) and pointwise posterior standard
    /// deviation on `xs × ts`; rows index `x`.
    pub fn surface_summary(&self, model: &FgamModel, xs: &[f64], ts: &[f64]) -> SurfaceSummary {
        let stencils: Vec<Vec<(usize, f64)>> = xs
            .iter()
            .flat_map(|&x| ts.iter().map(move |&t| (x, t)))
            .map(|(x, t)| surface_stencil(model, x, t))
            .collect();
        let mut s1 = vec![0.0; stencils.len()];
        let mut s2 = vec![0.0; stencils.len()];
        for d in 0..self.len() {
            let theta = self.theta(model, d);
            for (p, st) in stencils.iter().enumerate() {
                let v: f64 = st.iter().map(|&(k, w)| w * theta[k]).sum();
                s1[p] += v;
                s2[p] += v * v;
            }
        }
        let nd = self.len() as f64;
        let mean = DMatrix::from_fn(xs.len(), ts.len(), |a, b| {
            let st = &stencils[a * ts.len() + b];
            st.iter().map(|&(k, w)| w * self.theta_rb[k]).sum()
        });
        let sd = DMatrix::from_fn(xs.len(), ts.len(), |a, b| {
            let p = a * ts.len() + b;
            let m = s1[p] / nd;
            let v = if nd > 1.0 { (s2[p] - nd * m * m) / (nd - 1.0) } else { 0.0 };
            v.max(0.0).sqrt()
        });
        SurfaceSummary { mean, sd }
    }
}

#[derive(Debug, Clone)]
pub struct SurfaceSummary {
    pub mean: DMatrix<f64>,
    pub sd: DMatrix<f64>,
}

/// Nonzero tensor-basis weights at `(x, t)`.
pub(crate) fn surface_stencil(model: &FgamModel, x: f64, t: f64) -> Vec<(usize, f64)> {
    let bx = model.tensor.basis_x();
    let bt = model.tensor.basis_t();
    let mut dx = [[0.0; crate::basis::MAX_DEGREE + 1]; 3];
    let mut dt = [[0.0; crate::basis::MAX_DEGREE + 1]; 3];
    let jx = bx.local_derivs(bx.clamp(x).0, 0, &mut dx);
    let jt = bt.local_derivs(bt.clamp(t).0, 0, &mut dt);
    let kt = model.tensor.kt();
    let mut out = Vec::with_capacity((bx.degree() + 1) * (bt.degree() + 1));
    for a in 0..=bx.degree() {
        for b in 0..=bt.degree() {
            out.push(((jx + a) * kt + jt + b, dx[0][a] * dt[0][b]));
        }
    }
    out
}

/// Log acceptance ratio of the independence proposal; the score prior and
/// trajectory likelihood cancel against the proposal density, leaving the
/// response likelihood.
pub fn log_acceptance(resid_new: f64, resid_old: f64, sigma2: f64) -> f64 {
    -(resid_new * resid_new - resid_old * resid_old) / (2.0 * sigma2)
}

/// Draws from `N(Q⁻¹ b, Q⁻¹)`; returns the draw and the mean.
pub fn draw_gaussian<R: Rng + ?Sized>(
    precision: DMatrix<f64>,
    rhs: &DVector<f64>,
    rng: &mut R,
    context: &str,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let chol = precision
        .cholesky()
        .ok_or_else(|| FgamError::numerical(context, "conditional precision is not positive definite"))?;
    let mean = chol.solve(rhs);
    let z = DVector::from_fn(rhs.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = chol
        .l_dirty()
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| FgamError::numerical(context, "singular Cholesky factor"))?;
    Ok((&mean + noise, mean))
}

/// Inverse-gamma draw with the given shape and scale.
pub fn draw_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R, context: &str) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / scale)
        .map_err(|e| FgamError::numerical(context, format!("invalid inverse-gamma parameters: {e}")))?;
    let v = 1.0 / g.sample(rng);
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(FgamError::numerical(context, format!("variance draw {v} is not positive and finite")))
    }
}

/// Score proposal `N(m, S)` from one subject's trajectory data alone.
#[derive(Debug, Clone)]
pub struct ScoreProposal {
    pub mean: DVector<f64>,
    /// Lower Cholesky factor of the precision `S⁻¹`.
    chol: DMatrix<f64>,
}

impl ScoreProposal {
    pub fn new(gram: &DMatrix<f64>, phi_r: &DVector<f64>, nu: &DVector<f64>, sigma_x2: f64) -> Result<Self> {
        let mut prec = gram / sigma_x2;
        for (c, v) in nu.iter().enumerate() {
            prec[(c, c)] += 1.0 / v;
        }
        let chol = prec
            .cholesky()
            .ok_or_else(|| FgamError::numerical("score proposal", "precision is not positive definite"))?;
        let mean = chol.solve(&(phi_r / sigma_x2));
        Ok(ScoreProposal { mean, chol: chol.unpack() })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = self
            .chol
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + noise
    }
}

/// Per-subject quantities reused every iteration.
struct SubjectCache {
    gram: DMatrix<f64>,
    phi_r: DVector<f64>,
}

fn subject_cache(p: &SubjectProjection) -> SubjectCache {
    SubjectCache {
        gram: p.phi.tr_mul(&p.phi),
        phi_r: p.phi.tr_mul(&p.resid),
    }
}

struct ScoreMove {
    xi: Option<DVector<f64>>,
    row: Vec<f64>,
    clamped: usize,
}

/// Runs the chain from `init` (or a cold start).
pub fn run_mcmc(model: &FgamModel, config: &McmcConfig, init: Option<McmcState>) -> Result<PosteriorSamples> {
    config.validate()?;
    let mut state = init.unwrap_or_else(|| McmcState::initial(model));
    state.check(model)?;

    let n = model.n();
    let k = model.tensor.dim();
    let nu = &model.fpca.nu;
    let rp = &model.reparam;
    let h = &model.hyper;
    let caches: Vec<SubjectCache> = model.projections.iter().map(subject_cache).collect();

    // design matrix for the current trajectories
    let mut z = DMatrix::zeros(n, k);
    let mut row = vec![0.0; k];
    let mut clamped_rows = vec![0usize; n];
    for i in 0..n {
        let x = model.trajectory(i, state.xi.row(i).transpose().as_slice());
        clamped_rows[i] = model.design_row(x.as_slice(), &mut row)?;
        z.row_mut(i).copy_from_slice(&row);
    }

    let draws = config.num_draws();
    let mut out = PosteriorSamples {
        iterations: Vec::with_capacity(draws),
        eta0: Vec::with_capacity(draws),
        beta: Vec::with_capacity(draws),
        delta: Vec::with_capacity(draws),
        lambda_x: Vec::with_capacity(draws),
        lambda_t: Vec::with_capacity(draws),
        sigma2: Vec::with_capacity(draws),
        sigma_x2: Vec::with_capacity(draws),
        xi: Vec::new(),
        fitted: Vec::with_capacity(draws),
        theta_rb: DVector::zeros(k),
        acceptance: vec![0.0; n],
        clamped: 0,
        last: state.clone(),
    };
    let mut accepted = vec![0usize; n];
    let sample_scores = model.fixed.is_none();

    for it in 1..=config.iters {
        let fail = |e: FgamError| match e {
            FgamError::Numerical { context, detail } => FgamError::Numerical {
                context: format!("{context} (iteration {it})"),
                detail,
            },
            other => other,
        };

        let u_eta = &model.u * &state.eta0;
        if sample_scores {
            let theta = model.theta(&state.beta, &state.delta);
            let moves: Vec<Result<ScoreMove>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut rng = substream(config.seed, it as u64, i as u64);
                    let prop = ScoreProposal::new(&caches[i].gram, &caches[i].phi_r, nu, state.sigma_x2)?;
                    let xi_new = prop.sample(&mut rng);
                    let x = model.fpca.trajectory(xi_new.as_slice());
                    let mut row_new = vec![0.0; k];
                    let clamped = model.design_row(x.as_slice(), &mut row_new)?;
                    let offset = model.y[i] - u_eta[i];
                    let r_old = offset - z.row(i).transpose().dot(&theta);
                    let r_new = offset - row_new.iter().zip(theta.iter()).map(|(a, b)| a * b).sum::<f64>();
                    let log_a = log_acceptance(r_new, r_old, state.sigma2);
                    let u: f64 = rng.random();
                    Ok(if u.ln() < log_a {
                        ScoreMove {
                            xi: Some(xi_new),
                            row: row_new,
                            clamped,
                        }
                    } else {
                        ScoreMove {
                            xi: None,
                            row: Vec::new(),
                            clamped: 0,
                        }
                    })
                })
                .collect();
            for (i, m) in moves.into_iter().enumerate() {
                let m = m.map_err(fail)?;
                if let Some(xi) = m.xi {
                    state.xi.set_row(i, &xi.transpose());
                    z.row_mut(i).copy_from_slice(&m.row);
                    clamped_rows[i] = m.clamped;
                    accepted[i] += 1;
                }
            }
        }
        out.clamped += clamped_rows.iter().sum::<usize>();

        let mut rng: ChaCha8Rng = substream(config.seed, it as u64, GLOBAL_STREAM);
        let z0 = &z * &rp.t0;
        let zp = &z * &rp.tp;
        let s2 = state.sigma2;

        // η0
        let resid = &model.y - &z0 * &state.beta - &zp * &state.delta;
        let mut prec = model.u.tr_mul(&model.u) / s2;
        for j in 0..model.p0() {
            prec[(j, j)] += 1.0 / h.sigma_eta2;
        }
        state.eta0 = draw_gaussian(prec, &(model.u.tr_mul(&resid) / s2), &mut rng, "eta0 update").map_err(fail)?.0;
        let u_eta = &model.u * &state.eta0;

        // β
        let resid = &model.y - &u_eta - &zp * &state.delta;
        let mut prec = z0.tr_mul(&z0) / s2;
        for j in 0..rp.null_dim() {
            prec[(j, j)] += 1.0 / h.sigma_beta2;
        }
        let (beta, m_beta) =
            draw_gaussian(prec, &(z0.tr_mul(&resid) / s2), &mut rng, "beta update").map_err(fail)?;
        state.beta = beta;

        // δ
        let resid = &model.y - &u_eta - &z0 * &state.beta;
        let mut prec = zp.tr_mul(&zp) / s2;
        let pdiag = rp.penalty_diag(state.lambda_x, state.lambda_t);
        for j in 0..rp.pen_dim() {
            prec[(j, j)] += pdiag[j];
        }
        let (delta, m_delta) =
            draw_gaussian(prec, &(zp.tr_mul(&resid) / s2), &mut rng, "delta update").map_err(fail)?;
        state.delta = delta;

        // λx, λt
        let quad_x: f64 = state.delta.iter().zip(rp.psi_x.iter()).map(|(d, p)| p * d * d).sum();
        let quad_t: f64 = state.delta.iter().zip(rp.psi_t.iter()).map(|(d, p)| p * d * d).sum();
        let tx = LambdaTarget {
            psi: &rp.psi_x,
            psi_other: &rp.psi_t,
            lambda_other: state.lambda_t,
            quad: quad_x,
            a_l: h.a_l,
            b_l: h.b_l,
        };
        state.lambda_x = slice_step(|l| tx.log_density(l), state.lambda_x, config.slice_width, config.max_doublings, &mut rng)
            .map_err(fail)?;
        let tt = LambdaTarget {
            psi: &rp.psi_t,
            psi_other: &rp.psi_x,
            lambda_other: state.lambda_x,
            quad: quad_t,
            a_l: h.a_l,
            b_l: h.b_l,
        };
        state.lambda_t = slice_step(|l| tt.log_density(l), state.lambda_t, config.slice_width, config.max_doublings, &mut rng)
            .map_err(fail)?;

        // σx²
        if sample_scores {
            let mut ss = 0.0;
            for (i, p) in model.projections.iter().enumerate() {
                let e = &p.resid - &p.phi * state.xi.row(i).transpose();
                ss += e.norm_squared();
            }
            state.sigma_x2 = draw_inverse_gamma(
                h.a_x + 0.5 * model.n_obs as f64,
                h.b_x + 0.5 * ss,
                &mut rng,
                "measurement-error variance update",
            )
            .map_err(fail)?;
        }

        // σ²
        let fitted = &u_eta + &z0 * &state.beta + &zp * &state.delta;
        let rss = (&model.y - &fitted).norm_squared();
        state.sigma2 = draw_inverse_gamma(h.a_s + 0.5 * n as f64, h.b_s + 0.5 * rss, &mut rng, "response variance update")
            .map_err(fail)?;

        if it > config.burnin && (it - config.burnin) % config.thin == 0 {
            out.iterations.push(it);
            out.eta0.push(state.eta0.clone());
            out.beta.push(state.beta.clone());
            out.delta.push(state.delta.clone());
            out.lambda_x.push(state.lambda_x);
            out.lambda_t.push(state.lambda_t);
            out.sigma2.push(state.sigma2);
            out.sigma_x2.push(state.sigma_x2);
            if sample_scores {
                out.xi.push(state.xi.clone());
            }
            out.fitted.push(fitted);
            out.theta_rb += model.theta(&m_beta, &m_delta);
        }
    }
    let nd = out.len() as f64;
    out.theta_rb /= nd;
    out.acceptance = accepted.iter().map(|&a| a as f64 / config.iters as f64).collect();
    out.last = state;
    Ok(out)
}

/// Posterior predictive summary of a new subject's linear predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

pub(crate) fn summarize(mut v: Vec<f64>) -> Prediction {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.sort_by(|a, b| a.total_cmp(b));
    Prediction {
        mean,
        lower: quantile(&v, 0.025),
        upper: quantile(&v, 0.975),
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_subject(model: &FgamModel, s: &Subject) -> Result<()> {
    if s.n_obs() == 0 {
        return Err(FgamError::Data(format!("subject {} has no observations", s.id)));
    }
    if s.times.len() != s.values.len() {
        return Err(FgamError::Data(format!("subject {} has mismatched times and values", s.id)));
    }
    check_len("new subject offsets", model.p0(), s.u.len())
}

/// Predictions for new subjects: per draw, the subject's trajectory is the
/// score posterior mean under that draw's measurement-error variance.
pub fn predict_mcmc(model: &FgamModel, samples: &PosteriorSamples, subjects: &[Subject]) -> Result<Vec<Prediction>> {
    if samples.is_empty() {
        return Err(FgamError::invalid("no posterior draws to predict from"));
    }
    let k = model.tensor.dim();
    let thetas: Vec<DVector<f64>> = (0..samples.len()).map(|d| samples.theta(model, d)).collect();
    subjects
        .par_iter()
        .map(|s| {
            check_subject(model, s)?;
            let p = model.fpca.project(s);
            let cache = subject_cache(&p);
            let u = DVector::from_column_slice(&s.u);
            let mut row = vec![0.0; k];
            let mut vals = Vec::with_capacity(samples.len());
            for d in 0..samples.len() {
                let prop = ScoreProposal::new(&cache.gram, &cache.phi_r, &model.fpca.nu, samples.sigma_x2[d])?;
                let x = model.fpca.trajectory(prop.mean.as_slice());
                model.design_row(x.as_slice(), &mut row)?;
                let lin: f64 = row.iter().zip(thetas[d].iter()).map(|(a, b)| a * b).sum();
                vals.push(lin + u.dot(&samples.eta0[d]));
            }
            Ok(summarize(vals))
        })
        .collect()
}

/// Predictions from known trajectories on the grid (`n × T`) and offsets (`n × p0`).
pub fn predict_mcmc_trajectories(
    model: &FgamModel,
    samples: &PosteriorSamples,
    trajectories: &DMatrix<f64>,
    offsets: &DMatrix<f64>,
) -> Result<Vec<Prediction>> {
    if samples.is_empty() {
        return Err(FgamError::invalid("no posterior draws to predict from"));
    }
    check_len("trajectory grid", model.fpca.grid.len(), trajectories.ncols())?;
    check_len("offset rows", trajectories.nrows(), offsets.nrows())?;
    check_len("offset columns", model.p0(), offsets.ncols())?;
    let k = model.tensor.dim();
    let mut out = Vec::with_capacity(trajectories.nrows());
    let mut row = vec![0.0; k];
    for i in 0..trajectories.nrows() {
        let x = trajectories.row(i).transpose();
        model.design_row(x.as_slice(), &mut row)?;
        let z = DVector::from_column_slice(&row);
        let u = offsets.row(i).transpose();
        let vals = (0..samples.len())
            .map(|d| z.dot(&samples.theta(model, d)) + u.dot(&samples.eta0[d]))
            .collect();
        out.push(summarize(vals));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn proposal_equal_to_current_is_always_accepted() {
        assert_eq!(log_acceptance(0.7, 0.7, 2.0), 0.0);
        assert!(log_acceptance(0.1, 0.7, 2.0) > 0.0);
    }

    #[test]
    fn gaussian_draw_moments() {
        let prec = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let cov = prec.clone().try_inverse().unwrap();
        let mean = &cov * &b;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40_000;
        let mut m = DVector::zeros(2);
        let mut c = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let (x, mu) = draw_gaussian(prec.clone(), &b, &mut rng, "test").unwrap();
            assert!((&mu - &mean).norm() < 1e-12);
            let e = &x - &mean;
            m += &x;
            c += &e * e.transpose();
        }
        m /= n as f64;
        c /= n as f64;
        assert!((&m - &mean).amax() < 0.02);
        assert!((&c - &cov).amax() < 0.02);
    }

    #[test]
    fn inverse_gamma_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 50_000;
        let s: f64 = (0..n).map(|_| draw_inverse_gamma(6.0, 10.0, &mut rng, "t").unwrap()).sum();
        // mean b / (a - 1)
        assert!((s / n as f64 - 2.0).abs() < 0.03);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert!((quantile(&v, 0.025) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn config_rejects_short_runs() {
        let c = McmcConfig {
            iters: 10,
            burnin: 10,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = McmcConfig {
            iters: 25,
            burnin: 5,
            thin: 3,
            ..Default::default()
        };
        assert_eq!(c.num_draws(), 6);
    }
}
