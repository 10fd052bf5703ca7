//! The variational lower bound on the log marginal likelihood.

use statrs::function::gamma::{digamma, ln_gamma};

use super::{expected_rss, trajectory_rss, VbState};
use crate::error::{FgamError, Result};
use crate::model::FgamModel;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// The ten expectation terms of the bound, in order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    pub values: [f64; 10],
}

impl BoundTerms {
    pub const NAMES: [&'static str; 10] = [
        "response likelihood",
        "trajectory likelihood",
        "eta0",
        "beta",
        "delta",
        "scores",
        "lambda_x",
        "lambda_t",
        "sigma2",
        "sigma_x2",
    ];

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn log_det_spd(m: &nalgebra::DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    let ch = m.clone().cholesky()?;
    Some(2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// `E log p(v) − E log q(v)` for `p = IG(a, b)` and `q = IG(shape, scale)`.
fn inverse_gamma_term(a: f64, b: f64, shape: f64, scale: f64) -> f64 {
    let elog = scale.ln() - digamma(shape);
    a * b.ln() - ln_gamma(a) - shape * scale.ln() + ln_gamma(shape) + (shape - a) * elog + (scale - b) * shape / scale
}

/// Gaussian prior `N(0, s2 I)` against `q = N(μ, Σ)`.
fn gaussian_prior_term(mu: &nalgebra::DVector<f64>, sigma: &nalgebra::DMatrix<f64>, s2: f64) -> Option<f64> {
    let p = mu.len() as f64;
    Some(-0.5 * p * s2.ln() - 0.5 * (mu.norm_squared() + sigma.trace()) / s2 + 0.5 * log_det_spd(sigma)? + 0.5 * p)
}

/// Evaluates every term with its constants. The smoothing-parameter
/// determinant is taken at the variational means.
pub fn lower_bound(model: &FgamModel, st: &VbState) -> Result<BoundTerms> {
    let h = &model.hyper;
    let r = &model.reparam;
    let n = model.n() as f64;
    let fixed = model.fixed.is_some();
    let mut v = [0.0; 10];

    let elog_s = st.scale_s.ln() - digamma(st.shape_s);
    v[0] = -0.5 * n * LN_2PI - 0.5 * n * elog_s - 0.5 * st.inv_sigma2() * expected_rss(model, st);

    if !fixed {
        let nobs = model.n_obs as f64;
        let elog_x = st.scale_x.ln() - digamma(st.shape_x);
        v[1] = -0.5 * nobs * LN_2PI - 0.5 * nobs * elog_x - 0.5 * st.inv_sigma_x2() * trajectory_rss(model, st);
    }

    v[2] = gaussian_prior_term(&st.mu_eta0, &st.sigma_eta0, h.sigma_eta2).unwrap_or(f64::NAN);
    v[3] = gaussian_prior_term(&st.mu_beta, &st.sigma_beta, h.sigma_beta2).unwrap_or(f64::NAN);

    let lx = st.lambda_x.mean;
    let lt = st.lambda_t.mean;
    let mut logdet_pen = 0.0;
    let mut quad = 0.0;
    for j in 0..r.pen_dim() {
        let p = lx * r.psi_x[j] + lt * r.psi_t[j];
        logdet_pen += p.ln();
        quad += p * (st.sigma_delta[(j, j)] + st.mu_delta[j] * st.mu_delta[j]);
    }
    v[4] = 0.5 * logdet_pen - 0.5 * quad
        + 0.5 * log_det_spd(&st.sigma_delta).unwrap_or(f64::NAN)
        + 0.5 * r.pen_dim() as f64;

    if !fixed {
        let m = model.num_components() as f64;
        let sum_log_nu: f64 = model.fpca.nu.iter().map(|x| x.ln()).sum();
        let mut s = 0.0;
        for i in 0..model.n() {
            let c = &st.cov[i];
            let mut q = 0.0;
            for (a, nu) in model.fpca.nu.iter().enumerate() {
                q += (st.xi0[(i, a)] * st.xi0[(i, a)] + c[(a, a)]) / nu;
            }
            s += -0.5 * sum_log_nu - 0.5 * q + 0.5 * m + 0.5 * log_det_spd(c).unwrap_or(f64::NAN);
        }
        v[5] = s;
    }

    let shape_l = h.a_l + 2.0;
    let prior_const = shape_l * h.b_l.ln() - ln_gamma(shape_l);
    for (slot, mo) in [(6, &st.lambda_x), (7, &st.lambda_t)] {
        v[slot] = prior_const + (mo.rate - h.b_l) * mo.mean - 0.5 * logdet_pen + mo.log_norm;
    }

    v[8] = inverse_gamma_term(h.a_s, h.b_s, st.shape_s, st.scale_s);
    if !fixed {
        v[9] = inverse_gamma_term(h.a_x, h.b_x, st.shape_x, st.scale_x);
    }

    let bad: Vec<&str> = v
        .iter()
        .zip(BoundTerms::NAMES)
        .filter(|(x, _)| !x.is_finite())
        .map(|(_, name)| name)
        .collect();
    if !bad.is_empty() {
        return Err(FgamError::numerical("lower bound", format!("non-finite terms: {}", bad.join(", "))));
    }
    Ok(BoundTerms { values: v })
}
