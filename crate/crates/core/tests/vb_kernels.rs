use fgam::fpca::{pace_init, FpcaOptions};
use fgam::model::{FgamModel, Hyperparameters, SurfaceOptions};
use fgam::sim::{generate_dataset, Scenario, TrueSurface};
use fgam::vb::{
    gauss_laguerre, lambda_moments, laplace_fit, run_vb, NewtonOptions, ScoreContext, SubjectTerms, VbConfig,
};
use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

#[test]
fn laguerre_is_exact_to_degree_2g_minus_1() {
    for &(g, alpha) in &[(25usize, 1.01), (10, 0.0), (25, 3.5), (5, 1.01)] {
        let rule = gauss_laguerre(g, alpha).unwrap();
        for k in 0..2 * g {
            let got: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(k as i32)).sum();
            let want = ln_gamma(alpha + k as f64 + 1.0).exp();
            assert!((got / want - 1.0).abs() <= 1e-9, "G={g} alpha={alpha} degree {k}: {got} vs {want}");
        }
    }
}

/// Moments of λ^α e^{-rate λ} Π(λψ + λoψo)^{1/2} by a dense trapezoid in log λ.
fn dense_lambda(alpha: f64, psi: &DVector<f64>, po: &DVector<f64>, lo: f64, rate: f64) -> (f64, f64, f64) {
    let log_q = |u: f64| {
        let l = u.exp();
        let det: f64 = psi.iter().zip(po.iter()).map(|(p, q)| (l * p + lo * q).ln()).sum();
        (alpha + 1.0) * u - rate * l + 0.5 * det
    };
    let (a, b, n) = (-40.0f64, 12.0f64, 400_000usize);
    let h = (b - a) / n as f64;
    let vals: Vec<f64> = (0..=n).map(|i| log_q(a + h * i as f64)).collect();
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut s0, mut s1, mut sl) = (0.0, 0.0, 0.0);
    for (i, v) in vals.iter().enumerate() {
        let u = a + h * i as f64;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 } * (v - m).exp() * h;
        s0 += w;
        s1 += w * u.exp();
        sl += w * u;
    }
    (s1 / s0, sl / s0, m + s0.ln())
}

#[test]
fn lambda_update_matches_dense_quadrature() {
    let dx = fgam::basis::difference_matrix(10, 2).unwrap();
    let r = fgam::reparam::ReparamBasis::from_penalties(&dx, &dx).unwrap();
    let a_l = 0.01;
    let rule = gauss_laguerre(25, a_l + 1.0).unwrap();
    for &lo in &[1e-3, 0.5, 20.0] {
        for &rate in &[0.05, 3.0, 400.0] {
            let m = lambda_moments(&rule, &r.psi_x, &r.psi_t, lo, rate).unwrap();
            let (mean, mean_log, log_norm) = dense_lambda(a_l + 1.0, &r.psi_x, &r.psi_t, lo, rate);
            assert!((m.mean / mean - 1.0).abs() <= 1e-6, "lo={lo} rate={rate}: mean {} vs {mean}", m.mean);
            assert!((m.mean_log - mean_log).abs() <= 1e-6 * mean_log.abs().max(1.0), "mean_log {} vs {mean_log}", m.mean_log);
            assert!((m.log_norm - log_norm).abs() <= 1e-6 * log_norm.abs().max(1.0), "log_norm {} vs {log_norm}", m.log_norm);
        }
    }
}

struct Fixture {
    model: FgamModel,
    mu_theta: DVector<f64>,
    sigma_theta: DMatrix<f64>,
}

fn fixture() -> Fixture {
    let sc = Scenario::new(TrueSurface::F2, 10, 1.0);
    let (data, _) = generate_dataset(&sc).unwrap();
    let fpca = pace_init(&data, &FpcaOptions::default()).unwrap();
    let model = FgamModel::new(&data, fpca, SurfaceOptions::default(), Hyperparameters::default()).unwrap();
    let k = model.tensor.dim();
    let mu_theta = DVector::from_fn(k, |i, _| ((i / 10) as f64 * 0.7).sin() * 2.0 + ((i % 10) as f64 * 0.4).cos());
    let a = DMatrix::from_fn(k, k, |i, j| (((i * 31 + j * 17) % 13) as f64 - 6.0) * 0.01);
    let sigma_theta = &a * a.transpose() + DMatrix::identity(k, k) * 0.05;
    Fixture {
        model,
        mu_theta,
        sigma_theta,
    }
}

impl Fixture {
    fn ctx(&self, inv_sigma2: f64) -> ScoreContext<'_> {
        ScoreContext {
            tensor: &self.model.tensor,
            mu: &self.model.fpca.mu,
            phi: &self.model.fpca.phi,
            nu: &self.model.fpca.nu,
            mu_theta: &self.mu_theta,
            sigma_theta: &self.sigma_theta,
            inv_sigma2,
            inv_sigma_x2: 1.0 / self.model.fpca.sigma_x2,
        }
    }

    fn terms(&self, i: usize) -> SubjectTerms {
        let p = &self.model.projections[i];
        SubjectTerms {
            gram: p.phi.tr_mul(&p.phi),
            phi_r: p.phi.tr_mul(&p.resid),
            y_tilde: self.model.y[i],
        }
    }
}

#[test]
fn laplace_derivatives_match_finite_differences() {
    let fx = fixture();
    let ctx = fx.ctx(0.8);
    let m = fx.model.num_components();
    let h = 1e-5;
    for i in [0usize, 7, 23] {
        let s = fx.terms(i);
        let xi = DVector::from_fn(m, |c, _| fx.model.fpca.scores[(i, c)] + 0.1 * (c as f64 - 0.5));
        let ev = ctx.evaluate(&s, &xi).unwrap();
        assert!((ev.value - ctx.value(&s, &xi).unwrap()).abs() < 1e-9 * ev.value.abs().max(1.0));
        for c in 0..m {
            let mut up = xi.clone();
            let mut dn = xi.clone();
            up[c] += h;
            dn[c] -= h;
            let fd = (ctx.value(&s, &up).unwrap() - ctx.value(&s, &dn).unwrap()) / (2.0 * h);
            let scale = ev.grad.amax().max(1.0);
            assert!((fd - ev.grad[c]).abs() <= 1e-4 * scale, "subject {i} grad[{c}]: {fd} vs {}", ev.grad[c]);
            let gfd = (ctx.evaluate(&s, &up).unwrap().grad - ctx.evaluate(&s, &dn).unwrap().grad) / (2.0 * h);
            let hscale = ev.hess.amax().max(1.0);
            for r in 0..m {
                assert!(
                    (gfd[r] - ev.hess[(r, c)]).abs() <= 1e-4 * hscale,
                    "subject {i} hess[{r},{c}]: {} vs {}",
                    gfd[r],
                    ev.hess[(r, c)]
                );
            }
        }
    }
}

#[test]
fn laplace_mode_is_stationary() {
    let fx = fixture();
    let ctx = fx.ctx(0.8);
    let mut clamped = 0;
    for i in 0..fx.model.n() {
        let s = fx.terms(i);
        let start = fx.model.fpca.scores.row(i).transpose();
        let fit = laplace_fit(&ctx, &s, &start, &NewtonOptions::default()).unwrap();
        // a trajectory pushed past the x-basis range sits on a kink
        if fit.moments(&ctx).unwrap().clamped > 0 {
            clamped += 1;
        } else {
            assert!(fit.grad_norm < 1e-6, "subject {i}: gradient {}", fit.grad_norm);
        }
        let prod = &fit.precision * &fit.cov;
        assert!((prod - DMatrix::identity(fit.cov.nrows(), fit.cov.nrows())).amax() < 1e-8);
    }
    assert!(clamped * 20 < fx.model.n(), "{clamped} clamped modes");
}

#[test]
fn laplace_without_response_is_the_blup() {
    let fx = fixture();
    let ctx = fx.ctx(0.0);
    let sx2 = fx.model.fpca.sigma_x2;
    for i in [1usize, 40] {
        let s = fx.terms(i);
        let mut p = &s.gram / sx2;
        for (c, v) in fx.model.fpca.nu.iter().enumerate() {
            p[(c, c)] += 1.0 / v;
        }
        let want = p.clone().cholesky().unwrap().solve(&(&s.phi_r / sx2));
        let fit = laplace_fit(&ctx, &s, &DVector::zeros(want.len()), &NewtonOptions::default()).unwrap();
        assert!((&fit.mode - &want).amax() < 1e-8);
        assert!((&fit.precision - &p).amax() < 1e-8 * p.amax());
    }
}

#[test]
fn taylor_moments_match_monte_carlo_for_small_covariance() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let fx = fixture();
    let ctx = fx.ctx(0.8);
    let xi0 = fx.model.fpca.scores.row(3).transpose();
    let m = xi0.len();
    let cov = DMatrix::identity(m, m) * 1e-3;
    let tm = ctx.taylor_moments(&xi0, &cov).unwrap();
    let chol = cov.clone().cholesky().unwrap().l();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let n = 20_000;
    let mut acc = DVector::zeros(fx.model.tensor.dim());
    let mut row = vec![0.0; fx.model.tensor.dim()];
    for _ in 0..n {
        let e = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
        let xi = &xi0 + &chol * e;
        let x = fx.model.fpca.trajectory(xi.as_slice());
        fx.model.design_row(x.as_slice(), &mut row).unwrap();
        acc += DVector::from_column_slice(&row);
    }
    let mc = acc / n as f64;
    let scale = tm.eb.amax();
    assert!((&tm.eb - &mc).amax() < 2e-3 * scale, "Taylor mean off by {}", (&tm.eb - &mc).amax());
}

#[test]
fn bound_is_monotone_in_the_conjugate_regime() {
    let sc = Scenario::new(TrueSurface::F1, 10, 1.0);
    let (data, truth) = generate_dataset(&sc).unwrap();
    let fpca = pace_init(&data, &FpcaOptions::default()).unwrap();
    let model = FgamModel::with_trajectories(
        &data,
        fpca,
        truth.trajectories.clone(),
        SurfaceOptions::default(),
        Hyperparameters::default(),
    )
    .unwrap();
    for update_lambda in [false, true] {
        let cfg = VbConfig {
            tol: 1e-12,
            max_iter: 60,
            update_scores: false,
            update_lambda,
            ..VbConfig::default()
        };
        let st = run_vb(&model, &cfg, None).unwrap();
        assert!(st.bound_history.len() > 5);
        for w in st.bound_history.windows(2) {
            let rel = (w[1] - w[0]) / w[0].abs();
            assert!(rel >= -1e-8, "update_lambda={update_lambda}: bound fell from {} to {}", w[0], w[1]);
        }
    }
}
