use fgam::basis::{SplineBasis, TensorBasis, WorkingGrid};
use fgam::data::{SparseFunctionalDataset, Subject};
use fgam::fpca::{FpcaDiagnostics, FpcaResult};
use fgam::mcmc::{draw_gaussian, draw_inverse_gamma, log_acceptance, slice_step, LambdaTarget, ScoreProposal};
use fgam::model::{FgamModel, Hyperparameters, SurfaceOptions};
use fgam::rng::substream;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Mean and batch-means standard error of a correlated sequence.
fn batch_mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let b = 50;
    let size = n / b;
    let mean = xs.iter().sum::<f64>() / n as f64;
    let means: Vec<f64> = (0..b).map(|k| xs[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    (mean, (var / b as f64).sqrt())
}

/// Trapezoid mean of a density given by its log on a fine grid.
fn quadrature_mean(log_f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|i| lo + h * i as f64).collect();
    let l: Vec<f64> = xs.iter().map(|&x| log_f(x)).collect();
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut s0, mut s1) = (0.0, 0.0);
    for (i, (&x, &v)) in xs.iter().zip(&l).enumerate() {
        let w = if i == 0 || i == n { 0.5 } else { 1.0 } * (v - m).exp();
        s0 += w;
        s1 += w * x;
    }
    s1 / s0
}

#[test]
fn slice_sampler_matches_quadrature() {
    let psi = DVector::from_fn(30, |j, _| (j as f64 + 0.5) / 30.0);
    let psi_other = psi.map(|v| 1.0 - v);
    let target = LambdaTarget {
        psi: &psi,
        psi_other: &psi_other,
        lambda_other: 0.7,
        quad: 12.0,
        a_l: 0.01,
        b_l: 0.01,
    };
    let mut rng = substream(11, 0, 0);
    let mut x = 1.0;
    let mut draws = Vec::with_capacity(50_000);
    for _ in 0..1_000 {
        x = slice_step(|l| target.log_density(l), x, 2.0, 60, &mut rng).unwrap();
    }
    for _ in 0..50_000 {
        x = slice_step(|l| target.log_density(l), x, 2.0, 60, &mut rng).unwrap();
        draws.push(x);
    }
    let (mean, se) = batch_mean_se(&draws);
    let want = quadrature_mean(|l| target.log_density(l), 1e-9, 40.0, 400_000);
    assert!((mean - want).abs() < 3.0 * se, "slice mean {mean} vs {want} (se {se})");
}

/// One subject, one component, a fixed nonlinear surface.
fn one_subject_model() -> (FgamModel, DVector<f64>) {
    let grid = WorkingGrid::uniform(0.0, 1.0, 50).unwrap();
    let phi = DMatrix::from_fn(50, 1, |g, _| 2f64.sqrt() * (std::f64::consts::PI * grid.points()[g]).sin());
    let fpca = FpcaResult {
        grid: grid.clone(),
        mu: DVector::zeros(50),
        phi,
        nu: DVector::from_vec(vec![2.0]),
        sigma_x2: 0.5,
        scores: DMatrix::zeros(1, 1),
        pve: 1.0,
        covariance: DMatrix::zeros(50, 50),
        diagnostics: FpcaDiagnostics::default(),
    };
    let s = Subject::new("a", vec![0.2, 0.5, 0.9], vec![0.4, 1.1, 0.3], 1.5, Vec::new());
    let data = SparseFunctionalDataset::new(vec![s]).unwrap();
    let mut model = FgamModel::new(&data, fpca, SurfaceOptions::default(), Hyperparameters::default()).unwrap();
    let bx = SplineBasis::uniform(-8.0, 8.0, 10, 3).unwrap();
    let bt = SplineBasis::uniform(0.0, 1.0, 10, 3).unwrap();
    model.tensor = TensorBasis::new(bx, bt, grid).unwrap();
    let theta = DVector::from_fn(100, |k, _| 1.5 * ((k / 10) as f64 * 0.9).sin() + 0.1 * (k % 10) as f64);
    (model, theta)
}

#[test]
fn score_chain_matches_quadrature() {
    let (model, theta) = one_subject_model();
    let p = &model.projections[0];
    let gram = p.phi.tr_mul(&p.phi);
    let phi_r = p.phi.tr_mul(&p.resid);
    let nu = &model.fpca.nu;
    let (sx2, s2) = (0.5, 0.3);
    let prop = ScoreProposal::new(&gram, &phi_r, nu, sx2).unwrap();
    let resid = |xi: f64| {
        let x = model.fpca.trajectory(&[xi]);
        let mut row = vec![0.0; 100];
        model.design_row(x.as_slice(), &mut row).unwrap();
        model.y[0] - row.iter().zip(theta.iter()).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut rng = substream(5, 1, 2);
    let mut xi = prop.mean[0];
    let mut r = resid(xi);
    let mut draws = Vec::with_capacity(50_000);
    for it in 0..51_000 {
        let cand = prop.sample(&mut rng)[0];
        let rc = resid(cand);
        if rng.random::<f64>().ln() < log_acceptance(rc, r, s2) {
            xi = cand;
            r = rc;
        }
        if it >= 1_000 {
            draws.push(xi);
        }
    }
    let (mean, se) = batch_mean_se(&draws);
    // exact conditional: N(ξ; m, S) times the response likelihood
    let prec = gram[(0, 0)] / sx2 + 1.0 / nu[0];
    let m = phi_r[0] / sx2 / prec;
    let sd = prec.powf(-0.5);
    let want = quadrature_mean(|v| -0.5 * prec * (v - m).powi(2) - resid(v).powi(2) / (2.0 * s2), m - 10.0 * sd, m + 10.0 * sd, 20_000);
    assert!((want - m).abs() > 0.05, "response term should move the conditional");
    assert!((mean - want).abs() < 3.0 * se, "chain mean {mean} vs {want} (se {se})");
}

#[test]
fn gaussian_block_draws_match_closed_form() {
    let q = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0]);
    let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let want = q.clone().try_inverse().unwrap() * &b;
    let cov = q.clone().try_inverse().unwrap();
    let mut rng = substream(3, 0, 0);
    let n = 50_000;
    let mut acc = DVector::zeros(3);
    let mut outer = DMatrix::zeros(3, 3);
    for _ in 0..n {
        let (d, mean) = draw_gaussian(q.clone(), &b, &mut rng, "test").unwrap();
        assert!((mean - &want).amax() < 1e-12);
        acc += &d;
        outer += (&d - &want) * (&d - &want).transpose();
    }
    let mean = acc / n as f64;
    for j in 0..3 {
        let se = (cov[(j, j)] / n as f64).sqrt();
        assert!((mean[j] - want[j]).abs() < 3.0 * se);
    }
    let emp = outer / n as f64;
    assert!((emp - cov).amax() < 0.02);
}

#[test]
fn inverse_gamma_draws_match_closed_form() {
    let (shape, scale) = (6.0, 10.0);
    let mut rng = substream(4, 0, 0);
    let n = 50_000;
    let d: Vec<f64> = (0..n).map(|_| draw_inverse_gamma(shape, scale, &mut rng, "test").unwrap()).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let want = scale / (shape - 1.0);
    let var = want * want / (shape - 2.0);
    assert!((mean - want).abs() < 3.0 * (var / n as f64).sqrt());
}
