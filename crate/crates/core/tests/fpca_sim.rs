use fgam::basis::{difference_matrix, SplineBasis, WorkingGrid};
use fgam::fpca::{blup_scores, pace_init, score_posterior, FpcaOptions};
use fgam::sim::flm::flm_design;
use fgam::sim::scenario::{score_sd, true_eigenfunctions};
use fgam::sim::{fit_flm, flm_lambda_grid, generate_dataset, Scenario, TrueSurface};
use nalgebra::{DMatrix, DVector};

fn big(surface: TrueSurface, j: usize, sx2: f64, n: usize) -> Scenario {
    Scenario {
        n,
        ..Scenario::new(surface, j, sx2)
    }
}

#[test]
fn generator_moments() {
    let sc = big(TrueSurface::F1, 10, 4.0, 10_000);
    let (data, truth) = generate_dataset(&sc).unwrap();
    let n = sc.n as f64;
    for j in 0..4 {
        let col = truth.scores.column(j);
        let var = col.iter().map(|v| v * v).sum::<f64>() / n;
        let want = score_sd(j + 1).powi(2);
        assert!((var / want - 1.0).abs() < 0.05, "score {j}: {var} vs {want}");
    }
    let mut sq = 0.0;
    let mut count = 0.0;
    let mut ysq = 0.0;
    for (i, s) in data.subjects().iter().enumerate() {
        for (&t, &x) in s.times.iter().zip(&s.values) {
            let g = truth.grid.points().iter().position(|p| *p == t).unwrap();
            sq += (x - truth.trajectories[(i, g)]).powi(2);
            count += 1.0;
        }
        ysq += (s.y - truth.signal[i]).powi(2);
    }
    assert!((sq / count / 4.0 - 1.0).abs() < 0.05);
    assert!((ysq / n - 1.0).abs() < 0.05);
    // sampled times are distinct grid points
    for s in data.subjects().iter().take(50) {
        assert!(s.times.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn true_trajectories_follow_the_expansion() {
    let sc = Scenario::new(TrueSurface::F2, 40, 1.0);
    let (_, truth) = generate_dataset(&sc).unwrap();
    let (lo, hi) = sc.surface.domain();
    for (g, &t) in truth.grid.points().iter().enumerate() {
        let e = true_eigenfunctions(t, lo, hi);
        let x: f64 = (0..4).map(|j| truth.scores[(3, j)] * e[j]).sum();
        assert!((x - truth.trajectories[(3, g)]).abs() < 1e-12);
    }
    let f: Vec<f64> = truth
        .grid
        .points()
        .iter()
        .enumerate()
        .map(|(g, &t)| sc.surface.eval(truth.trajectories[(3, g)], t))
        .collect();
    assert!((truth.grid.integrate(&f) - truth.signal[3]).abs() < 1e-10);
}

#[test]
fn fpca_recovers_eigenvalues_and_noise() {
    let sc = big(TrueSurface::F1, 40, 0.25, 400);
    let (data, _) = generate_dataset(&sc).unwrap();
    let opts = FpcaOptions {
        domain: Some((0.0, 1.0)),
        ..FpcaOptions::default()
    };
    let f = pace_init(&data, &opts).unwrap();
    assert_eq!(f.num_components(), 4);
    // the generating eigenfunctions are not mutually orthogonal, so the
    // reference eigenvalues come from the discretized covariance operator
    let fine = WorkingGrid::uniform(0.0, 1.0, 401).unwrap();
    let e: Vec<[f64; 4]> = fine.points().iter().map(|&t| true_eigenfunctions(t, 0.0, 1.0)).collect();
    let w = fine.weights();
    let g = DMatrix::from_fn(401, 401, |a, b| {
        let c: f64 = (0..4).map(|j| score_sd(j + 1).powi(2) * e[a][j] * e[b][j]).sum();
        w[a].sqrt() * c * w[b].sqrt()
    });
    let mut ev: Vec<f64> = g.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    for j in 0..2 {
        assert!((f.nu[j] / ev[j] - 1.0).abs() < 0.2, "nu[{j}] = {} vs {}", f.nu[j], ev[j]);
    }
    assert!((f.sigma_x2 - 0.25).abs() < 0.1, "sigma_x2 = {}", f.sigma_x2);
}

#[test]
fn blup_matches_gaussian_conditioning() {
    // E(ξ | x) = Λ Φᵀ (Φ Λ Φᵀ + σ² I)⁻¹ x, computed the long way
    let phi = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.5, -0.3, -0.4, 1.1]);
    let nu = DVector::from_vec(vec![2.0, 0.5]);
    let x = DVector::from_vec(vec![0.7, -0.2, 1.3]);
    let s2 = 0.3;
    let lam = DMatrix::from_diagonal(&nu);
    let cov = &phi * &lam * phi.transpose() + DMatrix::identity(3, 3) * s2;
    let want = &lam * phi.transpose() * cov.clone().try_inverse().unwrap() * &x;
    let got = blup_scores(&phi, &x, &nu, s2).unwrap();
    assert!((got - &want).amax() < 1e-12);
    let (post_cov, _) = score_posterior(&phi, &nu, s2).unwrap();
    let want_cov = &lam - &lam * phi.transpose() * cov.try_inverse().unwrap() * &phi * &lam;
    assert!((post_cov - want_cov).amax() < 1e-12);
}

/// Profile REML criterion evaluated independently through a QR solve of the
/// augmented least-squares system.
fn reml_by_qr(x: &DMatrix<f64>, y: &DVector<f64>, s: &DMatrix<f64>, lambda: f64, m_p: usize, rank: usize) -> (f64, DVector<f64>) {
    let n = x.nrows();
    let p = x.ncols();
    let root = (s * lambda).cholesky().unwrap().l().transpose();
    let mut aug = DMatrix::zeros(n + p, p);
    aug.view_mut((0, 0), (n, p)).copy_from(x);
    aug.view_mut((n, 0), (p, p)).copy_from(&root);
    let mut rhs = DVector::zeros(n + p);
    rhs.rows_mut(0, n).copy_from(y);
    let qr = aug.qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &rhs;
    let g = r.solve_upper_triangular(&qty).unwrap();
    let rss = (y - x * &g).norm_squared() + lambda * g.dot(&(s * &g));
    let nu = (n - m_p) as f64;
    let logdet: f64 = r.diagonal().iter().map(|d| 2.0 * d.abs().ln()).sum();
    (nu * (rss / nu).ln() + logdet - rank as f64 * lambda.ln(), g)
}

#[test]
fn flm_matches_independent_reml_solve() {
    let sc = Scenario::new(TrueSurface::F1, 40, 0.0);
    let (data, truth) = generate_dataset(&sc).unwrap();
    let y = data.responses();
    let grid = truth.grid.clone();
    let fit = fit_flm(&truth.trajectories, &y, &grid, 10, 2, &flm_lambda_grid()).unwrap();

    let basis = SplineBasis::uniform(0.0, 1.0, 10, 3).unwrap();
    let z = flm_design(&truth.trajectories, &grid, &basis).unwrap();
    let mut x = DMatrix::zeros(y.len(), 11);
    x.column_mut(0).fill(1.0);
    x.view_mut((0, 1), (y.len(), 10)).copy_from(&z);
    let mut s = DMatrix::zeros(11, 11);
    s.view_mut((1, 1), (10, 10)).copy_from(&difference_matrix(10, 2).unwrap().gram);
    for k in 1..11 {
        s[(k, k)] += 1e-8;
    }
    s[(0, 0)] = 1e-300;
    let mut best = (f64::INFINITY, 0.0, DVector::zeros(11));
    for &l in &flm_lambda_grid() {
        let (c, g) = reml_by_qr(&x, &y, &s, l, 3, 8);
        if c < best.0 {
            best = (c, l, g);
        }
    }
    assert_eq!(fit.lambda, best.1);
    assert!((fit.intercept - best.2[0]).abs() < 1e-6);
    assert!((&fit.coef - best.2.rows(1, 10)).amax() < 1e-6);

    // F1 is a functional linear model, so in-sample predictions are close to the signal
    let pred = fit.predict(&truth.trajectories).unwrap();
    let rmse = ((&pred - &truth.signal).norm_squared() / y.len() as f64).sqrt();
    assert!(rmse < 0.5, "rmse {rmse}");
}

#[test]
fn flm_surface_is_linear_in_x() {
    let sc = Scenario::new(TrueSurface::F1, 40, 0.0);
    let (data, truth) = generate_dataset(&sc).unwrap();
    let grid = WorkingGrid::uniform(0.0, 1.0, 50).unwrap();
    let fit = fit_flm(&truth.trajectories, &data.responses(), &grid, 10, 2, &flm_lambda_grid()).unwrap();
    let s = fit.surface(&[-1.0, 0.0, 1.0], &[0.25, 0.5]).unwrap();
    for b in 0..2 {
        assert!(((s[(2, b)] - s[(1, b)]) - (s[(1, b)] - s[(0, b)])).abs() < 1e-12);
    }
}
