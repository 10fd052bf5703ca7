//! Laplace approximation to the variational density of one subject's
//! scores, and second-order Taylor moments of its design row.

use nalgebra::{DMatrix, DVector};

use crate::basis::{LocalDesign, TensorBasis};
use crate::error::{FgamError, Result};

/// Quantities shared by every subject within one sweep.
#[derive(Debug, Clone, Copy)]
pub struct ScoreContext<'a> {
    pub tensor: &'a TensorBasis,
    /// Mean function on the grid.
    pub mu: &'a DVector<f64>,
    /// Eigenfunctions on the grid (`T × M`).
    pub phi: &'a DMatrix<f64>,
    pub nu: &'a DVector<f64>,
    pub mu_theta: &'a DVector<f64>,
    pub sigma_theta: &'a DMatrix<f64>,
    /// `E_q(1/σ²)`; zero switches the response term off.
    pub inv_sigma2: f64,
    pub inv_sigma_x2: f64,
}

/// One subject's data.
#[derive(Debug, Clone)]
pub struct SubjectTerms {
    /// `Φ(t_i)ᵀ Φ(t_i)`.
    pub gram: DMatrix<f64>,
    /// `Φ(t_i)ᵀ (x̃_i − μ(t_i))`.
    pub phi_r: DVector<f64>,
    /// `y_i − u_iᵀ μ_q(η₀)`.
    pub y_tilde: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iter: 50,
            grad_tol: 1e-8,
            max_halvings: 30,
        }
    }
}

/// Objective value with optional derivatives.
#[derive(Debug, Clone)]
pub struct LaplaceEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
    expansion: Expansion,
}

/// Local basis values, design row and its Jacobian at one score vector.
#[derive(Debug, Clone)]
struct Expansion {
    local: LocalDesign,
    z: DVector<f64>,
    jac: DMatrix<f64>,
}

impl ScoreContext<'_> {
    fn m(&self) -> usize {
        self.phi.ncols()
    }

    fn trajectory(&self, xi: &DVector<f64>) -> DVector<f64> {
        self.mu + self.phi * xi
    }

    /// `P = E(1/σ_x²) ΦᵢᵀΦᵢ + diag(1/ν)`.
    fn prior_precision(&self, s: &SubjectTerms) -> DMatrix<f64> {
        let mut p = &s.gram * self.inv_sigma_x2;
        for (c, v) in self.nu.iter().enumerate() {
            p[(c, c)] += 1.0 / v;
        }
        p
    }

    fn quadratic_part(&self, s: &SubjectTerms, xi: &DVector<f64>) -> f64 {
        self.inv_sigma_x2 * s.phi_r.dot(xi) - 0.5 * xi.dot(&(self.prior_precision(s) * xi))
    }

    fn design(&self, local: &LocalDesign) -> DVector<f64> {
        let mut z = DVector::zeros(self.tensor.dim());
        self.tensor.weighted_rows(local, 0, self.tensor.grid().weights(), z.as_mut_slice());
        z
    }

    /// `log q(ξ)` up to a constant.
    pub fn value(&self, s: &SubjectTerms, xi: &DVector<f64>) -> Result<f64> {
        let x = self.trajectory(xi);
        let local = self.tensor.local(x.as_slice())?;
        let z = self.design(&local);
        let a = z.dot(self.mu_theta);
        let c = z.dot(&sparse_product(self.sigma_theta, &z, &DMatrix::zeros(z.len(), 0)).column(0));
        Ok(self.inv_sigma2 * (s.y_tilde * a - 0.5 * a * a - 0.5 * c) + self.quadratic_part(s, xi))
    }

    /// `Σ_t w_t s_t φ_t φ_tᵀ` for per-grid-point scalars `s`.
    fn phi_outer(&self, s: &[f64]) -> DMatrix<f64> {
        let m = self.m();
        let w = self.tensor.grid().weights();
        let mut out = DMatrix::zeros(m, m);
        for t in 0..w.len() {
            let f = w[t] * s[t];
            if f == 0.0 {
                continue;
            }
            for a in 0..m {
                let pa = f * self.phi[(t, a)];
                for b in 0..m {
                    out[(a, b)] += pa * self.phi[(t, b)];
                }
            }
        }
        out
    }

    /// `Σ_t w_t s_t φ_t`.
    fn phi_weighted(&self, s: &[f64]) -> DVector<f64> {
        let w = self.tensor.grid().weights();
        let mut out = DVector::zeros(self.m());
        for t in 0..w.len() {
            out.axpy(w[t] * s[t], &self.phi.row(t).transpose(), 1.0);
        }
        out
    }

    /// Jacobian of the design row, `K × M`: column `m` is
    /// `Σ_t w_t φ_tm (B^X′ ⊗ B^T)`.
    pub fn jacobian(&self, local: &LocalDesign) -> DMatrix<f64> {
        let k = self.tensor.dim();
        let w = self.tensor.grid().weights();
        let mut j = DMatrix::zeros(k, self.m());
        let mut wts = vec![0.0; w.len()];
        for c in 0..self.m() {
            for t in 0..w.len() {
                wts[t] = w[t] * self.phi[(t, c)];
            }
            self.tensor.weighted_rows(local, 1, &wts, j.column_mut(c).as_mut_slice());
        }
        j
    }

    /// Value, gradient and Hessian of `log q(ξ)`.
    fn expansion(&self, xi: &DVector<f64>) -> Result<Expansion> {
        let x = self.trajectory(xi);
        let local = self.tensor.local(x.as_slice())?;
        let z = self.design(&local);
        let jac = self.jacobian(&local);
        Ok(Expansion { local, z, jac })
    }

    pub fn evaluate(&self, s: &SubjectTerms, xi: &DVector<f64>) -> Result<LaplaceEval> {
        let t = self.tensor.grid().len();
        let e = self.expansion(xi)?;
        let (local, z, jac) = (&e.local, &e.z, &e.jac);
        let m = self.m();
        let szj = sparse_product(self.sigma_theta, z, jac);
        let sz = szj.column(0).into_owned();
        let a = z.dot(self.mu_theta);
        let c = z.dot(&sz);

        let mut s1 = vec![0.0; t];
        let mut s2 = vec![0.0; t];
        let mut s1c = vec![0.0; t];
        let mut s2c = vec![0.0; t];
        self.tensor.contract(local, 1, self.mu_theta.as_slice(), &mut s1);
        self.tensor.contract(local, 2, self.mu_theta.as_slice(), &mut s2);
        self.tensor.contract(local, 1, sz.as_slice(), &mut s1c);
        self.tensor.contract(local, 2, sz.as_slice(), &mut s2c);

        let grad_a = self.phi_weighted(&s1);
        let grad_c = self.phi_weighted(&s1c) * 2.0;
        let hess_a = self.phi_outer(&s2);
        let hess_c = (jac.transpose() * szj.columns(1, m) + self.phi_outer(&s2c)) * 2.0;

        let p = self.prior_precision(s);
        let r = s.y_tilde - a;
        let value = self.inv_sigma2 * (s.y_tilde * a - 0.5 * a * a - 0.5 * c) + self.inv_sigma_x2 * s.phi_r.dot(xi)
            - 0.5 * xi.dot(&(&p * xi));
        let grad = (&grad_a * r - &grad_c * 0.5) * self.inv_sigma2 + &s.phi_r * self.inv_sigma_x2 - &p * xi;
        let mut hess = (hess_a * r - &grad_a * grad_a.transpose() - hess_c * 0.5) * self.inv_sigma2 - p;
        hess = (&hess + hess.transpose()) * 0.5;
        Ok(LaplaceEval {
            value,
            grad,
            hess,
            expansion: e,
        })
    }

    /// Design row at `xi0` and its Taylor moments under `N(xi0, cov)`.
    pub fn taylor_moments(&self, xi0: &DVector<f64>, cov: &DMatrix<f64>) -> Result<TaylorMoments> {
        self.moments(&self.expansion(xi0)?, cov)
    }

    fn moments(&self, e: &Expansion, cov: &DMatrix<f64>) -> Result<TaylorMoments> {
        let w = self.tensor.grid().weights();
        let q: Vec<f64> = (0..w.len())
            .map(|t| {
                let ph = self.phi.row(t).transpose();
                w[t] * ph.dot(&(cov * &ph))
            })
            .collect();
        let mut h = DVector::zeros(self.tensor.dim());
        self.tensor.weighted_rows(&e.local, 2, &q, h.as_mut_slice());
        let eb = &e.z + &h * 0.5;
        let l = cov
            .clone()
            .cholesky()
            .ok_or_else(|| FgamError::numerical("Taylor moments", "score covariance is not positive definite"))?
            .unpack();
        Ok(TaylorMoments {
            z0: e.z.clone(),
            eb,
            jl: &e.jac * l,
            clamped: e.local.clamped,
        })
    }
}

/// `E(b) ≈ z0 + h/2` from the second-order expansion, with `h` the
/// curvature term. The outer moment is taken as `E(b)E(b)ᵀ + JCJᵀ`, which
/// keeps the implied covariance of `b` positive semidefinite; it is stored
/// as the factor `JL` with `C = LLᵀ`.
/// `Σ [z J]`, skipping the rows where both `z` and `J` vanish.
fn sparse_product(sigma: &DMatrix<f64>, z: &DVector<f64>, jac: &DMatrix<f64>) -> DMatrix<f64> {
    let k = z.len();
    let m = jac.ncols();
    let mut out = DMatrix::zeros(k, m + 1);
    for c in 0..k {
        let zc = z[c];
        let active = zc != 0.0 || (0..m).any(|a| jac[(c, a)] != 0.0);
        if !active {
            continue;
        }
        let col = sigma.column(c);
        out.column_mut(0).axpy(zc, &col, 1.0);
        for a in 0..m {
            let v = jac[(c, a)];
            if v != 0.0 {
                out.column_mut(a + 1).axpy(v, &col, 1.0);
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TaylorMoments {
    pub z0: DVector<f64>,
    pub eb: DVector<f64>,
    pub jl: DMatrix<f64>,
    pub clamped: usize,
}

impl TaylorMoments {
    pub fn ebb(&self) -> DMatrix<f64> {
        &self.eb * self.eb.transpose() + &self.jl * self.jl.transpose()
    }
}

#[derive(Debug, Clone)]
pub struct LaplaceFit {
    pub mode: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub cov: DMatrix<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    /// The negative Hessian had to be shifted to become positive definite.
    pub regularized: bool,
    expansion: Expansion,
}

impl LaplaceFit {
    /// Taylor moments at the mode under the Laplace covariance.
    pub fn moments(&self, ctx: &ScoreContext) -> Result<TaylorMoments> {
        ctx.moments(&self.expansion, &self.cov)
    }
}

/// Maximizes `log q(ξ)` from `start` by damped Newton steps, falling back
/// to gradient ascent where the Hessian is not negative definite.
pub fn laplace_fit(ctx: &ScoreContext, s: &SubjectTerms, start: &DVector<f64>, opts: &NewtonOptions) -> Result<LaplaceFit> {
    let mut xi = start.clone();
    let mut ev = ctx.evaluate(s, &xi)?;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        if ev.grad.amax() < opts.grad_tol {
            break;
        }
        iterations += 1;
        let neg = -&ev.hess;
        let (dir, newton) = match neg.clone().cholesky() {
            Some(ch) => (ch.solve(&ev.grad), true),
            None => {
                // scale the ascent direction by the prior curvature
                let p = ctx.prior_precision(s);
                let d = p.trace() / p.nrows() as f64;
                (&ev.grad / d, false)
            }
        };
        // Below rounding level of the objective the line search cannot
        // tell steps apart, so trust the quadratic model.
        if newton && ev.grad.dot(&dir) <= 1e-12 * ev.value.abs().max(1.0) {
            let cand = ctx.evaluate(s, &(&xi + &dir))?;
            if !(cand.grad.amax() < ev.grad.amax()) {
                break;
            }
            xi += dir;
            ev = cand;
            continue;
        }
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..=opts.max_halvings {
            let cand = &xi + &dir * step;
            let v = ctx.value(s, &cand)?;
            if v.is_finite() && v >= ev.value {
                xi = cand;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
        ev = ctx.evaluate(s, &xi)?;
    }
    if !ev.value.is_finite() || ev.grad.iter().any(|g| !g.is_finite()) {
        return Err(FgamError::numerical("Laplace score update", "objective is not finite at the mode"));
    }
    let mut precision = -&ev.hess;
    let mut regularized = false;
    let chol = match precision.clone().cholesky() {
        Some(ch) => ch,
        None => {
            // Raise eigenvalues to the curvature of the score prior and
            // trajectory likelihood, which bounds the approximation's spread.
            regularized = true;
            let floor = ctx.prior_precision(s).symmetric_eigenvalues().min();
            let eig = precision.clone().symmetric_eigen();
            let vals = eig.eigenvalues.map(|v| v.max(floor));
            precision = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
            precision = (&precision + precision.transpose()) * 0.5;
            precision
                .clone()
                .cholesky()
                .ok_or_else(|| FgamError::numerical("Laplace score update", "precision cannot be regularized"))?
        }
    };
    let cov = chol.inverse();
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(LaplaceFit {
        mode: xi,
        precision,
        cov,
        iterations,
        grad_norm: ev.grad.amax(),
        regularized,
        expansion: ev.expansion,
    })
}
