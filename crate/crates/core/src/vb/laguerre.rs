//! Generalized Gauss-Laguerre quadrature and the smoothing-parameter
//! moments computed with it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

use crate::error::{FgamError, Result};

/// Nodes and weights for `∫ p(x) x^α e^{-x} dx ≈ Σ w_g p(g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaguerreRule {
    pub alpha: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
}

/// `(L_n(x), L_{n-1}(x))` by the three-term recurrence.
fn laguerre_pair(n: usize, alpha: f64, x: f64) -> (f64, f64) {
    let mut prev = 1.0;
    let mut cur = 1.0 + alpha - x;
    if n == 0 {
        return (prev, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + alpha - x) * cur - (kf + alpha) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Golub-Welsch starting values polished by Newton steps on `L_G`; weights
/// from the closed form in `L_{G+1}`, kept in log space as well.
pub fn gauss_laguerre(g: usize, alpha: f64) -> Result<LaguerreRule> {
    if g == 0 {
        return Err(FgamError::invalid("Gauss-Laguerre rule needs at least one node"));
    }
    if !(alpha > -1.0) || !alpha.is_finite() {
        return Err(FgamError::invalid(format!("Gauss-Laguerre exponent must exceed -1, got {alpha}")));
    }
    let mut jac = DMatrix::zeros(g, g);
    for k in 0..g {
        jac[(k, k)] = 2.0 * k as f64 + alpha + 1.0;
        if k + 1 < g {
            let b = ((k + 1) as f64 * (k as f64 + 1.0 + alpha)).sqrt();
            jac[(k, k + 1)] = b;
            jac[(k + 1, k)] = b;
        }
    }
    let mut nodes: Vec<f64> = SymmetricEigen::new(jac).eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    let n = g as f64;
    for x in nodes.iter_mut() {
        for _ in 0..100 {
            let (ln, lm) = laguerre_pair(g, alpha, *x);
            let d = (n * ln - (n + alpha) * lm) / *x;
            let step = ln / d;
            *x -= step;
            if step.abs() <= 1e-15 * x.abs() {
                break;
            }
        }
    }
    let log_const = ln_gamma(n + alpha + 1.0) - ln_gamma(n + 1.0) - 2.0 * (n + 1.0).ln();
    let mut log_weights = Vec::with_capacity(g);
    for &x in &nodes {
        if !(x > 0.0 && x.is_finite()) {
            return Err(FgamError::numerical("Gauss-Laguerre rule", format!("invalid node {x}")));
        }
        let (l_next, _) = laguerre_pair(g + 1, alpha, x);
        log_weights.push(log_const + x.ln() - 2.0 * l_next.abs().ln());
    }
    let weights = log_weights.iter().map(|l| l.exp()).collect();
    Ok(LaguerreRule {
        alpha,
        nodes,
        weights,
        log_weights,
    })
}

/// Moments of `q(λ) ∝ λ^{a_l+1} e^{-rate λ} |λΨ + λ_o Ψ_o|^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaMoments {
    pub mean: f64,
    pub mean_log: f64,
    /// Log of the normalizing constant `∫ q̃(λ) dλ`.
    pub log_norm: f64,
    pub rate: f64,
}

/// Quadrature for the density above. The substitution `x = rate·λ` turns
/// the Gamma kernel into the rule's weight function, so the rule must have
/// `alpha = a_l + 1`.
pub fn lambda_moments(
    rule: &LaguerreRule,
    psi: &DVector<f64>,
    psi_other: &DVector<f64>,
    lambda_other: f64,
    rate: f64,
) -> Result<LambdaMoments> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(FgamError::numerical("lambda update", format!("rate {rate} is not positive")));
    }
    let ell: Vec<f64> = rule
        .nodes
        .iter()
        .zip(&rule.log_weights)
        .map(|(&g, &lw)| {
            let lam = g / rate;
            let det: f64 = psi
                .iter()
                .zip(psi_other.iter())
                .map(|(p, q)| (lam * p + lambda_other * q).ln())
                .sum();
            lw + 0.5 * det
        })
        .collect();
    let m = ell.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(FgamError::numerical("lambda update", "every quadrature term underflowed"));
    }
    let (mut s0, mut s1, mut sl) = (0.0, 0.0, 0.0);
    for (&g, &l) in rule.nodes.iter().zip(&ell) {
        let w = (l - m).exp();
        let lam = g / rate;
        s0 += w;
        s1 += w * lam;
        sl += w * lam.ln();
    }
    let alpha = rule.alpha;
    Ok(LambdaMoments {
        mean: s1 / s0,
        mean_log: sl / s0,
        log_norm: m + s0.ln() - (alpha + 1.0) * rate.ln(),
        rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_node() {
        let r = gauss_laguerre(1, 0.0).unwrap();
        assert!((r.nodes[0] - 1.0).abs() < 1e-14);
        assert!((r.weights[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_nodes_integrate_x() {
        let r = gauss_laguerre(2, 0.0).unwrap();
        let v: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x).sum();
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn weights_sum_to_gamma() {
        let alpha = 1.01;
        let r = gauss_laguerre(25, alpha).unwrap();
        let s: f64 = r.weights.iter().sum();
        let g = ln_gamma(alpha + 1.0).exp();
        assert!((s - g).abs() < 1e-10 * g);
    }

    #[test]
    fn rejects_bad_exponent() {
        assert!(gauss_laguerre(5, -1.0).is_err());
        assert!(gauss_laguerre(0, 0.0).is_err());
    }

    #[test]
    fn reduced_case_is_gamma() {
        let a_l = 0.3;
        let rule = gauss_laguerre(25, a_l + 1.0).unwrap();
        let m = 6;
        let psi = DVector::from_element(m, 1.0);
        let other = DVector::zeros(m);
        let rate = 2.5;
        let mo = lambda_moments(&rule, &psi, &other, 1.0, rate).unwrap();
        let shape = a_l + 2.0 + m as f64 / 2.0;
        assert!((mo.mean - shape / rate).abs() < 1e-8);
        let big = lambda_moments(&rule, &psi, &other, 1.0, rate * 1e6).unwrap();
        assert!((big.mean - mo.mean / 1e6).abs() < 1e-12 * mo.mean);
        let lnc = ln_gamma(shape) - shape * rate.ln();
        assert!((mo.log_norm - lnc).abs() < 1e-8);
    }
}
