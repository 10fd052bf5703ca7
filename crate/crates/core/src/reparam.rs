//! Mixed-model form of the anisotropic tensor-product penalty.
//!
//! Coefficients are stored x-outer, t-inner: `θ[j * K_t + k]` multiplies
//! `B^X_j(x) B^T_k(t)`. The marginal grams are diagonalized simultaneously so
//! that `θ = T0 β + Tp δ` with `β` unpenalized and `δ` carrying the diagonal
//! penalty `λ_x Ψ_x + λ_t Ψ_t`.

use nalgebra::{DMatrix, DVector};

use crate::basis::DifferencePenalty;
use crate::error::{check_len, FgamError, Result};

/// Relative size below which a marginal eigenvalue is treated as zero.
const ZERO_EIGEN: f64 = 1e-10;

/// Kronecker-form penalty matrices on the tensor coefficients.
#[derive(Debug, Clone)]
pub struct PenaltyPair {
    pub px: DMatrix<f64>,
    pub pt: DMatrix<f64>,
}

impl PenaltyPair {
    pub fn combined(&self, lambda_x: f64, lambda_t: f64) -> DMatrix<f64> {
        &self.px * lambda_x + &self.pt * lambda_t
    }
}

/// `P_x = DᵀD_x ⊗ I_Kt` and `P_t = I_Kx ⊗ DᵀD_t`.
pub fn build_penalties(gram_x: &DMatrix<f64>, gram_t: &DMatrix<f64>) -> PenaltyPair {
    let ix = DMatrix::identity(gram_x.nrows(), gram_x.nrows());
    let it = DMatrix::identity(gram_t.nrows(), gram_t.nrows());
    PenaltyPair {
        px: gram_x.kronecker(&it),
        pt: ix.kronecker(gram_t),
    }
}

/// Spectral decomposition of a symmetric PSD matrix with eigenvalues sorted
/// in descending order (ties by original index) and each eigenvector signed
/// so that its largest-magnitude entry is positive.
fn sorted_eigen(m: &DMatrix<f64>, what: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(FgamError::invalid(format!("{what} gram is not square")));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(FgamError::invalid(format!("{what} gram is not symmetric")));
    }
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let max = eig.eigenvalues[order[0]];
    let min = eig.eigenvalues[order[n - 1]];
    if !(max > 0.0) || min < -1e-8 * max {
        return Err(FgamError::invalid(format!(
            "{what} gram is not positive semidefinite (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &o) in order.iter().enumerate() {
        let v = eig.eigenvalues[o];
        values[c] = if v < ZERO_EIGEN * max { 0.0 } else { v };
        let mut col = eig.eigenvectors.column(o).into_owned();
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(c, &col);
    }
    Ok((values, vectors))
}

/// Transform between the tensor coefficients and the (β, δ) mixed-model
/// coordinates.
#[derive(Debug, Clone)]
pub struct ReparamBasis {
    kx: usize,
    kt: usize,
    /// Columns spanning the penalty nullspace.
    pub t0: DMatrix<f64>,
    /// Columns of the penalized part, scaled by `S̃^{-1/2}`.
    pub tp: DMatrix<f64>,
    /// Diagonal of `Ψ_x`.
    pub psi_x: DVector<f64>,
    /// Diagonal of `Ψ_t`.
    pub psi_t: DVector<f64>,
    /// Positive eigenvalue sums kept by the column selection.
    pub s_tilde: DVector<f64>,
    /// Indices of the tensor eigenbasis kept in the penalized block.
    pub selected: Vec<usize>,
    /// `(V_x ⊗ V_t)`, the joint eigenbasis.
    v: DMatrix<f64>,
}

impl ReparamBasis {
    pub fn from_penalties(px: &DifferencePenalty, pt: &DifferencePenalty) -> Result<Self> {
        Self::diagonalize(&px.gram, &pt.gram)
    }

    /// Simultaneous diagonalization of `DᵀD_x ⊗ I` and `I ⊗ DᵀD_t`.
    pub fn diagonalize(gram_x: &DMatrix<f64>, gram_t: &DMatrix<f64>) -> Result<Self> {
        let (sx, vx) = sorted_eigen(gram_x, "x-penalty")?;
        let (st, vt) = sorted_eigen(gram_t, "t-penalty")?;
        let (kx, kt) = (sx.len(), st.len());
        let v = vx.kronecker(&vt);

        let mut null_x = Vec::new();
        let mut null_t = Vec::new();
        for j in 0..kx {
            if sx[j] == 0.0 {
                null_x.push(j);
            }
        }
        for k in 0..kt {
            if st[k] == 0.0 {
                null_t.push(k);
            }
        }
        if null_x.is_empty() || null_t.is_empty() {
            return Err(FgamError::invalid(
                "marginal penalties must both have a nontrivial nullspace",
            ));
        }

        let mut selected = Vec::with_capacity(kx * kt);
        let mut s_tilde = Vec::with_capacity(kx * kt);
        let mut psi_t = Vec::with_capacity(kx * kt);
        for j in 0..kx {
            for k in 0..kt {
                let s = sx[j] + st[k];
                if s > 0.0 {
                    selected.push(j * kt + k);
                    s_tilde.push(s);
                    psi_t.push(st[k] / s);
                }
            }
        }
        let p = selected.len();

        let vx0 = vx.select_columns(&null_x);
        let vt0 = vt.select_columns(&null_t);
        let t0 = vx0.kronecker(&vt0);

        let mut tp = v.select_columns(&selected);
        for (c, s) in s_tilde.iter().enumerate() {
            tp.column_mut(c).scale_mut(1.0 / s.sqrt());
        }
        let psi_t = DVector::from_vec(psi_t);
        let psi_x = DVector::from_element(p, 1.0) - &psi_t;

        let rb = ReparamBasis {
            kx,
            kt,
            t0,
            tp,
            psi_x,
            psi_t,
            s_tilde: DVector::from_vec(s_tilde),
            selected,
            v,
        };
        if cfg!(debug_assertions) {
            let pen = build_penalties(gram_x, gram_t);
            let err = rb.congruence_error(&pen, 1.3, 0.7);
            debug_assert!(err < 1e-8, "reparameterization congruence error {err:e}");
        }
        Ok(rb)
    }

    pub fn kx(&self) -> usize {
        self.kx
    }

    pub fn kt(&self) -> usize {
        self.kt
    }

    /// Number of tensor coefficients.
    pub fn dim(&self) -> usize {
        self.kx * self.kt
    }

    /// Dimension of the unpenalized block.
    pub fn null_dim(&self) -> usize {
        self.t0.ncols()
    }

    /// Dimension of the penalized block.
    pub fn pen_dim(&self) -> usize {
        self.tp.ncols()
    }

    /// Full transform `T = [T0 : Tp]`.
    pub fn transform(&self) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.dim(), self.dim());
        t.columns_mut(0, self.null_dim()).copy_from(&self.t0);
        t.columns_mut(self.null_dim(), self.pen_dim()).copy_from(&self.tp);
        t
    }

    /// `T⁻¹ = [T0 : (V_x ⊗ V_t) U S̃^{1/2}]ᵀ`.
    pub fn inverse_transform(&self) -> DMatrix<f64> {
        let mut right = self.v.select_columns(&self.selected);
        for (c, s) in self.s_tilde.iter().enumerate() {
            right.column_mut(c).scale_mut(s.sqrt());
        }
        let mut inv_t = DMatrix::zeros(self.dim(), self.dim());
        inv_t.columns_mut(0, self.null_dim()).copy_from(&self.t0);
        inv_t.columns_mut(self.null_dim(), self.pen_dim()).copy_from(&right);
        inv_t.transpose()
    }

    /// Diagonal of `λ_x Ψ_x + λ_t Ψ_t`.
    pub fn penalty_diag(&self, lambda_x: f64, lambda_t: f64) -> DVector<f64> {
        self.psi_x.zip_map(&self.psi_t, |a, b| lambda_x * a + lambda_t * b)
    }

    /// `(zᵀT0, zᵀTp)` for a tensor design row.
    pub fn split_design_row(&self, z: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        check_len("split_design_row", self.dim(), z.len())?;
        let z = DVector::from_column_slice(z);
        Ok((self.t0.tr_mul(&z), self.tp.tr_mul(&z)))
    }

    /// `θ = T0 β + Tp δ`.
    pub fn reconstruct_theta(&self, beta: &DVector<f64>, delta: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("reconstruct_theta beta", self.null_dim(), beta.len())?;
        check_len("reconstruct_theta delta", self.pen_dim(), delta.len())?;
        Ok(&self.t0 * beta + &self.tp * delta)
    }

    /// `(β, δ) = T⁻¹θ`.
    pub fn coordinates(&self, theta: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        check_len("coordinates theta", self.dim(), theta.len())?;
        let bd = self.inverse_transform() * theta;
        let beta = bd.rows(0, self.null_dim()).into_owned();
        let delta = bd.rows(self.null_dim(), self.pen_dim()).into_owned();
        Ok((beta, delta))
    }

    /// Largest deviation of `TᵀP_θT` from `blockdiag(0, λ_xΨ_x + λ_tΨ_t)`.
    pub fn congruence_error(&self, pen: &PenaltyPair, lambda_x: f64, lambda_t: f64) -> f64 {
        let t = self.transform();
        let lhs = t.transpose() * pen.combined(lambda_x, lambda_t) * &t;
        let mut rhs = DMatrix::zeros(self.dim(), self.dim());
        let d = self.penalty_diag(lambda_x, lambda_t);
        for (c, v) in d.iter().enumerate() {
            rhs[(self.null_dim() + c, self.null_dim() + c)] = *v;
        }
        (lhs - rhs).amax()
    }
}
