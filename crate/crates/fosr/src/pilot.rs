//! Ridge-penalized least-squares fit of the fixed-effect part of the model.
//!
//! Fits all selected predictor columns plus every covariate with functional
//! coefficients `Phi * theta_g`, minimizing
//!
//! ```text
//! sum_ij || y_ij - Phi Theta' z_i ||^2 + delta ||Theta||_F^2
//! ```
//!
//! The normal equations have the two-sided form `A Theta B + delta Theta = R`
//! with `A = J Z'Z` and `B = Phi'Phi`, which is solved exactly by
//! diagonalizing the small `v x v` matrix `B` and back-substituting one
//! Cholesky solve per basis direction. This keeps the cost at
//! `O(v (p+q)^3 / 3)` instead of an `O(((p+q) v)^3)` dense solve.
//!
//! The result seeds the Gibbs chain, produces residuals for covariance
//! estimation, and serves as the refit engine for BIC model scans.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::basis::BasisSystem;
use crate::panel::CurvePanel;

#[derive(Debug, Error)]
pub enum PilotError {
    #[error("predictor column {col} out of range (p = {p})")]
    ColumnOutOfRange { col: usize, p: usize },
    #[error("panel grid has {panel} points but basis was built on {basis}")]
    GridMismatch { panel: usize, basis: usize },
    #[error("ridge system is not positive definite (ridge = {ridge})")]
    NotPositiveDefinite { ridge: f64 },
    #[error("ridge proportion must be positive and finite, got {0}")]
    InvalidRidge(f64),
}

/// A fitted fixed-effect model over a column subset.
#[derive(Debug, Clone)]
pub struct PilotFit {
    /// Coefficient rows for the selected predictor columns, `s x v`.
    pub coef_x: DMatrix<f64>,
    /// Coefficient rows for the covariates (intercept first), `q x v`.
    pub coef_w: DMatrix<f64>,
    /// The predictor columns that were fitted, in `coef_x` row order.
    pub x_cols: Vec<usize>,
    /// Fixed-effect fitted curve per subject, `I x K` (identical across
    /// visits by construction).
    pub fitted_subject: DMatrix<f64>,
    /// Residual sum of squares against the fixed part alone.
    pub rss_fixed: f64,
    /// The absolute ridge value actually applied.
    pub ridge: f64,
}

impl PilotFit {
    /// Expands the per-subject fitted curves to a flat `(i, j, k)` array.
    pub fn fitted_visits(&self, n_visits: usize) -> Vec<f64> {
        let (i_n, k_n) = self.fitted_subject.shape();
        let mut out = Vec::with_capacity(i_n * n_visits * k_n);
        for i in 0..i_n {
            for _ in 0..n_visits {
                for k in 0..k_n {
                    out.push(self.fitted_subject[(i, k)]);
                }
            }
        }
        out
    }
}

/// Fits the ridge model over `x_cols` (plus all covariates, always).
///
/// `ridge_rel` scales the absolute ridge as
/// `delta = ridge_rel * tr(A) tr(B) / ((s+q) v)`, a trace-calibrated value
/// that is negligible against the data term yet keeps the system
/// invertible when `s + q` exceeds the subject count.
pub fn ridge_fit(
    panel: &CurvePanel,
    basis: &BasisSystem,
    x_cols: &[usize],
    ridge_rel: f64,
) -> Result<PilotFit, PilotError> {
    if !(ridge_rel > 0.0) || !ridge_rel.is_finite() {
        return Err(PilotError::InvalidRidge(ridge_rel));
    }
    let k = panel.n_grid();
    if basis.grid().len() != k {
        return Err(PilotError::GridMismatch {
            panel: k,
            basis: basis.grid().len(),
        });
    }
    let p = panel.n_predictors();
    for &col in x_cols {
        if col >= p {
            return Err(PilotError::ColumnOutOfRange { col, p });
        }
    }
    let i_n = panel.n_subjects();
    let j_n = panel.n_visits();
    let q = panel.n_covariates();
    let s = x_cols.len();
    let g = s + q;
    let v = basis.n_basis();

    // Z = [X_sel | W], I x g, column-major assembly.
    let mut z = DMatrix::zeros(i_n, g);
    for (gi, &col) in x_cols.iter().enumerate() {
        let src = panel.predictor(col);
        for i in 0..i_n {
            z[(i, gi)] = src[i];
        }
    }
    for r in 0..q {
        let src = panel.covariate(r);
        for i in 0..i_n {
            z[(i, s + r)] = src[i];
        }
    }

    // Visit-summed responses SY (I x K), then R = Z' (SY Phi).
    let mut sy = DMatrix::zeros(i_n, k);
    for i in 0..i_n {
        for j in 0..j_n {
            let curve = panel.curve(i, j);
            for (kk, &val) in curve.iter().enumerate() {
                sy[(i, kk)] += val;
            }
        }
    }
    let sy_phi = &sy * basis.phi(); // I x v
    let rhs = z.tr_mul(&sy_phi); // g x v

    let a = z.tr_mul(&z) * j_n as f64; // g x g
    let b = basis.ptp().clone(); // v x v
    let tr_a: f64 = (0..g).map(|d| a[(d, d)]).sum();
    let tr_b: f64 = (0..v).map(|d| b[(d, d)]).sum();
    let ridge = ridge_rel * tr_a * tr_b / (g as f64 * v as f64);
    let ridge = if ridge > 0.0 { ridge } else { ridge_rel };

    // Diagonalize B = Q L Q'; then each transformed column solves
    // (l_s A + ridge I) theta_s = rhs_s independently.
    let eig = SymmetricEigen::new(b);
    let q_b = eig.eigenvectors;
    let rhs_t = &rhs * &q_b; // g x v
    let mut theta_t = DMatrix::zeros(g, v);
    for sv in 0..v {
        let lam = eig.eigenvalues[sv].max(0.0);
        let mut m = &a * lam;
        for d in 0..g {
            m[(d, d)] += ridge;
        }
        let chol = nalgebra::Cholesky::new(m)
            .ok_or(PilotError::NotPositiveDefinite { ridge })?;
        let col = rhs_t.column(sv).into_owned();
        let sol = chol.solve(&col);
        theta_t.set_column(sv, &sol);
    }
    let theta = &theta_t * q_b.transpose(); // g x v

    // Fitted curves per subject: F = Z Theta Phi'.
    let fitted_subject = &z * &theta * basis.phi().transpose(); // I x K

    let mut rss_fixed = 0.0;
    for i in 0..i_n {
        for j in 0..j_n {
            let curve = panel.curve(i, j);
            for (kk, &val) in curve.iter().enumerate() {
                let r = val - fitted_subject[(i, kk)];
                rss_fixed += r * r;
            }
        }
    }

    let coef_x = theta.rows(0, s).into_owned();
    let coef_w = theta.rows(s, q).into_owned();
    Ok(PilotFit {
        coef_x,
        coef_w,
        x_cols: x_cols.to_vec(),
        fitted_subject,
        rss_fixed,
        ridge,
    })
}
