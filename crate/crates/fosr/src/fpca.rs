//! Covariance estimation for the visit-level random process: empirical
//! residual covariance, sandwich smoothing with GCV-chosen penalty, and
//! eigendecomposition with variance-share truncation.
//!
//! The smoother is a univariate cubic P-spline `S` (second-order difference
//! penalty on the coefficients) applied to both sides of the raw covariance,
//! `G_hat = S C S'`. Smoothing both margins with the same `S` keeps the
//! result symmetric and makes generalized cross-validation a one-dimensional
//! search: the bivariate effective dimension is `tr(S)^2`. GCV is scored on
//! the off-diagonal entries only — the diagonal of a residual covariance is
//! inflated by the measurement-error nugget, which is not part of the smooth
//! surface and would otherwise drag the criterion toward undersmoothing.
//!
//! Eigenvectors are rescaled by `sqrt(K)` (and eigenvalues by `1/K`) so that
//! eigenfunction columns are orthonormal under the discrete inner product
//! `<f,g> = (1/K) sum_k f(t_k) g(t_k)`, matching the continuous-time
//! normalization `int phi_l^2 = 1`.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::basis::{build_basis, BasisError};
use crate::panel::{CurvePanel, Grid};

#[derive(Debug, Error)]
pub enum FpcaError {
    #[error("fitted array has length {got}, expected I*J*K = {expected}")]
    FittedLength { expected: usize, got: usize },
    #[error("covariance matrix is {rows} x {cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("covariance matrix is not symmetric (max asymmetry {0})")]
    NotSymmetric(f64),
    #[error("smoother basis: {0}")]
    SmootherBasis(#[from] BasisError),
    #[error("smoother dimension {dim} invalid for K = {k} (need 4 <= dim <= K)")]
    SmootherDim { dim: usize, k: usize },
    #[error("covariance surface has no positive eigenvalues")]
    DegenerateCovariance,
    #[error("variance thresholds must satisfy 0 < tau_incr < tau_total <= 1, got ({tau_total}, {tau_incr})")]
    BadThresholds { tau_total: f64, tau_incr: f64 },
}

/// A smoothed covariance surface with its nugget estimate.
#[derive(Debug, Clone)]
pub struct CovarianceSurface {
    /// The empirical input covariance.
    pub raw: DMatrix<f64>,
    /// Smoothed, symmetrized, PSD-projected surface.
    pub g_hat: DMatrix<f64>,
    /// GCV-selected smoothing parameter.
    pub lambda_smooth: f64,
    /// Measurement-error variance estimate: mean raw-vs-smoothed diagonal
    /// gap (before PSD projection), clamped at zero.
    pub sigma2_nugget: f64,
}

/// Eigenfunctions and eigenvalues retained after truncation.
#[derive(Debug, Clone)]
pub struct FpcaResult {
    /// `K x L`; columns orthonormal under the `(1/K)`-weighted inner product.
    pub psi: DMatrix<f64>,
    /// Eigenvalues on the function scale (surface eigenvalues / K), descending.
    pub lambdas: Vec<f64>,
    /// Share of the positive spectrum explained by each retained component.
    pub explained: Vec<f64>,
}

impl FpcaResult {
    pub fn n_components(&self) -> usize {
        self.lambdas.len()
    }
}

/// Empirical covariance of visit-level residuals:
/// `C[k1,k2] = (1/(IJ)) sum_ij r_ijk1 r_ijk2` with `r = y - fitted_fixed`.
pub fn empirical_residual_cov(
    panel: &CurvePanel,
    fitted_fixed: &[f64],
) -> Result<DMatrix<f64>, FpcaError> {
    let (i_n, j_n, k_n) = (panel.n_subjects(), panel.n_visits(), panel.n_grid());
    let expected = i_n * j_n * k_n;
    if fitted_fixed.len() != expected {
        return Err(FpcaError::FittedLength {
            expected,
            got: fitted_fixed.len(),
        });
    }
    let mut resid = DMatrix::zeros(i_n * j_n, k_n);
    for i in 0..i_n {
        for j in 0..j_n {
            let row = i * j_n + j;
            let curve = panel.curve(i, j);
            let base = row * k_n;
            for k in 0..k_n {
                resid[(row, k)] = curve[k] - fitted_fixed[base + k];
            }
        }
    }
    Ok(resid.tr_mul(&resid) / (i_n * j_n) as f64)
}

/// Default smoother dimension: `min(35, K/2)`, floored at the cubic minimum.
pub fn default_smoother_dim(k: usize) -> usize {
    (k / 2).min(35).max(4).min(k)
}

/// Second-order difference penalty `D2' D2` for `dim` coefficients.
fn second_difference_penalty(dim: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(dim, dim);
    if dim < 3 {
        return p;
    }
    for r in 0..dim - 2 {
        let idx = [r, r + 1, r + 2];
        let coef = [1.0, -2.0, 1.0];
        for a in 0..3 {
            for b in 0..3 {
                p[(idx[a], idx[b])] += coef[a] * coef[b];
            }
        }
    }
    p
}

/// Smooths a raw covariance matrix from both sides with a penalized cubic
/// B-spline smoother, choosing the penalty by GCV over 20 log-spaced values
/// in `[1e-4, 1e4]` (ties broken toward heavier smoothing). The smoothed
/// surface is symmetrized and projected to the PSD cone by clipping negative
/// eigenvalues; the diagonal gap before projection estimates the nugget.
pub fn sandwich_smooth(raw: &DMatrix<f64>, basis_dim: usize) -> Result<CovarianceSurface, FpcaError> {
    let (rows, cols) = raw.shape();
    if rows != cols {
        return Err(FpcaError::NotSquare { rows, cols });
    }
    let k = rows;
    let mut max_asym = 0.0f64;
    for a in 0..k {
        for b in (a + 1)..k {
            max_asym = max_asym.max((raw[(a, b)] - raw[(b, a)]).abs());
        }
    }
    let scale = raw.amax().max(1e-12);
    if max_asym > 1e-8 * scale {
        return Err(FpcaError::NotSymmetric(max_asym));
    }
    if basis_dim < 4 || basis_dim > k {
        return Err(FpcaError::SmootherDim { dim: basis_dim, k });
    }

    // The smoother operates on grid *positions*, so an affine-standard
    // midpoint grid serves regardless of the panel's actual t-range.
    let grid = Grid::midpoints(k);
    let sb = build_basis(&grid, 3, &crate::basis::default_knots(basis_dim - 4))?;
    let c = sb.phi(); // K x dim
    let ctc = sb.ptp().clone();
    let pen = second_difference_penalty(basis_dim);

    let mut best: Option<(f64, f64, DMatrix<f64>, f64)> = None; // (gcv, lambda, fit, trace)
    for step in 0..20 {
        let lambda = 10f64.powf(-4.0 + 8.0 * step as f64 / 19.0);
        let mut m = &ctc + &pen * lambda;
        // trace-scaled jitter keeps the factorization stable at tiny lambda
        let jitter = 1e-12 * ctc.trace() / basis_dim as f64;
        for d in 0..basis_dim {
            m[(d, d)] += jitter;
        }
        let chol = match nalgebra::Cholesky::new(m) {
            Some(c) => c,
            None => continue,
        };
        let h = chol.solve(&c.transpose()); // dim x K
        let s = c * &h; // K x K smoother matrix
        let trace = s.trace();
        let fit = &s * raw * s.transpose();
        let mut ssr_off = 0.0;
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    let r = raw[(a, b)] - fit[(a, b)];
                    ssr_off += r * r;
                }
            }
        }
        let denom = 1.0 - (trace * trace) / (k * k) as f64;
        if denom <= 0.0 {
            continue;
        }
        let gcv = ssr_off / ((k * k - k) as f64 * denom * denom);
        let better = match &best {
            None => true,
            Some((best_gcv, ..)) => gcv <= *best_gcv,
        };
        if better {
            best = Some((gcv, lambda, fit, trace));
        }
    }
    let (_, lambda_smooth, fit, _) = best.ok_or(FpcaError::DegenerateCovariance)?;

    let mut smooth = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            smooth[(a, b)] = 0.5 * (fit[(a, b)] + fit[(b, a)]);
        }
    }
    let diag_gap: f64 = (0..k).map(|d| raw[(d, d)] - smooth[(d, d)]).sum::<f64>() / k as f64;
    let sigma2_nugget = diag_gap.max(0.0);

    // PSD projection by eigenvalue clipping.
    let eig = SymmetricEigen::new(smooth);
    let mut g_hat = DMatrix::zeros(k, k);
    for (idx, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > 0.0 {
            let vcol = eig.eigenvectors.column(idx);
            g_hat += vcol * vcol.transpose() * ev;
        }
    }
    // exact symmetry after reconstruction
    for a in 0..k {
        for b in 0..a {
            let m = 0.5 * (g_hat[(a, b)] + g_hat[(b, a)]);
            g_hat[(a, b)] = m;
            g_hat[(b, a)] = m;
        }
    }

    Ok(CovarianceSurface {
        raw: raw.clone(),
        g_hat,
        lambda_smooth,
        sigma2_nugget,
    })
}

/// Eigendecomposes a smoothed surface and truncates by variance share.
///
/// The retained count is the smallest `L` whose cumulative share of the
/// positive spectrum exceeds `tau_total` while every retained component
/// individually explains at least `tau_incr`. When no count satisfies both
/// (a small `tau_incr` trailing tail), the fallback keeps every component
/// explaining at least `tau_incr` (at least one), so the rule stays
/// monotone in `tau_total`.
pub fn eigendecompose_truncate(
    surface: &CovarianceSurface,
    tau_total: f64,
    tau_incr: f64,
) -> Result<FpcaResult, FpcaError> {
    if !(tau_incr > 0.0 && tau_incr < tau_total && tau_total <= 1.0) {
        return Err(FpcaError::BadThresholds { tau_total, tau_incr });
    }
    let k = surface.g_hat.nrows();
    let eig = SymmetricEigen::new(surface.g_hat.clone());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let floor = eig.eigenvalues[order[0]].max(0.0) * 1e-12;
    let positive: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&idx| eig.eigenvalues[idx] > floor && eig.eigenvalues[idx] > 0.0)
        .collect();
    if positive.is_empty() {
        return Err(FpcaError::DegenerateCovariance);
    }
    let total: f64 = positive.iter().map(|&idx| eig.eigenvalues[idx]).sum();
    let shares: Vec<f64> = positive
        .iter()
        .map(|&idx| eig.eigenvalues[idx] / total)
        .collect();

    let mut chosen = None;
    let mut cum = 0.0;
    for l in 1..=positive.len() {
        cum += shares[l - 1];
        if cum > tau_total && shares[l - 1] >= tau_incr {
            chosen = Some(l);
            break;
        }
        if shares[l - 1] < tau_incr {
            // shares are descending; no larger L can satisfy both conditions
            break;
        }
    }
    let l = chosen.unwrap_or_else(|| shares.iter().take_while(|&&s| s >= tau_incr).count().max(1));

    let kf = k as f64;
    let sqrt_k = kf.sqrt();
    let mut psi = DMatrix::zeros(k, l);
    let mut lambdas = Vec::with_capacity(l);
    for (out_col, &idx) in positive.iter().take(l).enumerate() {
        let vcol = eig.eigenvectors.column(idx);
        // deterministic sign: the entry of largest magnitude is positive
        let mut lead = 0;
        for r in 1..k {
            if vcol[r].abs() > vcol[lead].abs() {
                lead = r;
            }
        }
        let sign = if vcol[lead] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..k {
            psi[(r, out_col)] = sign * vcol[r] * sqrt_k;
        }
        lambdas.push(eig.eigenvalues[idx] / kf);
    }

    Ok(FpcaResult {
        psi,
        lambdas,
        explained: shares[..l].to_vec(),
    })
}
