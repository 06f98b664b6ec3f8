//! Shared helpers for the integration suites.
//!
//! The centerpiece is [`log_target`]: an independent, brute-force
//! evaluation of the log density each Gibbs block conditions on. It shares
//! nothing with the sampler's incremental algebra (no caches, no
//! sufficient statistics, no precision matrices), so agreement between
//! conditional-kernel differences and joint-density differences is real
//! evidence the update formulas are right.

#![allow(dead_code)] // each integration test binary uses a subset

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use fosr::{BasisSystem, ChainState, CurvePanel, FpcaResult, Grid, PriorConfig};

/// Which blocks' priors carry the measurement-error variance as a factor.
///
/// The coefficient blocks (`b_m`, `c_r`, and the `tau2`/`lambda_R^2`
/// hierarchy above them) condition on a density whose coefficient priors
/// scale with `sigma2`; the `sigma2` block itself conditions on the
/// likelihood times its Jeffreys prior with the coefficient priors held at
/// fixed scale. `log_target` makes that explicit instead of hiding it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorScaling {
    /// Coefficient priors `b_m ~ N(0, sigma2 tau2_m I)` and
    /// `c_r ~ N(0, sigma2 c_scale I)`.
    CoefPriorsShareSigma2,
    /// Coefficient priors `b_m ~ N(0, tau2_m I)`, `c_r ~ N(0, c_scale I)`.
    CoefPriorsFixedScale,
}

/// Log target density (up to constants independent of every unknown).
///
/// Terms:
/// - Gaussian likelihood of all `I*J*K` observations around the fitted
///   surface `sum_m x_im beta_m(t) + sum_r w_ir C_r(t) + sum_l zeta_ijl psi_l(t)`;
/// - Gaussian priors on each `b_m` (variance `tau2_m`, optionally times
///   `sigma2`) and each `c_r` (variance `c_scale`, optionally times `sigma2`);
/// - `tau2_m ~ Gamma((v+1)/2, rate v lambda_R^2 / 2)` mixing priors;
/// - `lambda_R^2 ~ Gamma(alpha1_r, rate alpha2_r)`;
/// - `zeta_ijl ~ N(0, lambda_l)` score priors;
/// - `lambda_l ~ InvGamma(alpha1_l, alpha2_l)`;
/// - Jeffreys `1/sigma2`.
pub fn log_target(
    panel: &CurvePanel,
    basis: &BasisSystem,
    psi: &DMatrix<f64>,
    priors: &PriorConfig,
    state: &ChainState,
    scaling: PriorScaling,
) -> f64 {
    let (i_n, j_n, k_n) = (panel.n_subjects(), panel.n_visits(), panel.n_grid());
    let p = panel.n_predictors();
    let q = panel.n_covariates();
    let v = basis.n_basis();
    let l_n = psi.ncols();
    let phi = basis.phi();

    // Likelihood.
    let mut rss = 0.0;
    for i in 0..i_n {
        for j in 0..j_n {
            let row = i * j_n + j;
            for k in 0..k_n {
                let mut mu = 0.0;
                for m in 0..p {
                    let mut beta_mk = 0.0;
                    for s in 0..v {
                        beta_mk += state.b[(m, s)] * phi[(k, s)];
                    }
                    mu += panel.predictor(m)[i] * beta_mk;
                }
                for r in 0..q {
                    let mut c_rk = 0.0;
                    for s in 0..v {
                        c_rk += state.c[(r, s)] * phi[(k, s)];
                    }
                    mu += panel.covariate(r)[i] * c_rk;
                }
                for l in 0..l_n {
                    mu += state.zeta[(row, l)] * psi[(k, l)];
                }
                let e = panel.y(i, j, k) - mu;
                rss += e * e;
            }
        }
    }
    let n_obs = (i_n * j_n * k_n) as f64;
    let mut lp = -0.5 * n_obs * state.sigma2.ln() - rss / (2.0 * state.sigma2);

    // Coefficient priors.
    let coef_sigma2 = match scaling {
        PriorScaling::CoefPriorsShareSigma2 => state.sigma2,
        PriorScaling::CoefPriorsFixedScale => 1.0,
    };
    for m in 0..p {
        let norm2: f64 = (0..v).map(|s| state.b[(m, s)] * state.b[(m, s)]).sum();
        let var = coef_sigma2 * state.tau2[m];
        lp += -0.5 * v as f64 * var.ln() - norm2 / (2.0 * var);
    }
    for r in 0..q {
        let norm2: f64 = (0..v).map(|s| state.c[(r, s)] * state.c[(r, s)]).sum();
        let var = coef_sigma2 * priors.c_scale;
        lp += -0.5 * v as f64 * var.ln() - norm2 / (2.0 * var);
    }

    // Latent group-scale hierarchy.
    let gamma_shape = (v as f64 + 1.0) / 2.0;
    for m in 0..p {
        let rate = v as f64 * state.lambda_r2 / 2.0;
        lp += gamma_shape * rate.ln() + (gamma_shape - 1.0) * state.tau2[m].ln()
            - rate * state.tau2[m];
    }
    lp += (priors.alpha1_r - 1.0) * state.lambda_r2.ln() - priors.alpha2_r * state.lambda_r2;

    // Scores and their variances.
    for l in 0..l_n {
        let mut sum2 = 0.0;
        for row in 0..i_n * j_n {
            let z = state.zeta[(row, l)];
            sum2 += z * z;
        }
        lp += -0.5 * (i_n * j_n) as f64 * state.lambdas[l].ln() - sum2 / (2.0 * state.lambdas[l]);
        lp += -(priors.alpha1_l + 1.0) * state.lambdas[l].ln() - priors.alpha2_l / state.lambdas[l];
    }

    // Jeffreys prior on the measurement-error variance.
    lp += -state.sigma2.ln();
    lp
}

/// A deterministic random panel: genotype-like discrete predictors
/// interleaved with continuous ones, optional extra covariates, and pure
/// white-noise responses.
pub fn random_panel(
    seed: u64,
    i_n: usize,
    j_n: usize,
    k_n: usize,
    p: usize,
    extra_covariates: usize,
) -> CurvePanel {
    let mut rng = StdRng::seed_from_u64(seed);
    let grid = Grid::new((0..k_n).map(|k| k as f64 / (k_n - 1) as f64).collect()).unwrap();
    let predictors: Vec<(String, Vec<f64>)> = (0..p)
        .map(|m| {
            let mut column: Vec<f64> = (0..i_n)
                .map(|_| {
                    if m % 2 == 0 {
                        [-1.0, 0.0, 1.0][rng.random_range(0..3)]
                    } else {
                        rng.sample::<f64, _>(StandardNormal)
                    }
                })
                .collect();
            if column.iter().all(|&x| x == 0.0) {
                column[0] = 1.0;
            }
            (format!("x{m}"), column)
        })
        .collect();
    let covariates: Vec<(String, Vec<f64>)> = (0..extra_covariates)
        .map(|r| {
            (
                format!("w{r}"),
                (0..i_n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            )
        })
        .collect();
    let y: Vec<f64> = (0..i_n * j_n * k_n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    CurvePanel::new(grid, i_n, j_n, y, predictors, covariates).unwrap()
}

/// A synthetic eigensystem for conditioning tests (columns are not
/// orthonormal — nothing in the conditionals requires that).
pub fn random_fpca(seed: u64, k_n: usize, l_n: usize) -> FpcaResult {
    let mut rng = StdRng::seed_from_u64(seed);
    FpcaResult {
        psi: DMatrix::from_fn(k_n, l_n, |_, _| rng.sample::<f64, _>(StandardNormal)),
        lambdas: (0..l_n).map(|l| 1.0 / (l + 1) as f64).collect(),
        explained: vec![1.0 / l_n as f64; l_n],
    }
}

/// A random but valid chain state for the given shapes.
pub fn random_state(
    rng: &mut StdRng,
    p: usize,
    q: usize,
    v: usize,
    n_score_rows: usize,
    l_n: usize,
) -> ChainState {
    ChainState {
        b: DMatrix::from_fn(p, v, |_, _| rng.sample::<f64, _>(StandardNormal)),
        c: DMatrix::from_fn(q, v, |_, _| rng.sample::<f64, _>(StandardNormal)),
        tau2: (0..p).map(|_| 0.2 + 2.0 * rng.random::<f64>()).collect(),
        lambda_r2: 0.3 + rng.random::<f64>(),
        zeta: DMatrix::from_fn(n_score_rows, l_n, |_, _| rng.sample::<f64, _>(StandardNormal)),
        lambdas: (0..l_n).map(|_| 0.3 + rng.random::<f64>()).collect(),
        sigma2: 0.5 + rng.random::<f64>(),
    }
}

/// `|a - b| <= tol * max(1, |a|, |b|)` — absolute near zero, relative
/// for large magnitudes.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
