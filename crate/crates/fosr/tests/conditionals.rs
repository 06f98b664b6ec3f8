//! Per-update correctness of the Gibbs conditionals.
//!
//! Master property: if two states differ only in one block, the
//! difference of that block's conditional log kernel must equal the
//! difference of the log target density (the normalizer cancels). Each
//! test isolates one update so a failure names the broken formula; the
//! acceptance suite repeats the same identity at its documented scale.
//! Two further oracles re-derive special cases by independent algebra:
//! scalar coefficients by direct generalized-least-squares sums, and
//! score updates under an orthogonal eigenbasis where the posterior
//! factorizes coordinate-wise.

mod common;

use common::{close, log_target, random_fpca, random_panel, random_state, PriorScaling};
use fosr::{build_basis, BasisSystem, ChainState, PriorConfig, SamplerContext};
use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

const TOL: f64 = 1e-6;
const PAIRS: usize = 25;

struct Rig {
    panel: fosr::CurvePanel,
    basis: BasisSystem,
    fpca: fosr::FpcaResult,
    priors: PriorConfig,
}

impl Rig {
    fn new(seed: u64) -> Self {
        let panel = random_panel(seed, 6, 3, 8, 4, 1);
        let basis = build_basis(panel.grid(), 2, &[0.5]).unwrap();
        let fpca = random_fpca(seed ^ 0xabc, panel.n_grid(), 2);
        Rig {
            panel,
            basis,
            fpca,
            priors: PriorConfig::default(),
        }
    }

    fn ctx(&self) -> SamplerContext<'_> {
        SamplerContext::new(&self.panel, &self.basis, &self.fpca, 0.7, self.priors).unwrap()
    }

    fn state(&self, rng: &mut StdRng) -> ChainState {
        random_state(
            rng,
            self.panel.n_predictors(),
            self.panel.n_covariates(),
            self.basis.n_basis(),
            self.panel.n_subjects() * self.panel.n_visits(),
            self.fpca.n_components(),
        )
    }

    fn log_target(&self, state: &ChainState, scaling: PriorScaling) -> f64 {
        log_target(
            &self.panel,
            &self.basis,
            &self.fpca.psi,
            &self.priors,
            state,
            scaling,
        )
    }
}

fn row_vec(m: &DMatrix<f64>, row: usize) -> Vec<f64> {
    (0..m.ncols()).map(|s| m[(row, s)]).collect()
}

#[test]
fn b_update_matches_the_joint_density() {
    let rig = Rig::new(11);
    let ctx = rig.ctx();
    let mut rng = StdRng::seed_from_u64(101);
    for trial in 0..PAIRS {
        let s1 = rig.state(&mut rng);
        let m = trial % rig.panel.n_predictors();
        let mut s2 = s1.clone();
        for s in 0..rig.basis.n_basis() {
            s2.b[(m, s)] = rng.sample::<f64, _>(StandardNormal);
        }
        let cond = ctx.b_conditional(&s1, m).unwrap();
        let d_cond = cond.log_kernel(&row_vec(&s2.b, m)) - cond.log_kernel(&row_vec(&s1.b, m));
        let d_joint = rig.log_target(&s2, PriorScaling::CoefPriorsShareSigma2)
            - rig.log_target(&s1, PriorScaling::CoefPriorsShareSigma2);
        assert!(
            close(d_cond, d_joint, TOL),
            "b ratio mismatch at trial {trial}: {d_cond} vs {d_joint}"
        );
    }
}

#[test]
fn c_update_matches_the_joint_density() {
    let rig = Rig::new(12);
    let ctx = rig.ctx();
    let mut rng = StdRng::seed_from_u64(102);
    for trial in 0..PAIRS {
        let s1 = rig.state(&mut rng);
        let r = trial % rig.panel.n_covariates();
        let mut s2 = s1.clone();
        for s in 0..rig.basis.n_basis() {
            s2.c[(r, s)] = rng.sample::<f64, _>(StandardNormal);
        }
        let cond = ctx.c_conditional(&s1, r).unwrap();
        let d_cond = cond.log_kernel(&row_vec(&s2.c, r)) - cond.log_kernel(&row_vec(&s1.c, r));
        let d_joint = rig.log_target(&s2, PriorScaling::CoefPriorsShareSigma2)
            - rig.log_target(&s1, PriorScaling::CoefPriorsShareSigma2);
        assert!(
            close(d_cond, d_joint, TOL),
            "c ratio mismatch at trial {trial}: {d_cond} vs {d_joint}"
        );
    }
}

#[test]
fn tau2_update_matches_the_joint_density() {
    let rig = Rig::new(13);
    let ctx = rig.ctx();
    let mut rng = StdRng::seed_from_u64(103);
    for trial in 0..PAIRS {
        let s1 = rig.state(&mut rng);
        let m = trial % rig.panel.n_predictors();
        let mut s2 = s1.clone();
        s2.tau2[m] = 0.2 + 2.0 * rng.random::<f64>();
        let cond = ctx.tau2_conditional(&s1, m).unwrap();
        let d_cond = cond.log_kernel_tau2(s2.tau2[m]) - cond.log_kernel_tau2(s1.tau2[m]);
        let d_joint = rig.log_target(&s2, PriorScaling::CoefPriorsShareSigma2)
            - rig.log_target(&s1, PriorScaling::CoefPriorsShareSigma2);
        assert!(
            close(d_cond, d_joint, TOL),
            "tau2 ratio mismatch at trial {trial}: {d_cond} vs {d_joint}"
        );
    }
}

#[test]
fn lambda_r2_update_matches_the_joint_density() {
    let rig = Rig::new(14);
    let ctx = rig.ctx();
    let mut rng = StdRng::seed_from_u64(104);
    for trial in 0..PAIRS {
        let s1 = rig.state(&mut rng);
        let mut s2 = s1.clone();
        s2.lambda_r2 = 0.3 + rng.random::<f64>();
        let cond = ctx.lambda_r2_conditional(&s1).unwrap();
        let d_cond = cond.log_kernel(s2.lambda_r2) - cond.log_kernel(s1.lambda_r2);
        let d_joint = rig.log_target(&s2, PriorScaling::CoefPriorsShareSigma2)
            - rig.log_target(&s1, PriorScaling::CoefPriorsShareSigma2);
        assert!(
            close(d_cond, d_joint, TOL),
            "lambda_r2 ratio mismatch at trial {trial}: {d_cond} vs {d_joint}"
        );
    }
}

#[test]
fn zeta_update_matches_the_joint_density() {
    let rig = Rig::new(15);
    let ctx = rig.ctx();
    let mut rng = StdRng::seed_from_u64(105);
    let (i_n, j_n) = (rig.panel.n_subjects(), rig.panel.n_visits());
    for trial in 0..PAIRS {
        let s1 = rig.state(&mut rng);
        let (i, j) = (trial % i_n, (trial / i_n) % j_n);
        let mut s2 = s1.clone();
        for l in 0..rig.fpca.n_components() {
            s2.zeta[(i * j_n + j, l)] = rng.sample::<f64, _>(StandardNormal);
        }
        let cond = ctx.zeta_conditional(&s1, i, j).unwrap();
        let d_cond = cond.log_kernel(&row_vec(&s2.zeta, i * j_n + j))
            - cond.log_kernel(&row_vec(&s1.zeta, i * j_n + j));
        let d_joint = rig.log_target(&s2, PriorScaling::CoefPriorsShareSigma2)
            - rig.log_target(&s1, PriorScaling::CoefPriorsShareSigma2);
        assert!(
            close(d_cond, d_joint, TOL),
            "zeta ratio mismatch at trial {trial}: {d_cond} vs {d_joint}"
        );
    }
}

#[test]
fn lambda_l_update_matches_the_joint_density() {
    let rig = Rig::new(16);
    let ctx = rig.ctx();
    let mut rng = StdRng::seed_from_u64(106);
    for trial in 0..PAIRS {
        let s1 = rig.state(&mut rng);
        let l = trial % rig.fpca.n_components();
        let mut s2 = s1.clone();
        s2.lambdas[l] = 0.3 + rng.random::<f64>();
        let cond = ctx.lambda_l_conditional(&s1, l).unwrap();
        let d_cond = cond.log_kernel(s2.lambdas[l]) - cond.log_kernel(s1.lambdas[l]);
        let d_joint = rig.log_target(&s2, PriorScaling::CoefPriorsShareSigma2)
            - rig.log_target(&s1, PriorScaling::CoefPriorsShareSigma2);
        assert!(
            close(d_cond, d_joint, TOL),
            "lambda_l ratio mismatch at trial {trial}: {d_cond} vs {d_joint}"
        );
    }
}

#[test]
fn sigma2_update_matches_its_fixed_scale_target() {
    let rig = Rig::new(17);
    let ctx = rig.ctx();
    let mut rng = StdRng::seed_from_u64(107);
    for trial in 0..PAIRS {
        let s1 = rig.state(&mut rng);
        let mut s2 = s1.clone();
        s2.sigma2 = 0.5 + rng.random::<f64>();
        let cond = ctx.sigma2_conditional(&s1).unwrap();
        let d_cond = cond.log_kernel(s2.sigma2) - cond.log_kernel(s1.sigma2);
        let d_joint = rig.log_target(&s2, PriorScaling::CoefPriorsFixedScale)
            - rig.log_target(&s1, PriorScaling::CoefPriorsFixedScale);
        assert!(
            close(d_cond, d_joint, TOL),
            "sigma2 ratio mismatch at trial {trial}: {d_cond} vs {d_joint}"
        );
    }
}

/// Scalar special case: with a one-column basis the coefficient update is
/// a textbook normal-normal posterior whose moments come from direct sums.
#[test]
fn scalar_coefficient_posterior_matches_direct_gls_sums() {
    let panel = random_panel(21, 7, 2, 5, 3, 0);
    let k_n = panel.n_grid();
    // a valid one-column basis must be the constant 1 (partition of unity)
    let phi = DMatrix::from_element(k_n, 1, 1.0);
    let basis = BasisSystem::from_matrix(panel.grid().clone(), phi.clone()).unwrap();
    let fpca = random_fpca(99, k_n, 2);
    let priors = PriorConfig::default();
    let ctx = SamplerContext::new(&panel, &basis, &fpca, 0.7, priors).unwrap();
    let mut rng = StdRng::seed_from_u64(7);
    let state = random_state(&mut rng, 3, 1, 1, 14, 2);

    let m = 1;
    let cond = ctx.b_conditional(&state, m).unwrap();

    // Independent derivation: regress the partial residuals (everything
    // except predictor m's contribution) on x_im * phi(t_k).
    let (i_n, j_n) = (panel.n_subjects(), panel.n_visits());
    let mut sxx_phi2 = 0.0; // sum_ijk (x_im phi_k)^2
    let mut sxr = 0.0; // sum_ijk (x_im phi_k) * partial residual
    for i in 0..i_n {
        let x_im = panel.predictor(m)[i];
        for j in 0..j_n {
            let row = i * j_n + j;
            for k in 0..k_n {
                let mut other = 0.0;
                for mm in 0..panel.n_predictors() {
                    if mm != m {
                        other += panel.predictor(mm)[i] * state.b[(mm, 0)] * phi[(k, 0)];
                    }
                }
                other += panel.covariate(0)[i] * state.c[(0, 0)] * phi[(k, 0)];
                for l in 0..2 {
                    other += state.zeta[(row, l)] * fpca.psi[(k, l)];
                }
                let resid = panel.y(i, j, k) - other;
                let regressor = x_im * phi[(k, 0)];
                sxx_phi2 += regressor * regressor;
                sxr += regressor * resid;
            }
        }
    }
    // posterior precision/sigma2 = sxx_phi2/sigma2 + 1/(sigma2 tau2)
    let post_var = state.sigma2 / (sxx_phi2 + 1.0 / state.tau2[m]);
    let post_mean = post_var * sxr / state.sigma2;

    let cond_var = state.sigma2 * state.tau2[m] / cond.precision[(0, 0)];
    let cond_mean = cond.mean[0];
    assert!(
        close(cond_mean, post_mean, 1e-10),
        "scalar mean: {cond_mean} vs {post_mean}"
    );
    assert!(
        close(cond_var, post_var, 1e-10),
        "scalar variance: {cond_var} vs {post_var}"
    );
}

/// Orthogonal special case: eigenfunctions with disjoint support make the
/// score posterior factor into independent scalar normals.
#[test]
fn orthogonal_scores_posterior_factorizes() {
    let panel = random_panel(31, 5, 3, 8, 2, 0);
    let k_n = panel.n_grid();
    let basis = build_basis(panel.grid(), 2, &[]).unwrap();
    // psi_1 lives on the first half of the grid, psi_2 on the second half
    let psi = DMatrix::from_fn(k_n, 2, |k, l| {
        if l == 0 && k < k_n / 2 {
            1.25
        } else if l == 1 && k >= k_n / 2 {
            -0.75
        } else {
            0.0
        }
    });
    let fpca = fosr::FpcaResult {
        psi: psi.clone(),
        lambdas: vec![0.8, 0.4],
        explained: vec![0.6, 0.4],
    };
    let ctx = SamplerContext::new(&panel, &basis, &fpca, 0.7, PriorConfig::default()).unwrap();
    let mut rng = StdRng::seed_from_u64(8);
    let state = random_state(&mut rng, 2, 1, basis.n_basis(), 15, 2);

    let (i, j) = (2, 1);
    let cond = ctx.zeta_conditional(&state, i, j).unwrap();

    let phi = basis.phi();
    for l in 0..2 {
        let mut pt_p = 0.0;
        let mut pt_r = 0.0;
        for k in 0..k_n {
            let mut fixed = 0.0;
            for m in 0..2 {
                for s in 0..basis.n_basis() {
                    fixed += panel.predictor(m)[i] * state.b[(m, s)] * phi[(k, s)];
                }
            }
            for s in 0..basis.n_basis() {
                fixed += panel.covariate(0)[i] * state.c[(0, s)] * phi[(k, s)];
            }
            let resid = panel.y(i, j, k) - fixed;
            pt_p += psi[(k, l)] * psi[(k, l)];
            pt_r += psi[(k, l)] * resid;
        }
        let post_var = state.sigma2 / (pt_p + state.sigma2 / state.lambdas[l]);
        let post_mean = pt_r / (pt_p + state.sigma2 / state.lambdas[l]);
        assert!(
            close(cond.mean[l], post_mean, 1e-10),
            "score mean {l}: {} vs {post_mean}",
            cond.mean[l]
        );
        let cond_var = state.sigma2 / cond.precision[(l, l)];
        assert!(
            close(cond_var, post_var, 1e-10),
            "score variance {l}: {cond_var} vs {post_var}"
        );
        // off-diagonal precision vanishes under disjoint support
        assert!(cond.precision[(l, 1 - l)].abs() < 1e-12);
    }
}
