//! Sweep machinery: partial-residual caches, conditional construction,
//! and the chain driver.
//!
//! The per-subject caches are
//!
//! * `SY_i = sum_j Y_ij`            (constant),
//! * `F_i  = Phi (B'X_i + C'W_i)`   (fixed-effect fitted curve),
//! * `G_i  = SY_i - J F_i - Psi sum_j zeta_ij` (weighted partial residual).
//!
//! A coefficient update for block `m` only needs `sum_i X_im G_i`, so with
//! the caches each update is `O(I K)` regardless of `p`. Updates keep `F`
//! and `G` consistent by applying their own delta; `G` deliberately folds
//! the updated block's contribution back in through the `S_xx Phi'Phi b_m`
//! term of the conditional mean.
//!
//! Every conditional used by the sweep is built by the same `*_cond_*`
//! function that backs the public fresh-recomputation API, so the sampled
//! kernels and the externally checkable ones cannot drift apart.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use crate::numeric::{cholesky_in_place, quantile_sorted, solve_lower_transpose, solve_spd};

use super::{
    ChainError, ChainOptions, ChainState, CurveBands, DrawSink, GammaCond, GaussianCond,
    InvGammaCond, InverseGaussianCond, PosteriorSummary, SamplerContext,
};

/// Smallest squared group norm used in the `tau2` conditional; prevents a
/// division blow-up when a group collapses to numerical zero.
const MIN_GROUP_NORM2: f64 = 1e-300;

/// Hard floor on the sampled error variance.
const MIN_SIGMA2: f64 = 1e-12;

/// Floor applied to sampled scale parameters to keep downstream
/// conditionals well defined.
const MIN_SCALE: f64 = 1e-300;

/// Per-subject running quantities; see the module docs.
pub struct Caches {
    /// `SY_i`, row-major `I x K`.
    sy: Vec<f64>,
    /// `F_i`, row-major `I x K`.
    f: Vec<f64>,
    /// `G_i`, row-major `I x K`.
    g: Vec<f64>,
    k: usize,
}

impl Caches {
    /// Recomputes every cache directly from the state.
    pub fn fresh(ctx: &SamplerContext<'_>, state: &ChainState) -> Caches {
        let panel = ctx.panel();
        let (i_n, j_n, k_n) = (panel.n_subjects(), panel.n_visits(), panel.n_grid());
        let mut sy = vec![0.0; i_n * k_n];
        for i in 0..i_n {
            let row = &mut sy[i * k_n..(i + 1) * k_n];
            for j in 0..j_n {
                let curve = panel.curve(i, j);
                for k in 0..k_n {
                    row[k] += curve[k];
                }
            }
        }
        let (f, g) = Self::fitted_and_partial(ctx, state, &sy);
        Caches { sy, f, g, k: k_n }
    }

    fn fitted_and_partial(
        ctx: &SamplerContext<'_>,
        state: &ChainState,
        sy: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let panel = ctx.panel();
        let (i_n, j_n, k_n) = (panel.n_subjects(), panel.n_visits(), panel.n_grid());
        let (p, q) = (panel.n_predictors(), panel.n_covariates());
        let l_n = ctx.n_components();
        let x_mat = DMatrix::from_fn(i_n, p, |i, m| panel.predictor(m)[i]);
        let w_mat = DMatrix::from_fn(i_n, q, |i, r| panel.covariate(r)[i]);
        let coef = &x_mat * &state.b + &w_mat * &state.c;
        let f_mat = &coef * ctx.basis().phi().transpose();
        let mut f = vec![0.0; i_n * k_n];
        for i in 0..i_n {
            for k in 0..k_n {
                f[i * k_n + k] = f_mat[(i, k)];
            }
        }
        let mut g = sy.to_vec();
        let j_f64 = j_n as f64;
        let psi = ctx.psi().as_slice();
        for i in 0..i_n {
            let row = &mut g[i * k_n..(i + 1) * k_n];
            for k in 0..k_n {
                row[k] -= j_f64 * f[i * k_n + k];
            }
            for l in 0..l_n {
                let mut zsum = 0.0;
                for j in 0..j_n {
                    zsum += state.zeta[(i * j_n + j, l)];
                }
                if zsum != 0.0 {
                    let col = &psi[l * k_n..(l + 1) * k_n];
                    for k in 0..k_n {
                        row[k] -= zsum * col[k];
                    }
                }
            }
        }
        (f, g)
    }

    /// Rebuilds `F` and `G` from the state and returns the largest absolute
    /// deviation between the running caches and the recomputed values.
    pub fn refresh(&mut self, ctx: &SamplerContext<'_>, state: &ChainState) -> f64 {
        let (f, g) = Self::fitted_and_partial(ctx, state, &self.sy);
        let mut drift = 0.0_f64;
        for (a, b) in self.f.iter().zip(&f) {
            drift = drift.max((a - b).abs());
        }
        for (a, b) in self.g.iter().zip(&g) {
            drift = drift.max((a - b).abs());
        }
        self.f = f;
        self.g = g;
        drift
    }

    /// Fixed-effect fitted curve of subject `i`.
    pub fn fixed_fitted_row(&self, i: usize) -> &[f64] {
        &self.f[i * self.k..(i + 1) * self.k]
    }

    /// Weighted partial residual of subject `i`.
    pub fn partial_residual_row(&self, i: usize) -> &[f64] {
        &self.g[i * self.k..(i + 1) * self.k]
    }

    /// Visit-summed responses of subject `i`.
    pub fn visit_sum_row(&self, i: usize) -> &[f64] {
        &self.sy[i * self.k..(i + 1) * self.k]
    }
}

/// `out[k] = sum_i weights[i] * g[i*k_n + k]`, skipping zero weights
/// (genotype columns are mostly zero under dominance coding).
fn weighted_residual_sum(weights: &[f64], g: &[f64], k_n: usize, out: &mut [f64]) {
    out.fill(0.0);
    for (i, &wi) in weights.iter().enumerate() {
        if wi != 0.0 {
            let row = &g[i * k_n..(i + 1) * k_n];
            for k in 0..k_n {
                out[k] += wi * row[k];
            }
        }
    }
}

impl<'a> SamplerContext<'a> {
    /// `u` and row-major precision of the `b_m` conditional:
    /// `precision = I_v + tau2_m Sxx_m Phi'Phi`,
    /// `u = Phi' xg + Sxx_m Phi'Phi b_m`,
    /// `mean = precision^{-1} (tau2_m u)`, covariance scale `sigma2 tau2_m`.
    fn fill_b_stats(
        &self,
        state: &ChainState,
        m: usize,
        xg: &[f64],
        u: &mut [f64],
        prec: &mut [f64],
    ) {
        let v = self.basis().n_basis();
        let k_n = self.panel().n_grid();
        let phi = self.basis().phi().as_slice();
        let ptp = self.basis().ptp();
        let sxx = self.design_mass_x(m);
        let tau2 = state.tau2[m];
        for s in 0..v {
            let col = &phi[s * k_n..(s + 1) * k_n];
            let mut acc = 0.0;
            for k in 0..k_n {
                acc += col[k] * xg[k];
            }
            let mut pb = 0.0;
            for t in 0..v {
                pb += ptp[(s, t)] * state.b[(m, t)];
            }
            u[s] = acc + sxx * pb;
            for t in 0..v {
                prec[s * v + t] = if s == t { 1.0 } else { 0.0 } + tau2 * sxx * ptp[(s, t)];
            }
        }
    }

    /// `u` and row-major precision of the `c_r` conditional:
    /// `precision = (1/c_scale) I_v + Sww_r Phi'Phi`,
    /// `u = Phi' wg + Sww_r Phi'Phi c_r`,
    /// `mean = precision^{-1} u`, covariance scale `sigma2`.
    fn fill_c_stats(
        &self,
        state: &ChainState,
        r: usize,
        wg: &[f64],
        u: &mut [f64],
        prec: &mut [f64],
    ) {
        let v = self.basis().n_basis();
        let k_n = self.panel().n_grid();
        let phi = self.basis().phi().as_slice();
        let ptp = self.basis().ptp();
        let sww = self.design_mass_w(r);
        let prior_prec = 1.0 / self.priors().c_scale;
        for s in 0..v {
            let col = &phi[s * k_n..(s + 1) * k_n];
            let mut acc = 0.0;
            for k in 0..k_n {
                acc += col[k] * wg[k];
            }
            let mut pc = 0.0;
            for t in 0..v {
                pc += ptp[(s, t)] * state.c[(r, t)];
            }
            u[s] = acc + sww * pc;
            for t in 0..v {
                prec[s * v + t] =
                    if s == t { prior_prec } else { 0.0 } + sww * ptp[(s, t)];
            }
        }
    }

    /// Row-major `L x L` score precision `Psi'Psi + sigma2 Lambda^{-1}`
    /// (shared by every `(i, j)` within a sweep).
    fn zeta_precision(&self, state: &ChainState, out: &mut [f64]) {
        let l_n = self.n_components();
        let ptp = &self.psi_t_psi;
        for a in 0..l_n {
            for b in 0..l_n {
                out[a * l_n + b] =
                    ptp[(a, b)] + if a == b { state.sigma2 / state.lambdas[a] } else { 0.0 };
            }
        }
    }

    /// `Psi' (Y_ij - F_i)` for the score conditional of visit `(i, j)`.
    fn fill_zeta_linear(&self, f_row: &[f64], i: usize, j: usize, lin: &mut [f64]) {
        let k_n = self.panel().n_grid();
        let psi = self.psi().as_slice();
        let curve = self.panel().curve(i, j);
        for (l, li) in lin.iter_mut().enumerate() {
            let col = &psi[l * k_n..(l + 1) * k_n];
            let mut acc = 0.0;
            for k in 0..k_n {
                acc += col[k] * (curve[k] - f_row[k]);
            }
            *li = acc;
        }
    }

    fn gaussian_cond_from_stats(
        &self,
        u: &[f64],
        prec: Vec<f64>,
        mean_mult: f64,
        scale: f64,
        what: &str,
    ) -> Result<GaussianCond, ChainError> {
        let v = u.len();
        let mut chol = prec.clone();
        if !cholesky_in_place(&mut chol, v) {
            return Err(ChainError::NotPositiveDefinite { what: what.into() });
        }
        let mut mean: Vec<f64> = u.iter().map(|ui| mean_mult * ui).collect();
        solve_spd(&chol, v, &mut mean);
        Ok(GaussianCond {
            mean: DVector::from_vec(mean),
            precision: DMatrix::from_row_slice(v, v, &prec),
            scale,
        })
    }

    fn b_cond_from_caches(
        &self,
        state: &ChainState,
        caches: &Caches,
        m: usize,
        xg: &mut [f64],
    ) -> Result<GaussianCond, ChainError> {
        let v = self.basis().n_basis();
        weighted_residual_sum(self.panel().predictor(m), &caches.g, caches.k, xg);
        let mut u = vec![0.0; v];
        let mut prec = vec![0.0; v * v];
        self.fill_b_stats(state, m, xg, &mut u, &mut prec);
        self.gaussian_cond_from_stats(
            &u,
            prec,
            state.tau2[m],
            state.sigma2 * state.tau2[m],
            "penalized coefficient block",
        )
    }

    fn c_cond_from_caches(
        &self,
        state: &ChainState,
        caches: &Caches,
        r: usize,
        wg: &mut [f64],
    ) -> Result<GaussianCond, ChainError> {
        let v = self.basis().n_basis();
        weighted_residual_sum(self.panel().covariate(r), &caches.g, caches.k, wg);
        let mut u = vec![0.0; v];
        let mut prec = vec![0.0; v * v];
        self.fill_c_stats(state, r, wg, &mut u, &mut prec);
        self.gaussian_cond_from_stats(&u, prec, 1.0, state.sigma2, "covariate coefficient block")
    }

    fn zeta_cond_from_caches(
        &self,
        state: &ChainState,
        caches: &Caches,
        i: usize,
        j: usize,
    ) -> Result<GaussianCond, ChainError> {
        let l_n = self.n_components();
        let mut prec = vec![0.0; l_n * l_n];
        self.zeta_precision(state, &mut prec);
        let mut lin = vec![0.0; l_n];
        self.fill_zeta_linear(caches.fixed_fitted_row(i), i, j, &mut lin);
        self.gaussian_cond_from_stats(&lin, prec, 1.0, state.sigma2, "score block")
    }

    fn tau2_cond_core(&self, state: &ChainState, m: usize) -> InverseGaussianCond {
        let v = self.basis().n_basis() as f64;
        let mut norm2 = 0.0;
        for s in 0..self.basis().n_basis() {
            norm2 += state.b[(m, s)] * state.b[(m, s)];
        }
        norm2 = norm2.max(MIN_GROUP_NORM2);
        let shape = v * state.lambda_r2;
        InverseGaussianCond {
            mean: (shape * state.sigma2 / norm2).sqrt(),
            shape,
        }
    }

    fn lambda_r2_cond_core(&self, state: &ChainState) -> GammaCond {
        let p = self.panel().n_predictors() as f64;
        let v = self.basis().n_basis() as f64;
        let tau2_sum: f64 = state.tau2.iter().sum();
        GammaCond {
            shape: self.priors().alpha1_r + (v * p + p) / 2.0,
            rate: self.priors().alpha2_r + v * tau2_sum / 2.0,
        }
    }

    fn lambda_l_cond_core(&self, state: &ChainState, l: usize) -> InvGammaCond {
        let ij = (self.panel().n_subjects() * self.panel().n_visits()) as f64;
        let col = state.zeta.column(l);
        let ss: f64 = col.iter().map(|z| z * z).sum();
        InvGammaCond {
            shape: ij / 2.0 + self.priors().alpha1_l,
            scale: self.priors().alpha2_l + ss / 2.0,
        }
    }

    fn sigma2_cond_from_rss(&self, rss: f64) -> InvGammaCond {
        let n = (self.panel().n_subjects() * self.panel().n_visits() * self.panel().n_grid())
            as f64;
        InvGammaCond {
            shape: n / 2.0,
            scale: rss / 2.0,
        }
    }

    /// Residual sum of squares `sum_ijk (y - F_i - Psi zeta_ij)^2` computed
    /// from the given fixed-effect curves (row-major `I x K`).
    fn rss_from_fitted(&self, state: &ChainState, f: &[f64], buf: &mut [f64]) -> f64 {
        let panel = self.panel();
        let (i_n, j_n, k_n) = (panel.n_subjects(), panel.n_visits(), panel.n_grid());
        let l_n = self.n_components();
        let psi = self.psi().as_slice();
        let mut rss = 0.0;
        for i in 0..i_n {
            let f_row = &f[i * k_n..(i + 1) * k_n];
            for j in 0..j_n {
                buf[..k_n].copy_from_slice(f_row);
                for l in 0..l_n {
                    let z = state.zeta[(i * j_n + j, l)];
                    if z != 0.0 {
                        let col = &psi[l * k_n..(l + 1) * k_n];
                        for k in 0..k_n {
                            buf[k] += z * col[k];
                        }
                    }
                }
                let curve = panel.curve(i, j);
                for k in 0..k_n {
                    let e = curve[k] - buf[k];
                    rss += e * e;
                }
            }
        }
        rss
    }

    fn check_predictor_index(&self, m: usize) -> Result<(), ChainError> {
        if m >= self.panel().n_predictors() {
            return Err(ChainError::Dimensions(format!(
                "predictor index {m} out of range (p = {})",
                self.panel().n_predictors()
            )));
        }
        Ok(())
    }

    /// Conditional posterior of `b_m`, recomputed from scratch.
    pub fn b_conditional(
        &self,
        state: &ChainState,
        m: usize,
    ) -> Result<GaussianCond, ChainError> {
        self.validate_state(state)?;
        self.check_predictor_index(m)?;
        let caches = Caches::fresh(self, state);
        let mut xg = vec![0.0; self.panel().n_grid()];
        self.b_cond_from_caches(state, &caches, m, &mut xg)
    }

    /// Conditional posterior of `c_r`, recomputed from scratch.
    pub fn c_conditional(
        &self,
        state: &ChainState,
        r: usize,
    ) -> Result<GaussianCond, ChainError> {
        self.validate_state(state)?;
        if r >= self.panel().n_covariates() {
            return Err(ChainError::Dimensions(format!(
                "covariate index {r} out of range (q = {})",
                self.panel().n_covariates()
            )));
        }
        let caches = Caches::fresh(self, state);
        let mut wg = vec![0.0; self.panel().n_grid()];
        self.c_cond_from_caches(state, &caches, r, &mut wg)
    }

    /// Conditional posterior of the precision `1/tau2_m`.
    pub fn tau2_conditional(
        &self,
        state: &ChainState,
        m: usize,
    ) -> Result<InverseGaussianCond, ChainError> {
        self.validate_state(state)?;
        self.check_predictor_index(m)?;
        Ok(self.tau2_cond_core(state, m))
    }

    /// Conditional posterior of `lambda_R^2`.
    pub fn lambda_r2_conditional(&self, state: &ChainState) -> Result<GammaCond, ChainError> {
        self.validate_state(state)?;
        Ok(self.lambda_r2_cond_core(state))
    }

    /// Conditional posterior of the score vector `zeta_ij`.
    pub fn zeta_conditional(
        &self,
        state: &ChainState,
        i: usize,
        j: usize,
    ) -> Result<GaussianCond, ChainError> {
        self.validate_state(state)?;
        let panel = self.panel();
        if i >= panel.n_subjects() || j >= panel.n_visits() {
            return Err(ChainError::Dimensions(format!(
                "visit ({i}, {j}) out of range ({} subjects, {} visits)",
                panel.n_subjects(),
                panel.n_visits()
            )));
        }
        let caches = Caches::fresh(self, state);
        self.zeta_cond_from_caches(state, &caches, i, j)
    }

    /// Conditional posterior of the score variance `lambda_l`.
    pub fn lambda_l_conditional(
        &self,
        state: &ChainState,
        l: usize,
    ) -> Result<InvGammaCond, ChainError> {
        self.validate_state(state)?;
        if l >= self.n_components() {
            return Err(ChainError::Dimensions(format!(
                "component index {l} out of range (L = {})",
                self.n_components()
            )));
        }
        Ok(self.lambda_l_cond_core(state, l))
    }

    /// Conditional posterior of the error variance `sigma2`.
    pub fn sigma2_conditional(&self, state: &ChainState) -> Result<InvGammaCond, ChainError> {
        let rss = self.residual_ss(state)?;
        Ok(self.sigma2_cond_from_rss(rss))
    }

    /// Residual sum of squares at the given state, recomputed from scratch.
    pub fn residual_ss(&self, state: &ChainState) -> Result<f64, ChainError> {
        self.validate_state(state)?;
        let caches = Caches::fresh(self, state);
        let mut buf = vec![0.0; self.panel().n_grid()];
        Ok(self.rss_from_fitted(state, &caches.f, &mut buf))
    }

    /// Runs one chain: `n_burn + n_keep` sweeps, accumulating posterior
    /// summaries over the kept iterations. Each kept state is also offered
    /// to `sink` when one is given.
    pub fn run_chain(
        &self,
        options: &ChainOptions,
        mut sink: Option<&mut dyn DrawSink>,
    ) -> Result<PosteriorSummary, ChainError> {
        if options.n_keep == 0 {
            return Err(ChainError::InvalidState(
                "n_keep must be at least 1".into(),
            ));
        }
        if options.refresh_every == 0 {
            return Err(ChainError::InvalidState(
                "refresh_every must be at least 1".into(),
            ));
        }
        if !(options.band_level > 0.0 && options.band_level < 1.0) {
            return Err(ChainError::InvalidState(format!(
                "band_level must lie strictly between 0 and 1, got {}",
                options.band_level
            )));
        }
        let p = self.panel().n_predictors();
        let order: Vec<usize> = match &options.predictor_order {
            None => (0..p).collect(),
            Some(ord) => {
                if ord.len() != p {
                    return Err(ChainError::InvalidState(format!(
                        "predictor_order has {} entries, expected {p}",
                        ord.len()
                    )));
                }
                let mut seen = vec![false; p];
                for &m in ord {
                    if m >= p || seen[m] {
                        return Err(ChainError::InvalidState(
                            "predictor_order must be a permutation of the predictor indices"
                                .into(),
                        ));
                    }
                    seen[m] = true;
                }
                ord.clone()
            }
        };
        let mut state = self.initial_state(&options.init, options.pilot_ridge_rel)?;
        self.validate_state(&state)?;
        let mut rng = ChaCha12Rng::seed_from_u64(options.seed);
        let mut sweeper = Sweeper::new(self, &state, order);
        let mut acc = Accumulators::new(self, options);

        let total = options.n_burn + options.n_keep;
        for it in 0..total {
            sweeper.sweep(&mut state, &mut rng, it)?;
            if (it + 1) % options.refresh_every == 0 {
                sweeper.refresh(&mut state);
            }
            if it >= options.n_burn {
                acc.absorb(self, &state, &sweeper);
                if let Some(s) = sink.as_deref_mut() {
                    s.record(it, &state)?;
                }
            }
        }
        Ok(acc.finish(self, options, sweeper.max_drift))
    }
}

/// Mutable sweep workspace: caches plus reusable scratch buffers, so the
/// hot loops allocate nothing.
struct Sweeper<'c, 'p> {
    ctx: &'c SamplerContext<'p>,
    caches: Caches,
    order: Vec<usize>,
    max_drift: f64,
    // scratch, sized once
    xg: Vec<f64>,
    u: Vec<f64>,
    chol: Vec<f64>,
    mu: Vec<f64>,
    noise: Vec<f64>,
    delta: Vec<f64>,
    dc: Vec<f64>,
    a_chol: Vec<f64>,
    lin: Vec<f64>,
    zmu: Vec<f64>,
    znoise: Vec<f64>,
    zdelta: Vec<f64>,
    kbuf: Vec<f64>,
}

impl<'c, 'p> Sweeper<'c, 'p> {
    fn new(ctx: &'c SamplerContext<'p>, state: &ChainState, order: Vec<usize>) -> Self {
        let v = ctx.basis().n_basis();
        let k_n = ctx.panel().n_grid();
        let l_n = ctx.n_components();
        Sweeper {
            ctx,
            caches: Caches::fresh(ctx, state),
            order,
            max_drift: 0.0,
            xg: vec![0.0; k_n],
            u: vec![0.0; v],
            chol: vec![0.0; v * v],
            mu: vec![0.0; v],
            noise: vec![0.0; v],
            delta: vec![0.0; v],
            dc: vec![0.0; k_n],
            a_chol: vec![0.0; l_n * l_n],
            lin: vec![0.0; l_n],
            zmu: vec![0.0; l_n],
            znoise: vec![0.0; l_n],
            zdelta: vec![0.0; l_n],
            kbuf: vec![0.0; k_n],
        }
    }

    fn refresh(&mut self, state: &ChainState) {
        let drift = self.caches.refresh(self.ctx, state);
        self.max_drift = self.max_drift.max(drift);
    }

    fn fixed_fitted(&self) -> &[f64] {
        &self.caches.f
    }

    /// Draws `mean + sd * L^{-T} z` where `chol` already holds the lower
    /// factor of the precision; writes the draw over `mu`.
    fn draw_into_mu<R: Rng>(&mut self, n: usize, sd: f64, rng: &mut R) {
        for s in 0..n {
            self.noise[s] = rng.sample(StandardNormal);
        }
        solve_lower_transpose(&self.chol, n, &mut self.noise[..n]);
        for s in 0..n {
            self.mu[s] += sd * self.noise[s];
        }
    }

    fn update_b<R: Rng>(&mut self, state: &mut ChainState, m: usize, rng: &mut R) -> Result<(), ChainError> {
        let ctx = self.ctx;
        let panel = ctx.panel();
        let (i_n, k_n, v) = (panel.n_subjects(), panel.n_grid(), ctx.basis().n_basis());
        let x = panel.predictor(m);
        weighted_residual_sum(x, &self.caches.g, k_n, &mut self.xg);
        ctx.fill_b_stats(state, m, &self.xg, &mut self.u, &mut self.chol);
        if !cholesky_in_place(&mut self.chol, v) {
            return Err(ChainError::NotPositiveDefinite {
                what: "penalized coefficient block".into(),
            });
        }
        let tau2 = state.tau2[m];
        for s in 0..v {
            self.mu[s] = tau2 * self.u[s];
        }
        solve_spd(&self.chol, v, &mut self.mu);
        self.draw_into_mu(v, (state.sigma2 * tau2).sqrt(), rng);
        let mut changed = false;
        for s in 0..v {
            self.delta[s] = self.mu[s] - state.b[(m, s)];
            if self.delta[s] != 0.0 {
                changed = true;
            }
            state.b[(m, s)] = self.mu[s];
        }
        if !changed {
            return Ok(());
        }
        self.apply_fixed_delta(x, i_n, k_n, v);
        Ok(())
    }

    fn update_c<R: Rng>(&mut self, state: &mut ChainState, r: usize, rng: &mut R) -> Result<(), ChainError> {
        let ctx = self.ctx;
        let panel = ctx.panel();
        let (i_n, k_n, v) = (panel.n_subjects(), panel.n_grid(), ctx.basis().n_basis());
        let w = panel.covariate(r);
        weighted_residual_sum(w, &self.caches.g, k_n, &mut self.xg);
        ctx.fill_c_stats(state, r, &self.xg, &mut self.u, &mut self.chol);
        if !cholesky_in_place(&mut self.chol, v) {
            return Err(ChainError::NotPositiveDefinite {
                what: "covariate coefficient block".into(),
            });
        }
        self.mu[..v].copy_from_slice(&self.u[..v]);
        solve_spd(&self.chol, v, &mut self.mu);
        self.draw_into_mu(v, state.sigma2.sqrt(), rng);
        let mut changed = false;
        for s in 0..v {
            self.delta[s] = self.mu[s] - state.c[(r, s)];
            if self.delta[s] != 0.0 {
                changed = true;
            }
            state.c[(r, s)] = self.mu[s];
        }
        if !changed {
            return Ok(());
        }
        self.apply_fixed_delta(w, i_n, k_n, v);
        Ok(())
    }

    /// Propagates a coefficient change `delta` (already in `self.delta`)
    /// through the caches: `F_i += x_i Phi delta`, `G_i -= J x_i Phi delta`.
    fn apply_fixed_delta(&mut self, weights: &[f64], i_n: usize, k_n: usize, v: usize) {
        let phi = self.ctx.basis().phi().as_slice();
        self.dc.fill(0.0);
        for s in 0..v {
            let d = self.delta[s];
            if d != 0.0 {
                let col = &phi[s * k_n..(s + 1) * k_n];
                for k in 0..k_n {
                    self.dc[k] += d * col[k];
                }
            }
        }
        let j_f64 = self.ctx.panel().n_visits() as f64;
        for (i, &wi) in weights.iter().enumerate().take(i_n) {
            if wi != 0.0 {
                let f_row = &mut self.caches.f[i * k_n..(i + 1) * k_n];
                for k in 0..k_n {
                    f_row[k] += wi * self.dc[k];
                }
                let g_row = &mut self.caches.g[i * k_n..(i + 1) * k_n];
                let scale = j_f64 * wi;
                for k in 0..k_n {
                    g_row[k] -= scale * self.dc[k];
                }
            }
        }
    }

    fn update_zeta_all<R: Rng>(&mut self, state: &mut ChainState, rng: &mut R) -> Result<(), ChainError> {
        let ctx = self.ctx;
        let l_n = ctx.n_components();
        if l_n == 0 {
            return Ok(());
        }
        let panel = ctx.panel();
        let (i_n, j_n, k_n) = (panel.n_subjects(), panel.n_visits(), panel.n_grid());
        ctx.zeta_precision(state, &mut self.a_chol);
        if !cholesky_in_place(&mut self.a_chol, l_n) {
            return Err(ChainError::NotPositiveDefinite {
                what: "score block".into(),
            });
        }
        let sd = state.sigma2.sqrt();
        let psi = ctx.psi().as_slice();
        for i in 0..i_n {
            for j in 0..j_n {
                {
                    let f_row = &self.caches.f[i * k_n..(i + 1) * k_n];
                    ctx.fill_zeta_linear(f_row, i, j, &mut self.lin);
                }
                self.zmu.copy_from_slice(&self.lin);
                solve_spd(&self.a_chol, l_n, &mut self.zmu);
                for l in 0..l_n {
                    self.znoise[l] = rng.sample(StandardNormal);
                }
                solve_lower_transpose(&self.a_chol, l_n, &mut self.znoise);
                let row = i * j_n + j;
                let mut changed = false;
                for l in 0..l_n {
                    let znew = self.zmu[l] + sd * self.znoise[l];
                    self.zdelta[l] = znew - state.zeta[(row, l)];
                    if self.zdelta[l] != 0.0 {
                        changed = true;
                    }
                    state.zeta[(row, l)] = znew;
                }
                if changed {
                    let g_row = &mut self.caches.g[i * k_n..(i + 1) * k_n];
                    for l in 0..l_n {
                        let d = self.zdelta[l];
                        if d != 0.0 {
                            let col = &psi[l * k_n..(l + 1) * k_n];
                            for k in 0..k_n {
                                g_row[k] -= d * col[k];
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// One full sweep over all blocks in the fixed order.
    fn sweep<R: Rng>(
        &mut self,
        state: &mut ChainState,
        rng: &mut R,
        iteration: usize,
    ) -> Result<(), ChainError> {
        let ctx = self.ctx;
        let q = ctx.panel().n_covariates();
        let order = std::mem::take(&mut self.order);
        for &m in &order {
            self.update_b(state, m, rng)?;
        }
        for r in 0..q {
            self.update_c(state, r, rng)?;
        }
        for &m in &order {
            let cond = ctx.tau2_cond_core(state, m);
            let precision_draw = cond.sample_precision(rng);
            state.tau2[m] = (1.0 / precision_draw).max(MIN_SCALE);
        }
        self.order = order;
        state.lambda_r2 = ctx.lambda_r2_cond_core(state).sample(rng).max(MIN_SCALE);
        self.update_zeta_all(state, rng)?;
        for l in 0..ctx.n_components() {
            state.lambdas[l] = ctx.lambda_l_cond_core(state, l).sample(rng).max(MIN_SCALE);
        }
        let rss = ctx.rss_from_fitted(state, &self.caches.f, &mut self.kbuf);
        if !rss.is_finite() {
            return Err(ChainError::ChainDiverged {
                iteration,
                what: format!("residual sum of squares became {rss}"),
            });
        }
        state.sigma2 = ctx.sigma2_cond_from_rss(rss).sample(rng).max(MIN_SIGMA2);
        if !(state.sigma2.is_finite()
            && state.lambda_r2.is_finite()
            && state.tau2.iter().all(|t| t.is_finite())
            && state.lambdas.iter().all(|l| l.is_finite()))
        {
            return Err(ChainError::ChainDiverged {
                iteration,
                what: "a scale parameter became non-finite".into(),
            });
        }
        Ok(())
    }
}

/// Running posterior sums plus (optionally) the kept coefficient draws.
struct Accumulators {
    n: usize,
    b_sum: DMatrix<f64>,
    c_sum: DMatrix<f64>,
    tau2_sum: Vec<f64>,
    lambda_r2_sum: f64,
    zeta_sum: DMatrix<f64>,
    lambda_sum: Vec<f64>,
    sigma2_sum: f64,
    f_sum: Vec<f64>,
    b_draws: Option<Vec<f64>>,
    c_draws: Option<Vec<f64>>,
}

impl Accumulators {
    fn new(ctx: &SamplerContext<'_>, options: &ChainOptions) -> Self {
        let (p, q, v) = (
            ctx.panel().n_predictors(),
            ctx.panel().n_covariates(),
            ctx.basis().n_basis(),
        );
        let ij = ctx.panel().n_subjects() * ctx.panel().n_visits();
        let l_n = ctx.n_components();
        let ik = ctx.panel().n_subjects() * ctx.panel().n_grid();
        let keep = options.keep_coef_draws;
        Accumulators {
            n: 0,
            b_sum: DMatrix::zeros(p, v),
            c_sum: DMatrix::zeros(q, v),
            tau2_sum: vec![0.0; p],
            lambda_r2_sum: 0.0,
            zeta_sum: DMatrix::zeros(ij, l_n),
            lambda_sum: vec![0.0; l_n],
            sigma2_sum: 0.0,
            f_sum: vec![0.0; ik],
            b_draws: keep.then(|| Vec::with_capacity(options.n_keep * p * v)),
            c_draws: keep.then(|| Vec::with_capacity(options.n_keep * q * v)),
        }
    }

    fn absorb(&mut self, ctx: &SamplerContext<'_>, state: &ChainState, sweeper: &Sweeper<'_, '_>) {
        self.n += 1;
        self.b_sum += &state.b;
        self.c_sum += &state.c;
        for (acc, t) in self.tau2_sum.iter_mut().zip(&state.tau2) {
            *acc += t;
        }
        self.lambda_r2_sum += state.lambda_r2;
        self.zeta_sum += &state.zeta;
        for (acc, l) in self.lambda_sum.iter_mut().zip(&state.lambdas) {
            *acc += l;
        }
        self.sigma2_sum += state.sigma2;
        for (acc, f) in self.f_sum.iter_mut().zip(sweeper.fixed_fitted()) {
            *acc += f;
        }
        let (p, q, v) = (
            ctx.panel().n_predictors(),
            ctx.panel().n_covariates(),
            ctx.basis().n_basis(),
        );
        if let Some(draws) = &mut self.b_draws {
            for m in 0..p {
                for s in 0..v {
                    draws.push(state.b[(m, s)]);
                }
            }
        }
        if let Some(draws) = &mut self.c_draws {
            for r in 0..q {
                for s in 0..v {
                    draws.push(state.c[(r, s)]);
                }
            }
        }
    }

    fn finish(
        self,
        ctx: &SamplerContext<'_>,
        options: &ChainOptions,
        max_cache_drift: f64,
    ) -> PosteriorSummary {
        let panel = ctx.panel();
        let (i_n, j_n, k_n) = (panel.n_subjects(), panel.n_visits(), panel.n_grid());
        let l_n = ctx.n_components();
        let inv = 1.0 / self.n as f64;
        let b_mean = self.b_sum * inv;
        let c_mean = self.c_sum * inv;
        let zeta_mean = self.zeta_sum * inv;
        let phi_t = ctx.basis().phi().transpose();
        let coef_curves = &b_mean * &phi_t;
        let covariate_curves = &c_mean * &phi_t;
        let group_norms: Vec<f64> = (0..coef_curves.nrows())
            .map(|m| {
                let row = coef_curves.row(m);
                (row.iter().map(|x| x * x).sum::<f64>() / k_n as f64).sqrt()
            })
            .collect();
        let mu_hat: Vec<f64> = covariate_curves.row(0).iter().copied().collect();
        let psi = ctx.psi().as_slice();
        let mut fitted = vec![0.0; i_n * j_n * k_n];
        for i in 0..i_n {
            let f_row = &self.f_sum[i * k_n..(i + 1) * k_n];
            for j in 0..j_n {
                let out = &mut fitted[(i * j_n + j) * k_n..(i * j_n + j + 1) * k_n];
                for k in 0..k_n {
                    out[k] = f_row[k] * inv;
                }
                for l in 0..l_n {
                    let z = zeta_mean[(i * j_n + j, l)];
                    let col = &psi[l * k_n..(l + 1) * k_n];
                    for k in 0..k_n {
                        out[k] += z * col[k];
                    }
                }
            }
        }
        let beta_bands = self
            .b_draws
            .as_ref()
            .map(|draws| curve_bands(draws, self.n, &coef_curves, ctx, options.band_level));
        let covariate_bands = self
            .c_draws
            .as_ref()
            .map(|draws| curve_bands(draws, self.n, &covariate_curves, ctx, options.band_level));
        PosteriorSummary {
            b_mean,
            c_mean,
            group_norms,
            coef_curves,
            covariate_curves,
            beta_bands,
            covariate_bands,
            band_level: options.band_level,
            mu_hat,
            fitted,
            tau2_mean: self.tau2_sum.iter().map(|t| t * inv).collect(),
            lambda_r2_mean: self.lambda_r2_sum * inv,
            lambdas_mean: self.lambda_sum.iter().map(|l| l * inv).collect(),
            sigma2_mean: self.sigma2_sum * inv,
            zeta_mean,
            n_kept: self.n,
            max_cache_drift,
        }
    }
}

/// Pointwise quantile bands of coefficient curves from stored draws
/// (`draws` is kept-iteration-major, then row, then basis index). Bands are
/// widened where necessary so they always contain the posterior-mean curve.
fn curve_bands(
    draws: &[f64],
    n_kept: usize,
    mean_curves: &DMatrix<f64>,
    ctx: &SamplerContext<'_>,
    level: f64,
) -> CurveBands {
    let rows = mean_curves.nrows();
    let k_n = mean_curves.ncols();
    let v = ctx.basis().n_basis();
    let alpha = 1.0 - level;
    let (p_lo, p_hi) = (alpha / 2.0, 1.0 - alpha / 2.0);
    let mut lower = DMatrix::zeros(rows, k_n);
    let mut upper = DMatrix::zeros(rows, k_n);
    let phi_t = ctx.basis().phi().transpose();
    let mut row_draws = DMatrix::zeros(n_kept, v);
    let mut column = vec![0.0; n_kept];
    for m in 0..rows {
        for d in 0..n_kept {
            for s in 0..v {
                row_draws[(d, s)] = draws[(d * rows + m) * v + s];
            }
        }
        let curves_d = &row_draws * &phi_t;
        for k in 0..k_n {
            for d in 0..n_kept {
                column[d] = curves_d[(d, k)];
            }
            column.sort_by(|a, b| a.partial_cmp(b).expect("draws are finite"));
            let mean = mean_curves[(m, k)];
            lower[(m, k)] = quantile_sorted(&column, p_lo).min(mean);
            upper[(m, k)] = quantile_sorted(&column, p_hi).max(mean);
        }
    }
    CurveBands { lower, upper }
}
