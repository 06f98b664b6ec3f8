//! Variable ranking, BIC model-size selection, spline-degree choice, and
//! replicate-level power metrics.
//!
//! Ranking: each group of predictor columns (a single column, or an
//! additive/dominance pair in GWAS mode) is scored by the L2 norm of its
//! posterior-mean coefficient curve — for a pair, the larger of the two.
//! Groups are ordered by descending norm.
//!
//! Cutoff: nested candidate models keep the top `s` groups
//! (`s = 0, 1, ..., cap`); each is refit by the fast ridge pilot with the
//! random-effect structure held fixed (scores by BLUP), and scored with
//! `BIC(s) = n log(RSS/n) + df log(n)` where `n = I*J*K` and `df` counts
//! the spline coefficients of the retained columns plus the always-included
//! covariates. The smallest `s` attaining the minimum wins. Refits use the
//! ridge pilot rather than a fresh posterior sample per candidate; a full
//! chain per candidate would be computationally disproportionate for a
//! screening criterion.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::basis::{build_basis, BasisError, BasisSystem};
use crate::fpca::FpcaResult;
use crate::gibbs::PosteriorSummary;
use crate::numeric::{cholesky_in_place, solve_spd};
use crate::panel::CurvePanel;
use crate::pilot::{ridge_fit, PilotError};

/// Default cap on the number of groups the BIC scan considers.
pub const DEFAULT_MAX_MODEL_SIZE: usize = 20;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("invalid selection input: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Pilot(#[from] PilotError),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Ranked predictor groups, before/after the BIC cutoff.
#[derive(Debug, Clone)]
pub struct RankedMarkers {
    /// `groups[e]` = predictor column indices forming group `e`.
    groups: Vec<Vec<usize>>,
    /// Group indices in descending-norm order (ties: lower index first).
    pub order: Vec<usize>,
    /// Group norms aligned with `order`.
    pub norms: Vec<f64>,
    /// Per-group selection mask (all false until the BIC cutoff runs).
    pub selected: Vec<bool>,
    /// Number of selected groups (length of the winning prefix).
    pub n_selected: usize,
    /// `bic_path[s]` = BIC of the model keeping the top `s` groups.
    pub bic_path: Vec<f64>,
}

impl RankedMarkers {
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Selected group indices, ascending.
    pub fn selected_groups(&self) -> Vec<usize> {
        (0..self.groups.len()).filter(|&e| self.selected[e]).collect()
    }

    /// The top `n` groups by rank (clamped to the available count).
    pub fn top_groups(&self, n: usize) -> &[usize] {
        &self.order[..n.min(self.order.len())]
    }

    /// Predictor columns of the top `s` groups, ascending.
    fn prefix_columns(&self, s: usize) -> Vec<usize> {
        let mut cols: Vec<usize> = self.order[..s]
            .iter()
            .flat_map(|&e| self.groups[e].iter().copied())
            .collect();
        cols.sort_unstable();
        cols
    }
}

/// Interleaved `(additive, dominance)` column pairs for a panel whose
/// predictors alternate `snp1_a, snp1_d, snp2_a, ...`.
pub fn interleaved_pairs(n_predictors: usize) -> Result<Vec<(usize, usize)>, SelectionError> {
    if n_predictors % 2 != 0 {
        return Err(SelectionError::Invalid(format!(
            "interleaved pairing needs an even number of predictors, got {n_predictors}"
        )));
    }
    Ok((0..n_predictors / 2).map(|m| (2 * m, 2 * m + 1)).collect())
}

/// Ranks predictor groups by the L2 norms of their posterior-mean curves.
///
/// With `gwas_pairs = None` every predictor is its own group; otherwise the
/// pairs must partition the predictor indices and each pair ranks by the
/// larger of its two norms.
pub fn rank_groups(
    summary: &PosteriorSummary,
    gwas_pairs: Option<&[(usize, usize)]>,
) -> Result<RankedMarkers, SelectionError> {
    rank_norms(&summary.group_norms, gwas_pairs)
}

/// [`rank_groups`] on bare per-predictor norms (e.g. read back from disk).
pub fn rank_norms(
    norms: &[f64],
    gwas_pairs: Option<&[(usize, usize)]>,
) -> Result<RankedMarkers, SelectionError> {
    let p = norms.len();
    let groups: Vec<Vec<usize>> = match gwas_pairs {
        None => (0..p).map(|m| vec![m]).collect(),
        Some(pairs) => {
            let mut seen = vec![false; p];
            for &(a, d) in pairs {
                for idx in [a, d] {
                    if idx >= p {
                        return Err(SelectionError::Invalid(format!(
                            "pair index {idx} out of range (p = {p})"
                        )));
                    }
                    if seen[idx] {
                        return Err(SelectionError::Invalid(format!(
                            "predictor {idx} appears in more than one pair"
                        )));
                    }
                    seen[idx] = true;
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(SelectionError::Invalid(
                    "pairs must cover every predictor column".into(),
                ));
            }
            pairs.iter().map(|&(a, d)| vec![a, d]).collect()
        }
    };
    let group_norms: Vec<f64> = groups
        .iter()
        .map(|cols| {
            cols.iter()
                .map(|&c| norms[c])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    if group_norms.iter().any(|n| !n.is_finite()) {
        return Err(SelectionError::Invalid(
            "group norms must be finite".into(),
        ));
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| {
        group_norms[b]
            .partial_cmp(&group_norms[a])
            .expect("norms are finite")
            .then(a.cmp(&b))
    });
    let norms = order.iter().map(|&e| group_norms[e]).collect();
    let n = groups.len();
    Ok(RankedMarkers {
        groups,
        order,
        norms,
        selected: vec![false; n],
        n_selected: 0,
        bic_path: vec![],
    })
}

/// Options for the BIC scan.
#[derive(Debug, Clone, Copy)]
pub struct SelectOptions {
    /// Largest candidate model size; `None` means
    /// `min(DEFAULT_MAX_MODEL_SIZE, n_groups)`.
    pub max_size: Option<usize>,
    /// Relative ridge of the candidate refits.
    pub ridge_rel: f64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions {
            max_size: None,
            ridge_rel: 1e-4,
        }
    }
}

/// Residual sum of squares after BLUP-predicting the scores:
/// `zeta_ij = (Psi'Psi + sigma2 Lambda^{-1})^{-1} Psi' (Y_ij - F_i)`.
fn blup_rss(
    panel: &CurvePanel,
    fitted_subject: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    lambdas: &[f64],
    sigma2: f64,
) -> Result<f64, SelectionError> {
    let (i_n, j_n, k_n) = (panel.n_subjects(), panel.n_visits(), panel.n_grid());
    let l_n = lambdas.len();
    let mut rss = 0.0;
    if l_n == 0 {
        for i in 0..i_n {
            for j in 0..j_n {
                let curve = panel.curve(i, j);
                for k in 0..k_n {
                    let e = curve[k] - fitted_subject[(i, k)];
                    rss += e * e;
                }
            }
        }
        return Ok(rss);
    }
    let mut a = vec![0.0; l_n * l_n];
    for r in 0..l_n {
        for c in 0..l_n {
            let mut acc = 0.0;
            for k in 0..k_n {
                acc += psi[(k, r)] * psi[(k, c)];
            }
            a[r * l_n + c] = acc + if r == c { sigma2 / lambdas[r] } else { 0.0 };
        }
    }
    if !cholesky_in_place(&mut a, l_n) {
        return Err(SelectionError::Numerical(
            "score precision is not positive definite".into(),
        ));
    }
    let mut e = vec![0.0; k_n];
    let mut lin = vec![0.0; l_n];
    for i in 0..i_n {
        for j in 0..j_n {
            let curve = panel.curve(i, j);
            for k in 0..k_n {
                e[k] = curve[k] - fitted_subject[(i, k)];
            }
            for (l, li) in lin.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..k_n {
                    acc += psi[(k, l)] * e[k];
                }
                *li = acc;
            }
            solve_spd(&a, l_n, &mut lin);
            for k in 0..k_n {
                let mut fit = 0.0;
                for l in 0..l_n {
                    fit += psi[(k, l)] * lin[l];
                }
                let r = e[k] - fit;
                rss += r * r;
            }
        }
    }
    Ok(rss)
}

/// Fills `selected`, `n_selected`, and `bic_path` by scanning nested
/// models over the ranking prefix. Covariates are always included; the
/// random-effect structure (`fpca` plus `sigma2`) is held fixed and scores
/// are BLUP-predicted in each candidate.
pub fn bic_stepwise(
    panel: &CurvePanel,
    basis: &BasisSystem,
    fpca: &FpcaResult,
    sigma2: f64,
    ranked: &mut RankedMarkers,
    opts: &SelectOptions,
) -> Result<(), SelectionError> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(SelectionError::Invalid(format!(
            "sigma2 must be positive and finite, got {sigma2}"
        )));
    }
    let n_groups = ranked.n_groups();
    let cap = opts
        .max_size
        .unwrap_or(DEFAULT_MAX_MODEL_SIZE)
        .min(n_groups);
    let n = (panel.n_subjects() * panel.n_visits() * panel.n_grid()) as f64;
    let q = panel.n_covariates();
    let v = basis.n_basis();
    let mut bic_path = Vec::with_capacity(cap + 1);
    let mut best = (0usize, f64::INFINITY);
    for s in 0..=cap {
        let cols = ranked.prefix_columns(s);
        let fit = ridge_fit(panel, basis, &cols, opts.ridge_rel)?;
        let rss = blup_rss(panel, &fit.fitted_subject, &fpca.psi, &fpca.lambdas, sigma2)?;
        let df = ((cols.len() + q) * v) as f64;
        let bic = n * (rss / n).max(1e-300).ln() + df * n.ln();
        if bic < best.1 {
            best = (s, bic);
        }
        bic_path.push(bic);
    }
    ranked.bic_path = bic_path;
    ranked.selected = vec![false; n_groups];
    for &e in &ranked.order[..best.0] {
        ranked.selected[e] = true;
    }
    ranked.n_selected = best.0;
    Ok(())
}

/// Picks a spline degree by pilot-fit BIC with the interior knots held
/// fixed. Candidates are scanned in ascending order, so ties go to the
/// lower degree.
pub fn choose_degree(
    panel: &CurvePanel,
    candidate_degrees: &[usize],
    interior_knots: &[f64],
    ridge_rel: f64,
) -> Result<usize, SelectionError> {
    if candidate_degrees.is_empty() {
        return Err(SelectionError::Invalid(
            "need at least one candidate degree".into(),
        ));
    }
    let mut degrees = candidate_degrees.to_vec();
    degrees.sort_unstable();
    degrees.dedup();
    let n = (panel.n_subjects() * panel.n_visits() * panel.n_grid()) as f64;
    let all_cols: Vec<usize> = (0..panel.n_predictors()).collect();
    let mut best: Option<(usize, f64)> = None;
    for &degree in &degrees {
        let basis = build_basis(panel.grid(), degree, interior_knots)?;
        let fit = ridge_fit(panel, &basis, &all_cols, ridge_rel)?;
        let df = ((panel.n_predictors() + panel.n_covariates()) * basis.n_basis()) as f64;
        let bic = n * (fit.rss_fixed / n).max(1e-300).ln() + df * n.ln();
        if best.is_none_or(|(_, b)| bic < b) {
            best = Some((degree, bic));
        }
    }
    Ok(best.expect("at least one candidate").0)
}

/// Power and Type-I summaries over replicates of one study cell.
#[derive(Debug, Clone)]
pub struct StudyMetrics {
    pub n_reps: usize,
    /// Fraction of replicates selecting every influential group.
    pub strict_power: f64,
    /// Per-influential-group selection frequency, in truth order.
    pub individual_power: Vec<f64>,
    /// Mean fraction of non-influential groups selected.
    pub type1_error: f64,
}

impl StudyMetrics {
    /// Individual powers sorted in descending order (table layout).
    pub fn sorted_individual(&self) -> Vec<f64> {
        let mut v = self.individual_power.clone();
        v.sort_by(|a, b| b.partial_cmp(a).expect("powers are finite"));
        v
    }
}

/// Aggregates per-replicate selections (group indices) against the truth.
pub fn study_metrics(
    selected_per_rep: &[Vec<usize>],
    truth_groups: &[usize],
    n_groups: usize,
) -> Result<StudyMetrics, SelectionError> {
    if selected_per_rep.is_empty() {
        return Err(SelectionError::Invalid("no replicates".into()));
    }
    if truth_groups.iter().any(|&g| g >= n_groups) {
        return Err(SelectionError::Invalid(
            "truth group index out of range".into(),
        ));
    }
    let n_noise = n_groups - truth_groups.len();
    let n_reps = selected_per_rep.len();
    let mut strict = 0usize;
    let mut individual = vec![0usize; truth_groups.len()];
    let mut type1_sum = 0.0;
    for selected in selected_per_rep {
        if let Some(&bad) = selected.iter().find(|&&g| g >= n_groups) {
            return Err(SelectionError::Invalid(format!(
                "selected group {bad} out of range (n_groups = {n_groups})"
            )));
        }
        let mut all = true;
        for (slot, &t) in individual.iter_mut().zip(truth_groups) {
            if selected.contains(&t) {
                *slot += 1;
            } else {
                all = false;
            }
        }
        if all {
            strict += 1;
        }
        if n_noise > 0 {
            let false_pos = selected
                .iter()
                .filter(|g| !truth_groups.contains(g))
                .count();
            type1_sum += false_pos as f64 / n_noise as f64;
        }
    }
    Ok(StudyMetrics {
        n_reps,
        strict_power: strict as f64 / n_reps as f64,
        individual_power: individual
            .iter()
            .map(|&c| c as f64 / n_reps as f64)
            .collect(),
        type1_error: type1_sum / n_reps as f64,
    })
}
