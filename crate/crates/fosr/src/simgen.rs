//! Synthetic GWAS-style panel generators.
//!
//! Both designs share the same skeleton: `n_markers` biallelic markers with
//! minor-allele frequencies drawn from `Uniform(0.1, 0.5)` and genotype
//! counts from `Binomial(2, maf)`, coded as an additive column
//! (`count - 1`) and a dominance column (`1` when heterozygous) per marker,
//! plus one standard-normal covariate. Markers 1-5 carry effects (marker 3
//! both additive and dominant, the rest additive only); every further
//! marker is noise. The visit-level deviation is a rank-4 Karhunen-Loeve
//! process with eigenvalues `(1, 0.9, 0.6, 0.5)` and trigonometric
//! eigenfunctions, and white noise is added on top.
//!
//! The designs differ only in where the effect curves come from:
//!
//! * [`SimDesign::I`] — expansion coefficients in a cubic B-spline basis
//!   with knots `{0, 0.5, 1}` (five basis functions),
//! * [`SimDesign::II`] — closed-form curves (`10 sqrt(t)`, `exp(2t)`, ...)
//!   that no finite spline basis reproduces exactly.
//!
//! Each random ingredient (genotypes, covariate, scores, noise) draws from
//! its own counter-derived RNG stream, so e.g. changing `sigma_eps` or
//! toggling `null_effects` never changes the genotypes, and the noise for
//! `sigma_eps = 0` is the same stream scaled to zero.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{build_basis, BasisError};
use crate::numeric::derive_seed;
use crate::panel::{CurvePanel, Grid, PanelError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Which effect-curve family to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimDesign {
    /// Effect curves assigned through B-spline expansion coefficients.
    I,
    /// Effect curves assigned as closed-form functions of `t`.
    II,
}

impl fmt::Display for SimDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimDesign::I => write!(f, "I"),
            SimDesign::II => write!(f, "II"),
        }
    }
}

impl FromStr for SimDesign {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "I" | "i" | "1" => Ok(SimDesign::I),
            "II" | "ii" | "2" => Ok(SimDesign::II),
            other => Err(SimError::InvalidSpec(format!(
                "unknown design '{other}' (expected I or II)"
            ))),
        }
    }
}

/// Full description of one synthetic panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSpec {
    pub design: SimDesign,
    pub n_subjects: usize,
    pub n_visits: usize,
    pub n_grid: usize,
    /// Total number of markers (two predictor columns each). The first
    /// five always exist, so at least 5.
    pub n_markers: usize,
    /// Standard deviation of the white measurement noise.
    pub sigma_eps: f64,
    /// Suppress every marker and covariate effect (random effects and
    /// noise remain); used for null-calibration panels.
    pub null_effects: bool,
    pub seed: u64,
}

impl SimSpec {
    /// Paper-scale defaults except for the marker count, which callers
    /// size to their budget.
    pub fn new(design: SimDesign, n_markers: usize, seed: u64) -> Self {
        SimSpec {
            design,
            n_subjects: 300,
            n_visits: 5,
            n_grid: 50,
            n_markers,
            sigma_eps: 1.0,
            null_effects: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_markers < 5 {
            return Err(SimError::InvalidSpec(format!(
                "n_markers must be at least 5 (the influential ones), got {}",
                self.n_markers
            )));
        }
        if self.n_subjects == 0 || self.n_visits == 0 {
            return Err(SimError::InvalidSpec(
                "n_subjects and n_visits must be positive".into(),
            ));
        }
        if self.n_grid < 2 {
            return Err(SimError::InvalidSpec(format!(
                "n_grid must be at least 2, got {}",
                self.n_grid
            )));
        }
        if !(self.sigma_eps >= 0.0) || !self.sigma_eps.is_finite() {
            return Err(SimError::InvalidSpec(format!(
                "sigma_eps must be finite and non-negative, got {}",
                self.sigma_eps
            )));
        }
        Ok(())
    }
}

/// One named true effect curve evaluated on the panel grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectCurve {
    /// Predictor column the effect attaches to, e.g. `snp1_a`.
    pub name: String,
    pub values: Vec<f64>,
}

/// Ground truth of a generated panel, for scoring fits and selections.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRecord {
    pub design: String,
    pub seed: u64,
    pub n_markers: usize,
    pub sigma_eps: f64,
    /// 0-based indices of markers carrying an effect (empty under
    /// `null_effects`).
    pub active_markers: Vec<usize>,
    /// Predictor columns carrying an effect, in panel naming.
    pub active_predictors: Vec<String>,
    pub mafs: Vec<f64>,
    /// Non-null effect curves, aligned with `active_predictors`.
    pub effects: Vec<EffectCurve>,
    /// True covariate effect curve (empty under `null_effects`).
    pub covariate_effect: Vec<f64>,
    pub true_eigenvalues: Vec<f64>,
}

impl TruthRecord {
    /// The true curve attached to a predictor column, if it has one.
    pub fn effect_for(&self, name: &str) -> Option<&[f64]> {
        self.effects
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.values.as_slice())
    }
}

/// Variances of the four Karhunen-Loeve components.
pub const TRUE_EIGENVALUES: [f64; 4] = [1.0, 0.9, 0.6, 0.5];

/// The four orthonormal eigenfunctions evaluated on a grid (columns):
/// `sqrt2 sin(4 pi t)`, `sqrt2 cos(4 pi t)`, `sqrt2 sin(8 pi t)`,
/// `sqrt2 cos(8 pi t)`.
pub fn true_eigenfunctions(grid: &Grid) -> DMatrix<f64> {
    let k = grid.len();
    let sqrt2 = std::f64::consts::SQRT_2;
    let pi = std::f64::consts::PI;
    DMatrix::from_fn(k, 4, |row, col| {
        let t = grid.values()[row];
        match col {
            0 => sqrt2 * (4.0 * pi * t).sin(),
            1 => sqrt2 * (4.0 * pi * t).cos(),
            2 => sqrt2 * (8.0 * pi * t).sin(),
            _ => sqrt2 * (8.0 * pi * t).cos(),
        }
    })
}

// Stream tags for the independent RNG domains.
const TAG_GENOTYPES: u64 = 0x67656e6f;
const TAG_COVARIATE: u64 = 0x636f7661;
const TAG_SCORES: u64 = 0x73636f72;
const TAG_NOISE: u64 = 0x6e6f6973;

fn stream(seed: u64, tag: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(seed, tag, 0))
}

/// Effect curves of the five influential markers plus the covariate,
/// evaluated on `grid`. Order: `(c1, a1, a2, a3, d3, a4, a5)`.
fn effect_curves(design: SimDesign, grid: &Grid) -> Result<[Vec<f64>; 7], SimError> {
    match design {
        SimDesign::I => {
            let basis = build_basis(grid, 3, &[0.5])?;
            let coefs: [[f64; 5]; 7] = [
                [1.0, 0.0, -4.0, -1.0, 4.0], // c1
                [4.0, 1.0, 3.0, 4.0, 2.0],   // a1
                [3.0, 3.0, 0.0, -4.0, 3.0],  // a2
                [2.0, 5.0, 0.0, 0.0, 0.0],   // a3
                [1.0, 1.0, 5.0, 1.0, 1.0],   // d3
                [4.0, 3.0, 0.0, 1.0, 3.0],   // a4
                [1.0, 1.0, 1.0, 1.0, -5.0],  // a5
            ];
            let mut out: [Vec<f64>; 7] = Default::default();
            for (slot, coef) in out.iter_mut().zip(&coefs) {
                *slot = crate::basis::eval_coefficient_curve(&basis, coef)?;
            }
            Ok(out)
        }
        SimDesign::II => {
            let eval = |f: fn(f64) -> f64| grid.values().iter().map(|&t| f(t)).collect();
            Ok([
                eval(|t| t / 10.0),              // c1
                eval(|t| 10.0 * t.sqrt()),       // a1
                eval(|t| (2.0 * t).exp()),       // a2
                eval(|t| 5.0 * t * t),           // a3
                eval(|t| t * t * t / 3.0),       // d3
                eval(|t| 1.0 - 2.0_f64.powf(t)), // a4
                eval(|t| 10.0 * t),              // a5
            ])
        }
    }
}

/// Generates one panel plus its ground truth.
pub fn gen_panel(spec: &SimSpec) -> Result<(CurvePanel, TruthRecord), SimError> {
    spec.validate()?;
    let (i_n, j_n, k_n) = (spec.n_subjects, spec.n_visits, spec.n_grid);
    let grid = Grid::new(
        (0..k_n)
            .map(|k| k as f64 / (k_n - 1) as f64)
            .collect::<Vec<_>>(),
    )?;

    // Genotypes: per marker, a MAF then two allele draws per subject.
    let mut rng_g = stream(spec.seed, TAG_GENOTYPES);
    let mut mafs = Vec::with_capacity(spec.n_markers);
    let mut additive: Vec<Vec<f64>> = Vec::with_capacity(spec.n_markers);
    let mut dominance: Vec<Vec<f64>> = Vec::with_capacity(spec.n_markers);
    for _ in 0..spec.n_markers {
        let maf = rng_g.random_range(0.1..0.5);
        mafs.push(maf);
        let mut xa = Vec::with_capacity(i_n);
        let mut xd = Vec::with_capacity(i_n);
        for _ in 0..i_n {
            let count = (rng_g.random_bool(maf) as u8 + rng_g.random_bool(maf) as u8) as f64;
            xa.push(count - 1.0);
            xd.push(if count == 1.0 { 1.0 } else { 0.0 });
        }
        additive.push(xa);
        dominance.push(xd);
    }

    let mut rng_c = stream(spec.seed, TAG_COVARIATE);
    let cov: Vec<f64> = (0..i_n).map(|_| rng_c.sample(StandardNormal)).collect();

    // Fixed-effect mean curve per subject.
    let mut mean = vec![0.0; i_n * k_n];
    let curves = effect_curves(spec.design, &grid)?;
    let [c1, a1, a2, a3, d3, a4, a5] = &curves;
    if !spec.null_effects {
        let additive_effects: [(usize, &Vec<f64>); 5] =
            [(0, a1), (1, a2), (2, a3), (3, a4), (4, a5)];
        for i in 0..i_n {
            let row = &mut mean[i * k_n..(i + 1) * k_n];
            for (m, curve) in additive_effects {
                let x = additive[m][i];
                if x != 0.0 {
                    for k in 0..k_n {
                        row[k] += x * curve[k];
                    }
                }
            }
            let xd3 = dominance[2][i];
            if xd3 != 0.0 {
                for k in 0..k_n {
                    row[k] += xd3 * d3[k];
                }
            }
            for k in 0..k_n {
                row[k] += cov[i] * c1[k];
            }
        }
    }

    // Scores and noise; the noise stream is consumed even when
    // `sigma_eps = 0` so panels with different noise levels share all
    // other randomness.
    let psi = true_eigenfunctions(&grid);
    let sds: Vec<f64> = TRUE_EIGENVALUES.iter().map(|l| l.sqrt()).collect();
    let mut rng_z = stream(spec.seed, TAG_SCORES);
    let mut rng_e = stream(spec.seed, TAG_NOISE);
    let mut y = Vec::with_capacity(i_n * j_n * k_n);
    for i in 0..i_n {
        for _j in 0..j_n {
            let mut scores = [0.0; 4];
            for (l, z) in scores.iter_mut().enumerate() {
                *z = sds[l] * rng_z.sample::<f64, _>(StandardNormal);
            }
            for k in 0..k_n {
                let mut val = mean[i * k_n + k];
                for l in 0..4 {
                    val += scores[l] * psi[(k, l)];
                }
                val += spec.sigma_eps * rng_e.sample::<f64, _>(StandardNormal);
                y.push(val);
            }
        }
    }

    // Assemble the panel: interleaved additive/dominance columns.
    let mut predictors = Vec::with_capacity(2 * spec.n_markers);
    for m in 0..spec.n_markers {
        predictors.push((format!("snp{}_a", m + 1), additive[m].clone()));
        predictors.push((format!("snp{}_d", m + 1), dominance[m].clone()));
    }
    let panel = CurvePanel::new(
        grid,
        i_n,
        j_n,
        y,
        predictors,
        vec![("cov".to_string(), cov)],
    )?;

    let truth = if spec.null_effects {
        TruthRecord {
            design: spec.design.to_string(),
            seed: spec.seed,
            n_markers: spec.n_markers,
            sigma_eps: spec.sigma_eps,
            active_markers: vec![],
            active_predictors: vec![],
            mafs,
            effects: vec![],
            covariate_effect: vec![],
            true_eigenvalues: TRUE_EIGENVALUES.to_vec(),
        }
    } else {
        let named = [
            ("snp1_a", a1),
            ("snp2_a", a2),
            ("snp3_a", a3),
            ("snp3_d", d3),
            ("snp4_a", a4),
            ("snp5_a", a5),
        ];
        TruthRecord {
            design: spec.design.to_string(),
            seed: spec.seed,
            n_markers: spec.n_markers,
            sigma_eps: spec.sigma_eps,
            active_markers: vec![0, 1, 2, 3, 4],
            active_predictors: named.iter().map(|(n, _)| n.to_string()).collect(),
            mafs,
            effects: named
                .iter()
                .map(|(n, c)| EffectCurve {
                    name: n.to_string(),
                    values: (*c).clone(),
                })
                .collect(),
            covariate_effect: c1.clone(),
            true_eigenvalues: TRUE_EIGENVALUES.to_vec(),
        }
    };
    Ok((panel, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(design: SimDesign) -> SimSpec {
        SimSpec {
            design,
            n_subjects: 40,
            n_visits: 3,
            n_grid: 30,
            n_markers: 8,
            sigma_eps: 1.0,
            null_effects: false,
            seed: 42,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec(SimDesign::II);
        let (p1, t1) = gen_panel(&spec).unwrap();
        let (p2, t2) = gen_panel(&spec).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(t1.mafs, t2.mafs);
        let (p3, _) = gen_panel(&SimSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(p1, p3);
    }

    #[test]
    fn genotype_coding_invariants_hold() {
        let (panel, truth) = gen_panel(&small_spec(SimDesign::I)).unwrap();
        assert_eq!(panel.n_predictors(), 16);
        assert_eq!(panel.predictor_names()[0], "snp1_a");
        assert_eq!(panel.predictor_names()[1], "snp1_d");
        for m in 0..8 {
            let xa = panel.predictor(2 * m);
            let xd = panel.predictor(2 * m + 1);
            for i in 0..panel.n_subjects() {
                assert!(
                    xa[i] == -1.0 || xa[i] == 0.0 || xa[i] == 1.0,
                    "additive coding out of range"
                );
                // heterozygous exactly when the additive code is 0
                assert_eq!(xd[i], 1.0 - xa[i].abs());
            }
        }
        for maf in &truth.mafs {
            assert!(*maf > 0.1 && *maf < 0.5);
        }
    }

    #[test]
    fn noise_level_does_not_change_genotypes_or_scores() {
        let spec = small_spec(SimDesign::II);
        let quiet = SimSpec {
            sigma_eps: 0.0,
            ..spec.clone()
        };
        let (p1, _) = gen_panel(&spec).unwrap();
        let (p0, _) = gen_panel(&quiet).unwrap();
        for m in 0..p1.n_predictors() {
            assert_eq!(p1.predictor(m), p0.predictor(m));
        }
        assert_eq!(p1.covariate(1), p0.covariate(1));
        // same latent signal: the noisy panel differs from the quiet one
        // by exactly the noise draws
        assert_ne!(p1.responses(), p0.responses());
    }

    #[test]
    fn null_panels_share_randomness_and_have_empty_truth() {
        let spec = small_spec(SimDesign::I);
        let null = SimSpec {
            null_effects: true,
            ..spec.clone()
        };
        let (p, _) = gen_panel(&spec).unwrap();
        let (pn, tn) = gen_panel(&null).unwrap();
        for m in 0..p.n_predictors() {
            assert_eq!(p.predictor(m), pn.predictor(m));
        }
        assert!(tn.active_markers.is_empty());
        assert!(tn.effects.is_empty());
        assert!(tn.covariate_effect.is_empty());
    }

    #[test]
    fn noiseless_visit_differences_lie_in_the_eigenfunction_span() {
        // With sigma_eps = 0, (Y_i1 - Y_i2) = Psi (zeta_i1 - zeta_i2)
        // exactly, so a least-squares fit onto the discretized
        // eigenfunctions leaves no residual.
        let spec = SimSpec {
            sigma_eps: 0.0,
            ..small_spec(SimDesign::II)
        };
        let (panel, _) = gen_panel(&spec).unwrap();
        let psi = true_eigenfunctions(panel.grid());
        let k_n = panel.n_grid();
        for i in 0..5 {
            let d = nalgebra::DVector::from_iterator(
                k_n,
                (0..k_n).map(|k| panel.y(i, 0, k) - panel.y(i, 1, k)),
            );
            let coef = (psi.tr_mul(&psi))
                .cholesky()
                .unwrap()
                .solve(&psi.tr_mul(&d));
            let resid = &d - &psi * coef;
            assert!(resid.norm() < 1e-9, "residual {}", resid.norm());
        }
    }

    #[test]
    fn design_one_curves_hit_table_endpoints() {
        // Clamped cubic basis: at t=0 only the first basis function is 1,
        // at t=1 only the last, so curves hit their first/last expansion
        // coefficients exactly.
        let (_, truth) = gen_panel(&small_spec(SimDesign::I)).unwrap();
        let a1 = truth.effect_for("snp1_a").unwrap();
        assert!((a1[0] - 4.0).abs() < 1e-12);
        assert!((a1[a1.len() - 1] - 2.0).abs() < 1e-12);
        let d3 = truth.effect_for("snp3_d").unwrap();
        assert!((d3[0] - 1.0).abs() < 1e-12);
        assert!((d3[d3.len() - 1] - 1.0).abs() < 1e-12);
        assert!((truth.covariate_effect[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn design_two_curves_match_closed_forms() {
        let (panel, truth) = gen_panel(&small_spec(SimDesign::II)).unwrap();
        let t = panel.grid().values();
        let a1 = truth.effect_for("snp1_a").unwrap();
        let a4 = truth.effect_for("snp4_a").unwrap();
        for k in 0..t.len() {
            assert!((a1[k] - 10.0 * t[k].sqrt()).abs() < 1e-12);
            assert!((a4[k] - (1.0 - 2.0_f64.powf(t[k]))).abs() < 1e-12);
        }
        assert_eq!(truth.active_predictors.len(), 6);
        assert!(truth.active_predictors.contains(&"snp3_d".to_string()));
    }

    #[test]
    fn eigenfunctions_are_orthonormal_in_the_continuum_limit() {
        let grid = Grid::new((0..2001).map(|k| k as f64 / 2000.0).collect()).unwrap();
        let psi = true_eigenfunctions(&grid);
        let gram = psi.tr_mul(&psi) / 2000.0;
        for a in 0..4 {
            for b in 0..4 {
                let target = if a == b { 1.0 } else { 0.0 };
                assert!(
                    (gram[(a, b)] - target).abs() < 5e-3,
                    "gram[{a},{b}] = {}",
                    gram[(a, b)]
                );
            }
        }
    }

    #[test]
    fn spec_validation_rejects_bad_inputs() {
        let mut spec = small_spec(SimDesign::I);
        spec.n_markers = 4;
        assert!(gen_panel(&spec).is_err());
        let mut spec = small_spec(SimDesign::I);
        spec.sigma_eps = -1.0;
        assert!(gen_panel(&spec).is_err());
        let mut spec = small_spec(SimDesign::I);
        spec.n_grid = 1;
        assert!(gen_panel(&spec).is_err());
    }

    #[test]
    fn design_parsing_round_trips() {
        assert_eq!("I".parse::<SimDesign>().unwrap(), SimDesign::I);
        assert_eq!("II".parse::<SimDesign>().unwrap(), SimDesign::II);
        assert_eq!(SimDesign::II.to_string(), "II");
        assert!("III".parse::<SimDesign>().is_err());
    }
}
