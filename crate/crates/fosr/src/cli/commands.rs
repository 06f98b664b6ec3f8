//! The five commands: `simulate | fit | select | replicate | summarize`.
//!
//! Each command is a plain function over a validated [`RunConfig`];
//! [`CliError`] carries the process exit code (2 = validation/data/IO,
//! 3 = numerical failure, 4 = partial replicate failure).

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::{ConfigError, RunConfig};
use super::outputs::{
    self, CsvDrawSink, FailureRow, Manifest, MetricsRow, NamedNorm, SelectedFile, SummaryFile,
};
use crate::basis::{build_basis, default_knots, BasisError, BasisSystem};
use crate::fpca::{
    default_smoother_dim, eigendecompose_truncate, empirical_residual_cov, sandwich_smooth,
    FpcaError, FpcaResult,
};
use crate::gibbs::{
    run_chain, ChainError, ChainOptions, DrawSink, InitMode, PosteriorSummary, PriorConfig,
};
use crate::numeric::derive_seed;
use crate::panel::{load_panel, save_panel, CurvePanel, PanelError};
use crate::pilot::{ridge_fit, PilotError};
use crate::selection::{
    bic_stepwise, interleaved_pairs, rank_norms, study_metrics, RankedMarkers, SelectOptions,
    SelectionError,
};
use crate::simgen::{gen_panel, SimDesign, SimError, SimSpec, TruthRecord};

/// Domain tag separating per-replicate seeds from other streams.
const REP_TAG: u64 = 0x72657073;

/// A command failure, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, malformed data, or file-system trouble (exit 2).
    Validation(String),
    /// The algorithm itself broke down (exit 3).
    Numerical(String),
    /// Some replicates of a study failed (exit 4).
    Partial(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Partial(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Partial(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<BasisError> for CliError {
    fn from(e: BasisError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PilotError> for CliError {
    fn from(e: PilotError) -> Self {
        match e {
            PilotError::NotPositiveDefinite { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<FpcaError> for CliError {
    fn from(e: FpcaError) -> Self {
        match e {
            FpcaError::DegenerateCovariance => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ChainError> for CliError {
    fn from(e: ChainError) -> Self {
        match e {
            ChainError::ChainDiverged { .. } | ChainError::NotPositiveDefinite { .. } => {
                CliError::Numerical(e.to_string())
            }
            ChainError::Pilot(p) => p.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SelectionError> for CliError {
    fn from(e: SelectionError) -> Self {
        match e {
            SelectionError::Numerical(_) => CliError::Numerical(e.to_string()),
            SelectionError::Pilot(p) => p.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn sim_spec(cfg: &RunConfig, seed: u64) -> Result<SimSpec, CliError> {
    let design: SimDesign = cfg.sim_design.parse()?;
    Ok(SimSpec {
        design,
        n_subjects: cfg.n_subjects,
        n_visits: cfg.n_visits,
        n_grid: cfg.n_grid,
        n_markers: cfg.n_markers,
        sigma_eps: cfg.sigma_eps,
        null_effects: cfg.null_effects,
        seed,
    })
}

fn load_panel_from_cfg(cfg: &RunConfig) -> Result<CurvePanel, CliError> {
    let (Some(curves), Some(design)) = (&cfg.curves_csv, &cfg.design_csv) else {
        return Err(CliError::Validation(
            "this command needs input data: set `data = <dir>` (or `curves_csv = ...` \
             and `design_csv = ...`) in the config or via --set"
                .into(),
        ));
    };
    Ok(load_panel(curves, design)?)
}

/// Deterministic per-replicate seed.
pub fn replicate_seed(master_seed: u64, rep: usize) -> u64 {
    derive_seed(master_seed, REP_TAG, rep as u64)
}

/// `simulate`: write `rep_<n>/` panel directories plus truth records.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let t0 = Instant::now();
    std::fs::create_dir_all(&cfg.out)?;
    let mut written = Vec::new();
    for rep in 1..=cfg.n_reps {
        let spec = sim_spec(cfg, replicate_seed(cfg.seed, rep))?;
        let (panel, truth) = gen_panel(&spec)?;
        let dir = cfg.out.join(format!("rep_{rep}"));
        save_panel(&panel, &dir)?;
        outputs::write_truth(&dir, &truth)?;
        for f in ["curves.csv", "design.csv", "truth.json"] {
            written.push(format!("rep_{rep}/{f}"));
        }
    }
    let mut manifest = Manifest::new("simulate", cfg.hash(), cfg.seed, cfg.canonical_lines());
    manifest.outputs = written;
    manifest.wall_time_secs = t0.elapsed().as_secs_f64();
    manifest.write(&cfg.out)?;
    println!(
        "simulate: wrote {} replicate panel(s) under {}",
        cfg.n_reps,
        cfg.out.display()
    );
    Ok(())
}

/// Everything the sampler needs that is computed before it runs.
pub struct Prepared {
    pub basis: BasisSystem,
    pub fpca: FpcaResult,
    pub sigma2_nugget: f64,
}

/// Pilot fit → residual covariance → smoothing → truncated eigensystem.
pub fn prepare_pipeline(panel: &CurvePanel, cfg: &RunConfig) -> Result<Prepared, CliError> {
    let knots = default_knots(cfg.n_interior_knots);
    let basis = build_basis(panel.grid(), cfg.degree, &knots)?;
    let all_cols: Vec<usize> = (0..panel.n_predictors()).collect();
    let pilot = ridge_fit(panel, &basis, &all_cols, cfg.pilot_ridge_rel)?;
    let fitted = pilot.fitted_visits(panel.n_visits());
    let raw = empirical_residual_cov(panel, &fitted)?;
    let dim = if cfg.smoother_dim == 0 {
        default_smoother_dim(panel.n_grid())
    } else {
        cfg.smoother_dim
    };
    let surface = sandwich_smooth(&raw, dim)?;
    let fpca = eigendecompose_truncate(&surface, cfg.tau_total, cfg.tau_incr)?;
    Ok(Prepared {
        basis,
        fpca,
        sigma2_nugget: surface.sigma2_nugget,
    })
}

/// Runs the blocked sampler on a prepared panel.
pub fn run_fit(
    panel: &CurvePanel,
    cfg: &RunConfig,
    prepared: &Prepared,
    seed: u64,
    sink: Option<&mut dyn DrawSink>,
) -> Result<PosteriorSummary, CliError> {
    let priors = PriorConfig {
        alpha1_r: cfg.alpha1_r,
        alpha2_r: cfg.alpha2_r,
        alpha1_l: cfg.alpha1_l,
        alpha2_l: cfg.alpha2_l,
        c_scale: cfg.c_scale,
    };
    let options = ChainOptions {
        n_burn: cfg.n_burn,
        n_keep: cfg.n_keep,
        seed,
        init: InitMode::PilotRidge,
        predictor_order: None,
        refresh_every: cfg.refresh_every,
        keep_coef_draws: true,
        band_level: cfg.band_level,
        pilot_ridge_rel: cfg.pilot_ridge_rel,
    };
    Ok(run_chain(
        panel,
        &prepared.basis,
        &prepared.fpca,
        prepared.sigma2_nugget,
        priors,
        &options,
        sink,
    )?)
}

fn summary_file(
    cfg: &RunConfig,
    seed: u64,
    panel: &CurvePanel,
    prepared: &Prepared,
    summary: &PosteriorSummary,
) -> SummaryFile {
    SummaryFile {
        schema: outputs::SUMMARY_SCHEMA.into(),
        config_hash: cfg.hash(),
        seed,
        n_kept: summary.n_kept,
        band_level: summary.band_level,
        sigma2_mean: summary.sigma2_mean,
        lambda_r2_mean: summary.lambda_r2_mean,
        lambdas_mean: summary.lambdas_mean.clone(),
        sigma2_nugget: prepared.sigma2_nugget,
        n_components: prepared.fpca.n_components(),
        explained: prepared.fpca.explained.clone(),
        group_norms: panel
            .predictor_names()
            .iter()
            .zip(&summary.group_norms)
            .map(|(name, &norm)| NamedNorm {
                predictor: name.clone(),
                norm,
            })
            .collect(),
        mu_hat: summary.mu_hat.clone(),
        max_cache_drift: summary.max_cache_drift,
    }
}

fn write_fit_outputs(
    dir: &Path,
    cfg: &RunConfig,
    seed: u64,
    panel: &CurvePanel,
    prepared: &Prepared,
    summary: &PosteriorSummary,
) -> Result<Vec<String>, CliError> {
    std::fs::create_dir_all(dir)?;
    outputs::write_summary_json(dir, &summary_file(cfg, seed, panel, prepared, summary))?;
    outputs::write_coef_curves(dir, panel, summary)?;
    outputs::write_eigen(
        dir,
        panel.grid().values(),
        &prepared.fpca.psi,
        &prepared.fpca.lambdas,
        &prepared.fpca.explained,
    )?;
    outputs::write_norms(dir, panel, &summary.group_norms)?;
    outputs::write_basis(dir, &prepared.basis)?;
    Ok([
        "summary.json",
        "coef_curves.csv",
        "eigen.csv",
        "norms.csv",
        "basis.csv",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect())
}

/// `fit`: load a panel, run the pipeline, write posterior summaries.
pub fn cmd_fit(cfg: &RunConfig) -> Result<(), CliError> {
    let t0 = Instant::now();
    let panel = load_panel_from_cfg(cfg)?;
    let prepared = prepare_pipeline(&panel, cfg)?;
    std::fs::create_dir_all(&cfg.out)?;
    let mut sink = if cfg.keep_draws {
        Some(CsvDrawSink::create(
            &cfg.out,
            &panel,
            &prepared.basis,
            prepared.fpca.n_components(),
        )?)
    } else {
        None
    };
    let summary = run_fit(
        &panel,
        cfg,
        &prepared,
        cfg.seed,
        sink.as_mut().map(|s| s as &mut dyn DrawSink),
    )?;
    if let Some(s) = sink {
        s.finish()?;
    }
    let mut written = write_fit_outputs(&cfg.out, cfg, cfg.seed, &panel, &prepared, &summary)?;
    if cfg.keep_draws {
        written.push("draws.csv".into());
    }
    let mut manifest = Manifest::new("fit", cfg.hash(), cfg.seed, cfg.canonical_lines());
    manifest.outputs = written;
    manifest.wall_time_secs = t0.elapsed().as_secs_f64();
    manifest.write(&cfg.out)?;
    println!(
        "fit: kept {} draws, sigma2_mean = {:.6}, {} component(s); outputs in {}",
        summary.n_kept,
        summary.sigma2_mean,
        prepared.fpca.n_components(),
        cfg.out.display()
    );
    Ok(())
}

/// Grouping of predictor columns used by ranking/selection.
fn pairing_for(
    cfg: &RunConfig,
    names: &[String],
) -> Result<Option<Vec<(usize, usize)>>, CliError> {
    match cfg.pairing.as_str() {
        "none" => Ok(None),
        "interleaved" => Ok(Some(interleaved_pairs(names.len())?)),
        "auto" => {
            let looks_paired = !names.is_empty()
                && names.len() % 2 == 0
                && (0..names.len() / 2).all(|m| {
                    match (
                        names[2 * m].strip_suffix("_a"),
                        names[2 * m + 1].strip_suffix("_d"),
                    ) {
                        (Some(stem_a), Some(stem_d)) => stem_a == stem_d,
                        _ => false,
                    }
                });
            if looks_paired {
                Ok(Some(interleaved_pairs(names.len())?))
            } else {
                Ok(None)
            }
        }
        other => Err(CliError::Validation(format!("unknown pairing '{other}'"))),
    }
}

/// Human-readable group names: the predictor name for singletons, the
/// common marker stem (e.g. `snp3`) for additive/dominance pairs.
fn group_names(ranked: &RankedMarkers, predictor_names: &[String]) -> Vec<String> {
    ranked
        .groups()
        .iter()
        .map(|cols| {
            if cols.len() == 1 {
                return predictor_names[cols[0]].clone();
            }
            let a = &predictor_names[cols[0]];
            let d = &predictor_names[cols[1]];
            match (a.strip_suffix("_a"), d.strip_suffix("_d")) {
                (Some(stem_a), Some(stem_d)) if stem_a == stem_d => stem_a.to_string(),
                _ => format!("{a}+{d}"),
            }
        })
        .collect()
}

fn rank_and_select(
    panel: &CurvePanel,
    cfg: &RunConfig,
    basis: &BasisSystem,
    fpca: &FpcaResult,
    sigma2: f64,
    norms: &[f64],
) -> Result<RankedMarkers, CliError> {
    let pairs = pairing_for(cfg, panel.predictor_names())?;
    let mut ranked = rank_norms(norms, pairs.as_deref())?;
    let opts = SelectOptions {
        max_size: Some(cfg.max_model_size),
        ridge_rel: cfg.select_ridge_rel,
    };
    bic_stepwise(panel, basis, fpca, sigma2, &mut ranked, &opts)?;
    Ok(ranked)
}

fn selected_file(ranked: &RankedMarkers, names: &[String]) -> SelectedFile {
    SelectedFile {
        schema: outputs::SELECTED_SCHEMA.into(),
        bic: ranked.order[..ranked.n_selected]
            .iter()
            .map(|&g| names[g].clone())
            .collect(),
        top5: ranked
            .top_groups(5)
            .iter()
            .map(|&g| names[g].clone())
            .collect(),
        n_selected_bic: ranked.n_selected,
    }
}

fn write_select_outputs(
    dir: &Path,
    ranked: &RankedMarkers,
    names: &[String],
) -> Result<Vec<String>, CliError> {
    outputs::write_ranked(dir, ranked, names)?;
    outputs::write_bic_path(dir, &ranked.bic_path)?;
    outputs::write_selected(dir, &selected_file(ranked, names))?;
    Ok(["ranked.csv", "bic_path.csv", "selected.json"]
        .iter()
        .map(|s| s.to_string())
        .collect())
}

/// `select`: rank groups from a finished fit and apply the BIC cutoff.
///
/// Reads `summary.json`, `eigen.csv`, and `norms.csv` from the output
/// directory (where `fit` left them) plus the original panel.
pub fn cmd_select(cfg: &RunConfig) -> Result<(), CliError> {
    let t0 = Instant::now();
    let panel = load_panel_from_cfg(cfg)?;
    let dir = &cfg.out;
    let summary = outputs::read_summary_json(&dir.join("summary.json"))?;
    let (eigen_t, psi, lambdas) = outputs::read_eigen(&dir.join("eigen.csv"))?;
    let norm_rows = outputs::read_norms(&dir.join("norms.csv"))?;

    if eigen_t.len() != panel.n_grid() {
        return Err(CliError::Validation(format!(
            "eigen.csv has {} grid points but the panel has {}",
            eigen_t.len(),
            panel.n_grid()
        )));
    }
    let names = panel.predictor_names();
    if norm_rows.len() != names.len()
        || norm_rows.iter().zip(names).any(|((n, _), want)| n != want)
    {
        return Err(CliError::Validation(
            "norms.csv predictors do not match the panel design (was `fit` run on this data?)"
                .into(),
        ));
    }
    let norms: Vec<f64> = norm_rows.into_iter().map(|(_, v)| v).collect();

    let basis = build_basis(panel.grid(), cfg.degree, &default_knots(cfg.n_interior_knots))?;
    let fpca = FpcaResult {
        psi,
        lambdas,
        explained: summary.explained.clone(),
    };
    let ranked = rank_and_select(&panel, cfg, &basis, &fpca, summary.sigma2_mean, &norms)?;
    let group_labels = group_names(&ranked, panel.predictor_names());
    let written = write_select_outputs(dir, &ranked, &group_labels)?;

    // extend the fit manifest rather than clobbering its output list
    let mut manifest = Manifest::new("select", cfg.hash(), cfg.seed, cfg.canonical_lines());
    if let Ok(text) = std::fs::read_to_string(dir.join("manifest.json")) {
        if let Ok(previous) = serde_json::from_str::<Manifest>(&text) {
            manifest.outputs = previous.outputs;
        }
    }
    for f in written {
        if !manifest.outputs.contains(&f) {
            manifest.outputs.push(f);
        }
    }
    manifest.wall_time_secs = t0.elapsed().as_secs_f64();
    manifest.write(dir)?;
    println!(
        "select: {} group(s) pass the BIC cutoff (of {}); outputs in {}",
        ranked.n_selected,
        ranked.n_groups(),
        dir.display()
    );
    Ok(())
}

/// Everything one replicate of a study produces.
pub struct RepOutcome {
    pub rep: usize,
    pub n_groups: usize,
    /// Group indices truly carrying effects.
    pub truth_groups: Vec<usize>,
    /// Group indices selected by the BIC cutoff.
    pub bic_groups: Vec<usize>,
    /// The five top-ranked group indices.
    pub top5_groups: Vec<usize>,
}

/// Truth marker/predictor sets mapped into ranking-group indices.
fn truth_group_indices(
    truth: &TruthRecord,
    panel: &CurvePanel,
    paired: bool,
) -> Result<Vec<usize>, CliError> {
    if paired {
        return Ok(truth.active_markers.clone());
    }
    let names = panel.predictor_names();
    truth
        .active_predictors
        .iter()
        .map(|want| {
            names.iter().position(|n| n == want).ok_or_else(|| {
                CliError::Validation(format!("truth predictor '{want}' not in the panel"))
            })
        })
        .collect()
}

fn run_one_replicate(cfg: &RunConfig, rep: usize) -> Result<RepOutcome, FailureRow> {
    let fail = |stage: &str, err: CliError| FailureRow {
        replicate: rep,
        stage: stage.into(),
        error: err.to_string(),
    };
    let seed = replicate_seed(cfg.seed, rep);
    let rep_dir = cfg.out.join(format!("rep_{rep}"));
    std::fs::create_dir_all(&rep_dir).map_err(|e| fail("setup", e.into()))?;

    // simulate
    let spec = sim_spec(cfg, seed).map_err(|e| fail("simulate", e))?;
    let (panel, truth) = gen_panel(&spec).map_err(|e| fail("simulate", e.into()))?;
    outputs::write_truth(&rep_dir, &truth).map_err(|e| fail("simulate", e.into()))?;

    // fit
    let prepared = prepare_pipeline(&panel, cfg).map_err(|e| fail("fit", e))?;
    let summary = run_fit(&panel, cfg, &prepared, seed, None).map_err(|e| fail("fit", e))?;
    outputs::write_summary_json(&rep_dir, &summary_file(cfg, seed, &panel, &prepared, &summary))
        .map_err(|e| fail("fit", e.into()))?;

    // select
    let ranked = rank_and_select(
        &panel,
        cfg,
        &prepared.basis,
        &prepared.fpca,
        summary.sigma2_mean,
        &summary.group_norms,
    )
    .map_err(|e| fail("select", e))?;
    let labels = group_names(&ranked, panel.predictor_names());
    outputs::write_selected(&rep_dir, &selected_file(&ranked, &labels))
        .map_err(|e| fail("select", e.into()))?;

    let paired = ranked.n_groups() != panel.n_predictors();
    let truth_groups =
        truth_group_indices(&truth, &panel, paired).map_err(|e| fail("select", e))?;
    Ok(RepOutcome {
        rep,
        n_groups: ranked.n_groups(),
        truth_groups,
        bic_groups: ranked.order[..ranked.n_selected].to_vec(),
        top5_groups: ranked.top_groups(5).to_vec(),
    })
}

/// Aggregated result of a replicate study.
pub struct StudyOutcome {
    pub outcomes: Vec<RepOutcome>,
    pub failures: Vec<FailureRow>,
    pub metrics: Vec<MetricsRow>,
}

/// Runs `n_reps` simulate→fit→select replicates (parallel across
/// `workers`), aggregating in replicate order so results do not depend on
/// the worker count.
pub fn replicate_study(cfg: &RunConfig) -> Result<StudyOutcome, CliError> {
    std::fs::create_dir_all(&cfg.out)?;
    let reps: Vec<usize> = (1..=cfg.n_reps).collect();
    let results: Vec<Result<RepOutcome, FailureRow>> = if cfg.workers == 1 {
        reps.iter().map(|&rep| run_one_replicate(cfg, rep)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| CliError::Validation(format!("cannot build worker pool: {e}")))?;
        pool.install(|| {
            reps.par_iter()
                .map(|&rep| run_one_replicate(cfg, rep))
                .collect()
        })
    };

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(f) => failures.push(f),
        }
    }

    let mut metrics = Vec::new();
    if let Some(first) = outcomes.first() {
        let n_groups = first.n_groups;
        let truth = first.truth_groups.clone();
        for o in &outcomes {
            if o.n_groups != n_groups || o.truth_groups != truth {
                return Err(CliError::Validation(
                    "replicates disagree on the group structure".into(),
                ));
            }
        }
        let design: SimDesign = cfg.sim_design.parse()?;
        let base = MetricsRow {
            design: design.to_string(),
            sigma_eps: cfg.sigma_eps,
            n_subjects: cfg.n_subjects,
            n_visits: cfg.n_visits,
            n_grid: cfg.n_grid,
            n_markers: cfg.n_markers,
            rule: String::new(),
            n_reps: outcomes.len(),
            strict_power: 0.0,
            type1_error: 0.0,
            individual_sorted: vec![],
        };
        let rules: [(&str, fn(&RepOutcome) -> Vec<usize>); 2] = [
            ("bic", |o| o.bic_groups.clone()),
            ("top5", |o| o.top5_groups.clone()),
        ];
        for (rule, pick) in rules {
            let per_rep: Vec<Vec<usize>> = outcomes.iter().map(pick).collect();
            let m = study_metrics(&per_rep, &truth, n_groups)?;
            metrics.push(MetricsRow {
                rule: rule.into(),
                strict_power: m.strict_power,
                type1_error: m.type1_error,
                individual_sorted: m.sorted_individual(),
                ..base.clone()
            });
        }
    }
    Ok(StudyOutcome {
        outcomes,
        failures,
        metrics,
    })
}

/// `replicate`: run a study cell and write `metrics.csv` + `failures.csv`.
pub fn cmd_replicate(cfg: &RunConfig) -> Result<(), CliError> {
    let t0 = Instant::now();
    let study = replicate_study(cfg)?;
    outputs::write_metrics(&cfg.out, &study.metrics)?;
    outputs::write_failures(&cfg.out, &study.failures)?;

    let mut manifest = Manifest::new("replicate", cfg.hash(), cfg.seed, cfg.canonical_lines());
    manifest.outputs = vec!["metrics.csv".into(), "failures.csv".into()];
    for rep in 1..=cfg.n_reps {
        for f in ["truth.json", "summary.json", "selected.json"] {
            manifest.outputs.push(format!("rep_{rep}/{f}"));
        }
    }
    manifest.wall_time_secs = t0.elapsed().as_secs_f64();
    manifest.write(&cfg.out)?;

    println!(
        "replicate: {} of {} replicate(s) succeeded; outputs in {}",
        study.outcomes.len(),
        cfg.n_reps,
        cfg.out.display()
    );
    for row in &study.metrics {
        println!(
            "  rule {:<5} strict_power = {:.3}  type1_error = {:.5}",
            row.rule, row.strict_power, row.type1_error
        );
    }
    if !study.failures.is_empty() {
        return Err(CliError::Partial(format!(
            "{} of {} replicate(s) failed (see failures.csv)",
            study.failures.len(),
            cfg.n_reps
        )));
    }
    Ok(())
}

fn summarize_metrics(path: &PathBuf) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| CliError::Validation(format!("'{}' is empty", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    println!("study metrics ({}):", path.display());
    let rows: Vec<Vec<&str>> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').collect())
        .collect();
    if rows.is_empty() {
        println!("  (no completed replicates)");
        return Ok(());
    }
    for row in &rows {
        println!();
        for (name, value) in cols.iter().zip(row) {
            if !value.is_empty() {
                println!("  {name:>13} = {value}");
            }
        }
    }
    Ok(())
}

fn summarize_fit(path: &PathBuf) -> Result<(), CliError> {
    let summary = outputs::read_summary_json(path)?;
    println!("posterior summary ({}):", path.display());
    println!("  kept draws        = {}", summary.n_kept);
    println!("  sigma2_mean       = {:.6}", summary.sigma2_mean);
    println!("  lambda_r2_mean    = {:.6}", summary.lambda_r2_mean);
    println!("  components        = {}", summary.n_components);
    for (l, (lam, ex)) in summary
        .lambdas_mean
        .iter()
        .zip(&summary.explained)
        .enumerate()
    {
        println!("    lambda_{} = {:.4} (explains {:.1}%)", l + 1, lam, ex * 100.0);
    }
    let mut norms: Vec<&NamedNorm> = summary.group_norms.iter().collect();
    norms.sort_by(|a, b| b.norm.partial_cmp(&a.norm).unwrap_or(std::cmp::Ordering::Equal));
    println!("  top coefficient-curve norms:");
    for n in norms.iter().take(10) {
        println!("    {:<12} {:.5}", n.predictor, n.norm);
    }
    let selected_path = path.with_file_name("selected.json");
    if let Ok(text) = std::fs::read_to_string(&selected_path) {
        if let Ok(sel) = serde_json::from_str::<SelectedFile>(&text) {
            println!("  selected (BIC): {}", render_list(&sel.bic));
            println!("  top 5 ranked:   {}", render_list(&sel.top5));
        }
    }
    Ok(())
}

fn render_list(items: &[String]) -> String {
    if items.is_empty() {
        "(none)".into()
    } else {
        items.join(", ")
    }
}

/// `summarize`: pretty-print `metrics.csv` or `summary.json` from `out`.
pub fn cmd_summarize(cfg: &RunConfig) -> Result<(), CliError> {
    let metrics = cfg.out.join("metrics.csv");
    if metrics.is_file() {
        return summarize_metrics(&metrics);
    }
    let summary = cfg.out.join("summary.json");
    if summary.is_file() {
        return summarize_fit(&summary);
    }
    Err(CliError::Validation(format!(
        "nothing to summarize: neither '{}' nor '{}' exists",
        metrics.display(),
        summary.display()
    )))
}
