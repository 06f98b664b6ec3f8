//! Machine-readable output files (and the readers `select` needs).
//!
//! Every CSV starts with a `# <schema> v1` comment line followed by a
//! header row; JSON documents carry a `schema` field. Floats are written
//! with Rust's shortest-roundtrip formatting, so re-running a command with
//! the same configuration reproduces files byte-for-byte.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::ConfigError;
use crate::basis::BasisSystem;
use crate::gibbs::{ChainState, DrawSink, PosteriorSummary};
use crate::panel::CurvePanel;
use crate::selection::RankedMarkers;

pub const SUMMARY_SCHEMA: &str = "fosr-summary v1";
pub const MANIFEST_SCHEMA: &str = "fosr-manifest v1";
pub const COEF_CURVES_SCHEMA: &str = "fosr-coef-curves v1";
pub const NORMS_SCHEMA: &str = "fosr-norms v1";
pub const EIGEN_SCHEMA: &str = "fosr-eigen v1";
pub const BASIS_SCHEMA: &str = "fosr-basis v1";
pub const DRAWS_SCHEMA: &str = "fosr-draws v1";
pub const RANKED_SCHEMA: &str = "fosr-ranked v1";
pub const BIC_PATH_SCHEMA: &str = "fosr-bic-path v1";
pub const SELECTED_SCHEMA: &str = "fosr-selected v1";
pub const METRICS_SCHEMA: &str = "fosr-metrics v1";
pub const FAILURES_SCHEMA: &str = "fosr-failures v1";

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Run provenance: enough to re-run the command bit-identically.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub crate_version: String,
    pub wall_time_secs: f64,
    pub outputs: Vec<String>,
    /// Canonical `key = value` lines of the effective configuration.
    pub config: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config_hash: String, seed: u64, config: Vec<String>) -> Self {
        Manifest {
            schema: MANIFEST_SCHEMA.into(),
            command: command.into(),
            config_hash,
            seed,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            wall_time_secs: 0.0,
            outputs: vec![],
            config,
        }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let mut w = create(&dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()
    }
}

/// One named group norm in `summary.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct NamedNorm {
    pub predictor: String,
    pub norm: f64,
}

/// The JSON posterior summary written by `fit`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryFile {
    pub schema: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_kept: usize,
    pub band_level: f64,
    pub sigma2_mean: f64,
    pub lambda_r2_mean: f64,
    pub lambdas_mean: Vec<f64>,
    pub sigma2_nugget: f64,
    pub n_components: usize,
    pub explained: Vec<f64>,
    pub group_norms: Vec<NamedNorm>,
    pub mu_hat: Vec<f64>,
    pub max_cache_drift: f64,
}

pub fn write_summary_json(dir: &Path, summary: &SummaryFile) -> std::io::Result<()> {
    let mut w = create(&dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut w, summary)?;
    w.write_all(b"\n")?;
    w.flush()
}

pub fn read_summary_json(path: &Path) -> Result<SummaryFile, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read '{}': {e}", path.display())))?;
    let summary: SummaryFile = serde_json::from_str(&text)
        .map_err(|e| ConfigError(format!("malformed '{}': {e}", path.display())))?;
    if summary.schema != SUMMARY_SCHEMA {
        return Err(ConfigError(format!(
            "'{}' has schema '{}', expected '{SUMMARY_SCHEMA}'",
            path.display(),
            summary.schema
        )));
    }
    Ok(summary)
}

/// `coef_curves.csv`: posterior-mean curves with pointwise bands, one row
/// per (name, grid point); covariate curves follow the predictor curves.
pub fn write_coef_curves(
    dir: &Path,
    panel: &CurvePanel,
    summary: &PosteriorSummary,
) -> std::io::Result<()> {
    let mut w = create(&dir.join("coef_curves.csv"))?;
    writeln!(w, "# {COEF_CURVES_SCHEMA}")?;
    writeln!(w, "predictor,t,mean,lo,hi")?;
    let t = panel.grid().values();
    let emit = |name: &str,
                    curves: &DMatrix<f64>,
                    bands: &Option<crate::gibbs::CurveBands>,
                    row: usize,
                    w: &mut BufWriter<File>|
     -> std::io::Result<()> {
        for k in 0..t.len() {
            let (lo, hi) = match bands {
                Some(b) => (b.lower[(row, k)], b.upper[(row, k)]),
                None => (f64::NAN, f64::NAN),
            };
            writeln!(w, "{},{},{},{},{}", name, t[k], curves[(row, k)], lo, hi)?;
        }
        Ok(())
    };
    for (m, name) in panel.predictor_names().iter().enumerate() {
        emit(name, &summary.coef_curves, &summary.beta_bands, m, &mut w)?;
    }
    for (r, name) in panel.covariate_names().iter().enumerate() {
        emit(name, &summary.covariate_curves, &summary.covariate_bands, r, &mut w)?;
    }
    w.flush()
}

pub fn write_norms(dir: &Path, panel: &CurvePanel, norms: &[f64]) -> std::io::Result<()> {
    let mut w = create(&dir.join("norms.csv"))?;
    writeln!(w, "# {NORMS_SCHEMA}")?;
    writeln!(w, "predictor,norm")?;
    for (name, norm) in panel.predictor_names().iter().zip(norms) {
        writeln!(w, "{name},{norm}")?;
    }
    w.flush()
}

pub fn read_norms(path: &Path) -> Result<Vec<(String, f64)>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read '{}': {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#'));
    match lines.next() {
        Some(h) if h.trim() == "predictor,norm" => {}
        other => {
            return Err(ConfigError(format!(
                "'{}' header is {:?}, expected 'predictor,norm'",
                path.display(),
                other
            )));
        }
    }
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let Some((name, value)) = line.split_once(',') else {
            return Err(ConfigError(format!(
                "'{}': malformed row '{line}'",
                path.display()
            )));
        };
        let norm: f64 = value.trim().parse().map_err(|_| {
            ConfigError(format!("'{}': bad norm '{value}'", path.display()))
        })?;
        out.push((name.trim().to_string(), norm));
    }
    if out.is_empty() {
        return Err(ConfigError(format!("'{}' has no rows", path.display())));
    }
    Ok(out)
}

/// `eigen.csv`: retained eigenfunctions on the grid with their variances
/// and explained shares (repeated per row for flat parsing).
pub fn write_eigen(
    dir: &Path,
    grid_t: &[f64],
    psi: &DMatrix<f64>,
    lambdas: &[f64],
    explained: &[f64],
) -> std::io::Result<()> {
    let mut w = create(&dir.join("eigen.csv"))?;
    writeln!(w, "# {EIGEN_SCHEMA}")?;
    writeln!(w, "component,grid_index,t,psi,lambda,explained")?;
    for l in 0..psi.ncols() {
        for k in 0..psi.nrows() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                l + 1,
                k,
                grid_t[k],
                psi[(k, l)],
                lambdas[l],
                explained[l]
            )?;
        }
    }
    w.flush()
}

/// Reads back `eigen.csv` → (grid values, psi, lambdas).
pub fn read_eigen(path: &Path) -> Result<(Vec<f64>, DMatrix<f64>, Vec<f64>), ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read '{}': {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#'));
    match lines.next() {
        Some(h) if h.trim() == "component,grid_index,t,psi,lambda,explained" => {}
        other => {
            return Err(ConfigError(format!(
                "'{}' header is {:?}, not the eigen schema",
                path.display(),
                other
            )));
        }
    }
    let mut rows: Vec<(usize, usize, f64, f64, f64)> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(ConfigError(format!(
                "'{}': malformed row '{line}'",
                path.display()
            )));
        }
        let parse_f = |s: &str| -> Result<f64, ConfigError> {
            s.trim()
                .parse()
                .map_err(|_| ConfigError(format!("'{}': bad number '{s}'", path.display())))
        };
        let parse_u = |s: &str| -> Result<usize, ConfigError> {
            s.trim()
                .parse()
                .map_err(|_| ConfigError(format!("'{}': bad index '{s}'", path.display())))
        };
        rows.push((
            parse_u(fields[0])?,
            parse_u(fields[1])?,
            parse_f(fields[2])?,
            parse_f(fields[3])?,
            parse_f(fields[4])?,
        ));
    }
    if rows.is_empty() {
        return Err(ConfigError(format!("'{}' has no rows", path.display())));
    }
    let l_n = rows.iter().map(|r| r.0).max().unwrap();
    let k_n = rows.iter().map(|r| r.1).max().unwrap() + 1;
    if rows.len() != l_n * k_n {
        return Err(ConfigError(format!(
            "'{}': expected {} rows for {} components x {} grid points, found {}",
            path.display(),
            l_n * k_n,
            l_n,
            k_n,
            rows.len()
        )));
    }
    let mut t = vec![f64::NAN; k_n];
    let mut psi = DMatrix::zeros(k_n, l_n);
    let mut lambdas = vec![f64::NAN; l_n];
    for (comp, k, tv, pv, lv) in rows {
        if comp == 0 || comp > l_n || k >= k_n {
            return Err(ConfigError(format!(
                "'{}': index out of range in row ({comp}, {k})",
                path.display()
            )));
        }
        t[k] = tv;
        psi[(k, comp - 1)] = pv;
        lambdas[comp - 1] = lv;
    }
    if t.iter().any(|v| v.is_nan()) || lambdas.iter().any(|v| v.is_nan()) {
        return Err(ConfigError(format!(
            "'{}': missing grid points or components",
            path.display()
        )));
    }
    Ok((t, psi, lambdas))
}

/// `basis.csv`: the spline basis evaluated on the grid.
pub fn write_basis(dir: &Path, basis: &BasisSystem) -> std::io::Result<()> {
    let mut w = create(&dir.join("basis.csv"))?;
    writeln!(w, "# {BASIS_SCHEMA}")?;
    writeln!(w, "grid_index,t,basis_index,value")?;
    let t = basis.grid().values();
    let phi = basis.phi();
    for k in 0..phi.nrows() {
        for s in 0..phi.ncols() {
            writeln!(w, "{},{},{},{}", k, t[k], s, phi[(k, s)])?;
        }
    }
    w.flush()
}

pub fn write_ranked(
    dir: &Path,
    ranked: &RankedMarkers,
    group_names: &[String],
) -> std::io::Result<()> {
    let mut w = create(&dir.join("ranked.csv"))?;
    writeln!(w, "# {RANKED_SCHEMA}")?;
    writeln!(w, "rank,group,norm,selected")?;
    for (pos, (&g, norm)) in ranked.order.iter().zip(&ranked.norms).enumerate() {
        writeln!(
            w,
            "{},{},{},{}",
            pos + 1,
            group_names[g],
            norm,
            ranked.selected[g]
        )?;
    }
    w.flush()
}

pub fn write_bic_path(dir: &Path, bic_path: &[f64]) -> std::io::Result<()> {
    let mut w = create(&dir.join("bic_path.csv"))?;
    writeln!(w, "# {BIC_PATH_SCHEMA}")?;
    writeln!(w, "n_groups,bic")?;
    for (s, bic) in bic_path.iter().enumerate() {
        writeln!(w, "{s},{bic}")?;
    }
    w.flush()
}

/// `selected.json`: the chosen groups under both reporting rules.
#[derive(Debug, Serialize, Deserialize)]
pub struct SelectedFile {
    pub schema: String,
    /// Groups chosen by the BIC cutoff, in rank order.
    pub bic: Vec<String>,
    /// The top five groups by norm, in rank order.
    pub top5: Vec<String>,
    pub n_selected_bic: usize,
}

pub fn write_selected(dir: &Path, selected: &SelectedFile) -> std::io::Result<()> {
    let mut w = create(&dir.join("selected.json"))?;
    serde_json::to_writer_pretty(&mut w, selected)?;
    w.write_all(b"\n")?;
    w.flush()
}

/// One `metrics.csv` row: a study cell under one reporting rule.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub design: String,
    pub sigma_eps: f64,
    pub n_subjects: usize,
    pub n_visits: usize,
    pub n_grid: usize,
    pub n_markers: usize,
    pub rule: String,
    pub n_reps: usize,
    pub strict_power: f64,
    pub type1_error: f64,
    /// Individual powers sorted descending; padded with empty cells.
    pub individual_sorted: Vec<f64>,
}

pub fn write_metrics(dir: &Path, rows: &[MetricsRow]) -> std::io::Result<()> {
    let mut w = create(&dir.join("metrics.csv"))?;
    writeln!(w, "# {METRICS_SCHEMA}")?;
    writeln!(
        w,
        "design,sigma_eps,n_subjects,n_visits,n_grid,n_markers,rule,n_reps,strict_power,type1_error,p1,p2,p3,p4,p5"
    )?;
    for r in rows {
        let mut powers: Vec<String> = r.individual_sorted.iter().map(|p| p.to_string()).collect();
        powers.resize(5, String::new());
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.design,
            r.sigma_eps,
            r.n_subjects,
            r.n_visits,
            r.n_grid,
            r.n_markers,
            r.rule,
            r.n_reps,
            r.strict_power,
            r.type1_error,
            powers.join(",")
        )?;
    }
    w.flush()
}

/// One failed replicate in `failures.csv`.
#[derive(Debug, Clone)]
pub struct FailureRow {
    pub replicate: usize,
    pub stage: String,
    pub error: String,
}

pub fn write_failures(dir: &Path, rows: &[FailureRow]) -> std::io::Result<()> {
    let mut w = create(&dir.join("failures.csv"))?;
    writeln!(w, "# {FAILURES_SCHEMA}")?;
    writeln!(w, "replicate,stage,error")?;
    for r in rows {
        // keep the CSV single-line per failure
        let clean = r.error.replace(['\n', ','], ";");
        writeln!(w, "{},{},{}", r.replicate, r.stage, clean)?;
    }
    w.flush()
}

/// Streams kept draws to `draws.csv`: scalars, coefficient blocks, latent
/// scales, and score variances (scores themselves are omitted — they scale
/// with `I*J` and are rarely useful raw).
pub struct CsvDrawSink {
    w: BufWriter<File>,
}

impl CsvDrawSink {
    pub fn create(
        dir: &Path,
        panel: &CurvePanel,
        basis: &BasisSystem,
        n_components: usize,
    ) -> std::io::Result<Self> {
        let mut w = create(&dir.join("draws.csv"))?;
        writeln!(w, "# {DRAWS_SCHEMA}")?;
        let mut header = vec!["iteration".to_string(), "sigma2".into(), "lambda_r2".into()];
        let v = basis.n_basis();
        for name in panel.predictor_names() {
            for s in 0..v {
                header.push(format!("b:{name}:{s}"));
            }
        }
        for name in panel.covariate_names() {
            for s in 0..v {
                header.push(format!("c:{name}:{s}"));
            }
        }
        for name in panel.predictor_names() {
            header.push(format!("tau2:{name}"));
        }
        for l in 0..n_components {
            header.push(format!("lambda:{}", l + 1));
        }
        writeln!(w, "{}", header.join(","))?;
        Ok(CsvDrawSink { w })
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.w.flush()
    }
}

impl DrawSink for CsvDrawSink {
    fn record(&mut self, iteration: usize, state: &ChainState) -> std::io::Result<()> {
        write!(self.w, "{},{},{}", iteration, state.sigma2, state.lambda_r2)?;
        for m in 0..state.b.nrows() {
            for s in 0..state.b.ncols() {
                write!(self.w, ",{}", state.b[(m, s)])?;
            }
        }
        for r in 0..state.c.nrows() {
            for s in 0..state.c.ncols() {
                write!(self.w, ",{}", state.c[(r, s)])?;
            }
        }
        for t in &state.tau2 {
            write!(self.w, ",{t}")?;
        }
        for l in &state.lambdas {
            write!(self.w, ",{l}")?;
        }
        writeln!(self.w)
    }
}

pub fn write_truth(dir: &Path, truth: &crate::simgen::TruthRecord) -> std::io::Result<()> {
    let mut w = create(&dir.join("truth.json"))?;
    serde_json::to_writer_pretty(&mut w, truth)?;
    w.write_all(b"\n")?;
    w.flush()
}

pub fn read_truth(path: &Path) -> Result<crate::simgen::TruthRecord, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read '{}': {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| ConfigError(format!("malformed '{}': {e}", path.display())))
}
