//! Flat key-value run configuration.
//!
//! Configuration comes from an INI-style file (`key = value` lines;
//! `[section]` headers are allowed and ignored; `#` or `;` start comments),
//! is overridden by repeatable `--set key=value` flags, and finally by the
//! dedicated flags (`--seed`, `--out`, ...). The effective configuration
//! has a canonical line rendering whose FNV-1a hash goes into every
//! manifest, so outputs can be traced back to the exact settings.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::numeric::fnv1a_hex;

/// A configuration problem: maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Every knob of the pipeline, with defaults matching the methodology
/// (chain lengths 1000/1000, FPCA thresholds 0.90/0.01, cubic splines).
#[derive(Debug, Clone)]
pub struct RunConfig {
    // io
    pub curves_csv: Option<PathBuf>,
    pub design_csv: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub workers: usize,
    // simulation
    pub sim_design: String,
    pub n_subjects: usize,
    pub n_visits: usize,
    pub n_grid: usize,
    pub n_markers: usize,
    pub sigma_eps: f64,
    pub null_effects: bool,
    pub n_reps: usize,
    // basis
    pub degree: usize,
    pub n_interior_knots: usize,
    // fpca
    pub tau_total: f64,
    pub tau_incr: f64,
    /// 0 means "derive from the grid size".
    pub smoother_dim: usize,
    // priors
    pub alpha1_r: f64,
    pub alpha2_r: f64,
    pub alpha1_l: f64,
    pub alpha2_l: f64,
    pub c_scale: f64,
    // chain
    pub n_burn: usize,
    pub n_keep: usize,
    pub keep_draws: bool,
    pub band_level: f64,
    pub refresh_every: usize,
    pub pilot_ridge_rel: f64,
    // selection
    pub max_model_size: usize,
    pub select_ridge_rel: f64,
    /// `auto`, `none`, or `interleaved`.
    pub pairing: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            curves_csv: None,
            design_csv: None,
            out: PathBuf::from("out"),
            seed: 0,
            workers: 1,
            sim_design: "II".into(),
            n_subjects: 300,
            n_visits: 5,
            n_grid: 50,
            n_markers: 5,
            sigma_eps: 1.0,
            null_effects: false,
            n_reps: 1,
            degree: 3,
            n_interior_knots: 1,
            tau_total: 0.90,
            tau_incr: 0.01,
            smoother_dim: 0,
            alpha1_r: 0.01,
            alpha2_r: 0.01,
            alpha1_l: 0.01,
            alpha2_l: 0.01,
            c_scale: 1.0,
            n_burn: 1000,
            n_keep: 1000,
            keep_draws: false,
            band_level: 0.95,
            refresh_every: 100,
            pilot_ridge_rel: 1e-4,
            max_model_size: 20,
            select_ridge_rel: 1e-4,
            pairing: "auto".into(),
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(ConfigError(format!(
            "key '{key}': expected a boolean, got '{other}'"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| {
        ConfigError(format!(
            "key '{key}': cannot parse '{value}' as {}",
            std::any::type_name::<T>()
        ))
    })
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "curves_csv" => self.curves_csv = Some(PathBuf::from(v)),
            "design_csv" => self.design_csv = Some(PathBuf::from(v)),
            // convenience: a panel directory holding curves.csv + design.csv
            "data" => {
                let dir = PathBuf::from(v);
                self.curves_csv = Some(dir.join("curves.csv"));
                self.design_csv = Some(dir.join("design.csv"));
            }
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = parse_num(key, v)?,
            "workers" => self.workers = parse_num(key, v)?,
            "sim_design" => self.sim_design = v.to_string(),
            "n_subjects" => self.n_subjects = parse_num(key, v)?,
            "n_visits" => self.n_visits = parse_num(key, v)?,
            "n_grid" => self.n_grid = parse_num(key, v)?,
            "n_markers" => self.n_markers = parse_num(key, v)?,
            "sigma_eps" => self.sigma_eps = parse_num(key, v)?,
            "null_effects" => self.null_effects = parse_bool(key, v)?,
            "n_reps" => self.n_reps = parse_num(key, v)?,
            "degree" => self.degree = parse_num(key, v)?,
            "n_interior_knots" => self.n_interior_knots = parse_num(key, v)?,
            "tau_total" => self.tau_total = parse_num(key, v)?,
            "tau_incr" => self.tau_incr = parse_num(key, v)?,
            "smoother_dim" => self.smoother_dim = parse_num(key, v)?,
            "alpha1_r" => self.alpha1_r = parse_num(key, v)?,
            "alpha2_r" => self.alpha2_r = parse_num(key, v)?,
            "alpha1_l" => self.alpha1_l = parse_num(key, v)?,
            "alpha2_l" => self.alpha2_l = parse_num(key, v)?,
            "c_scale" => self.c_scale = parse_num(key, v)?,
            "n_burn" => self.n_burn = parse_num(key, v)?,
            "n_keep" => self.n_keep = parse_num(key, v)?,
            "keep_draws" => self.keep_draws = parse_bool(key, v)?,
            "band_level" => self.band_level = parse_num(key, v)?,
            "refresh_every" => self.refresh_every = parse_num(key, v)?,
            "pilot_ridge_rel" => self.pilot_ridge_rel = parse_num(key, v)?,
            "max_model_size" => self.max_model_size = parse_num(key, v)?,
            "select_ridge_rel" => self.select_ridge_rel = parse_num(key, v)?,
            "pairing" => self.pairing = v.to_string(),
            other => {
                return Err(ConfigError(format!("unknown configuration key '{other}'")));
            }
        }
        Ok(())
    }

    /// Parses an INI-style file into assignments applied over `self`.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config '{}': {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                continue; // sections are organizational only
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!(
                    "config '{}' line {}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                )));
            };
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Applies a `--set key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(ConfigError(format!(
                "--set expects key=value, got '{assignment}'"
            )));
        };
        self.set(key.trim(), value)
    }

    /// Cross-field validation shared by every command.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_reps == 0 {
            return Err(ConfigError("n_reps must be positive".into()));
        }
        if self.workers == 0 {
            return Err(ConfigError("workers must be positive".into()));
        }
        if self.n_burn == 0 || self.n_keep == 0 {
            return Err(ConfigError("n_burn and n_keep must be positive".into()));
        }
        if self.refresh_every == 0 {
            return Err(ConfigError("refresh_every must be positive".into()));
        }
        if self.degree == 0 {
            return Err(ConfigError("degree must be at least 1".into()));
        }
        for (name, v) in [
            ("tau_total", self.tau_total),
            ("tau_incr", self.tau_incr),
            ("band_level", self.band_level),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(ConfigError(format!(
                    "{name} must lie strictly between 0 and 1, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("alpha1_r", self.alpha1_r),
            ("alpha2_r", self.alpha2_r),
            ("alpha1_l", self.alpha1_l),
            ("alpha2_l", self.alpha2_l),
            ("c_scale", self.c_scale),
            ("pilot_ridge_rel", self.pilot_ridge_rel),
            ("select_ridge_rel", self.select_ridge_rel),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ConfigError(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.sigma_eps >= 0.0) || !self.sigma_eps.is_finite() {
            return Err(ConfigError(format!(
                "sigma_eps must be non-negative and finite, got {}",
                self.sigma_eps
            )));
        }
        match self.pairing.as_str() {
            "auto" | "none" | "interleaved" => {}
            other => {
                return Err(ConfigError(format!(
                    "pairing must be auto, none, or interleaved; got '{other}'"
                )));
            }
        }
        self.sim_design
            .parse::<crate::simgen::SimDesign>()
            .map_err(|e| ConfigError(e.to_string()))?;
        Ok(())
    }

    /// Canonical `key = value` rendering of the *effective* configuration,
    /// one line per knob in fixed order.
    pub fn canonical_lines(&self) -> Vec<String> {
        let path_str = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let mut map = BTreeMap::new();
        map.insert("curves_csv", path_str(&self.curves_csv));
        map.insert("design_csv", path_str(&self.design_csv));
        map.insert("out", self.out.display().to_string());
        map.insert("seed", self.seed.to_string());
        map.insert("workers", self.workers.to_string());
        map.insert("sim_design", self.sim_design.clone());
        map.insert("n_subjects", self.n_subjects.to_string());
        map.insert("n_visits", self.n_visits.to_string());
        map.insert("n_grid", self.n_grid.to_string());
        map.insert("n_markers", self.n_markers.to_string());
        map.insert("sigma_eps", format!("{:?}", self.sigma_eps));
        map.insert("null_effects", self.null_effects.to_string());
        map.insert("n_reps", self.n_reps.to_string());
        map.insert("degree", self.degree.to_string());
        map.insert("n_interior_knots", self.n_interior_knots.to_string());
        map.insert("tau_total", format!("{:?}", self.tau_total));
        map.insert("tau_incr", format!("{:?}", self.tau_incr));
        map.insert("smoother_dim", self.smoother_dim.to_string());
        map.insert("alpha1_r", format!("{:?}", self.alpha1_r));
        map.insert("alpha2_r", format!("{:?}", self.alpha2_r));
        map.insert("alpha1_l", format!("{:?}", self.alpha1_l));
        map.insert("alpha2_l", format!("{:?}", self.alpha2_l));
        map.insert("c_scale", format!("{:?}", self.c_scale));
        map.insert("n_burn", self.n_burn.to_string());
        map.insert("n_keep", self.n_keep.to_string());
        map.insert("keep_draws", self.keep_draws.to_string());
        map.insert("band_level", format!("{:?}", self.band_level));
        map.insert("refresh_every", self.refresh_every.to_string());
        map.insert("pilot_ridge_rel", format!("{:?}", self.pilot_ridge_rel));
        map.insert("max_model_size", self.max_model_size.to_string());
        map.insert("select_ridge_rel", format!("{:?}", self.select_ridge_rel));
        map.insert("pairing", self.pairing.clone());
        map.into_iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect()
    }

    /// FNV-1a hash of the canonical rendering (16 hex digits).
    pub fn hash(&self) -> String {
        fnv1a_hex(self.canonical_lines().join("\n").as_bytes())
    }
}
