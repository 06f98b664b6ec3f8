//! Bilevel functional-data panels: `J` repeated response curves per subject
//! observed on a shared equispaced grid, together with the subject-level
//! design (regularized predictors `X` and unpenalized covariates `W`).
//!
//! The on-disk representation is a pair of CSV files: a long-format curves
//! file (`subject,visit,grid_index,t,y`) and a wide design file whose header
//! tags each column with its role (`name:x` for penalized predictors,
//! `name:w` for covariates; the intercept is implicit). Row order is fixed
//! so that serialized panels hash reproducibly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Schema tag written as the first line of curves CSVs.
pub const CURVES_SCHEMA: &str = "fosr-curves v1";
/// Schema tag written as the first line of design CSVs.
pub const DESIGN_SCHEMA: &str = "fosr-design v1";

/// Relative spacing slack tolerated when validating an equispaced grid.
const GRID_SPACING_RTOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("cell (subject {subject}, visit {visit}, grid {grid_index}) is missing: {detail}")]
    IncompleteDesign {
        subject: String,
        visit: String,
        grid_index: usize,
        detail: String,
    },
    #[error("grid is not a valid equispaced grid on [0,1]: {0}")]
    IrregularGrid(String),
    #[error("curves and design files disagree: {0}")]
    DesignMismatch(String),
    #[error("{path}:{line}: malformed input: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("invalid panel: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// An equispaced observation grid on `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    t: Vec<f64>,
}

impl Grid {
    /// Validates and wraps a grid. Requires at least two points, strictly
    /// increasing values inside `[0,1]`, and constant spacing to within
    /// `1e-12` relative error.
    pub fn new(t: Vec<f64>) -> Result<Self, PanelError> {
        if t.len() < 2 {
            return Err(PanelError::IrregularGrid(format!(
                "need at least 2 grid points, got {}",
                t.len()
            )));
        }
        if t.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(PanelError::IrregularGrid(
                "grid values must be finite and in [0,1]".into(),
            ));
        }
        let k = t.len();
        let d = (t[k - 1] - t[0]) / (k - 1) as f64;
        if d <= 0.0 {
            return Err(PanelError::IrregularGrid(
                "grid values must be strictly increasing".into(),
            ));
        }
        for w in t.windows(2) {
            let step = w[1] - w[0];
            if (step - d).abs() > GRID_SPACING_RTOL * d {
                return Err(PanelError::IrregularGrid(format!(
                    "spacing {} deviates from mean spacing {}",
                    step, d
                )));
            }
        }
        Ok(Grid { t })
    }

    /// The midpoint grid `t_k = (k - 1/2)/K`, `k = 1..K`. Synthetic panels
    /// use this convention so discrete inner products approximate integrals
    /// over `[0,1]` well.
    pub fn midpoints(k: usize) -> Self {
        assert!(k >= 2, "midpoint grid needs at least 2 points");
        let kf = k as f64;
        Grid {
            t: (1..=k).map(|i| (i as f64 - 0.5) / kf).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.t
    }

    pub fn spacing(&self) -> f64 {
        (self.t[self.t.len() - 1] - self.t[0]) / (self.t.len() - 1) as f64
    }
}

/// A dense, balanced panel of response curves plus subject-level design.
///
/// Responses are stored flat in `(subject, visit, grid)` order; design
/// matrices are stored column-major. `W` always carries the intercept as
/// its first column.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePanel {
    grid: Grid,
    n_subjects: usize,
    n_visits: usize,
    y: Vec<f64>,
    x: Vec<f64>,
    w: Vec<f64>,
    predictor_names: Vec<String>,
    covariate_names: Vec<String>,
}

impl CurvePanel {
    /// Builds a panel from parts. `y` is `(i, j, k)`-ordered with length
    /// `I*J*K`; each predictor/covariate column has length `I`. The
    /// intercept column is added automatically (covariates exclude it).
    pub fn new(
        grid: Grid,
        n_subjects: usize,
        n_visits: usize,
        y: Vec<f64>,
        predictors: Vec<(String, Vec<f64>)>,
        covariates: Vec<(String, Vec<f64>)>,
    ) -> Result<Self, PanelError> {
        if n_subjects == 0 || n_visits == 0 {
            return Err(PanelError::Invalid(
                "panel needs at least one subject and one visit".into(),
            ));
        }
        let k = grid.len();
        if y.len() != n_subjects * n_visits * k {
            return Err(PanelError::Invalid(format!(
                "response length {} != I*J*K = {}",
                y.len(),
                n_subjects * n_visits * k
            )));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            let (i, rem) = (pos / (n_visits * k), pos % (n_visits * k));
            return Err(PanelError::IncompleteDesign {
                subject: i.to_string(),
                visit: (rem / k).to_string(),
                grid_index: rem % k,
                detail: "non-finite response value".into(),
            });
        }
        let mut x = Vec::with_capacity(predictors.len() * n_subjects);
        let mut predictor_names = Vec::with_capacity(predictors.len());
        for (name, col) in predictors {
            if col.len() != n_subjects {
                return Err(PanelError::Invalid(format!(
                    "predictor '{}' has {} entries, expected {}",
                    name,
                    col.len(),
                    n_subjects
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(PanelError::Invalid(format!(
                    "predictor '{}' contains a non-finite value",
                    name
                )));
            }
            predictor_names.push(name);
            x.extend_from_slice(&col);
        }
        let mut w = vec![1.0; n_subjects];
        let mut covariate_names = Vec::with_capacity(covariates.len());
        for (name, col) in covariates {
            if col.len() != n_subjects {
                return Err(PanelError::Invalid(format!(
                    "covariate '{}' has {} entries, expected {}",
                    name,
                    col.len(),
                    n_subjects
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(PanelError::Invalid(format!(
                    "covariate '{}' contains a non-finite value",
                    name
                )));
            }
            covariate_names.push(name);
            w.extend_from_slice(&col);
        }
        Ok(CurvePanel {
            grid,
            n_subjects,
            n_visits,
            y,
            x,
            w,
            predictor_names,
            covariate_names,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of subjects `I`.
    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    /// Visits per subject `J`.
    pub fn n_visits(&self) -> usize {
        self.n_visits
    }

    /// Grid points per curve `K`.
    pub fn n_grid(&self) -> usize {
        self.grid.len()
    }

    /// Number of penalized predictor columns `p`.
    pub fn n_predictors(&self) -> usize {
        self.predictor_names.len()
    }

    /// Number of unpenalized design columns `q` (intercept included).
    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len() + 1
    }

    pub fn predictor_names(&self) -> &[String] {
        &self.predictor_names
    }

    /// Covariate column names, intercept included as `"intercept"`.
    pub fn covariate_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_covariates());
        names.push("intercept".to_string());
        names.extend(self.covariate_names.iter().cloned());
        names
    }

    /// The response curve of visit `j` of subject `i`.
    pub fn curve(&self, i: usize, j: usize) -> &[f64] {
        let k = self.grid.len();
        let start = (i * self.n_visits + j) * k;
        &self.y[start..start + k]
    }

    pub fn y(&self, i: usize, j: usize, k: usize) -> f64 {
        self.y[(i * self.n_visits + j) * self.grid.len() + k]
    }

    /// Flat `(i, j, k)`-ordered response values.
    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    /// Predictor column `m` (length `I`).
    pub fn predictor(&self, m: usize) -> &[f64] {
        &self.x[m * self.n_subjects..(m + 1) * self.n_subjects]
    }

    /// Covariate column `r` (length `I`); `r = 0` is the intercept.
    pub fn covariate(&self, r: usize) -> &[f64] {
        &self.w[r * self.n_subjects..(r + 1) * self.n_subjects]
    }

    /// Returns a copy with each non-intercept covariate centered and scaled
    /// to unit sample standard deviation. Constant columns are left
    /// centered but unscaled.
    pub fn standardize_covariates(&self) -> CurvePanel {
        let mut out = self.clone();
        let n = self.n_subjects as f64;
        for r in 1..self.n_covariates() {
            let col = &mut out.w[r * self.n_subjects..(r + 1) * self.n_subjects];
            let mean = col.iter().sum::<f64>() / n;
            for v in col.iter_mut() {
                *v -= mean;
            }
            if self.n_subjects > 1 {
                let sd = (col.iter().map(|v| v * v).sum::<f64>() / (n - 1.0)).sqrt();
                if sd > 0.0 {
                    for v in col.iter_mut() {
                        *v /= sd;
                    }
                }
            }
        }
        out
    }

    /// Returns a copy with predictor columns reordered by `perm` (new column
    /// `m` is old column `perm[m]`). Used to exercise exchangeability.
    pub fn permute_predictors(&self, perm: &[usize]) -> Result<CurvePanel, PanelError> {
        if perm.len() != self.n_predictors() {
            return Err(PanelError::Invalid(format!(
                "permutation length {} != p = {}",
                perm.len(),
                self.n_predictors()
            )));
        }
        let mut seen = vec![false; perm.len()];
        for &m in perm {
            if m >= perm.len() || seen[m] {
                return Err(PanelError::Invalid("not a permutation".into()));
            }
            seen[m] = true;
        }
        let mut out = self.clone();
        for (new_m, &old_m) in perm.iter().enumerate() {
            let src = self.predictor(old_m).to_vec();
            out.x[new_m * self.n_subjects..(new_m + 1) * self.n_subjects]
                .copy_from_slice(&src);
            out.predictor_names[new_m] = self.predictor_names[old_m].clone();
        }
        Ok(out)
    }
}

fn open_reader(path: &Path) -> Result<BufReader<File>, PanelError> {
    File::open(path).map(BufReader::new).map_err(|source| PanelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Splits a CSV line on commas. Fields never contain commas or quotes in
/// the schemas this crate emits, so no quoting rules are needed.
fn split_csv(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

struct CurvesData {
    subject_labels: Vec<String>,
    n_visits: usize,
    grid: Grid,
    y: Vec<f64>,
}

fn read_curves(path: &Path) -> Result<CurvesData, PanelError> {
    let malformed = |line: usize, reason: String| PanelError::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let reader = open_reader(path)?;

    // Raw rows: (subject label, visit label, grid index, t, y).
    let mut rows: Vec<(String, String, usize, f64, f64)> = Vec::new();
    let mut header_seen = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| PanelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = split_csv(trimmed);
        if !header_seen {
            if fields != ["subject", "visit", "grid_index", "t", "y"] {
                return Err(malformed(
                    lineno,
                    "expected header 'subject,visit,grid_index,t,y'".into(),
                ));
            }
            header_seen = true;
            continue;
        }
        if fields.len() != 5 {
            return Err(malformed(lineno, format!("expected 5 fields, got {}", fields.len())));
        }
        let grid_index: usize = fields[2]
            .parse()
            .map_err(|_| malformed(lineno, format!("bad grid_index '{}'", fields[2])))?;
        let t: f64 = fields[3]
            .parse()
            .map_err(|_| malformed(lineno, format!("bad t '{}'", fields[3])))?;
        let yv: f64 = fields[4]
            .parse()
            .map_err(|_| malformed(lineno, format!("bad y '{}'", fields[4])))?;
        rows.push((fields[0].to_string(), fields[1].to_string(), grid_index, t, yv));
    }
    if rows.is_empty() {
        return Err(malformed(0, "no data rows".into()));
    }

    // Infer the grid from (grid_index, t) pairs; indices must be 0..K-1
    // and each index must map to a single t.
    let max_gidx = rows.iter().map(|r| r.2).max().unwrap();
    let k = max_gidx + 1;
    let mut t_for: Vec<Option<f64>> = vec![None; k];
    for r in &rows {
        match t_for[r.2] {
            None => t_for[r.2] = Some(r.3),
            Some(prev) => {
                if (prev - r.3).abs() > 1e-12 {
                    return Err(PanelError::IrregularGrid(format!(
                        "grid index {} maps to both t={} and t={}",
                        r.2, prev, r.3
                    )));
                }
            }
        }
    }
    let mut t = Vec::with_capacity(k);
    for (gi, slot) in t_for.iter().enumerate() {
        match slot {
            Some(v) => t.push(*v),
            None => {
                return Err(PanelError::IrregularGrid(format!(
                    "grid index {} never appears (indices must cover 0..K-1)",
                    gi
                )))
            }
        }
    }
    let grid = Grid::new(t)?;

    // Dense re-indexing: subjects by first appearance, visits by first
    // appearance within each subject.
    let mut subject_labels: Vec<String> = Vec::new();
    let mut subject_idx: HashMap<String, usize> = HashMap::new();
    let mut visit_idx: Vec<HashMap<String, usize>> = Vec::new();
    let mut visit_counts: Vec<usize> = Vec::new();
    for r in &rows {
        let si = *subject_idx.entry(r.0.clone()).or_insert_with(|| {
            subject_labels.push(r.0.clone());
            visit_idx.push(HashMap::new());
            visit_counts.push(0);
            subject_labels.len() - 1
        });
        let vmap = &mut visit_idx[si];
        if !vmap.contains_key(&r.1) {
            let next = visit_counts[si];
            vmap.insert(r.1.clone(), next);
            visit_counts[si] = next + 1;
        }
    }
    let n_subjects = subject_labels.len();
    let n_visits = visit_counts[0];
    for (si, &count) in visit_counts.iter().enumerate() {
        if count != n_visits {
            return Err(PanelError::IncompleteDesign {
                subject: subject_labels[si].clone(),
                visit: String::from("*"),
                grid_index: 0,
                detail: format!(
                    "subject has {} visits but subject {} has {} (balanced design required)",
                    count, subject_labels[0], n_visits
                ),
            });
        }
    }

    let mut y = vec![f64::NAN; n_subjects * n_visits * k];
    for r in &rows {
        let si = subject_idx[&r.0];
        let vi = visit_idx[si][&r.1];
        let cell = (si * n_visits + vi) * k + r.2;
        if !y[cell].is_nan() {
            return Err(PanelError::Malformed {
                path: path.to_path_buf(),
                line: 0,
                reason: format!(
                    "duplicate row for (subject {}, visit {}, grid {})",
                    r.0, r.1, r.2
                ),
            });
        }
        y[cell] = r.4;
    }
    for (pos, v) in y.iter().enumerate() {
        if v.is_nan() {
            let i = pos / (n_visits * k);
            let rem = pos % (n_visits * k);
            let (j, gk) = (rem / k, rem % k);
            let visit_label = visit_idx[i]
                .iter()
                .find(|(_, &vi)| vi == j)
                .map(|(lbl, _)| lbl.clone())
                .unwrap_or_else(|| j.to_string());
            return Err(PanelError::IncompleteDesign {
                subject: subject_labels[i].clone(),
                visit: visit_label,
                grid_index: gk,
                detail: "cell absent from curves file".into(),
            });
        }
    }

    Ok(CurvesData {
        subject_labels,
        n_visits,
        grid,
        y,
    })
}

enum ColumnRole {
    Predictor,
    Covariate,
}

/// Loads a panel from a long-format curves CSV and a wide design CSV.
///
/// Subjects and visits are re-indexed densely in first-appearance order of
/// the curves file; the design file may list subjects in any order but must
/// contain exactly the same subject set.
pub fn load_panel(curves_path: &Path, design_path: &Path) -> Result<CurvePanel, PanelError> {
    let curves = read_curves(curves_path)?;

    let malformed = |line: usize, reason: String| PanelError::Malformed {
        path: design_path.to_path_buf(),
        line,
        reason,
    };
    let reader = open_reader(design_path)?;

    let mut columns: Vec<(String, ColumnRole)> = Vec::new();
    let mut values: HashMap<String, Vec<f64>> = HashMap::new();
    let mut header_seen = false;
    let mut design_rows = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| PanelError::Io {
            path: design_path.to_path_buf(),
            source,
        })?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = split_csv(trimmed);
        if !header_seen {
            if fields.first() != Some(&"subject") {
                return Err(malformed(lineno, "first design column must be 'subject'".into()));
            }
            for field in &fields[1..] {
                let (name, role) = field.rsplit_once(':').ok_or_else(|| {
                    malformed(lineno, format!("column '{}' lacks a :x or :w role tag", field))
                })?;
                let role = match role {
                    "x" => ColumnRole::Predictor,
                    "w" => ColumnRole::Covariate,
                    other => {
                        return Err(malformed(
                            lineno,
                            format!("unknown role tag '{}' on column '{}'", other, name),
                        ))
                    }
                };
                columns.push((name.to_string(), role));
            }
            header_seen = true;
            continue;
        }
        if fields.len() != columns.len() + 1 {
            return Err(malformed(
                lineno,
                format!("expected {} fields, got {}", columns.len() + 1, fields.len()),
            ));
        }
        let subject = fields[0].to_string();
        if values.contains_key(&subject) {
            return Err(malformed(lineno, format!("duplicate design row for subject '{}'", subject)));
        }
        let mut row = Vec::with_capacity(columns.len());
        for (field, (name, _)) in fields[1..].iter().zip(&columns) {
            let v: f64 = field
                .parse()
                .map_err(|_| malformed(lineno, format!("bad value '{}' in column '{}'", field, name)))?;
            row.push(v);
        }
        values.insert(subject, row);
        design_rows += 1;
    }
    if !header_seen {
        return Err(malformed(0, "design file has no header".into()));
    }

    // Subject sets must agree exactly.
    for label in &curves.subject_labels {
        if !values.contains_key(label) {
            return Err(PanelError::DesignMismatch(format!(
                "subject '{}' has curves but no design row",
                label
            )));
        }
    }
    if design_rows != curves.subject_labels.len() {
        let extra = values
            .keys()
            .find(|k| !curves.subject_labels.contains(k))
            .cloned()
            .unwrap_or_default();
        return Err(PanelError::DesignMismatch(format!(
            "design file has {} rows for {} subjects (e.g. extra subject '{}')",
            design_rows,
            curves.subject_labels.len(),
            extra
        )));
    }

    let n_subjects = curves.subject_labels.len();
    let mut predictors: Vec<(String, Vec<f64>)> = Vec::new();
    let mut covariates: Vec<(String, Vec<f64>)> = Vec::new();
    for (ci, (name, role)) in columns.iter().enumerate() {
        let mut col = Vec::with_capacity(n_subjects);
        for label in &curves.subject_labels {
            col.push(values[label][ci]);
        }
        match role {
            ColumnRole::Predictor => predictors.push((name.clone(), col)),
            ColumnRole::Covariate => covariates.push((name.clone(), col)),
        }
    }

    CurvePanel::new(
        curves.grid,
        n_subjects,
        curves.n_visits,
        curves.y,
        predictors,
        covariates,
    )
}

/// Writes `curves.csv` and `design.csv` under `dir` in the exact schema
/// [`load_panel`] reads. Row order is `(i, j, k)` ascending with dense
/// integer labels, so identical panels serialize to identical bytes.
pub fn save_panel(panel: &CurvePanel, dir: &Path) -> Result<(), PanelError> {
    std::fs::create_dir_all(dir).map_err(|source| PanelError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    let curves_path = dir.join("curves.csv");
    let file = File::create(&curves_path).map_err(|source| PanelError::Io {
        path: curves_path.clone(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source: std::io::Error| PanelError::Io { path, source }
    };
    writeln!(out, "# {CURVES_SCHEMA}").map_err(io_err(&curves_path))?;
    writeln!(out, "subject,visit,grid_index,t,y").map_err(io_err(&curves_path))?;
    let t = panel.grid().values();
    for i in 0..panel.n_subjects() {
        for j in 0..panel.n_visits() {
            let curve = panel.curve(i, j);
            for (k, (&tk, &yk)) in t.iter().zip(curve).enumerate() {
                writeln!(out, "{i},{j},{k},{tk},{yk}").map_err(io_err(&curves_path))?;
            }
        }
    }
    out.flush().map_err(io_err(&curves_path))?;

    let design_path = dir.join("design.csv");
    let mut header = String::from("subject");
    for name in panel.predictor_names() {
        let _ = write!(header, ",{name}:x");
    }
    for name in &panel.covariate_names {
        let _ = write!(header, ",{name}:w");
    }
    let file = File::create(&design_path).map_err(|source| PanelError::Io {
        path: design_path.clone(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# {DESIGN_SCHEMA}").map_err(io_err(&design_path))?;
    writeln!(out, "{header}").map_err(io_err(&design_path))?;
    for i in 0..panel.n_subjects() {
        let mut row = i.to_string();
        for m in 0..panel.n_predictors() {
            let _ = write!(row, ",{}", panel.predictor(m)[i]);
        }
        for r in 1..panel.n_covariates() {
            let _ = write!(row, ",{}", panel.covariate(r)[i]);
        }
        writeln!(out, "{row}").map_err(io_err(&design_path))?;
    }
    out.flush().map_err(io_err(&design_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_panel() -> CurvePanel {
        let grid = Grid::midpoints(3);
        // I=2, J=1, K=3
        let y = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        CurvePanel::new(
            grid,
            2,
            1,
            y,
            vec![("snp1".into(), vec![-1.0, 1.0])],
            vec![("age".into(), vec![0.3, -0.7])],
        )
        .unwrap()
    }

    #[test]
    fn grid_rejects_irregular_spacing() {
        assert!(Grid::new(vec![0.0, 0.5, 0.6]).is_err());
        assert!(Grid::new(vec![0.0, 0.5, 1.5]).is_err());
        assert!(Grid::new(vec![0.5]).is_err());
        assert!(Grid::new(vec![0.0, 0.25, 0.5, 0.75, 1.0]).is_ok());
    }

    #[test]
    fn midpoint_grid_is_valid_and_centered() {
        let g = Grid::midpoints(50);
        assert_eq!(g.len(), 50);
        assert!((g.values()[0] - 0.01).abs() < 1e-15);
        assert!((g.values()[49] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn minimal_panel_roundtrip() {
        let panel = tiny_panel();
        let dir = tempfile::tempdir().unwrap();
        save_panel(&panel, dir.path()).unwrap();
        let loaded = load_panel(&dir.path().join("curves.csv"), &dir.path().join("design.csv")).unwrap();
        assert_eq!(panel, loaded);
    }

    #[test]
    fn missing_cell_is_incomplete_design() {
        let panel = tiny_panel();
        let dir = tempfile::tempdir().unwrap();
        save_panel(&panel, dir.path()).unwrap();
        let curves_path = dir.path().join("curves.csv");
        let text = std::fs::read_to_string(&curves_path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.remove(4); // drop one data row
        std::fs::write(&curves_path, lines.join("\n")).unwrap();
        let err = load_panel(&curves_path, &dir.path().join("design.csv")).unwrap_err();
        assert!(matches!(err, PanelError::IncompleteDesign { .. }), "got {err:?}");
    }

    #[test]
    fn subject_only_in_one_file_is_design_mismatch() {
        let panel = tiny_panel();
        let dir = tempfile::tempdir().unwrap();
        save_panel(&panel, dir.path()).unwrap();
        let design_path = dir.path().join("design.csv");
        let text = std::fs::read_to_string(&design_path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        // drop subject 1's design row
        lines.retain(|l| !l.starts_with("1,"));
        std::fs::write(&design_path, lines.join("\n")).unwrap();
        let err = load_panel(&dir.path().join("curves.csv"), &design_path).unwrap_err();
        assert!(matches!(err, PanelError::DesignMismatch(_)), "got {err:?}");

        // and an extra design row the curves never mention
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines.push("7,0,0".into());
        std::fs::write(&design_path, lines.join("\n")).unwrap();
        let err = load_panel(&dir.path().join("curves.csv"), &design_path).unwrap_err();
        assert!(matches!(err, PanelError::DesignMismatch(_)), "got {err:?}");
    }

    #[test]
    fn unbalanced_visits_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let curves = "\
subject,visit,grid_index,t,y
a,0,0,0.25,1
a,0,1,0.75,2
a,1,0,0.25,3
a,1,1,0.75,4
b,0,0,0.25,5
b,0,1,0.75,6
";
        std::fs::write(dir.path().join("curves.csv"), curves).unwrap();
        std::fs::write(dir.path().join("design.csv"), "subject,z:w\na,0.0\nb,1.0\n").unwrap();
        let err = load_panel(&dir.path().join("curves.csv"), &dir.path().join("design.csv")).unwrap_err();
        assert!(matches!(err, PanelError::IncompleteDesign { .. }), "got {err:?}");
    }

    #[test]
    fn inconsistent_grid_t_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let curves = "\
subject,visit,grid_index,t,y
a,0,0,0.25,1
a,0,1,0.75,2
b,0,0,0.30,3
b,0,1,0.75,4
";
        std::fs::write(dir.path().join("curves.csv"), curves).unwrap();
        std::fs::write(dir.path().join("design.csv"), "subject,z:w\na,0\nb,1\n").unwrap();
        let err = load_panel(&dir.path().join("curves.csv"), &dir.path().join("design.csv")).unwrap_err();
        assert!(matches!(err, PanelError::IrregularGrid(_)), "got {err:?}");
    }

    #[test]
    fn first_appearance_order_is_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let curves = "\
subject,visit,grid_index,t,y
zeta,0,0,0.25,10
zeta,0,1,0.75,11
alpha,0,0,0.25,20
alpha,0,1,0.75,21
";
        std::fs::write(dir.path().join("curves.csv"), curves).unwrap();
        std::fs::write(
            dir.path().join("design.csv"),
            "subject,g:x\nalpha,-1\nzeta,1\n",
        )
        .unwrap();
        let panel = load_panel(&dir.path().join("curves.csv"), &dir.path().join("design.csv")).unwrap();
        // subject 0 must be "zeta" (first appearance), carrying g = 1
        assert_eq!(panel.curve(0, 0), &[10.0, 11.0]);
        assert_eq!(panel.predictor(0)[0], 1.0);
        assert_eq!(panel.predictor(0)[1], -1.0);
    }

    #[test]
    fn duplicate_row_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let curves = "\
subject,visit,grid_index,t,y
a,0,0,0.25,1
a,0,0,0.25,1
a,0,1,0.75,2
";
        std::fs::write(dir.path().join("curves.csv"), curves).unwrap();
        std::fs::write(dir.path().join("design.csv"), "subject,z:w\na,0\n").unwrap();
        let err = load_panel(&dir.path().join("curves.csv"), &dir.path().join("design.csv")).unwrap_err();
        assert!(matches!(err, PanelError::Malformed { .. }), "got {err:?}");
    }

    #[test]
    fn p0_design_has_only_covariate_columns() {
        let grid = Grid::midpoints(2);
        let panel = CurvePanel::new(
            grid,
            1,
            1,
            vec![0.5, 0.6],
            vec![],
            vec![("z".into(), vec![1.5])],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_panel(&panel, dir.path()).unwrap();
        let design = std::fs::read_to_string(dir.path().join("design.csv")).unwrap();
        assert!(design.contains("subject,z:w"));
        assert!(!design.contains(":x"));
        let loaded = load_panel(&dir.path().join("curves.csv"), &dir.path().join("design.csv")).unwrap();
        assert_eq!(loaded.n_predictors(), 0);
        assert_eq!(loaded.n_covariates(), 2);
    }

    #[test]
    fn standardize_covariates_zero_mean_unit_sd() {
        let grid = Grid::midpoints(2);
        let panel = CurvePanel::new(
            grid,
            4,
            1,
            vec![0.0; 8],
            vec![],
            vec![("z".into(), vec![1.0, 2.0, 3.0, 6.0])],
        )
        .unwrap();
        let std = panel.standardize_covariates();
        let col = std.covariate(1);
        let mean: f64 = col.iter().sum::<f64>() / 4.0;
        let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        // intercept untouched
        assert_eq!(std.covariate(0), &[1.0; 4]);
    }
}
