//! Dataset representation, CSV ingestion, bounds handling, and adjacent
//! dataset construction by row-group removal.
//!
//! Datasets are immutable after construction and safe to share across
//! parallel workers. Bounds always describe the full dataset; removing
//! rows never tightens them, so DP sensitivities computed from bounds
//! stay valid for every adjacent dataset.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: file is empty")]
    Empty { path: String },
    #[error("{path}: line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        path: String,
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("{path}: line {line}, column '{column}': cannot parse '{cell}' as a number")]
    BadCell {
        path: String,
        line: u64,
        column: String,
        cell: String,
    },
    #[error("{path}: target column '{column}' not found in header")]
    MissingTarget { path: String, column: String },
    #[error("classification target must be a non-negative integer, found {0}")]
    BadLabel(f64),
    #[error("bounds sidecar {path} is missing column '{column}'")]
    MissingBounds { path: String, column: String },
    #[error("bounds sidecar {path}: {message}")]
    BadSidecar { path: String, message: String },
    #[error("{path}: malformed CSV: {message}")]
    BadCsv { path: String, message: String },
    #[error("row index {index} out of range for dataset with {n_rows} rows")]
    IndexOutOfRange { index: usize, n_rows: usize },
    #[error("removal would leave an empty dataset ({k} of {n_rows} rows)")]
    RemovesAllRows { k: usize, n_rows: usize },
    #[error("dataset has no rows")]
    NoRows,
}

/// Learning task of the audited pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classification,
    Regression,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Classification => write!(f, "classification"),
            Task::Regression => write!(f, "regression"),
        }
    }
}

/// Closed interval for one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Largest magnitude reachable inside the interval.
    pub fn abs_max(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
}

/// Where the bounds came from; recorded because from-data bounds leak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundsProvenance {
    FromData,
    Explicit,
}

/// Target vector: integer class labels or real-valued outcomes.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels { values: Vec<usize>, n_classes: usize },
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels { values, .. } => values.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bounded numeric feature matrix plus target vector; the private input.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>, // row-major, n_rows * n_cols
    targets: Targets,
    n_cols: usize,
    bounds: Vec<Bounds>,
    target_bounds: Bounds,
    provenance: BoundsProvenance,
    feature_names: Vec<String>,
    target_name: String,
}

impl Dataset {
    /// Build a dataset from rows, computing from-data bounds.
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        targets: Targets,
        feature_names: Vec<String>,
        target_name: String,
    ) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::NoRows);
        }
        let n_cols = rows[0].len();
        let mut features = Vec::with_capacity(rows.len() * n_cols);
        for row in &rows {
            assert_eq!(row.len(), n_cols, "all rows must have n_cols entries");
            features.extend_from_slice(row);
        }
        let names = if feature_names.is_empty() {
            (0..n_cols).map(|j| format!("x{j}")).collect()
        } else {
            feature_names
        };
        let mut d = Dataset {
            features,
            targets,
            n_cols,
            bounds: Vec::new(),
            target_bounds: Bounds { lo: 0.0, hi: 0.0 },
            provenance: BoundsProvenance::FromData,
            feature_names: names,
            target_name,
        };
        d.recompute_bounds_from_data();
        Ok(d)
    }

    fn recompute_bounds_from_data(&mut self) {
        let mut bounds = vec![
            Bounds {
                lo: f64::INFINITY,
                hi: f64::NEG_INFINITY,
            };
            self.n_cols
        ];
        for i in 0..self.n_rows() {
            for (j, b) in bounds.iter_mut().enumerate() {
                let v = self.features[i * self.n_cols + j];
                b.lo = b.lo.min(v);
                b.hi = b.hi.max(v);
            }
        }
        self.bounds = bounds;
        self.target_bounds = match &self.targets {
            Targets::Labels { n_classes, .. } => Bounds {
                lo: 0.0,
                hi: (*n_classes as f64 - 1.0).max(0.0),
            },
            Targets::Values(v) => {
                let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                Bounds { lo, hi }
            }
        };
        self.provenance = BoundsProvenance::FromData;
    }

    /// Replace bounds with explicit ones (sidecar policy).
    pub fn with_explicit_bounds(
        mut self,
        bounds: Vec<Bounds>,
        target_bounds: Bounds,
    ) -> Self {
        assert_eq!(bounds.len(), self.n_cols);
        self.bounds = bounds;
        self.target_bounds = target_bounds;
        self.provenance = BoundsProvenance::Explicit;
        self
    }

    /// Carry over bounds and provenance from a source dataset; used when
    /// a derived dataset (resample) must keep the original sensitivity
    /// envelope.
    pub fn inherit_bounds(mut self, source: &Dataset) -> Self {
        assert_eq!(source.n_cols, self.n_cols);
        self.bounds = source.bounds.clone();
        self.target_bounds = source.target_bounds;
        self.provenance = source.provenance;
        self
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn task(&self) -> Task {
        match self.targets {
            Targets::Labels { .. } => Task::Classification,
            Targets::Values(_) => Task::Regression,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.n_cols)
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn label(&self, i: usize) -> usize {
        match &self.targets {
            Targets::Labels { values, .. } => values[i],
            Targets::Values(_) => panic!("label() on a regression dataset"),
        }
    }

    pub fn value(&self, i: usize) -> f64 {
        match &self.targets {
            Targets::Labels { values, .. } => values[i] as f64,
            Targets::Values(v) => v[i],
        }
    }

    pub fn n_classes(&self) -> usize {
        match &self.targets {
            Targets::Labels { n_classes, .. } => *n_classes,
            Targets::Values(_) => 0,
        }
    }

    pub fn bounds(&self) -> &[Bounds] {
        &self.bounds
    }

    pub fn target_bounds(&self) -> Bounds {
        self.target_bounds
    }

    pub fn provenance(&self) -> BoundsProvenance {
        self.provenance
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }
}

/// A pair (D1, D2) differing by a group of removed row indices; the empty
/// set denotes the full dataset itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AdjacencySpec {
    removed: BTreeSet<usize>,
}

impl AdjacencySpec {
    pub fn full() -> Self {
        AdjacencySpec {
            removed: BTreeSet::new(),
        }
    }

    pub fn removing<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        AdjacencySpec {
            removed: indices.into_iter().collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.removed.len()
    }

    pub fn is_full(&self) -> bool {
        self.removed.is_empty()
    }

    pub fn removed(&self) -> impl Iterator<Item = usize> + '_ {
        self.removed.iter().copied()
    }

    pub fn contains(&self, ix: usize) -> bool {
        self.removed.contains(&ix)
    }

    pub fn validate(&self, n_rows: usize) -> Result<(), DataError> {
        for &ix in &self.removed {
            if ix >= n_rows {
                return Err(DataError::IndexOutOfRange { index: ix, n_rows });
            }
        }
        if self.k() >= n_rows && self.k() > 0 {
            return Err(DataError::RemovesAllRows {
                k: self.k(),
                n_rows,
            });
        }
        Ok(())
    }

    /// Stable digest used to key random streams to the dataset role.
    pub fn stream_tag(&self) -> u64 {
        crate::rngstream::index_set_tag(self.removed.iter().copied())
    }
}

impl fmt::Display for AdjacencySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.removed.is_empty() {
            write!(f, "full")
        } else {
            let ids: Vec<String> = self.removed.iter().map(|i| i.to_string()).collect();
            write!(f, "remove{{{}}}", ids.join(","))
        }
    }
}

/// Remove the spec's row group, preserving the relative order of the
/// survivors. Bounds derive from the full dataset and are kept as-is.
pub fn remove_rows(d: &Dataset, spec: &AdjacencySpec) -> Result<Dataset, DataError> {
    spec.validate(d.n_rows())?;
    if spec.is_full() {
        return Ok(d.clone());
    }
    let keep: Vec<usize> = (0..d.n_rows()).filter(|i| !spec.contains(*i)).collect();
    let mut features = Vec::with_capacity(keep.len() * d.n_cols);
    for &i in &keep {
        features.extend_from_slice(d.row(i));
    }
    let targets = match &d.targets {
        Targets::Labels { values, n_classes } => Targets::Labels {
            values: keep.iter().map(|&i| values[i]).collect(),
            n_classes: *n_classes,
        },
        Targets::Values(v) => Targets::Values(keep.iter().map(|&i| v[i]).collect()),
    };
    Ok(Dataset {
        features,
        targets,
        n_cols: d.n_cols,
        bounds: d.bounds.clone(),
        target_bounds: d.target_bounds,
        provenance: d.provenance,
        feature_names: d.feature_names.clone(),
        target_name: d.target_name.clone(),
    })
}

/// Clamp every feature and target value into its interval. Idempotent.
pub fn clip_to_bounds(d: &Dataset) -> Dataset {
    let mut out = d.clone();
    for i in 0..d.n_rows() {
        for j in 0..d.n_cols {
            let v = &mut out.features[i * d.n_cols + j];
            *v = d.bounds[j].clamp(*v);
        }
    }
    if let Targets::Values(v) = &mut out.targets {
        for t in v.iter_mut() {
            *t = d.target_bounds.clamp(*t);
        }
    }
    out
}

/// Policy for establishing column bounds at load time.
#[derive(Debug, Clone)]
pub enum BoundsPolicy {
    /// Per-column min/max of the data itself (leaks, but standard).
    FromData,
    /// JSON sidecar {column: [lo, hi]} covering every column and the target.
    Explicit { sidecar: std::path::PathBuf },
}

/// Load an RFC-4180-style CSV (header row, UTF-8, '.' decimal separator).
pub fn load_csv(
    path: &Path,
    target_column: &str,
    task: Task,
    bounds_policy: &BoundsPolicy,
) -> Result<Dataset, DataError> {
    let display = path.display().to_string();
    let io_err = |source| DataError::Io {
        path: display.clone(),
        source,
    };
    let text = std::fs::read_to_string(path).map_err(io_err)?;
    if text.trim().is_empty() {
        return Err(DataError::Empty { path: display });
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::BadCsv {
            path: display.clone(),
            message: e.to_string(),
        })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let target_ix = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| DataError::MissingTarget {
            path: display.clone(),
            column: target_column.to_string(),
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(ix, _)| *ix != target_ix)
        .map(|(_, h)| h.clone())
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_targets: Vec<f64> = Vec::new();
    for (rec_ix, record) in reader.records().enumerate() {
        let line = rec_ix as u64 + 2; // header is line 1
        let record = record.map_err(|e| DataError::BadCsv {
            path: display.clone(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(DataError::RaggedRow {
                path: display.clone(),
                line,
                expected: headers.len(),
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (col_ix, cell) in record.iter().enumerate() {
            let parsed: f64 = cell.trim().parse().map_err(|_| DataError::BadCell {
                path: display.clone(),
                line,
                column: headers[col_ix].clone(),
                cell: cell.to_string(),
            })?;
            if col_ix == target_ix {
                raw_targets.push(parsed);
            } else {
                row.push(parsed);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::Empty { path: display });
    }

    let targets = match task {
        Task::Regression => Targets::Values(raw_targets),
        Task::Classification => {
            let mut labels = Vec::with_capacity(raw_targets.len());
            for t in &raw_targets {
                if t.fract() != 0.0 || *t < 0.0 {
                    return Err(DataError::BadLabel(*t));
                }
                labels.push(*t as usize);
            }
            let n_classes = labels.iter().max().map_or(0, |m| m + 1);
            Targets::Labels {
                values: labels,
                n_classes,
            }
        }
    };

    let d = Dataset::from_rows(rows, targets, feature_names, target_column.to_string())?;
    match bounds_policy {
        BoundsPolicy::FromData => Ok(d),
        BoundsPolicy::Explicit { sidecar } => {
            let (bounds, target_bounds) = load_bounds_sidecar(sidecar, &d)?;
            Ok(d.with_explicit_bounds(bounds, target_bounds))
        }
    }
}

fn load_bounds_sidecar(path: &Path, d: &Dataset) -> Result<(Vec<Bounds>, Bounds), DataError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: display.clone(),
        source,
    })?;
    let map: std::collections::BTreeMap<String, [f64; 2]> = serde_json::from_str(&text)
        .map_err(|e| DataError::BadSidecar {
            path: display.clone(),
            message: e.to_string(),
        })?;
    let lookup = |column: &str| -> Result<Bounds, DataError> {
        map.get(column)
            .map(|[lo, hi]| Bounds { lo: *lo, hi: *hi })
            .ok_or_else(|| DataError::MissingBounds {
                path: display.clone(),
                column: column.to_string(),
            })
    };
    let bounds = d
        .feature_names()
        .iter()
        .map(|n| lookup(n))
        .collect::<Result<Vec<_>, _>>()?;
    let target_bounds = lookup(d.target_name())?;
    Ok((bounds, target_bounds))
}

/// Serialize back to CSV; together with `load_csv` this forms a fixed
/// point because Rust's shortest-roundtrip float formatting is lossless.
pub fn write_csv(d: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    let mut header: Vec<&str> = d.feature_names().iter().map(|s| s.as_str()).collect();
    header.push(d.target_name());
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..d.n_rows() {
        let mut cells: Vec<String> = d.row(i).iter().map(|v| format!("{v}")).collect();
        cells.push(match d.targets() {
            Targets::Labels { values, .. } => values[i].to_string(),
            Targets::Values(v) => format!("{}", v[i]),
        });
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}
