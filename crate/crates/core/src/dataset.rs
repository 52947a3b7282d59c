//! Tabular regression data: CSV ingestion, standard scaling, fold plans and
//! the Friedman-1 generator.
//!
//! All randomness in this module comes from ChaCha8 (`rand_chacha`) seeded
//! through `seed_from_u64`, so a `(seed, arguments)` pair reproduces the same
//! bytes on every platform.

use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The seedable generator used across the crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A feature matrix with aligned scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    targets: Array1<f64>,
    column_names: Option<Vec<String>>,
    target_bounds: (f64, f64),
}

impl Dataset {
    /// Builds a dataset; target bounds are set to the observed min/max.
    pub fn new(features: Array2<f64>, targets: Array1<f64>, column_names: Option<Vec<String>>) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if d == 0 {
            return Err(Error::NoFeatures);
        }
        if targets.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: targets.len(),
            });
        }
        if let Some(names) = &column_names {
            if names.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: names.len(),
                });
            }
        }
        for ((row, column), v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row, column });
            }
        }
        for (row, v) in targets.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row, column: d });
            }
        }
        let target_bounds = observed_bounds(targets.view());
        Ok(Dataset {
            features,
            targets,
            column_names,
            target_bounds,
        })
    }

    /// Replaces the target bounds. They must enclose every target.
    pub fn with_target_bounds(mut self, bounds: (f64, f64)) -> Result<Self> {
        let (lo, hi) = observed_bounds(self.targets.view());
        if !(bounds.0 <= lo && bounds.1 >= hi) {
            return Err(Error::InvalidArgument(format!(
                "target bounds {bounds:?} do not enclose observed range ({lo}, {hi})"
            )));
        }
        self.target_bounds = bounds;
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn targets(&self) -> ArrayView1<'_, f64> {
        self.targets.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn target_bounds(&self) -> (f64, f64) {
        self.target_bounds
    }

    /// Column labels, falling back to `x0..x{d-1}`.
    pub fn column_labels(&self) -> Vec<String> {
        match &self.column_names {
            Some(names) => names.clone(),
            None => (0..self.n_features()).map(|j| format!("x{j}")).collect(),
        }
    }

    /// Subset of rows; target bounds are recomputed from the subset.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_samples()) {
            return Err(Error::InvalidArgument(format!(
                "row {bad} out of range for {} samples",
                self.n_samples()
            )));
        }
        let features = self.features.select(Axis(0), rows);
        let targets = self.targets.select(Axis(0), rows);
        Dataset::new(features, targets, self.column_names.clone())
    }

    /// Projection onto a subset of columns, keeping names and bounds.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Dataset> {
        if columns.is_empty() {
            return Err(Error::NoFeatures);
        }
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.n_features()) {
            return Err(Error::InvalidArgument(format!(
                "column {bad} out of range for {} features",
                self.n_features()
            )));
        }
        let features = self.features.select(Axis(1), columns);
        let names = self
            .column_names
            .as_ref()
            .map(|names| columns.iter().map(|&c| names[c].clone()).collect());
        Ok(Dataset {
            features,
            targets: self.targets.clone(),
            column_names: names,
            target_bounds: self.target_bounds,
        })
    }

    /// Same targets and metadata with a replaced feature matrix.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Dataset> {
        if features.dim() != self.features.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: features.ncols(),
            });
        }
        let mut out = Dataset::new(features, self.targets.clone(), self.column_names.clone())?;
        out.target_bounds = self.target_bounds;
        Ok(out)
    }

    /// Writes the dataset as CSV with a header row; the target is the last
    /// column and is named `y`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut out = std::io::BufWriter::new(file);
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut header = self.column_labels();
        header.push("y".to_string());
        writeln!(out, "{}", header.join(",")).map_err(io_err)?;
        for (row, y) in self.features.outer_iter().zip(self.targets.iter()) {
            let mut line = String::new();
            for v in row.iter() {
                line.push_str(&format!("{v:?},"));
            }
            line.push_str(&format!("{y:?}"));
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

fn observed_bounds(targets: ArrayView1<'_, f64>) -> (f64, f64) {
    targets.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

/// Which CSV column holds the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetColumn {
    Name(String),
    Index(usize),
    Last,
}

impl TargetColumn {
    /// `last`, a numeric index, or a header name.
    pub fn parse(spec: &str) -> TargetColumn {
        if spec == "last" {
            return TargetColumn::Last;
        }
        match spec.parse::<usize>() {
            Ok(i) => TargetColumn::Index(i),
            Err(_) => TargetColumn::Name(spec.to_string()),
        }
    }
}

type NumericTable = (Option<Vec<String>>, Vec<Vec<f64>>, usize);

fn read_numeric_csv(path: &Path, has_header: bool) -> Result<NumericTable> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header: Option<Vec<String>> = if has_header {
        Some(reader.headers()?.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = header.as_ref().map(Vec::len);
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::InvalidArgument(format!(
                "line {line} has {} fields, expected {w}",
                record.len()
            )));
        }
        let mut values = Vec::with_capacity(w);
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                column: header.as_ref().map_or_else(|| j.to_string(), |h| h[j].clone()),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: rows.len(),
                    column: j,
                });
            }
            values.push(v);
        }
        rows.push(values);
    }

    Ok((header, rows, width.unwrap_or(0)))
}

/// Reads a numeric CSV. Every column other than the target becomes a
/// feature, in file order.
pub fn load_csv(path: &Path, target: &TargetColumn, has_header: bool) -> Result<Dataset> {
    let (header, rows, width) = read_numeric_csv(path, has_header)?;
    let target_idx = match target {
        TargetColumn::Index(i) if *i < width => *i,
        TargetColumn::Index(i) => return Err(Error::MissingTarget(i.to_string())),
        TargetColumn::Last if width > 0 => width - 1,
        TargetColumn::Last => return Err(Error::MissingTarget("<last>".into())),
        TargetColumn::Name(name) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::MissingTarget(name.clone()))?,
    };
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = width - 1;
    if d == 0 {
        return Err(Error::NoFeatures);
    }

    let n = rows.len();
    let mut features = Array2::zeros((n, d));
    let mut targets = Array1::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        let mut col = 0;
        for (j, &v) in row.iter().enumerate() {
            if j == target_idx {
                targets[i] = v;
            } else {
                features[[i, col]] = v;
                col += 1;
            }
        }
    }
    let names = header.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|(j, _)| *j != target_idx)
            .map(|(_, s)| s)
            .collect()
    });
    Dataset::new(features, targets, names)
}

/// Reads a numeric CSV whose columns are all features, e.g. query points.
pub fn load_features_csv(path: &Path, has_header: bool) -> Result<(Array2<f64>, Option<Vec<String>>)> {
    let (header, rows, width) = read_numeric_csv(path, has_header)?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if width == 0 {
        return Err(Error::NoFeatures);
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let x = Array2::from_shape_vec((flat.len() / width, width), flat).expect("rows share one width");
    Ok((x, header))
}

/// Per-column standardization to zero mean and unit (population) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl StandardScaler {
    /// Constant columns keep a std of 1 so the transform is a pure shift.
    pub fn fit(data: &Dataset) -> Result<Self> {
        let n = data.n_samples();
        if n < 2 {
            return Err(Error::InsufficientSamples(format!(
                "standard scaling needs at least 2 rows, got {n}"
            )));
        }
        let x = data.features();
        let mut means = Vec::with_capacity(data.n_features());
        let mut stds = Vec::with_capacity(data.n_features());
        for col in x.axis_iter(Axis(1)) {
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            let constant = std <= 1e-12 * mean.abs().max(1.0);
            means.push(mean);
            stds.push(if constant { 1.0 } else { std });
        }
        Ok(StandardScaler { means, stds })
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        let mut out = x.to_owned();
        for mut row in out.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.means[j]) / self.stds[j];
            }
        }
        Ok(out)
    }

    pub fn transform_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(x.iter()
            .enumerate()
            .map(|(j, v)| (v - self.means[j]) / self.stds[j])
            .collect())
    }

    pub fn inverse_transform(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(z.ncols())?;
        let mut out = z.to_owned();
        for mut row in out.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.stds[j] + self.means[j];
            }
        }
        Ok(out)
    }

    pub fn transform_dataset(&self, data: &Dataset) -> Result<Dataset> {
        data.with_features(self.transform(data.features())?)
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.means.len() {
            return Err(Error::DimensionMismatch {
                expected: self.means.len(),
                got,
            });
        }
        Ok(())
    }
}

/// Assignment of samples to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_assignments: Vec<usize>,
    pub seed: u64,
    pub n_folds: usize,
}

/// Shuffled, balanced fold assignment: fold sizes differ by at most one.
pub fn make_folds(n: usize, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 || n_folds > n {
        return Err(Error::InvalidConfig(format!(
            "fold count {n_folds} must be in [2, {n}]"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let mut fold_assignments = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_assignments[row] = pos % n_folds;
    }
    Ok(FoldPlan {
        fold_assignments,
        seed,
        n_folds,
    })
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        self.indices_where(|f| f == fold)
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.indices_where(|f| f != fold)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in &self.fold_assignments {
            sizes[f] += 1;
        }
        sizes
    }

    fn indices_where(&self, pred: impl Fn(usize) -> bool) -> Vec<usize> {
        self.fold_assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| pred(f))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Seeded shuffle split of `0..n` into `(train, validation)` positions.
/// The validation part holds `round(n * val_fraction)` rows, at least one.
pub fn train_val_split(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "validation fraction {val_fraction} must lie in (0, 1)"
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientSamples(format!(
            "cannot split {n} rows into train and validation"
        )));
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let val = order[..n_val].to_vec();
    let train = order[n_val..].to_vec();
    Ok((train, val))
}

/// Noiseless Friedman-1 response. Only the first five coordinates matter.
pub fn friedman1_response(x: &[f64]) -> f64 {
    10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

/// Friedman-1 samples: features uniform on `[0, 1)^d`, target per
/// [`friedman1_response`] plus `noise_scale` times a standard normal draw.
///
/// The normal draw happens for every row even when `noise_scale` is zero,
/// so the features for a given seed do not depend on the noise level.
pub fn friedman1(n_samples: usize, n_features: usize, noise_scale: f64, seed: u64) -> Result<Dataset> {
    if n_features < 5 {
        return Err(Error::InvalidArgument(format!(
            "Friedman-1 needs at least 5 features, got {n_features}"
        )));
    }
    if n_samples == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise scale must be finite and non-negative, got {noise_scale}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut features = Array2::zeros((n_samples, n_features));
    let mut targets = Array1::zeros(n_samples);
    for i in 0..n_samples {
        let mut row = features.row_mut(i);
        for v in row.iter_mut() {
            *v = rng.random::<f64>();
        }
        let eps: f64 = rng.sample(StandardNormal);
        let x = row.as_slice().expect("row-major storage");
        targets[i] = friedman1_response(x) + noise_scale * eps;
    }
    let names = (0..n_features).map(|j| format!("x{j}")).collect();
    Dataset::new(features, targets, Some(names))
}
