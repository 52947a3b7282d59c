//! Cross-validated benchmark harness: grid search per fold, Friedman-1
//! sweeps and the tolerance simulation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{friedman1, load_csv, make_folds, train_val_split, Dataset, StandardScaler, TargetColumn};
use crate::error::{Error, Result};
use crate::featscale::{train_weights, ScaleTrainConfig};
use crate::gradient::TaylorOrder;
use crate::metrics::{mean, mse, r2, spearman};
use crate::nnindex::ScalingWeights;
use crate::predictor::{fit_dnnr, fit_knn, fit_ll, DnnrConfig, Regressor, Scaling};
use crate::theory::{pointwise_tolerances, write_tolerance_csv, PointTolerance};

pub type Params = BTreeMap<String, f64>;
pub type Grid = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Dnnr,
    Dnnr2,
    DnnrLasso,
    DnnrUnscaled,
    Knn,
    KnnScaled,
    Ll,
    LlScaled,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Dnnr,
        Method::Dnnr2,
        Method::DnnrLasso,
        Method::DnnrUnscaled,
        Method::Knn,
        Method::KnnScaled,
        Method::Ll,
        Method::LlScaled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dnnr => "dnnr",
            Method::Dnnr2 => "dnnr2",
            Method::DnnrLasso => "dnnr-lasso",
            Method::DnnrUnscaled => "dnnr-unscaled",
            Method::Knn => "knn",
            Method::KnnScaled => "knn-scaled",
            Method::Ll => "ll",
            Method::LlScaled => "ll-scaled",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }

    /// Whether the method runs in a learned metric by default.
    pub fn learns_weights(self) -> bool {
        matches!(
            self,
            Method::Dnnr | Method::Dnnr2 | Method::DnnrLasso | Method::KnnScaled | Method::LlScaled
        )
    }

    pub fn grid_keys(self) -> &'static [&'static str] {
        match self {
            Method::Dnnr | Method::Dnnr2 | Method::DnnrUnscaled => &["k", "k_prime"],
            Method::DnnrLasso => &["k", "k_prime", "lambda"],
            Method::Knn | Method::KnnScaled => &["k"],
            Method::Ll | Method::LlScaled => &["k_region"],
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `count` distinct integers spread evenly over `[lower d, upper d]`, each at
/// least `d`. Returns fewer values, with a logged warning, when the range
/// is too narrow.
pub fn sample_kprime_grid(d: usize, lower: f64, upper: f64, count: usize) -> Result<Vec<usize>> {
    if d == 0 || !(lower >= 1.0) || !(upper > lower) || count == 0 {
        return Err(Error::InvalidArgument(format!(
            "grid needs d >= 1, lower >= 1, upper > lower, count >= 1 (got {d}, {lower}, {upper}, {count})"
        )));
    }
    let (lo, hi) = (lower * d as f64, upper * d as f64);
    let mut values: Vec<usize> = if count == 1 {
        vec![((lo + hi) / 2.0).round() as usize]
    } else {
        (0..count)
            .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).round() as usize)
            .collect()
    };
    for v in values.iter_mut() {
        *v = (*v).max(d);
    }
    values.dedup();
    if values.len() < count {
        log::warn!(
            "range [{lo}, {hi}] holds only {} distinct values of the {count} requested",
            values.len()
        );
    }
    Ok(values)
}

fn as_f64(v: &[usize]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Default search grid for `method` on `n` training rows in `d` dimensions.
pub fn default_grid(method: Method, n: usize, d: usize) -> Result<Grid> {
    let mut grid = Grid::new();
    match method {
        Method::Dnnr | Method::Dnnr2 | Method::DnnrUnscaled | Method::DnnrLasso => {
            let (ks, lower, upper, count): (&[usize], f64, f64, usize) = if n < 2000 {
                (&[1, 2, 3, 5, 7], 2.0, 15.0, 30)
            } else if n < 50_000 {
                (&[3, 4], 2.0, 18.0, 20)
            } else {
                (&[3], 2.0, 12.0, 14)
            };
            grid.insert("k".into(), as_f64(ks));
            let mut kp = sample_kprime_grid(d, lower, upper, count)?;
            kp.retain(|&v| v < n);
            grid.insert("k_prime".into(), as_f64(&kp));
            if method == Method::DnnrLasso {
                grid.insert("lambda".into(), vec![1e-3, 1e-2, 1e-1, 1.0]);
            }
        }
        Method::Knn | Method::KnnScaled => {
            let ks: &[usize] = if n < 2000 {
                &[2, 5, 7, 10, 20, 30, 40, 50]
            } else if n < 50_000 {
                &[2, 5, 7, 10, 25, 50, 100, 250]
            } else {
                &[2, 3, 5, 7, 10, 12, 15, 20, 25]
            };
            grid.insert("k".into(), as_f64(ks));
        }
        Method::Ll | Method::LlScaled => {
            let mut kr = sample_kprime_grid(d, 2.0, 25.0, 50)?;
            for v in kr.iter_mut() {
                *v = (*v).max(d + 1);
            }
            kr.dedup();
            grid.insert("k_region".into(), as_f64(&kr));
        }
    }
    Ok(grid)
}

/// Cartesian product of the grid, in lexicographic key order.
fn grid_cells(grid: &Grid) -> Vec<Params> {
    let mut cells = vec![Params::new()];
    for (key, values) in grid {
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                values.iter().map(move |v| {
                    let mut c = cell.clone();
                    c.insert(key.clone(), *v);
                    c
                })
            })
            .collect();
    }
    cells
}

fn count_param(params: &Params, key: &str) -> Result<usize> {
    let v = *params
        .get(key)
        .ok_or_else(|| Error::InvalidConfig(format!("missing hyperparameter {key}")))?;
    if !(v >= 0.0 && v.fract() == 0.0) {
        return Err(Error::InvalidConfig(format!("{key} = {v} is not a count")));
    }
    Ok(v as usize)
}

/// DNNR configuration for a DNNR-family method.
pub fn dnnr_config(method: Method, params: &Params, weights: &ScalingWeights) -> Result<DnnrConfig> {
    let mut cfg = DnnrConfig::new(count_param(params, "k")?, count_param(params, "k_prime")?);
    cfg.scaling = if weights.is_identity() {
        Scaling::Identity
    } else {
        Scaling::Learned
    };
    match method {
        Method::Dnnr | Method::DnnrUnscaled => {}
        Method::Dnnr2 => cfg.order = TaylorOrder::Second,
        Method::DnnrLasso => {
            cfg.lasso_lambda = Some(
                *params
                    .get("lambda")
                    .ok_or_else(|| Error::InvalidConfig("missing hyperparameter lambda".into()))?,
            )
        }
        other => return Err(Error::InvalidConfig(format!("{other} is not a DNNR method"))),
    }
    Ok(cfg)
}

/// Fits `method` with `params` on `data`.
pub fn fit_method(
    method: Method,
    params: &Params,
    data: &Dataset,
    weights: &ScalingWeights,
) -> Result<Box<dyn Regressor>> {
    Ok(match method {
        Method::Dnnr | Method::Dnnr2 | Method::DnnrLasso | Method::DnnrUnscaled => {
            Box::new(fit_dnnr(data, &dnnr_config(method, params, weights)?, weights)?)
        }
        Method::Knn | Method::KnnScaled => Box::new(fit_knn(data, count_param(params, "k")?, weights)?),
        Method::Ll | Method::LlScaled => Box::new(fit_ll(data, count_param(params, "k_region")?, weights)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Csv {
        path: PathBuf,
        target: String,
        has_header: bool,
    },
    Friedman1 {
        n_samples: usize,
        n_features: usize,
        noise: f64,
        seed: u64,
    },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Csv {
                path,
                target,
                has_header,
            } => load_csv(path, &TargetColumn::parse(target), *has_header),
            DatasetSpec::Friedman1 {
                n_samples,
                n_features,
                noise,
                seed,
            } => friedman1(*n_samples, *n_features, *noise, *seed),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DatasetSpec::Csv { path, target, .. } => format!("{} (target {target})", path.display()),
            DatasetSpec::Friedman1 {
                n_samples,
                n_features,
                noise,
                seed,
            } => format!("friedman1(n={n_samples}, d={n_features}, noise={noise}, seed={seed})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub dataset: DatasetSpec,
    pub folds: usize,
    pub seed: u64,
    /// Search grid; the method's default grid when absent.
    pub grid: Option<Grid>,
    /// Learn feature weights on each training fold.
    pub scale_features: bool,
    /// Standardize features with statistics of the training fold.
    pub standardize: bool,
    /// Weight-training settings; sized from the dimension when absent.
    pub scale_train: Option<ScaleTrainConfig>,
    /// Tune on the first fold only and reuse the choice on later folds.
    pub tune_first_fold_only: bool,
    /// Share of each training fold held out for the grid search.
    pub inner_val_fraction: f64,
}

impl ExperimentConfig {
    pub fn new(method: Method, dataset: DatasetSpec) -> Self {
        ExperimentConfig {
            method,
            dataset,
            folds: 10,
            seed: 0,
            grid: None,
            scale_features: method.learns_weights(),
            standardize: true,
            scale_train: None,
            tune_first_fold_only: false,
            inner_val_fraction: 0.2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidConfig(format!("{} folds; need at least 2", self.folds)));
        }
        if !(self.inner_val_fraction > 0.0 && self.inner_val_fraction < 1.0) {
            return Err(Error::InvalidConfig("inner validation fraction outside (0, 1)".into()));
        }
        if let Some(grid) = &self.grid {
            let keys = self.method.grid_keys();
            for (k, values) in grid {
                if !keys.contains(&k.as_str()) {
                    return Err(Error::InvalidConfig(format!(
                        "grid key {k:?} is not a hyperparameter of {} (expected {keys:?})",
                        self.method
                    )));
                }
                if values.is_empty() {
                    return Err(Error::InvalidConfig(format!("grid key {k:?} has no values")));
                }
            }
            if let Some(missing) = keys.iter().find(|k| !grid.contains_key(**k)) {
                return Err(Error::InvalidConfig(format!("grid lacks {missing:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub n_samples: usize,
    pub n_features: usize,
    pub folds: usize,
    pub seed: u64,
    pub crate_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultReport {
    pub method: Method,
    pub per_fold_mse: Vec<f64>,
    pub per_fold_r2: Vec<f64>,
    pub mean_mse: f64,
    pub std_mse: f64,
    /// Mean of the per-fold R^2 values.
    pub r2: f64,
    /// Hyperparameters chosen on the first fold.
    pub best_hyperparameters: Params,
    pub per_fold_hyperparameters: Vec<Params>,
    /// Learned weights per fold, when weight learning was on.
    pub per_fold_weights: Vec<Vec<f64>>,
    pub wall_time_s: f64,
    pub provenance: Provenance,
}

impl ResultReport {
    /// The report with the timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> ResultReport {
        ResultReport {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// Grid search on a single split; returns the best cell (first on ties) and
/// its validation MSE.
pub fn grid_search(
    method: Method,
    grid: &Grid,
    train: &Dataset,
    val: &Dataset,
    weights: &ScalingWeights,
) -> Result<(Params, f64)> {
    let cells = grid_cells(grid);
    let truth = val.targets().to_vec();
    let scores: Vec<Option<f64>> = cells
        .par_iter()
        .map(|cell| match fit_method(method, cell, train, weights) {
            Ok(model) => model.predict_batch(val.features()).map(|p| Some(mse(&truth, &p))),
            Err(Error::InvalidConfig(_)) | Err(Error::InsufficientSamples(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((i, s));
            }
        }
    }
    let (i, score) = best.ok_or_else(|| {
        Error::InvalidConfig(format!(
            "no grid cell of {method} is valid for {} training rows",
            train.n_samples()
        ))
    })?;
    Ok((cells[i].clone(), score))
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(fold as u64 + 1)
}

/// Runs the k-fold protocol on an in-memory dataset.
pub fn run_experiment_on(config: &ExperimentConfig, data: &Dataset) -> Result<ResultReport> {
    config.validate()?;
    let start = Instant::now();
    let (n, d) = (data.n_samples(), data.n_features());
    let plan = make_folds(n, config.folds, config.seed)?;
    let mut per_fold_mse = Vec::with_capacity(config.folds);
    let mut per_fold_r2 = Vec::with_capacity(config.folds);
    let mut per_fold_hyperparameters: Vec<Params> = Vec::with_capacity(config.folds);
    let mut per_fold_weights = Vec::new();

    for fold in 0..config.folds {
        let seed = fold_seed(config.seed, fold);
        let mut train = data.select_rows(&plan.train_indices(fold))?;
        let mut test = data.select_rows(&plan.test_indices(fold))?;
        if config.standardize {
            let scaler = StandardScaler::fit(&train)?;
            train = scaler.transform_dataset(&train)?;
            test = scaler.transform_dataset(&test)?;
        }
        let weights = if config.scale_features {
            let mut st = config
                .scale_train
                .clone()
                .unwrap_or_else(|| ScaleTrainConfig::for_dim(d));
            st.seed = seed;
            let report = train_weights(&train, &st)?;
            log::info!(
                "fold {fold}: learned weights {:?} (best epoch {})",
                report.final_weights.as_slice(),
                report.best_epoch
            );
            per_fold_weights.push(report.final_weights.as_slice().to_vec());
            report.final_weights
        } else {
            ScalingWeights::identity(d)
        };

        let params = if config.tune_first_fold_only && fold > 0 {
            per_fold_hyperparameters[0].clone()
        } else {
            let grid = match &config.grid {
                Some(g) => g.clone(),
                None => default_grid(config.method, train.n_samples(), d)?,
            };
            let (inner_train_idx, inner_val_idx) = train_val_split(train.n_samples(), config.inner_val_fraction, seed)?;
            let inner_train = train.select_rows(&inner_train_idx)?;
            let inner_val = train.select_rows(&inner_val_idx)?;
            let (params, val_mse) = grid_search(config.method, &grid, &inner_train, &inner_val, &weights)?;
            log::info!("fold {fold}: best {params:?} (validation mse {val_mse:.5})");
            params
        };

        let model = fit_method(config.method, &params, &train, &weights)?;
        let pred = model.predict_batch(test.features())?;
        let truth = test.targets().to_vec();
        let fold_mse = mse(&truth, &pred);
        log::info!("fold {fold}: test mse {fold_mse:.5}");
        per_fold_mse.push(fold_mse);
        per_fold_r2.push(r2(&truth, &pred));
        per_fold_hyperparameters.push(params);
    }

    let mean_mse = mean(&per_fold_mse);
    let std_mse = (per_fold_mse.iter().map(|m| (m - mean_mse).powi(2)).sum::<f64>() / per_fold_mse.len() as f64).sqrt();
    Ok(ResultReport {
        method: config.method,
        mean_mse,
        std_mse,
        r2: mean(&per_fold_r2),
        best_hyperparameters: per_fold_hyperparameters[0].clone(),
        per_fold_mse,
        per_fold_r2,
        per_fold_hyperparameters,
        per_fold_weights,
        wall_time_s: start.elapsed().as_secs_f64(),
        provenance: Provenance {
            dataset: config.dataset.describe(),
            n_samples: n,
            n_features: d,
            folds: config.folds,
            seed: config.seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    })
}

/// Loads the configured dataset and runs the k-fold protocol on it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultReport> {
    let data = config.dataset.load()?;
    run_experiment_on(config, &data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NSamples,
    Noise,
    NFeatures,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<SweepAxis> {
        match s {
            "n_samples" | "n-samples" => Ok(SweepAxis::NSamples),
            "noise" => Ok(SweepAxis::Noise),
            "n_features" | "n-features" => Ok(SweepAxis::NFeatures),
            other => Err(Error::InvalidConfig(format!("unknown sweep axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub report: ResultReport,
}

/// Friedman-1 sweep along one axis from the base setting of 5000 samples,
/// 10 features and no noise. Five folds; hyperparameters tuned on the first
/// fold and frozen.
pub fn run_friedman_sweep(axis: SweepAxis, values: &[f64], methods: &[Method], seed: u64) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(values.len() * methods.len());
    for &value in values {
        let (mut n, mut d, mut noise) = (5000usize, 10usize, 0.0);
        match axis {
            SweepAxis::NSamples => n = value as usize,
            SweepAxis::Noise => noise = value,
            SweepAxis::NFeatures => d = value as usize,
        }
        let dataset = DatasetSpec::Friedman1 {
            n_samples: n,
            n_features: d,
            noise,
            seed,
        };
        let data = dataset.load()?;
        for &method in methods {
            let mut cfg = ExperimentConfig::new(method, dataset.clone());
            cfg.folds = 5;
            cfg.seed = seed;
            cfg.tune_first_fold_only = true;
            let report = run_experiment_on(&cfg, &data)?;
            log::info!("{axis:?} = {value}, {method}: mse {:.4}", report.mean_mse);
            rows.push(SweepRow { axis, value, report });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSimConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub k: usize,
    pub k_prime: usize,
    pub lipschitz: f64,
    pub seed: u64,
    /// Friedman-1 dimension; 5 means no irrelevant features.
    pub n_features: usize,
}

impl Default for BoundSimConfig {
    fn default() -> Self {
        BoundSimConfig {
            n_train: 10_000,
            n_test: 2_000,
            k: 7,
            k_prime: 32,
            lipschitz: 40.0,
            seed: 0,
            n_features: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSimRow {
    pub point_id: usize,
    pub tolerance: PointTolerance,
    pub abs_error_dnnr: f64,
    pub abs_error_knn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSimResult {
    /// Rows sorted by increasing DNNR tolerance.
    pub rows: Vec<BoundSimRow>,
    /// Share of points whose DNNR error exceeds its tolerance.
    pub violation_rate_dnnr: f64,
    pub violation_rate_knn: f64,
    pub spearman_dnnr: Option<f64>,
    pub spearman_knn: Option<f64>,
    pub mse_dnnr: f64,
    pub mse_knn: f64,
}

impl BoundSimResult {
    pub fn summary_line(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        format!(
            "violation rate dnnr {:.4} knn {:.4}; rank correlation dnnr {} knn {}; mse dnnr {:.4} knn {:.4}",
            self.violation_rate_dnnr,
            self.violation_rate_knn,
            fmt(self.spearman_dnnr),
            fmt(self.spearman_knn),
            self.mse_dnnr,
            self.mse_knn
        )
    }

    /// Writes the sorted tolerance table; `abs_error` is the DNNR error.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let tol: Vec<PointTolerance> = self.rows.iter().map(|r| r.tolerance.clone()).collect();
        let err: Vec<f64> = self.rows.iter().map(|r| r.abs_error_dnnr).collect();
        write_tolerance_csv(path, &tol, &err)
    }
}

/// Fits unscaled DNNR and KNN on raw Friedman-1 data and compares each test
/// point's error with its tolerance.
pub fn run_bound_sim(cfg: &BoundSimConfig) -> Result<BoundSimResult> {
    if cfg.n_test == 0 || cfg.lipschitz <= 0.0 {
        return Err(Error::InvalidConfig(
            "bound simulation needs test points and a positive Lipschitz constant".into(),
        ));
    }
    let train = friedman1(cfg.n_train, cfg.n_features, 0.0, cfg.seed)?;
    let test = friedman1(cfg.n_test, cfg.n_features, 0.0, cfg.seed.wrapping_add(1))?;
    let id = ScalingWeights::identity(cfg.n_features);
    let dnnr = fit_dnnr(&train, &DnnrConfig::new(cfg.k, cfg.k_prime), &id)?;
    let knn = fit_knn(&train, cfg.k, &id)?;
    let points: Vec<Vec<f64>> = test.features().outer_iter().map(|r| r.to_vec()).collect();
    let tol = pointwise_tolerances(&dnnr, &points, cfg.lipschitz)?;
    let truth = test.targets().to_vec();
    let pd = dnnr.predict_batch(test.features())?;
    let pk = knn.predict_batch(test.features())?;
    let ed: Vec<f64> = pd.iter().zip(&truth).map(|(p, t)| (p - t).abs()).collect();
    let ek: Vec<f64> = pk.iter().zip(&truth).map(|(p, t)| (p - t).abs()).collect();
    let eps_d: Vec<f64> = tol.iter().map(|t| t.eps_dnnr).collect();
    let eps_k: Vec<f64> = tol.iter().map(|t| t.eps_knn).collect();
    let rate = |e: &[f64], b: &[f64]| e.iter().zip(b).filter(|(e, b)| !(*b >= *e)).count() as f64 / e.len() as f64;
    let mut rows: Vec<BoundSimRow> = tol
        .into_iter()
        .enumerate()
        .map(|(i, t)| BoundSimRow {
            point_id: i,
            tolerance: t,
            abs_error_dnnr: ed[i],
            abs_error_knn: ek[i],
        })
        .collect();
    rows.sort_by(|a, b| {
        a.tolerance
            .eps_dnnr
            .total_cmp(&b.tolerance.eps_dnnr)
            .then(a.point_id.cmp(&b.point_id))
    });
    Ok(BoundSimResult {
        violation_rate_dnnr: rate(&ed, &eps_d),
        violation_rate_knn: rate(&ek, &eps_k),
        spearman_dnnr: (ed.len() > 1).then(|| spearman(&eps_d, &ed)).flatten(),
        spearman_knn: (ek.len() > 1).then(|| spearman(&eps_k, &ek)).flatten(),
        mse_dnnr: mse(&truth, &pd),
        mse_knn: mse(&truth, &pk),
        rows,
    })
}
