//! Regression engines: DNNR, plain and scaled KNN, and local-linear.
//!
//! All models keep a copy of their training data and an exact index over
//! the weighted rows. Neighbors are always selected in the weighted metric.
//! DNNR's gradient fits use each anchor's weighted-metric neighborhood but
//! are solved in the original coordinates, which is identical to fitting in
//! weighted coordinates for positive weights and stays well defined when a
//! learned weight reaches zero.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gradient::{fit_local, fit_local_lasso, taylor_predict, GradientForm, LocalModel, TaylorOrder};
use crate::linalg::lstsq;
use crate::nnindex::{Index, NeighborSet, ScalingWeights};

/// Whether a model runs in the identity metric or a learned one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    #[default]
    Identity,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnrConfig {
    /// Anchors averaged per query.
    pub k: usize,
    /// Neighbors per gradient fit.
    pub k_prime: usize,
    pub order: TaylorOrder,
    pub lasso_lambda: Option<f64>,
    pub clip: bool,
    pub scaling: Scaling,
    #[serde(default)]
    pub form: GradientForm,
}

impl Default for DnnrConfig {
    fn default() -> Self {
        DnnrConfig {
            k: 3,
            k_prime: 32,
            order: TaylorOrder::First,
            lasso_lambda: None,
            clip: true,
            scaling: Scaling::Identity,
            form: GradientForm::Raw,
        }
    }
}

impl DnnrConfig {
    pub fn new(k: usize, k_prime: usize) -> Self {
        DnnrConfig {
            k,
            k_prime,
            ..Default::default()
        }
    }

    /// Checks the configuration against a training set of `n` rows in `d`
    /// dimensions.
    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        let min_kp = (d * self.order.neighbors_per_feature()).max(1);
        if self.k_prime < min_kp {
            return Err(Error::InvalidConfig(format!(
                "k' = {} is below {} for {d} features at order {:?}",
                self.k_prime, min_kp, self.order
            )));
        }
        if let Some(lambda) = self.lasso_lambda {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::InvalidConfig(format!("lasso penalty {lambda} must be >= 0")));
            }
            if self.order != TaylorOrder::First {
                return Err(Error::InvalidConfig("lasso fits are first order only".into()));
            }
        }
        if self.k > n || self.k_prime >= n {
            return Err(Error::InsufficientSamples(format!(
                "{n} training rows cannot supply k = {} anchors and k' = {} neighbors per anchor",
                self.k, self.k_prime
            )));
        }
        Ok(())
    }
}

/// Per-query audit record of a DNNR prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub query: Vec<f64>,
    pub neighbor_ids: Vec<usize>,
    pub per_neighbor_estimates: Vec<f64>,
    /// `|(x - x_m) * gamma_m|` per anchor, element-wise.
    pub per_neighbor_relevance: Vec<Vec<f64>>,
    pub raw_mean: f64,
    pub clipped: f64,
    pub was_clipped: bool,
}

/// Shared behavior of the regressors.
pub trait Regressor: Sync {
    fn n_features(&self) -> usize;

    fn predict(&self, x: &[f64]) -> Result<f64>;

    /// Predicts every row of `x`, in parallel across rows.
    fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: x.ncols(),
            });
        }
        let rows: Vec<Vec<f64>> = x.outer_iter().map(|r| r.to_vec()).collect();
        rows.par_iter().map(|r| self.predict(r)).collect()
    }
}

fn check_point(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    if let Some(j) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: 0, column: j });
    }
    Ok(())
}

fn check_weights(data: &Dataset, weights: &ScalingWeights) -> Result<()> {
    if weights.len() != data.n_features() {
        return Err(Error::DimensionMismatch {
            expected: data.n_features(),
            got: weights.len(),
        });
    }
    Ok(())
}

fn clip_to(v: f64, bounds: (f64, f64)) -> f64 {
    v.clamp(bounds.0, bounds.1)
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// A fitted DNNR model. Local gradient models are computed on first use and
/// cached per anchor.
#[derive(Debug)]
pub struct DnnrModel {
    data: Dataset,
    config: DnnrConfig,
    index: Index,
    locals: Vec<OnceLock<LocalModel>>,
    degenerate_fits: AtomicUsize,
}

/// Fits DNNR on `data` with neighbor selection under `weights`.
pub fn fit_dnnr(data: &Dataset, config: &DnnrConfig, weights: &ScalingWeights) -> Result<DnnrModel> {
    check_weights(data, weights)?;
    config.validate(data.n_samples(), data.n_features())?;
    if config.scaling == Scaling::Identity && !weights.is_identity() {
        return Err(Error::InvalidConfig(
            "identity scaling requested with non-identity weights".into(),
        ));
    }
    let index = Index::build(data.features(), weights)?;
    Ok(DnnrModel {
        locals: (0..data.n_samples()).map(|_| OnceLock::new()).collect(),
        data: data.clone(),
        config: config.clone(),
        index,
        degenerate_fits: AtomicUsize::new(0),
    })
}

impl DnnrModel {
    pub fn config(&self) -> &DnnrConfig {
        &self.config
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn weights(&self) -> &ScalingWeights {
        self.index.weights()
    }

    /// Number of anchors whose fit fell back to a zero gradient.
    pub fn degenerate_fits(&self) -> usize {
        self.degenerate_fits.load(Ordering::Relaxed)
    }

    /// The `k'` gradient-fit neighbors of training row `m`.
    pub fn gradient_neighbors(&self, m: usize) -> Result<NeighborSet> {
        let x = self.data.row(m).to_vec();
        self.index.query(&x, self.config.k_prime, &[m])
    }

    /// The local model of training row `m`, fitting it on first access.
    pub fn local_model(&self, m: usize) -> Result<&LocalModel> {
        let cell = self
            .locals
            .get(m)
            .ok_or_else(|| Error::InvalidArgument(format!("anchor {m} out of range")))?;
        if let Some(model) = cell.get() {
            return Ok(model);
        }
        let neighbors = self.gradient_neighbors(m)?;
        let fitted = self.fit_anchor(m, &neighbors.indices);
        Ok(cell.get_or_init(|| fitted))
    }

    fn fit_anchor(&self, m: usize, neighbors: &[usize]) -> LocalModel {
        let (x, y) = (self.data.features(), self.data.targets());
        let result = match self.config.lasso_lambda {
            Some(lambda) => fit_local_lasso(x, y, m, neighbors, lambda),
            None => fit_local(x, y, m, neighbors, self.config.order, self.config.form),
        };
        match result {
            Ok(model) => model,
            Err(err) => {
                self.degenerate_fits.fetch_add(1, Ordering::Relaxed);
                log::warn!("anchor {m}: {err}; using a zero gradient");
                LocalModel::flat(m, self.data.n_features())
            }
        }
    }

    /// Fits every anchor's local model up front, in parallel.
    pub fn warm_cache(&self) -> Result<()> {
        (0..self.data.n_samples())
            .into_par_iter()
            .try_for_each(|m| self.local_model(m).map(|_| ()))
    }

    /// The `k` anchors for a query.
    pub fn anchors(&self, x: &[f64]) -> Result<NeighborSet> {
        check_point(x, self.data.n_features())?;
        self.index.query(x, self.config.k, &[])
    }

    fn estimates(&self, x: &[f64], anchors: &NeighborSet) -> Result<Vec<f64>> {
        anchors
            .indices
            .iter()
            .map(|&m| {
                let local = self.local_model(m)?;
                let anchor_x = self.data.row(m).to_vec();
                taylor_predict(local, &anchor_x, self.data.targets()[m], x)
            })
            .collect()
    }

    fn finish(&self, raw: f64) -> f64 {
        if self.config.clip {
            clip_to(raw, self.data.target_bounds())
        } else {
            raw
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let anchors = self.anchors(x)?;
        let est = self.estimates(x, &anchors)?;
        Ok(self.finish(mean_of(&est)))
    }

    pub fn predict_traced(&self, x: &[f64]) -> Result<PredictionTrace> {
        let anchors = self.anchors(x)?;
        let est = self.estimates(x, &anchors)?;
        let relevance = anchors
            .indices
            .iter()
            .map(|&m| {
                let local = self.local_model(m)?;
                Ok(relevance(x, &self.data.row(m).to_vec(), &local.gamma))
            })
            .collect::<Result<Vec<_>>>()?;
        let raw_mean = mean_of(&est);
        let clipped = self.finish(raw_mean);
        Ok(PredictionTrace {
            query: x.to_vec(),
            neighbor_ids: anchors.indices,
            per_neighbor_estimates: est,
            per_neighbor_relevance: relevance,
            raw_mean,
            clipped,
            was_clipped: clipped != raw_mean,
        })
    }
}

impl Regressor for DnnrModel {
    fn n_features(&self) -> usize {
        self.data.n_features()
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        DnnrModel::predict(self, x)
    }
}

/// Element-wise `|(x - anchor) * gamma|`.
pub fn relevance(x: &[f64], anchor: &[f64], gamma: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(anchor)
        .zip(gamma)
        .map(|((a, b), g)| ((a - b) * g).abs())
        .collect()
}

/// Plain k-nearest-neighbor averaging, optionally in a learned metric.
#[derive(Debug, Clone)]
pub struct KnnModel {
    data: Dataset,
    index: Index,
    k: usize,
}

pub fn fit_knn(data: &Dataset, k: usize, weights: &ScalingWeights) -> Result<KnnModel> {
    check_weights(data, weights)?;
    if k == 0 || k > data.n_samples() {
        return Err(Error::InvalidConfig(format!(
            "k = {k} outside [1, {}]",
            data.n_samples()
        )));
    }
    Ok(KnnModel {
        index: Index::build(data.features(), weights)?,
        data: data.clone(),
        k,
    })
}

impl KnnModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.data.n_features())?;
        let nb = self.index.query(x, self.k, &[])?;
        let y = self.data.targets();
        let values: Vec<f64> = nb.indices.iter().map(|&i| y[i]).collect();
        // A mean of targets lies inside the bounds up to rounding; the clamp
        // absorbs that rounding so the result matches zero-gradient DNNR.
        Ok(clip_to(mean_of(&values), self.data.target_bounds()))
    }
}

impl Regressor for KnnModel {
    fn n_features(&self) -> usize {
        self.data.n_features()
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        KnnModel::predict(self, x)
    }
}

/// Local-linear regression: one least-squares hyperplane with intercept per
/// query, fitted to the query's `k_region` nearest rows.
#[derive(Debug, Clone)]
pub struct LocalLinearModel {
    data: Dataset,
    index: Index,
    k_region: usize,
    clip: bool,
}

pub fn fit_ll(data: &Dataset, k_region: usize, weights: &ScalingWeights) -> Result<LocalLinearModel> {
    check_weights(data, weights)?;
    let d = data.n_features();
    if k_region < d + 1 {
        return Err(Error::InvalidConfig(format!(
            "local-linear region of {k_region} rows is below d + 1 = {}",
            d + 1
        )));
    }
    if k_region > data.n_samples() {
        return Err(Error::InsufficientSamples(format!(
            "{} rows cannot supply a region of {k_region}",
            data.n_samples()
        )));
    }
    Ok(LocalLinearModel {
        index: Index::build(data.features(), weights)?,
        data: data.clone(),
        k_region,
        clip: true,
    })
}

impl LocalLinearModel {
    pub fn with_clip(mut self, clip: bool) -> Self {
        self.clip = clip;
        self
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let d = self.data.n_features();
        check_point(x, d)?;
        let nb = self.index.query(x, self.k_region, &[])?;
        let feats = self.data.features();
        let y = self.data.targets();
        // Centering at the query makes the intercept the prediction.
        let a = nalgebra::DMatrix::from_fn(nb.len(), d + 1, |r, c| {
            if c == 0 {
                1.0
            } else {
                feats[[nb.indices[r], c - 1]] - x[c - 1]
            }
        });
        let b = nalgebra::DVector::from_fn(nb.len(), |r, _| y[nb.indices[r]]);
        let raw = lstsq(&a, &b, false).coef[0];
        Ok(if self.clip {
            clip_to(raw, self.data.target_bounds())
        } else {
            raw
        })
    }
}

impl Regressor for LocalLinearModel {
    fn n_features(&self) -> usize {
        self.data.n_features()
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        LocalLinearModel::predict(self, x)
    }
}
