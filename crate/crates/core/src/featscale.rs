//! Learning the diagonal feature weights.
//!
//! For a pair `(i, j)` the cross-prediction error is
//! `e_ij = |Y_i - (Y_j + g_j . (X_i - X_j))|`, where `g_j` is fitted on `j`'s
//! `k'` nearest neighbors with `i` left out. The objective over a batch of
//! pairs is the negative Pearson correlation between the squared weighted
//! distances `d_ij = sum_k w_k^2 (X_ik - X_jk)^2` and those errors, so descent
//! pushes nearby points towards predicting each other well.
//!
//! With neighbor sets frozen, `g_j` does not depend on the weights (the fits
//! run in original coordinates), so the objective's gradient flows through
//! the distances alone: `d d_ij / d w_k = 2 w_k (X_ik - X_jk)^2`.

use std::io::Write;
use std::path::Path;

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{seeded_rng, train_val_split, Dataset};
use crate::error::{Error, Result};
use crate::gradient::fit_gradient_fast;
use crate::metrics::mse;
use crate::nnindex::{Index, ScalingWeights};
use crate::predictor::{fit_dnnr, DnnrConfig, Regressor, Scaling};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTrainConfig {
    pub epochs: usize,
    /// Pairs per step: each step pairs one center with this many of its
    /// nearest neighbors.
    pub batch_pairs: usize,
    pub learning_rate: f64,
    pub k_prime: usize,
    pub seed: u64,
    pub val_fraction: f64,
    /// Anchors per query when scoring the validation split.
    #[serde(default = "default_val_k")]
    pub val_k: usize,
}

fn default_val_k() -> usize {
    3
}

impl ScaleTrainConfig {
    /// Defaults tuned on Friedman-1: `k' = 2d`, `8d` pairs per step.
    pub fn for_dim(d: usize) -> Self {
        ScaleTrainConfig {
            epochs: 6,
            batch_pairs: (8 * d).max(3),
            learning_rate: 0.01,
            k_prime: (2 * d).max(2),
            seed: 0,
            val_fraction: 0.2,
            val_k: default_val_k(),
        }
    }

    fn validate(&self, n: usize, d: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_pairs < 3 {
            return Err(Error::InvalidConfig("batch_pairs must be at least 3".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        if self.k_prime < d || self.val_k == 0 {
            return Err(Error::InvalidConfig(format!(
                "k' = {} must be at least d = {d} and val_k at least 1",
                self.k_prime
            )));
        }
        if n < 4 * self.k_prime {
            return Err(Error::InsufficientSamples(format!(
                "{n} rows; weight training with k' = {} needs at least {}",
                self.k_prime,
                4 * self.k_prime
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTrainReport {
    pub final_weights: ScalingWeights,
    /// Mean batch objective per epoch.
    pub loss_history: Vec<f64>,
    /// Validation MSE before training (entry 0) and after each epoch.
    pub val_mse_history: Vec<f64>,
    /// Epoch whose weights were kept; 0 means the initial weights.
    pub best_epoch: usize,
    pub weight_history: Vec<Vec<f64>>,
    pub skipped_steps: usize,
    pub degenerate_batches: usize,
}

impl ScaleTrainReport {
    /// Writes `epoch,objective,val_mse` rows.
    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        writeln!(f, "epoch,objective,val_mse").map_err(io)?;
        writeln!(f, "0,,{:?}", self.val_mse_history[0]).map_err(io)?;
        for (e, obj) in self.loss_history.iter().enumerate() {
            writeln!(f, "{},{:?},{:?}", e + 1, obj, self.val_mse_history[e + 1]).map_err(io)?;
        }
        Ok(())
    }
}

/// Objective value of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    /// Distances or errors had zero variance; `value` is then 0.
    pub degenerate: bool,
}

/// Pearson correlation of `d` and `e` with its derivative with respect to
/// each `d_p`; `None` when either side has zero variance.
fn correlation_with_grad(d: &[f64], e: &[f64]) -> Option<(f64, Vec<f64>)> {
    let n = d.len() as f64;
    let md = d.iter().sum::<f64>() / n;
    let me = e.iter().sum::<f64>() / n;
    let (mut sdd, mut see, mut sde) = (0.0, 0.0, 0.0);
    for (a, b) in d.iter().zip(e) {
        sdd += (a - md) * (a - md);
        see += (b - me) * (b - me);
        sde += (a - md) * (b - me);
    }
    if !(sdd > 0.0 && see > 0.0) {
        return None;
    }
    let norm = (sdd * see).sqrt();
    let r = sde / norm;
    let grad = d
        .iter()
        .zip(e)
        .map(|(a, b)| (b - me) / norm - r * (a - md) / sdd)
        .collect();
    Some((r, grad))
}

/// Negative distance/error correlation and its gradient with respect to the
/// weights, given the per-pair squared coordinate differences.
fn objective_and_grad(weights: &[f64], sq_diffs: &[Vec<f64>], errors: &[f64]) -> Option<(f64, Vec<f64>)> {
    let dists: Vec<f64> = sq_diffs
        .iter()
        .map(|s| s.iter().zip(weights).map(|(s, w)| w * w * s).sum())
        .collect();
    let (r, dr) = correlation_with_grad(&dists, errors)?;
    let mut grad = vec![0.0; weights.len()];
    for (s, g_p) in sq_diffs.iter().zip(&dr) {
        for k in 0..weights.len() {
            grad[k] -= g_p * 2.0 * weights[k] * s[k];
        }
    }
    Some((-r, grad))
}

fn cross_error(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, i: usize, j: usize, gamma: &[f64]) -> f64 {
    let mut est = y[j];
    for (k, g) in gamma.iter().enumerate() {
        est += g * (x[[i, k]] - x[[j, k]]);
    }
    (y[i] - est).abs()
}

fn sq_diff(x: ArrayView2<'_, f64>, i: usize, j: usize) -> Vec<f64> {
    x.row(i)
        .iter()
        .zip(x.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .collect()
}

/// The correlation objective on an explicit pair list. Each `g_j` is fitted
/// on `j`'s `k'` nearest neighbors under `weights`, leaving `i` out.
pub fn pairwise_objective(
    weights: &ScalingWeights,
    data: &Dataset,
    pairs: &[(usize, usize)],
    k_prime: usize,
) -> Result<ObjectiveValue> {
    let n = data.n_samples();
    if weights.len() != data.n_features() {
        return Err(Error::DimensionMismatch {
            expected: data.n_features(),
            got: weights.len(),
        });
    }
    if pairs.len() < 3 {
        return Err(Error::InvalidArgument("the objective needs at least 3 pairs".into()));
    }
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i == j || i >= n || j >= n) {
        return Err(Error::InvalidArgument(format!("invalid pair ({i}, {j})")));
    }
    let index = Index::build(data.features(), weights)?;
    let (x, y) = (data.features(), data.targets());
    let mut errors = Vec::with_capacity(pairs.len());
    let mut dists = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        let nb = index.query(&x.row(j).to_vec(), k_prime, &[i, j])?;
        let gamma = fit_gradient_fast(x, y, j, &nb.indices)?;
        errors.push(cross_error(x, y, i, j, &gamma));
        dists.push(weights.distance(&x.row(i).to_vec(), &x.row(j).to_vec()));
    }
    Ok(pair_objective_value(&dists, &errors))
}

/// Negative Pearson correlation of precomputed distances and errors.
pub fn pair_objective_value(dists: &[f64], errors: &[f64]) -> ObjectiveValue {
    match correlation_with_grad(dists, errors) {
        Some((r, _)) => ObjectiveValue {
            value: -r,
            degenerate: false,
        },
        None => ObjectiveValue {
            value: 0.0,
            degenerate: true,
        },
    }
}

/// Analytic gradient of [`pairwise_objective`] with respect to the weights,
/// valid wherever the neighbor sets do not change.
pub fn pairwise_objective_grad(
    weights: &ScalingWeights,
    data: &Dataset,
    pairs: &[(usize, usize)],
    k_prime: usize,
) -> Result<Option<Vec<f64>>> {
    let index = Index::build(data.features(), weights)?;
    let (x, y) = (data.features(), data.targets());
    let mut errors = Vec::with_capacity(pairs.len());
    let mut diffs = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        let nb = index.query(&x.row(j).to_vec(), k_prime, &[i, j])?;
        let gamma = fit_gradient_fast(x, y, j, &nb.indices)?;
        errors.push(cross_error(x, y, i, j, &gamma));
        diffs.push(sq_diff(x, i, j));
    }
    Ok(objective_and_grad(weights.as_slice(), &diffs, &errors).map(|(_, g)| g))
}

/// Neighborhoods and gradients of every training point under fixed weights.
struct EpochState {
    /// `k' + 1` nearest neighbors of each point, itself excluded.
    grad_neighbors: Vec<Vec<usize>>,
    gammas: Vec<Vec<f64>>,
    /// `batch_pairs` nearest neighbors of each point, itself excluded.
    partners: Vec<Vec<usize>>,
}

fn epoch_state(data: &Dataset, weights: &ScalingWeights, k_prime: usize, batch: usize) -> Result<EpochState> {
    let index = Index::build(data.features(), weights)?;
    let (x, y) = (data.features(), data.targets());
    let n = data.n_samples();
    let wide = (k_prime + 1).max(batch);
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|p| {
            let nb = index.query(&x.row(p).to_vec(), wide, &[p])?;
            let gamma = fit_gradient_fast(x, y, p, &nb.indices[..k_prime])?;
            Ok((nb.indices, gamma))
        })
        .collect::<Result<_>>()?;
    let mut state = EpochState {
        grad_neighbors: Vec::with_capacity(n),
        gammas: Vec::with_capacity(n),
        partners: Vec::with_capacity(n),
    };
    for (nb, gamma) in rows {
        state.partners.push(nb[..batch].to_vec());
        state.grad_neighbors.push(nb[..k_prime + 1].to_vec());
        state.gammas.push(gamma);
    }
    Ok(state)
}

fn validation_mse(train: &Dataset, val: &Dataset, weights: &ScalingWeights, cfg: &ScaleTrainConfig) -> Result<f64> {
    let dnnr_cfg = DnnrConfig {
        k: cfg.val_k,
        k_prime: cfg.k_prime,
        scaling: Scaling::Learned,
        ..DnnrConfig::default()
    };
    let model = fit_dnnr(train, &dnnr_cfg, weights)?;
    let pred = model.predict_batch(val.features())?;
    Ok(mse(val.targets().as_slice().unwrap_or(&val.targets().to_vec()), &pred))
}

/// Learns feature weights by projected stochastic gradient descent on the
/// correlation objective, keeping the epoch with the lowest validation MSE.
pub fn train_weights(data: &Dataset, config: &ScaleTrainConfig) -> Result<ScaleTrainReport> {
    let (n, d) = (data.n_samples(), data.n_features());
    config.validate(n, d)?;
    let (train_idx, val_idx) = train_val_split(n, config.val_fraction, config.seed)?;
    let train = data.select_rows(&train_idx)?;
    let val = data.select_rows(&val_idx)?;
    let n_train = train.n_samples();
    if config.batch_pairs >= n_train || config.k_prime + 1 >= n_train {
        return Err(Error::InsufficientSamples(format!(
            "{n_train} training rows after the validation split are too few for {} pairs per step",
            config.batch_pairs
        )));
    }

    let mut weights = vec![1.0; d];
    let mut best = (
        validation_mse(&train, &val, &ScalingWeights::identity(d), config)?,
        0usize,
        weights.clone(),
    );
    let mut report = ScaleTrainReport {
        final_weights: ScalingWeights::identity(d),
        loss_history: Vec::with_capacity(config.epochs),
        val_mse_history: vec![best.0],
        best_epoch: 0,
        weight_history: vec![weights.clone()],
        skipped_steps: 0,
        degenerate_batches: 0,
    };
    let mut rng = seeded_rng(config.seed ^ 0x5eed_5ca1e);
    let (x, y) = (train.features(), train.targets());

    for epoch in 1..=config.epochs {
        let current = ScalingWeights::new(weights.clone())?;
        let state = epoch_state(&train, &current, config.k_prime, config.batch_pairs)?;
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut rng);
        let mut objective_sum = 0.0;
        let mut steps = 0usize;

        for &i in &order {
            let partners = &state.partners[i];
            let mut errors = Vec::with_capacity(partners.len());
            let mut diffs = Vec::with_capacity(partners.len());
            for &j in partners {
                let nb = &state.grad_neighbors[j];
                let error = if nb[..config.k_prime].contains(&i) {
                    let kept: Vec<usize> = nb.iter().copied().filter(|&p| p != i).collect();
                    let gamma = fit_gradient_fast(x, y, j, &kept)?;
                    cross_error(x, y, i, j, &gamma)
                } else {
                    cross_error(x, y, i, j, &state.gammas[j])
                };
                errors.push(error);
                diffs.push(sq_diff(x, i, j));
            }
            let Some((value, grad)) = objective_and_grad(&weights, &diffs, &errors) else {
                report.degenerate_batches += 1;
                continue;
            };
            if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                report.skipped_steps += 1;
                continue;
            }
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w = (*w - config.learning_rate * g).max(0.0);
            }
            objective_sum += value;
            steps += 1;
        }

        let mean_objective = if steps > 0 { objective_sum / steps as f64 } else { 0.0 };
        let w = ScalingWeights::new(weights.clone())?;
        let val_mse = validation_mse(&train, &val, &w, config)?;
        log::debug!("epoch {epoch}: objective {mean_objective:.4}, val mse {val_mse:.5}");
        report.loss_history.push(mean_objective);
        report.val_mse_history.push(val_mse);
        report.weight_history.push(weights.clone());
        if val_mse < best.0 {
            best = (val_mse, epoch, weights.clone());
        }
    }
    report.best_epoch = best.1;
    report.final_weights = ScalingWeights::new(best.2)?;
    Ok(report)
}
