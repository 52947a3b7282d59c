//! Local derivative estimation at a training point from its neighbors.
//!
//! The default fit follows the raw-difference form: with anchor `m` and
//! neighbors `i`, solve `min || dX g - dY ||` where the rows of `dX` are
//! `X_i - X_m` and `dY_i = Y_i - Y_m`. There is no intercept; the anchor's
//! own target fixes it. [`GradientForm::Normalized`] divides every row and
//! right-hand side entry by `h_i = ||X_i - X_m||` instead.
//!
//! The raw form is exactly equivariant under per-feature rescaling: scaling
//! feature `j` by `c_j` turns the estimate into `g_j / c_j`, so a Taylor
//! estimate at a correspondingly rescaled query does not move.

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, smallest_singular_value};

const LASSO_TOL: f64 = 1e-8;
const LASSO_MAX_SWEEPS: usize = 10_000;

/// Order of the local Taylor expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TaylorOrder {
    /// Gradients forced to zero: every anchor predicts its own target.
    Zero,
    #[default]
    First,
    /// First order plus the diagonal of the Hessian.
    Second,
}

impl TaylorOrder {
    /// Minimum number of gradient neighbors per feature.
    pub fn neighbors_per_feature(self) -> usize {
        match self {
            TaylorOrder::Zero => 0,
            TaylorOrder::First => 1,
            TaylorOrder::Second => 2,
        }
    }
}

/// Row weighting of the local least-squares problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GradientForm {
    /// Raw differences `X_i - X_m`, `Y_i - Y_m`.
    #[default]
    Raw,
    /// Differences divided by `h_i = ||X_i - X_m||`.
    Normalized,
}

/// One anchor's fitted derivative record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    pub anchor_id: usize,
    pub gamma: Vec<f64>,
    /// Estimates of the pure second derivatives, for second-order fits.
    pub hess_diag: Option<Vec<f64>>,
    /// Smallest singular value of the first-order block of the design.
    pub sigma_min: f64,
    /// Largest Euclidean neighbor distance used in the fit.
    pub h_max: f64,
    pub residual_norm: f64,
    /// Neighbors dropped because they coincide with the anchor.
    pub dropped_coincident: usize,
}

impl LocalModel {
    /// A model with zero derivatives, used when no usable neighbors remain.
    pub fn flat(anchor_id: usize, dim: usize) -> Self {
        LocalModel {
            anchor_id,
            gamma: vec![0.0; dim],
            hess_diag: None,
            sigma_min: 0.0,
            h_max: 0.0,
            residual_norm: 0.0,
            dropped_coincident: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

/// Difference rows of the usable neighbors around an anchor.
struct Neighborhood {
    dx: Vec<Vec<f64>>,
    dy: Vec<f64>,
    h: Vec<f64>,
    dropped: usize,
}

fn collect_neighborhood(
    features: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
    anchor_id: usize,
    neighbor_ids: &[usize],
) -> Result<Neighborhood> {
    let (n, d) = features.dim();
    if targets.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: targets.len(),
        });
    }
    if anchor_id >= n {
        return Err(Error::InvalidArgument(format!("anchor {anchor_id} out of range")));
    }
    let anchor = features.row(anchor_id);
    let y_m = targets[anchor_id];
    if anchor.iter().any(|v| !v.is_finite()) || !y_m.is_finite() {
        return Err(Error::NonFinite {
            row: anchor_id,
            column: 0,
        });
    }
    let mut hood = Neighborhood {
        dx: Vec::with_capacity(neighbor_ids.len()),
        dy: Vec::with_capacity(neighbor_ids.len()),
        h: Vec::with_capacity(neighbor_ids.len()),
        dropped: 0,
    };
    for &i in neighbor_ids {
        if i == anchor_id {
            return Err(Error::InvalidArgument(format!(
                "anchor {anchor_id} listed among its own neighbors"
            )));
        }
        if i >= n {
            return Err(Error::InvalidArgument(format!("neighbor {i} out of range")));
        }
        let row = features.row(i);
        let diff: Vec<f64> = row.iter().zip(anchor.iter()).map(|(a, b)| a - b).collect();
        let dy = targets[i] - y_m;
        if diff.iter().any(|v| !v.is_finite()) || !dy.is_finite() {
            return Err(Error::NonFinite { row: i, column: 0 });
        }
        let h = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        if h == 0.0 {
            hood.dropped += 1;
            continue;
        }
        debug_assert_eq!(diff.len(), d);
        hood.dx.push(diff);
        hood.dy.push(dy);
        hood.h.push(h);
    }
    Ok(hood)
}

fn check_neighbor_count(k_prime: usize, d: usize, order: TaylorOrder) -> Result<()> {
    let min = d * order.neighbors_per_feature();
    if k_prime < min.max(1) {
        return Err(Error::InvalidArgument(format!(
            "{k_prime} gradient neighbors is below the minimum {min} for {d} features"
        )));
    }
    Ok(())
}

/// Fits the local derivative model of an anchor from its neighbors.
///
/// Neighbors that coincide with the anchor carry no slope information and
/// are dropped (counted in `dropped_coincident`). Rank-deficient designs
/// receive the minimum-norm solution.
pub fn fit_local(
    features: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
    anchor_id: usize,
    neighbor_ids: &[usize],
    order: TaylorOrder,
    form: GradientForm,
) -> Result<LocalModel> {
    let d = features.ncols();
    if order == TaylorOrder::Zero {
        let mut flat = LocalModel::flat(anchor_id, d);
        let hood = collect_neighborhood(features, targets, anchor_id, neighbor_ids)?;
        flat.h_max = hood.h.iter().copied().fold(0.0, f64::max);
        flat.dropped_coincident = hood.dropped;
        return Ok(flat);
    }
    check_neighbor_count(neighbor_ids.len(), d, order)?;
    let hood = collect_neighborhood(features, targets, anchor_id, neighbor_ids)?;
    let m = hood.dx.len();
    if m == 0 {
        return Err(Error::Degenerate(format!(
            "every neighbor of anchor {anchor_id} coincides with it"
        )));
    }
    let second = order == TaylorOrder::Second;
    let p = if second { 2 * d } else { d };
    let scale = |r: usize| match form {
        GradientForm::Raw => 1.0,
        GradientForm::Normalized => 1.0 / hood.h[r],
    };
    let a = DMatrix::from_fn(m, p, |r, c| {
        let v = if c < d {
            hood.dx[r][c]
        } else {
            0.5 * hood.dx[r][c - d] * hood.dx[r][c - d]
        };
        v * scale(r)
    });
    let b = DVector::from_fn(m, |r, _| hood.dy[r] * scale(r));

    let sol = lstsq(&a, &b, !second);
    let sigma_min = if second {
        smallest_singular_value(&a.columns(0, d).into_owned())
    } else {
        sol.sigma_min().unwrap_or(0.0)
    };
    let (gamma, hess_diag) = if second {
        (sol.coef[..d].to_vec(), Some(sol.coef[d..].to_vec()))
    } else {
        (sol.coef, None)
    };
    Ok(LocalModel {
        anchor_id,
        gamma,
        hess_diag,
        sigma_min,
        h_max: hood.h.iter().copied().fold(0.0, f64::max),
        residual_norm: sol.residual_norm,
        dropped_coincident: hood.dropped,
    })
}

/// Gradient-only first-order fit in the raw form, skipping the singular
/// value computation. Used in hot loops that need nothing but `gamma`.
pub(crate) fn fit_gradient_fast(
    features: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
    anchor_id: usize,
    neighbor_ids: &[usize],
) -> Result<Vec<f64>> {
    let d = features.ncols();
    let hood = collect_neighborhood(features, targets, anchor_id, neighbor_ids)?;
    let m = hood.dx.len();
    if m == 0 {
        return Ok(vec![0.0; d]);
    }
    let a = DMatrix::from_fn(m, d, |r, c| hood.dx[r][c]);
    let b = DVector::from_column_slice(&hood.dy);
    Ok(lstsq(&a, &b, false).coef)
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// L1-regularized first-order fit: minimizes
/// `||dX g - dY||_2^2 + lambda * ||g||_1` by cyclic coordinate descent.
pub fn fit_local_lasso(
    features: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
    anchor_id: usize,
    neighbor_ids: &[usize],
    lambda: f64,
) -> Result<LocalModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lasso penalty must be finite and non-negative, got {lambda}"
        )));
    }
    let d = features.ncols();
    check_neighbor_count(neighbor_ids.len(), d, TaylorOrder::First)?;
    let hood = collect_neighborhood(features, targets, anchor_id, neighbor_ids)?;
    let m = hood.dx.len();
    if m == 0 {
        return Err(Error::Degenerate(format!(
            "every neighbor of anchor {anchor_id} coincides with it"
        )));
    }
    let col_sq: Vec<f64> = (0..d).map(|j| hood.dx.iter().map(|r| r[j] * r[j]).sum()).collect();
    let mut gamma = vec![0.0; d];
    let mut resid = hood.dy.clone();
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for j in 0..d {
            if col_sq[j] == 0.0 {
                continue;
            }
            let old = gamma[j];
            let rho: f64 = hood
                .dx
                .iter()
                .zip(&resid)
                .map(|(row, r)| row[j] * (r + row[j] * old))
                .sum();
            let new = soft_threshold(rho, lambda / 2.0) / col_sq[j];
            if new != old {
                for (row, r) in hood.dx.iter().zip(resid.iter_mut()) {
                    *r -= row[j] * (new - old);
                }
                gamma[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change < LASSO_TOL {
            break;
        }
    }
    let a = DMatrix::from_fn(m, d, |r, c| hood.dx[r][c]);
    Ok(LocalModel {
        anchor_id,
        gamma,
        hess_diag: None,
        sigma_min: smallest_singular_value(&a),
        h_max: hood.h.iter().copied().fold(0.0, f64::max),
        residual_norm: resid.iter().map(|r| r * r).sum::<f64>().sqrt(),
        dropped_coincident: hood.dropped,
    })
}

/// Taylor estimate `y_m + g . (x - x_m)`, plus
/// `1/2 sum_j H_jj (x_j - x_mj)^2` for second-order models.
pub fn taylor_predict(model: &LocalModel, anchor_x: &[f64], anchor_y: f64, query_x: &[f64]) -> Result<f64> {
    let d = model.dim();
    for len in [anchor_x.len(), query_x.len()] {
        if len != d {
            return Err(Error::DimensionMismatch { expected: d, got: len });
        }
    }
    let mut linear = 0.0;
    for j in 0..d {
        linear += model.gamma[j] * (query_x[j] - anchor_x[j]);
    }
    let mut estimate = anchor_y + linear;
    if let Some(h) = &model.hess_diag {
        let quad: f64 = (0..d).map(|j| h[j] * (query_x[j] - anchor_x[j]).powi(2)).sum();
        estimate += 0.5 * quad;
    }
    Ok(estimate)
}

/// Unit directions from an anchor to its neighbors and the conditioning of
/// the direction matrix: the quantities entering the gradient-error bound.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionGeometry {
    /// `||nu_i||_1` for each usable neighbor.
    pub nu_l1_norms: Vec<f64>,
    /// Smallest singular value of the matrix whose rows are the `nu_i`
    /// (augmented with the second-order columns when `mu = 2`).
    pub sigma_min: f64,
    pub h_max: f64,
}

impl DirectionGeometry {
    /// `sqrt(sum_i ||nu_i||_1^(2 mu)) / sigma_min`; `None` when the design is
    /// rank deficient.
    pub fn difficulty(&self, mu: u32) -> Option<f64> {
        if !(self.sigma_min > 1e-12) {
            return None;
        }
        let s: f64 = self.nu_l1_norms.iter().map(|v| v.powi(2 * mu as i32)).sum();
        Some(s.sqrt() / self.sigma_min)
    }
}

/// Direction geometry of `neighbors` around the point `center`.
/// Neighbors coinciding with `center` are skipped.
pub fn direction_geometry(
    features: ArrayView2<'_, f64>,
    center: &[f64],
    neighbor_ids: &[usize],
    mu: u32,
) -> Result<DirectionGeometry> {
    let d = features.ncols();
    if center.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: center.len(),
        });
    }
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(neighbor_ids.len());
    for &i in neighbor_ids {
        let diff: Vec<f64> = features.row(i).iter().zip(center).map(|(a, b)| a - b).collect();
        let h = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        if h > 0.0 {
            rows.push((diff.into_iter().map(|v| v / h).collect(), h));
        }
    }
    let p = if mu >= 2 { 2 * d } else { d };
    let a = DMatrix::from_fn(rows.len(), p, |r, c| {
        let (nu, h) = &rows[r];
        if c < d {
            nu[c]
        } else {
            0.5 * h * nu[c - d] * nu[c - d]
        }
    });
    Ok(DirectionGeometry {
        nu_l1_norms: rows.iter().map(|(nu, _)| nu.iter().map(|v| v.abs()).sum()).collect(),
        sigma_min: smallest_singular_value(&a),
        h_max: rows.iter().map(|(_, h)| *h).fold(0.0, f64::max),
    })
}
