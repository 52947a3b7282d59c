//! Error-bound calculators: the least-squares gradient-error bound, the
//! sample-size and neighbor-count conditions of the point-wise guarantee,
//! and per-point error tolerances for fitted models.
//!
//! Logarithms are natural. Sample counts can be astronomically large, so
//! they are carried in log space and only materialized when they fit exactly
//! in an `f64` mantissa.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{seeded_rng, SeededRng};
use crate::error::{Error, Result};
use crate::gradient::{direction_geometry, TaylorOrder};
use crate::predictor::DnnrModel;

const EXACT_LIMIT_LN: f64 = 36.7368005696771; // ln(2^53)

/// A non-negative count stored by its natural logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Count {
    pub ln: f64,
}

impl Count {
    /// `ceil(exp(ln_value))`, with the ceiling applied only while the value
    /// is exactly representable.
    pub fn ceil_from_ln(ln_value: f64) -> Count {
        if ln_value < EXACT_LIMIT_LN {
            Count {
                ln: ln_value.exp().ceil().ln(),
            }
        } else {
            Count { ln: ln_value }
        }
    }

    pub fn from_u64(n: u64) -> Count {
        Count { ln: (n as f64).ln() }
    }

    /// The exact count when it is below 2^53.
    pub fn exact(&self) -> Option<u64> {
        (self.ln < EXACT_LIMIT_LN).then(|| self.ln.exp().round() as u64)
    }

    /// `self <= other`, exactly when both counts are exact.
    pub fn at_most(&self, other: &Count) -> bool {
        match (self.exact(), other.exact()) {
            (Some(a), Some(b)) => a <= b,
            _ => self.ln <= other.ln,
        }
    }

    pub fn value(&self) -> f64 {
        self.ln.exp()
    }

    pub fn log10(&self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }
}

/// Least-squares gradient-error bound
/// `lipschitz * h^mu / (sigma_min * (mu+1)!) * sqrt(sum ||nu_i||_1^(2 mu))`.
///
/// `sigma_min` must come from the design whose rows are the unit directions
/// `nu_i` (the distance-normalized fit).
pub fn lemma1_bound(sigma_min: f64, h_max: f64, mu: u32, lipschitz: f64, nu_l1_norms: &[f64]) -> Result<f64> {
    if !(sigma_min > 0.0) {
        return Err(Error::Degenerate(format!(
            "smallest singular value {sigma_min} leaves the bound undefined"
        )));
    }
    if !(h_max > 0.0 && lipschitz > 0.0) || mu == 0 {
        return Err(Error::InvalidArgument(
            "h_max and lipschitz must be positive and mu at least 1".into(),
        ));
    }
    if let Some(v) = nu_l1_norms.iter().find(|&&v| !(v >= 1.0 - 1e-12)) {
        return Err(Error::InvalidArgument(format!(
            "direction l1 norm {v} is below 1; directions must be unit vectors"
        )));
    }
    let factorial: f64 = (1..=mu + 1).map(f64::from).product();
    let spread: f64 = nu_l1_norms.iter().map(|v| v.powi(2 * mu as i32)).sum::<f64>().sqrt();
    Ok(lipschitz * h_max.powi(mu as i32) / (sigma_min * factorial) * spread)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub lipschitz: f64,
    pub mu: u32,
    pub delta: f64,
    pub epsilon: f64,
    pub y_range: (f64, f64),
    /// Probability mass of the ball of radius `h*` around the point.
    pub ball_mass: f64,
    /// Gradient-estimation difficulty; see [`estimate_tau`].
    pub tau: f64,
    /// Smallest singular value reported alongside; informational.
    #[serde(default)]
    pub sigma_min: f64,
    /// Neighbor distance at which the tolerances are evaluated; `h*` of the
    /// DNNR guarantee when absent.
    #[serde(default)]
    pub h_max: Option<f64>,
    /// Training-set size for the upper neighbor-count limit; the required
    /// size when absent.
    #[serde(default)]
    pub n_train: Option<u64>,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        let ok = self.lipschitz > 0.0
            && self.mu >= 1
            && self.delta > 0.0
            && self.delta < 1.0
            && self.epsilon > 0.0
            && self.y_range.1 > self.y_range.0
            && self.ball_mass > 0.0
            && self.ball_mass <= 1.0
            && self.tau >= 0.0
            && self.h_max.is_none_or(|h| h > 0.0);
        if !ok {
            return Err(Error::InvalidArgument(format!("bound inputs out of range: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub h_star_dnnr: f64,
    pub h_star_knn: f64,
    /// Sample size needed for the ball to hold enough points.
    pub n_required: Count,
    pub k_min: Count,
    /// Largest admissible neighbor count at `n_train` (or at `n_required`).
    pub k_max: Count,
    /// Smallest sample size for which some admissible `k` exists:
    /// `max(n_required, 2 k_min / ball_mass)`.
    pub n_sufficient: Count,
    pub eps_dnnr: f64,
    pub eps_knn: f64,
    pub tau: f64,
    pub sigma_min: f64,
    pub feasible: bool,
}

/// Sample-size and neighbor-count conditions of the point-wise guarantee.
/// Infeasible combinations are flagged, not rejected.
pub fn theorem1_conditions(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let p = inputs.ball_mass;
    let range = inputs.y_range.1 - inputs.y_range.0;
    let ln_n_required = (8.0 / p).ln() + (2.0 / inputs.delta).ln().ln();
    let ln_k_min = (2.0 * range * range / (inputs.epsilon * inputs.epsilon)).ln() + (4.0 / inputs.delta).ln().ln();
    let n_required = Count::ceil_from_ln(ln_n_required);
    let k_min = Count::ceil_from_ln(ln_k_min);
    let n = inputs.n_train.map(Count::from_u64).unwrap_or(n_required);
    let k_max = match n.exact() {
        Some(n) => Count {
            ln: (0.5 * n as f64 * p).floor().ln(),
        },
        None => Count {
            ln: n.ln + (0.5 * p).ln(),
        },
    };
    let n_sufficient = Count::ceil_from_ln(n_required.ln.max((2.0 / p).ln() + k_min.ln));

    let theta = inputs.lipschitz;
    let h_star_dnnr = (inputs.epsilon / (theta * (1.0 + inputs.tau))).sqrt();
    let h_star_knn = inputs.epsilon / (2.0 * theta);
    let h = inputs.h_max.unwrap_or(h_star_dnnr);
    let (eps_dnnr, eps_knn) = tolerances(h, theta, inputs.tau);
    Ok(BoundReport {
        h_star_dnnr,
        h_star_knn,
        feasible: k_min.at_most(&k_max) && n_required.at_most(&n),
        n_required,
        k_min,
        k_max,
        n_sufficient,
        eps_dnnr,
        eps_knn,
        tau: inputs.tau,
        sigma_min: inputs.sigma_min,
    })
}

/// `(h^2 theta (1 + tau), 2 theta h)`.
pub fn tolerances(h: f64, lipschitz: f64, tau: f64) -> (f64, f64) {
    (h * h * lipschitz * (1.0 + tau), 2.0 * lipschitz * h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauEstimate {
    pub tau: f64,
    pub used: usize,
    /// Points whose direction design was rank deficient.
    pub excluded: usize,
}

fn taylor_mu(model: &DnnrModel) -> u32 {
    match model.config().order {
        TaylorOrder::Second => 2,
        _ => 1,
    }
}

fn weighted_features(model: &DnnrModel) -> Array2<f64> {
    let w = model.weights().as_slice();
    let mut x = model.data().features().to_owned();
    for mut row in x.rows_mut() {
        for (v, w) in row.iter_mut().zip(w) {
            *v *= w;
        }
    }
    x
}

fn weighted_point(model: &DnnrModel, x: &[f64]) -> Vec<f64> {
    x.iter().zip(model.weights().as_slice()).map(|(a, w)| a * w).collect()
}

/// Difficulty `sqrt(sum ||nu_i||_1^(2 mu)) / sigma_1` of the `k'`-neighborhood
/// around a point, in the model's metric. `None` if rank deficient.
fn neighborhood_difficulty(
    model: &DnnrModel,
    wx: &Array2<f64>,
    center: &[f64],
    neighbors: &[usize],
) -> Result<Option<f64>> {
    let geo = direction_geometry(wx.view(), center, neighbors, taylor_mu(model))?;
    Ok(geo.difficulty(taylor_mu(model)))
}

/// Mean neighborhood difficulty over `sample_points`, using each point's
/// `k'` nearest training rows.
pub fn estimate_tau(model: &DnnrModel, sample_points: &[Vec<f64>]) -> Result<TauEstimate> {
    let wx = weighted_features(model);
    let kp = model.config().k_prime;
    let values: Vec<Option<f64>> = sample_points
        .par_iter()
        .map(|x| {
            let nb = model.index().query(x, kp, &[])?;
            neighborhood_difficulty(model, &wx, &weighted_point(model, x), &nb.indices)
        })
        .collect::<Result<_>>()?;
    let used: Vec<f64> = values.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(Error::Degenerate(
            "every sample point has a rank-deficient neighborhood".into(),
        ));
    }
    Ok(TauEstimate {
        tau: used.iter().sum::<f64>() / used.len() as f64,
        used: used.len(),
        excluded: values.len() - used.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointTolerance {
    /// Distance to the query's `k`-th nearest anchor.
    pub h: f64,
    /// Mean difficulty over the query's anchors.
    pub tau_local: f64,
    pub eps_dnnr: f64,
    pub eps_knn: f64,
    /// Anchors skipped for rank-deficient neighborhoods.
    pub excluded_anchors: usize,
}

/// Per-point tolerances for test queries. An anchor's difficulty comes from
/// its own `k'` gradient neighborhood.
pub fn pointwise_tolerances(
    model: &DnnrModel,
    test_points: &[Vec<f64>],
    lipschitz: f64,
) -> Result<Vec<PointTolerance>> {
    if !(lipschitz > 0.0) {
        return Err(Error::InvalidArgument("lipschitz must be positive".into()));
    }
    let wx = weighted_features(model);
    let n = model.data().n_samples();
    let anchor_tau: Vec<std::sync::OnceLock<Option<f64>>> = (0..n).map(|_| std::sync::OnceLock::new()).collect();
    let tau_of = |m: usize| -> Result<Option<f64>> {
        if let Some(v) = anchor_tau[m].get() {
            return Ok(*v);
        }
        let nb = model.gradient_neighbors(m)?;
        let v = neighborhood_difficulty(model, &wx, model.index().row(m), &nb.indices)?;
        Ok(*anchor_tau[m].get_or_init(|| v))
    };
    let out: Vec<PointTolerance> = test_points
        .par_iter()
        .map(|x| {
            let anchors = model.anchors(x)?;
            let mut taus = Vec::with_capacity(anchors.len());
            for &m in &anchors.indices {
                if let Some(t) = tau_of(m)? {
                    taus.push(t);
                }
            }
            let h = anchors.radius();
            let tau_local = if taus.is_empty() {
                f64::NAN
            } else {
                taus.iter().sum::<f64>() / taus.len() as f64
            };
            let (eps_dnnr, eps_knn) = tolerances(h, lipschitz, tau_local);
            Ok(PointTolerance {
                h,
                tau_local,
                eps_dnnr,
                eps_knn,
                excluded_anchors: anchors.len() - taus.len(),
            })
        })
        .collect::<Result<_>>()?;
    if !out.is_empty() && out.iter().all(|p| p.tau_local.is_nan()) {
        return Err(Error::Degenerate(
            "every anchor has a rank-deficient neighborhood".into(),
        ));
    }
    Ok(out)
}

/// Writes `point_id,h,tau_local,eps_dnnr,eps_knn,abs_error` rows.
pub fn write_tolerance_csv(path: &Path, points: &[PointTolerance], abs_errors: &[f64]) -> Result<()> {
    if points.len() != abs_errors.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            got: abs_errors.len(),
        });
    }
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "point_id,h,tau_local,eps_dnnr,eps_knn,abs_error").map_err(io)?;
    for (i, (p, e)) in points.iter().zip(abs_errors).enumerate() {
        writeln!(
            f,
            "{i},{:?},{:?},{:?},{:?},{:?}",
            p.h, p.tau_local, p.eps_dnnr, p.eps_knn, e
        )
        .map_err(io)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallMass {
    pub mass: f64,
    pub std_error: f64,
    pub hits: usize,
    pub samples: usize,
}

/// Monte-Carlo fraction of draws from `sampler` that land within `radius`
/// (Euclidean) of `center`.
pub fn ball_mass_estimate<F>(mut sampler: F, center: &[f64], radius: f64, n_mc: usize, seed: u64) -> Result<BallMass>
where
    F: FnMut(&mut SeededRng) -> Vec<f64>,
{
    if n_mc < 1000 {
        return Err(Error::InvalidArgument(format!("n_mc = {n_mc} is below 1000")));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    let mut rng = seeded_rng(seed);
    let r2 = radius * radius;
    let mut hits = 0usize;
    for _ in 0..n_mc {
        let x = sampler(&mut rng);
        if x.len() != center.len() {
            return Err(Error::DimensionMismatch {
                expected: center.len(),
                got: x.len(),
            });
        }
        let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 <= r2 {
            hits += 1;
        }
    }
    if hits == 0 {
        log::warn!("no Monte-Carlo draw fell inside the ball; the sample-size condition is infeasible");
    }
    let p = hits as f64 / n_mc as f64;
    Ok(BallMass {
        mass: p,
        std_error: (p * (1.0 - p) / n_mc as f64).sqrt(),
        hits,
        samples: n_mc,
    })
}

/// `ln` of the volume of the unit ball in `d` dimensions.
pub fn ln_unit_ball_volume(d: usize) -> f64 {
    // ln Gamma(d/2 + 1) by the recursion Gamma(z + 1) = z Gamma(z).
    let even = d.is_multiple_of(2);
    let mut ln_gamma = if even { 0.0 } else { 0.5 * PI.ln() };
    let mut z = if even { 1.0 } else { 0.5 };
    while z < d as f64 / 2.0 + 1.0 - 1e-9 {
        ln_gamma += z.ln();
        z += 1.0;
    }
    0.5 * d as f64 * PI.ln() - ln_gamma
}

/// Mass of a ball under the uniform distribution on `[0, 1]^d`, estimated by
/// sampling uniformly inside the ball and counting the fraction that falls
/// in the cube. Works for radii far too small for plain Monte-Carlo.
pub fn ball_mass_uniform_cube(center: &[f64], radius: f64, n_mc: usize, seed: u64) -> Result<BallMass> {
    if n_mc < 1000 {
        return Err(Error::InvalidArgument(format!("n_mc = {n_mc} is below 1000")));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    let d = center.len();
    let mut rng = seeded_rng(seed);
    let mut inside = 0usize;
    for _ in 0..n_mc {
        let dir: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
        if dir
            .iter()
            .zip(center)
            .all(|(u, c)| (0.0..=1.0).contains(&(c + r * u / norm)))
        {
            inside += 1;
        }
    }
    let volume = (ln_unit_ball_volume(d) + d as f64 * radius.ln()).exp();
    let f = inside as f64 / n_mc as f64;
    Ok(BallMass {
        mass: volume * f,
        std_error: volume * (f * (1.0 - f) / n_mc as f64).sqrt(),
        hits: inside,
        samples: n_mc,
    })
}
