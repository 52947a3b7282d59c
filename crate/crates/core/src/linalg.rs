//! Small dense least-squares solver.
//!
//! Householder QR with column pivoting handles the full-rank case; when the
//! pivoted diagonal reveals a rank deficit the minimum-norm solution comes
//! from an SVD of the original system instead.

use nalgebra::{DMatrix, DVector, SVD};

/// Result of [`lstsq`].
#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    pub coef: Vec<f64>,
    /// Numerical rank of the design matrix.
    pub rank: usize,
    /// `||A x - b||_2`.
    pub residual_norm: f64,
    /// Singular values in non-increasing order, when requested.
    pub singular_values: Option<Vec<f64>>,
}

impl LstsqSolution {
    pub fn sigma_min(&self) -> Option<f64> {
        self.singular_values.as_ref().map(|s| s.last().copied().unwrap_or(0.0))
    }
}

/// Solves `min ||A x - b||_2`, returning the minimum-norm minimizer when `A`
/// is rank deficient. `with_singular_values` additionally reports the
/// singular values of `A` (zero-padded when `A` has fewer rows than columns).
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, with_singular_values: bool) -> LstsqSolution {
    let (m, p) = a.shape();
    assert_eq!(b.len(), m, "right-hand side length must match rows");
    if p == 0 {
        return LstsqSolution {
            coef: Vec::new(),
            rank: 0,
            residual_norm: b.norm(),
            singular_values: with_singular_values.then(Vec::new),
        };
    }

    let qr = PivotedQr::new(a, b);
    let coef;
    let singular_values;
    if qr.rank == p {
        coef = qr.solve_full_rank();
        singular_values = with_singular_values.then(|| {
            let r = qr.r_block();
            sorted_singular_values(SVD::new(r, false, false).singular_values.as_slice(), p)
        });
    } else {
        let svd = SVD::new(a.clone(), true, true);
        let s_max = svd.singular_values.max();
        let tol = (m.max(p) as f64) * f64::EPSILON * s_max;
        coef = match svd.solve(b, tol) {
            Ok(x) => x.as_slice().to_vec(),
            Err(_) => vec![0.0; p],
        };
        singular_values = with_singular_values.then(|| sorted_singular_values(svd.singular_values.as_slice(), p));
    }
    let coef_v = DVector::from_column_slice(&coef);
    let residual_norm = (a * coef_v - b).norm();
    LstsqSolution {
        coef,
        rank: qr.rank,
        residual_norm,
        singular_values,
    }
}

/// Smallest singular value of `a`; zero when `a` has fewer rows than columns.
pub fn smallest_singular_value(a: &DMatrix<f64>) -> f64 {
    let (m, p) = a.shape();
    if p == 0 {
        return 0.0;
    }
    if m < p {
        return 0.0;
    }
    SVD::new(a.clone(), false, false).singular_values.min()
}

fn sorted_singular_values(values: &[f64], p: usize) -> Vec<f64> {
    let mut s: Vec<f64> = values.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s.resize(p, 0.0);
    s
}

struct PivotedQr {
    /// Column-major working copy holding R in its upper triangle.
    r: Vec<f64>,
    m: usize,
    p: usize,
    perm: Vec<usize>,
    qtb: Vec<f64>,
    rank: usize,
}

impl PivotedQr {
    fn new(a: &DMatrix<f64>, b: &DVector<f64>) -> Self {
        let (m, p) = a.shape();
        let mut r: Vec<f64> = a.as_slice().to_vec();
        let mut qtb: Vec<f64> = b.as_slice().to_vec();
        let mut perm: Vec<usize> = (0..p).collect();
        let steps = m.min(p);
        let idx = |i: usize, j: usize| j * m + i;

        for k in 0..steps {
            let mut best = k;
            let mut best_norm = -1.0;
            for j in k..p {
                let norm: f64 = (k..m).map(|i| r[idx(i, j)].powi(2)).sum();
                if norm > best_norm {
                    best_norm = norm;
                    best = j;
                }
            }
            if best != k {
                for i in 0..m {
                    r.swap(idx(i, k), idx(i, best));
                }
                perm.swap(k, best);
            }
            let norm_x = best_norm.sqrt();
            if norm_x == 0.0 {
                break;
            }
            let x0 = r[idx(k, k)];
            let alpha = if x0 >= 0.0 { -norm_x } else { norm_x };
            let mut v: Vec<f64> = (k..m).map(|i| r[idx(i, k)]).collect();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 == 0.0 {
                continue;
            }
            for j in (k + 1)..p {
                let dot: f64 = v.iter().enumerate().map(|(t, vi)| vi * r[idx(k + t, j)]).sum();
                let f = 2.0 * dot / vnorm2;
                for (t, vi) in v.iter().enumerate() {
                    r[idx(k + t, j)] -= f * vi;
                }
            }
            let dot: f64 = v.iter().enumerate().map(|(t, vi)| vi * qtb[k + t]).sum();
            let f = 2.0 * dot / vnorm2;
            for (t, vi) in v.iter().enumerate() {
                qtb[k + t] -= f * vi;
            }
            r[idx(k, k)] = alpha;
            for i in (k + 1)..m {
                r[idx(i, k)] = 0.0;
            }
        }

        let r00 = if steps > 0 { r[idx(0, 0)].abs() } else { 0.0 };
        let tol = (m.max(p) as f64) * f64::EPSILON * r00;
        let rank = if r00 == 0.0 {
            0
        } else {
            (0..steps).take_while(|&k| r[idx(k, k)].abs() > tol).count()
        };
        PivotedQr {
            r,
            m,
            p,
            perm,
            qtb,
            rank,
        }
    }

    fn solve_full_rank(&self) -> Vec<f64> {
        let (m, p) = (self.m, self.p);
        let idx = |i: usize, j: usize| j * m + i;
        let mut z = vec![0.0; p];
        for k in (0..p).rev() {
            let mut acc = self.qtb[k];
            for (j, zj) in z.iter().enumerate().skip(k + 1) {
                acc -= self.r[idx(k, j)] * zj;
            }
            z[k] = acc / self.r[idx(k, k)];
        }
        let mut coef = vec![0.0; p];
        for (k, &col) in self.perm.iter().enumerate() {
            coef[col] = z[k];
        }
        coef
    }

    fn r_block(&self) -> DMatrix<f64> {
        let (m, p) = (self.m, self.p);
        DMatrix::from_fn(p, p, |i, j| if i <= j { self.r[j * m + i] } else { 0.0 })
    }
}
