//! Exact nearest-neighbor retrieval under a diagonally weighted squared
//! Euclidean metric.
//!
//! The metric between `a` and `b` is `sum_j (w_j a_j - w_j b_j)^2`: weights
//! are applied to coordinates once, at build time, and a plain squared
//! Euclidean distance is used afterwards. The diagonal of the metric matrix
//! is therefore `w_j^2`.
//!
//! Ties at equal distance are broken by the lower training-row id, so results
//! are a deterministic function of the inputs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 16;
const MAX_TREE_DIM: usize = 20;

/// Per-feature non-negative multipliers defining the weighted metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScalingWeights(Vec<f64>);

impl ScalingWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("weights must not be empty".into()));
        }
        if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "weights must be finite and non-negative, found {bad}"
            )));
        }
        Ok(ScalingWeights(weights))
    }

    /// All-ones weights: the plain squared Euclidean metric.
    pub fn identity(dim: usize) -> Self {
        ScalingWeights(vec![1.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|&w| w == 1.0)
    }

    /// Squared weighted distance between two points in raw coordinates.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| {
                let diff = w * x - w * y;
                diff * diff
            })
            .sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// The `k` nearest rows to a query, nearest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub indices: Vec<usize>,
    /// Squared weighted distances, non-decreasing.
    pub distances: Vec<f64>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Euclidean (non-squared) weighted distance of the farthest neighbor.
    pub fn radius(&self) -> f64 {
        self.distances.last().copied().unwrap_or(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    id: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct KdTree {
    nodes: Vec<Node>,
    /// Bounding boxes, `2 * dim` values per node: mins then maxs.
    boxes: Vec<f64>,
    perm: Vec<usize>,
}

/// Exact k-nearest-neighbor index over weighted rows.
///
/// Uses a kd-tree for up to 20 dimensions and a linear scan beyond that.
/// Immutable once built; concurrent queries are safe.
#[derive(Debug, Clone)]
pub struct Index {
    points: Vec<f64>,
    n: usize,
    dim: usize,
    weights: ScalingWeights,
    tree: Option<KdTree>,
}

impl Index {
    pub fn build(features: ArrayView2<'_, f64>, weights: &ScalingWeights) -> Result<Index> {
        let (n, dim) = features.dim();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if weights.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: weights.len(),
            });
        }
        let w = weights.as_slice();
        let mut points = Vec::with_capacity(n * dim);
        for row in features.outer_iter() {
            points.extend(row.iter().zip(w).map(|(x, w)| w * x));
        }
        let tree = (dim <= MAX_TREE_DIM).then(|| KdTree::build(&points, n, dim));
        Ok(Index {
            points,
            n,
            dim,
            weights: weights.clone(),
            tree,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &ScalingWeights {
        &self.weights
    }

    /// The `k` nearest rows to `x` (raw coordinates), skipping `exclude`.
    pub fn query(&self, x: &[f64], k: usize, exclude: &[usize]) -> Result<NeighborSet> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut excluded: Vec<usize> = exclude.iter().copied().filter(|&i| i < self.n).collect();
        excluded.sort_unstable();
        excluded.dedup();
        let available = self.n - excluded.len();
        if k == 0 || k > available {
            return Err(Error::InvalidArgument(format!("k = {k} outside [1, {available}]")));
        }
        let q: Vec<f64> = x.iter().zip(self.weights.as_slice()).map(|(x, w)| w * x).collect();

        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        match &self.tree {
            Some(tree) => tree.search(self, &q, k, &excluded, &mut heap),
            None => {
                for id in 0..self.n {
                    if excluded.binary_search(&id).is_err() {
                        let cand = Candidate {
                            dist: self.sq_dist(&q, id),
                            id,
                        };
                        push_candidate(&mut heap, cand, k);
                    }
                }
            }
        }
        let sorted = heap.into_sorted_vec();
        Ok(NeighborSet {
            indices: sorted.iter().map(|c| c.id).collect(),
            distances: sorted.iter().map(|c| c.dist).collect(),
        })
    }

    /// Squared weighted distance between a raw-coordinate point and row `id`.
    pub fn distance_to(&self, x: &[f64], id: usize) -> f64 {
        let q: Vec<f64> = x.iter().zip(self.weights.as_slice()).map(|(x, w)| w * x).collect();
        self.sq_dist(&q, id)
    }

    /// Row `id` in weighted coordinates.
    #[inline]
    pub fn row(&self, id: usize) -> &[f64] {
        &self.points[id * self.dim..(id + 1) * self.dim]
    }

    #[inline]
    fn sq_dist(&self, q: &[f64], id: usize) -> f64 {
        self.row(id)
            .iter()
            .zip(q)
            .map(|(a, b)| {
                let d = b - a;
                d * d
            })
            .sum()
    }
}

fn push_candidate(heap: &mut BinaryHeap<Candidate>, cand: Candidate, k: usize) {
    if heap.len() < k {
        heap.push(cand);
    } else if let Some(worst) = heap.peek() {
        if cand < *worst {
            heap.pop();
            heap.push(cand);
        }
    }
}

impl KdTree {
    fn build(points: &[f64], n: usize, dim: usize) -> KdTree {
        let mut tree = KdTree {
            nodes: Vec::new(),
            boxes: Vec::new(),
            perm: (0..n).collect(),
        };
        tree.build_node(points, dim, 0, n);
        tree
    }

    fn build_node(&mut self, points: &[f64], dim: usize, start: usize, end: usize) -> usize {
        let node_id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        let mut mins = vec![f64::INFINITY; dim];
        let mut maxs = vec![f64::NEG_INFINITY; dim];
        for &id in &self.perm[start..end] {
            for j in 0..dim {
                let v = points[id * dim + j];
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        self.boxes.extend_from_slice(&mins);
        self.boxes.extend_from_slice(&maxs);

        if end - start <= LEAF_SIZE {
            return node_id;
        }
        let (split_dim, spread) = (0..dim)
            .map(|j| (j, maxs[j] - mins[j]))
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .expect("dim >= 1");
        if spread <= 0.0 {
            return node_id;
        }
        let mid = start + (end - start) / 2;
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a * dim + split_dim].total_cmp(&points[b * dim + split_dim])
        });
        let left = self.build_node(points, dim, start, mid);
        let right = self.build_node(points, dim, mid, end);
        self.nodes[node_id] = Node::Split { left, right };
        node_id
    }

    fn box_distance(&self, node: usize, q: &[f64]) -> f64 {
        let dim = q.len();
        let base = node * 2 * dim;
        let mins = &self.boxes[base..base + dim];
        let maxs = &self.boxes[base + dim..base + 2 * dim];
        let mut acc = 0.0;
        for j in 0..dim {
            let d = if q[j] < mins[j] {
                mins[j] - q[j]
            } else if q[j] > maxs[j] {
                q[j] - maxs[j]
            } else {
                0.0
            };
            acc += d * d;
        }
        acc
    }

    fn search(&self, index: &Index, q: &[f64], k: usize, excluded: &[usize], heap: &mut BinaryHeap<Candidate>) {
        let mut stack: Vec<(usize, f64)> = vec![(0, self.box_distance(0, q))];
        while let Some((node, bound)) = stack.pop() {
            if heap.len() == k {
                // Equal bounds can still hold a lower id at the same distance.
                if bound > heap.peek().expect("non-empty").dist {
                    continue;
                }
            }
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &id in &self.perm[start..end] {
                        if excluded.binary_search(&id).is_ok() {
                            continue;
                        }
                        let cand = Candidate {
                            dist: index.sq_dist(q, id),
                            id,
                        };
                        push_candidate(heap, cand, k);
                    }
                }
                Node::Split { left, right } => {
                    let dl = self.box_distance(left, q);
                    let dr = self.box_distance(right, q);
                    // Push the farther child first so the nearer one is visited first.
                    if dl <= dr {
                        stack.push((right, dr));
                        stack.push((left, dl));
                    } else {
                        stack.push((left, dl));
                        stack.push((right, dr));
                    }
                }
            }
        }
    }
}
