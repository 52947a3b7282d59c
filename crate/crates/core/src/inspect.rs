//! Feature relevance and neighborhood inspection for fitted DNNR models.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::quantile;
use crate::predictor::{DnnrModel, PredictionTrace};

/// Pooled relevance values `xi` per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceSummary {
    pub per_dimension: Vec<Vec<f64>>,
    /// Dimensions ordered by decreasing median relevance.
    pub dimension_ranks: Vec<usize>,
}

impl RelevanceSummary {
    pub fn from_values(per_dimension: Vec<Vec<f64>>) -> Self {
        let medians: Vec<f64> = per_dimension.iter().map(|v| quantile(v, 0.5)).collect();
        let mut ranks: Vec<usize> = (0..per_dimension.len()).collect();
        ranks.sort_by(|&a, &b| medians[b].total_cmp(&medians[a]).then(a.cmp(&b)));
        RelevanceSummary {
            per_dimension,
            dimension_ranks: ranks,
        }
    }

    pub fn medians(&self) -> Vec<f64> {
        self.per_dimension.iter().map(|v| quantile(v, 0.5)).collect()
    }

    /// Writes `dimension,count,median,p25,p75` rows, one per dimension.
    pub fn write_csv(&self, path: &Path, column_names: &[String]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv_to(std::io::BufWriter::new(file), column_names)
            .map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn write_csv_to<W: Write>(&self, mut out: W, column_names: &[String]) -> std::io::Result<()> {
        writeln!(out, "dimension,count,median,p25,p75")?;
        for (j, v) in self.per_dimension.iter().enumerate() {
            let name = column_names.get(j).cloned().unwrap_or_else(|| j.to_string());
            writeln!(
                out,
                "{name},{},{:?},{:?},{:?}",
                v.len(),
                quantile(v, 0.5),
                quantile(v, 0.25),
                quantile(v, 0.75)
            )?;
        }
        out.flush()
    }
}

/// One relevance vector per (query, anchor) pair, pooled per dimension.
pub fn collect_relevance(model: &DnnrModel, queries: &[Vec<f64>]) -> Result<RelevanceSummary> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no queries to collect relevance from".into()));
    }
    let traces: Vec<PredictionTrace> = queries
        .par_iter()
        .map(|q| model.predict_traced(q))
        .collect::<Result<_>>()?;
    let d = model.data().n_features();
    let mut per_dimension = vec![Vec::with_capacity(traces.len() * model.config().k); d];
    for t in &traces {
        for xi in &t.per_neighbor_relevance {
            for (j, v) in xi.iter().enumerate() {
                per_dimension[j].push(*v);
            }
        }
    }
    Ok(RelevanceSummary::from_values(per_dimension))
}

fn check_summary(data: &Dataset, summary: &RelevanceSummary, count: usize, what: &str) -> Result<()> {
    let d = data.n_features();
    if summary.dimension_ranks.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: summary.dimension_ranks.len(),
        });
    }
    if count == 0 || count > d {
        return Err(Error::InvalidArgument(format!("{what} = {count} outside [1, {d}]")));
    }
    Ok(())
}

/// Keeps the `keep` most relevant columns, in their original order.
pub fn select_variables(data: &Dataset, summary: &RelevanceSummary, keep: usize) -> Result<Dataset> {
    check_summary(data, summary, keep, "keep")?;
    let mut cols = summary.dimension_ranks[..keep].to_vec();
    cols.sort_unstable();
    data.select_columns(&cols)
}

/// Removes the `drop` most relevant columns.
pub fn drop_variables(data: &Dataset, summary: &RelevanceSummary, drop: usize) -> Result<Dataset> {
    check_summary(data, summary, drop, "drop")?;
    if drop == data.n_features() {
        return Err(Error::InvalidArgument("cannot drop every column".into()));
    }
    let mut cols = summary.dimension_ranks[drop..].to_vec();
    cols.sort_unstable();
    data.select_columns(&cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub id: usize,
    /// Anchor coordinates projected to the chosen dimensions.
    pub coords: [f64; 2],
    pub estimate: f64,
    pub gamma: Vec<f64>,
    /// Gradient-fit neighbors projected to the chosen dimensions.
    pub gradient_neighbors: Vec<[f64; 2]>,
    /// `estimate - truth` when the truth is known.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub dims: [usize; 2],
    pub query: Vec<f64>,
    pub query_coords: [f64; 2],
    pub anchors: Vec<AnchorRecord>,
    pub raw_mean: f64,
    pub clipped: f64,
    pub truth: Option<f64>,
    /// `clipped - truth` when the truth is known.
    pub error: Option<f64>,
}

/// Builds the export records for `traces`; `truths`, when given, holds the
/// true target of each traced query.
pub fn trace_records(
    model: &DnnrModel,
    traces: &[PredictionTrace],
    dims: (usize, usize),
    truths: Option<&[f64]>,
) -> Result<Vec<TraceRecord>> {
    let d = model.data().n_features();
    if dims.0 >= d || dims.1 >= d {
        return Err(Error::InvalidArgument(format!(
            "dimensions ({}, {}) outside [0, {d})",
            dims.0, dims.1
        )));
    }
    if let Some(t) = truths {
        if t.len() != traces.len() {
            return Err(Error::DimensionMismatch {
                expected: traces.len(),
                got: t.len(),
            });
        }
    }
    let x = model.data().features();
    let project = |row: usize| [x[[row, dims.0]], x[[row, dims.1]]];
    traces
        .iter()
        .enumerate()
        .map(|(q, trace)| {
            let truth = truths.map(|t| t[q]);
            let anchors = trace
                .neighbor_ids
                .iter()
                .zip(&trace.per_neighbor_estimates)
                .map(|(&m, &estimate)| {
                    let local = model.local_model(m)?;
                    let nb = model.gradient_neighbors(m)?;
                    Ok(AnchorRecord {
                        id: m,
                        coords: project(m),
                        estimate,
                        gamma: local.gamma.clone(),
                        gradient_neighbors: nb.indices.iter().map(|&i| project(i)).collect(),
                        error: truth.map(|t| estimate - t),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TraceRecord {
                dims: [dims.0, dims.1],
                query_coords: [trace.query[dims.0], trace.query[dims.1]],
                query: trace.query.clone(),
                anchors,
                raw_mean: trace.raw_mean,
                clipped: trace.clipped,
                truth,
                error: truth.map(|t| trace.clipped - t),
            })
        })
        .collect()
}

/// Writes the trace records as one JSON array.
pub fn export_traces(
    model: &DnnrModel,
    traces: &[PredictionTrace],
    dims: (usize, usize),
    truths: Option<&[f64]>,
    path: &Path,
) -> Result<()> {
    let records = trace_records(model, traces, dims, truths)?;
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &records)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::seeded_rng;
    use crate::nnindex::ScalingWeights;
    use crate::predictor::{fit_dnnr, DnnrConfig};
    use ndarray::{Array1, Array2, Axis};
    use rand::Rng;

    fn five_x0(seed: u64) -> Dataset {
        let mut rng = seeded_rng(seed);
        let x = Array2::from_shape_fn((300, 2), |_| rng.random::<f64>());
        let y = x.map_axis(Axis(1), |r| 5.0 * r[0]);
        Dataset::new(x, y, None).unwrap()
    }

    fn queries(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded_rng(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
    }

    #[test]
    fn ranks_informative_dimension_first() {
        let data = five_x0(1);
        let model = fit_dnnr(&data, &DnnrConfig::new(3, 8), &ScalingWeights::identity(2)).unwrap();
        let s = collect_relevance(&model, &queries(50, 2, 2)).unwrap();
        assert_eq!(s.dimension_ranks, vec![0, 1]);
        assert_eq!(s.per_dimension[0].len(), 150);
        let one = select_variables(&data, &s, 1).unwrap();
        assert_eq!(one.column_labels(), vec!["x0".to_string()]);
        let all = select_variables(&data, &s, 2).unwrap();
        assert_eq!(all.features(), data.features());
        assert!(select_variables(&data, &s, 0).is_err());
        assert!(select_variables(&data, &s, 3).is_err());
        assert!(collect_relevance(&model, &[]).is_err());
    }

    #[test]
    fn constant_target_has_zero_relevance() {
        let mut rng = seeded_rng(5);
        let x = Array2::from_shape_fn((40, 3), |_| rng.random::<f64>());
        let data = Dataset::new(x, Array1::from_elem(40, 1.0), None).unwrap();
        let model = fit_dnnr(&data, &DnnrConfig::new(3, 5), &ScalingWeights::identity(3)).unwrap();
        let s = collect_relevance(&model, &queries(10, 3, 6)).unwrap();
        assert!(s.per_dimension.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn export_cardinality_and_round_trip() {
        let data = five_x0(3);
        let model = fit_dnnr(&data, &DnnrConfig::new(3, 8), &ScalingWeights::identity(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.json");
        export_traces(&model, &[], (0, 1), None, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().trim(), "[]");

        let traces: Vec<_> = queries(4, 2, 7)
            .iter()
            .map(|q| model.predict_traced(q).unwrap())
            .collect();
        let truths: Vec<f64> = traces.iter().map(|t| 5.0 * t.query[0]).collect();
        export_traces(&model, &traces, (0, 1), Some(&truths), &path).unwrap();
        let parsed: Vec<TraceRecord> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(parsed, trace_records(&model, &traces, (0, 1), Some(&truths)).unwrap());
        for rec in &parsed {
            assert_eq!(rec.anchors.len(), 3);
            assert_eq!(rec.anchors[0].gradient_neighbors.len(), 8);
            let mean = rec.anchors.iter().map(|a| a.estimate).sum::<f64>() / 3.0;
            assert!((mean - rec.raw_mean).abs() < 1e-12);
        }
        assert!(export_traces(&model, &traces, (0, 2), None, &path).is_err());
    }
}
