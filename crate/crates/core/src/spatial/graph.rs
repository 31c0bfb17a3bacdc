use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::{default_resolution, extended_hausdorff, Region};
use crate::error::{Error, Result};

/// Settings for building the neighbour graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialConfig {
    /// Neighbours per site before symmetrization.
    pub k: usize,
    /// Quantile of the extended Hausdorff distance (0.5 = median).
    pub quantile: f64,
    /// Sampling density in points per unit length; `None` uses 200 points
    /// along each source region's bounding-box diagonal.
    pub resolution: Option<f64>,
    /// Propriety jitter relative to the mean diagonal of Q.
    pub jitter_rel: f64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self { k: 10, quantile: 0.5, resolution: None, jitter_rel: 1e-6 }
    }
}

/// Binary symmetric neighbour weights `D`, the ICAR precision
/// `Q = diag(D 1) - D` and the jitter added to Q's diagonal whenever it is
/// used as a Gaussian precision.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpatialGraph {
    pub ids: Vec<String>,
    pub weights: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub jitter: f64,
    /// `log det(Q + jitter I)`, zero-jitter graphs store `-inf`.
    pub log_det: f64,
    pub distances: Option<DMatrix<f64>>,
    pub warnings: Vec<String>,
}

impl SpatialGraph {
    /// Builds the graph from a 0/1 adjacency matrix with an absolute jitter.
    pub fn from_adjacency(ids: Vec<String>, weights: DMatrix<f64>, jitter: f64) -> Result<Self> {
        let n = weights.nrows();
        if weights.ncols() != n || ids.len() != n {
            return Err(Error::Dimension(format!(
                "adjacency is {}x{} for {} ids",
                weights.nrows(),
                weights.ncols(),
                ids.len()
            )));
        }
        if jitter < 0.0 {
            return Err(Error::Argument("jitter must be nonnegative".into()));
        }
        for i in 0..n {
            if weights[(i, i)] != 0.0 {
                return Err(Error::Argument(format!("adjacency has nonzero diagonal at {i}")));
            }
            for j in 0..n {
                if weights[(i, j)] != weights[(j, i)] || weights[(i, j)] < 0.0 {
                    return Err(Error::Argument("adjacency must be symmetric and nonnegative".into()));
                }
            }
        }
        let degree = weights.column_sum();
        let q = DMatrix::from_diagonal(&degree) - &weights;
        let mut warnings = Vec::new();
        let components = count_components(&weights);
        if components > 1 {
            let msg = format!("neighbour graph has {components} connected components");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let mut graph = Self {
            ids,
            weights,
            q,
            jitter,
            log_det: f64::NEG_INFINITY,
            distances: None,
            warnings,
        };
        if jitter > 0.0 {
            graph.log_det = graph
                .precision()
                .cholesky()
                .map(|c| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
                .ok_or_else(|| Error::NotPositiveDefinite("Q + jitter I".into()))?;
        }
        Ok(graph)
    }

    /// Nearest-neighbour graph from a precomputed distance matrix. Ties go to
    /// the smaller site index.
    pub fn from_distances(ids: Vec<String>, distances: DMatrix<f64>, k: usize, jitter_rel: f64) -> Result<Self> {
        let n = distances.nrows();
        if k == 0 || n <= k {
            return Err(Error::Argument(format!("need n > k >= 1, got n = {n}, k = {k}")));
        }
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| distances[(i, a)].total_cmp(&distances[(i, b)]).then(a.cmp(&b)));
            for &j in others.iter().take(k) {
                w[(i, j)] = 1.0;
                w[(j, i)] = 1.0;
            }
        }
        let mean_degree = w.column_sum().mean();
        let mut graph = Self::from_adjacency(ids, w, jitter_rel * mean_degree)?;
        graph.distances = Some(distances);
        Ok(graph)
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    /// `Q + jitter I`.
    pub fn precision(&self) -> DMatrix<f64> {
        let n = self.n();
        &self.q + DMatrix::identity(n, n) * self.jitter
    }
}

fn count_components(w: &DMatrix<f64>) -> usize {
    let n = w.nrows();
    let mut seen = vec![false; n];
    let mut components = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if w[(i, j)] != 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    components
}

/// All pairwise extended Hausdorff distances, computed in parallel.
pub fn pairwise_distances(regions: &[Region], quantile: f64, resolution: Option<f64>) -> Result<DMatrix<f64>> {
    let n = regions.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let res = resolution.unwrap_or_else(|| {
                default_resolution(&regions[i]).max(default_resolution(&regions[j]))
            });
            extended_hausdorff(&regions[i], &regions[j], quantile, res)
        })
        .collect::<Result<_>>()?;
    let mut d = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(values) {
        d[(i, j)] = v;
        d[(j, i)] = v;
    }
    Ok(d)
}

/// Symmetrized k-nearest-neighbour graph under the extended Hausdorff
/// distance.
pub fn knn_weights(regions: &[Region], config: &SpatialConfig) -> Result<SpatialGraph> {
    let n = regions.len();
    if config.k == 0 || n <= config.k {
        return Err(Error::Argument(format!("need n > k >= 1, got n = {n}, k = {}", config.k)));
    }
    let d = pairwise_distances(regions, config.quantile, config.resolution)?;
    let ids = regions.iter().map(|r| r.id.clone()).collect();
    SpatialGraph::from_distances(ids, d, config.k, config.jitter_rel)
}

/// `v' (Q + jitter I) v`.
pub fn car_quadform(graph: &SpatialGraph, v: &DVector<f64>) -> Result<f64> {
    let n = graph.n();
    if v.len() != n {
        return Err(Error::Dimension(format!("vector of length {} for {n} sites", v.len())));
    }
    // sum_{i~j} (v_i - v_j)^2 over undirected edges, plus the jitter term
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = graph.weights[(i, j)];
            if w != 0.0 {
                total += w * (v[i] - v[j]).powi(2);
            }
        }
    }
    Ok(total + graph.jitter * v.norm_squared())
}
