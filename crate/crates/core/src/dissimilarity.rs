//! Fused geodesic dissimilarities between training snapshots.
//!
//! Local dissimilarities come from angle-delay profiles, are tightened by
//! timestamp differences (a UE cannot have moved far in a short time) and
//! are then completed into geodesic distances over a k-nearest-neighbour
//! graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::AngleDelayProfile;

/// Largest supported matrix side.
pub const MAX_POINTS: usize = 1 << 15;

/// Dense symmetric `L x L` matrix of pseudo-distances, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    n: usize,
    data: Vec<f32>,
}

impl DissimilarityMatrix {
    pub fn zeros(n: usize) -> Result<Self> {
        if n > MAX_POINTS {
            return Err(Error::InvalidConfig(format!(
                "{n} points exceed the {MAX_POINTS} limit"
            )));
        }
        Ok(Self {
            n,
            data: vec![0.0; n * n],
        })
    }

    /// Build from a full row-major matrix. Must be symmetric with zero
    /// diagonal and nonnegative finite entries.
    pub fn from_full(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {n}x{n} matrix",
                data.len()
            )));
        }
        let mut m = Self::zeros(n)?;
        for i in 0..n {
            for j in 0..n {
                let v = data[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidConfig(format!("entry ({i},{j}) = {v}")));
                }
                if v != data[j * n + i] || (i == j && v != 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "matrix is not symmetric with zero diagonal at ({i},{j})"
                    )));
                }
                m.data[i * n + j] = v as f32;
            }
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j] as f64
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Set `(i, j)` and `(j, i)`.
    pub fn set_symmetric(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v as f32;
        self.data[j * self.n + i] = v as f32;
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&v| (v as f64 * s) as f32).collect(),
        }
    }

    /// Off-diagonal entries `(i < j)`, row-major.
    pub fn upper_triangle(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| self.get(i, j)))
    }

    pub fn median_off_diagonal(&self) -> f64 {
        let mut v: Vec<f64> = self.upper_triangle().collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        if v.len() % 2 == 1 {
            v[mid]
        } else {
            0.5 * (v[mid - 1] + v[mid])
        }
    }
}

/// `(1/B) sum_b (1 - <a_b, b_b>)` over unit-norm per-array profiles.
pub fn adp_dissimilarity(a: &AngleDelayProfile, b: &AngleDelayProfile) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "profiles have shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let arrays = a.shape().0;
    if arrays == 0 {
        return Ok(0.0);
    }
    let sum: f64 = (0..arrays)
        .map(|k| {
            let ip: f64 = a.array(k).iter().zip(b.array(k)).map(|(x, y)| x * y).sum();
            1.0 - ip
        })
        .sum();
    Ok((sum / arrays as f64).clamp(0.0, 2.0))
}

/// Tighten a profile dissimilarity with the elapsed time between snapshots.
pub fn fuse_time(d_adp: f64, dt: f64, alpha: f64, t_max: f64) -> f64 {
    if dt <= t_max {
        d_adp.min(alpha * dt)
    } else {
        d_adp
    }
}

/// Least-squares scale `alpha` minimizing `sum (d - alpha dt)^2` over pairs
/// with `0 < dt <= t_max`.
pub fn calibrate_alpha(d_adp: &DissimilarityMatrix, times: &[f64], t_max: f64) -> Result<f64> {
    if times.len() != d_adp.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} timestamps for {} points",
            times.len(),
            d_adp.len()
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..times.len() {
        for j in i + 1..times.len() {
            let dt = (times[j] - times[i]).abs();
            if dt > 0.0 && dt <= t_max {
                num += d_adp.get(i, j) * dt;
                den += dt * dt;
            }
        }
    }
    if den == 0.0 {
        return Err(Error::InsufficientData(format!(
            "no snapshot pairs within {t_max} s to calibrate the time scale"
        )));
    }
    Ok(num / den)
}

/// Pairwise profile dissimilarities over all snapshots.
pub fn adp_matrix(adps: &[AngleDelayProfile]) -> Result<DissimilarityMatrix> {
    let n = adps.len();
    let mut out = DissimilarityMatrix::zeros(n)?;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| adp_dissimilarity(&adps[i], &adps[j]))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            out.set_symmetric(i, i + 1 + k, v);
        }
    }
    Ok(out)
}

/// Apply [`fuse_time`] to every pair.
pub fn fuse_matrix(
    d_adp: &DissimilarityMatrix,
    times: &[f64],
    alpha: f64,
    t_max: f64,
) -> DissimilarityMatrix {
    let mut out = d_adp.clone();
    for i in 0..d_adp.len() {
        for j in i + 1..d_adp.len() {
            let dt = (times[j] - times[i]).abs();
            out.set_symmetric(i, j, fuse_time(d_adp.get(i, j), dt, alpha, t_max));
        }
    }
    out
}

/// Adjacency of the undirected union of every node's `k` smallest edges.
/// Ties are broken by neighbour index.
pub fn knn_graph(d: &DissimilarityMatrix, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = d.len();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let key = |j: &usize| (d.get(i, *j), *j);
        if others.len() > k {
            others.select_nth_unstable_by(k - 1, |a, b| {
                key(a).partial_cmp(&key(b)).unwrap_or(Ordering::Equal)
            });
            others.truncate(k);
        }
        for j in others {
            adj[i].push((j, d.get(i, j)));
            adj[j].push((i, d.get(i, j)));
        }
    }
    for list in &mut adj {
        list.sort_by_key(|&(j, _)| j);
        list.dedup_by_key(|&mut (j, _)| j);
    }
    adj
}

fn components(adj: &[Vec<(usize, f64)>]) -> Vec<usize> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut sizes = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut stack = vec![s];
        let mut size = 0;
        while let Some(u) = stack.pop() {
            size += 1;
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        sizes.push(size);
    }
    sizes
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    // Min-heap on distance, then index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapItem(0.0, source));
    while let Some(HeapItem(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(HeapItem(nd, v));
            }
        }
    }
    dist
}

/// Shortest-path completion of `d_local` over its k-NN graph.
pub fn geodesic(d_local: &DissimilarityMatrix, k: usize) -> Result<DissimilarityMatrix> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let n = d_local.len();
    let adj = knn_graph(d_local, k);
    let sizes = components(&adj);
    if sizes.len() > 1 {
        return Err(Error::DisconnectedGraph {
            count: sizes.len(),
            sizes,
        });
    }
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(&adj, s)).collect();
    let mut out = DissimilarityMatrix::zeros(n)?;
    for i in 0..n {
        for j in i + 1..n {
            // Dijkstra from either end yields the same value up to rounding,
            // keep the smaller one so the matrix is exactly symmetric.
            out.set_symmetric(i, j, rows[i][j].min(rows[j][i]));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityConfig {
    /// Neighbours per node in the geodesic graph.
    pub k: usize,
    /// Time-fusion window in units of the sample interval.
    pub t_max_intervals: f64,
}

impl Default for DissimilarityConfig {
    fn default() -> Self {
        Self {
            k: 20,
            t_max_intervals: 5.0,
        }
    }
}

/// Full fused geodesic dissimilarity. Returns the matrix and the calibrated
/// time scale.
pub fn fused_geodesic(
    adps: &[AngleDelayProfile],
    times: &[f64],
    sample_interval: f64,
    cfg: &DissimilarityConfig,
) -> Result<(DissimilarityMatrix, f64)> {
    let d_adp = adp_matrix(adps)?;
    let t_max = cfg.t_max_intervals * sample_interval * (1.0 + 1e-9);
    let alpha = calibrate_alpha(&d_adp, times, t_max)?;
    let fused = fuse_matrix(&d_adp, times, alpha, t_max);
    Ok((geodesic(&fused, cfg.k)?, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(arrays: usize, values: Vec<f64>) -> AngleDelayProfile {
        let per = values.len() / arrays;
        AngleDelayProfile::from_raw(arrays, per, 1, values).unwrap()
    }

    #[test]
    fn identical_profiles_have_zero_dissimilarity() {
        let a = profile(2, vec![1.0, 2.0, 0.0, 3.0, 1.0, 1.0]);
        assert!(adp_dissimilarity(&a, &a).unwrap().abs() < 1e-15);
    }

    #[test]
    fn disjoint_support_gives_one() {
        let a = profile(2, vec![1.0, 0.0, 0.0, 2.0]);
        let b = profile(2, vec![0.0, 5.0, 3.0, 0.0]);
        assert_eq!(adp_dissimilarity(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = profile(2, vec![1.0, 0.0, 0.0, 2.0]);
        let b = profile(1, vec![1.0, 0.0, 0.0, 2.0]);
        assert!(adp_dissimilarity(&a, &b).is_err());
    }

    #[test]
    fn fuse_time_rules() {
        assert_eq!(fuse_time(0.7, 0.0, 3.0, 1.0), 0.0);
        assert_eq!(fuse_time(0.7, 2.0, 3.0, 1.0), 0.7);
        assert!((fuse_time(0.5, 0.1, 2.0, 1.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn alpha_is_least_squares_slope() {
        // d = 2 dt exactly for near pairs.
        let times = [0.0, 1.0, 2.0];
        let d =
            DissimilarityMatrix::from_full(3, vec![0.0, 2.0, 4.0, 2.0, 0.0, 2.0, 4.0, 2.0, 0.0])
                .unwrap();
        assert!((calibrate_alpha(&d, &times, 2.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(calibrate_alpha(&d, &times, 0.5).is_err());
    }

    #[test]
    fn two_nodes() {
        let d = DissimilarityMatrix::from_full(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let g = geodesic(&d, 1).unwrap();
        assert_eq!(g, d);
    }

    #[test]
    fn path_shortening() {
        let d =
            DissimilarityMatrix::from_full(3, vec![0.0, 2.0, 10.0, 2.0, 0.0, 2.0, 10.0, 2.0, 0.0])
                .unwrap();
        let g = geodesic(&d, 2).unwrap();
        assert_eq!(g.get(0, 2), 4.0);
        assert_eq!(g.get(2, 0), 4.0);
    }

    #[test]
    fn disconnected_graph_names_components() {
        // Two far-apart pairs, k = 1.
        let big = 100.0;
        let d = DissimilarityMatrix::from_full(
            4,
            vec![
                0.0, 1.0, big, big, //
                1.0, 0.0, big, big, //
                big, big, 0.0, 1.0, //
                big, big, 1.0, 0.0,
            ],
        )
        .unwrap();
        match geodesic(&d, 1) {
            Err(Error::DisconnectedGraph { count, sizes }) => {
                assert_eq!(count, 2);
                assert_eq!(sizes, vec![2, 2]);
            }
            other => panic!("expected disconnected error, got {other:?}"),
        }
        assert!(geodesic(&d, 0).is_err());
    }

    #[test]
    fn median() {
        let d =
            DissimilarityMatrix::from_full(3, vec![0.0, 1.0, 5.0, 1.0, 0.0, 2.0, 5.0, 2.0, 0.0])
                .unwrap();
        assert_eq!(d.median_off_diagonal(), 2.0);
    }
}
