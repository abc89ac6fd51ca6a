//! Chart quality: continuity, trustworthiness, Kruskal stress, affine MAE.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ct: f64,
    pub tw: f64,
    pub ks: f64,
    pub mae: f64,
    pub k_neighbors: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "ct,tw,ks,mae,k_neighbors";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.ct, self.tw, self.ks, self.mae, self.k_neighbors
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        writeln!(w, "{}", self.csv_row())?;
        Ok(())
    }
}

/// Default neighborhood size `max(1, round(0.05 L))`.
pub fn default_k(len: usize) -> usize {
    ((0.05 * len as f64).round() as usize).max(1)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Rank of every point as seen from `i` (1 = nearest, `i` itself excluded),
/// ties broken by index.
fn ranks_from(points: &[[f64; 2]], i: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).filter(|&j| j != i).collect();
    let d: Vec<f64> = points.iter().map(|&p| dist(points[i], p)).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    let mut rank = vec![0; points.len()];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r + 1;
    }
    rank
}

/// Penalty sum for points inside the `k`-neighborhood in `inner` but not in
/// `outer`, weighted by their rank in `outer`.
fn rank_penalty(outer: &[[f64; 2]], inner: &[[f64; 2]], k: usize) -> f64 {
    (0..outer.len())
        .into_par_iter()
        .map(|i| {
            let r_out = ranks_from(outer, i);
            let r_in = ranks_from(inner, i);
            (0..outer.len())
                .filter(|&j| j != i && r_in[j] <= k && r_out[j] > k)
                .map(|j| (r_out[j] - k) as f64)
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

fn check_lengths(truth: &[[f64; 2]], chart: &[[f64; 2]]) -> Result<()> {
    if truth.len() != chart.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} ground-truth positions, {} chart positions",
            truth.len(),
            chart.len()
        )));
    }
    if truth
        .iter()
        .chain(chart)
        .any(|p| !p[0].is_finite() || !p[1].is_finite())
    {
        return Err(Error::NonFinite("positions".into()));
    }
    Ok(())
}

/// Continuity and trustworthiness with neighborhood size `k`.
pub fn neighborhood_metrics(
    truth: &[[f64; 2]],
    chart: &[[f64; 2]],
    k: usize,
) -> Result<(f64, f64)> {
    check_lengths(truth, chart)?;
    let n = truth.len();
    if k == 0 || n < k + 2 || 2 * n < 3 * k + 2 {
        return Err(Error::InvalidConfig(format!(
            "neighborhood size {k} is invalid for {n} points"
        )));
    }
    let norm = 2.0 / (n as f64 * k as f64 * (2.0 * n as f64 - 3.0 * k as f64 - 1.0));
    let tw = 1.0 - norm * rank_penalty(truth, chart, k);
    let ct = 1.0 - norm * rank_penalty(chart, truth, k);
    Ok((ct, tw))
}

/// Normalized stress after the optimal uniform rescaling of the chart.
pub fn kruskal_stress(truth: &[[f64; 2]], chart: &[[f64; 2]]) -> Result<f64> {
    check_lengths(truth, chart)?;
    let n = truth.len();
    let (mut s_dd, mut s_hh, mut s_dh) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let delta = dist(truth[i], truth[j]);
            let hat = dist(chart[i], chart[j]);
            s_dd += delta * delta;
            s_hh += hat * hat;
            s_dh += delta * hat;
        }
    }
    if s_dd == 0.0 {
        return Err(Error::DegenerateGeometry(
            "all ground-truth points coincide".into(),
        ));
    }
    if s_hh == 0.0 {
        return Ok(1.0);
    }
    let s = s_dh / s_hh;
    let mut residual = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            residual += (dist(truth[i], truth[j]) - s * dist(chart[i], chart[j])).powi(2);
        }
    }
    Ok((residual / s_dd).sqrt().min(1.0))
}

/// Mean residual norm after the least-squares affine map from chart to truth.
pub fn affine_mae(truth: &[[f64; 2]], chart: &[[f64; 2]]) -> Result<f64> {
    check_lengths(truth, chart)?;
    let n = truth.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "affine fit needs 3 points, got {n}"
        )));
    }
    let mean = |p: &[[f64; 2]]| {
        let s = p.iter().fold([0.0, 0.0], |a, q| [a[0] + q[0], a[1] + q[1]]);
        [s[0] / n as f64, s[1] / n as f64]
    };
    let (zm, xm) = (mean(chart), mean(truth));
    // Centered normal equations: Czz A^T = Czx.
    let mut czz = [[0.0; 2]; 2];
    let mut czx = [[0.0; 2]; 2];
    for (z, x) in chart.iter().zip(truth) {
        let dz = [z[0] - zm[0], z[1] - zm[1]];
        let dx = [x[0] - xm[0], x[1] - xm[1]];
        for a in 0..2 {
            for b in 0..2 {
                czz[a][b] += dz[a] * dz[b];
                czx[a][b] += dz[a] * dx[b];
            }
        }
    }
    let det = czz[0][0] * czz[1][1] - czz[0][1] * czz[1][0];
    let scale = czz[0][0] * czz[1][1];
    if !(det > 1e-12 * scale) || scale == 0.0 {
        return Err(Error::DegenerateGeometry(
            "chart positions are rank deficient".into(),
        ));
    }
    let inv = [
        [czz[1][1] / det, -czz[0][1] / det],
        [-czz[1][0] / det, czz[0][0] / det],
    ];
    // m[a][b]: weight of chart coordinate a in truth coordinate b.
    let mut m = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            m[a][b] = inv[a][0] * czx[0][b] + inv[a][1] * czx[1][b];
        }
    }
    let total: f64 = chart
        .iter()
        .zip(truth)
        .map(|(z, x)| {
            let dz = [z[0] - zm[0], z[1] - zm[1]];
            let fit = [
                xm[0] + dz[0] * m[0][0] + dz[1] * m[1][0],
                xm[1] + dz[0] * m[0][1] + dz[1] * m[1][1],
            ];
            dist(fit, *x)
        })
        .sum();
    Ok(total / n as f64)
}

/// Euclidean distance between a predicted and a reference chart position.
pub fn latent_error(predicted: [f64; 2], reference: [f64; 2]) -> f64 {
    dist(predicted, reference)
}

/// All four metrics with neighborhood size `k`.
pub fn evaluate(truth: &[[f64; 2]], chart: &[[f64; 2]], k: usize) -> Result<MetricReport> {
    let (ct, tw) = neighborhood_metrics(truth, chart, k)?;
    Ok(MetricReport {
        ct,
        tw,
        ks: kruskal_stress(truth, chart)?,
        mae: affine_mae(truth, chart)?,
        k_neighbors: k,
    })
}
