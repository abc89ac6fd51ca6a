//! CSI predictors compared in the horizon experiment.

use serde::{Deserialize, Serialize};

use crate::charting::ChartPosition;
use crate::error::{Error, Result};
use crate::geometry::{barycentric, Barycentric, Location, Triangulation};
use crate::phase_linalg::{reconstruct_csi, AutocorrMatrix};
use crate::tensor::CsiTensor;
use crate::wiener::WienerFilter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Outdated,
    Wiener,
    CcInterp,
    CcNn,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Outdated,
        Method::Wiener,
        Method::CcInterp,
        Method::CcNn,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Outdated => "outdated",
            Method::Wiener => "wiener",
            Method::CcInterp => "cc_interp",
            Method::CcNn => "cc_nn",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub csi: CsiTensor,
    pub method: Method,
    pub chart_position: Option<ChartPosition>,
    /// False when a chart-based prediction fell outside the triangulation.
    pub in_triangulation: bool,
}

/// Most recent CSI, unchanged. `memory` is ordered most recent first.
pub fn outdated(memory: &[&CsiTensor]) -> Result<Prediction> {
    let head = memory
        .first()
        .ok_or_else(|| Error::InsufficientData("empty memory".into()))?;
    Ok(Prediction {
        csi: (*head).clone(),
        method: Method::Outdated,
        chart_position: None,
        in_triangulation: true,
    })
}

pub fn wiener(filter: &WienerFilter, memory: &[&CsiTensor]) -> Result<Prediction> {
    Ok(Prediction {
        csi: filter.predict(memory)?,
        method: Method::Wiener,
        chart_position: None,
        in_triangulation: true,
    })
}

/// Weighted autocorrelation `(1/3) sum_i c_i h_i h_i^H` for every `(b, n)`.
pub fn interpolated_autocorr(
    weights: Barycentric,
    corners: [&CsiTensor; 3],
) -> Result<Vec<AutocorrMatrix>> {
    let shape = corners[0].shape();
    if corners.iter().any(|h| h.shape() != shape) {
        return Err(Error::DimensionMismatch(
            "triangle corners differ in shape".into(),
        ));
    }
    let (b_count, m_count, n_count) = shape;
    let mut out = Vec::with_capacity(b_count * n_count);
    for b in 0..b_count {
        for n in 0..n_count {
            let mut z = AutocorrMatrix::zeros(m_count);
            for (c, h) in weights.0.iter().zip(&corners) {
                z.add_outer(&h.antenna_vector(b, n), *c);
            }
            z.scale(1.0 / 3.0);
            out.push(z);
        }
    }
    Ok(out)
}

/// Barycentric interpolation of autocorrelations over the triangle that
/// contains `z_hat`, followed by rank-1 reconstruction. Returns `None` when
/// `z_hat` lies outside the triangulation. `train_csi` is indexed by the
/// triangulation's dataset labels.
pub fn cc_interp(
    z_hat: ChartPosition,
    tri: &Triangulation,
    train_csi: &[CsiTensor],
) -> Result<Option<Prediction>> {
    let Location::Inside(t) = tri.locate(z_hat) else {
        return Ok(None);
    };
    let labels = tri.triangle_labels(t);
    if let Some(&l) = labels.iter().find(|&&l| l >= train_csi.len()) {
        return Err(Error::DimensionMismatch(format!(
            "triangulation references sample {l} of {}",
            train_csi.len()
        )));
    }
    let pts = tri.triangle_points(t).map(ChartPosition);
    let c = barycentric(pts, z_hat)?;
    let zs = interpolated_autocorr(c, labels.map(|l| &train_csi[l]))?;
    let (b_count, m_count, n_count) = train_csi[labels[0]].shape();
    let mut csi = CsiTensor::zeros(b_count, m_count, n_count);
    for (bn, z) in zs.iter().enumerate() {
        csi.set_antenna_vector(bn / n_count, bn % n_count, &reconstruct_csi(z)?);
    }
    Ok(Some(Prediction {
        csi,
        method: Method::CcInterp,
        chart_position: Some(z_hat),
        in_triangulation: true,
    }))
}

/// Index of the closest chart position; ties go to the lowest index.
pub fn nearest_index(z_hat: ChartPosition, chart: &[ChartPosition]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, z) in chart.iter().enumerate() {
        let d = z.distance(&z_hat);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// CSI of the training sample whose chart position is closest to `z_hat`.
pub fn cc_nn(
    z_hat: ChartPosition,
    train_chart: &[ChartPosition],
    train_csi: &[CsiTensor],
) -> Result<Prediction> {
    if train_chart.len() != train_csi.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} chart positions for {} training samples",
            train_chart.len(),
            train_csi.len()
        )));
    }
    let i = nearest_index(z_hat, train_chart)
        .ok_or_else(|| Error::InsufficientData("empty training set".into()))?;
    Ok(Prediction {
        csi: train_csi[i].clone(),
        method: Method::CcNn,
        chart_position: Some(z_hat),
        in_triangulation: true,
    })
}
