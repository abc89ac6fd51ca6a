//! Global-phase-invariant CSI representations.
//!
//! Both the charting-function input (time-domain spatial autocorrelations)
//! and the angle-delay profile used for dissimilarities are built from
//! products `h h^H` or magnitudes, so a common unit-modulus factor on the
//! whole snapshot cancels.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::CsiTensor;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub taps: usize,
    pub beam_bins: usize,
    pub delay_bins: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            taps: 16,
            beam_bins: 16,
            delay_bins: 32,
        }
    }
}

/// Real feature vector fed to the charting function.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiFeature(pub Vec<f64>);

impl CsiFeature {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Length of [`csi_feature`]'s output.
pub fn feature_len(arrays: usize, antennas: usize, taps: usize) -> usize {
    arrays * taps * antennas * antennas
}

/// `e^{+j 2 pi n tau / N} / N` for `tau < taps`, row-major in `tau`.
fn idft_table(subcarriers: usize, taps: usize) -> Vec<C64> {
    let n_f = subcarriers as f64;
    let mut table = Vec::with_capacity(taps * subcarriers);
    for tau in 0..taps {
        for n in 0..subcarriers {
            let k = (n * tau) % subcarriers;
            table.push(C64::from_polar(1.0 / n_f, 2.0 * PI * k as f64 / n_f));
        }
    }
    table
}

/// Delay-domain CSI `h_b[m][tau]` for `tau < taps`.
fn delay_domain(h: &CsiTensor, b: usize, table: &[C64], taps: usize) -> Vec<C64> {
    let (_, m_count, n_count) = h.shape();
    let mut out = vec![C64::new(0.0, 0.0); m_count * taps];
    for m in 0..m_count {
        let row = h.subcarrier_row(b, m);
        for tau in 0..taps {
            let tw = &table[tau * n_count..(tau + 1) * n_count];
            out[m * taps + tau] = row.iter().zip(tw).map(|(x, w)| x * w).sum();
        }
    }
    out
}

/// Time-domain sample autocorrelation features.
///
/// For every array and each of the first `taps` delay taps, the spatial outer
/// product `h[tau] h[tau]^H` contributes its upper triangle: diagonal entries
/// as one real value, off-diagonal entries as real and imaginary part. Output
/// order is `(b, tau, m1 <= m2)`.
pub fn csi_feature(h: &CsiTensor, taps: usize) -> Result<CsiFeature> {
    let (b_count, m_count, n_count) = h.shape();
    if taps > n_count {
        return Err(Error::InvalidConfig(format!(
            "{taps} taps requested from {n_count} subcarriers"
        )));
    }
    if !h.is_finite() {
        return Err(Error::NonFinite("CSI tensor".into()));
    }
    let table = idft_table(n_count, taps);
    let mut out = Vec::with_capacity(feature_len(b_count, m_count, taps));
    for b in 0..b_count {
        let td = delay_domain(h, b, &table, taps);
        for tau in 0..taps {
            for m1 in 0..m_count {
                let a = td[m1 * taps + tau];
                out.push(a.norm_sqr());
                for m2 in m1 + 1..m_count {
                    let p = a * td[m2 * taps + tau].conj();
                    out.push(p.re);
                    out.push(p.im);
                }
            }
        }
    }
    Ok(CsiFeature(out))
}

/// Per-array beamspace/delay magnitude map, each array normalized to unit
/// Frobenius norm (all-zero arrays stay zero).
#[derive(Debug, Clone, PartialEq)]
pub struct AngleDelayProfile {
    arrays: usize,
    beam_bins: usize,
    delay_bins: usize,
    values: Vec<f64>,
}

impl AngleDelayProfile {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.arrays, self.beam_bins, self.delay_bins)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Profile of array `b`, beam-major.
    pub fn array(&self, b: usize) -> &[f64] {
        let len = self.beam_bins * self.delay_bins;
        &self.values[b * len..(b + 1) * len]
    }

    pub fn get(&self, b: usize, beam: usize, delay: usize) -> f64 {
        self.values[(b * self.beam_bins + beam) * self.delay_bins + delay]
    }

    /// Build from raw per-array values; each array is normalized.
    pub fn from_raw(
        arrays: usize,
        beam_bins: usize,
        delay_bins: usize,
        mut values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != arrays * beam_bins * delay_bins {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {arrays}x{beam_bins}x{delay_bins} profile",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig(
                "profile entries must be finite and nonnegative".into(),
            ));
        }
        let len = beam_bins * delay_bins;
        for chunk in values.chunks_mut(len.max(1)) {
            let norm = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                chunk.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Ok(Self {
            arrays,
            beam_bins,
            delay_bins,
            values,
        })
    }
}

/// Angle-delay profile: |2-D DFT| over the antenna index (zero-padded to
/// `beam_bins`) and the subcarrier index (delay taps, truncated to
/// `delay_bins`).
pub fn angle_delay_profile(h: &CsiTensor, cfg: &FeatureConfig) -> Result<AngleDelayProfile> {
    let (b_count, m_count, n_count) = h.shape();
    if !h.is_finite() {
        return Err(Error::NonFinite("CSI tensor".into()));
    }
    if cfg.beam_bins < m_count {
        return Err(Error::InvalidConfig(format!(
            "beam_bins ({}) must be at least the antenna count ({m_count})",
            cfg.beam_bins
        )));
    }
    let delay_bins = cfg.delay_bins.min(n_count);
    let table = idft_table(n_count, delay_bins);
    let beam_bins = cfg.beam_bins;
    let steer: Vec<C64> = (0..beam_bins * m_count)
        .map(|i| {
            let (k, m) = (i / m_count, i % m_count);
            C64::from_polar(
                1.0,
                -2.0 * PI * ((k * m) % beam_bins) as f64 / beam_bins as f64,
            )
        })
        .collect();
    let mut values = Vec::with_capacity(b_count * beam_bins * delay_bins);
    for b in 0..b_count {
        let td = delay_domain(h, b, &table, delay_bins);
        for k in 0..beam_bins {
            let w = &steer[k * m_count..(k + 1) * m_count];
            for tau in 0..delay_bins {
                let v: C64 = (0..m_count).map(|m| w[m] * td[m * delay_bins + tau]).sum();
                values.push(v.norm());
            }
        }
    }
    AngleDelayProfile::from_raw(b_count, beam_bins, delay_bins, values)
}
