//! Array selection, matched-filter sum rate, noise calibration and the
//! sum-rate-versus-horizon experiment.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charting::ChartPosition;
use crate::error::{Error, Result};
use crate::geometry::Triangulation;
use crate::latent_predict::extrapolate;
use crate::predictors::{self, Method};
use crate::tensor::CsiTensor;
use crate::wiener::WienerBank;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub n0: f64,
    pub mu: f64,
}

impl NoiseModel {
    pub fn new(n0: f64, mu: f64) -> Result<Self> {
        if !(n0 > 0.0 && n0.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise power N0 = {n0}")));
        }
        Ok(Self { n0, mu })
    }
}

/// `|h^H h_hat|^2 / (n_eff ||h_hat||^2)`.
pub fn received_power(h_true: &[C64], h_hat: &[C64], n_eff: usize) -> Result<f64> {
    if h_true.len() != h_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "channel has {} antennas, beamformer {}",
            h_true.len(),
            h_hat.len()
        )));
    }
    let norm2: f64 = h_hat.iter().map(|v| v.norm_sqr()).sum();
    if norm2 == 0.0 {
        return Err(Error::ZeroBeamformer);
    }
    let inner: C64 = h_true.iter().zip(h_hat).map(|(a, b)| a.conj() * b).sum();
    Ok(inner.norm_sqr() / (n_eff as f64 * norm2))
}

fn check_shapes(h_true: &CsiTensor, h_hat: &CsiTensor, b: usize) -> Result<()> {
    if h_true.shape() != h_hat.shape() {
        return Err(Error::DimensionMismatch(format!(
            "true CSI {:?} vs predicted {:?}",
            h_true.shape(),
            h_hat.shape()
        )));
    }
    if b >= h_true.arrays() {
        return Err(Error::DimensionMismatch(format!(
            "array {b} of {}",
            h_true.arrays()
        )));
    }
    Ok(())
}

/// Mean over subcarriers of `log2(1 + P_bn / N0)` at array `b`.
pub fn sum_rate(
    h_true: &CsiTensor,
    h_hat: &CsiTensor,
    b: usize,
    noise: &NoiseModel,
) -> Result<f64> {
    check_shapes(h_true, h_hat, b)?;
    let n_sub = h_true.subcarriers();
    let mut total = 0.0;
    for n in 0..n_sub {
        let p = received_power(
            &h_true.antenna_vector(b, n),
            &h_hat.antenna_vector(b, n),
            n_sub,
        )?;
        total += (1.0 + p / noise.n0).log2();
    }
    Ok(total / n_sub as f64)
}

/// As [`sum_rate`], but a zero beamformer on a subcarrier contributes no
/// power instead of failing.
pub fn sum_rate_or_zero(
    h_true: &CsiTensor,
    h_hat: &CsiTensor,
    b: usize,
    noise: &NoiseModel,
) -> Result<f64> {
    check_shapes(h_true, h_hat, b)?;
    let n_sub = h_true.subcarriers();
    let mut total = 0.0;
    for n in 0..n_sub {
        let p = match received_power(
            &h_true.antenna_vector(b, n),
            &h_hat.antenna_vector(b, n),
            n_sub,
        ) {
            Ok(p) => p,
            Err(Error::ZeroBeamformer) => 0.0,
            Err(e) => return Err(e),
        };
        total += (1.0 + p / noise.n0).log2();
    }
    Ok(total / n_sub as f64)
}

/// Array with the largest predicted channel energy; ties go to the lowest.
pub fn select_array(h_hat: &CsiTensor) -> usize {
    let (b_count, m_count, n_count) = h_hat.shape();
    let per = m_count * n_count;
    let energies: Vec<f64> = (0..b_count)
        .map(|b| {
            h_hat.as_slice()[b * per..(b + 1) * per]
                .iter()
                .map(|v| v.norm_sqr())
                .sum()
        })
        .collect();
    let mut best = 0;
    for (b, &e) in energies.iter().enumerate() {
        if e > energies[best] {
            best = b;
        }
    }
    best
}

/// `N0 = E[P] / mu` with `P` the matched-beamforming power averaged over
/// snapshots, arrays and subcarriers of `csi` (already restricted to the
/// evaluated subcarriers).
pub fn calibrate_noise(csi: &[CsiTensor], mu: f64) -> Result<NoiseModel> {
    if csi.is_empty() {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidConfig(format!("target SNR mu = {mu}")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for h in csi {
        let n_sub = h.subcarriers();
        let (b_count, m_count, n_count) = h.shape();
        for b in 0..b_count {
            for n in 0..n_count {
                // Matched filter: |h^H h|^2 / (N ||h||^2) = ||h||^2 / N.
                let e: f64 = (0..m_count).map(|m| h.get(b, m, n).norm_sqr()).sum();
                total += e / n_sub as f64;
                count += 1;
            }
        }
    }
    let mean = total / count as f64;
    if mean == 0.0 {
        return Err(Error::InsufficientData("all-zero channel data".into()));
    }
    NoiseModel::new(mean / mu, mu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Memory size K.
    pub memory: usize,
    pub horizons: Vec<usize>,
    /// Route samples outside the triangulation to CC-NN instead of
    /// excluding them.
    pub fallback_to_nn: bool,
    pub dump_samples: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            memory: 25,
            horizons: (0..=25).collect(),
            fallback_to_nn: false,
            dump_samples: false,
        }
    }
}

/// Everything the experiment consumes, prepared beforehand.
pub struct ExperimentInputs<'a> {
    /// Training CSI on the evaluated subcarriers, indexed like the chart.
    pub train_csi: &'a [CsiTensor],
    pub train_chart: &'a [ChartPosition],
    pub triangulation: &'a Triangulation,
    /// Prediction-set CSI on the evaluated subcarriers, in time order.
    pub pred_csi: &'a [CsiTensor],
    /// Inferred chart positions of the prediction set.
    pub pred_chart: &'a [ChartPosition],
    pub wiener: &'a WienerBank,
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub method: Method,
    pub p: usize,
    pub mean_sr: f64,
    pub n_samples: usize,
    pub excluded_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub l: usize,
    pub p: usize,
    pub method: Method,
    pub b_hat: usize,
    pub sr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub rows: Vec<HorizonRow>,
    /// Mean sum rate with the true future CSI, over the same samples.
    pub perfect_sr: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub samples: Option<Vec<SampleRecord>>,
}

impl HorizonReport {
    pub const CSV_HEADER: &'static str = "method,p,mean_sr,n_samples,excluded_frac";

    pub fn row(&self, method: Method, p: usize) -> Option<&HorizonRow> {
        self.rows.iter().find(|r| r.method == method && r.p == p)
    }

    pub fn mean_sr(&self, method: Method, p: usize) -> Option<f64> {
        self.row(method, p).map(|r| r.mean_sr)
    }

    pub fn horizons(&self) -> Vec<usize> {
        let mut ps: Vec<usize> = self.rows.iter().map(|r| r.p).collect();
        ps.sort_unstable();
        ps.dedup();
        ps
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.method, r.p, r.mean_sr, r.n_samples, r.excluded_frac
            )?;
        }
        Ok(())
    }

    /// Rows from a results CSV; the perfect-CSI column is not part of it.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != Self::CSV_HEADER {
            return Err(Error::InvalidConfig(format!(
                "unexpected results header {header:?}"
            )));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::InvalidConfig(format!("results line {}: {line:?}", i + 2));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(bad());
            }
            rows.push(HorizonRow {
                method: Method::from_tag(cols[0]).ok_or_else(bad)?,
                p: cols[1].parse().map_err(|_| bad())?,
                mean_sr: cols[2].parse().map_err(|_| bad())?,
                n_samples: cols[3].parse().map_err(|_| bad())?,
                excluded_frac: cols[4].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self {
            rows,
            perfect_sr: BTreeMap::new(),
            samples: None,
        })
    }

    pub fn write_samples_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "l,p,method,b_hat,sr")?;
        for s in self.samples.iter().flatten() {
            writeln!(w, "{},{},{},{},{}", s.l, s.p, s.method, s.b_hat, s.sr)?;
        }
        Ok(())
    }
}

/// Per-sample outcome at one `(l, p)`: `None` when excluded.
struct Outcome {
    sr: Option<([f64; 4], [usize; 4], f64)>,
}

fn evaluate_sample(
    inputs: &ExperimentInputs<'_>,
    cfg: &ExperimentConfig,
    l: usize,
    p: usize,
) -> Result<Outcome> {
    let k = cfg.memory;
    let memory: Vec<&CsiTensor> = (0..k).map(|i| &inputs.pred_csi[l - i]).collect();
    let z_hat = extrapolate(&inputs.pred_chart[l + 1 - k..=l], p)?;
    let h_true = &inputs.pred_csi[l + p];

    let interp = predictors::cc_interp(z_hat, inputs.triangulation, inputs.train_csi)?;
    let nn = predictors::cc_nn(z_hat, inputs.train_chart, inputs.train_csi)?;
    let interp_csi = match (&interp, cfg.fallback_to_nn) {
        (Some(pr), _) => pr.csi.clone(),
        (None, true) => nn.csi.clone(),
        (None, false) => return Ok(Outcome { sr: None }),
    };
    let filter = inputs
        .wiener
        .filter(p)
        .ok_or_else(|| Error::InvalidConfig(format!("no Wiener filter for horizon {p}")))?;
    let wiener = predictors::wiener(filter, &memory)?;
    let outdated = predictors::outdated(&memory)?;

    let hats = [&outdated.csi, &wiener.csi, &interp_csi, &nn.csi];
    let mut sr = [0.0; 4];
    let mut b_hat = [0; 4];
    for (i, h_hat) in hats.iter().enumerate() {
        b_hat[i] = select_array(h_hat);
        sr[i] = sum_rate_or_zero(h_true, h_hat, b_hat[i], &inputs.noise)?;
    }
    let perfect = sum_rate(h_true, h_true, select_array(h_true), &inputs.noise)?;
    Ok(Outcome {
        sr: Some((sr, b_hat, perfect)),
    })
}

/// Sweep the memory window over the prediction set and average the sum rate
/// of every method at every horizon, over one common set of samples.
pub fn run_experiment(
    inputs: &ExperimentInputs<'_>,
    cfg: &ExperimentConfig,
) -> Result<HorizonReport> {
    let k = cfg.memory;
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "memory K = {k} must be at least 2"
        )));
    }
    if cfg.horizons.is_empty() {
        return Err(Error::InvalidConfig("no horizons".into()));
    }
    let len = inputs.pred_csi.len();
    if inputs.pred_chart.len() != len {
        return Err(Error::DimensionMismatch(format!(
            "{} prediction chart positions for {len} snapshots",
            inputs.pred_chart.len()
        )));
    }
    let p_max = *cfg.horizons.iter().max().unwrap();
    if len < k + p_max {
        return Err(Error::InsufficientData(format!(
            "prediction set has {len} snapshots, needs K + max horizon = {}",
            k + p_max
        )));
    }
    let ls: Vec<usize> = (k - 1..len - p_max).collect();

    let mut rows = Vec::new();
    let mut perfect_sr = BTreeMap::new();
    let mut samples = cfg.dump_samples.then(Vec::new);
    for &p in &cfg.horizons {
        let outcomes: Vec<Outcome> = ls
            .par_iter()
            .map(|&l| evaluate_sample(inputs, cfg, l, p))
            .collect::<Result<_>>()?;
        let mut sums = [0.0; 4];
        let mut perfect = 0.0;
        let mut n = 0usize;
        for (&l, o) in ls.iter().zip(&outcomes) {
            let Some((sr, b_hat, pf)) = o.sr else {
                continue;
            };
            n += 1;
            perfect += pf;
            for i in 0..4 {
                sums[i] += sr[i];
            }
            if let Some(s) = samples.as_mut() {
                for (i, method) in Method::ALL.into_iter().enumerate() {
                    s.push(SampleRecord {
                        l,
                        p,
                        method,
                        b_hat: b_hat[i],
                        sr: sr[i],
                    });
                }
            }
        }
        let excluded_frac = (ls.len() - n) as f64 / ls.len() as f64;
        let mean = |s: f64| if n > 0 { s / n as f64 } else { f64::NAN };
        for (i, method) in Method::ALL.into_iter().enumerate() {
            rows.push(HorizonRow {
                method,
                p,
                mean_sr: mean(sums[i]),
                n_samples: n,
                excluded_frac,
            });
        }
        perfect_sr.insert(p, mean(perfect));
    }
    rows.sort_by_key(|r| (r.method, r.p));
    Ok(HorizonReport {
        rows,
        perfect_sr,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn received_power_examples() {
        assert_eq!(
            received_power(&[c(1.0, 0.0)], &[c(1.0, 0.0)], 1).unwrap(),
            1.0
        );
        assert_eq!(
            received_power(&[c(1.0, 0.0), c(0.0, 0.0)], &[c(0.0, 0.0), c(1.0, 0.0)], 1).unwrap(),
            0.0
        );
        assert_eq!(
            received_power(&[c(1.0, 0.0), c(0.0, 1.0)], &[c(1.0, 0.0), c(0.0, 0.0)], 1).unwrap(),
            1.0
        );
        assert!(matches!(
            received_power(&[c(1.0, 0.0)], &[c(0.0, 0.0)], 1),
            Err(Error::ZeroBeamformer)
        ));
    }

    #[test]
    fn sum_rate_single_subcarrier() {
        let h = CsiTensor::from_vec(1, 1, 1, vec![c(1.0, 0.0)]).unwrap();
        let noise = NoiseModel::new(0.01, 100.0).unwrap();
        let sr = sum_rate(&h, &h, 0, &noise).unwrap();
        assert!((sr - 101f64.log2()).abs() < 1e-12);
        assert!((sr - 6.6582).abs() < 1e-4);
    }

    #[test]
    fn orthogonal_prediction_has_zero_rate() {
        let h = CsiTensor::from_vec(
            1,
            2,
            2,
            vec![c(1.0, 0.0), c(0.5, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
        )
        .unwrap();
        let g = CsiTensor::from_vec(
            1,
            2,
            2,
            vec![c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 2.0)],
        )
        .unwrap();
        let noise = NoiseModel::new(0.01, 100.0).unwrap();
        assert_eq!(sum_rate(&h, &g, 0, &noise).unwrap(), 0.0);
    }

    #[test]
    fn select_array_examples() {
        let mk = |norms: &[f64]| {
            let data = norms.iter().map(|&e| c(e.sqrt(), 0.0)).collect();
            CsiTensor::from_vec(norms.len(), 1, 1, data).unwrap()
        };
        assert_eq!(select_array(&mk(&[1.0, 4.0, 2.0, 1.0])), 1);
        assert_eq!(select_array(&mk(&[3.0, 3.0, 3.0])), 0);
        assert_eq!(
            select_array(&mk(&[1.0, 4.0, 2.0, 1.0]).scaled(c(0.0, 2.5))),
            1
        );
    }

    #[test]
    fn noise_calibration() {
        // ||h||^2 = N' on every (b, n): N0 = 1 / mu.
        let n_sub = 4;
        let h = CsiTensor::from_vec(2, 1, n_sub, vec![c(2.0, 0.0); 2 * n_sub]).unwrap();
        let noise = calibrate_noise(&[h.clone(), h.clone()], 100.0).unwrap();
        assert!((noise.n0 - 0.01).abs() < 1e-15);
        let scaled = calibrate_noise(&[h.scaled(c(3.0, 0.0))], 100.0).unwrap();
        assert!((scaled.n0 - 0.09).abs() < 1e-15);
        assert!(calibrate_noise(&[CsiTensor::zeros(1, 1, 1)], 100.0).is_err());
        assert!(calibrate_noise(&[], 100.0).is_err());
    }

    #[test]
    fn results_csv_roundtrip() {
        let report = HorizonReport {
            rows: vec![HorizonRow {
                method: Method::CcInterp,
                p: 3,
                mean_sr: 4.25,
                n_samples: 10,
                excluded_frac: 0.125,
            }],
            perfect_sr: BTreeMap::new(),
            samples: None,
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "method,p,mean_sr,n_samples,excluded_frac\ncc_interp,3,4.25,10,0.125\n"
        );
        assert_eq!(HorizonReport::read_csv(buf.as_slice()).unwrap(), report);
    }
}
