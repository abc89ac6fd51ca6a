//! Multi-step Wiener prediction on sample-autocorrelation entries.
//!
//! Each entry `Z[b][m1][m2][n] = H[b,m1,n] conj(H[b,m2,n])` is a scalar
//! process free of the per-snapshot phase, so it can be predicted linearly.
//! The predicted matrix is then turned back into a CSI vector by rank-1
//! reconstruction.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::phase_linalg::{reconstruct_csi, AutocorrMatrix};
use crate::tensor::CsiTensor;
use crate::C64;

const MAGIC: &[u8; 4] = b"WNR1";

/// Relative diagonal loading applied to the Toeplitz system.
pub const LOADING: f64 = 1e-6;

/// Normalized temporal correlation coefficients `r[b][m1][m2][n][lag]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationModel {
    arrays: usize,
    antennas: usize,
    subcarriers: usize,
    max_lag: usize,
    r: Vec<C64>,
}

impl CorrelationModel {
    pub fn from_raw(
        arrays: usize,
        antennas: usize,
        subcarriers: usize,
        max_lag: usize,
        r: Vec<C64>,
    ) -> Result<Self> {
        if r.len() != arrays * antennas * antennas * subcarriers * (max_lag + 1) {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for a {arrays}x{antennas}x{antennas}x{subcarriers}x{} model",
                r.len(),
                max_lag + 1
            )));
        }
        Ok(Self {
            arrays,
            antennas,
            subcarriers,
            max_lag,
            r,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.arrays, self.antennas, self.subcarriers)
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    fn entry_index(&self, b: usize, m1: usize, m2: usize, n: usize) -> usize {
        ((b * self.antennas + m1) * self.antennas + m2) * self.subcarriers + n
    }

    /// Coefficients `r[0..=max_lag]` of one entry.
    pub fn coefficients(&self, b: usize, m1: usize, m2: usize, n: usize) -> &[C64] {
        let stride = self.max_lag + 1;
        let e = self.entry_index(b, m1, m2, n);
        &self.r[e * stride..(e + 1) * stride]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.r
    }

    fn entries(&self) -> usize {
        self.arrays * self.antennas * self.antennas * self.subcarriers
    }
}

/// Normalized correlation of a scalar sequence for lags `0..=max_lag`.
///
/// Lag `l` correlates the overlapping windows `x[l..]` and `x[..L-l]` and
/// divides by the geometric mean of their powers, so `r[0] = 1` and
/// `|r[l]| <= 1` hold exactly and a constant sequence yields all ones.
/// Returns `None` when the sequence has zero power.
pub fn normalized_correlation(x: &[C64], max_lag: usize) -> Option<Vec<C64>> {
    let len = x.len();
    let power: Vec<f64> = x.iter().map(|v| v.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    if total == 0.0 {
        return None;
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    out.push(C64::new(1.0, 0.0));
    // Window powers updated incrementally from the full sum.
    let mut head = total; // sum over x[lag..]
    let mut tail = total; // sum over x[..len-lag]
    for lag in 1..=max_lag {
        head -= power[lag - 1];
        tail -= power[len - lag];
        let cross: C64 = x[lag..]
            .iter()
            .zip(&x[..len - lag])
            .map(|(a, b)| a * b.conj())
            .sum();
        let denom = (head.max(0.0) * tail.max(0.0)).sqrt();
        out.push(if denom > 0.0 {
            cross / denom
        } else {
            C64::new(0.0, 0.0)
        });
    }
    Some(out)
}

/// Correlation coefficients of every `Z` entry over the training sequence.
///
/// `csi` holds the training snapshots already restricted to the evaluated
/// subcarriers, in time order.
pub fn estimate_correlations(csi: &[CsiTensor], max_lag: usize) -> Result<CorrelationModel> {
    let Some(first) = csi.first() else {
        return Err(Error::InsufficientData("empty training set".into()));
    };
    if csi.len() <= max_lag {
        return Err(Error::InsufficientData(format!(
            "{} training snapshots for correlation lag {max_lag}",
            csi.len()
        )));
    }
    let (b_count, m_count, n_count) = first.shape();
    if let Some(l) = csi.iter().position(|h| h.shape() != first.shape()) {
        return Err(Error::DimensionMismatch(format!(
            "snapshot {l} differs in shape"
        )));
    }
    let stride = max_lag + 1;

    // One task per (b, n); each fills its M x M block of entries.
    type Block = (usize, usize, Vec<C64>);
    let blocks: Vec<Result<Vec<Block>>> =
        (0..b_count * n_count)
            .into_par_iter()
            .map(|bn| {
                let (b, n) = (bn / n_count, bn % n_count);
                let vecs: Vec<Vec<C64>> = csi.iter().map(|h| h.antenna_vector(b, n)).collect();
                let mut out = Vec::with_capacity(m_count * (m_count + 1) / 2);
                let mut z = vec![C64::new(0.0, 0.0); csi.len()];
                for m1 in 0..m_count {
                    for m2 in m1..m_count {
                        for (zl, h) in z.iter_mut().zip(&vecs) {
                            *zl = h[m1] * h[m2].conj();
                        }
                        let r = normalized_correlation(&z, max_lag)
                            .ok_or(Error::DeadAntennaPair { b, m1, m2, n })?;
                        out.push((m1, m2, r));
                    }
                }
                Ok(out)
            })
            .collect();

    let mut model = CorrelationModel {
        arrays: b_count,
        antennas: m_count,
        subcarriers: n_count,
        max_lag,
        r: vec![C64::new(0.0, 0.0); b_count * m_count * m_count * n_count * stride],
    };
    for (bn, block) in blocks.into_iter().enumerate() {
        let (b, n) = (bn / n_count, bn % n_count);
        for (m1, m2, r) in block? {
            // The (m2, m1) entry is the conjugate process.
            let e = model.entry_index(b, m1, m2, n);
            model.r[e * stride..(e + 1) * stride].copy_from_slice(&r);
            let e = model.entry_index(b, m2, m1, n);
            for (dst, src) in model.r[e * stride..(e + 1) * stride].iter_mut().zip(&r) {
                *dst = src.conj();
            }
        }
    }
    Ok(model)
}

/// LU factorization with partial pivoting of a dense complex matrix.
struct Lu {
    n: usize,
    a: Vec<C64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(n: usize, mut a: Vec<C64>) -> Result<Self> {
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i * n + col].norm().total_cmp(&a[j * n + col].norm()))
                .unwrap();
            if !(a[piv * n + col].norm() > scale * 1e-14) {
                return Err(Error::SolveFailed(format!(
                    "singular {n}x{n} Toeplitz system at column {col}"
                )));
            }
            if piv != col {
                for k in 0..n {
                    a.swap(col * n + k, piv * n + k);
                }
                perm.swap(col, piv);
            }
            let d = a[col * n + col];
            for row in col + 1..n {
                let f = a[row * n + col] / d;
                a[row * n + col] = f;
                for k in col + 1..n {
                    let u = a[col * n + k];
                    a[row * n + k] -= f * u;
                }
            }
        }
        Ok(Self { n, a, perm })
    }

    fn solve(&self, rhs: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut x: Vec<C64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for row in 0..n {
            for k in 0..row {
                let l = self.a[row * n + k];
                x[row] = x[row] - l * x[k];
            }
        }
        for row in (0..n).rev() {
            for k in row + 1..n {
                let u = self.a[row * n + k];
                x[row] = x[row] - u * x[k];
            }
            x[row] /= self.a[row * n + row];
        }
        x
    }
}

/// Loaded Hermitian Toeplitz matrix `T[j][k] = r(k - j) + eps [j == k]`
/// with `r(-l) = conj(r(l))`, row-major.
pub fn toeplitz(r: &[C64], order: usize) -> Vec<C64> {
    let eps = LOADING * r[0].norm();
    let mut t = vec![C64::new(0.0, 0.0); order * order];
    for j in 0..order {
        for k in 0..order {
            t[j * order + k] = if k >= j { r[k - j] } else { r[j - k].conj() };
        }
        t[j * order + j] += eps;
    }
    t
}

/// Coefficients of one entry for every requested horizon: solves
/// `V (Delta + eps I) = delta` with `delta = [r(p), ..., r(p+K-1)]`.
fn solve_entry(r: &[C64], order: usize, horizons: &[usize]) -> Result<Vec<Vec<C64>>> {
    let t = toeplitz(r, order);
    // V T = delta  <=>  T^T V^T = delta^T.
    let mut tt = vec![C64::new(0.0, 0.0); order * order];
    for j in 0..order {
        for k in 0..order {
            tt[k * order + j] = t[j * order + k];
        }
    }
    let lu = Lu::factor(order, tt)?;
    Ok(horizons
        .iter()
        .map(|&p| lu.solve(&r[p..p + order]))
        .collect())
}

/// Filter coefficients `V[b][m1][m2][n][k]` for one horizon `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerFilter {
    arrays: usize,
    antennas: usize,
    subcarriers: usize,
    order: usize,
    horizon: usize,
    v: Vec<C64>,
}

impl WienerFilter {
    pub fn from_raw(
        (arrays, antennas, subcarriers): (usize, usize, usize),
        order: usize,
        horizon: usize,
        v: Vec<C64>,
    ) -> Result<Self> {
        if v.len() != arrays * antennas * antennas * subcarriers * order {
            return Err(Error::DimensionMismatch(format!(
                "{} filter taps for shape ({arrays}, {antennas}, {subcarriers}) and K = {order}",
                v.len()
            )));
        }
        if v.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("Wiener filter".into()));
        }
        Ok(Self {
            arrays,
            antennas,
            subcarriers,
            order,
            horizon,
            v,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.arrays, self.antennas, self.subcarriers)
    }

    pub fn taps(&self, b: usize, m1: usize, m2: usize, n: usize) -> &[C64] {
        let e = ((b * self.antennas + m1) * self.antennas + m2) * self.subcarriers + n;
        &self.v[e * self.order..(e + 1) * self.order]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.v
    }

    fn check_memory(&self, memory: &[&CsiTensor]) -> Result<()> {
        if memory.len() != self.order {
            return Err(Error::DimensionMismatch(format!(
                "memory holds {} snapshots, filter order is {}",
                memory.len(),
                self.order
            )));
        }
        if let Some(h) = memory.iter().find(|h| h.shape() != self.shape()) {
            return Err(Error::DimensionMismatch(format!(
                "memory snapshot shape {:?}, filter expects {:?}",
                h.shape(),
                self.shape()
            )));
        }
        Ok(())
    }

    /// Symmetrized `Z` estimate for every `(b, n)`, `b`-major. `memory` is
    /// ordered most recent first.
    pub fn predict_autocorr(&self, memory: &[&CsiTensor]) -> Result<Vec<AutocorrMatrix>> {
        self.check_memory(memory)?;
        let (b_count, m_count, n_count) = self.shape();
        let mut out = Vec::with_capacity(b_count * n_count);
        let mut vecs: Vec<Vec<C64>> = vec![Vec::new(); self.order];
        for b in 0..b_count {
            for n in 0..n_count {
                for (v, h) in vecs.iter_mut().zip(memory) {
                    *v = h.antenna_vector(b, n);
                }
                let mut z = AutocorrMatrix::zeros(m_count);
                for m1 in 0..m_count {
                    for m2 in 0..m_count {
                        let taps = self.taps(b, m1, m2, n);
                        let s: C64 = taps
                            .iter()
                            .zip(&vecs)
                            .map(|(w, h)| w * (h[m1] * h[m2].conj()))
                            .sum();
                        z.set(m1, m2, s);
                    }
                }
                z.symmetrize();
                out.push(z);
            }
        }
        Ok(out)
    }

    /// Predicted CSI `p` steps after the head of `memory`.
    pub fn predict(&self, memory: &[&CsiTensor]) -> Result<CsiTensor> {
        let zs = self.predict_autocorr(memory)?;
        let (b_count, m_count, n_count) = self.shape();
        let mut out = CsiTensor::zeros(b_count, m_count, n_count);
        for (bn, z) in zs.iter().enumerate() {
            let h = reconstruct_csi(z)?;
            out.set_antenna_vector(bn / n_count, bn % n_count, &h);
        }
        Ok(out)
    }
}

/// Build the order-`k` filter for horizon `p`.
pub fn build_filter(model: &CorrelationModel, k: usize, p: usize) -> Result<WienerFilter> {
    let bank = WienerBank::build(model, k, &[p])?;
    Ok(bank.filters.into_iter().next().unwrap())
}

/// Filters of one order for several horizons, sharing one factorization
/// per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerBank {
    filters: Vec<WienerFilter>,
}

impl WienerBank {
    pub fn build(model: &CorrelationModel, k: usize, horizons: &[usize]) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig(
                "Wiener order K must be at least 1".into(),
            ));
        }
        let p_max = horizons.iter().copied().max().unwrap_or(0);
        if p_max + k - 1 > model.max_lag {
            return Err(Error::InvalidConfig(format!(
                "horizon {p_max} with K = {k} needs lag {}, model has {}",
                p_max + k - 1,
                model.max_lag
            )));
        }
        let per_entry: Vec<Vec<Vec<C64>>> = (0..model.entries())
            .into_par_iter()
            .map(|e| {
                let stride = model.max_lag + 1;
                solve_entry(&model.r[e * stride..(e + 1) * stride], k, horizons)
            })
            .collect::<Result<_>>()?;
        let filters = horizons
            .iter()
            .enumerate()
            .map(|(hi, &p)| {
                let v = per_entry
                    .iter()
                    .flat_map(|e| e[hi].iter().copied())
                    .collect();
                WienerFilter::from_raw(model.shape(), k, p, v)
            })
            .collect::<Result<_>>()?;
        Ok(Self { filters })
    }

    pub fn from_filters(filters: Vec<WienerFilter>) -> Result<Self> {
        if let Some(f) = filters.first() {
            if filters
                .iter()
                .any(|g| g.shape() != f.shape() || g.order != f.order)
            {
                return Err(Error::DimensionMismatch(
                    "bank filters differ in shape or order".into(),
                ));
            }
        }
        Ok(Self { filters })
    }

    pub fn filters(&self) -> &[WienerFilter] {
        &self.filters
    }

    pub fn horizons(&self) -> Vec<usize> {
        self.filters.iter().map(|f| f.horizon).collect()
    }

    pub fn filter(&self, p: usize) -> Option<&WienerFilter> {
        self.filters.iter().find(|f| f.horizon == p)
    }

    pub fn order(&self) -> Option<usize> {
        self.filters.first().map(|f| f.order)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        let (b, m, n) = self.filters.first().map_or((0, 0, 0), |f| f.shape());
        let k = self.order().unwrap_or(0);
        for v in [b, m, n, k, self.filters.len()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for f in &self.filters {
            w.write_all(&(f.horizon as u32).to_le_bytes())?;
            for c in &f.v {
                w.write_all(&c.re.to_le_bytes())?;
                w.write_all(&c.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::BadMagic {
                expected: "WNR1".into(),
                found: magic.to_vec(),
            });
        }
        let mut header = [0usize; 5];
        for h in header.iter_mut() {
            let mut buf = [0u8; 4];
            read_exact(&mut r, &mut buf, "header")?;
            *h = u32::from_le_bytes(buf) as usize;
        }
        let [b, m, n, k, count] = header;
        let taps = b
            .checked_mul(m * m)
            .and_then(|x| x.checked_mul(n))
            .and_then(|x| x.checked_mul(k))
            .filter(|&x| x <= 1 << 28)
            .ok_or_else(|| Error::DimensionMismatch("implausible filter dimensions".into()))?;
        let mut filters = Vec::with_capacity(count.min(1024));
        for i in 0..count {
            let mut buf = [0u8; 4];
            read_exact(&mut r, &mut buf, "horizon")?;
            let p = u32::from_le_bytes(buf) as usize;
            let mut raw = vec![0u8; taps * 16];
            read_exact(&mut r, &mut raw, &format!("filter {i}"))?;
            let v = raw
                .chunks_exact(16)
                .map(|c| {
                    C64::new(
                        f64::from_le_bytes(c[..8].try_into().unwrap()),
                        f64::from_le_bytes(c[8..].try_into().unwrap()),
                    )
                })
                .collect();
            filters.push(WienerFilter::from_raw((b, m, n), k, p, v)?);
        }
        Self::from_filters(filters)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            Error::Truncated(format!("filter file ends in {what}"))
        }
        _ => Error::Io(e),
    })
}
