use crate::error::{Error, Result};
use crate::C64;

/// Complex CSI tensor with shape `[arrays][antennas][subcarriers]`, stored
/// subcarrier-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiTensor {
    arrays: usize,
    antennas: usize,
    subcarriers: usize,
    data: Vec<C64>,
}

impl CsiTensor {
    pub fn zeros(arrays: usize, antennas: usize, subcarriers: usize) -> Self {
        Self {
            arrays,
            antennas,
            subcarriers,
            data: vec![C64::new(0.0, 0.0); arrays * antennas * subcarriers],
        }
    }

    pub fn from_vec(
        arrays: usize,
        antennas: usize,
        subcarriers: usize,
        data: Vec<C64>,
    ) -> Result<Self> {
        if data.len() != arrays * antennas * subcarriers {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {arrays}x{antennas}x{subcarriers} tensor",
                data.len()
            )));
        }
        Ok(Self {
            arrays,
            antennas,
            subcarriers,
            data,
        })
    }

    pub fn arrays(&self) -> usize {
        self.arrays
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.arrays, self.antennas, self.subcarriers)
    }

    #[inline]
    fn offset(&self, b: usize, m: usize, n: usize) -> usize {
        debug_assert!(b < self.arrays && m < self.antennas && n < self.subcarriers);
        (b * self.antennas + m) * self.subcarriers + n
    }

    #[inline]
    pub fn get(&self, b: usize, m: usize, n: usize) -> C64 {
        self.data[self.offset(b, m, n)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, m: usize, n: usize, v: C64) {
        let i = self.offset(b, m, n);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// Antenna vector `H[b, :, n]`.
    pub fn antenna_vector(&self, b: usize, n: usize) -> Vec<C64> {
        (0..self.antennas).map(|m| self.get(b, m, n)).collect()
    }

    pub fn set_antenna_vector(&mut self, b: usize, n: usize, h: &[C64]) {
        assert_eq!(h.len(), self.antennas);
        for (m, &v) in h.iter().enumerate() {
            self.set(b, m, n, v);
        }
    }

    /// Subcarrier row `H[b, m, :]`.
    pub fn subcarrier_row(&self, b: usize, m: usize) -> &[C64] {
        let start = self.offset(b, m, 0);
        &self.data[start..start + self.subcarriers]
    }

    /// Keep only the listed subcarriers, in the given order.
    pub fn select_subcarriers(&self, subset: &[usize]) -> Result<Self> {
        if let Some(&bad) = subset.iter().find(|&&n| n >= self.subcarriers) {
            return Err(Error::DimensionMismatch(format!(
                "subcarrier {bad} out of range for {} subcarriers",
                self.subcarriers
            )));
        }
        let mut out = Self::zeros(self.arrays, self.antennas, subset.len());
        for b in 0..self.arrays {
            for m in 0..self.antennas {
                for (k, &n) in subset.iter().enumerate() {
                    out.set(b, m, k, self.get(b, m, n));
                }
            }
        }
        Ok(out)
    }

    /// Multiply every entry by `s`.
    pub fn scaled(&self, s: C64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// `count` subcarrier indices equally spaced over `total`.
pub fn equally_spaced_subcarriers(total: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > total {
        return Err(Error::InvalidConfig(format!(
            "cannot pick {count} subcarriers out of {total}"
        )));
    }
    Ok((0..count).map(|i| i * total / count).collect())
}
