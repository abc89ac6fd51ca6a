//! Phase-invariant CSI algebra: sample autocorrelation matrices and the
//! rank-1 reconstruction `h = sqrt(lambda_max) v_max`, which minimizes
//! `||Z - h h^H||_F` over all vectors.

use crate::error::{Error, Result};
use crate::C64;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 10_000;

/// Hermitian `M x M` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrMatrix {
    n: usize,
    data: Vec<C64>,
}

impl AutocorrMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![C64::new(0.0, 0.0); n * n],
        }
    }

    pub fn from_rows(n: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {n}x{n} matrix",
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.n + j] = v;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    /// `self += w * h h^H`.
    pub fn add_outer(&mut self, h: &[C64], w: f64) {
        assert_eq!(h.len(), self.n);
        for i in 0..self.n {
            let hi = h[i] * w;
            for j in 0..self.n {
                self.data[i * self.n + j] += hi * h[j].conj();
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Replace with `(Z + Z^H) / 2`.
    pub fn symmetrize(&mut self) {
        for i in 0..self.n {
            let d = self.get(i, i);
            self.set(i, i, C64::new(d.re, 0.0));
            for j in i + 1..self.n {
                let avg = (self.get(i, j) + self.get(j, i).conj()) * 0.5;
                self.set(i, j, avg);
                self.set(j, i, avg.conj());
            }
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).re).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        (0..self.n)
            .map(|i| {
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `||Z - Z^H||_F`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += (self.get(i, j) - self.get(j, i).conj()).norm_sqr();
            }
        }
        s.sqrt()
    }

    /// `||Z - h h^H||_F^2`.
    pub fn rank_one_residual(&self, h: &[C64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += (self.get(i, j) - h[i] * h[j].conj()).norm_sqr();
            }
        }
        s
    }
}

/// `Z = h h^H`.
pub fn sample_autocorr(h: &[C64]) -> AutocorrMatrix {
    let mut z = AutocorrMatrix::zeros(h.len());
    z.add_outer(h, 1.0);
    z
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Fixed pseudo-random start vector (splitmix64 from a constant seed).
fn start_vector(n: usize) -> Vec<C64> {
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut next = || {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    };
    let v: Vec<C64> = (0..n)
        .map(|_| C64::from_polar(0.5 + next(), std::f64::consts::TAU * next()))
        .collect();
    let s = norm(&v);
    v.into_iter().map(|x| x / s).collect()
}

/// `a * a` for Hermitian `a`; only the upper triangle is computed.
fn hermitian_square(a: &[C64], n: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in i..n {
            // (a a)_ij = sum_k a_ik a_jk^*, using a_kj = a_jk^*.
            let (ri, rj) = (&a[i * n..(i + 1) * n], &a[j * n..(j + 1) * n]);
            let (mut re, mut im) = (0.0, 0.0);
            for (x, y) in ri.iter().zip(rj) {
                re += x.re * y.re + x.im * y.im;
                im += x.im * y.re - x.re * y.im;
            }
            let s = C64::new(re, im);
            out[i * n + j] = s;
            out[j * n + i] = s.conj();
        }
    }
    out
}

fn mat_vec(a: &[C64], v: &[C64]) -> Vec<C64> {
    a.chunks(v.len())
        .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

/// Power iteration on `B = Z + shift I` where every step multiplies by the
/// current power of `B` and then squares it, so step `j` applies
/// `B^(2^j)`. Stops when successive Rayleigh quotients of `Z` agree.
fn power_iterate(z: &AutocorrMatrix, shift: f64, tol: f64) -> Result<Vec<C64>> {
    let n = z.dim();
    let floor = 1e-4 * z.frobenius_norm();
    let mut b: Vec<C64> = z.as_slice().to_vec();
    for i in 0..n {
        b[i * n + i] += shift;
    }
    let mut v = start_vector(n);
    let mut prev: Option<f64> = None;
    for _ in 0..MAX_ITERATIONS {
        let scale = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if scale == 0.0 || !scale.is_finite() {
            return Ok(v);
        }
        b.iter_mut().for_each(|x| *x /= scale);
        let w = mat_vec(&b, &v);
        let nw = norm(&w);
        if nw == 0.0 {
            // Start vector in the null space of the shifted matrix.
            return Ok(v);
        }
        v = w.into_iter().map(|x| x / nw).collect();
        let rq = dot(&v, &z.mul_vec(&v)).re;
        if let Some(p) = prev {
            if (rq - p).abs() <= tol * (rq.abs() + floor) {
                return Ok(v);
            }
        }
        prev = Some(rq);
        b = hermitian_square(&b, n);
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
    })
}

/// Largest eigenvalue of `z` and a unit eigenvector for it.
///
/// The iteration runs on `Z + ||Z||_F I`, which is positive semidefinite
/// with the same leading eigenvector, so indefinite inputs (Wiener
/// extrapolations need not be PSD) are handled too. Repeated squaring keeps
/// the iteration count small when the spectral gap is tiny. A zero matrix
/// yields `(0, e_1)`. With a degenerate leading eigenvalue any unit vector
/// of the leading eigenspace may be returned.
pub fn principal_eigpair(z: &AutocorrMatrix, tol: f64) -> Result<(f64, Vec<C64>)> {
    let n = z.dim();
    if z.as_slice()
        .iter()
        .any(|v| !v.re.is_finite() || !v.im.is_finite())
    {
        return Err(Error::NonFinite("autocorrelation matrix".into()));
    }
    let fro = z.frobenius_norm();
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    if fro == 0.0 {
        let mut e1 = vec![C64::new(0.0, 0.0); n];
        e1[0] = C64::new(1.0, 0.0);
        return Ok((0.0, e1));
    }
    let v = power_iterate(z, fro, tol)?;
    let lambda = dot(&v, &z.mul_vec(&v)).re;
    Ok((lambda, v))
}

/// Minimizer of `||Z - h h^H||_F`: `sqrt(lambda_max) v_max`, or zero when the
/// leading eigenvalue is not positive.
pub fn reconstruct_csi(z: &AutocorrMatrix) -> Result<Vec<C64>> {
    let (lambda, v) = principal_eigpair(z, DEFAULT_TOL)?;
    let s = lambda.max(0.0).sqrt() / norm(&v);
    Ok(v.into_iter().map(|x| x * s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn outer_products() {
        let z = sample_autocorr(&[c(1.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(
            z.as_slice(),
            &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]
        );

        let z = sample_autocorr(&[c(1.0, 0.0), c(0.0, 1.0)]);
        assert_eq!(
            z.as_slice(),
            &[c(1.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(1.0, 0.0)]
        );
        assert_eq!(z.trace(), 2.0);

        let h = [c(0.3, -1.2), c(2.0, 0.5)];
        let s = C64::from_polar(1.0, 0.77);
        let rotated: Vec<C64> = h.iter().map(|x| x * s).collect();
        let (a, b) = (sample_autocorr(&h), sample_autocorr(&rotated));
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn diagonal_matrix() {
        let z =
            AutocorrMatrix::from_rows(2, vec![c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)])
                .unwrap();
        let (l, v) = principal_eigpair(&z, DEFAULT_TOL).unwrap();
        assert!((l - 2.0).abs() < 1e-10);
        assert!((v[0].norm() - 1.0).abs() < 1e-6);
        assert!(v[1].norm() < 1e-5);
    }

    #[test]
    fn rank_one_matrix() {
        let r2 = 2f64.sqrt();
        let h = [c(r2, 0.0), c(0.0, r2)];
        let (l, v) = principal_eigpair(&sample_autocorr(&h), DEFAULT_TOL).unwrap();
        assert!((l - 4.0).abs() < 1e-12);
        // v = e^{j phi} h / 2
        let phase = v[0] / (h[0] / 2.0);
        assert!((phase.norm() - 1.0).abs() < 1e-12);
        assert!((v[1] - phase * h[1] / 2.0).norm() < 1e-12);
    }

    #[test]
    fn zero_matrix_conventions() {
        let z = AutocorrMatrix::zeros(3);
        let (l, v) = principal_eigpair(&z, DEFAULT_TOL).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(v[0], c(1.0, 0.0));
        assert!(reconstruct_csi(&z).unwrap().iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn reconstruction_recovers_rank_one_up_to_phase() {
        let h = [c(0.4, -0.1), c(-1.0, 0.3), c(0.2, 0.9)];
        let z = sample_autocorr(&h);
        let hh = reconstruct_csi(&z).unwrap();
        for (a, b) in h.iter().zip(&hh) {
            assert!((a.norm() - b.norm()).abs() < 1e-9);
        }
        assert!(z.rank_one_residual(&hh) < 1e-18);
    }

    #[test]
    fn negative_dominant_eigenvalue_is_skipped() {
        // eigenvalues 1 and -3
        let z =
            AutocorrMatrix::from_rows(2, vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-3.0, 0.0)])
                .unwrap();
        let (l, v) = principal_eigpair(&z, DEFAULT_TOL).unwrap();
        assert!((l - 1.0).abs() < 1e-9);
        assert!((v[0].norm() - 1.0).abs() < 1e-4);
        let neg = AutocorrMatrix::from_rows(1, vec![c(-2.0, 0.0)]).unwrap();
        assert_eq!(reconstruct_csi(&neg).unwrap(), vec![c(0.0, 0.0)]);
    }

    #[test]
    fn symmetrize_makes_hermitian() {
        let mut z =
            AutocorrMatrix::from_rows(2, vec![c(1.0, 0.2), c(0.5, 0.5), c(0.1, -0.3), c(2.0, 0.0)])
                .unwrap();
        z.symmetrize();
        assert_eq!(z.hermitian_defect(), 0.0);
        assert_eq!(z.get(0, 1), c(0.3, 0.4));
    }
}
