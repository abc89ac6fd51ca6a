//! Independent oracles shared by the module suites and the acceptance run.
#![allow(dead_code)]

use ccpred::geometry::orient;
use ccpred::phase_linalg::sample_autocorr;
use ccpred::wiener::{normalized_correlation, LOADING};
use ccpred::{AutocorrMatrix, CorrelationModel, Triangulation, C64};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `A A^H` for a random square `A`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> AutocorrMatrix {
    let mut z = AutocorrMatrix::zeros(n);
    for _ in 0..n {
        z.add_outer(&random_vector(rng, n), 1.0);
    }
    z
}

/// Largest eigenvalue and its eigenvector from a dense Hermitian solver.
pub fn eig_oracle(z: &AutocorrMatrix) -> (f64, Vec<C64>) {
    let n = z.dim();
    let eig = DMatrix::from_fn(n, n, |i, j| z.get(i, j)).symmetric_eigen();
    let (i, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    (lambda, eig.eigenvectors.column(i).iter().copied().collect())
}

/// Frobenius distance between `a a^H` and `b b^H`, blind to a common phase.
pub fn outer_distance(a: &[C64], b: &[C64]) -> f64 {
    let (za, zb) = (sample_autocorr(a), sample_autocorr(b));
    za.as_slice()
        .iter()
        .zip(zb.as_slice())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Correlation coefficients of a random moving-average process, which
/// always form a positive semidefinite Toeplitz matrix.
pub fn random_coefficients(rng: &mut ChaCha8Rng, max_lag: usize) -> Vec<C64> {
    let taps: Vec<C64> = (0..3).map(|_| gaussian(rng)).collect();
    let x: Vec<C64> = (0..400)
        .map(|_| gaussian(rng))
        .collect::<Vec<_>>()
        .windows(taps.len())
        .map(|w| w.iter().zip(&taps).map(|(a, b)| a * b).sum())
        .collect();
    normalized_correlation(&x, max_lag).unwrap()
}

/// Filter taps of one Z entry by a dense LU solve of the transposed system
/// `V (Delta + eps I) = delta`.
pub fn dense_wiener_taps(
    model: &CorrelationModel,
    k: usize,
    p: usize,
    entry: (usize, usize, usize, usize),
) -> Vec<C64> {
    let (b, m1, m2, n) = entry;
    let r = model.coefficients(b, m1, m2, n);
    let eps = LOADING * r[0].norm();
    let delta = DMatrix::from_fn(k, k, |j, c| {
        let v = if c >= j { r[c - j] } else { r[j - c].conj() };
        if j == c {
            v + eps
        } else {
            v
        }
    });
    let rhs = DVector::from_iterator(k, r[p..p + k].iter().copied());
    delta
        .transpose()
        .lu()
        .solve(&rhs)
        .unwrap()
        .iter()
        .copied()
        .collect()
}

/// A random correlation model with one MA-process sequence per Z entry.
pub fn random_model(
    rng: &mut ChaCha8Rng,
    shape: (usize, usize, usize),
    max_lag: usize,
) -> CorrelationModel {
    let (arrays, antennas, subcarriers) = shape;
    let entries = arrays * antennas * antennas * subcarriers;
    let r: Vec<C64> = (0..entries)
        .flat_map(|_| random_coefficients(rng, max_lag))
        .collect();
    CorrelationModel::from_raw(arrays, antennas, subcarriers, max_lag, r).unwrap()
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
        .collect()
}

/// Plain floating-point incircle determinant, positive when `d` lies inside
/// the circle through the counter-clockwise triangle `a b c`.
pub fn incircle_det(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
        + (bdx * bdx + bdy * bdy) * (cdx * ady - adx * cdy)
        + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady)
}

/// First counter-clockwise triangle containing `p`, boundary included.
pub fn brute_force_locate(tri: &Triangulation, p: [f64; 2]) -> Option<usize> {
    (0..tri.num_triangles()).find(|&t| {
        let [a, b, c] = tri.triangle_points(t);
        orient(a, b, p) >= 0 && orient(b, c, p) >= 0 && orient(c, a, p) >= 0
    })
}

/// Violations of the empty-circumcircle property, with `slack` on the
/// incircle determinant.
pub fn circumcircle_violations(tri: &Triangulation, pts: &[[f64; 2]], slack: f64) -> usize {
    let mut bad = 0;
    for t in 0..tri.num_triangles() {
        let [a, b, c] = tri.triangle_points(t);
        if orient(a, b, c) != 1 {
            bad += 1;
        }
        for (i, &d) in pts.iter().enumerate() {
            if !tri.triangle_labels(t).contains(&i) && incircle_det(a, b, c, d) > slack {
                bad += 1;
            }
        }
    }
    bad
}
