//! Forward charting function: a dense tanh network trained with a Siamese
//! loss against the dissimilarity matrix.

use std::io::{BufRead, Read, Write};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dissimilarity::DissimilarityMatrix;
use crate::error::{Error, Result};
use crate::features::CsiFeature;

const MAGIC: &[u8; 4] = b"FCF1";

/// A point in the 2-D channel chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartPosition(pub [f64; 2]);

impl ChartPosition {
    pub fn distance(&self, other: &ChartPosition) -> f64 {
        (self.0[0] - other.0[0]).hypot(self.0[1] - other.0[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Siamese weighting; `None` uses the median dissimilarity.
    pub beta: Option<f64>,
    pub epochs: usize,
    /// Points per block; every pair inside a block enters the step.
    pub batch_points: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: None,
            epochs: 50,
            batch_points: 32,
            learning_rate: 1e-3,
            seed: 0,
            hidden: vec![256, 128, 64],
        }
    }
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    /// `out x in`.
    w: Array2<f64>,
    b: Array1<f64>,
}

/// Dense network `input -> hidden... -> 2` with tanh between layers and a
/// linear, scaled output. Inputs are standardized with stored statistics.
/// All parameters are kept f32-representable so the model file is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct FcfModel {
    input_dim: usize,
    layers: Vec<Dense>,
    mean: Vec<f64>,
    std: Vec<f64>,
    output_scale: f64,
}

struct Grads {
    layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl FcfModel {
    /// Glorot-uniform weights, zero biases, identity standardization.
    pub fn new(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(2);
        let layers = dims
            .windows(2)
            .map(|io| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                    round_f32(rng.random_range(-limit..limit))
                });
                Dense {
                    w,
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            input_dim,
            layers,
            mean: vec![0.0; input_dim],
            std: vec![1.0; input_dim],
            output_scale: 1.0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Layer widths from input to output.
    pub fn architecture(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(self.layers.iter().map(|l| l.b.len()));
        dims
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn set_output_scale(&mut self, s: f64) -> Result<()> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidConfig(format!("output scale {s}")));
        }
        self.output_scale = round_f32(s);
        Ok(())
    }

    /// Per-dimension mean and standard deviation of `features`; constant
    /// dimensions get unit scale.
    pub fn fit_standardization(&mut self, features: &[CsiFeature]) -> Result<()> {
        if features.is_empty() {
            return Err(Error::InsufficientData("no features to standardize".into()));
        }
        self.check_features(features.iter())?;
        let n = features.len() as f64;
        for d in 0..self.input_dim {
            let mean = features.iter().map(|f| f.0[d]).sum::<f64>() / n;
            let var = features
                .iter()
                .map(|f| (f.0[d] - mean).powi(2))
                .sum::<f64>()
                / n;
            let std = round_f32(var.sqrt());
            self.mean[d] = round_f32(mean);
            self.std[d] = if std > 0.0 && std.is_finite() {
                std
            } else {
                1.0
            };
        }
        Ok(())
    }

    fn check_features<'a>(&self, mut it: impl Iterator<Item = &'a CsiFeature>) -> Result<()> {
        match it.find(|f| f.len() != self.input_dim) {
            Some(f) => Err(Error::DimensionMismatch(format!(
                "feature length {}, model expects {}",
                f.len(),
                self.input_dim
            ))),
            None => Ok(()),
        }
    }

    fn standardize(&self, features: &[&CsiFeature]) -> Array2<f64> {
        let mut x = Array2::zeros((features.len(), self.input_dim));
        for (mut row, f) in x.rows_mut().into_iter().zip(features) {
            for (d, v) in row.iter_mut().enumerate() {
                *v = (f.0[d] - self.mean[d]) / self.std[d];
            }
        }
        x
    }

    /// Activations of every layer; the last entry is the chart output.
    fn forward_cache(&self, x: Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![x];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut a = acts[i].dot(&layer.w.t()) + &layer.b;
            if i == last {
                a *= self.output_scale;
            } else {
                a.mapv_inplace(f64::tanh);
            }
            acts.push(a);
        }
        acts
    }

    fn backward(&self, acts: &[Array2<f64>], dz: Array2<f64>) -> Grads {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = dz * self.output_scale;
        for i in (0..self.layers.len()).rev() {
            let gw = delta.t().dot(&acts[i]);
            let gb = delta.sum_axis(Axis(0));
            grads.push((gw, gb));
            if i > 0 {
                let mut prev = delta.dot(&self.layers[i].w);
                prev.zip_mut_with(&acts[i], |g, a| *g *= 1.0 - a * a);
                delta = prev;
            }
        }
        grads.reverse();
        Grads { layers: grads }
    }

    pub fn forward(&self, f: &CsiFeature) -> Result<ChartPosition> {
        Ok(self.forward_batch(std::slice::from_ref(f))?[0])
    }

    pub fn forward_batch(&self, features: &[CsiFeature]) -> Result<Vec<ChartPosition>> {
        self.check_features(features.iter())?;
        let mut out = Vec::with_capacity(features.len());
        for chunk in features.chunks(256) {
            let refs: Vec<&CsiFeature> = chunk.iter().collect();
            let acts = self.forward_cache(self.standardize(&refs));
            let z = acts.last().unwrap();
            out.extend(z.rows().into_iter().map(|r| ChartPosition([r[0], r[1]])));
        }
        Ok(out)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in layer order, weights (row-major) before biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a model with {}",
                params.len(),
                self.num_parameters()
            )));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    fn round_parameters(&mut self) {
        for l in &mut self.layers {
            l.w.mapv_inplace(round_f32);
            l.b.mapv_inplace(round_f32);
        }
    }

    fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.input_dim as u32).to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.b.len() as u32).to_le_bytes())?;
        }
        let f32s = std::iter::once(self.output_scale)
            .chain(self.mean.iter().copied())
            .chain(self.std.iter().copied())
            .chain(self.parameters());
        for v in f32s {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::BadMagic {
                expected: "FCF1".into(),
                found: magic.to_vec(),
            });
        }
        let input_dim = read_u32(&mut r)?;
        let n_layers = read_u32(&mut r)?;
        if n_layers == 0 || n_layers > 64 || input_dim == 0 || input_dim > 1 << 24 {
            return Err(Error::DimensionMismatch(format!(
                "implausible model header ({input_dim} inputs, {n_layers} layers)"
            )));
        }
        let widths: Vec<usize> = (0..n_layers)
            .map(|_| read_u32(&mut r))
            .collect::<Result<_>>()?;
        if widths.last() != Some(&2) || widths.iter().any(|&w| w == 0 || w > 1 << 16) {
            return Err(Error::DimensionMismatch(format!("layer widths {widths:?}")));
        }
        let mut model = Self::new(input_dim, &widths[..widths.len() - 1], 0)?;
        let mut read_f32 = || -> Result<f64> {
            let mut b = [0u8; 4];
            read_exact(&mut r, &mut b)?;
            Ok(f32::from_le_bytes(b) as f64)
        };
        model.output_scale = read_f32()?;
        for d in 0..input_dim {
            model.mean[d] = read_f32()?;
        }
        for d in 0..input_dim {
            model.std[d] = read_f32()?;
        }
        let params: Vec<f64> = (0..model.num_parameters())
            .map(|_| read_f32())
            .collect::<Result<_>>()?;
        model.set_parameters(&params)?;
        if !model.is_finite() || !model.output_scale.is_finite() {
            return Err(Error::NonFinite("model file".into()));
        }
        Ok(model)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated("model file".into()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

/// `sum (d - |z_i - z_j|)^2 / (d + beta)` over the given pairs.
pub fn siamese_loss(pairs: &[(ChartPosition, ChartPosition, f64)], beta: f64) -> Result<f64> {
    let mut total = 0.0;
    for (zi, zj, d) in pairs {
        let w = d + beta;
        if w == 0.0 {
            return Err(Error::InvalidConfig(
                "pair with zero dissimilarity and beta = 0".into(),
            ));
        }
        total += (d - zi.distance(zj)).powi(2) / w;
    }
    Ok(total)
}

/// Loss over `pairs` (indices into the rows of `z`) scaled by `weight`, and
/// its gradient with respect to `z`.
fn pair_loss_grad(
    z: &Array2<f64>,
    pairs: &[(usize, usize, f64)],
    beta: f64,
    weight: f64,
) -> Result<(f64, Array2<f64>)> {
    let mut grad = Array2::zeros(z.raw_dim());
    let mut loss = 0.0;
    for &(i, j, d) in pairs {
        let w = d + beta;
        if w == 0.0 {
            return Err(Error::InvalidConfig(
                "pair with zero dissimilarity and beta = 0".into(),
            ));
        }
        let dx = [z[[i, 0]] - z[[j, 0]], z[[i, 1]] - z[[j, 1]]];
        let e = dx[0].hypot(dx[1]);
        loss += weight * (d - e).powi(2) / w;
        if e > 0.0 {
            let g = weight * -2.0 * (d - e) / (w * e);
            for c in 0..2 {
                grad[[i, c]] += g * dx[c];
                grad[[j, c]] -= g * dx[c];
            }
        }
    }
    Ok((loss, grad))
}

/// Summed Siamese loss over index pairs and its gradient in parameter order.
pub fn loss_gradient(
    model: &FcfModel,
    features: &[CsiFeature],
    pairs: &[(usize, usize, f64)],
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    model.check_features(features.iter())?;
    let refs: Vec<&CsiFeature> = features.iter().collect();
    let acts = model.forward_cache(model.standardize(&refs));
    let (loss, dz) = pair_loss_grad(acts.last().unwrap(), pairs, beta, 1.0)?;
    let grads = model.backward(&acts, dz);
    let flat = grads
        .layers
        .iter()
        .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
        .collect();
    Ok((loss, flat))
}

fn summed_loss(
    model: &FcfModel,
    features: &[CsiFeature],
    pairs: &[(usize, usize, f64)],
    beta: f64,
) -> Result<f64> {
    let z = model.forward_batch(features)?;
    let triples: Vec<_> = pairs.iter().map(|&(i, j, d)| (z[i], z[j], d)).collect();
    siamese_loss(&triples, beta)
}

/// Central finite-difference gradient of the summed loss.
pub fn numeric_gradient(
    model: &FcfModel,
    features: &[CsiFeature],
    pairs: &[(usize, usize, f64)],
    beta: f64,
    step: f64,
) -> Result<Vec<f64>> {
    let base = model.parameters();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut params = base.clone();
    for i in 0..base.len() {
        params[i] = base[i] + step;
        probe.set_parameters(&params)?;
        let up = summed_loss(&probe, features, pairs, beta)?;
        params[i] = base[i] - step;
        probe.set_parameters(&params)?;
        let down = summed_loss(&probe, features, pairs, beta)?;
        params[i] = base[i];
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Largest relative disagreement between the backpropagated gradient and
/// central differences (step `1e-4`). Components far below the largest one
/// (the output bias, for instance, has an exactly zero gradient) are compared
/// on the floor `max(1e-7, 1e-6 max|g|)` since differencing leaves roundoff
/// of that order.
pub fn gradient_check(
    model: &FcfModel,
    features: &[CsiFeature],
    pairs: &[(usize, usize, f64)],
    beta: f64,
) -> Result<f64> {
    let (_, analytic) = loss_gradient(model, features, pairs, beta)?;
    let numeric = numeric_gradient(model, features, pairs, beta, 1e-4)?;
    let floor = analytic.iter().fold(0.0, |m: f64, g| m.max(g.abs())) * 1e-6;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor).max(1e-7))
        .fold(0.0, f64::max))
}

struct Adam {
    lr: f64,
    t: i32,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &FcfModel, lr: f64) -> Self {
        let zeros = || {
            model
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.len())))
                .collect()
        };
        Self {
            lr,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    fn step(&mut self, model: &mut FcfModel, grads: &Grads) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        };
        for (i, layer) in model.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[i];
            let (mw, mb) = &mut self.m[i];
            let (vw, vb) = &mut self.v[i];
            for (((p, g), m), v) in layer
                .w
                .iter_mut()
                .zip(gw)
                .zip(mw.iter_mut())
                .zip(vw.iter_mut())
            {
                update(p, *g, m, v);
            }
            for (((p, g), m), v) in layer
                .b
                .iter_mut()
                .zip(gb)
                .zip(mb.iter_mut())
                .zip(vb.iter_mut())
            {
                update(p, *g, m, v);
            }
        }
    }
}

/// Trained model with the mean per-pair loss over all pairs before training
/// and after each epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FcfModel,
    pub beta: f64,
    pub history: Vec<f64>,
}

/// Mean Siamese loss over all unordered pairs.
pub fn mean_pair_loss(chart: &[ChartPosition], d: &DissimilarityMatrix, beta: f64) -> Result<f64> {
    let n = chart.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        let row = d.row(i);
        for j in i + 1..n {
            let dij = row[j] as f64;
            let w = dij + beta;
            if w == 0.0 {
                return Err(Error::InvalidConfig(
                    "pair with zero dissimilarity and beta = 0".into(),
                ));
            }
            total += (dij - chart[i].distance(&chart[j])).powi(2) / w;
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Fit the charting function to `d`.
///
/// Each epoch shuffles the points into blocks of `batch_points` and takes one
/// optimizer step per block on the mean loss over all pairs inside it, so
/// every unordered pair is equally likely to be visited.
pub fn train(
    features: &[CsiFeature],
    d: &DissimilarityMatrix,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let n = features.len();
    if n != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "{n} features for a {0}x{0} dissimilarity matrix",
            d.len()
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientData(
            "need at least 2 training points".into(),
        ));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidConfig(
            "learning_rate must be positive".into(),
        ));
    }
    if cfg.batch_points < 2 {
        return Err(Error::InvalidConfig(
            "batch_points must be at least 2".into(),
        ));
    }
    let beta = match cfg.beta {
        Some(b) => b,
        None => d.median_off_diagonal(),
    };
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidConfig(format!("beta = {beta}")));
    }

    let mut model = FcfModel::new(features[0].len(), &cfg.hidden, cfg.seed)?;
    model.fit_standardization(features)?;
    let mean_d = d.upper_triangle().sum::<f64>() / (n * (n - 1) / 2) as f64;
    model.set_output_scale(if mean_d > 0.0 { mean_d } else { 1.0 })?;

    let refs: Vec<&CsiFeature> = features.iter().collect();
    let x = model.standardize(&refs);
    let chart = |m: &FcfModel| -> Vec<ChartPosition> {
        let z = m.forward_cache(x.clone()).pop().unwrap();
        z.rows()
            .into_iter()
            .map(|r| ChartPosition([r[0], r[1]]))
            .collect()
    };
    let mut history = vec![mean_pair_loss(&chart(&model), d, beta)?];
    let mut adam = Adam::new(&model, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_b10c);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for block in order.chunks(cfg.batch_points) {
            if block.len() < 2 {
                continue;
            }
            let xb = x.select(Axis(0), block);
            let acts = model.forward_cache(xb);
            let mut pairs = Vec::with_capacity(block.len() * (block.len() - 1) / 2);
            for a in 0..block.len() {
                for b in a + 1..block.len() {
                    pairs.push((a, b, d.get(block[a], block[b])));
                }
            }
            let weight = 1.0 / pairs.len() as f64;
            let (loss, dz) = pair_loss_grad(acts.last().unwrap(), &pairs, beta, weight)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    detail: format!("block loss {loss}"),
                });
            }
            let grads = model.backward(&acts, dz);
            adam.step(&mut model, &grads);
        }
        let loss = mean_pair_loss(&chart(&model), d, beta)?;
        if !loss.is_finite() || !model.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                detail: format!("mean pair loss {loss}"),
            });
        }
        history.push(loss);
    }
    model.round_parameters();
    Ok(TrainOutcome {
        model,
        beta,
        history,
    })
}

/// Chart positions as `index,z1,z2` rows.
pub fn write_chart_csv<W: Write>(chart: &[ChartPosition], mut w: W) -> Result<()> {
    writeln!(w, "index,z1,z2")?;
    for (i, z) in chart.iter().enumerate() {
        writeln!(w, "{i},{},{}", z.0[0], z.0[1])?;
    }
    Ok(())
}

pub fn read_chart_csv<R: BufRead>(r: R) -> Result<Vec<ChartPosition>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::InvalidConfig(format!("chart CSV line {}: {line:?}", lineno + 1));
        let mut cols = line.split(',');
        let idx: usize = cols.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let z1: f64 = cols.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let z2: f64 = cols.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if idx != out.len() {
            return Err(bad());
        }
        out.push(ChartPosition([z1, z2]));
    }
    Ok(out)
}
