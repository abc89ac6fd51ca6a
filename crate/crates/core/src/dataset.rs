//! Synthetic distributed massive MIMO scenarios and the CSID container.
//!
//! The generator models a 2-D arena observed by `B` planar arrays. Each
//! snapshot superposes a line-of-sight path and single-bounce scatterer
//! paths, rotates the whole snapshot by a random global phase (the UE is not
//! phase-synchronized to the base station) and adds complex Gaussian noise.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::CsiTensor;
use crate::C64;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Timestamps are multiples of the sample interval snapped to this grid, so
/// consecutive differences are exact in floating point.
const TIME_GRID: f64 = (1u64 << 30) as f64;

const COINCIDENCE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayPose {
    pub position: [f64; 2],
    /// Broadside direction in radians.
    pub orientation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scatterer {
    pub position: [f64; 2],
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Arena {
    fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    /// Fixed piecewise-linear path. Sampling stops at the last waypoint.
    Waypoints(Vec<[f64; 2]>),
    /// Waypoints drawn uniformly from the arena shrunk by `margin`.
    Random { seed: u64, margin: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub antenna_rows: usize,
    pub antenna_cols: usize,
    pub num_subcarriers: usize,
    /// Hz.
    pub bandwidth: f64,
    /// Hz.
    pub carrier_frequency: f64,
    pub array_poses: Vec<ArrayPose>,
    pub scatterers: Vec<Scatterer>,
    pub arena: Arena,
    pub trajectory: Trajectory,
    /// m/s.
    pub speed: f64,
    /// s.
    pub sample_interval: f64,
    pub num_snapshots: usize,
    /// Standard deviation of the complex noise (both quadratures together).
    pub noise_std: f64,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub random_phase: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ScenarioConfig {
    /// Four 2x4 arrays at the corners of a 15 m x 13 m hall, facing its
    /// center, with a handful of wall and clutter scatterers.
    fn default() -> Self {
        let (w, h) = (15.0, 13.0);
        let corners = [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]];
        let center = [w / 2.0, h / 2.0];
        let array_poses = corners
            .iter()
            .map(|&c| ArrayPose {
                position: c,
                orientation: (center[1] - c[1]).atan2(center[0] - c[0]),
            })
            .collect();
        let scatterers = [
            ([7.5, -1.0], 0.6),
            ([16.0, 6.5], 0.6),
            ([7.5, 14.0], 0.6),
            ([-1.0, 6.5], 0.6),
            ([4.0, 4.0], 0.4),
            ([11.0, 9.5], 0.4),
            ([10.5, 3.0], 0.4),
            ([3.5, 10.0], 0.4),
        ]
        .iter()
        .map(|&(position, gain)| Scatterer { position, gain })
        .collect();
        Self {
            antenna_rows: 2,
            antenna_cols: 4,
            num_subcarriers: 64,
            bandwidth: 50e6,
            carrier_frequency: 1.024e9,
            array_poses,
            scatterers,
            arena: Arena {
                min: [0.0, 0.0],
                max: [w, h],
            },
            trajectory: Trajectory::Random {
                seed: 1,
                margin: 0.75,
            },
            speed: 0.3,
            sample_interval: 0.192,
            num_snapshots: 2000,
            // ~30 dB per-antenna SNR for a UE in the middle of the hall.
            noise_std: 3e-3,
            seed: 7,
            random_phase: true,
        }
    }
}

impl ScenarioConfig {
    pub fn num_arrays(&self) -> usize {
        self.array_poses.len()
    }

    pub fn antennas_per_array(&self) -> usize {
        self.antenna_rows * self.antenna_cols
    }

    /// Absolute frequency of subcarrier `n`.
    pub fn subcarrier_frequency(&self, n: usize) -> f64 {
        let spacing = self.bandwidth / self.num_subcarriers as f64;
        self.carrier_frequency + (n as f64 - (self.num_subcarriers / 2) as f64) * spacing
    }

    /// Sample interval actually used for timestamps.
    pub fn effective_interval(&self) -> f64 {
        (self.sample_interval * TIME_GRID).round() / TIME_GRID
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.array_poses.is_empty() {
            return bad("at least one array is required".into());
        }
        if self.antennas_per_array() < 2 {
            return bad(format!(
                "arrays need at least 2 antennas, got {}x{}",
                self.antenna_rows, self.antenna_cols
            ));
        }
        if self.num_subcarriers == 0 {
            return bad("num_subcarriers must be positive".into());
        }
        if !(self.sample_interval > 0.0) || self.effective_interval() <= 0.0 {
            return bad(format!(
                "sample_interval must be > 0, got {}",
                self.sample_interval
            ));
        }
        if !(self.speed >= 0.0) || !self.speed.is_finite() {
            return bad(format!("speed must be >= 0, got {}", self.speed));
        }
        if !(self.bandwidth > 0.0) || !(self.carrier_frequency > 0.0) {
            return bad("bandwidth and carrier_frequency must be positive".into());
        }
        if self.carrier_frequency - self.bandwidth / 2.0 <= 0.0 {
            return bad("band extends below 0 Hz".into());
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if self.num_snapshots == 0 {
            return bad("num_snapshots must be positive".into());
        }
        let a = &self.arena;
        if !(a.min[0] < a.max[0] && a.min[1] < a.max[1]) {
            return bad("arena must have positive extent".into());
        }
        for s in &self.scatterers {
            if !s.gain.is_finite() || !s.position.iter().all(|v| v.is_finite()) {
                return bad("scatterer parameters must be finite".into());
            }
            for (b, p) in self.array_poses.iter().enumerate() {
                if dist(s.position, p.position) < COINCIDENCE_EPS {
                    return Err(Error::DegenerateGeometry(format!(
                        "scatterer at {:?} coincides with array {b}",
                        s.position
                    )));
                }
            }
        }
        match &self.trajectory {
            Trajectory::Waypoints(w) => {
                if w.is_empty() {
                    return bad("trajectory needs at least one waypoint".into());
                }
                if let Some(p) = w.iter().find(|p| !a.contains(**p)) {
                    return bad(format!("waypoint {p:?} lies outside the arena"));
                }
            }
            Trajectory::Random { margin, .. } => {
                if !(*margin >= 0.0)
                    || 2.0 * margin >= a.max[0] - a.min[0]
                    || 2.0 * margin >= a.max[1] - a.min[1]
                {
                    return bad(format!("random trajectory margin {margin} is too large"));
                }
            }
        }
        Ok(())
    }
}

/// Dimensions shared by every snapshot of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_arrays: usize,
    pub antennas: usize,
    pub subcarriers: usize,
    pub sample_interval: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub csi: CsiTensor,
    pub position: Option<[f64; 2]>,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    meta: DatasetMeta,
    snapshots: Vec<Snapshot>,
}

impl Dataset {
    pub fn new(meta: DatasetMeta, snapshots: Vec<Snapshot>) -> Result<Self> {
        for (l, s) in snapshots.iter().enumerate() {
            if s.csi.shape() != (meta.num_arrays, meta.antennas, meta.subcarriers) {
                return Err(Error::DimensionMismatch(format!(
                    "snapshot {l} has shape {:?}, dataset expects {:?}",
                    s.csi.shape(),
                    (meta.num_arrays, meta.antennas, meta.subcarriers)
                )));
            }
            if !s.csi.is_finite() || !s.time.is_finite() {
                return Err(Error::NonFinite(format!("snapshot {l}")));
            }
            if l > 0 && s.time <= snapshots[l - 1].time {
                return Err(Error::InvalidConfig(format!(
                    "timestamps must increase strictly (snapshot {l})"
                )));
            }
        }
        Ok(Self { meta, snapshots })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    /// Ground-truth positions, if every snapshot carries one.
    pub fn positions(&self) -> Option<Vec<[f64; 2]>> {
        self.snapshots.iter().map(|s| s.position).collect()
    }

    /// CSI of every snapshot restricted to `subset`.
    pub fn subcarrier_subset(&self, subset: &[usize]) -> Result<Vec<CsiTensor>> {
        self.snapshots
            .iter()
            .map(|s| s.csi.select_subcarriers(subset))
            .collect()
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// UE positions at the sampling instants.
fn sample_trajectory(cfg: &ScenarioConfig) -> Vec<[f64; 2]> {
    let step = cfg.speed * cfg.effective_interval();
    let l = cfg.num_snapshots;
    let mut rng_waypoints;
    let mut next_waypoint: Box<dyn FnMut() -> Option<[f64; 2]>> = match &cfg.trajectory {
        Trajectory::Waypoints(w) => {
            let mut it = w.clone().into_iter();
            Box::new(move || it.next())
        }
        Trajectory::Random { seed, margin } => {
            rng_waypoints = ChaCha8Rng::seed_from_u64(*seed);
            let (lo, hi) = (cfg.arena.min, cfg.arena.max);
            let m = *margin;
            Box::new(move || {
                Some([
                    rng_waypoints.random_range(lo[0] + m..hi[0] - m),
                    rng_waypoints.random_range(lo[1] + m..hi[1] - m),
                ])
            })
        }
    };

    let start = next_waypoint().expect("validated: at least one waypoint");
    let mut out = Vec::with_capacity(l);
    out.push(start);
    if step == 0.0 {
        out.resize(l, start);
        return out;
    }
    let mut pos = start;
    let mut target = next_waypoint();
    while out.len() < l {
        let Some(tgt) = target else { break };
        // Walk `step` along the polyline, possibly across several waypoints.
        let mut remaining = step;
        let mut current_target = Some(tgt);
        while let Some(t) = current_target {
            let d = dist(pos, t);
            if d >= remaining {
                let f = remaining / d;
                pos = [pos[0] + f * (t[0] - pos[0]), pos[1] + f * (t[1] - pos[1])];
                remaining = 0.0;
                break;
            }
            remaining -= d;
            pos = t;
            current_target = next_waypoint();
        }
        target = current_target;
        if remaining > 0.0 {
            // Ran out of waypoints mid-step.
            break;
        }
        out.push(pos);
    }
    out
}

struct Path {
    gain: f64,
    delay: f64,
    /// Angle of arrival relative to broadside.
    angle: f64,
}

fn paths_for(cfg: &ScenarioConfig, pose: &ArrayPose, ue: [f64; 2]) -> Vec<Path> {
    let angle_from = |from: [f64; 2]| {
        let a = (from[1] - pose.position[1]).atan2(from[0] - pose.position[0]);
        a - pose.orientation
    };
    let d_los = dist(ue, pose.position);
    let mut paths = vec![Path {
        gain: 1.0 / d_los,
        delay: d_los / SPEED_OF_LIGHT,
        angle: angle_from(ue),
    }];
    for s in &cfg.scatterers {
        let total = dist(ue, s.position) + dist(s.position, pose.position);
        paths.push(Path {
            gain: s.gain / total,
            delay: total / SPEED_OF_LIGHT,
            angle: angle_from(s.position),
        });
    }
    paths
}

/// Noise-free, unrotated channel of a UE at `ue`.
pub fn geometric_channel(cfg: &ScenarioConfig, ue: [f64; 2]) -> CsiTensor {
    let (b_count, m_count, n_count) = (
        cfg.num_arrays(),
        cfg.antennas_per_array(),
        cfg.num_subcarriers,
    );
    let spacing = SPEED_OF_LIGHT / cfg.carrier_frequency / 2.0;
    let mut h = CsiTensor::zeros(b_count, m_count, n_count);
    for (b, pose) in cfg.array_poses.iter().enumerate() {
        for path in paths_for(cfg, pose, ue) {
            let sin_a = path.angle.sin();
            for n in 0..n_count {
                let f = cfg.subcarrier_frequency(n);
                let k = 2.0 * PI * f / SPEED_OF_LIGHT;
                let base = -2.0 * PI * f * path.delay;
                for m in 0..m_count {
                    // In the horizontal plane all rows share a column's phase.
                    let col = (m % cfg.antenna_cols) as f64;
                    let phase = base + k * col * spacing * sin_a;
                    let v = h.get(b, m, n) + C64::from_polar(path.gain, phase);
                    h.set(b, m, n, v);
                }
            }
        }
    }
    h
}

/// Generate a dataset for `cfg`. Deterministic given the configured seeds.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Dataset> {
    cfg.validate()?;
    let positions = sample_trajectory(cfg);
    for (l, p) in positions.iter().enumerate() {
        for (b, pose) in cfg.array_poses.iter().enumerate() {
            if dist(*p, pose.position) < COINCIDENCE_EPS {
                return Err(Error::DegenerateGeometry(format!(
                    "UE position {l} coincides with array {b}"
                )));
            }
        }
        if let Some(s) = cfg
            .scatterers
            .iter()
            .find(|s| dist(*p, s.position) < COINCIDENCE_EPS)
        {
            return Err(Error::DegenerateGeometry(format!(
                "UE position {l} coincides with scatterer at {:?}",
                s.position
            )));
        }
    }

    let dt = cfg.effective_interval();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let quadrature_std = cfg.noise_std / 2f64.sqrt();
    let mut snapshots = Vec::with_capacity(positions.len());
    for (l, &p) in positions.iter().enumerate() {
        let theta: f64 = rng.random_range(0.0..2.0 * PI);
        let s = if cfg.random_phase {
            C64::from_polar(1.0, theta)
        } else {
            C64::new(1.0, 0.0)
        };
        let mut h = geometric_channel(cfg, p);
        for v in h.as_mut_slice() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let noisy = *v * s + C64::new(re, im) * quadrature_std;
            // Stored at container precision so write/read is lossless.
            *v = C64::new(noisy.re as f32 as f64, noisy.im as f32 as f64);
        }
        snapshots.push(Snapshot {
            csi: h,
            position: Some(p),
            time: l as f64 * dt,
        });
    }
    let meta = DatasetMeta {
        num_arrays: cfg.num_arrays(),
        antennas: cfg.antennas_per_array(),
        subcarriers: cfg.num_subcarriers,
        sample_interval: dt,
    };
    Dataset::new(meta, snapshots)
}

const CSID_MAGIC: &[u8; 4] = b"CSID";
const CSID_VERSION: u8 = 0x01;
const CSID_HEADER_LEN: usize = 5 + 4 * 3 + 8 + 8;

/// Serialize `d` into the CSID container.
pub fn write_dataset<W: Write>(d: &Dataset, mut sink: W) -> Result<()> {
    let m = &d.meta;
    let mut buf = Vec::with_capacity(CSID_HEADER_LEN);
    buf.extend_from_slice(CSID_MAGIC);
    buf.push(CSID_VERSION);
    for dim in [m.num_arrays, m.antennas, m.subcarriers] {
        let v = u32::try_from(dim)
            .map_err(|_| Error::DimensionMismatch(format!("{dim} does not fit in u32")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(d.snapshots.len() as u64).to_le_bytes());
    buf.extend_from_slice(&m.sample_interval.to_le_bytes());
    sink.write_all(&buf)?;

    let mut record = Vec::with_capacity(24 + 8 * m.num_arrays * m.antennas * m.subcarriers);
    for s in &d.snapshots {
        record.clear();
        let [x1, x2] = s.position.unwrap_or([f64::NAN, f64::NAN]);
        for v in [s.time, x1, x2] {
            record.extend_from_slice(&v.to_le_bytes());
        }
        for v in s.csi.as_slice() {
            record.extend_from_slice(&(v.re as f32).to_le_bytes());
            record.extend_from_slice(&(v.im as f32).to_le_bytes());
        }
        sink.write_all(&record)?;
    }
    Ok(())
}

/// Parse a CSID container.
pub fn read_dataset<R: Read>(mut source: R) -> Result<Dataset> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() < 5 || &bytes[..4] != CSID_MAGIC {
        return Err(Error::BadMagic {
            expected: "CSID".into(),
            found: bytes.iter().take(4).copied().collect(),
        });
    }
    if bytes[4] != CSID_VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    if bytes.len() < CSID_HEADER_LEN {
        return Err(Error::Truncated(format!(
            "header needs {CSID_HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (b, m, n) = (u32_at(5), u32_at(9), u32_at(13));
    let l = u64::from_le_bytes(bytes[17..25].try_into().unwrap()) as usize;
    let dt = f64::from_le_bytes(bytes[25..33].try_into().unwrap());

    let values = b * m * n;
    let record_len = 24 + 8 * values;
    let payload = bytes.len() - CSID_HEADER_LEN;
    let expected = l
        .checked_mul(record_len)
        .ok_or_else(|| Error::DimensionMismatch("header dimensions overflow".into()))?;
    if payload != expected {
        // A payload made of whole records of some other size means the header
        // dimensions are wrong, anything else is a cut-off file.
        let other_shape = l > 0
            && payload.is_multiple_of(l)
            && payload / l > 24
            && (payload / l - 24).is_multiple_of(8)
            && payload / l != record_len;
        if other_shape || payload > expected {
            return Err(Error::DimensionMismatch(format!(
                "header says {l} records of {b}x{m}x{n} ({expected} bytes), payload has {payload} bytes"
            )));
        }
        return Err(Error::Truncated(format!(
            "payload ends after {payload} of {expected} bytes (record {} of {l})",
            payload / record_len
        )));
    }

    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
    let mut snapshots = Vec::with_capacity(l);
    for r in 0..l {
        let o = CSID_HEADER_LEN + r * record_len;
        let (t, x1, x2) = (f64_at(o), f64_at(o + 8), f64_at(o + 16));
        let position = if x1.is_nan() && x2.is_nan() {
            None
        } else {
            Some([x1, x2])
        };
        let data = (0..values)
            .map(|k| {
                let p = o + 24 + 8 * k;
                C64::new(f32_at(p), f32_at(p + 4))
            })
            .collect();
        snapshots.push(Snapshot {
            csi: CsiTensor::from_vec(b, m, n, data)?,
            position,
            time: t,
        });
    }
    let meta = DatasetMeta {
        num_arrays: b,
        antennas: m,
        subcarriers: n,
        sample_interval: dt,
    };
    Dataset::new(meta, snapshots)
}
