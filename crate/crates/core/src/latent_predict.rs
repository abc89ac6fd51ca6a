//! Linear extrapolation of recent chart positions.

use std::collections::VecDeque;

use crate::charting::ChartPosition;
use crate::error::{Error, Result};

/// The `capacity` most recent `(t, z)` pairs, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrack {
    capacity: usize,
    points: VecDeque<(f64, ChartPosition)>,
}

impl LatentTrack {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity < 2 {
            return Err(Error::InvalidConfig(format!(
                "latent track needs capacity >= 2, got {capacity}"
            )));
        }
        Ok(Self {
            capacity,
            points: VecDeque::with_capacity(capacity),
        })
    }

    /// Append a position, evicting the oldest one when full.
    pub fn push(&mut self, t: f64, z: ChartPosition) -> Result<()> {
        if let Some(&(last, _)) = self.points.back() {
            if t <= last {
                return Err(Error::InvalidConfig(format!(
                    "track time {t} does not follow {last}"
                )));
            }
        }
        if self.points.len() == self.capacity {
            self.points.pop_front();
        }
        self.points.push_back((t, z));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn positions(&self) -> Vec<ChartPosition> {
        self.points.iter().map(|&(_, z)| z).collect()
    }

    /// Position `p` samples after the newest entry.
    pub fn extrapolate(&self, p: usize) -> Result<ChartPosition> {
        extrapolate(&self.positions(), p)
    }
}

/// Least-squares line through equally spaced positions (oldest first),
/// evaluated `p` samples after the last one.
pub fn extrapolate(history: &[ChartPosition], p: usize) -> Result<ChartPosition> {
    let k = history.len();
    if k < 2 {
        return Err(Error::InsufficientData(format!(
            "extrapolation needs at least 2 positions, got {k}"
        )));
    }
    let x_mean = (k - 1) as f64 / 2.0;
    let sxx: f64 = (0..k).map(|i| (i as f64 - x_mean).powi(2)).sum();
    let x_eval = (k - 1 + p) as f64 - x_mean;
    let mut out = [0.0; 2];
    for (d, o) in out.iter_mut().enumerate() {
        let y_mean = history.iter().map(|z| z.0[d]).sum::<f64>() / k as f64;
        let sxy: f64 = history
            .iter()
            .enumerate()
            .map(|(i, z)| (i as f64 - x_mean) * (z.0[d] - y_mean))
            .sum();
        *o = y_mean + sxy / sxx * x_eval;
    }
    Ok(ChartPosition(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(x: f64, y: f64) -> ChartPosition {
        ChartPosition([x, y])
    }

    #[test]
    fn constant_history_stays_put() {
        let h = vec![z(1.5, -2.0); 6];
        for p in [0, 1, 10] {
            assert_eq!(extrapolate(&h, p).unwrap(), z(1.5, -2.0));
        }
    }

    #[test]
    fn unit_slope() {
        let h = [z(0.0, 0.0), z(1.0, 0.0), z(2.0, 0.0)];
        assert_eq!(extrapolate(&h, 3).unwrap(), z(5.0, 0.0));
    }

    #[test]
    fn two_points_give_exact_line() {
        let h = [z(1.0, 2.0), z(2.0, 1.0)];
        assert_eq!(extrapolate(&h, 2).unwrap(), z(4.0, -1.0));
    }

    #[test]
    fn short_history_is_rejected() {
        assert!(extrapolate(&[z(0.0, 0.0)], 1).is_err());
        assert!(LatentTrack::new(1).is_err());
    }

    #[test]
    fn track_evicts_oldest_and_checks_time() {
        let mut t = LatentTrack::new(3).unwrap();
        for i in 0..5 {
            t.push(i as f64, z(i as f64, 0.0)).unwrap();
        }
        assert_eq!(t.positions(), vec![z(2.0, 0.0), z(3.0, 0.0), z(4.0, 0.0)]);
        assert!(t.push(4.0, z(0.0, 0.0)).is_err());
        assert_eq!(t.extrapolate(1).unwrap(), z(5.0, 0.0));
    }
}
