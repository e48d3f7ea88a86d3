//! Gradient queue, per-coordinate statistics and the clamped z-score boost.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Queue length at which boosting starts, capped by the queue capacity.
pub const WARMUP_ENTRIES: usize = 3;

/// Parameters of the boost operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostConfig {
    /// Clamp constant; scale factors live in `[1/rho, rho]`.
    pub rho: f64,
    /// Standard deviations at or below this are treated as zero.
    pub sigma_floor: f64,
}

impl BoostConfig {
    /// `rho = 1` is accepted: the operator then collapses to the identity.
    pub fn new(rho: f64, sigma_floor: f64) -> Result<Self> {
        if !(rho >= 1.0 && rho.is_finite()) {
            return Err(Error::InvalidConfig(format!("rho must be >= 1, got {rho}")));
        }
        if !(sigma_floor > 0.0 && sigma_floor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma_floor must be > 0, got {sigma_floor}"
            )));
        }
        Ok(Self { rho, sigma_floor })
    }

    pub fn with_rho(rho: f64) -> Result<Self> {
        Self::new(rho, Self::default().sigma_floor)
    }
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            rho: 3.0,
            sigma_floor: 1e-12,
        }
    }
}

/// Snapshot of per-coordinate population mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub sample_count: usize,
}

impl QueueStats {
    /// Population statistics of `samples` (Welford accumulation).
    pub fn from_samples<'a, I>(samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut iter = samples.into_iter();
        let first = iter.next().ok_or(Error::EmptyQueue)?;
        let mut mean = first.to_vec();
        let mut m2 = vec![0.0; first.len()];
        let mut n = 1usize;
        for sample in iter {
            if sample.len() != mean.len() {
                return Err(Error::DimensionMismatch {
                    expected: mean.len(),
                    found: sample.len(),
                });
            }
            n += 1;
            let inv = 1.0 / n as f64;
            for ((mu, acc), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(sample) {
                let delta = x - *mu;
                *mu += delta * inv;
                *acc += delta * (x - *mu);
            }
        }
        let std = m2.iter().map(|s| (s / n as f64).max(0.0).sqrt()).collect();
        Ok(Self {
            mean,
            std,
            sample_count: n,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Scale applied to a coordinate whose distance from the mean is `z` standard
/// deviations.
#[inline]
pub fn scale_factor(z: f64, rho: f64) -> f64 {
    if z > 1.0 {
        z.min(rho)
    } else {
        z.max(1.0 / rho)
    }
}

/// Distance of `g` from `mean` in units of `std`, with the zero-variance rule:
/// a coordinate matching a constant history is maximally monotonous (`z = 0`),
/// one departing from it is maximally sparse (`z = rho`).
#[inline]
pub fn z_score(g: f64, mean: f64, std: f64, cfg: &BoostConfig) -> f64 {
    let dist = (g - mean).abs();
    if std <= cfg.sigma_floor {
        if dist <= cfg.sigma_floor {
            0.0
        } else {
            cfg.rho
        }
    } else {
        dist / std
    }
}

/// The boost operator: rescale every coordinate of `g` by its clamped z-score.
pub fn delta_rho(g: &[f64], stats: &QueueStats, cfg: &BoostConfig) -> Result<Vec<f64>> {
    if g.len() != stats.dim() {
        return Err(Error::DimensionMismatch {
            expected: stats.dim(),
            found: g.len(),
        });
    }
    Ok(g.iter()
        .zip(stats.mean.iter().zip(&stats.std))
        .map(|(&gi, (&mu, &sd))| scale_factor(z_score(gi, mu, sd, cfg), cfg.rho) * gi)
        .collect())
}

/// Bounded FIFO of raw gradient snapshots.
#[derive(Debug, Clone)]
pub struct GradQueue {
    capacity: usize,
    effective_length: usize,
    dim: Option<usize>,
    entries: VecDeque<Vec<f64>>,
}

impl GradQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig(
                "queue capacity must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            effective_length: capacity,
            dim: None,
            entries: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Gradient dimension, fixed by the first push.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    /// Oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(Vec::as_slice)
    }

    pub fn effective_length(&self) -> usize {
        self.effective_length
    }

    pub fn set_effective_length(&mut self, len: usize) -> Result<()> {
        if len == 0 || len > self.capacity {
            return Err(Error::InvalidConfig(format!(
                "effective length {len} outside 1..={}",
                self.capacity
            )));
        }
        self.effective_length = len;
        Ok(())
    }

    pub fn push(&mut self, g: &[f64]) -> Result<()> {
        match self.dim {
            Some(d) if d != g.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: g.len(),
                })
            }
            None => self.dim = Some(g.len()),
            _ => {}
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(g.to_vec());
        Ok(())
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.dim = None;
    }

    pub fn warmup_len(&self) -> usize {
        WARMUP_ENTRIES.min(self.capacity)
    }

    /// True once enough entries are held for boosting to apply.
    pub fn is_warm(&self) -> bool {
        self.entries.len() >= self.warmup_len()
    }

    /// Statistics over the `effective_length` most recent entries.
    pub fn stats(&self) -> Result<QueueStats> {
        let used = self.effective_length.min(self.entries.len());
        let skip = self.entries.len() - used;
        QueueStats::from_samples(self.entries.iter().skip(skip).map(Vec::as_slice))
    }

    /// Boosted copy of `g`, or `g` unchanged while the queue is warming up.
    pub fn boost(&self, g: &[f64], cfg: &BoostConfig) -> Result<Vec<f64>> {
        if !self.is_warm() {
            if let Some(d) = self.dim {
                if d != g.len() {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: g.len(),
                    });
                }
            }
            return Ok(g.to_vec());
        }
        delta_rho(g, &self.stats()?, cfg)
    }
}

/// Picks the effective queue length from how long the loss has kept falling.
///
/// A window of `window` losses slides backward from the newest loss while the
/// windowed sum strictly increases; each such step lengthens the queue by one
/// above `min_length`, capped at `max_length`.
#[derive(Debug, Clone)]
pub struct QueueLengthController {
    losses: VecDeque<f64>,
    window: usize,
    min_length: usize,
    max_length: usize,
}

impl QueueLengthController {
    pub fn new(window: usize, min_length: usize, max_length: usize) -> Result<Self> {
        if window == 0 || min_length == 0 {
            return Err(Error::InvalidConfig(
                "window and min_length must be positive".into(),
            ));
        }
        if min_length > max_length {
            return Err(Error::InvalidConfig(format!(
                "min_length {min_length} exceeds max_length {max_length}"
            )));
        }
        if window > max_length {
            return Err(Error::InvalidConfig(format!(
                "window {window} exceeds max_length {max_length}"
            )));
        }
        Ok(Self {
            losses: VecDeque::with_capacity(max_length + window + 1),
            window,
            min_length,
            max_length,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn min_length(&self) -> usize {
        self.min_length
    }

    pub fn max_length(&self) -> usize {
        self.max_length
    }

    fn history_bound(&self) -> usize {
        self.max_length + self.window
    }

    pub fn record(&mut self, loss: f64) {
        if self.losses.len() == self.history_bound() {
            self.losses.pop_front();
        }
        self.losses.push_back(loss);
    }

    /// Oldest first.
    pub fn losses(&self) -> impl Iterator<Item = f64> + '_ {
        self.losses.iter().copied()
    }

    pub fn effective_length(&self) -> usize {
        let n = self.losses.len();
        let w = self.window;
        if n < w {
            return self.min_length;
        }
        let window_sum = |back: usize| -> f64 {
            let end = n - back;
            self.losses.range(end - w..end).sum()
        };
        let mut count = 0;
        let mut current = window_sum(0);
        for back in 1..=(n - w) {
            let older = window_sum(back);
            if older > current {
                count += 1;
                current = older;
            } else {
                break;
            }
        }
        (self.min_length + count).clamp(self.min_length, self.max_length)
    }
}

impl Default for QueueLengthController {
    fn default() -> Self {
        Self::new(2, 3, 5).expect("default controller bounds are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn queue_of(capacity: usize, values: &[f64]) -> GradQueue {
        let mut q = GradQueue::new(capacity).unwrap();
        for &v in values {
            q.push(&[v]).unwrap();
        }
        q
    }

    fn stats1(mean: f64, std: f64) -> QueueStats {
        QueueStats {
            mean: vec![mean],
            std: vec![std],
            sample_count: 3,
        }
    }

    #[test]
    fn push_evicts_oldest() {
        let mut q = GradQueue::new(3).unwrap();
        for v in [1.0, 2.0, 3.0, 4.0] {
            q.push(&[v, -v]).unwrap();
        }
        let got: Vec<_> = q.entries().map(|e| e[0]).collect();
        assert_eq!(got, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn push_into_empty() {
        let mut q = GradQueue::new(3).unwrap();
        q.push(&[1.5, 2.5]).unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(q.dim(), Some(2));
    }

    #[test]
    fn push_rejects_wrong_dimension() {
        let mut q = GradQueue::new(3).unwrap();
        q.push(&[1.0, 2.0]).unwrap();
        assert_eq!(
            q.push(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 1
            })
        );
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn stats_of_one_two_three() {
        let s = queue_of(3, &[1.0, 2.0, 3.0]).stats().unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert!((s.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(s.sample_count, 3);
    }

    #[test]
    fn stats_of_constant_queue() {
        let s = queue_of(3, &[0.7, 0.7, 0.7]).stats().unwrap();
        assert_eq!(s.mean, vec![0.7]);
        assert_eq!(s.std, vec![0.0]);
    }

    #[test]
    fn stats_of_two_valued_queue() {
        // four u's and one C: std = sqrt(L-1)|u-C|/L
        let s = queue_of(5, &[1.0, 1.0, 1.0, 1.0, 9.0]).stats().unwrap();
        assert!((s.std[0] - 3.2).abs() < 1e-14);
    }

    #[test]
    fn stats_of_empty_queue() {
        assert_eq!(GradQueue::new(3).unwrap().stats(), Err(Error::EmptyQueue));
    }

    #[test]
    fn stats_use_effective_length() {
        let mut q = queue_of(5, &[100.0, 100.0, 1.0, 2.0, 3.0]);
        q.set_effective_length(3).unwrap();
        let s = q.stats().unwrap();
        assert_eq!(s.sample_count, 3);
        assert_eq!(s.mean, vec![2.0]);
        assert!(q.set_effective_length(6).is_err());
        assert!(q.set_effective_length(0).is_err());
    }

    #[test]
    fn delta_rho_clamps_large_distance() {
        let out = delta_rho(&[5.0], &stats1(1.0, 1.0), &BoostConfig::default()).unwrap();
        assert_eq!(out, vec![15.0]);
    }

    #[test]
    fn delta_rho_floors_zero_distance() {
        let out = delta_rho(&[1.0], &stats1(1.0, 1.0), &BoostConfig::default()).unwrap();
        assert_eq!(out, vec![1.0 / 3.0]);
    }

    #[test]
    fn delta_rho_identity_at_unit_distance() {
        let out = delta_rho(&[2.0], &stats1(1.0, 1.0), &BoostConfig::default()).unwrap();
        assert_eq!(out, vec![2.0]);
    }

    #[test]
    fn delta_rho_zero_std_rules() {
        let cfg = BoostConfig::default();
        let s = stats1(2.0, 0.0);
        assert_eq!(delta_rho(&[2.0], &s, &cfg).unwrap(), vec![2.0 / 3.0]);
        assert_eq!(delta_rho(&[-1.0], &s, &cfg).unwrap(), vec![-3.0]);
    }

    #[test]
    fn delta_rho_dimension_mismatch() {
        assert!(matches!(
            delta_rho(&[1.0, 2.0], &stats1(0.0, 1.0), &BoostConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn boost_is_identity_during_warmup() {
        let cfg = BoostConfig::default();
        let q = queue_of(5, &[1.0, 1.0]);
        assert_eq!(q.boost(&[1.0], &cfg).unwrap(), vec![1.0]);
        let q = queue_of(5, &[1.0, 1.0, 1.0]);
        assert_eq!(q.boost(&[1.0], &cfg).unwrap(), vec![1.0 / 3.0]);
        // capacity below three warms up when full
        let q = queue_of(2, &[1.0, 1.0]);
        assert!(q.is_warm());
    }

    #[test]
    fn boost_config_validation() {
        assert!(BoostConfig::new(0.5, 1e-12).is_err());
        assert!(BoostConfig::new(3.0, 0.0).is_err());
        assert!(BoostConfig::new(1.0, 1e-12).is_ok());
    }

    fn controller(w: usize, min: usize, max: usize, losses: &[f64]) -> QueueLengthController {
        let mut c = QueueLengthController::new(w, min, max).unwrap();
        for &l in losses {
            c.record(l);
        }
        c
    }

    #[test]
    fn controller_sustained_decrease() {
        let c = controller(2, 2, 5, &[5.0, 5.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(c.effective_length(), 5);
    }

    #[test]
    fn controller_counts_increases_before_clamp() {
        // sums backward 3,5,7,9,10,10: four strict increases
        let c = controller(2, 1, 8, &[5.0, 5.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(c.effective_length(), 5);
    }

    #[test]
    fn controller_flat_loss() {
        let c = controller(2, 3, 5, &[3.0, 3.0, 3.0, 3.0]);
        assert_eq!(c.effective_length(), 3);
    }

    #[test]
    fn controller_short_history() {
        assert_eq!(controller(2, 3, 5, &[1.0]).effective_length(), 3);
        assert_eq!(controller(2, 3, 5, &[]).effective_length(), 3);
    }

    #[test]
    fn controller_validation() {
        assert!(QueueLengthController::new(0, 1, 5).is_err());
        assert!(QueueLengthController::new(2, 6, 5).is_err());
        assert!(QueueLengthController::new(6, 1, 5).is_err());
    }

    #[test]
    fn controller_history_is_bounded() {
        let c = controller(2, 3, 5, &(0..100).map(|i| -(i as f64)).collect::<Vec<_>>());
        assert_eq!(c.losses().count(), 7);
    }
}
