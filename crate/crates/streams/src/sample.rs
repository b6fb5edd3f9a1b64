use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// One labeled tabular example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
    pub group: Option<u32>,
}

impl Sample {
    pub fn into_pair(self) -> (Vec<f64>, f64) {
        (self.x, self.y)
    }
}

/// Adapts a sample iterator to the `(features, label)` items the
/// controllers consume.
pub fn pairs<I>(samples: I) -> impl Iterator<Item = rollrc::Result<(Vec<f64>, f64)>>
where
    I: IntoIterator<Item = Sample>,
{
    samples.into_iter().map(|s| Ok(s.into_pair()))
}

/// Mean and population standard deviation of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for v in values {
            n += 1.0;
            let delta = v - mean;
            mean += delta / n;
            m2 += delta * (v - mean);
        }
        if n == 0.0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        Self {
            mean,
            std: (m2 / n).sqrt(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.std <= 0.0 || !self.std.is_finite()
    }

    /// Constant columns pass through unchanged.
    pub fn apply(&self, v: f64) -> f64 {
        if self.is_constant() {
            v
        } else {
            (v - self.mean) / self.std
        }
    }

    pub fn invert(&self, z: f64) -> f64 {
        if self.is_constant() {
            z
        } else {
            z * self.std + self.mean
        }
    }
}

/// Per-column affine normalization fitted on a warm-up prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub features: Vec<ColumnStats>,
    pub target: ColumnStats,
}

impl Standardizer {
    /// Fits on `warmup`; `names` only labels the zero-variance warnings.
    pub fn fit(warmup: &[Sample], names: Option<&[String]>) -> Self {
        let dim = warmup.first().map_or(0, |s| s.x.len());
        let features: Vec<ColumnStats> = (0..dim)
            .map(|j| ColumnStats::fit(warmup.iter().map(|s| s.x[j])))
            .collect();
        let target = ColumnStats::fit(warmup.iter().map(|s| s.y));
        for (j, stats) in features.iter().enumerate() {
            if stats.is_constant() {
                match names.and_then(|n| n.get(j)) {
                    Some(name) => log::warn!("feature `{name}` is constant over the warm-up; left unscaled"),
                    None => log::warn!("feature {j} is constant over the warm-up; left unscaled"),
                }
            }
        }
        if target.is_constant() {
            log::warn!("target is constant over the warm-up; left unscaled");
        }
        Self { features, target }
    }

    pub fn apply(&self, mut sample: Sample) -> Sample {
        for (v, stats) in sample.x.iter_mut().zip(&self.features) {
            *v = stats.apply(*v);
        }
        sample.y = self.target.apply(sample.y);
        sample
    }
}

/// Buffers the first `warmup` samples, fits a [`Standardizer`] on them and
/// then yields every sample, warm-up included, in its original order.
/// A source shorter than `warmup` is fitted on what it produced.
#[derive(Debug)]
pub struct WarmupStandardized<I> {
    inner: I,
    warmup: usize,
    pending: VecDeque<Sample>,
    scaler: Option<Standardizer>,
}

impl<I: Iterator<Item = Sample>> WarmupStandardized<I> {
    pub fn new(inner: I, warmup: usize) -> Self {
        Self {
            inner,
            warmup,
            pending: VecDeque::new(),
            scaler: None,
        }
    }

    pub fn scaler(&self) -> Option<&Standardizer> {
        self.scaler.as_ref()
    }

    fn prime(&mut self) {
        let head: Vec<Sample> = self.inner.by_ref().take(self.warmup).collect();
        self.scaler = Some(Standardizer::fit(&head, None));
        self.pending = head.into();
    }
}

impl<I: Iterator<Item = Sample>> Iterator for WarmupStandardized<I> {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        if self.scaler.is_none() {
            self.prime();
        }
        let raw = self.pending.pop_front().or_else(|| self.inner.next())?;
        self.scaler.as_ref().map(|s| s.apply(raw))
    }
}
