//! Small synthetic pixel-grid stream with correlated noise and piecewise
//! variance shifts.
//!
//! A latent field follows `Z_t = rho Z_{t-1} + sqrt(1 - rho^2) S(xi_t)`
//! where `S` is a toroidal box average rescaled to unit variance, so every
//! pixel of `Z` has unit variance at all times. Labels are
//! `base + s_t Z_t`; the prediction is the persistence forecast
//! `base + s_{t-1} rho Z_{t-1}`, which does not know about a shift until
//! it has happened. The scale `s_t` is 1 on even segments of length
//! `shift_every` and `sqrt(1 + shift_amplitude)` on odd ones.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StreamError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageStreamConfig {
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub base: f64,
    pub temporal_corr: f64,
    /// Half-width of the spatial box filter.
    pub radius: usize,
    pub shift_every: usize,
    /// Label variance on shifted segments is multiplied by `1 + shift_amplitude`.
    pub shift_amplitude: f64,
}

impl Default for ImageStreamConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rows: 16,
            cols: 16,
            base: 5.0,
            temporal_corr: 0.8,
            radius: 1,
            shift_every: 500,
            shift_amplitude: 3.0,
        }
    }
}

impl ImageStreamConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(StreamError::Config("image grid must be non-empty".into()));
        }
        if !(0.0..1.0).contains(&self.temporal_corr) {
            return Err(StreamError::Config("temporal_corr must lie in [0, 1)".into()));
        }
        if self.shift_every == 0 {
            return Err(StreamError::Config("shift_every must be positive".into()));
        }
        if !(self.shift_amplitude > -1.0 && self.shift_amplitude.is_finite() && self.base.is_finite()) {
            return Err(StreamError::Config("shift_amplitude must be finite and > -1".into()));
        }
        Ok(())
    }

    /// Label standard-deviation multiplier at 1-based step `t`.
    pub fn scale_at(&self, t: usize) -> f64 {
        let segment = (t.saturating_sub(1)) / self.shift_every;
        if segment % 2 == 1 {
            (1.0 + self.shift_amplitude).sqrt()
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub step: usize,
    pub prediction: Array2<f64>,
    pub label: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ImageStream {
    config: ImageStreamConfig,
    rng: ChaCha8Rng,
    latent: Array2<f64>,
    step: usize,
}

impl ImageStream {
    pub fn new(config: ImageStreamConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let latent = smooth_noise(&mut rng, &config);
        Ok(Self {
            config,
            rng,
            latent,
            step: 0,
        })
    }

    pub fn config(&self) -> &ImageStreamConfig {
        &self.config
    }
}

/// Unit-variance, spatially correlated Gaussian field.
fn smooth_noise(rng: &mut ChaCha8Rng, config: &ImageStreamConfig) -> Array2<f64> {
    let (rows, cols) = (config.rows, config.cols);
    let white: Array2<f64> = Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng));
    let r = config.radius as isize;
    let mut out = Array2::zeros((rows, cols));
    for ((i, j), v) in out.indexed_iter_mut() {
        let mut acc = 0.0;
        let mut count = 0.0;
        for di in -r..=r {
            for dj in -r..=r {
                let ii = (i as isize + di).rem_euclid(rows as isize) as usize;
                let jj = (j as isize + dj).rem_euclid(cols as isize) as usize;
                acc += white[[ii, jj]];
                count += 1.0;
            }
        }
        *v = acc / f64::sqrt(count);
    }
    out
}

impl Iterator for ImageStream {
    type Item = ImageSample;

    fn next(&mut self) -> Option<ImageSample> {
        let cfg = self.config;
        let rho = cfg.temporal_corr;
        let prev_scale = if self.step == 0 { cfg.scale_at(1) } else { cfg.scale_at(self.step) };
        self.step += 1;
        let scale = cfg.scale_at(self.step);
        let prediction = self.latent.mapv(|z| cfg.base + prev_scale * rho * z);
        let innovation = smooth_noise(&mut self.rng, &cfg);
        let innovation_weight = (1.0 - rho * rho).sqrt();
        self.latent.zip_mut_with(&innovation, |z, &e| *z = rho * *z + innovation_weight * e);
        let label = self.latent.mapv(|z| cfg.base + scale * z);
        Some(ImageSample {
            step: self.step,
            prediction,
            label,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_schedule_alternates_by_segment() {
        let cfg = ImageStreamConfig {
            shift_every: 3,
            shift_amplitude: 3.0,
            ..ImageStreamConfig::default()
        };
        let scales: Vec<f64> = (1..=7).map(|t| cfg.scale_at(t)).collect();
        assert_eq!(scales, vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn grid_shape_follows_config() {
        let cfg = ImageStreamConfig {
            rows: 4,
            cols: 7,
            ..ImageStreamConfig::default()
        };
        let s = ImageStream::new(cfg).unwrap().next().unwrap();
        assert_eq!(s.label.dim(), (4, 7));
        assert_eq!(s.prediction.dim(), (4, 7));
        assert_eq!(s.step, 1);
    }

    #[test]
    fn bad_correlation_is_rejected() {
        let cfg = ImageStreamConfig {
            temporal_corr: 1.0,
            ..ImageStreamConfig::default()
        };
        assert!(ImageStream::new(cfg).is_err());
    }
}
