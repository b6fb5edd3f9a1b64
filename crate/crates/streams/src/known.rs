//! Heteroscedastic Gaussian stream whose conditional quantiles are known
//! in closed form, so an oracle model can be paired with it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rollrc::models::GaussianOracle;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StreamError};
use crate::sample::Sample;

/// `X ~ U(0,1)^dim`, `Y | X ~ N(slope * mean(X), (base_scale + scale_slope * X_1)^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnownQuantileConfig {
    pub seed: u64,
    pub dim: usize,
    pub slope: f64,
    pub base_scale: f64,
    pub scale_slope: f64,
}

impl Default for KnownQuantileConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 1,
            slope: 3.0,
            base_scale: 0.5,
            scale_slope: 1.0,
        }
    }
}

impl KnownQuantileConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(StreamError::Config("known-quantile dim must be positive".into()));
        }
        let finite = self.slope.is_finite() && self.base_scale.is_finite() && self.scale_slope.is_finite();
        if !finite || self.base_scale <= 0.0 || self.base_scale + self.scale_slope <= 0.0 {
            return Err(StreamError::Config("known-quantile scale must stay positive on [0, 1]".into()));
        }
        Ok(())
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        self.slope * x.iter().sum::<f64>() / x.len() as f64
    }

    pub fn scale(&self, x: &[f64]) -> f64 {
        self.base_scale + self.scale_slope * x[0]
    }

    /// Model reporting the exact conditional quantiles of this stream.
    pub fn oracle(&self) -> GaussianOracle<f64> {
        let (mean_cfg, scale_cfg) = (*self, *self);
        GaussianOracle::new(move |x: &[f64]| mean_cfg.mean(x), move |x: &[f64]| scale_cfg.scale(x))
    }
}

#[derive(Debug, Clone)]
pub struct KnownQuantileStream {
    config: KnownQuantileConfig,
    rng: ChaCha8Rng,
}

impl KnownQuantileStream {
    pub fn new(config: KnownQuantileConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
        })
    }
}

impl Iterator for KnownQuantileStream {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        let x: Vec<f64> = (0..self.config.dim).map(|_| self.rng.random::<f64>()).collect();
        let eps: f64 = StandardNormal.sample(&mut self.rng);
        let y = self.config.mean(&x) + self.config.scale(&x) * eps;
        Some(Sample { x, y, group: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rollrc::QuantileModel;

    #[test]
    fn oracle_quantiles_cover_at_their_level() {
        let config = KnownQuantileConfig::with_seed(5);
        let oracle = config.oracle();
        let n = 20_000;
        let below = KnownQuantileStream::new(config)
            .unwrap()
            .take(n)
            .filter(|s| s.y <= oracle.quantile(&s.x, 0.95).unwrap())
            .count();
        let frac = below as f64 / n as f64;
        assert!((frac - 0.95).abs() < 0.006, "{frac}");
    }

    #[test]
    fn non_positive_scale_is_rejected() {
        let bad = KnownQuantileConfig {
            base_scale: 0.0,
            ..KnownQuantileConfig::default()
        };
        assert!(KnownQuantileStream::new(bad).is_err());
    }
}
