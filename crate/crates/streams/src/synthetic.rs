//! Tabular generator with group-wise shifts in direction and scale.
//!
//! Time is cut into consecutive groups whose lengths are drawn from
//! `N(group_mean, group_std^2)`. Group `i` (1-based) has a direction
//! `beta_i` drawn uniformly from the cube and L1-normalized, and a scale
//! `omega_i` that is 1 on odd groups and `N(omega_mean, omega_var)` on even
//! ones. With `X_t ~ U(0,1)^p` and `eps_t ~ N(0,1)`,
//!
//! `Y_t = Y_{t-1} / 2 + omega^2 |beta^T X_t| + 2 sin(2 X_{t,1} eps_t)`,
//!
//! starting from `Y_0 = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StreamError};
use crate::sample::Sample;

const SCHEDULE_STREAM: u64 = 0;
const GROUP_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub dim: usize,
    pub group_mean: f64,
    pub group_std: f64,
    pub omega_mean: f64,
    /// Variance, not standard deviation.
    pub omega_var: f64,
    /// Appends `Y_{t-1}` to the features.
    pub lagged_label: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 5,
            group_mean: 500.0,
            group_std: 10.0,
            omega_mean: 20.0,
            omega_var: 10.0,
            lagged_label: true,
        }
    }
}

impl SyntheticConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(StreamError::Config("synthetic dim must be positive".into()));
        }
        if !(self.group_mean >= 1.0 && self.group_std >= 0.0 && self.group_mean.is_finite() && self.group_std.is_finite()) {
            return Err(StreamError::Config("group length distribution must have mean >= 1 and finite std >= 0".into()));
        }
        if !(self.omega_var >= 0.0 && self.omega_var.is_finite() && self.omega_mean.is_finite()) {
            return Err(StreamError::Config("omega distribution must be finite with variance >= 0".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.dim + usize::from(self.lagged_label)
    }
}

/// The response recursion with every random input supplied.
pub fn synthetic_response(y_prev: f64, omega: f64, beta: &[f64], x: &[f64], eps: f64) -> f64 {
    let proj: f64 = beta.iter().zip(x).map(|(b, v)| b * v).sum();
    0.5 * y_prev + omega * omega * proj.abs() + 2.0 * (2.0 * x[0] * eps).sin()
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Endless sequence of group lengths, rounded to the nearest positive integer.
#[derive(Debug, Clone)]
pub struct GroupSchedule {
    rng: ChaCha8Rng,
    dist: Normal<f64>,
}

impl GroupSchedule {
    pub fn new(config: &SyntheticConfig) -> Result<Self> {
        config.validate()?;
        let dist = Normal::new(config.group_mean, config.group_std)
            .map_err(|e| StreamError::Config(format!("group length distribution: {e}")))?;
        Ok(Self {
            rng: rng_for(config.seed, SCHEDULE_STREAM),
            dist,
        })
    }
}

impl Iterator for GroupSchedule {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let len = self.dist.sample(&mut self.rng).round();
        Some(if len < 1.0 { 1 } else { len as usize })
    }
}

/// Infinite stream; the group vector is produced lazily so memory stays
/// constant in the stream length.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    config: SyntheticConfig,
    schedule: GroupSchedule,
    group_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    omega_dist: Normal<f64>,
    group: u32,
    remaining: usize,
    beta: Vec<f64>,
    omega: f64,
    y_prev: f64,
}

impl SyntheticStream {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        let schedule = GroupSchedule::new(&config)?;
        let omega_dist = Normal::new(config.omega_mean, config.omega_var.sqrt())
            .map_err(|e| StreamError::Config(format!("omega distribution: {e}")))?;
        Ok(Self {
            group_rng: rng_for(config.seed, GROUP_STREAM),
            sample_rng: rng_for(config.seed, SAMPLE_STREAM),
            beta: vec![0.0; config.dim],
            config,
            schedule,
            omega_dist,
            group: 0,
            remaining: 0,
            omega: 1.0,
            y_prev: 0.0,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    /// Current group id (1-based, 0 before the first sample).
    pub fn group(&self) -> u32 {
        self.group
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    fn enter_next_group(&mut self) {
        self.group += 1;
        self.remaining = self.schedule.next().unwrap_or(1);
        for b in self.beta.iter_mut() {
            *b = self.group_rng.random::<f64>();
        }
        let l1: f64 = self.beta.iter().sum();
        if l1 > 0.0 {
            self.beta.iter_mut().for_each(|b| *b /= l1);
        } else {
            let uniform = 1.0 / self.beta.len() as f64;
            self.beta.iter_mut().for_each(|b| *b = uniform);
        }
        let omega_draw = self.omega_dist.sample(&mut self.group_rng);
        self.omega = if self.group % 2 == 0 { omega_draw } else { 1.0 };
    }
}

impl Iterator for SyntheticStream {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        if self.remaining == 0 {
            self.enter_next_group();
        }
        self.remaining -= 1;
        let x: Vec<f64> = (0..self.config.dim).map(|_| self.sample_rng.random::<f64>()).collect();
        let eps: f64 = StandardNormal.sample(&mut self.sample_rng);
        let y = synthetic_response(self.y_prev, self.omega, &self.beta, &x, eps);
        let mut features = x;
        if self.config.lagged_label {
            features.push(self.y_prev);
        }
        self.y_prev = y;
        Some(Sample {
            x: features,
            y,
            group: Some(self.group),
        })
    }
}
