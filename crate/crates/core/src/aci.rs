//! Calibration against a rolling window of conformity scores, with the
//! effective miscoverage level tuned online.
//!
//! Expressed in the Rolling RC vocabulary, theta is `-alpha_t` with
//! safeguards `(-1, 0)`, and the set is the CQR interval widened by the
//! `(1 - alpha_t)` empirical quantile of the window.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::engine::StepRecord;
use crate::error::{Error, Result};
use crate::models::QuantileModel;
use crate::scalar::Scalar;
use crate::sets::{cqr_interval, cqr_score, Cqr, PredictionSet};

/// Steps at the start of a run that announce the full space while the
/// window fills.
pub const DEFAULT_WARMUP: usize = 10;

/// FIFO buffer of the most recent scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreWindow<T> {
    capacity: usize,
    scores: VecDeque<T>,
}

impl<T: Scalar> ScoreWindow<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidSpec("score window capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            scores: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Appends a score, returning the evicted oldest one at capacity.
    pub fn push(&mut self, score: T) -> Option<T> {
        let evicted = (self.scores.len() == self.capacity).then(|| self.scores.pop_front()).flatten();
        self.scores.push_back(score);
        evicted
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.scores.iter()
    }
}

/// How the rank `k = ceil(level * (n + 1))` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileIndexing {
    /// The k-th smallest score; `k > n` gives `+inf`.
    #[default]
    Smallest,
    /// The k-th largest score; `k > n` gives `-inf`. Shrinks sets as the
    /// level grows, so it is only useful for comparison.
    LiteralLargest,
}

/// Empirical quantile of the window at `level`, with the rank clipped to
/// `[1, n]` from below and an infinite sentinel on overflow.
pub fn empirical_quantile<T: Scalar>(window: &ScoreWindow<T>, level: T, indexing: QuantileIndexing) -> Result<T> {
    if window.is_empty() {
        return Err(Error::Empty("score window"));
    }
    if level.is_nan() {
        return Err(Error::NonFinite("quantile level"));
    }
    let n = window.len();
    let position = level * T::from_count(n + 1);
    if position > T::from_count(n) {
        return Ok(match indexing {
            QuantileIndexing::Smallest => T::infinity(),
            QuantileIndexing::LiteralLargest => T::neg_infinity(),
        });
    }
    let k = position.ceil().to_usize().unwrap_or(0).max(1);
    let mut scores: Vec<T> = window.iter().copied().collect();
    let idx = match indexing {
        QuantileIndexing::Smallest => k - 1,
        QuantileIndexing::LiteralLargest => n - k,
    };
    let (_, v, _) = scores.select_nth_unstable_by(idx, |a, b| a.partial_cmp(b).expect("scores are not NaN"));
    Ok(*v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AciConfig<T> {
    /// Target miscoverage `alpha`.
    pub alpha: T,
    pub gamma: T,
    /// Window capacity `n`.
    pub window: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default)]
    pub indexing: QuantileIndexing,
}

fn default_warmup() -> usize {
    DEFAULT_WARMUP
}

impl<T: Scalar> AciConfig<T> {
    pub fn new(alpha: T, gamma: T, window: usize) -> Result<Self> {
        let c = Self {
            alpha,
            gamma,
            window,
            warmup: DEFAULT_WARMUP,
            indexing: QuantileIndexing::Smallest,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > T::zero() && self.alpha < T::one()) {
            return Err(Error::InvalidSpec(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.gamma > T::zero() && self.gamma.is_finite()) {
            return Err(Error::InvalidSpec(format!("gamma {} must be positive", self.gamma)));
        }
        if self.window == 0 {
            return Err(Error::InvalidSpec("score window capacity must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AciState<T> {
    pub alpha_t: T,
    pub window: ScoreWindow<T>,
    pub steps: usize,
}

/// Outcome of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct AciStep<T> {
    pub set: PredictionSet<T>,
    pub record: StepRecord<T>,
    pub warmup: bool,
}

impl<T: Scalar> AciState<T> {
    pub fn new(config: &AciConfig<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            alpha_t: config.alpha,
            window: ScoreWindow::new(config.window)?,
            steps: 0,
        })
    }

    /// Announces the set for `x`, scores `y` against it, updates
    /// `alpha_t` and pushes the new score. The model is only read.
    pub fn step<M: QuantileModel<T>>(
        &mut self,
        config: &AciConfig<T>,
        cqr: &Cqr<T>,
        model: &M,
        x: &[T],
        y: T,
    ) -> Result<AciStep<T>> {
        let (q_lo, q_hi) = cqr.quantiles(model, x)?;
        let warmup = self.steps < config.warmup || self.window.is_empty();
        let theta_pre = -self.alpha_t;
        let (set, adjustment) = if warmup || self.alpha_t < T::zero() {
            (PredictionSet::Full, T::infinity())
        } else if self.alpha_t > T::one() {
            (PredictionSet::Empty, T::neg_infinity())
        } else {
            let q = empirical_quantile(&self.window, T::one() - self.alpha_t, config.indexing)?;
            let set = if q == T::neg_infinity() {
                PredictionSet::Empty
            } else {
                cqr_interval(q_lo, q_hi, q)?
            };
            (set, q)
        };
        let covered = set.contains_value(y)?;
        let err = if covered { T::zero() } else { T::one() };
        if !warmup {
            self.alpha_t = self.alpha_t + config.gamma * (config.alpha - err);
        }
        let score = cqr_score(q_lo, q_hi, y);
        if score.is_nan() {
            return Err(Error::NonFinite("conformity score"));
        }
        self.window.push(score);
        self.steps += 1;
        let (set_lo, set_hi) = match set.bounds() {
            Some((lo, hi)) => (Some(lo), Some(hi)),
            None => (None, None),
        };
        let record = StepRecord {
            step: self.steps,
            loss: err,
            theta_pre,
            theta_post: -self.alpha_t,
            adjustment,
            set_lo,
            set_hi,
            set_size: set.size(),
            covered,
            score: Some(score),
            label: Some(y),
        };
        Ok(AciStep { set, record, warmup })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AciTrace<T> {
    pub config: AciConfig<T>,
    pub records: Vec<StepRecord<T>>,
    /// Number of leading warm-up records.
    pub warmup: usize,
}

/// Runs the baseline over a stream, updating the model after each step.
pub fn run_aci<T, M, I>(stream: I, mut model: M, config: AciConfig<T>) -> Result<AciTrace<T>>
where
    T: Scalar,
    M: QuantileModel<T>,
    I: IntoIterator<Item = Result<(Vec<T>, T)>>,
{
    let mut state = AciState::new(&config)?;
    let cqr = Cqr::for_miscoverage(config.alpha);
    let mut records = Vec::new();
    let mut warmup = 0;
    for item in stream {
        let (x, y) = item?;
        let out = state.step(&config, &cqr, &model, &x, y)?;
        if out.warmup {
            warmup += 1;
        }
        records.push(out.record);
        model.update(&x, &y)?;
    }
    Ok(AciTrace { config, records, warmup })
}
