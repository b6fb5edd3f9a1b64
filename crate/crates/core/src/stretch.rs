//! Stretching functions mapping theta to the adjustment handed to the set
//! constructor.
//!
//! `apply` is pure and `update_lambda` never reads theta, so the theta
//! recursion itself is the same whichever stretch is in use.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Half-width of the identity zone of [`StretchKind::ExpLinearZone`].
pub const LINEAR_ZONE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StretchKind {
    #[default]
    None,
    Exponential,
    ExpLinearZone,
    ScoreAdaptive,
    ErrorAdaptive,
}

impl StretchKind {
    pub fn is_adaptive(self) -> bool {
        matches!(self, StretchKind::ScoreAdaptive | StretchKind::ErrorAdaptive)
    }
}

/// `max(min(x, hi), lo)`.
#[inline]
pub fn clip<T: Scalar>(x: T, lo: T, hi: T) -> T {
    x.min(hi).max(lo)
}

#[inline]
fn exponential<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x.exp() - T::one()
    } else {
        T::one() - (-x).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stretch<T> {
    kind: StretchKind,
    beta_score: T,
    beta_loss: T,
    beta_low: T,
    beta_high: T,
    lambda: T,
}

impl<T: Scalar> Default for Stretch<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Scalar> Stretch<T> {
    fn stateless(kind: StretchKind) -> Self {
        Self {
            kind,
            beta_score: T::zero(),
            beta_loss: T::zero(),
            beta_low: T::zero(),
            beta_high: T::zero(),
            lambda: T::zero(),
        }
    }

    pub fn identity() -> Self {
        Self::stateless(StretchKind::None)
    }

    pub fn exponential() -> Self {
        Self::stateless(StretchKind::Exponential)
    }

    pub fn exp_linear_zone() -> Self {
        Self::stateless(StretchKind::ExpLinearZone)
    }

    pub fn score_adaptive(beta_score: T, beta_low: T, beta_high: T) -> Result<Self> {
        Self::adaptive(StretchKind::ScoreAdaptive, beta_score, T::zero(), beta_low, beta_high)
    }

    pub fn error_adaptive(beta_score: T, beta_loss: T, beta_low: T, beta_high: T) -> Result<Self> {
        Self::adaptive(StretchKind::ErrorAdaptive, beta_score, beta_loss, beta_low, beta_high)
    }

    fn adaptive(kind: StretchKind, beta_score: T, beta_loss: T, beta_low: T, beta_high: T) -> Result<Self> {
        let all = [beta_score, beta_loss, beta_low, beta_high];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("stretch hyperparameters"));
        }
        if !(beta_low <= T::zero() && T::zero() <= beta_high) {
            return Err(Error::InvalidSpec(format!(
                "stretch clip bounds [{beta_low}, {beta_high}] must bracket zero"
            )));
        }
        Ok(Self {
            kind,
            beta_score,
            beta_loss,
            beta_low,
            beta_high,
            lambda: T::zero(),
        })
    }

    /// Builds any kind from raw hyperparameters; the stateless kinds
    /// ignore the betas.
    pub fn from_parts(kind: StretchKind, beta_score: T, beta_loss: T, beta_low: T, beta_high: T) -> Result<Self> {
        match kind {
            StretchKind::ScoreAdaptive | StretchKind::ErrorAdaptive => {
                Self::adaptive(kind, beta_score, beta_loss, beta_low, beta_high)
            }
            _ => Ok(Self::stateless(kind)),
        }
    }

    pub fn kind(&self) -> StretchKind {
        self.kind
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn clip_bounds(&self) -> (T, T) {
        (self.beta_low, self.beta_high)
    }

    /// The adjustment `phi(theta)`.
    pub fn apply(&self, theta: T) -> T {
        match self.kind {
            StretchKind::None => theta,
            StretchKind::Exponential => exponential(theta),
            StretchKind::ExpLinearZone => {
                if theta.abs() <= T::lit(LINEAR_ZONE) {
                    theta
                } else {
                    exponential(theta)
                }
            }
            StretchKind::ScoreAdaptive | StretchKind::ErrorAdaptive => theta + self.lambda,
        }
    }

    /// Folds the previous step's conformity score and loss into lambda.
    /// No-op for the stateless kinds.
    pub fn update_lambda(&mut self, score: T, prev_loss: T, target: T) {
        let step = match self.kind {
            StretchKind::ScoreAdaptive => self.beta_score * score,
            StretchKind::ErrorAdaptive => {
                self.beta_score * score * (self.beta_loss * (prev_loss - target).abs()).exp()
            }
            _ => return,
        };
        self.lambda = clip(self.lambda - step, self.beta_low, self.beta_high);
    }

    pub fn reset(&mut self) {
        self.lambda = T::zero();
    }
}
