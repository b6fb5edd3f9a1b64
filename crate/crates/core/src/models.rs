//! Base-model interface and the online learners shipped with the crate.
//!
//! Models never see a label before the calibrator has announced the set
//! for that step; `update` is always the last thing that happens.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A model updated online, one labeled example at a time.
pub trait OnlineModel<T: Scalar> {
    type Features;
    type Label;

    fn update(&mut self, x: &Self::Features, y: &Self::Label) -> Result<()>;
}

/// Regression model exposing conditional quantile estimates.
pub trait QuantileModel<T: Scalar>: OnlineModel<T, Features = Vec<T>, Label = T> {
    fn quantile(&self, x: &[T], tau: T) -> Result<T>;
}

/// Classifier exposing a probability vector over classes `0..K`.
pub trait ClassifierModel<T: Scalar>: OnlineModel<T, Label = usize> {
    fn probabilities(&self, x: &Self::Features) -> Result<Vec<T>>;
}

/// Image-to-image model producing a per-pixel point prediction.
pub trait ImageModel<T: Scalar>: OnlineModel<T, Label = Array2<T>> {
    fn predict_image(&self, x: &Self::Features) -> Result<Array2<T>>;
}

fn check_level<T: Scalar>(tau: T) -> Result<()> {
    if tau > T::zero() && tau < T::one() {
        Ok(())
    } else {
        Err(Error::InvalidQuantileLevel(tau.as_f64()))
    }
}

/// Pinball (quantile) loss of predicting `yhat` for `y` at level `tau`.
pub fn pinball_loss<T: Scalar>(y: T, yhat: T, tau: T) -> Result<T> {
    check_level(tau)?;
    let diff = y - yhat;
    Ok(if diff > T::zero() {
        tau * diff
    } else {
        (T::one() - tau) * (-diff)
    })
}

/// Derivative of [`pinball_loss`] with respect to `yhat`; at the kink the
/// `(1 - tau)` branch is used.
pub fn pinball_subgradient<T: Scalar>(y: T, yhat: T, tau: T) -> Result<T> {
    check_level(tau)?;
    Ok(if y - yhat > T::zero() { -tau } else { T::one() - tau })
}

/// Linear quantile regressor trained by stochastic subgradient steps on
/// the pinball loss, one independent weight vector per tracked level.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPinball<T> {
    levels: Vec<T>,
    weights: Vec<Vec<T>>,
    intercepts: Vec<T>,
    learning_rate: T,
    steps_per_update: usize,
    fit_intercept: bool,
}

impl<T: Scalar> LinearPinball<T> {
    /// Zero-initialized model over `dim` features.
    pub fn new(levels: &[T], dim: usize, learning_rate: T) -> Result<Self> {
        let weights = vec![vec![T::zero(); dim]; levels.len()];
        let intercepts = vec![T::zero(); levels.len()];
        Self::with_weights(levels, weights, intercepts, learning_rate)
    }

    pub fn with_weights(levels: &[T], weights: Vec<Vec<T>>, intercepts: Vec<T>, learning_rate: T) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidSpec("no quantile levels to track".into()));
        }
        for &tau in levels {
            check_level(tau)?;
        }
        if weights.len() != levels.len() || intercepts.len() != levels.len() {
            return Err(Error::DimensionMismatch {
                expected: levels.len(),
                found: weights.len().min(intercepts.len()),
            });
        }
        let dim = weights[0].len();
        if let Some(w) = weights.iter().find(|w| w.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: w.len(),
            });
        }
        if !(learning_rate >= T::zero() && learning_rate.is_finite()) {
            return Err(Error::InvalidSpec(format!("learning rate {learning_rate} must be finite and >= 0")));
        }
        Ok(Self {
            levels: levels.to_vec(),
            weights,
            intercepts,
            learning_rate,
            steps_per_update: 1,
            fit_intercept: true,
        })
    }

    pub fn steps_per_update(mut self, steps: usize) -> Self {
        self.steps_per_update = steps.max(1);
        self
    }

    pub fn fit_intercept(mut self, fit: bool) -> Self {
        self.fit_intercept = fit;
        self
    }

    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    pub fn weights(&self, level_index: usize) -> (&[T], T) {
        (&self.weights[level_index], self.intercepts[level_index])
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    fn level_index(&self, tau: T) -> Result<usize> {
        let tol = T::lit(1e-9);
        self.levels
            .iter()
            .position(|&l| (l - tau).abs() <= tol)
            .ok_or(Error::UntrackedQuantile(tau.as_f64()))
    }

    fn check_features(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model features"));
        }
        Ok(())
    }

    fn linear(&self, k: usize, x: &[T]) -> T {
        self.weights[k]
            .iter()
            .zip(x)
            .fold(self.intercepts[k], |acc, (&w, &v)| acc + w * v)
    }

    /// Pinball subgradient with respect to `(weights, intercept)` for one level.
    pub fn gradient(&self, level_index: usize, x: &[T], y: T) -> Result<(Vec<T>, T)> {
        self.check_features(x)?;
        let tau = self.levels[level_index];
        let g = pinball_subgradient(y, self.linear(level_index, x), tau)?;
        let grad_w = x.iter().map(|&v| g * v).collect();
        let grad_b = if self.fit_intercept { g } else { T::zero() };
        Ok((grad_w, grad_b))
    }
}

impl<T: Scalar> OnlineModel<T> for LinearPinball<T> {
    type Features = Vec<T>;
    type Label = T;

    fn update(&mut self, x: &Vec<T>, y: &T) -> Result<()> {
        self.check_features(x)?;
        if !y.is_finite() {
            return Err(Error::NonFinite("model label"));
        }
        for k in 0..self.levels.len() {
            for _ in 0..self.steps_per_update {
                let (grad_w, grad_b) = self.gradient(k, x, *y)?;
                for (w, g) in self.weights[k].iter_mut().zip(grad_w) {
                    *w = *w - self.learning_rate * g;
                }
                self.intercepts[k] = self.intercepts[k] - self.learning_rate * grad_b;
            }
        }
        if self
            .weights
            .iter()
            .flatten()
            .chain(self.intercepts.iter())
            .any(|w| !w.is_finite())
        {
            return Err(Error::NonFinite("model weights"));
        }
        Ok(())
    }
}

impl<T: Scalar> QuantileModel<T> for LinearPinball<T> {
    fn quantile(&self, x: &[T], tau: T) -> Result<T> {
        let k = self.level_index(tau)?;
        self.check_features(x)?;
        Ok(self.linear(k, x))
    }
}

type FeatureFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// Analytic model for streams with `y | x ~ N(mean(x), scale(x)^2)`.
/// Answers any quantile level and ignores updates.
#[derive(Clone)]
pub struct GaussianOracle<T> {
    mean: FeatureFn<T>,
    scale: FeatureFn<T>,
}

impl<T: Scalar> GaussianOracle<T> {
    pub fn new(
        mean: impl Fn(&[T]) -> T + Send + Sync + 'static,
        scale: impl Fn(&[T]) -> T + Send + Sync + 'static,
    ) -> Self {
        Self {
            mean: Arc::new(mean),
            scale: Arc::new(scale),
        }
    }

    pub fn mean(&self, x: &[T]) -> T {
        (self.mean)(x)
    }

    pub fn scale(&self, x: &[T]) -> T {
        (self.scale)(x)
    }
}

impl<T> fmt::Debug for GaussianOracle<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaussianOracle").finish_non_exhaustive()
    }
}

impl<T: Scalar> OnlineModel<T> for GaussianOracle<T> {
    type Features = Vec<T>;
    type Label = T;

    fn update(&mut self, _x: &Vec<T>, _y: &T) -> Result<()> {
        Ok(())
    }
}

impl<T: Scalar> QuantileModel<T> for GaussianOracle<T> {
    fn quantile(&self, x: &[T], tau: T) -> Result<T> {
        check_level(tau)?;
        let sd = self.scale(x);
        if !(sd > T::zero() && sd.is_finite()) {
            return Err(Error::NonFinite("oracle scale"));
        }
        let z = Normal::standard().inverse_cdf(tau.as_f64());
        Ok(self.mean(x) + sd * T::lit(z))
    }
}

/// Fixed quantile answers, independent of the features.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantQuantiles<T> {
    table: Vec<(T, T)>,
}

impl<T: Scalar> ConstantQuantiles<T> {
    /// `table` holds `(level, value)` pairs.
    pub fn new(table: Vec<(T, T)>) -> Result<Self> {
        for &(tau, v) in &table {
            check_level(tau)?;
            if !v.is_finite() {
                return Err(Error::NonFinite("constant quantile"));
            }
        }
        Ok(Self { table })
    }
}

impl<T: Scalar> OnlineModel<T> for ConstantQuantiles<T> {
    type Features = Vec<T>;
    type Label = T;

    fn update(&mut self, _x: &Vec<T>, _y: &T) -> Result<()> {
        Ok(())
    }
}

impl<T: Scalar> QuantileModel<T> for ConstantQuantiles<T> {
    fn quantile(&self, _x: &[T], tau: T) -> Result<T> {
        let tol = T::lit(1e-9);
        self.table
            .iter()
            .find(|(l, _)| (*l - tau).abs() <= tol)
            .map(|&(_, v)| v)
            .ok_or(Error::UntrackedQuantile(tau.as_f64()))
    }
}

/// Running class frequencies with add-one smoothing; ignores features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFrequencies {
    counts: Vec<u64>,
}

impl ClassFrequencies {
    pub fn new(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidSpec("classifier needs at least one class".into()));
        }
        Ok(Self { counts: vec![1; classes] })
    }
}

impl<T: Scalar> OnlineModel<T> for ClassFrequencies {
    type Features = Vec<T>;
    type Label = usize;

    fn update(&mut self, _x: &Vec<T>, y: &usize) -> Result<()> {
        let classes = self.counts.len();
        let slot = self.counts.get_mut(*y).ok_or(Error::DimensionMismatch {
            expected: classes,
            found: *y + 1,
        })?;
        *slot += 1;
        Ok(())
    }
}

impl<T: Scalar> ClassifierModel<T> for ClassFrequencies {
    fn probabilities(&self, _x: &Vec<T>) -> Result<Vec<T>> {
        let total = T::lit(self.counts.iter().sum::<u64>() as f64);
        Ok(self.counts.iter().map(|&c| T::lit(c as f64) / total).collect())
    }
}

/// Image "model" whose features already are the base model's prediction.
///
/// Streams that ship precomputed predictions (or replay an external
/// model's outputs) use this to plug into the image constructors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PrecomputedImage;

impl<T: Scalar> OnlineModel<T> for PrecomputedImage {
    type Features = Array2<T>;
    type Label = Array2<T>;

    fn update(&mut self, _x: &Array2<T>, _y: &Array2<T>) -> Result<()> {
        Ok(())
    }
}

impl<T: Scalar> ImageModel<T> for PrecomputedImage {
    fn predict_image(&self, x: &Array2<T>) -> Result<Array2<T>> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image prediction"));
        }
        Ok(x.clone())
    }
}
