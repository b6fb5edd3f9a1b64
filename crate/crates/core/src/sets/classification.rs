use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::models::ClassifierModel;
use crate::scalar::Scalar;

use super::{PredictionSet, SetConstructor};

const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

fn validate_probabilities<T: Scalar>(probs: &[T]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidProbabilities("no classes".into()));
    }
    if let Some((k, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < T::zero()) {
        return Err(Error::InvalidProbabilities(format!("class {k} has probability {p}")));
    }
    let total = probs.iter().fold(T::zero(), |acc, &p| acc + p);
    if (total - T::one()).abs() > T::lit(PROBABILITY_SUM_TOLERANCE) {
        return Err(Error::InvalidProbabilities(format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// All classes whose probability is at least `threshold`.
pub fn class_threshold_set<T: Scalar>(probs: &[T], threshold: T) -> Result<PredictionSet<T>> {
    validate_probabilities(probs)?;
    if threshold.is_nan() {
        return Err(Error::NonFinite("class threshold"));
    }
    if threshold <= T::zero() {
        return Ok(PredictionSet::Full);
    }
    if threshold > T::one() {
        return Ok(PredictionSet::Empty);
    }
    let members = probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(k, _)| k)
        .collect();
    Ok(PredictionSet::labels(members))
}

/// Smallest prefix of the classes, sorted by decreasing probability,
/// whose cumulative mass reaches `level`. Ties go to the lower index.
pub fn class_cumulative_set<T: Scalar>(probs: &[T], level: T) -> Result<PredictionSet<T>> {
    validate_probabilities(probs)?;
    if level.is_nan() {
        return Err(Error::NonFinite("cumulative level"));
    }
    if level <= T::zero() {
        return Ok(PredictionSet::Empty);
    }
    if level > T::one() {
        return Ok(PredictionSet::Full);
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut mass = T::zero();
    let mut members = Vec::with_capacity(probs.len());
    for k in order {
        members.push(k);
        mass = mass + probs[k];
        if mass >= level {
            break;
        }
    }
    Ok(PredictionSet::labels(members))
}

/// `{y : p(y) >= -adjustment}`; the adjustment lives in `[-1, 0]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassThreshold;

impl<T: Scalar, M: ClassifierModel<T>> SetConstructor<T, M> for ClassThreshold {
    fn construct(&self, model: &M, x: &M::Features, adjustment: T) -> Result<PredictionSet<T>> {
        class_threshold_set(&model.probabilities(x)?, -adjustment)
    }
}

/// Cumulative-mass sets at level `1 + adjustment`; the adjustment lives
/// in `[-1, 0]` so a larger adjustment gives a larger set.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassCumulative;

impl<T: Scalar, M: ClassifierModel<T>> SetConstructor<T, M> for ClassCumulative {
    fn construct(&self, model: &M, x: &M::Features, adjustment: T) -> Result<PredictionSet<T>> {
        class_cumulative_set(&model.probabilities(x)?, T::one() + adjustment)
    }
}
