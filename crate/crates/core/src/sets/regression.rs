use crate::error::{Error, Result};
use crate::models::QuantileModel;
use crate::scalar::Scalar;

use super::{PredictionSet, SetConstructor};

/// `[q_lo - adj, q_hi + adj]`, or `Empty` once the endpoints cross.
///
/// Crossed quantile estimates (`q_lo > q_hi`) are not swapped: the set
/// stays empty until the adjustment is large enough to uncross them.
pub fn cqr_interval<T: Scalar>(q_lo: T, q_hi: T, adj: T) -> Result<PredictionSet<T>> {
    if !(q_lo.is_finite() && q_hi.is_finite()) {
        return Err(Error::NonFinite("quantile estimates"));
    }
    if adj.is_nan() {
        return Err(Error::NonFinite("interval adjustment"));
    }
    if adj == T::infinity() {
        return Ok(PredictionSet::Full);
    }
    Ok(PredictionSet::interval(q_lo - adj, q_hi + adj))
}

/// Signed distance of `y` from the nearer endpoint of `[q_lo, q_hi]`;
/// negative inside.
#[inline]
pub fn cqr_score<T: Scalar>(q_lo: T, q_hi: T, y: T) -> T {
    (q_lo - y).max(y - q_hi)
}

/// Interval `[q(tau/2), q(1 - tau/2)]` with `tau = -theta`.
///
/// `theta` lives in `[-1, 0]`; values at or above zero request the whole
/// line and values below `-1` are clipped to the median point.
pub fn quantile_scale_interval<T, M>(model: &M, x: &[T], theta: T) -> Result<PredictionSet<T>>
where
    T: Scalar,
    M: QuantileModel<T>,
{
    if theta.is_nan() {
        return Err(Error::NonFinite("calibration parameter"));
    }
    let tau = -theta;
    if tau <= T::zero() {
        return Ok(PredictionSet::Full);
    }
    let tau = tau.min(T::one());
    let half = tau / T::lit(2.0);
    let lo = model.quantile(x, half)?;
    let hi = model.quantile(x, T::one() - half)?;
    if lo.is_nan() || hi.is_nan() {
        return Err(Error::NonFinite("model quantile"));
    }
    Ok(PredictionSet::interval(lo, hi))
}

/// Value-scale CQR constructor around the model's lower/upper quantiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cqr<T> {
    pub lower_level: T,
    pub upper_level: T,
}

impl<T: Scalar> Cqr<T> {
    /// Quantile levels `alpha/2` and `1 - alpha/2`.
    pub fn for_miscoverage(alpha: T) -> Self {
        let half = alpha / T::lit(2.0);
        Self {
            lower_level: half,
            upper_level: T::one() - half,
        }
    }

    pub fn quantiles<M: QuantileModel<T>>(&self, model: &M, x: &[T]) -> Result<(T, T)> {
        Ok((model.quantile(x, self.lower_level)?, model.quantile(x, self.upper_level)?))
    }
}

impl<T: Scalar, M: QuantileModel<T>> SetConstructor<T, M> for Cqr<T> {
    fn construct(&self, model: &M, x: &Vec<T>, adjustment: T) -> Result<PredictionSet<T>> {
        let (lo, hi) = self.quantiles(model, x)?;
        cqr_interval(lo, hi, adjustment)
    }

    fn score(&self, model: &M, x: &Vec<T>, y: &T) -> Result<Option<T>> {
        let (lo, hi) = self.quantiles(model, x)?;
        Ok(Some(cqr_score(lo, hi, *y)))
    }
}

/// Quantile-scale constructor: the adjustment is the raw theta.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QuantileScale;

impl<T: Scalar, M: QuantileModel<T>> SetConstructor<T, M> for QuantileScale {
    fn construct(&self, model: &M, x: &Vec<T>, adjustment: T) -> Result<PredictionSet<T>> {
        quantile_scale_interval(model, x, adjustment)
    }
}
