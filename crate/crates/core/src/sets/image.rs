use std::collections::VecDeque;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ImageModel;
use crate::scalar::Scalar;

use super::{IntervalGrid, PredictionSet, SetConstructor};

fn check_shape<T>(expected: &Array2<T>, found: &Array2<T>) -> Result<()> {
    if expected.dim() != found.dim() {
        return Err(Error::ShapeMismatch {
            expected: expected.dim(),
            found: found.dim(),
        });
    }
    Ok(())
}

/// Per-pixel interval `[pred - lambda * l, pred + lambda * u]`.
///
/// A negative `lambda` inverts the intervals; inverted pixels are empty
/// and count as miscovered.
pub fn image_interval<T: Scalar>(
    pred: &Array2<T>,
    lower: &Array2<T>,
    upper: &Array2<T>,
    lambda: T,
) -> Result<PredictionSet<T>> {
    check_shape(pred, lower)?;
    check_shape(pred, upper)?;
    if lambda.is_nan() {
        return Err(Error::NonFinite("image interval scale"));
    }
    let lo = Zip::from(pred).and(lower).map_collect(|&p, &l| p - lambda * l);
    let hi = Zip::from(pred).and(upper).map_collect(|&p, &u| p + lambda * u);
    Ok(PredictionSet::Grid(IntervalGrid::new(lo, hi)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicKind {
    /// `l = u = 1` everywhere.
    Constant,
    /// Exponentially weighted mean of `|pred - y|` per pixel.
    ResidualModel,
    /// Window means of the clamped positive/negative residuals.
    PreviousResiduals,
}

/// Lower/upper uncertainty maps feeding [`image_interval`].
#[derive(Debug, Clone)]
pub struct UncertaintyHeuristic<T> {
    kind: HeuristicKind,
    window: usize,
    decay: T,
    positive: VecDeque<Array2<T>>,
    negative: VecDeque<Array2<T>>,
    lower: Option<Array2<T>>,
    upper: Option<Array2<T>>,
}

impl<T: Scalar> UncertaintyHeuristic<T> {
    pub fn constant() -> Self {
        Self::with_kind(HeuristicKind::Constant, 1, T::zero())
    }

    pub fn residual_model(decay: T) -> Result<Self> {
        if !(decay > T::zero() && decay <= T::one()) {
            return Err(Error::InvalidSpec(format!("residual decay {decay} must lie in (0, 1]")));
        }
        Ok(Self::with_kind(HeuristicKind::ResidualModel, 1, decay))
    }

    pub fn previous_residuals(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidSpec("residual window must be positive".into()));
        }
        Ok(Self::with_kind(HeuristicKind::PreviousResiduals, window, T::zero()))
    }

    fn with_kind(kind: HeuristicKind, window: usize, decay: T) -> Self {
        Self {
            kind,
            window,
            decay,
            positive: VecDeque::with_capacity(window),
            negative: VecDeque::with_capacity(window),
            lower: None,
            upper: None,
        }
    }

    pub fn kind(&self) -> HeuristicKind {
        self.kind
    }

    /// Current `(l, u)` maps for an image of the given shape.
    ///
    /// Before any frame is observed the constant and residual-model maps
    /// are all ones and the previous-residual maps are all zeros.
    pub fn maps(&self, dim: (usize, usize)) -> (Array2<T>, Array2<T>) {
        match (&self.lower, &self.upper) {
            (Some(l), Some(u)) if l.dim() == dim => (l.clone(), u.clone()),
            _ => match self.kind {
                HeuristicKind::PreviousResiduals => (Array2::zeros(dim), Array2::zeros(dim)),
                _ => (Array2::ones(dim), Array2::ones(dim)),
            },
        }
    }

    /// Feeds the residuals of one frame. Invalid (NaN) label pixels
    /// contribute a zero residual.
    pub fn update(&mut self, pred: &Array2<T>, y: &Array2<T>) -> Result<()> {
        check_shape(pred, y)?;
        let residual = Zip::from(pred).and(y).map_collect(|&p, &v| {
            let r = p - v;
            if r.is_nan() {
                T::zero()
            } else {
                r
            }
        });
        match self.kind {
            HeuristicKind::Constant => {}
            HeuristicKind::ResidualModel => {
                let magnitude = residual.mapv(|r| r.abs());
                let next = match self.lower.take() {
                    Some(prev) if prev.dim() == magnitude.dim() => {
                        let keep = T::one() - self.decay;
                        Zip::from(&prev)
                            .and(&magnitude)
                            .map_collect(|&m, &r| keep * m + self.decay * r)
                    }
                    _ => magnitude,
                };
                self.upper = Some(next.clone());
                self.lower = Some(next);
            }
            HeuristicKind::PreviousResiduals => {
                if self.positive.front().is_some_and(|f| f.dim() != residual.dim()) {
                    self.positive.clear();
                    self.negative.clear();
                }
                self.positive.push_back(residual.mapv(|r| r.max(T::zero())));
                self.negative.push_back(residual.mapv(|r| (-r).max(T::zero())));
                while self.positive.len() > self.window {
                    self.positive.pop_front();
                    self.negative.pop_front();
                }
                self.lower = Some(window_mean(&self.positive));
                self.upper = Some(window_mean(&self.negative));
            }
        }
        Ok(())
    }
}

fn window_mean<T: Scalar>(frames: &VecDeque<Array2<T>>) -> Array2<T> {
    let mut acc = Array2::<T>::zeros(frames[0].dim());
    for f in frames {
        acc.zip_mut_with(f, |a, &v| *a = *a + v);
    }
    let n = T::from_count(frames.len());
    acc.mapv_inplace(|v| v / n);
    acc
}

/// Per-pixel intervals around an image model's prediction.
#[derive(Debug, Clone)]
pub struct ImageIntervals<T> {
    pub heuristic: UncertaintyHeuristic<T>,
}

impl<T: Scalar> ImageIntervals<T> {
    pub fn new(heuristic: UncertaintyHeuristic<T>) -> Self {
        Self { heuristic }
    }
}

impl<T: Scalar, M: ImageModel<T>> SetConstructor<T, M> for ImageIntervals<T> {
    fn construct(&self, model: &M, x: &M::Features, adjustment: T) -> Result<PredictionSet<T>> {
        let pred = model.predict_image(x)?;
        let (lower, upper) = self.heuristic.maps(pred.dim());
        image_interval(&pred, &lower, &upper, adjustment)
    }

    fn observe(&mut self, model: &M, x: &M::Features, y: &Array2<T>) -> Result<()> {
        let pred = model.predict_image(x)?;
        self.heuristic.update(&pred, y)
    }
}
