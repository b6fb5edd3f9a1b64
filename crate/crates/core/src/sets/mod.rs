//! Prediction sets and the functions that build them from model outputs
//! and a calibration adjustment.
//!
//! Every constructor here is monotone in its adjustment: a larger
//! adjustment never produces a smaller set. The controllers rely on that.

mod classification;
mod image;
mod regression;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::models::OnlineModel;
use crate::scalar::Scalar;

pub use classification::{class_cumulative_set, class_threshold_set, ClassCumulative, ClassThreshold};
pub use image::{image_interval, HeuristicKind, ImageIntervals, UncertaintyHeuristic};
pub use regression::{cqr_interval, cqr_score, quantile_scale_interval, Cqr, QuantileScale};

/// Per-pixel closed intervals. A pixel whose `lo > hi` is an empty interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalGrid<T> {
    lo: Array2<T>,
    hi: Array2<T>,
}

impl<T: Scalar> IntervalGrid<T> {
    pub fn new(lo: Array2<T>, hi: Array2<T>) -> Result<Self> {
        if lo.dim() != hi.dim() {
            return Err(Error::ShapeMismatch {
                expected: lo.dim(),
                found: hi.dim(),
            });
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.lo.dim()
    }

    pub fn lo(&self) -> &Array2<T> {
        &self.lo
    }

    pub fn hi(&self) -> &Array2<T> {
        &self.hi
    }

    #[inline]
    pub fn covers(&self, row: usize, col: usize, y: T) -> bool {
        let (lo, hi) = (self.lo[[row, col]], self.hi[[row, col]]);
        lo <= y && y <= hi
    }

    /// Mean interval length over all pixels; inverted pixels count as zero.
    pub fn mean_length(&self) -> T {
        let n = self.lo.len();
        if n == 0 {
            return T::zero();
        }
        let total = self
            .lo
            .iter()
            .zip(self.hi.iter())
            .fold(T::zero(), |acc, (&lo, &hi)| acc + (hi - lo).max(T::zero()));
        total / T::from_count(n)
    }
}

/// A prediction set, whatever the label space.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionSet<T> {
    Empty,
    Full,
    /// Closed real interval `[lo, hi]` with `lo <= hi`.
    Interval { lo: T, hi: T },
    /// Sorted, deduplicated class indices (0-based).
    Labels(Vec<usize>),
    Grid(IntervalGrid<T>),
}

impl<T: Scalar> PredictionSet<T> {
    /// Builds `[lo, hi]`, collapsing to `Empty` when the endpoints cross.
    pub fn interval(lo: T, hi: T) -> Self {
        if lo <= hi {
            PredictionSet::Interval { lo, hi }
        } else {
            PredictionSet::Empty
        }
    }

    pub fn labels(mut members: Vec<usize>) -> Self {
        if members.is_empty() {
            return PredictionSet::Empty;
        }
        members.sort_unstable();
        members.dedup();
        PredictionSet::Labels(members)
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, PredictionSet::Empty)
    }

    pub fn is_full(&self) -> bool {
        matches!(self, PredictionSet::Full)
    }

    /// Endpoints of a real-valued set. `Full` maps to `(-inf, inf)`.
    pub fn bounds(&self) -> Option<(T, T)> {
        match self {
            PredictionSet::Interval { lo, hi } => Some((*lo, *hi)),
            PredictionSet::Full => Some((T::neg_infinity(), T::infinity())),
            _ => None,
        }
    }

    /// Size statistic recorded in traces: interval length, label count,
    /// mean pixel-interval length, 0 for `Empty` and infinity for `Full`.
    pub fn size(&self) -> T {
        match self {
            PredictionSet::Empty => T::zero(),
            PredictionSet::Full => T::infinity(),
            PredictionSet::Interval { lo, hi } => *hi - *lo,
            PredictionSet::Labels(m) => T::from_count(m.len()),
            PredictionSet::Grid(g) => g.mean_length(),
        }
    }

    pub fn contains_value(&self, y: T) -> Result<bool> {
        match self {
            PredictionSet::Empty => Ok(false),
            PredictionSet::Full => Ok(true),
            PredictionSet::Interval { lo, hi } => Ok(*lo <= y && y <= *hi),
            PredictionSet::Labels(_) => Err(Error::KindMismatch("real label against a label set")),
            PredictionSet::Grid(_) => Err(Error::KindMismatch("real label against an interval grid")),
        }
    }

    pub fn contains_label(&self, k: usize) -> Result<bool> {
        match self {
            PredictionSet::Empty => Ok(false),
            PredictionSet::Full => Ok(true),
            PredictionSet::Labels(m) => Ok(m.binary_search(&k).is_ok()),
            PredictionSet::Interval { .. } => Err(Error::KindMismatch("class label against an interval")),
            PredictionSet::Grid(_) => Err(Error::KindMismatch("class label against an interval grid")),
        }
    }

    /// Set inclusion for sets of the same kind.
    pub fn is_subset_of(&self, other: &PredictionSet<T>) -> Result<bool> {
        use PredictionSet::*;
        Ok(match (self, other) {
            (Empty, _) | (_, Full) => true,
            (Full, _) => false,
            (_, Empty) => false,
            (Interval { lo: a, hi: b }, Interval { lo: c, hi: d }) => *c <= *a && *b <= *d,
            (Labels(a), Labels(b)) => a.iter().all(|k| b.binary_search(k).is_ok()),
            (Grid(a), Grid(b)) => {
                if a.dim() != b.dim() {
                    return Err(Error::ShapeMismatch {
                        expected: a.dim(),
                        found: b.dim(),
                    });
                }
                a.lo.iter()
                    .zip(a.hi.iter())
                    .zip(b.lo.iter().zip(b.hi.iter()))
                    .all(|((&lo_a, &hi_a), (&lo_b, &hi_b))| lo_a > hi_a || (lo_b <= lo_a && hi_a <= hi_b))
            }
            _ => return Err(Error::KindMismatch("comparing sets of different kinds")),
        })
    }
}

/// Anything that can be checked for membership in a [`PredictionSet`].
pub trait Label<T: Scalar> {
    fn is_covered(&self, set: &PredictionSet<T>) -> Result<bool>;

    /// The label as a real number, when it is one. Used for trace export.
    fn as_scalar(&self) -> Option<T> {
        None
    }
}

macro_rules! real_label {
    ($t:ty) => {
        impl Label<$t> for $t {
            fn is_covered(&self, set: &PredictionSet<$t>) -> Result<bool> {
                set.contains_value(*self)
            }

            fn as_scalar(&self) -> Option<$t> {
                Some(*self)
            }
        }
    };
}

real_label!(f32);
real_label!(f64);

impl<T: Scalar> Label<T> for usize {
    fn is_covered(&self, set: &PredictionSet<T>) -> Result<bool> {
        set.contains_label(*self)
    }
}

/// An image label is covered when every valid (non-NaN) pixel is inside
/// its interval.
impl<T: Scalar> Label<T> for Array2<T> {
    fn is_covered(&self, set: &PredictionSet<T>) -> Result<bool> {
        match set {
            PredictionSet::Empty => Ok(false),
            PredictionSet::Full => Ok(true),
            PredictionSet::Grid(g) => {
                if g.dim() != self.dim() {
                    return Err(Error::ShapeMismatch {
                        expected: self.dim(),
                        found: g.dim(),
                    });
                }
                Ok(self
                    .indexed_iter()
                    .all(|((r, c), &y)| y.is_nan() || g.covers(r, c, y)))
            }
            _ => Err(Error::KindMismatch("image label against a non-grid set")),
        }
    }
}

/// Builds the inside-safeguard set `f(x, adjustment, model)`.
///
/// `construct` must be monotone in `adjustment`. `score` and `observe`
/// are called after the label is revealed and before the model is
/// updated, so they see the same model that produced the set.
pub trait SetConstructor<T: Scalar, M: OnlineModel<T>> {
    fn construct(&self, model: &M, x: &M::Features, adjustment: T) -> Result<PredictionSet<T>>;

    /// Conformity score of the revealed label, if the constructor defines one.
    fn score(&self, _model: &M, _x: &M::Features, _y: &M::Label) -> Result<Option<T>> {
        Ok(None)
    }

    /// Hook for constructors that keep per-stream state (residual windows).
    fn observe(&mut self, _model: &M, _x: &M::Features, _y: &M::Label) -> Result<()> {
        Ok(())
    }
}
