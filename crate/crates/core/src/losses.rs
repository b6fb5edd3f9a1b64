//! Bounded losses fed to the calibrators.
//!
//! A loss used with a controller at level `r` must score the full space
//! strictly below `r` and the empty set strictly above it; the bound
//! certificates are only meaningful under that contract.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sets::{Label, PredictionSet};

/// Default fraction of the center region that must be covered.
pub const DEFAULT_CENTER_THRESHOLD: f64 = 0.6;

/// Default cap on the miscoverage counter; doubles as its loss bound.
pub const DEFAULT_MC_CAP: usize = 50;

/// A loss `L(y, C)` with values in `[-B, B]`.
pub trait RiskLoss<T: Scalar, Y: ?Sized> {
    /// The declared bound `B`.
    fn bound(&self) -> T;

    /// Scores one revealed label against the set announced for it.
    /// Stateful losses advance their state.
    fn evaluate(&mut self, y: &Y, set: &PredictionSet<T>) -> Result<T>;

    /// Loss of the full space, for any label.
    fn full_space_loss(&self) -> T {
        T::zero()
    }

    /// Smallest loss the empty set can receive, for any label and state.
    fn empty_set_loss(&self) -> T {
        T::one()
    }

    fn reset(&mut self) {}
}

impl<T: Scalar, Y: ?Sized, L: RiskLoss<T, Y> + ?Sized> RiskLoss<T, Y> for Box<L> {
    fn bound(&self) -> T {
        (**self).bound()
    }

    fn evaluate(&mut self, y: &Y, set: &PredictionSet<T>) -> Result<T> {
        (**self).evaluate(y, set)
    }

    fn full_space_loss(&self) -> T {
        (**self).full_space_loss()
    }

    fn empty_set_loss(&self) -> T {
        (**self).empty_set_loss()
    }

    fn reset(&mut self) {
        (**self).reset()
    }
}

/// `1{y not in set}`.
pub fn binary_loss<T: Scalar, Y: Label<T> + ?Sized>(y: &Y, set: &PredictionSet<T>) -> Result<T> {
    Ok(if y.is_covered(set)? { T::zero() } else { T::one() })
}

/// Length of the current run of consecutive miscoverage events.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct McState {
    pub counter: usize,
}

impl McState {
    /// Advances the recursion; the returned counter is `MC_t`, capped.
    pub fn advance(&mut self, covered: bool, cap: Option<usize>) -> usize {
        self.counter = if covered { 0 } else { self.counter + 1 };
        if let Some(cap) = cap {
            self.counter = self.counter.min(cap);
        }
        self.counter
    }
}

/// One step of the miscoverage-counter loss.
pub fn mc_loss<T: Scalar, Y: Label<T> + ?Sized>(
    state: McState,
    y: &Y,
    set: &PredictionSet<T>,
    cap: Option<usize>,
) -> Result<(T, McState)> {
    let mut next = state;
    let mc = next.advance(y.is_covered(set)?, cap);
    Ok((T::from_count(mc), next))
}

fn valid_pixels<T: Scalar>(y: &Array2<T>, mask: Option<&Array2<bool>>) -> Result<Array2<bool>> {
    let mut valid = y.mapv(|v| !v.is_nan());
    if let Some(mask) = mask {
        if mask.dim() != y.dim() {
            return Err(Error::ShapeMismatch {
                expected: y.dim(),
                found: mask.dim(),
            });
        }
        valid.zip_mut_with(mask, |v, &m| *v = *v && m);
    }
    Ok(valid)
}

/// Fraction of pixels in `region` (or the whole grid) whose label escapes
/// its interval, counting only pixels that are valid.
fn miscovered_fraction<T: Scalar>(
    y: &Array2<T>,
    set: &PredictionSet<T>,
    valid: &Array2<bool>,
    region: Option<CenterRegion>,
) -> Result<T> {
    let (rows, cols) = y.dim();
    let (r0, c0, r1, c1) = match region {
        Some(reg) => (reg.row, reg.col, reg.row + reg.rows, reg.col + reg.cols),
        None => (0, 0, rows, cols),
    };
    let grid = match set {
        PredictionSet::Grid(g) => {
            if g.dim() != y.dim() {
                return Err(Error::ShapeMismatch {
                    expected: y.dim(),
                    found: g.dim(),
                });
            }
            Some(g)
        }
        PredictionSet::Empty | PredictionSet::Full => None,
        _ => return Err(Error::KindMismatch("image label against a non-grid set")),
    };
    let mut total = 0usize;
    let mut missed = 0usize;
    for r in r0..r1 {
        for c in c0..c1 {
            if !valid[[r, c]] {
                continue;
            }
            total += 1;
            let covered = match grid {
                Some(g) => g.covers(r, c, y[[r, c]]),
                None => set.is_full(),
            };
            if !covered {
                missed += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Empty("valid pixel set"));
    }
    Ok(T::from_count(missed) / T::from_count(total))
}

/// Fraction of valid pixels not covered by their interval. Pixels whose
/// label is NaN or whose mask entry is false are ignored.
pub fn image_miscoverage<T: Scalar>(
    y: &Array2<T>,
    set: &PredictionSet<T>,
    mask: Option<&Array2<bool>>,
) -> Result<T> {
    let valid = valid_pixels(y, mask)?;
    miscovered_fraction(y, set, &valid, None)
}

/// Rectangle of pixels `[row, row + rows) x [col, col + cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CenterRegion {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

impl CenterRegion {
    /// The middle 50x50 block, or the middle half of each axis when the
    /// grid is smaller than that.
    pub fn default_for((rows, cols): (usize, usize)) -> Self {
        let side = |n: usize| if n >= 50 { 50 } else { (n / 2).max(1).min(n) };
        let (h, w) = (side(rows), side(cols));
        Self {
            row: rows.saturating_sub(h) / 2,
            col: cols.saturating_sub(w) / 2,
            rows: h,
            cols: w,
        }
    }

    fn check(&self, dim: (usize, usize)) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Empty("center region"));
        }
        if self.row + self.rows > dim.0 || self.col + self.cols > dim.1 {
            return Err(Error::InvalidSpec(format!("center region {self:?} exceeds grid {dim:?}")));
        }
        Ok(())
    }
}

/// `1` when the covered fraction of the center region is at most
/// `threshold`, else `0`.
pub fn center_failure<T: Scalar>(
    y: &Array2<T>,
    set: &PredictionSet<T>,
    region: CenterRegion,
    threshold: T,
    mask: Option<&Array2<bool>>,
) -> Result<T> {
    region.check(y.dim())?;
    let valid = valid_pixels(y, mask)?;
    let covered = T::one() - miscovered_fraction(y, set, &valid, Some(region))?;
    Ok(if covered <= threshold { T::one() } else { T::zero() })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BinaryLoss;

impl<T: Scalar, Y: Label<T> + ?Sized> RiskLoss<T, Y> for BinaryLoss {
    fn bound(&self) -> T {
        T::one()
    }

    fn evaluate(&mut self, y: &Y, set: &PredictionSet<T>) -> Result<T> {
        binary_loss(y, set)
    }
}

/// Miscoverage counter loss, capped so that it is bounded by `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiscoverageCounter {
    cap: usize,
    state: McState,
}

impl MiscoverageCounter {
    pub fn new(cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::InvalidSpec("miscoverage counter cap must be positive".into()));
        }
        Ok(Self {
            cap,
            state: McState::default(),
        })
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn state(&self) -> McState {
        self.state
    }
}

impl Default for MiscoverageCounter {
    fn default() -> Self {
        Self {
            cap: DEFAULT_MC_CAP,
            state: McState::default(),
        }
    }
}

impl<T: Scalar, Y: Label<T> + ?Sized> RiskLoss<T, Y> for MiscoverageCounter {
    fn bound(&self) -> T {
        T::from_count(self.cap)
    }

    fn evaluate(&mut self, y: &Y, set: &PredictionSet<T>) -> Result<T> {
        let (loss, next) = mc_loss(self.state, y, set, Some(self.cap))?;
        self.state = next;
        Ok(loss)
    }

    fn reset(&mut self) {
        self.state = McState::default();
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageMiscoverage {
    pub mask: Option<Array2<bool>>,
}

impl<T: Scalar> RiskLoss<T, Array2<T>> for ImageMiscoverage {
    fn bound(&self) -> T {
        T::one()
    }

    fn evaluate(&mut self, y: &Array2<T>, set: &PredictionSet<T>) -> Result<T> {
        image_miscoverage(y, set, self.mask.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenterFailure<T> {
    /// `None` picks [`CenterRegion::default_for`] from each label's shape.
    pub region: Option<CenterRegion>,
    pub threshold: T,
    pub mask: Option<Array2<bool>>,
}

impl<T: Scalar> CenterFailure<T> {
    pub fn new(region: Option<CenterRegion>, threshold: T) -> Result<Self> {
        if !(threshold > T::zero() && threshold < T::one()) {
            return Err(Error::InvalidSpec(format!("center threshold {threshold} must lie in (0, 1)")));
        }
        Ok(Self {
            region,
            threshold,
            mask: None,
        })
    }
}

impl<T: Scalar> Default for CenterFailure<T> {
    fn default() -> Self {
        Self {
            region: None,
            threshold: T::lit(DEFAULT_CENTER_THRESHOLD),
            mask: None,
        }
    }
}

impl<T: Scalar> RiskLoss<T, Array2<T>> for CenterFailure<T> {
    fn bound(&self) -> T {
        T::one()
    }

    fn evaluate(&mut self, y: &Array2<T>, set: &PredictionSet<T>) -> Result<T> {
        let region = self.region.unwrap_or_else(|| CenterRegion::default_for(y.dim()));
        center_failure(y, set, region, self.threshold, self.mask.as_ref())
    }
}
