//! Post-hoc evaluation of coverage sequences and traces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::StepRecord;
use crate::error::{Error, Result};
use crate::losses::McState;
use crate::scalar::Scalar;

fn nonempty<V>(xs: &[V], what: &'static str) -> Result<()> {
    if xs.is_empty() {
        Err(Error::Empty(what))
    } else {
        Ok(())
    }
}

pub fn coverage(covered: &[bool]) -> Result<f64> {
    nonempty(covered, "coverage sequence")?;
    Ok(covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64)
}

/// The miscoverage-counter recursion, starting from zero.
pub fn mc_sequence(covered: &[bool], cap: Option<usize>) -> Vec<usize> {
    let mut state = McState::default();
    covered.iter().map(|&c| state.advance(c, cap)).collect()
}

pub fn mc_risk(covered: &[bool], cap: Option<usize>) -> Result<f64> {
    nonempty(covered, "coverage sequence")?;
    let total: usize = mc_sequence(covered, cap).iter().sum();
    Ok(total as f64 / covered.len() as f64)
}

/// Lengths of the maximal runs of miscoverage, in order. A run still open
/// at the end of the sequence is included, truncated.
pub fn streak_lengths(covered: &[bool]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut run = 0;
    for &c in covered {
        if c {
            if run > 0 {
                out.push(run);
            }
            run = 0;
        } else {
            run += 1;
        }
    }
    if run > 0 {
        out.push(run);
    }
    out
}

/// Mean miscoverage streak length; `None` when nothing was miscovered.
pub fn msl(covered: &[bool]) -> Result<Option<f64>> {
    nonempty(covered, "coverage sequence")?;
    let streaks = streak_lengths(covered);
    if streaks.is_empty() {
        return Ok(None);
    }
    Ok(Some(streaks.iter().sum::<usize>() as f64 / streaks.len() as f64))
}

/// Mean over groups of `|group coverage - (1 - alpha)|`, on a 0-1 scale.
pub fn delta_coverage<G: Ord>(covered: &[bool], groups: &[G], alpha: f64) -> Result<f64> {
    nonempty(covered, "coverage sequence")?;
    if covered.len() != groups.len() {
        return Err(Error::DimensionMismatch {
            expected: covered.len(),
            found: groups.len(),
        });
    }
    let mut tally: BTreeMap<&G, (usize, usize)> = BTreeMap::new();
    for (c, g) in covered.iter().zip(groups) {
        let e = tally.entry(g).or_default();
        e.0 += usize::from(*c);
        e.1 += 1;
    }
    let nominal = 1.0 - alpha;
    let total: f64 = tally
        .values()
        .map(|&(hit, n)| (hit as f64 / n as f64 - nominal).abs())
        .sum();
    Ok(total / tally.len() as f64)
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Empty("paired sample of size two or more"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("rank correlation input"));
    }
    Ok(pearson(&ranks(a), &ranks(b)))
}

/// Linear-interpolation quantile of sorted data.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Distribution of finite set sizes. Full-space steps are only counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub mean: Option<f64>,
    pub q05: Option<f64>,
    pub q25: Option<f64>,
    pub median: Option<f64>,
    pub q75: Option<f64>,
    pub q95: Option<f64>,
    pub infinite: usize,
}

impl LengthSummary {
    pub fn from_sizes(sizes: &[f64]) -> Self {
        let mut finite: Vec<f64> = sizes.iter().copied().filter(|s| s.is_finite()).collect();
        let infinite = sizes.len() - finite.len();
        finite.sort_by(f64::total_cmp);
        let q = |p| (!finite.is_empty()).then(|| sorted_quantile(&finite, p));
        Self {
            mean: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
            q05: q(0.05),
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            q95: q(0.95),
            infinite,
        }
    }
}

/// Inclusive 1-based range of steps to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn all() -> Self {
        Self {
            start: 1,
            end: usize::MAX,
        }
    }

    /// Index range of the records whose step falls in the window.
    /// Records must be sorted by step.
    pub fn range<R>(&self, records: &[R], step: impl Fn(&R) -> usize) -> std::ops::Range<usize> {
        let first = records.partition_point(|r| step(r) < self.start);
        let last = records.partition_point(|r| step(r) <= self.end);
        first..last.max(first)
    }

    pub fn select<'a, R>(&self, records: &'a [R], step: impl Fn(&R) -> usize) -> &'a [R] {
        &records[self.range(records, step)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub window: Window,
    pub steps: usize,
    pub coverage: f64,
    pub mean_loss: f64,
    pub mc_risk: f64,
    /// Absent when the window has no miscoverage.
    pub msl: Option<f64>,
    /// 0-1 scale; absent without group labels.
    pub delta_coverage: Option<f64>,
    pub lengths: LengthSummary,
}

/// Evaluates the records of one trace inside `window`. `groups`, when
/// given, is aligned with `records`.
pub fn evaluate<T: Scalar>(
    records: &[StepRecord<T>],
    window: Window,
    groups: Option<&[u32]>,
    alpha: f64,
    mc_cap: Option<usize>,
) -> Result<EvalReport> {
    if let Some(g) = groups {
        if g.len() != records.len() {
            return Err(Error::DimensionMismatch {
                expected: records.len(),
                found: g.len(),
            });
        }
    }
    let range = window.range(records, |r| r.step);
    let selected = &records[range.clone()];
    nonempty(selected, "evaluation window")?;
    let covered: Vec<bool> = selected.iter().map(|r| r.covered).collect();
    let sizes: Vec<f64> = selected.iter().map(|r| r.set_size.as_f64()).collect();
    let mean_loss = selected.iter().map(|r| r.loss.as_f64()).sum::<f64>() / selected.len() as f64;
    let delta = match groups {
        Some(g) => Some(delta_coverage(&covered, &g[range], alpha)?),
        None => None,
    };
    Ok(EvalReport {
        window,
        steps: selected.len(),
        coverage: coverage(&covered)?,
        mean_loss,
        mc_risk: mc_risk(&covered, mc_cap)?,
        msl: msl(&covered)?,
        delta_coverage: delta,
        lengths: LengthSummary::from_sizes(&sizes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flags(s: &str) -> Vec<bool> {
        s.chars().filter(|c| !c.is_whitespace()).map(|c| c == '1').collect()
    }

    #[test]
    fn msl_hand_cases() {
        assert_eq!(msl(&flags("111111010011111")).unwrap(), Some(1.5));
        assert_eq!(msl(&flags("111111111000")).unwrap(), Some(3.0));
        assert_eq!(msl(&flags("1111")).unwrap(), None);
        assert!(msl(&[]).is_err());
    }

    #[test]
    fn mc_examples() {
        assert_eq!(mc_risk(&flags("1001"), None).unwrap(), 0.75);
        assert_eq!(mc_risk(&flags("1111"), None).unwrap(), 0.0);
        assert_eq!(mc_sequence(&flags("000"), Some(2)), vec![1, 2, 2]);
    }

    #[test]
    fn delta_coverage_examples() {
        let c = flags("1111111110");
        assert!(delta_coverage(&c, &[0; 10], 0.1).unwrap().abs() < 1e-15);
        let c = flags("1111111100");
        assert!((delta_coverage(&c, &[3; 10], 0.1).unwrap() - 0.1).abs() < 1e-15);
        assert!(delta_coverage(&c, &[0; 9], 0.1).is_err());
    }

    #[test]
    fn spearman_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&a, &[10.0, 20.0, 30.0, 40.0]).unwrap(), Some(1.0));
        assert_eq!(spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap(), Some(-1.0));
        assert_eq!(spearman(&a, &[1.0, 1.0, 1.0, 1.0]).unwrap(), None);
        // Ties get average ranks: (1, 2.5, 2.5, 4) against (1, 2, 3, 4).
        let rho = spearman(&[1.0, 2.0, 2.0, 3.0], &a).unwrap().unwrap();
        assert!((rho - 0.9486832980505138).abs() < 1e-12);
    }

    #[test]
    fn length_summary_skips_infinite() {
        let s = LengthSummary::from_sizes(&[1.0, f64::INFINITY, 3.0]);
        assert_eq!(s.mean, Some(2.0));
        assert_eq!(s.median, Some(2.0));
        assert_eq!(s.infinite, 1);
        assert_eq!(LengthSummary::from_sizes(&[]).mean, None);
    }

    #[test]
    fn window_selection() {
        let steps: Vec<usize> = (1..=10).collect();
        let w = Window { start: 3, end: 5 };
        assert_eq!(w.select(&steps, |&s| s), &[3, 4, 5]);
        assert!(Window { start: 20, end: 30 }.select(&steps, |&s| s).is_empty());
        assert_eq!(Window::all().select(&steps, |&s| s).len(), 10);
    }

    proptest! {
        #[test]
        fn mc_dominates_miscoverage(c in prop::collection::vec(any::<bool>(), 1..300)) {
            let miss_rate = c.iter().filter(|&&x| !x).count() as f64 / c.len() as f64;
            prop_assert!(mc_risk(&c, None).unwrap() >= miss_rate);
        }

        #[test]
        fn streaks_partition_misses(c in prop::collection::vec(any::<bool>(), 1..300)) {
            let misses = c.iter().filter(|&&x| !x).count();
            prop_assert_eq!(streak_lengths(&c).iter().sum::<usize>(), misses);
            if let Some(m) = msl(&c).unwrap() {
                prop_assert!(m >= 1.0);
            }
        }
    }
}
