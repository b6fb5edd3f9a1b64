//! Simultaneous control of several risks with one theta per risk.
//!
//! Each coordinate follows its own Rolling RC update; the constructor sees
//! a single adjustment obtained by aggregating the stretched coordinates.

use serde::{Deserialize, Serialize};

use crate::engine::{check_loss, Certificate, LossContract, RiskSpec, Verdict, CERTIFICATE_TOLERANCE};
use crate::error::{Error, Result};
use crate::losses::RiskLoss;
use crate::models::OnlineModel;
use crate::scalar::Scalar;
use crate::sets::{Label, PredictionSet, SetConstructor};
use crate::stretch::Stretch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    #[default]
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de> + Default"))]
pub struct MultiRiskSpec<T> {
    pub risks: Vec<RiskSpec<T>>,
    #[serde(default)]
    pub aggregation: Aggregation,
    /// Announce the empty set when any coordinate drops below its `m`,
    /// which enables the two-sided bound.
    #[serde(default)]
    pub two_sided: bool,
}

impl<T: Scalar> MultiRiskSpec<T> {
    pub fn new(risks: Vec<RiskSpec<T>>, aggregation: Aggregation, two_sided: bool) -> Result<Self> {
        let spec = Self {
            risks,
            aggregation,
            two_sided,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.risks.is_empty() {
            return Err(Error::InvalidSpec("multi-risk control needs at least one risk".into()));
        }
        self.risks.iter().try_for_each(RiskSpec::validate)
    }

    pub fn len(&self) -> usize {
        self.risks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.risks.is_empty()
    }

    pub fn theta_init(&self) -> Vec<T> {
        self.risks.iter().map(|r| r.theta_init).collect()
    }

    /// `D^i = (M^i + 2 gamma^i B^i - theta^i_1) / gamma^i`.
    pub fn upper_constant(&self, i: usize, theta_1: T) -> T {
        let r = &self.risks[i];
        (r.theta_envelope().1 - theta_1) / r.gamma
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Coordinate-wise `theta^i + gamma^i (l^i - r^i)`.
pub fn update_vector<T: Scalar>(theta: &[T], losses: &[T], spec: &MultiRiskSpec<T>) -> Result<Vec<T>> {
    check_dim(spec.len(), theta.len())?;
    check_dim(spec.len(), losses.len())?;
    theta
        .iter()
        .zip(losses)
        .zip(&spec.risks)
        .map(|((&th, &l), r)| {
            check_loss(l, r.loss_bound)?;
            Ok(th + r.gamma * (l - r.target))
        })
        .collect()
}

/// Mean or max of `phi(theta^i)`.
pub fn aggregate<T: Scalar>(theta: &[T], stretch: &Stretch<T>, aggregation: Aggregation) -> T {
    let mapped = theta.iter().map(|&t| stretch.apply(t));
    match aggregation {
        Aggregation::Max => mapped.fold(T::neg_infinity(), T::max),
        Aggregation::Mean => mapped.fold(T::zero(), |a, b| a + b) / T::from_count(theta.len()),
    }
}

/// Full space if any coordinate exceeds its `M`; otherwise, in two-sided
/// mode, the empty set if any coordinate is below its `m`. Full wins ties.
pub fn multi_safeguarded_construct<T, M, C>(
    x: &M::Features,
    theta: &[T],
    model: &M,
    constructor: &C,
    spec: &MultiRiskSpec<T>,
    stretch: &Stretch<T>,
) -> Result<PredictionSet<T>>
where
    T: Scalar,
    M: OnlineModel<T>,
    C: SetConstructor<T, M>,
{
    check_dim(spec.len(), theta.len())?;
    if theta.iter().zip(&spec.risks).any(|(&t, r)| t > r.upper) {
        return Ok(PredictionSet::Full);
    }
    if spec.two_sided && theta.iter().zip(&spec.risks).any(|(&t, r)| t < r.lower) {
        return Ok(PredictionSet::Empty);
    }
    constructor.construct(model, x, aggregate(theta, stretch, spec.aggregation))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStepRecord<T> {
    pub step: usize,
    pub losses: Vec<T>,
    pub theta_pre: Vec<T>,
    pub theta_post: Vec<T>,
    pub adjustment: T,
    pub set_size: T,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de> + Default"))]
pub struct MultiTrace<T> {
    pub spec: MultiRiskSpec<T>,
    pub contracts: Vec<LossContract<T>>,
    pub records: Vec<MultiStepRecord<T>>,
}

impl<T: Scalar> MultiTrace<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn mean_losses(&self) -> Vec<f64> {
        let n = self.records.len().max(1) as f64;
        (0..self.spec.len())
            .map(|i| self.records.iter().map(|r| r.losses[i].as_f64()).sum::<f64>() / n)
            .collect()
    }

    pub fn covered(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.covered).collect()
    }

    pub fn certificates(&self) -> Vec<Certificate> {
        multi_certificates(&self.spec, &self.contracts, &self.records)
    }
}

fn upper_violation<T: Scalar>(contracts: &[LossContract<T>], spec: &MultiRiskSpec<T>) -> Option<String> {
    contracts.iter().zip(&spec.risks).enumerate().find_map(|(i, (c, r))| {
        (c.full_space >= r.target).then(|| {
            format!("risk {i}: loss of the full space {} is not below r = {}", c.full_space, r.target)
        })
    })
}

fn two_sided_violation<T: Scalar>(contracts: &[LossContract<T>], spec: &MultiRiskSpec<T>) -> Option<String> {
    if !spec.two_sided {
        return Some("empty-set safeguard disabled".into());
    }
    contracts
        .iter()
        .zip(&spec.risks)
        .enumerate()
        .find_map(|(i, (c, r))| c.violation(r.target).map(|v| format!("risk {i}: {v}")))
}

/// First step where one coordinate sits below its `m` while another sits
/// above its `M`. The full space wins there, so the low coordinate gets no
/// empty-set push and the two-sided guarantees lose their hypothesis.
pub fn first_conflict<T: Scalar>(spec: &MultiRiskSpec<T>, records: &[MultiStepRecord<T>]) -> Option<(usize, usize, usize)> {
    records.iter().find_map(|r| {
        let low = spec.risks.iter().zip(&r.theta_pre).position(|(k, &th)| th < k.lower)?;
        let high = spec.risks.iter().zip(&r.theta_pre).position(|(k, &th)| th > k.upper)?;
        Some((r.step, low, high))
    })
}

/// Per-risk certificates: the upper theta envelope and the one-sided
/// average bound always, the lower envelope and the two-sided bound when
/// the spec declares the empty-set safeguard and no coordinates conflict.
pub fn multi_certificates<T: Scalar>(
    spec: &MultiRiskSpec<T>,
    contracts: &[LossContract<T>],
    records: &[MultiStepRecord<T>],
) -> Vec<Certificate> {
    let upper = upper_violation(contracts, spec);
    let lower = two_sided_violation(contracts, spec).or_else(|| {
        first_conflict(spec, records).map(|(step, low, high)| {
            format!("at step {step} risk {low} is below its lower threshold while risk {high} is above its upper threshold")
        })
    });
    let mut out = Vec::new();
    for (i, risk) in spec.risks.iter().enumerate() {
        let (lo_env, hi_env) = risk.theta_envelope();
        let theta_1 = records.first().map_or(risk.theta_init, |r| r.theta_pre[i]);
        let d = spec.upper_constant(i, theta_1).as_f64();
        let (gamma, target) = (risk.gamma.as_f64(), risk.target.as_f64());
        let two_sided_const = (theta_1 - lo_env).max(hi_env - theta_1).as_f64() / gamma;

        let mut upper_env = Verdict::Pass;
        let mut lower_env = Verdict::Pass;
        let mut one_sided = Verdict::Pass;
        let mut two_sided = Verdict::Pass;
        let mut sum = 0.0_f64;
        for (k, r) in records.iter().enumerate() {
            for th in [r.theta_pre[i], r.theta_post[i]] {
                if upper_env == Verdict::Pass && th > hi_env {
                    upper_env = Verdict::Fail {
                        step: r.step,
                        value: th.as_f64(),
                        bound: hi_env.as_f64(),
                    };
                }
                if lower_env == Verdict::Pass && th < lo_env {
                    lower_env = Verdict::Fail {
                        step: r.step,
                        value: th.as_f64(),
                        bound: lo_env.as_f64(),
                    };
                }
            }
            sum += r.losses[i].as_f64();
            let t = (k + 1) as f64;
            let mean = sum / t;
            if one_sided == Verdict::Pass && !(mean <= target + d / t + CERTIFICATE_TOLERANCE) {
                one_sided = Verdict::Fail {
                    step: r.step,
                    value: mean,
                    bound: target + d / t,
                };
            }
            let dev = (mean - target).abs();
            if two_sided == Verdict::Pass && !(dev <= two_sided_const / t + CERTIFICATE_TOLERANCE) {
                two_sided = Verdict::Fail {
                    step: r.step,
                    value: dev,
                    bound: two_sided_const / t,
                };
            }
        }
        let gate = |v: Verdict, reason: &Option<String>| match reason {
            Some(reason) => Verdict::NotGuaranteed { reason: reason.clone() },
            None => v,
        };
        out.push(Certificate::new(format!("risk {i} theta upper envelope"), gate(upper_env, &upper)));
        out.push(Certificate::new(format!("risk {i} average risk upper bound"), gate(one_sided, &upper)));
        if spec.two_sided {
            out.push(Certificate::new(format!("risk {i} theta lower envelope"), gate(lower_env, &lower)));
            out.push(Certificate::new(format!("risk {i} two-sided average risk bound"), gate(two_sided, &lower)));
        }
    }
    out
}

struct Announced<T> {
    set: PredictionSet<T>,
    adjustment: T,
}

/// Online controller for `k` risks sharing one constructor.
pub struct MultiRiskController<T, M, C, L>
where
    T: Scalar,
    M: OnlineModel<T>,
{
    spec: MultiRiskSpec<T>,
    stretch: Stretch<T>,
    theta: Vec<T>,
    model: M,
    constructor: C,
    losses: Vec<L>,
    contracts: Vec<LossContract<T>>,
    announced: Option<Announced<T>>,
    records: Vec<MultiStepRecord<T>>,
}

impl<T, M, C, L> MultiRiskController<T, M, C, L>
where
    T: Scalar,
    M: OnlineModel<T>,
    M::Label: Label<T>,
    C: SetConstructor<T, M>,
    L: RiskLoss<T, M::Label>,
{
    pub fn new(spec: MultiRiskSpec<T>, stretch: Stretch<T>, model: M, constructor: C, losses: Vec<L>) -> Result<Self> {
        spec.validate()?;
        check_dim(spec.len(), losses.len())?;
        if stretch.kind().is_adaptive() {
            return Err(Error::InvalidSpec(
                "adaptive stretching is not defined for multi-risk control".into(),
            ));
        }
        for (loss, risk) in losses.iter().zip(&spec.risks) {
            if loss.bound() > risk.loss_bound {
                return Err(Error::InvalidSpec(format!(
                    "loss declares bound {} but the spec allows only {}",
                    loss.bound(),
                    risk.loss_bound
                )));
            }
        }
        let contracts = losses.iter().map(|l| LossContract::of(l)).collect();
        Ok(Self {
            theta: spec.theta_init(),
            spec,
            stretch,
            model,
            constructor,
            losses,
            contracts,
            announced: None,
            records: Vec::new(),
        })
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn spec(&self) -> &MultiRiskSpec<T> {
        &self.spec
    }

    pub fn records(&self) -> &[MultiStepRecord<T>] {
        &self.records
    }

    pub fn announce(&mut self, x: &M::Features) -> Result<&PredictionSet<T>> {
        if self.announced.is_some() {
            return Err(Error::Protocol("announce called twice without resolve"));
        }
        let set = multi_safeguarded_construct(x, &self.theta, &self.model, &self.constructor, &self.spec, &self.stretch)?;
        let adjustment = aggregate(&self.theta, &self.stretch, self.spec.aggregation);
        Ok(&self.announced.insert(Announced { set, adjustment }).set)
    }

    pub fn resolve(&mut self, x: &M::Features, y: &M::Label) -> Result<&MultiStepRecord<T>> {
        let Announced { set, adjustment } =
            self.announced.take().ok_or(Error::Protocol("resolve called before announce"))?;
        let losses = self
            .losses
            .iter_mut()
            .map(|l| l.evaluate(y, &set))
            .collect::<Result<Vec<_>>>()?;
        let covered = y.is_covered(&set)?;
        let theta_post = update_vector(&self.theta, &losses, &self.spec)?;
        self.constructor.observe(&self.model, x, y)?;
        self.model.update(x, y)?;
        let theta_pre = std::mem::replace(&mut self.theta, theta_post.clone());
        self.records.push(MultiStepRecord {
            step: self.records.len() + 1,
            losses,
            theta_pre,
            theta_post,
            adjustment,
            set_size: set.size(),
            covered,
        });
        Ok(self.records.last().expect("record just pushed"))
    }

    pub fn step(&mut self, x: &M::Features, y: &M::Label) -> Result<&MultiStepRecord<T>> {
        self.announce(x)?;
        self.resolve(x, y)
    }

    pub fn run<I>(&mut self, stream: I) -> Result<()>
    where
        I: IntoIterator<Item = Result<(M::Features, M::Label)>>,
    {
        for item in stream {
            let (x, y) = item?;
            self.step(&x, &y)?;
        }
        Ok(())
    }

    pub fn into_trace(self) -> MultiTrace<T> {
        MultiTrace {
            spec: self.spec,
            contracts: self.contracts,
            records: self.records,
        }
    }
}

/// Runs multi-risk control over a whole stream.
pub fn run_multi_stream<T, M, C, L, I>(
    stream: I,
    model: M,
    constructor: C,
    losses: Vec<L>,
    spec: MultiRiskSpec<T>,
    stretch: Stretch<T>,
) -> Result<MultiTrace<T>>
where
    T: Scalar,
    M: OnlineModel<T>,
    M::Label: Label<T>,
    C: SetConstructor<T, M>,
    L: RiskLoss<T, M::Label>,
    I: IntoIterator<Item = Result<(M::Features, M::Label)>>,
{
    let mut controller = MultiRiskController::new(spec, stretch, model, constructor, losses)?;
    controller.run(stream)?;
    Ok(controller.into_trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ConstantQuantiles;
    use crate::sets::Cqr;
    use proptest::prelude::*;

    fn risk(r: f64, gamma: f64) -> RiskSpec<f64> {
        RiskSpec::new(r, gamma, -1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn update_examples() {
        let spec = MultiRiskSpec::new(vec![risk(0.2, 0.1), risk(0.1, 0.01)], Aggregation::Max, false).unwrap();
        assert_eq!(update_vector(&[0.3, -0.2], &[0.2, 0.1], &spec).unwrap(), vec![0.3, -0.2]);
        let th = update_vector(&[0.0, 0.0], &[1.0, 1.0], &spec).unwrap();
        assert!((th[0] - 0.08).abs() < 1e-15 && (th[1] - 0.009).abs() < 1e-15);
        assert!(update_vector(&[0.0], &[1.0, 1.0], &spec).is_err());
        assert!(update_vector(&[0.0, 0.0], &[1.0, 2.0], &spec).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let id = Stretch::identity();
        assert_eq!(aggregate(&[1.0, 3.0], &id, Aggregation::Max), 3.0);
        assert_eq!(aggregate(&[1.0, 3.0], &id, Aggregation::Mean), 2.0);
        let e = Stretch::exponential();
        assert_eq!(aggregate(&[0.7], &e, Aggregation::Max), e.apply(0.7));
        assert_eq!(aggregate(&[0.7], &e, Aggregation::Mean), e.apply(0.7));
    }

    #[test]
    fn safeguard_priority() {
        let spec = MultiRiskSpec::new(vec![risk(0.2, 0.1), risk(0.1, 0.1)], Aggregation::Max, true).unwrap();
        let model = ConstantQuantiles::new(vec![(0.05, 0.0), (0.95, 1.0)]).unwrap();
        let cqr = Cqr::for_miscoverage(0.1);
        let id = Stretch::identity();
        let x = vec![];
        let build = |th: &[f64]| multi_safeguarded_construct(&x, th, &model, &cqr, &spec, &id).unwrap();
        assert_eq!(build(&[2.0, -2.0]), PredictionSet::Full);
        assert_eq!(build(&[0.0, -2.0]), PredictionSet::Empty);
        assert_eq!(build(&[0.0, 0.5]), PredictionSet::interval(-0.5, 1.5));
        let one_sided = MultiRiskSpec { two_sided: false, ..spec.clone() };
        let set = multi_safeguarded_construct(&x, &[0.0, -2.0], &model, &cqr, &one_sided, &id).unwrap();
        assert_eq!(set, PredictionSet::interval(0.0, 1.0));
    }

    #[test]
    fn conflicting_coordinates_void_the_two_sided_certificates() {
        let spec = MultiRiskSpec::new(vec![risk(0.2, 0.1), risk(0.1, 0.1)], Aggregation::Max, true).unwrap();
        let rec = |step, theta_pre: Vec<f64>| MultiStepRecord {
            step,
            losses: vec![0.2, 0.1],
            theta_post: theta_pre.clone(),
            theta_pre,
            adjustment: 0.0,
            set_size: 1.0,
            covered: true,
        };
        let records = vec![rec(1, vec![0.0, 0.0]), rec(2, vec![-1.5, 0.5]), rec(3, vec![-1.5, 1.5])];
        assert_eq!(first_conflict(&spec, &records[..2]), None);
        assert_eq!(first_conflict(&spec, &records), Some((3, 0, 1)));
        let contracts = vec![LossContract { full_space: 0.0, empty_set: 1.0 }; 2];
        let certs = multi_certificates(&spec, &contracts, &records);
        let lower: Vec<_> = certs.iter().filter(|c| c.name.contains("lower") || c.name.contains("two-sided")).collect();
        assert_eq!(lower.len(), 4);
        assert!(lower.iter().all(|c| matches!(c.verdict, Verdict::NotGuaranteed { .. })));
    }

    #[test]
    fn adaptive_stretch_is_rejected() {
        let spec = MultiRiskSpec::new(vec![risk(0.1, 0.1)], Aggregation::Max, false).unwrap();
        let model = ConstantQuantiles::new(vec![(0.05, 0.0), (0.95, 1.0)]).unwrap();
        let stretch = Stretch::score_adaptive(0.1, -1.0, 1.0).unwrap();
        let c = MultiRiskController::new(spec, stretch, model, Cqr::for_miscoverage(0.1), vec![crate::losses::BinaryLoss]);
        assert!(c.is_err());
    }

    proptest! {
        #[test]
        fn max_dominates_mean(
            theta in prop::collection::vec(-1.0..1.0_f64, 1..5),
            q in (-3.0..3.0_f64, 0.0..3.0_f64),
        ) {
            let model = ConstantQuantiles::new(vec![(0.05, q.0), (0.95, q.0 + q.1)]).unwrap();
            let cqr = Cqr::for_miscoverage(0.1);
            let risks = vec![risk(0.1, 0.1); theta.len()];
            let e = Stretch::exponential();
            let mean = MultiRiskSpec::new(risks.clone(), Aggregation::Mean, true).unwrap();
            let max = MultiRiskSpec::new(risks, Aggregation::Max, true).unwrap();
            let x = vec![];
            let a = multi_safeguarded_construct(&x, &theta, &model, &cqr, &mean, &e).unwrap();
            let b = multi_safeguarded_construct(&x, &theta, &model, &cqr, &max, &e).unwrap();
            prop_assert!(a.is_subset_of(&b).unwrap());
        }
    }
}
