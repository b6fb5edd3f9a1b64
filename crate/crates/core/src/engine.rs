//! The Rolling RC controller for a single risk.
//!
//! Each step announces a set built from the current theta, scores the
//! revealed label against it, moves theta by `gamma * (loss - r)` and only
//! then lets the model learn from the example.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::RiskLoss;
use crate::models::OnlineModel;
use crate::scalar::Scalar;
use crate::sets::{Label, PredictionSet, SetConstructor};
use crate::stretch::Stretch;

/// Parameters of one controlled risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de> + Default"))]
pub struct RiskSpec<T> {
    /// Target risk `r`.
    pub target: T,
    pub gamma: T,
    /// Safeguard `m`: below it the empty set is announced.
    pub lower: T,
    /// Safeguard `M`: above it the full space is announced.
    pub upper: T,
    /// Loss bound `B`.
    pub loss_bound: T,
    #[serde(default)]
    pub theta_init: T,
}

impl<T: Scalar> RiskSpec<T> {
    pub fn new(target: T, gamma: T, lower: T, upper: T, loss_bound: T) -> Result<Self> {
        let spec = Self {
            target,
            gamma,
            lower,
            upper,
            loss_bound,
            theta_init: T::zero(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_theta_init(mut self, theta_init: T) -> Result<Self> {
        self.theta_init = theta_init;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.target, self.gamma, self.lower, self.upper, self.loss_bound, self.theta_init];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("risk specification"));
        }
        if self.gamma <= T::zero() {
            return Err(Error::InvalidSpec(format!("gamma {} must be positive", self.gamma)));
        }
        if self.lower >= self.upper {
            return Err(Error::InvalidSpec(format!(
                "safeguards need m < M, got m = {}, M = {}",
                self.lower, self.upper
            )));
        }
        if self.loss_bound <= T::zero() {
            return Err(Error::InvalidSpec(format!("loss bound {} must be positive", self.loss_bound)));
        }
        if self.target.abs() > self.loss_bound {
            return Err(Error::InvalidSpec(format!(
                "target {} lies outside [-B, B] with B = {}",
                self.target, self.loss_bound
            )));
        }
        let (lo, hi) = self.theta_envelope();
        if self.theta_init < lo || self.theta_init > hi {
            return Err(Error::InvalidSpec(format!(
                "initial theta {} lies outside the reachable range [{lo}, {hi}]",
                self.theta_init
            )));
        }
        Ok(())
    }

    /// `[m - 2 gamma B, M + 2 gamma B]`, the range theta never leaves.
    pub fn theta_envelope(&self) -> (T, T) {
        let slack = T::lit(2.0) * self.gamma * self.loss_bound;
        (self.lower - slack, self.upper + slack)
    }

    /// `(M - m + 4 gamma B) / (gamma T)`.
    pub fn risk_bound(&self, steps: usize) -> Result<T> {
        if steps == 0 {
            return Err(Error::InvalidSpec("risk bound needs at least one step".into()));
        }
        let c = self.upper - self.lower + T::lit(4.0) * self.gamma * self.loss_bound;
        Ok(c / (self.gamma * T::from_count(steps)))
    }

    /// `max{theta_1 - m', M' - theta_1} / (gamma T)`, the sharp form of
    /// [`risk_bound`](Self::risk_bound) for a run started at `theta_1`.
    pub fn deviation_bound(&self, theta_1: T, steps: usize) -> T {
        let (lo, hi) = self.theta_envelope();
        (theta_1 - lo).max(hi - theta_1) / (self.gamma * T::from_count(steps))
    }
}

/// The whole mutable state of one stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratorState<T> {
    pub theta: T,
    pub steps: usize,
    pub loss_sum: T,
}

impl<T: Scalar> CalibratorState<T> {
    pub fn new(spec: &RiskSpec<T>) -> Self {
        Self {
            theta: spec.theta_init,
            steps: 0,
            loss_sum: T::zero(),
        }
    }

    pub fn mean_loss(&self) -> Option<T> {
        (self.steps > 0).then(|| self.loss_sum / T::from_count(self.steps))
    }

    pub fn update(&mut self, loss: T, spec: &RiskSpec<T>) -> Result<()> {
        check_loss(loss, spec.loss_bound)?;
        self.theta = self.theta + spec.gamma * (loss - spec.target);
        self.steps += 1;
        self.loss_sum = self.loss_sum + loss;
        Ok(())
    }
}

pub(crate) fn check_loss<T: Scalar>(loss: T, bound: T) -> Result<()> {
    if loss.is_nan() || loss.abs() > bound {
        return Err(Error::LossOutOfBounds {
            loss: loss.as_f64(),
            bound: bound.as_f64(),
        });
    }
    Ok(())
}

/// `theta + gamma * (loss - r)`, with the step counter and loss sum advanced.
pub fn update_theta<T: Scalar>(state: CalibratorState<T>, loss: T, spec: &RiskSpec<T>) -> Result<CalibratorState<T>> {
    let mut next = state;
    next.update(loss, spec)?;
    Ok(next)
}

/// Which side of the safeguards theta is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Below,
    Inside,
    Above,
}

pub fn safeguard_region<T: Scalar>(theta: T, spec: &RiskSpec<T>) -> Region {
    if theta > spec.upper {
        Region::Above
    } else if theta < spec.lower {
        Region::Below
    } else {
        Region::Inside
    }
}

/// The set for `x` at the given theta: the full space above `M`, the
/// empty set below `m`, the constructor's set at `phi(theta)` otherwise.
pub fn safeguarded_construct<T, M, C>(
    x: &M::Features,
    theta: T,
    model: &M,
    constructor: &C,
    spec: &RiskSpec<T>,
    stretch: &Stretch<T>,
) -> Result<PredictionSet<T>>
where
    T: Scalar,
    M: OnlineModel<T>,
    C: SetConstructor<T, M>,
{
    match safeguard_region(theta, spec) {
        Region::Above => Ok(PredictionSet::Full),
        Region::Below => Ok(PredictionSet::Empty),
        Region::Inside => constructor.construct(model, x, stretch.apply(theta)),
    }
}

/// Loss values at the two safeguard sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossContract<T> {
    pub full_space: T,
    pub empty_set: T,
}

impl<T: Scalar> LossContract<T> {
    pub fn of<Y: ?Sized, L: RiskLoss<T, Y> + ?Sized>(loss: &L) -> Self {
        Self {
            full_space: loss.full_space_loss(),
            empty_set: loss.empty_set_loss(),
        }
    }

    /// Why the bounds do not apply at level `r`, if they do not.
    pub fn violation(&self, target: T) -> Option<String> {
        if self.full_space < target && target < self.empty_set {
            None
        } else {
            Some(format!(
                "loss contract needs L(full) < r < L(empty); got L(full) = {}, r = {target}, L(empty) = {}",
                self.full_space, self.empty_set
            ))
        }
    }
}

/// One processed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord<T> {
    /// 1-based step index.
    pub step: usize,
    pub loss: T,
    pub theta_pre: T,
    pub theta_post: T,
    /// `phi(theta_pre)` as handed to the constructor.
    pub adjustment: T,
    /// Endpoints of real-valued sets; infinite for the full space.
    pub set_lo: Option<T>,
    pub set_hi: Option<T>,
    pub set_size: T,
    pub covered: bool,
    pub score: Option<T>,
    pub label: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de> + Default"))]
pub struct StreamTrace<T> {
    pub spec: RiskSpec<T>,
    pub contract: LossContract<T>,
    pub records: Vec<StepRecord<T>>,
}

impl<T: Scalar> StreamTrace<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn loss_sum(&self) -> T {
        self.records.iter().fold(T::zero(), |acc, r| acc + r.loss)
    }

    pub fn covered(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.covered).collect()
    }

    pub fn losses(&self) -> Vec<T> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn certificates(&self) -> Vec<Certificate> {
        vec![
            envelope_certificate(&self.spec, &self.contract, &self.records),
            risk_bound_certificate(&self.spec, &self.contract, &self.records),
        ]
    }
}

/// Absolute slack granted to the prefix-mean checks for rounding.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail { step: usize, value: f64, bound: f64 },
    NotGuaranteed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub name: String,
    pub verdict: Verdict,
}

impl Certificate {
    pub fn new(name: impl Into<String>, verdict: Verdict) -> Self {
        Self {
            name: name.into(),
            verdict,
        }
    }

    /// False only for an outright violation; an inapplicable bound is not
    /// a failure.
    pub fn holds(&self) -> bool {
        !matches!(self.verdict, Verdict::Fail { .. })
    }
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.verdict {
            Verdict::Pass => write!(f, "PASS {}", self.name),
            Verdict::Fail { step, value, bound } => {
                write!(f, "FAIL {} at step {step}: {value} exceeds {bound}", self.name)
            }
            Verdict::NotGuaranteed { reason } => write!(f, "NOT GUARANTEED {}: {reason}", self.name),
        }
    }
}

/// Every recorded theta lies inside the envelope. Exact comparison.
pub fn envelope_certificate<T: Scalar>(spec: &RiskSpec<T>, contract: &LossContract<T>, records: &[StepRecord<T>]) -> Certificate {
    const NAME: &str = "theta envelope";
    if let Some(reason) = contract.violation(spec.target) {
        return Certificate::new(NAME, Verdict::NotGuaranteed { reason });
    }
    let (lo, hi) = spec.theta_envelope();
    for r in records {
        for theta in [r.theta_pre, r.theta_post] {
            if !(lo <= theta && theta <= hi) {
                let bound = if theta < lo { lo } else { hi };
                return Certificate::new(
                    NAME,
                    Verdict::Fail {
                        step: r.step,
                        value: theta.as_f64(),
                        bound: bound.as_f64(),
                    },
                );
            }
        }
    }
    Certificate::new(NAME, Verdict::Pass)
}

/// `|mean loss - r| <= max{theta_1 - m', M' - theta_1} / (gamma T)` at
/// every prefix length `T`.
pub fn risk_bound_certificate<T: Scalar>(
    spec: &RiskSpec<T>,
    contract: &LossContract<T>,
    records: &[StepRecord<T>],
) -> Certificate {
    const NAME: &str = "average risk bound";
    if let Some(reason) = contract.violation(spec.target) {
        return Certificate::new(NAME, Verdict::NotGuaranteed { reason });
    }
    let Some(first) = records.first() else {
        return Certificate::new(NAME, Verdict::Pass);
    };
    let theta_1 = first.theta_pre;
    let mut sum = 0.0_f64;
    for (i, r) in records.iter().enumerate() {
        sum += r.loss.as_f64();
        let t = i + 1;
        let deviation = (sum / t as f64 - spec.target.as_f64()).abs();
        let bound = spec.deviation_bound(theta_1, t).as_f64();
        if !(deviation <= bound + CERTIFICATE_TOLERANCE) {
            return Certificate::new(
                NAME,
                Verdict::Fail {
                    step: r.step,
                    value: deviation,
                    bound,
                },
            );
        }
    }
    Certificate::new(NAME, Verdict::Pass)
}

struct Announced<T> {
    set: PredictionSet<T>,
    theta: T,
    adjustment: T,
}

/// Online controller owning the model, constructor, loss and stretch of
/// one stream.
///
/// Steps are split into [`announce`](Self::announce) and
/// [`resolve`](Self::resolve) so a caller can pick the label after seeing
/// the set; [`step`](Self::step) does both.
pub struct RollingController<T, M, C, L>
where
    T: Scalar,
    M: OnlineModel<T>,
{
    spec: RiskSpec<T>,
    stretch: Stretch<T>,
    state: CalibratorState<T>,
    model: M,
    constructor: C,
    loss: L,
    contract: LossContract<T>,
    pending: Option<(Option<T>, T)>,
    announced: Option<Announced<T>>,
    records: Vec<StepRecord<T>>,
}

impl<T, M, C, L> RollingController<T, M, C, L>
where
    T: Scalar,
    M: OnlineModel<T>,
    M::Label: Label<T>,
    C: SetConstructor<T, M>,
    L: RiskLoss<T, M::Label>,
{
    pub fn new(spec: RiskSpec<T>, stretch: Stretch<T>, model: M, constructor: C, loss: L) -> Result<Self> {
        spec.validate()?;
        if loss.bound() > spec.loss_bound {
            return Err(Error::InvalidSpec(format!(
                "loss declares bound {} but the spec allows only {}",
                loss.bound(),
                spec.loss_bound
            )));
        }
        let contract = LossContract::of(&loss);
        Ok(Self {
            state: CalibratorState::new(&spec),
            spec,
            stretch,
            model,
            constructor,
            loss,
            contract,
            pending: None,
            announced: None,
            records: Vec::new(),
        })
    }

    pub fn spec(&self) -> &RiskSpec<T> {
        &self.spec
    }

    pub fn state(&self) -> &CalibratorState<T> {
        &self.state
    }

    pub fn stretch(&self) -> &Stretch<T> {
        &self.stretch
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn constructor(&self) -> &C {
        &self.constructor
    }

    pub fn contract(&self) -> LossContract<T> {
        self.contract
    }

    pub fn records(&self) -> &[StepRecord<T>] {
        &self.records
    }

    /// Builds and returns the set for `x`. Folds the previous step's score
    /// and loss into the stretch first, so the set depends only on data
    /// already resolved and on `x`.
    pub fn announce(&mut self, x: &M::Features) -> Result<&PredictionSet<T>> {
        if self.announced.is_some() {
            return Err(Error::Protocol("announce called twice without resolve"));
        }
        if let Some((score, loss)) = self.pending.take() {
            if let Some(score) = score {
                self.stretch.update_lambda(score, loss, self.spec.target);
            }
        }
        let theta = self.state.theta;
        let set = safeguarded_construct(x, theta, &self.model, &self.constructor, &self.spec, &self.stretch)?;
        let adjustment = self.stretch.apply(theta);
        Ok(&self.announced.insert(Announced { set, theta, adjustment }).set)
    }

    /// Reveals the label for the announced set: scores it, moves theta,
    /// and only then updates the constructor state and the model.
    pub fn resolve(&mut self, x: &M::Features, y: &M::Label) -> Result<&StepRecord<T>> {
        let Announced { set, theta, adjustment } =
            self.announced.take().ok_or(Error::Protocol("resolve called before announce"))?;
        let loss = self.loss.evaluate(y, &set)?;
        let covered = y.is_covered(&set)?;
        let score = self.constructor.score(&self.model, x, y)?;
        if self.stretch.kind().is_adaptive() && score.is_none() {
            return Err(Error::InvalidSpec(
                "adaptive stretching needs a constructor that defines a conformity score".into(),
            ));
        }
        self.state.update(loss, &self.spec)?;
        self.constructor.observe(&self.model, x, y)?;
        self.model.update(x, y)?;
        self.pending = Some((score, loss));
        let (set_lo, set_hi) = match set.bounds() {
            Some((lo, hi)) => (Some(lo), Some(hi)),
            None => (None, None),
        };
        self.records.push(StepRecord {
            step: self.state.steps,
            loss,
            theta_pre: theta,
            theta_post: self.state.theta,
            adjustment,
            set_lo,
            set_hi,
            set_size: set.size(),
            covered,
            score,
            label: y.as_scalar(),
        });
        Ok(self.records.last().expect("record just pushed"))
    }

    pub fn step(&mut self, x: &M::Features, y: &M::Label) -> Result<&StepRecord<T>> {
        self.announce(x)?;
        self.resolve(x, y)
    }

    /// Processes a stream to exhaustion, stopping at the first error.
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

    pub fn trace(&self) -> StreamTrace<T> {
        StreamTrace {
            spec: self.spec,
            contract: self.contract,
            records: self.records.clone(),
        }
    }

    pub fn into_trace(self) -> StreamTrace<T> {
        StreamTrace {
            spec: self.spec,
            contract: self.contract,
            records: self.records,
        }
    }

    pub fn into_parts(self) -> (M, C, L, StreamTrace<T>) {
        let trace = StreamTrace {
            spec: self.spec,
            contract: self.contract,
            records: self.records,
        };
        (self.model, self.constructor, self.loss, trace)
    }
}

/// Runs Rolling RC over a whole stream.
pub fn run_stream<T, M, C, L, I>(
    stream: I,
    model: M,
    constructor: C,
    loss: L,
    spec: RiskSpec<T>,
    stretch: Stretch<T>,
) -> Result<StreamTrace<T>>
where
    T: Scalar,
    M: OnlineModel<T>,
    M::Label: Label<T>,
    C: SetConstructor<T, M>,
    L: RiskLoss<T, M::Label>,
    I: IntoIterator<Item = Result<(M::Features, M::Label)>>,
{
    let mut controller = RollingController::new(spec, stretch, model, constructor, loss)?;
    controller.run(stream)?;
    Ok(controller.into_trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::BinaryLoss;
    use crate::models::ConstantQuantiles;
    use crate::sets::Cqr;
    use proptest::prelude::*;

    fn spec(r: f64, gamma: f64, m: f64, big_m: f64) -> RiskSpec<f64> {
        RiskSpec::new(r, gamma, m, big_m, 1.0).unwrap()
    }

    #[test]
    fn update_examples() {
        let s = spec(0.1, 0.05, -1.0, 1.0);
        let st = update_theta(CalibratorState::new(&s), 0.1, &s).unwrap();
        assert_eq!(st.theta, 0.0);
        assert_eq!(st.steps, 1);
        let st = CalibratorState {
            theta: 0.5,
            steps: 0,
            loss_sum: 0.0,
        };
        let st = update_theta(st, 1.0, &s).unwrap();
        assert!((st.theta - 0.545).abs() < 1e-15);
        assert_eq!(st.loss_sum, 1.0);
    }

    #[test]
    fn out_of_bound_loss_is_rejected() {
        let s = spec(0.1, 0.05, -1.0, 1.0);
        let st = CalibratorState::new(&s);
        assert!(matches!(update_theta(st, 1.5, &s), Err(Error::LossOutOfBounds { .. })));
        assert!(update_theta(st, f64::NAN, &s).is_err());
        assert!(update_theta(st, -1.0, &s).is_ok());
    }

    #[test]
    fn spec_validation() {
        assert!(RiskSpec::new(0.1, 0.0, -1.0, 1.0, 1.0).is_err());
        assert!(RiskSpec::new(0.1, 0.1, 1.0, 1.0, 1.0).is_err());
        assert!(RiskSpec::new(0.1, 0.1, -1.0, 1.0, 0.0).is_err());
        assert!(RiskSpec::new(1.5, 0.1, -1.0, 1.0, 1.0).is_err());
        assert!(RiskSpec::new(f64::NAN, 0.1, -1.0, 1.0, 1.0).is_err());
        assert!(spec(0.1, 0.1, -1.0, 1.0).with_theta_init(5.0).is_err());
        assert!(spec(0.1, 0.1, -1.0, 1.0).with_theta_init(-1.1).is_ok());
    }

    #[test]
    fn risk_bound_examples() {
        let s = spec(0.1, 0.05, -1.0, 1.0);
        assert!((s.risk_bound(1000).unwrap() - 0.044).abs() < 1e-15);
        assert!((s.risk_bound(2000).unwrap() * 2.0 - s.risk_bound(1000).unwrap()).abs() < 1e-15);
        assert!(s.risk_bound(0).is_err());
        let wide = spec(0.1, 0.05, -9999.0, 9999.0);
        assert!((wide.risk_bound(12000).unwrap() - 33.33).abs() < 0.01);
    }

    #[test]
    fn safeguards() {
        let s = spec(0.1, 0.05, -1.0, 1.0);
        let model = ConstantQuantiles::new(vec![(0.05, 2.0), (0.95, 5.0)]).unwrap();
        let cqr = Cqr::for_miscoverage(0.1);
        let id = Stretch::identity();
        let x = vec![0.0];
        assert_eq!(safeguarded_construct(&x, 2.0, &model, &cqr, &s, &id).unwrap(), PredictionSet::Full);
        assert_eq!(safeguarded_construct(&x, -2.0, &model, &cqr, &s, &id).unwrap(), PredictionSet::Empty);
        assert_eq!(
            safeguarded_construct(&x, 0.0, &model, &cqr, &s, &id).unwrap(),
            PredictionSet::interval(2.0, 5.0)
        );
    }

    #[test]
    fn empty_stream_gives_empty_trace() {
        let model = ConstantQuantiles::new(vec![(0.05, 2.0), (0.95, 5.0)]).unwrap();
        let stream: Vec<Result<(Vec<f64>, f64)>> = Vec::new();
        let trace = run_stream(
            stream,
            model,
            Cqr::for_miscoverage(0.1),
            BinaryLoss,
            spec(0.1, 0.05, -1.0, 1.0),
            Stretch::identity(),
        )
        .unwrap();
        assert!(trace.is_empty());
        assert_eq!(trace.loss_sum(), 0.0);
        assert!(trace.certificates().iter().all(|c| c.verdict == Verdict::Pass));
    }

    #[test]
    fn protocol_is_enforced() {
        let model = ConstantQuantiles::new(vec![(0.05, 2.0), (0.95, 5.0)]).unwrap();
        let mut c = RollingController::new(
            spec(0.1, 0.05, -1.0, 1.0),
            Stretch::identity(),
            model,
            Cqr::for_miscoverage(0.1),
            BinaryLoss,
        )
        .unwrap();
        let x = vec![0.0];
        assert!(matches!(c.resolve(&x, &1.0), Err(Error::Protocol(_))));
        c.announce(&x).unwrap();
        assert!(matches!(c.announce(&x), Err(Error::Protocol(_))));
        c.resolve(&x, &1.0).unwrap();
        assert_eq!(c.records().len(), 1);
    }

    #[test]
    fn zero_target_is_not_guaranteed() {
        let s = spec(0.0, 0.05, -1.0, 1.0);
        let contract = LossContract {
            full_space: 0.0,
            empty_set: 1.0,
        };
        let cert = risk_bound_certificate(&s, &contract, &[]);
        assert!(matches!(cert.verdict, Verdict::NotGuaranteed { .. }));
        assert!(cert.holds());
    }

    #[test]
    fn certificate_detects_violation() {
        let s = spec(0.1, 0.5, -0.1, 0.1);
        let contract = LossContract {
            full_space: 0.0,
            empty_set: 1.0,
        };
        let rec = |step, loss, theta| StepRecord {
            step,
            loss,
            theta_pre: theta,
            theta_post: theta,
            adjustment: theta,
            set_lo: None,
            set_hi: None,
            set_size: 0.0,
            covered: false,
            score: None,
            label: None,
        };
        let records: Vec<_> = (1..=100).map(|t| rec(t, 1.0, 0.0)).collect();
        let cert = risk_bound_certificate(&s, &contract, &records);
        assert!(!cert.holds());
        let cert = envelope_certificate(&s, &contract, &[rec(1, 0.0, 5.0)]);
        assert!(matches!(cert.verdict, Verdict::Fail { step: 1, .. }));
    }

    proptest! {
        #[test]
        fn update_is_affine_in_loss(
            theta in -5.0..5.0_f64,
            l1 in -1.0..1.0_f64,
            l2 in -1.0..1.0_f64,
            a in 0.0..1.0_f64,
            gamma in 0.001..1.0_f64,
        ) {
            let s = RiskSpec { target: 0.1, gamma, lower: -10.0, upper: 10.0, loss_bound: 1.0, theta_init: 0.0 };
            let st = CalibratorState { theta, steps: 0, loss_sum: 0.0 };
            let mixed = update_theta(st, a * l1 + (1.0 - a) * l2, &s).unwrap().theta;
            let t1 = update_theta(st, l1, &s).unwrap().theta;
            let t2 = update_theta(st, l2, &s).unwrap().theta;
            prop_assert!((mixed - (a * t1 + (1.0 - a) * t2)).abs() <= 1e-12);
        }
    }
}
