//! Wires a validated config into streams, models, constructors, losses and
//! controllers, and evaluates one trial.

use ndarray::Array2;
use rollrc::aci::{run_aci, AciConfig, AciTrace};
use rollrc::losses::{BinaryLoss, CenterFailure, ImageMiscoverage, MiscoverageCounter};
use rollrc::metrics::{evaluate, msl, EvalReport, LengthSummary, Window};
use rollrc::models::{pinball_loss, GaussianOracle, LinearPinball, PrecomputedImage};
use rollrc::multi::{run_multi_stream, MultiStepRecord};
use rollrc::sets::{Cqr, ImageIntervals, QuantileScale, UncertaintyHeuristic};
use rollrc::{
    run_stream, Certificate, LossContract, MultiRiskSpec, MultiTrace, OnlineModel, PredictionSet, QuantileModel,
    RiskLoss, RiskSpec, SetConstructor, StepRecord, Stretch, StreamTrace, Verdict,
};
use rollrc_streams::{
    csv_ingest, pairs, ImageSample, ImageStream, KnownQuantileStream, Sample, SyntheticStream, WarmupStandardized,
};
use serde::{Deserialize, Serialize};

use crate::config::{ConstructorSpec, ControllerSpec, ExperimentConfig, HeuristicSpec, LossKind, LossSpec, ModelSpec, StreamSpec};
use crate::error::{CliError, Result};

pub type TabularLoss = Box<dyn RiskLoss<f64, f64> + Send>;
pub type ImageLoss = Box<dyn RiskLoss<f64, Array2<f64>> + Send>;

/// Materialized stream of one trial.
#[derive(Debug, Clone)]
pub enum TrialData {
    Tabular(Vec<Sample>),
    Image(Vec<ImageSample>),
}

impl TrialData {
    pub fn groups(&self) -> Option<Vec<u32>> {
        match self {
            TrialData::Tabular(s) => s.iter().map(|s| s.group).collect(),
            TrialData::Image(_) => None,
        }
    }
}

fn limited<I: Iterator<Item = Sample>>(it: I, cfg: &ExperimentConfig) -> Vec<Sample> {
    let steps = cfg.steps.unwrap_or(usize::MAX);
    match cfg.normalize_warmup {
        Some(n) => WarmupStandardized::new(it, n).take(steps).collect(),
        None => it.take(steps).collect(),
    }
}

/// Draws the trial's stream. Generated streams take their seed from the trial.
pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<TrialData> {
    let steps = cfg.steps.unwrap_or(usize::MAX);
    Ok(match &cfg.stream {
        StreamSpec::Synthetic(c) => {
            let c = rollrc_streams::SyntheticConfig { seed, ..c.clone() };
            TrialData::Tabular(limited(SyntheticStream::new(c)?, cfg))
        }
        StreamSpec::KnownQuantile(c) => {
            let c = rollrc_streams::KnownQuantileConfig { seed, ..*c };
            TrialData::Tabular(limited(KnownQuantileStream::new(c)?, cfg))
        }
        StreamSpec::Image(c) => {
            let c = rollrc_streams::ImageStreamConfig { seed, ..*c };
            TrialData::Image(ImageStream::new(c)?.take(steps).collect())
        }
        StreamSpec::Csv(c) => {
            let mut samples = csv_ingest(c)?.samples;
            samples.truncate(steps);
            TrialData::Tabular(samples)
        }
    })
}

/// Quantile models available to tabular streams.
#[derive(Debug, Clone)]
pub enum TabularModel {
    Linear(LinearPinball<f64>),
    Oracle(GaussianOracle<f64>),
}

impl OnlineModel<f64> for TabularModel {
    type Features = Vec<f64>;
    type Label = f64;

    fn update(&mut self, x: &Vec<f64>, y: &f64) -> rollrc::Result<()> {
        match self {
            TabularModel::Linear(m) => m.update(x, y),
            TabularModel::Oracle(m) => m.update(x, y),
        }
    }
}

impl QuantileModel<f64> for TabularModel {
    fn quantile(&self, x: &[f64], tau: f64) -> rollrc::Result<f64> {
        match self {
            TabularModel::Linear(m) => m.quantile(x, tau),
            TabularModel::Oracle(m) => m.quantile(x, tau),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum TabularConstructor {
    Cqr(Cqr<f64>),
    QuantileScale,
}

impl SetConstructor<f64, TabularModel> for TabularConstructor {
    fn construct(&self, model: &TabularModel, x: &Vec<f64>, adjustment: f64) -> rollrc::Result<PredictionSet<f64>> {
        match self {
            TabularConstructor::Cqr(c) => c.construct(model, x, adjustment),
            TabularConstructor::QuantileScale => QuantileScale.construct(model, x, adjustment),
        }
    }

    fn score(&self, model: &TabularModel, x: &Vec<f64>, y: &f64) -> rollrc::Result<Option<f64>> {
        match self {
            TabularConstructor::Cqr(c) => c.score(model, x, y),
            TabularConstructor::QuantileScale => Ok(None),
        }
    }
}

fn quantile_levels(cfg: &ExperimentConfig) -> [f64; 2] {
    let alpha = match (&cfg.controller, &cfg.constructor) {
        (ControllerSpec::Aci { alpha, .. }, _) => *alpha,
        (_, ConstructorSpec::Cqr { alpha }) => *alpha,
        _ => cfg.nominal_alpha(),
    };
    [alpha / 2.0, 1.0 - alpha / 2.0]
}

pub fn build_tabular_model(cfg: &ExperimentConfig, dim: usize) -> Result<TabularModel> {
    match (&cfg.model, &cfg.stream) {
        (ModelSpec::LinearPinball { learning_rate, steps_per_update, fit_intercept }, _) => {
            let model = LinearPinball::new(&quantile_levels(cfg), dim, *learning_rate)?
                .steps_per_update(*steps_per_update)
                .fit_intercept(*fit_intercept);
            Ok(TabularModel::Linear(model))
        }
        (ModelSpec::Oracle, StreamSpec::KnownQuantile(c)) => Ok(TabularModel::Oracle(c.oracle())),
        _ => Err(CliError::Config {
            path: "model.kind".into(),
            message: "model does not fit a tabular stream".into(),
        }),
    }
}

pub fn build_tabular_constructor(cfg: &ExperimentConfig) -> TabularConstructor {
    match cfg.constructor {
        ConstructorSpec::Cqr { alpha } => TabularConstructor::Cqr(Cqr::for_miscoverage(alpha)),
        _ => TabularConstructor::QuantileScale,
    }
}

pub fn build_heuristic(spec: HeuristicSpec) -> Result<UncertaintyHeuristic<f64>> {
    Ok(match spec {
        HeuristicSpec::Constant => UncertaintyHeuristic::constant(),
        HeuristicSpec::ResidualModel { decay } => UncertaintyHeuristic::residual_model(decay)?,
        HeuristicSpec::PreviousResiduals { window } => UncertaintyHeuristic::previous_residuals(window)?,
    })
}

pub fn build_tabular_loss(spec: &LossSpec) -> Result<TabularLoss> {
    Ok(match spec.kind {
        LossKind::Binary => Box::new(BinaryLoss),
        LossKind::MiscoverageCounter => Box::new(MiscoverageCounter::new(spec.cap())?),
        _ => {
            return Err(CliError::Config {
                path: "losses".into(),
                message: "image loss on a tabular stream".into(),
            })
        }
    })
}

pub fn build_image_loss(spec: &LossSpec) -> Result<ImageLoss> {
    Ok(match spec.kind {
        LossKind::ImageMiscoverage => Box::new(ImageMiscoverage::default()),
        LossKind::CenterFailure => Box::new(CenterFailure::<f64>::new(None, spec.threshold())?),
        _ => {
            return Err(CliError::Config {
                path: "losses".into(),
                message: "tabular loss on an image stream".into(),
            })
        }
    })
}

/// Bound `B` the loss itself declares.
fn natural_bound(cfg: &ExperimentConfig, spec: &LossSpec) -> Result<f64> {
    Ok(if cfg.stream.is_image() {
        build_image_loss(spec)?.bound()
    } else {
        build_tabular_loss(spec)?.bound()
    })
}

pub fn risk_spec(cfg: &ExperimentConfig, spec: &LossSpec) -> Result<RiskSpec<f64>> {
    let r = RiskSpec {
        target: spec.target,
        gamma: spec.gamma,
        lower: spec.lower,
        upper: spec.upper,
        loss_bound: match spec.loss_bound {
            Some(b) => b,
            None => natural_bound(cfg, spec)?,
        },
        theta_init: spec.theta_init,
    };
    r.validate()?;
    Ok(r)
}

pub fn contract(cfg: &ExperimentConfig, spec: &LossSpec) -> Result<LossContract<f64>> {
    Ok(if cfg.stream.is_image() {
        LossContract::of(&build_image_loss(spec)?)
    } else {
        LossContract::of(&build_tabular_loss(spec)?)
    })
}

pub fn multi_spec(cfg: &ExperimentConfig) -> Result<MultiRiskSpec<f64>> {
    let (aggregation, two_sided) = match cfg.controller {
        ControllerSpec::Multi { aggregation, two_sided } => (aggregation, two_sided),
        _ => Default::default(),
    };
    let risks = cfg.losses.iter().map(|l| risk_spec(cfg, l)).collect::<Result<Vec<_>>>()?;
    Ok(MultiRiskSpec::new(risks, aggregation, two_sided)?)
}

pub fn build_stretch(cfg: &ExperimentConfig) -> Result<Stretch<f64>> {
    let s = cfg.stretch;
    Ok(Stretch::from_parts(s.kind, s.beta_score, s.beta_loss, s.beta_low, s.beta_high)?)
}

fn aci_config(cfg: &ExperimentConfig) -> Result<AciConfig<f64>> {
    match cfg.controller {
        ControllerSpec::Aci { alpha, gamma, window, warmup, indexing } => {
            let c = AciConfig { alpha, gamma, window, warmup, indexing };
            c.validate()?;
            Ok(c)
        }
        _ => Err(CliError::Config {
            path: "controller.kind".into(),
            message: "not an aci controller".into(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "controller", rename_all = "snake_case")]
pub enum TrialTrace {
    Rolling(StreamTrace<f64>),
    Multi(MultiTrace<f64>),
    Aci(AciTrace<f64>),
}

impl TrialTrace {
    pub fn certificates(&self) -> Vec<Certificate> {
        match self {
            TrialTrace::Rolling(t) => t.certificates(),
            TrialTrace::Multi(t) => t.certificates(),
            TrialTrace::Aci(_) => Vec::new(),
        }
    }

    pub fn single_records(&self) -> Option<&[StepRecord<f64>]> {
        match self {
            TrialTrace::Rolling(t) => Some(&t.records),
            TrialTrace::Aci(t) => Some(&t.records),
            TrialTrace::Multi(_) => None,
        }
    }
}

/// Runs the controller of `cfg` over already drawn data.
pub fn run_on(cfg: &ExperimentConfig, data: TrialData) -> Result<TrialTrace> {
    let stretch = build_stretch(cfg)?;
    match data {
        TrialData::Tabular(samples) => {
            let dim = samples.first().map_or(0, |s| s.x.len());
            let model = build_tabular_model(cfg, dim)?;
            match &cfg.controller {
                ControllerSpec::Rolling => {
                    let spec = risk_spec(cfg, &cfg.losses[0])?;
                    let loss = build_tabular_loss(&cfg.losses[0])?;
                    let constructor = build_tabular_constructor(cfg);
                    Ok(TrialTrace::Rolling(run_stream(pairs(samples), model, constructor, loss, spec, stretch)?))
                }
                ControllerSpec::Multi { .. } => {
                    let spec = multi_spec(cfg)?;
                    let losses = cfg.losses.iter().map(build_tabular_loss).collect::<Result<Vec<_>>>()?;
                    let constructor = build_tabular_constructor(cfg);
                    Ok(TrialTrace::Multi(run_multi_stream(pairs(samples), model, constructor, losses, spec, stretch)?))
                }
                ControllerSpec::Aci { .. } => Ok(TrialTrace::Aci(run_aci(pairs(samples), model, aci_config(cfg)?)?)),
            }
        }
        TrialData::Image(frames) => {
            let ConstructorSpec::ImageIntervals { heuristic } = cfg.constructor else {
                return Err(CliError::Config {
                    path: "constructor.kind".into(),
                    message: "image streams need image_intervals".into(),
                });
            };
            let constructor = ImageIntervals::new(build_heuristic(heuristic)?);
            let items = frames.into_iter().map(|f| Ok((f.prediction, f.label)));
            match &cfg.controller {
                ControllerSpec::Rolling => {
                    let spec = risk_spec(cfg, &cfg.losses[0])?;
                    let loss = build_image_loss(&cfg.losses[0])?;
                    Ok(TrialTrace::Rolling(run_stream(items, PrecomputedImage, constructor, loss, spec, stretch)?))
                }
                ControllerSpec::Multi { .. } => {
                    let spec = multi_spec(cfg)?;
                    let losses = cfg.losses.iter().map(build_image_loss).collect::<Result<Vec<_>>>()?;
                    Ok(TrialTrace::Multi(run_multi_stream(items, PrecomputedImage, constructor, losses, spec, stretch)?))
                }
                ControllerSpec::Aci { .. } => Err(CliError::Config {
                    path: "controller.kind".into(),
                    message: "aci needs a tabular stream".into(),
                }),
            }
        }
    }
}

/// Pinball loss of the calibrated endpoints over a window. Steps whose set
/// is empty or unbounded have no finite endpoints and are counted apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore {
    pub window: Window,
    pub steps: usize,
    pub pinball: Option<f64>,
    pub degenerate: usize,
}

pub fn validation_score(records: &[StepRecord<f64>], window: Window, alpha: f64) -> Result<ValidationScore> {
    let selected = window.select(records, |r| r.step);
    let (lo_level, hi_level) = (alpha / 2.0, 1.0 - alpha / 2.0);
    let mut total = 0.0;
    let mut scored = 0usize;
    let mut degenerate = 0usize;
    for r in selected {
        match (r.set_lo, r.set_hi, r.label) {
            (Some(lo), Some(hi), Some(y)) if lo.is_finite() && hi.is_finite() => {
                total += pinball_loss(y, lo, lo_level)? + pinball_loss(y, hi, hi_level)?;
                scored += 1;
            }
            _ => degenerate += 1,
        }
    }
    Ok(ValidationScore {
        window,
        steps: selected.len(),
        pinball: (scored > 0).then(|| total / scored as f64),
        degenerate,
    })
}

/// Per-risk summary of a multi-risk trace over a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiEvalReport {
    pub window: Window,
    pub steps: usize,
    pub mean_losses: Vec<f64>,
    pub coverage: f64,
    pub msl: Option<f64>,
    pub lengths: LengthSummary,
}

pub fn evaluate_multi(records: &[MultiStepRecord<f64>], window: Window) -> Result<MultiEvalReport> {
    let selected = window.select(records, |r| r.step);
    if selected.is_empty() {
        return Err(rollrc::Error::Empty("evaluation window").into());
    }
    let k = selected[0].losses.len();
    let n = selected.len() as f64;
    let mean_losses = (0..k).map(|i| selected.iter().map(|r| r.losses[i]).sum::<f64>() / n).collect();
    let covered: Vec<bool> = selected.iter().map(|r| r.covered).collect();
    let sizes: Vec<f64> = selected.iter().map(|r| r.set_size).collect();
    Ok(MultiEvalReport {
        window,
        steps: selected.len(),
        mean_losses,
        coverage: covered.iter().filter(|&&c| c).count() as f64 / n,
        msl: msl(&covered)?,
        lengths: LengthSummary::from_sizes(&sizes),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multi: Option<MultiEvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationScore>,
    pub certificates: Vec<Certificate>,
}

impl TrialReport {
    pub fn failed(&self) -> bool {
        self.certificates.iter().any(|c| matches!(c.verdict, Verdict::Fail { .. }))
    }

    /// Scalar metrics for aggregation across trials.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        if let Some(e) = &self.evaluation {
            out.push(("coverage".into(), e.coverage));
            out.push(("mean_loss".into(), e.mean_loss));
            out.push(("mc_risk".into(), e.mc_risk));
            if let Some(v) = e.msl {
                out.push(("msl".into(), v));
            }
            if let Some(v) = e.delta_coverage {
                out.push(("delta_coverage".into(), v));
            }
            if let Some(v) = e.lengths.mean {
                out.push(("mean_length".into(), v));
            }
            out.push(("infinite_sets".into(), e.lengths.infinite as f64));
        }
        if let Some(m) = &self.multi {
            for (i, v) in m.mean_losses.iter().enumerate() {
                out.push((format!("risk_{}", i + 1), *v));
            }
            out.push(("coverage".into(), m.coverage));
            if let Some(v) = m.msl {
                out.push(("msl".into(), v));
            }
            if let Some(v) = m.lengths.mean {
                out.push(("mean_length".into(), v));
            }
        }
        if let Some(v) = &self.validation {
            if let Some(p) = v.pinball {
                out.push(("validation_pinball".into(), p));
            }
            out.push(("validation_degenerate".into(), v.degenerate as f64));
        }
        out
    }
}

/// The trace, groups and report of one finished trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trace: TrialTrace,
    pub groups: Option<Vec<u32>>,
    pub report: TrialReport,
}

pub fn report_for(
    cfg: &ExperimentConfig,
    trial: usize,
    seed: u64,
    trace: &TrialTrace,
    groups: Option<&[u32]>,
) -> Result<TrialReport> {
    let window = cfg.evaluation.unwrap_or_else(Window::all);
    let alpha = cfg.nominal_alpha();
    let mc_cap = cfg.losses.iter().find(|l| l.kind == LossKind::MiscoverageCounter).map(LossSpec::cap);
    let (steps, evaluation, multi, validation) = match trace {
        TrialTrace::Multi(t) => (t.records.len(), None, Some(evaluate_multi(&t.records, window)?), None),
        other => {
            let records = other.single_records().unwrap_or_default();
            let eval = evaluate(records, window, groups, alpha, mc_cap)?;
            let validation = cfg
                .validation
                .map(|w| validation_score(records, w, alpha))
                .transpose()?;
            (records.len(), Some(eval), None, validation)
        }
    };
    Ok(TrialReport {
        trial,
        seed,
        steps,
        evaluation,
        multi,
        validation,
        certificates: trace.certificates(),
    })
}

/// Draws, runs and evaluates trial `trial` with `seed`.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize, seed: u64) -> Result<TrialOutcome> {
    let data = load_data(cfg, seed)?;
    let groups = data.groups();
    let trace = run_on(cfg, data)?;
    let report = report_for(cfg, trial, seed, &trace, groups.as_deref())?;
    Ok(TrialOutcome { trace, groups, report })
}
