//! Experiment configuration: a JSON tree with a versioned schema.

use std::path::{Path, PathBuf};

use rollrc::aci::{QuantileIndexing, DEFAULT_WARMUP};
use rollrc::losses::{DEFAULT_CENTER_THRESHOLD, DEFAULT_MC_CAP};
use rollrc::metrics::Window;
use rollrc::{Aggregation, StretchKind};
use rollrc_streams::{CsvStreamConfig, ImageStreamConfig, KnownQuantileConfig, SyntheticConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamSpec {
    Synthetic(SyntheticConfig),
    KnownQuantile(KnownQuantileConfig),
    Image(ImageStreamConfig),
    Csv(CsvStreamConfig),
}

impl StreamSpec {
    pub fn is_image(&self) -> bool {
        matches!(self, StreamSpec::Image(_))
    }

    fn is_endless(&self) -> bool {
        !matches!(self, StreamSpec::Csv(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Linear quantile regression trained by online pinball subgradient steps.
    LinearPinball {
        learning_rate: f64,
        #[serde(default = "one")]
        steps_per_update: usize,
        #[serde(default = "yes")]
        fit_intercept: bool,
    },
    /// Exact quantiles of the known-quantile stream.
    Oracle,
    /// Passes the stream's prediction grid through unchanged.
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeuristicSpec {
    Constant,
    ResidualModel { decay: f64 },
    PreviousResiduals { window: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstructorSpec {
    Cqr { alpha: f64 },
    /// Sets `[q(tau/2), q(1 - tau/2)]` with `tau = -theta`; needs every level.
    QuantileScale,
    ImageIntervals { heuristic: HeuristicSpec },
}

impl ConstructorSpec {
    pub fn alpha(&self) -> Option<f64> {
        match self {
            ConstructorSpec::Cqr { alpha } => Some(*alpha),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Binary,
    MiscoverageCounter,
    ImageMiscoverage,
    CenterFailure,
}

impl LossKind {
    fn is_image(self) -> bool {
        matches!(self, LossKind::ImageMiscoverage | LossKind::CenterFailure)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    pub target: f64,
    pub gamma: f64,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub theta_init: f64,
    /// Defaults to the loss's own bound.
    #[serde(default)]
    pub loss_bound: Option<f64>,
    /// Counter cap for the miscoverage counter.
    #[serde(default)]
    pub cap: Option<usize>,
    /// Covered-fraction threshold for the center failure.
    #[serde(default)]
    pub threshold: Option<f64>,
}

impl LossSpec {
    pub fn cap(&self) -> usize {
        self.cap.unwrap_or(DEFAULT_MC_CAP)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold.unwrap_or(DEFAULT_CENTER_THRESHOLD)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StretchSpec {
    #[serde(default)]
    pub kind: StretchKind,
    #[serde(default)]
    pub beta_score: f64,
    #[serde(default)]
    pub beta_loss: f64,
    #[serde(default)]
    pub beta_low: f64,
    #[serde(default)]
    pub beta_high: f64,
}

impl Default for StretchSpec {
    fn default() -> Self {
        Self {
            kind: StretchKind::None,
            beta_score: 0.0,
            beta_loss: 0.0,
            beta_low: 0.0,
            beta_high: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    Rolling,
    Multi {
        #[serde(default)]
        aggregation: Aggregation,
        #[serde(default)]
        two_sided: bool,
    },
    Aci {
        alpha: f64,
        gamma: f64,
        window: usize,
        #[serde(default = "aci_warmup")]
        warmup: usize,
        #[serde(default)]
        indexing: QuantileIndexing,
    },
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn aci_warmup() -> usize {
    DEFAULT_WARMUP
}

fn default_output() -> PathBuf {
    PathBuf::from("rollrc-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub stream: StreamSpec,
    /// Stream length; required for generated streams, a cap for CSV.
    #[serde(default)]
    pub steps: Option<usize>,
    /// Standardize generated tabular streams with the first this-many rows.
    #[serde(default)]
    pub normalize_warmup: Option<usize>,
    pub model: ModelSpec,
    pub constructor: ConstructorSpec,
    #[serde(default)]
    pub losses: Vec<LossSpec>,
    #[serde(default)]
    pub stretch: StretchSpec,
    pub controller: ControllerSpec,
    pub trials: usize,
    /// Trial `i` uses `seed + i` unless `seeds` lists them explicitly.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub evaluation: Option<Window>,
    #[serde(default)]
    pub validation: Option<Window>,
    /// Target miscoverage used for the group-coverage gap; defaults to the
    /// constructor's alpha.
    #[serde(default)]
    pub nominal_alpha: Option<f64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be positive and finite, got {v}")))
    }
}

fn unit_open(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(invalid(path, format!("must lie in (0, 1), got {v}")))
    }
}

fn check_window(path: &str, w: &Window) -> Result<()> {
    if w.start == 0 || w.start > w.end {
        return Err(invalid(path, format!("needs 1 <= start <= end, got {}..={}", w.start, w.end)));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        if let StreamSpec::Csv(csv) = &mut cfg.stream {
            if csv.path.is_relative() {
                if let Some(dir) = path.parent() {
                    csv.path = dir.join(&csv.path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.trials as u64).map(|i| self.seed.wrapping_add(i)).collect(),
        }
    }

    pub fn nominal_alpha(&self) -> f64 {
        self.nominal_alpha
            .or_else(|| self.constructor.alpha())
            .or(match self.controller {
                ControllerSpec::Aci { alpha, .. } => Some(alpha),
                _ => None,
            })
            .unwrap_or(0.1)
    }

    /// Checks every field before anything runs; errors name the offending path.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.trials {
                return Err(invalid("seeds", format!("lists {} seeds for {} trials", seeds.len(), self.trials)));
            }
        }
        match self.steps {
            Some(0) => return Err(invalid("steps", "must be positive")),
            None if self.stream.is_endless() => return Err(invalid("steps", "required for generated streams")),
            _ => {}
        }
        self.validate_stream()?;
        if let Some(n) = self.normalize_warmup {
            if n == 0 {
                return Err(invalid("normalize_warmup", "must be positive"));
            }
            if !matches!(self.stream, StreamSpec::Synthetic(_) | StreamSpec::KnownQuantile(_)) {
                return Err(invalid("normalize_warmup", "only applies to generated tabular streams"));
            }
        }
        if let Some(w) = &self.evaluation {
            check_window("evaluation", w)?;
        }
        if let Some(w) = &self.validation {
            check_window("validation", w)?;
        }
        if let Some(a) = self.nominal_alpha {
            unit_open("nominal_alpha", a)?;
        }
        self.validate_model()?;
        self.validate_constructor()?;
        self.validate_stretch()?;
        self.validate_controller()?;
        Ok(())
    }

    fn validate_stream(&self) -> Result<()> {
        let res = match &self.stream {
            StreamSpec::Synthetic(c) => c.validate(),
            StreamSpec::KnownQuantile(c) => c.validate(),
            StreamSpec::Image(c) => c.validate(),
            StreamSpec::Csv(c) => {
                if c.warmup == 0 {
                    return Err(invalid("stream.warmup", "must be positive"));
                }
                Ok(())
            }
        };
        res.map_err(|e| invalid("stream", e.to_string()))
    }

    fn validate_model(&self) -> Result<()> {
        match (&self.model, &self.stream) {
            (ModelSpec::LinearPinball { learning_rate, steps_per_update, .. }, s) => {
                if s.is_image() {
                    return Err(invalid("model.kind", "linear_pinball needs a tabular stream"));
                }
                if !(*learning_rate >= 0.0 && learning_rate.is_finite()) {
                    return Err(invalid("model.learning_rate", "must be finite and non-negative"));
                }
                if *steps_per_update == 0 {
                    return Err(invalid("model.steps_per_update", "must be at least 1"));
                }
            }
            (ModelSpec::Oracle, StreamSpec::KnownQuantile(_)) => {}
            (ModelSpec::Oracle, _) => return Err(invalid("model.kind", "oracle needs the known_quantile stream")),
            (ModelSpec::Precomputed, StreamSpec::Image(_)) => {}
            (ModelSpec::Precomputed, _) => return Err(invalid("model.kind", "precomputed needs the image stream")),
        }
        Ok(())
    }

    fn validate_constructor(&self) -> Result<()> {
        match &self.constructor {
            ConstructorSpec::Cqr { alpha } => {
                unit_open("constructor.alpha", *alpha)?;
                if self.stream.is_image() {
                    return Err(invalid("constructor.kind", "interval constructors need a tabular stream"));
                }
            }
            ConstructorSpec::QuantileScale => {
                if self.model != ModelSpec::Oracle {
                    return Err(invalid("constructor.kind", "quantile_scale queries arbitrary levels and needs the oracle model"));
                }
            }
            ConstructorSpec::ImageIntervals { heuristic } => {
                if !self.stream.is_image() {
                    return Err(invalid("constructor.kind", "image_intervals needs the image stream"));
                }
                match heuristic {
                    HeuristicSpec::ResidualModel { decay } => unit_open("constructor.heuristic.decay", *decay)?,
                    HeuristicSpec::PreviousResiduals { window } if *window == 0 => {
                        return Err(invalid("constructor.heuristic.window", "must be positive"))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    fn validate_stretch(&self) -> Result<()> {
        let s = &self.stretch;
        let all = [s.beta_score, s.beta_loss, s.beta_low, s.beta_high];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid("stretch", "hyperparameters must be finite"));
        }
        if s.kind.is_adaptive() {
            if !(s.beta_low <= 0.0 && s.beta_high >= 0.0) {
                return Err(invalid("stretch.beta_low", "clip bounds must bracket zero"));
            }
            if !matches!(self.constructor, ConstructorSpec::Cqr { .. }) {
                return Err(invalid("stretch.kind", "adaptive stretching needs the cqr score"));
            }
            if matches!(self.controller, ControllerSpec::Multi { .. }) {
                return Err(invalid("stretch.kind", "adaptive stretching is single-risk only"));
            }
        }
        Ok(())
    }

    fn validate_loss(&self, i: usize, loss: &LossSpec) -> Result<()> {
        let p = |f: &str| format!("losses[{i}].{f}");
        if loss.kind.is_image() != self.stream.is_image() {
            return Err(invalid(p("kind"), "loss does not match the stream's label type"));
        }
        positive(&p("gamma"), loss.gamma)?;
        if !loss.target.is_finite() {
            return Err(invalid(p("target"), "must be finite"));
        }
        if !(loss.lower.is_finite() && loss.upper.is_finite() && loss.lower < loss.upper) {
            return Err(invalid(p("lower"), "needs finite lower < upper"));
        }
        if let Some(b) = loss.loss_bound {
            positive(&p("loss_bound"), b)?;
        }
        if loss.kind == LossKind::MiscoverageCounter && loss.cap == Some(0) {
            return Err(invalid(p("cap"), "must be positive"));
        }
        if loss.kind == LossKind::CenterFailure {
            unit_open(&p("threshold"), loss.threshold())?;
        }
        Ok(())
    }

    fn validate_controller(&self) -> Result<()> {
        match &self.controller {
            ControllerSpec::Rolling => {
                if self.losses.len() != 1 {
                    return Err(invalid("losses", format!("rolling control takes exactly one loss, got {}", self.losses.len())));
                }
            }
            ControllerSpec::Multi { .. } => {
                if self.losses.is_empty() {
                    return Err(invalid("losses", "multi-risk control needs at least one loss"));
                }
            }
            ControllerSpec::Aci { alpha, gamma, window, .. } => {
                unit_open("controller.alpha", *alpha)?;
                positive("controller.gamma", *gamma)?;
                if *window == 0 {
                    return Err(invalid("controller.window", "must be positive"));
                }
                if !self.losses.is_empty() {
                    return Err(invalid("losses", "the aci baseline controls miscoverage itself; leave losses empty"));
                }
                if self.stream.is_image() {
                    return Err(invalid("controller.kind", "aci needs a tabular stream"));
                }
                if self.stretch.kind != StretchKind::None {
                    return Err(invalid("stretch.kind", "aci has no stretching"));
                }
            }
        }
        for (i, loss) in self.losses.iter().enumerate() {
            self.validate_loss(i, loss)?;
        }
        Ok(())
    }
}
