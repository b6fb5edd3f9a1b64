//! Multi-trial runs, on-disk artifacts and parameter sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rollrc::{MultiTrace, StreamTrace, Verdict};
use rollrc_streams::{read_multi_trace, read_trace, write_multi_trace, write_trace};
use serde::{Deserialize, Serialize};

use crate::config::{ControllerSpec, ExperimentConfig, ModelSpec};
use crate::error::{CliError, Result};
use crate::pipeline::{contract, multi_spec, risk_spec, run_trial, TrialOutcome, TrialReport, TrialTrace};

pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.json";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const CERTIFICATE_FILE: &str = "certificate.txt";
pub const SWEEP_FILE: &str = "sweep.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Mean and sample standard deviation over the trials reporting a metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub name: Option<String>,
    pub trials: usize,
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MetricSummary>,
    /// Trials with at least one failed certificate.
    pub failed_trials: Vec<usize>,
}

impl Aggregate {
    pub fn from_reports(name: Option<String>, reports: &[TrialReport]) -> Self {
        let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in reports {
            for (k, v) in r.metrics() {
                columns.entry(k).or_default().push(v);
            }
        }
        Self {
            name,
            trials: reports.len(),
            seeds: reports.iter().map(|r| r.seed).collect(),
            metrics: columns.into_iter().map(|(k, v)| (k, MetricSummary::of(&v))).collect(),
            failed_trials: reports.iter().filter(|r| r.failed()).map(|r| r.trial).collect(),
        }
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).map(|m| m.mean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub aggregate: Aggregate,
    pub reports: Vec<TrialReport>,
}

impl ExperimentSummary {
    pub fn any_failed(&self) -> bool {
        !self.aggregate.failed_trials.is_empty()
    }
}

pub fn trial_dir(out: &Path, trial: usize) -> PathBuf {
    out.join(format!("trial_{trial:03}"))
}

pub fn write_trial(dir: &Path, outcome: &TrialOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let trace_path = dir.join(TRACE_FILE);
    let file = fs::File::create(&trace_path).map_err(io_err(&trace_path))?;
    let writer = std::io::BufWriter::new(file);
    match &outcome.trace {
        TrialTrace::Rolling(t) => write_trace(writer, &t.records, outcome.groups.as_deref())?,
        TrialTrace::Aci(t) => write_trace(writer, &t.records, outcome.groups.as_deref())?,
        TrialTrace::Multi(t) => write_multi_trace(writer, &t.records)?,
    }
    let report_path = dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&outcome.report)?;
    fs::write(&report_path, json + "\n").map_err(io_err(&report_path))?;
    Ok(())
}

pub fn certificate_text(reports: &[TrialReport], controller: &ControllerSpec) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(out, "trial {} seed {}", r.trial, r.seed);
        if r.certificates.is_empty() {
            let why = match controller {
                ControllerSpec::Aci { .. } => "the aci baseline carries no certificate",
                _ => "no certificates",
            };
            let _ = writeln!(out, "  {why}");
        }
        for c in &r.certificates {
            let _ = writeln!(out, "  {c}");
        }
    }
    let failed = reports.iter().any(TrialReport::failed);
    let _ = writeln!(out, "overall: {}", if failed { "FAIL" } else { "PASS" });
    out
}

/// Runs every trial without touching the disk; results come back in trial order.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialOutcome>> {
    let seeds = cfg.seeds();
    seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| run_trial(cfg, i, seed))
        .collect()
}

/// Runs every trial in parallel, writing each trial's artifacts as soon as
/// it finishes, then the aggregate and certificate files.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentSummary> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let seeds = cfg.seeds();
    let reports: Vec<TrialReport> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let outcome = run_trial(cfg, i, seed)?;
            write_trial(&trial_dir(out, i), &outcome)?;
            log::info!("trial {i} (seed {seed}) done");
            Ok(outcome.report)
        })
        .collect::<Result<_>>()?;
    let aggregate = Aggregate::from_reports(cfg.name.clone(), &reports);
    let agg_path = out.join(AGGREGATE_FILE);
    fs::write(&agg_path, serde_json::to_string_pretty(&aggregate)? + "\n").map_err(io_err(&agg_path))?;
    let cert_path = out.join(CERTIFICATE_FILE);
    fs::write(&cert_path, certificate_text(&reports, &cfg.controller)).map_err(io_err(&cert_path))?;
    Ok(ExperimentSummary { aggregate, reports })
}

/// Recomputes the certificates of an exported trace with the risk
/// specifications of `cfg`.
pub fn certify_trace_file(cfg: &ExperimentConfig, path: &Path) -> Result<Vec<rollrc::Certificate>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    match cfg.controller {
        ControllerSpec::Rolling => {
            let (records, _) = read_trace(file)?;
            let trace = StreamTrace {
                spec: risk_spec(cfg, &cfg.losses[0])?,
                contract: contract(cfg, &cfg.losses[0])?,
                records,
            };
            Ok(trace.certificates())
        }
        ControllerSpec::Multi { .. } => {
            let records = read_multi_trace(file)?;
            let contracts = cfg.losses.iter().map(|l| contract(cfg, l)).collect::<Result<_>>()?;
            let trace = MultiTrace {
                spec: multi_spec(cfg)?,
                contracts,
                records,
            };
            Ok(trace.certificates())
        }
        ControllerSpec::Aci { .. } => Ok(Vec::new()),
    }
}

pub fn any_failed(certs: &[rollrc::Certificate]) -> bool {
    certs.iter().any(|c| matches!(c.verdict, Verdict::Fail { .. }))
}

/// Sets one sweepable parameter throughout the config.
pub fn apply_param(cfg: &mut ExperimentConfig, name: &str, value: f64) -> Result<()> {
    let mut touched = false;
    match name {
        "gamma" => {
            for l in &mut cfg.losses {
                l.gamma = value;
                touched = true;
            }
            if let ControllerSpec::Aci { gamma, .. } = &mut cfg.controller {
                *gamma = value;
                touched = true;
            }
        }
        "target" => {
            for l in &mut cfg.losses {
                l.target = value;
                touched = true;
            }
        }
        "learning_rate" => {
            if let ModelSpec::LinearPinball { learning_rate, .. } = &mut cfg.model {
                *learning_rate = value;
                touched = true;
            }
        }
        "beta_score" | "beta_loss" | "beta_low" | "beta_high" => {
            let s = &mut cfg.stretch;
            let slot = match name {
                "beta_score" => &mut s.beta_score,
                "beta_loss" => &mut s.beta_loss,
                "beta_low" => &mut s.beta_low,
                _ => &mut s.beta_high,
            };
            *slot = value;
            touched = true;
        }
        _ => {}
    }
    if !touched {
        return Err(CliError::Config {
            path: "param".into(),
            message: format!("`{name}` is not a sweepable parameter of this config"),
        });
    }
    cfg.validate()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub validation_pinball: Option<f64>,
    /// Mean count of validation steps without finite endpoints.
    pub validation_degenerate: f64,
    pub coverage: Option<f64>,
    pub msl: Option<f64>,
    pub mean_length: Option<f64>,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub param: String,
    /// Rows in grid order.
    pub rows: Vec<SweepRow>,
    /// Row indices from best to worst.
    pub ranking: Vec<usize>,
    pub selected: f64,
}

impl SweepResult {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.failed)
    }

    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        let mut out = format!(
            "{:>4} {:>12} {:>14} {:>11} {:>10} {:>10} {:>12}\n",
            "rank", self.param, "val_pinball", "degenerate", "coverage", "msl", "mean_length"
        );
        for (rank, &i) in self.ranking.iter().enumerate() {
            let r = &self.rows[i];
            let _ = writeln!(
                out,
                "{:>4} {:>12} {:>14} {:>11.2} {:>10} {:>10} {:>12}",
                rank + 1,
                r.value,
                fmt(r.validation_pinball),
                r.validation_degenerate,
                fmt(r.coverage),
                fmt(r.msl),
                fmt(r.mean_length)
            );
        }
        let _ = writeln!(out, "selected {} = {}", self.param, self.selected);
        out
    }
}

/// Orders rows by fewer degenerate validation steps, then lower validation
/// pinball loss, then smaller parameter value.
pub fn rank_rows(rows: &[SweepRow]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (&rows[a], &rows[b]);
        let pa = ra.validation_pinball.unwrap_or(f64::INFINITY);
        let pb = rb.validation_pinball.unwrap_or(f64::INFINITY);
        ra.validation_degenerate
            .total_cmp(&rb.validation_degenerate)
            .then(pa.total_cmp(&pb))
            .then(ra.value.total_cmp(&rb.value))
    });
    idx
}

fn sweep_row(value: f64, aggregate: &Aggregate) -> SweepRow {
    SweepRow {
        value,
        validation_pinball: aggregate.mean("validation_pinball"),
        validation_degenerate: aggregate.mean("validation_degenerate").unwrap_or(0.0),
        coverage: aggregate.mean("coverage"),
        msl: aggregate.mean("msl"),
        mean_length: aggregate.mean("mean_length"),
        failed: !aggregate.failed_trials.is_empty(),
    }
}

fn check_sweep(cfg: &ExperimentConfig, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(CliError::Config {
            path: "grid".into(),
            message: "needs at least one value".into(),
        });
    }
    if cfg.validation.is_none() {
        return Err(CliError::Config {
            path: "validation".into(),
            message: "a sweep ranks by the validation window, which is unset".into(),
        });
    }
    if matches!(cfg.controller, ControllerSpec::Multi { .. }) {
        return Err(CliError::Config {
            path: "controller.kind".into(),
            message: "sweeps rank interval endpoints and need a single-risk controller".into(),
        });
    }
    Ok(())
}

/// Runs the experiment at every grid value and ranks the results, without
/// writing artifacts.
pub fn sweep_in_memory(cfg: &ExperimentConfig, param: &str, grid: &[f64]) -> Result<SweepResult> {
    check_sweep(cfg, grid)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &value in grid {
        let mut point = cfg.clone();
        apply_param(&mut point, param, value)?;
        let reports: Vec<TrialReport> = run_trials(&point)?.into_iter().map(|o| o.report).collect();
        rows.push(sweep_row(value, &Aggregate::from_reports(point.name.clone(), &reports)));
    }
    Ok(finish_sweep(param, rows))
}

fn finish_sweep(param: &str, rows: Vec<SweepRow>) -> SweepResult {
    let ranking = rank_rows(&rows);
    let selected = rows[ranking[0]].value;
    SweepResult {
        param: param.to_string(),
        rows,
        ranking,
        selected,
    }
}

/// Runs and writes a full experiment per grid value under `out/<param>_<value>`.
pub fn sweep(cfg: &ExperimentConfig, param: &str, grid: &[f64], out: &Path) -> Result<SweepResult> {
    check_sweep(cfg, grid)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &value in grid {
        let mut point = cfg.clone();
        apply_param(&mut point, param, value)?;
        let summary = run_experiment(&point, &out.join(format!("{param}_{value}")))?;
        rows.push(sweep_row(value, &summary.aggregate));
    }
    let result = finish_sweep(param, rows);
    let path = out.join(SWEEP_FILE);
    fs::write(&path, serde_json::to_string_pretty(&result)? + "\n").map_err(io_err(&path))?;
    Ok(result)
}
