//! CSV ingestion with calendar features and warm-up normalization.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StreamError};
use crate::sample::{Sample, Standardizer};

pub const DEFAULT_WARMUP: usize = 8000;

/// Calendar features appended in this order when augmentation is on.
pub const TIME_FEATURES: [&str; 6] = ["day", "month", "year", "hour", "minute", "weekday"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampFormat {
    #[default]
    Iso8601,
    EpochSeconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvStreamConfig {
    pub path: PathBuf,
    pub target: String,
    /// Empty means every column except the target and the timestamp.
    #[serde(default)]
    pub features: Vec<String>,
    #[serde(default)]
    pub timestamp: Option<String>,
    #[serde(default)]
    pub timestamp_format: TimestampFormat,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_true")]
    pub augment_time: bool,
    /// Appends the previous row's raw target as a feature (0 on the first row).
    #[serde(default)]
    pub lagged_label: bool,
}

fn default_warmup() -> usize {
    DEFAULT_WARMUP
}

fn default_true() -> bool {
    true
}

impl CsvStreamConfig {
    pub fn new(path: impl Into<PathBuf>, target: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            target: target.into(),
            features: Vec::new(),
            timestamp: None,
            timestamp_format: TimestampFormat::Iso8601,
            warmup: DEFAULT_WARMUP,
            augment_time: true,
            lagged_label: false,
        }
    }
}

/// A fully loaded, standardized table in file order.
#[derive(Debug, Clone)]
pub struct CsvStream {
    pub feature_names: Vec<String>,
    pub samples: Vec<Sample>,
    pub scaler: Standardizer,
}

impl IntoIterator for CsvStream {
    type Item = Sample;
    type IntoIter = std::vec::IntoIter<Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.into_iter()
    }
}

pub fn parse_timestamp(raw: &str, format: TimestampFormat) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    match format {
        TimestampFormat::EpochSeconds => {
            let secs: f64 = raw.parse().ok()?;
            if !secs.is_finite() {
                return None;
            }
            let whole = secs.floor();
            let nanos = ((secs - whole) * 1e9).round() as u32;
            DateTime::from_timestamp(whole as i64, nanos.min(999_999_999)).map(|d| d.naive_utc())
        }
        TimestampFormat::Iso8601 => {
            if let Ok(d) = DateTime::parse_from_rfc3339(raw) {
                return Some(d.naive_local());
            }
            const LAYOUTS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%d %H:%M"];
            LAYOUTS
                .iter()
                .find_map(|layout| NaiveDateTime::parse_from_str(raw, layout).ok())
                .or_else(|| NaiveDate::parse_from_str(raw, "%Y-%m-%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0)))
        }
    }
}

/// Calendar features in [`TIME_FEATURES`] order; weekday counts from Monday = 0.
pub fn time_features(ts: &NaiveDateTime) -> [f64; 6] {
    [
        f64::from(ts.day()),
        f64::from(ts.month()),
        f64::from(ts.year()),
        f64::from(ts.hour()),
        f64::from(ts.minute()),
        f64::from(ts.weekday().num_days_from_monday()),
    ]
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| StreamError::UnknownColumn(name.to_string()))
}

fn cell<'a>(record: &'a csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<&'a str> {
    match record.get(idx).map(str::trim) {
        Some(v) if !v.is_empty() && !v.eq_ignore_ascii_case("na") && !v.eq_ignore_ascii_case("nan") => Ok(v),
        _ => Err(StreamError::Missing {
            row,
            column: column.to_string(),
        }),
    }
}

fn number(record: &csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<f64> {
    let raw = cell(record, idx, row, column)?;
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(StreamError::Parse {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

/// Loads the file, standardizes features and target with statistics of the
/// first `warmup` rows only, and returns every row in file order. With a
/// timestamp column each row's group is its weekday, Monday = 0. Rows are
/// numbered from 1, header excluded, in diagnostics.
pub fn csv_ingest(config: &CsvStreamConfig) -> Result<CsvStream> {
    let file = std::fs::File::open(&config.path).map_err(|source| StreamError::Io {
        path: config.path.clone(),
        source,
    })?;
    read_csv(file, config)
}

pub fn read_csv<R: std::io::Read>(reader: R, config: &CsvStreamConfig) -> Result<CsvStream> {
    if config.warmup == 0 {
        return Err(StreamError::Config("warm-up must contain at least one row".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let target_idx = column_index(&headers, &config.target)?;
    let ts_idx = config
        .timestamp
        .as_deref()
        .map(|name| column_index(&headers, name))
        .transpose()?;
    if config.augment_time && ts_idx.is_none() {
        return Err(StreamError::Config("time augmentation needs a timestamp column".into()));
    }
    let feature_cols: Vec<(usize, String)> = if config.features.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != target_idx && Some(*i) != ts_idx)
            .map(|(i, h)| (i, h.trim().to_string()))
            .collect()
    } else {
        config
            .features
            .iter()
            .map(|name| column_index(&headers, name).map(|i| (i, name.clone())))
            .collect::<Result<_>>()?
    };

    let mut feature_names: Vec<String> = feature_cols.iter().map(|(_, n)| n.clone()).collect();
    if config.augment_time {
        feature_names.extend(TIME_FEATURES.iter().map(|s| s.to_string()));
    }
    if config.lagged_label {
        feature_names.push(format!("{}_lag1", config.target));
    }

    let mut raw = Vec::new();
    let mut prev_target = 0.0;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let mut x = Vec::with_capacity(feature_names.len());
        let mut group = None;
        for (idx, name) in &feature_cols {
            x.push(number(&record, *idx, row, name)?);
        }
        if let Some(idx) = ts_idx {
            let name = config.timestamp.as_deref().unwrap_or_default();
            let text = cell(&record, idx, row, name)?;
            let ts = parse_timestamp(text, config.timestamp_format).ok_or_else(|| StreamError::Parse {
                row,
                column: name.to_string(),
                value: text.to_string(),
            })?;
            group = Some(ts.weekday().num_days_from_monday());
            if config.augment_time {
                x.extend(time_features(&ts));
            }
        }
        let y = number(&record, target_idx, row, &config.target)?;
        if config.lagged_label {
            x.push(prev_target);
        }
        prev_target = y;
        raw.push(Sample { x, y, group });
    }
    if config.warmup > raw.len() {
        return Err(StreamError::WarmupTooLong {
            warmup: config.warmup,
            rows: raw.len(),
        });
    }
    let scaler = Standardizer::fit(&raw[..config.warmup], Some(&feature_names));
    let samples = raw.into_iter().map(|s| scaler.apply(s)).collect();
    Ok(CsvStream {
        feature_names,
        samples,
        scaler,
    })
}

/// Convenience wrapper for a path and otherwise default settings.
pub fn csv_ingest_path(path: &Path, target: &str, timestamp: Option<&str>, warmup: usize) -> Result<CsvStream> {
    let mut cfg = CsvStreamConfig::new(path, target);
    cfg.timestamp = timestamp.map(str::to_string);
    cfg.augment_time = timestamp.is_some();
    cfg.warmup = warmup;
    csv_ingest(&cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(warmup: usize) -> CsvStreamConfig {
        CsvStreamConfig {
            path: PathBuf::new(),
            target: "y".into(),
            features: Vec::new(),
            timestamp: Some("ts".into()),
            timestamp_format: TimestampFormat::Iso8601,
            warmup,
            augment_time: true,
            lagged_label: false,
        }
    }

    #[test]
    fn monday_has_weekday_code_zero() {
        let ts = parse_timestamp("2020-01-06T13:30", TimestampFormat::Iso8601).unwrap();
        assert_eq!(time_features(&ts), [6.0, 1.0, 2020.0, 13.0, 30.0, 0.0]);
    }

    #[test]
    fn epoch_and_iso_agree() {
        let a = parse_timestamp("1578317400", TimestampFormat::EpochSeconds).unwrap();
        let b = parse_timestamp("2020-01-06T13:30:00Z", TimestampFormat::Iso8601).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn accepted_iso_layouts() {
        for raw in ["2021-03-04", "2021-03-04 05:06", "2021-03-04T05:06:07", "2021-03-04T05:06:07.250", "2021-03-04T05:06:07+02:00"] {
            assert!(parse_timestamp(raw, TimestampFormat::Iso8601).is_some(), "{raw}");
        }
        assert!(parse_timestamp("04/03/2021", TimestampFormat::Iso8601).is_none());
    }

    #[test]
    fn feature_layout_and_standardization() {
        let text = "ts,a,y\n2020-01-06T13:30,0,10\n2020-01-07T13:30,2,20\n2020-01-08T00:00,4,30\n";
        let out = read_csv(text.as_bytes(), &cfg(2)).unwrap();
        assert_eq!(out.feature_names, ["a", "day", "month", "year", "hour", "minute", "weekday"]);
        assert_eq!(out.samples[0].x[0], -1.0);
        assert_eq!(out.samples[1].x[0], 1.0);
        assert_eq!(out.samples[2].x[0], 3.0);
        assert_eq!(out.samples[0].y, -1.0);
        // month and year are constant over the warm-up and stay raw
        assert_eq!(out.samples[2].x[2], 1.0);
        assert_eq!(out.samples[2].x[3], 2020.0);
    }

    #[test]
    fn missing_value_reports_row_and_column() {
        let text = "ts,a,y\n2020-01-06T13:30,0,10\n2020-01-07T13:30,,20\n";
        match read_csv(text.as_bytes(), &cfg(1)) {
            Err(StreamError::Missing { row, column }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unparsable_value_reports_row_and_column() {
        let text = "ts,a,y\n2020-01-06T13:30,0,ten\n";
        match read_csv(text.as_bytes(), &cfg(1)) {
            Err(StreamError::Parse { row, column, value }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (1, "y", "ten"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn warmup_longer_than_file_is_rejected() {
        let text = "ts,a,y\n2020-01-06T13:30,0,10\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &cfg(5)),
            Err(StreamError::WarmupTooLong { warmup: 5, rows: 1 })
        ));
    }

    #[test]
    fn unknown_column_is_named() {
        let mut c = cfg(1);
        c.target = "z".into();
        let text = "ts,a,y\n2020-01-06T13:30,0,10\n";
        assert!(matches!(read_csv(text.as_bytes(), &c), Err(StreamError::UnknownColumn(name)) if name == "z"));
    }

    #[test]
    fn lagged_label_uses_raw_previous_target() {
        let mut c = cfg(3);
        c.augment_time = false;
        c.timestamp = None;
        c.lagged_label = true;
        let text = "a,y\n1,0\n2,3\n3,6\n";
        let out = read_csv(text.as_bytes(), &c).unwrap();
        assert_eq!(out.feature_names, ["a", "y_lag1"]);
        let lag = out.scaler.features[1];
        let raw: Vec<f64> = out.samples.iter().map(|s| lag.invert(s.x[1])).collect();
        for (got, want) in raw.iter().zip([0.0, 0.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }
}
