use std::io::Write as _;

use rollrc::losses::BinaryLoss;
use rollrc::models::ConstantQuantiles;
use rollrc::sets::Cqr;
use rollrc::{run_stream, RiskSpec, Stretch};
use rollrc_streams::tabular::{parse_timestamp, time_features};
use rollrc_streams::{
    csv_ingest, pairs, read_trace, write_trace, CsvStreamConfig, GroupSchedule, ImageStream, ImageStreamConfig,
    KnownQuantileConfig, KnownQuantileStream, SyntheticConfig, SyntheticStream, TimestampFormat,
};

/// Asymptotic Kolmogorov distribution tail with the Stephens small-sample correction.
fn ks_uniform_p_value(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let i = i as f64;
            ((i + 1.0) / n - x).max(x - i / n)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    // the alternating series is ill-conditioned near zero, where the tail is 1 to 1e-5
    if lambda < 0.3 {
        return 1.0;
    }
    let tail: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (2.0 * tail).clamp(0.0, 1.0)
}

#[test]
fn ks_helper_rejects_a_skewed_sample() {
    let skewed: Vec<f64> = (0..2_000).map(|i| (i as f64 / 2_000.0).powi(2)).collect();
    assert!(ks_uniform_p_value(skewed) < 1e-6);
    let grid: Vec<f64> = (0..2_000).map(|i| (i as f64 + 0.5) / 2_000.0).collect();
    assert!(ks_uniform_p_value(grid) > 0.99);
}

#[test]
fn synthetic_stream_replays_exactly() {
    let a: Vec<_> = SyntheticStream::new(SyntheticConfig::with_seed(9)).unwrap().take(3_000).collect();
    let b: Vec<_> = SyntheticStream::new(SyntheticConfig::with_seed(9)).unwrap().take(3_000).collect();
    assert_eq!(a, b);
    let c: Vec<_> = SyntheticStream::new(SyntheticConfig::with_seed(10)).unwrap().take(3_000).collect();
    assert_ne!(a, c);
}

#[test]
fn group_lengths_average_five_hundred() {
    let lengths: Vec<usize> = GroupSchedule::new(&SyntheticConfig::with_seed(1)).unwrap().take(10_000).collect();
    let mean = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;
    assert!((mean - 500.0).abs() < 5.0, "mean {mean}");
    let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / lengths.len() as f64;
    assert!((var.sqrt() - 10.0).abs() < 0.5);
}

#[test]
fn stream_groups_follow_the_schedule() {
    let config = SyntheticConfig::with_seed(2);
    let expected: Vec<usize> = GroupSchedule::new(&config).unwrap().take(5).collect();
    let total: usize = expected.iter().sum();
    let groups: Vec<u32> = SyntheticStream::new(config).unwrap().take(total).map(|s| s.group.unwrap()).collect();
    let mut observed = Vec::new();
    let mut run = 1;
    for w in groups.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            assert_eq!(w[1], w[0] + 1);
            observed.push(run);
            run = 1;
        }
    }
    observed.push(run);
    assert_eq!(observed, expected);
}

#[test]
fn synthetic_features_are_uniform_on_the_unit_cube() {
    let samples: Vec<_> = SyntheticStream::new(SyntheticConfig::with_seed(3)).unwrap().take(10_000).collect();
    for j in 0..5 {
        let col: Vec<f64> = samples.iter().map(|s| s.x[j]).collect();
        assert!(col.iter().all(|v| (0.0..=1.0).contains(v)));
        let p = ks_uniform_p_value(col);
        assert!(p > 0.01, "feature {j}: p = {p}");
    }
}

#[test]
fn odd_groups_are_quiet_and_even_groups_are_loud() {
    let samples: Vec<_> = SyntheticStream::new(SyntheticConfig::with_seed(4)).unwrap().take(4_000).collect();
    let mean_abs = |parity: u32| {
        let sel: Vec<f64> = samples
            .iter()
            .filter(|s| s.group.unwrap() % 2 == parity && s.group.unwrap() > 1)
            .map(|s| s.y.abs())
            .collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    };
    assert!(mean_abs(0) > 50.0 * mean_abs(1));
}

#[test]
fn known_quantile_stream_is_deterministic() {
    let a: Vec<_> = KnownQuantileStream::new(KnownQuantileConfig::with_seed(5)).unwrap().take(100).collect();
    let b: Vec<_> = KnownQuantileStream::new(KnownQuantileConfig::with_seed(5)).unwrap().take(100).collect();
    assert_eq!(a, b);
}

fn pooled_label_variance(samples: &[rollrc_streams::ImageSample]) -> f64 {
    let n = samples.len() as f64;
    let first = &samples[0].label;
    let mut var_sum = 0.0;
    for idx in ndarray::indices(first.dim()) {
        let vals: Vec<f64> = samples.iter().map(|s| s.label[idx]).collect();
        let mean = vals.iter().sum::<f64>() / n;
        var_sum += vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    }
    var_sum / first.len() as f64
}

#[test]
fn image_stream_shift_scales_label_variance() {
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let config = ImageStreamConfig {
            shift_amplitude: 3.0,
            ..ImageStreamConfig::with_seed(seed)
        };
        let samples: Vec<_> = ImageStream::new(config).unwrap().take(1_000).collect();
        ratios.push(pooled_label_variance(&samples[500..]) / pooled_label_variance(&samples[..500]));
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((mean - 4.0).abs() < 0.4, "ratios {ratios:?}");
}

#[test]
fn image_stream_without_amplitude_is_stationary() {
    let config = ImageStreamConfig {
        shift_amplitude: 0.0,
        ..ImageStreamConfig::with_seed(7)
    };
    let samples: Vec<_> = ImageStream::new(config).unwrap().take(2_000).collect();
    let early = pooled_label_variance(&samples[..1_000]);
    let late = pooled_label_variance(&samples[1_000..]);
    assert!((early / late - 1.0).abs() < 0.15, "{early} vs {late}");
    assert!((early - 1.0).abs() < 0.15);
}

#[test]
fn image_stream_replays_exactly() {
    let a: Vec<_> = ImageStream::new(ImageStreamConfig::with_seed(8)).unwrap().take(50).collect();
    let b: Vec<_> = ImageStream::new(ImageStreamConfig::with_seed(8)).unwrap().take(50).collect();
    assert_eq!(a, b);
}

#[test]
fn calendar_fact_for_a_known_monday() {
    let ts = parse_timestamp("2020-01-06T13:30", TimestampFormat::Iso8601).unwrap();
    assert_eq!(time_features(&ts)[5], 0.0);
    let sunday = parse_timestamp("2020-01-05T13:30", TimestampFormat::Iso8601).unwrap();
    assert_eq!(time_features(&sunday)[5], 6.0);
}

fn toy_file(rows: &[(&str, f64, f64)]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "time,load,price").unwrap();
    for (ts, load, price) in rows {
        writeln!(f, "{ts},{load},{price}").unwrap();
    }
    f.flush().unwrap();
    f
}

fn toy_config(path: &std::path::Path, warmup: usize) -> CsvStreamConfig {
    let mut cfg = CsvStreamConfig::new(path, "price");
    cfg.timestamp = Some("time".into());
    cfg.warmup = warmup;
    cfg
}

#[test]
fn normalization_never_sees_rows_past_the_warmup() {
    let base = [
        ("2020-01-06T00:00", 1.0, 10.0),
        ("2020-01-06T01:00", 3.0, 14.0),
        ("2020-01-06T02:00", 2.0, 9.0),
        ("2020-01-06T03:00", 4.0, 11.0),
    ];
    let mut altered = base;
    altered[3] = ("2020-01-06T03:00", 4e6, -1e9);
    let a = csv_ingest(&toy_config(toy_file(&base).path(), 3)).unwrap();
    let b = csv_ingest(&toy_config(toy_file(&altered).path(), 3)).unwrap();
    assert_eq!(a.scaler, b.scaler);
    assert_eq!(a.samples[..3], b.samples[..3]);
    // load over the warm-up is {1, 3, 2}: mean 2, population std sqrt(2/3)
    let load = a.scaler.features[0];
    assert!((load.mean - 2.0).abs() < 1e-15);
    assert!((load.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
}

#[test]
fn toy_file_round_trips_through_trace_export() {
    let rows = [
        ("2020-01-06T09:00", 0.3, 1.25),
        ("2020-01-06T10:00", 0.7, 2.5),
        ("2020-01-06T11:00", 0.1, 0.75),
        ("2020-01-06T12:00", 0.9, 3.0),
        ("2020-01-06T13:00", 0.5, 1.0),
    ];
    let file = toy_file(&rows);
    let stream = csv_ingest(&toy_config(file.path(), 5)).unwrap();
    assert_eq!(stream.samples.len(), 5);
    let model = ConstantQuantiles::new(vec![(0.05, -1.0), (0.95, 1.0)]).unwrap();
    let spec = RiskSpec::new(0.1, 0.1, -3.0, 3.0, 1.0).unwrap();
    let trace = run_stream(pairs(stream), model, Cqr::for_miscoverage(0.1), BinaryLoss, spec, Stretch::identity()).unwrap();
    let groups = [1, 1, 2, 2, 3];
    let mut buf = Vec::new();
    write_trace(&mut buf, &trace.records, Some(&groups)).unwrap();
    let (back, back_groups) = read_trace(buf.as_slice()).unwrap();
    assert_eq!(back, trace.records);
    assert_eq!(back_groups.as_deref(), Some(&groups[..]));
    let mut again = Vec::new();
    write_trace(&mut again, &back, Some(&groups)).unwrap();
    assert_eq!(buf, again);
}
