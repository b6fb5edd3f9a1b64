//! Statistical behaviour: long-run metric values for ideal coverage
//! processes, online quantile regression convergence and exact agreement
//! between analytic and numerical pinball gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rollrc::aci::{run_aci, AciConfig};
use rollrc::losses::BinaryLoss;
use rollrc::metrics::{coverage, mc_risk, msl};
use rollrc::models::{pinball_loss, pinball_subgradient, GaussianOracle, LinearPinball};
use rollrc::sets::Cqr;
use rollrc::{run_stream, OnlineModel, QuantileModel, RiskSpec, Stretch, Verdict};

const Z95: f64 = 1.6448536269514722;

#[test]
fn bernoulli_coverage_metrics_match_geometric_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let covered: Vec<bool> = (0..100_000).map(|_| rng.random_bool(0.9)).collect();
    assert!((mc_risk(&covered, None).unwrap() - 1.0 / 9.0).abs() < 0.01);
    assert!((msl(&covered).unwrap().unwrap() - 1.0 / 0.9).abs() < 0.05);
}

#[test]
fn online_quantile_regression_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut model = LinearPinball::new(&[0.95], 1, 0.01).unwrap();
    for _ in 0..50_000 {
        let x: f64 = rng.random();
        let eps: f64 = StandardNormal.sample(&mut rng);
        model.update(&vec![x], &(2.0 * x + eps)).unwrap();
    }
    let q = model.quantile(&[0.5], 0.95).unwrap();
    assert!((q - (1.0 + Z95)).abs() < 0.15, "fitted {q}");
}

#[test]
fn pinball_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let h = 1e-6;
    let mut checked = 0;
    while checked < 1_000 {
        let y: f64 = rng.random_range(-5.0..5.0);
        let yhat: f64 = rng.random_range(-5.0..5.0);
        let tau: f64 = rng.random_range(0.01..0.99);
        if (y - yhat).abs() < 10.0 * h {
            continue;
        }
        let numeric = (pinball_loss(y, yhat + h, tau).unwrap() - pinball_loss(y, yhat - h, tau).unwrap()) / (2.0 * h);
        let analytic: f64 = pinball_subgradient(y, yhat, tau).unwrap();
        assert!((numeric - analytic).abs() <= 1e-6 * analytic.abs(), "{numeric} vs {analytic}");
        checked += 1;
    }
}

#[test]
fn weight_gradient_is_chain_rule_of_pinball() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let w = vec![vec![0.3, -0.7, 1.1]];
    let model = LinearPinball::with_weights(&[0.8], w.clone(), vec![0.2], 0.1).unwrap();
    let h = 1e-6;
    for _ in 0..200 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: f64 = rng.random_range(-3.0..3.0);
        let yhat = 0.2 + w[0].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        if (y - yhat).abs() < 1e-3 {
            continue;
        }
        let (gw, gb) = model.gradient(0, &x, y).unwrap();
        for j in 0..3 {
            let loss_at = |dw: f64| {
                let pred = yhat + dw * x[j];
                pinball_loss(y, pred, 0.8).unwrap()
            };
            let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            assert!((numeric - gw[j]).abs() <= 1e-6 * gw[j].abs().max(1e-3));
        }
        let numeric_b = (pinball_loss(y, yhat + h, 0.8).unwrap() - pinball_loss(y, yhat - h, 0.8).unwrap()) / (2.0 * h);
        assert!((numeric_b - gb).abs() <= 1e-6 * gb.abs());
    }
}

fn gaussian_stream(seed: u64, steps: usize) -> Vec<rollrc::Result<(Vec<f64>, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps)
        .map(|_| {
            let x: f64 = rng.random();
            let eps: f64 = StandardNormal.sample(&mut rng);
            Ok((vec![x], 3.0 * x + (0.5 + x) * eps))
        })
        .collect()
}

fn oracle() -> GaussianOracle<f64> {
    GaussianOracle::new(|x: &[f64]| 3.0 * x[0], |x: &[f64]| 0.5 + x[0])
}

#[test]
fn ideal_model_gives_ideal_metrics() {
    let spec = RiskSpec::new(0.1, 0.005, -9999.0, 9999.0, 1.0).unwrap();
    let trace = run_stream(
        gaussian_stream(25, 100_000),
        oracle(),
        Cqr::for_miscoverage(0.1),
        BinaryLoss,
        spec,
        Stretch::identity(),
    )
    .unwrap();
    let covered = trace.covered();
    let bound = spec.deviation_bound(0.0, covered.len());
    assert!((coverage(&covered).unwrap() - 0.9).abs() <= bound);
    assert!((msl(&covered).unwrap().unwrap() - 1.0 / 0.9).abs() < 0.05);
    assert!((mc_risk(&covered, None).unwrap() - 1.0 / 9.0).abs() < 0.01);
    let max_theta = trace.records.iter().map(|r| r.theta_post.abs()).fold(0.0, f64::max);
    assert!(max_theta < 0.5, "theta wandered to {max_theta}");
    assert!(trace.certificates().iter().all(|c| c.verdict == Verdict::Pass));
}

#[test]
fn aci_with_large_window_has_split_conformal_coverage() {
    let config = AciConfig::new(0.1, 0.005, 5_000).unwrap();
    let trace = run_aci(gaussian_stream(26, 50_000), oracle(), config).unwrap();
    let covered: Vec<bool> = trace.records[trace.warmup..].iter().map(|r| r.covered).collect();
    let cov = coverage(&covered).unwrap();
    assert!((cov - 0.9).abs() < 0.02, "coverage {cov}");
    assert!(trace.records.iter().all(|r| r.set_lo.is_some()));
}
