//! Deterministic guarantees checked on whole runs: theta stays in its
//! envelope and every prefix average is within the certified distance of
//! the target, including against an adversary that sees each set first.

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rollrc::losses::{BinaryLoss, CenterFailure, ImageMiscoverage, MiscoverageCounter, RiskLoss};
use rollrc::models::{ConstantQuantiles, LinearPinball, PrecomputedImage};
use rollrc::multi::{run_multi_stream, Aggregation, MultiRiskSpec};
use rollrc::sets::{Cqr, ImageIntervals, UncertaintyHeuristic};
use rollrc::{
    run_stream, update_theta, CalibratorState, PredictionSet, RiskSpec, RollingController, Stretch, Verdict,
};

fn const_model() -> ConstantQuantiles<f64> {
    ConstantQuantiles::new(vec![(0.05, -1.0), (0.95, 1.0)]).unwrap()
}

/// Places the label outside the announced interval whenever possible.
fn adversarial_label(set: &PredictionSet<f64>) -> f64 {
    match set {
        PredictionSet::Interval { hi, .. } => hi + 1.0,
        _ => 0.0,
    }
}

fn adversarial_run(spec: RiskSpec<f64>, stretch: Stretch<f64>, steps: usize) -> rollrc::StreamTrace<f64> {
    let mut c = RollingController::new(spec, stretch, const_model(), Cqr::for_miscoverage(0.1), BinaryLoss).unwrap();
    let x = vec![];
    for _ in 0..steps {
        let y = adversarial_label(c.announce(&x).unwrap());
        c.resolve(&x, &y).unwrap();
    }
    c.into_trace()
}

fn assert_certified(trace: &rollrc::StreamTrace<f64>) {
    for cert in trace.certificates() {
        assert_eq!(cert.verdict, Verdict::Pass, "{cert}");
    }
}

#[test]
fn bernoulli_losses_stay_within_declared_bound() {
    let spec = RiskSpec::<f64>::new(0.1, 0.05, -1.0, 1.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut st = CalibratorState::new(&spec);
    for _ in 0..10_000 {
        let l = if rng.random_bool(0.1) { 1.0 } else { 0.0 };
        st = update_theta(st, l, &spec).unwrap();
    }
    let c = spec.upper - spec.lower + 4.0 * spec.gamma * spec.loss_bound;
    assert!((st.theta - spec.theta_init).abs() <= c);
    assert!((st.mean_loss().unwrap() - 0.1).abs() <= c / (spec.gamma * 10_000.0));
}

#[test]
fn adversary_cannot_break_the_bound() {
    for (gamma, stretch) in [
        (0.05, Stretch::identity()),
        (0.2, Stretch::exponential()),
        (0.5, Stretch::exp_linear_zone()),
    ] {
        let spec = RiskSpec::new(0.1, gamma, -2.0, 3.0, 1.0).unwrap();
        let trace = adversarial_run(spec, stretch, 5_000);
        assert_certified(&trace);
        // The adversary wins every non-full step, so theta must climb past
        // M and live near it.
        assert!(trace.records.iter().any(|r| r.set_lo == Some(f64::NEG_INFINITY)));
    }
}

#[test]
fn adaptive_stretch_keeps_the_bound() {
    let spec = RiskSpec::new(0.1, 0.05, -1.0, 1.0, 1.0).unwrap();
    let stretch = Stretch::error_adaptive(0.05, 0.15, -0.5, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stream: Vec<_> = (0..5_000).map(|_| Ok((vec![], rng.random_range(-3.0..3.0)))).collect();
    let trace = run_stream(stream, const_model(), Cqr::for_miscoverage(0.1), BinaryLoss, spec, stretch).unwrap();
    assert_certified(&trace);
}

#[test]
fn miscoverage_counter_run_is_certified() {
    let spec = RiskSpec::new(1.0 / 9.0, 0.01, -1.0, 2.0, 50.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let stream: Vec<_> = (0..5_000).map(|_| Ok((vec![], 2.0 * rng.random::<f64>() - 1.0))).collect();
    let trace = run_stream(
        stream,
        const_model(),
        Cqr::for_miscoverage(0.1),
        MiscoverageCounter::default(),
        spec,
        Stretch::identity(),
    )
    .unwrap();
    assert_certified(&trace);
    let binary: f64 = trace.records.iter().map(|r| f64::from(u8::from(!r.covered))).sum();
    assert!(binary <= trace.loss_sum());
}

#[test]
fn identity_stretch_matches_plain_recursion() {
    let spec = RiskSpec::new(0.1, 0.07, -1.0, 1.0, 1.0).unwrap();
    let trace = adversarial_run(spec, Stretch::identity(), 2_000);
    let mut theta = spec.theta_init;
    for r in &trace.records {
        assert_eq!(r.theta_pre.to_bits(), theta.to_bits());
        theta += spec.gamma * (r.loss - spec.target);
        assert_eq!(r.theta_post.to_bits(), theta.to_bits());
    }
}

#[test]
fn sets_do_not_peek_at_labels() {
    let spec = RiskSpec::new(0.1, 0.05, -9999.0, 9999.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<(Vec<f64>, f64)> = (0..300)
        .map(|_| {
            let x: f64 = rng.random();
            (vec![x], 2.0 * x + rng.random_range(-1.0..1.0))
        })
        .collect();
    let build = || {
        RollingController::new(
            spec,
            Stretch::score_adaptive(0.05, -1.0, 1.0).unwrap(),
            LinearPinball::new(&[0.05, 0.95], 1, 0.05).unwrap(),
            Cqr::for_miscoverage(0.1),
            BinaryLoss,
        )
        .unwrap()
    };
    let mut full = build();
    let mut announced = Vec::new();
    for (x, y) in &data {
        announced.push(full.announce(x).unwrap().clone());
        full.resolve(x, y).unwrap();
    }
    for t in [0, 1, 17, 150, 299] {
        let mut replay = build();
        for (x, y) in &data[..t] {
            replay.step(x, y).unwrap();
        }
        // A different label for step t must not matter for its own set.
        let set = replay.announce(&data[t].0).unwrap();
        assert_eq!(set, &announced[t]);
        replay.resolve(&data[t].0, &(data[t].1 + 100.0)).unwrap();
    }
}

#[test]
fn single_precision_runs_are_certified() {
    let spec = RiskSpec::<f32>::new(0.1, 0.05, -1.0, 1.0, 1.0).unwrap();
    let model = ConstantQuantiles::new(vec![(0.05_f32, -1.0), (0.95, 1.0)]).unwrap();
    let mut c = RollingController::new(spec, Stretch::identity(), model, Cqr::for_miscoverage(0.1_f32), BinaryLoss).unwrap();
    let x = vec![];
    for _ in 0..3_000 {
        let y = match c.announce(&x).unwrap() {
            PredictionSet::Interval { hi, .. } => hi + 1.0,
            _ => 0.0_f32,
        };
        c.resolve(&x, &y).unwrap();
    }
    for cert in c.into_trace().certificates() {
        assert!(cert.holds(), "{cert}");
    }
}

fn noisy_frames(seed: u64, steps: usize) -> Vec<rollrc::Result<(Array2<f64>, Array2<f64>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps)
        .map(|t| {
            let scale = if (t / 500) % 2 == 0 { 1.0 } else { 3.0 };
            let pred = Array2::from_shape_fn((8, 8), |_| rng.random_range(-1.0..1.0));
            let y = &pred + &Array2::from_shape_fn((8, 8), |_| scale * rng.random_range(-1.0..1.0));
            Ok((pred, y))
        })
        .collect()
}

#[test]
fn two_risk_image_run_is_certified() {
    let risks = vec![
        RiskSpec::new(0.2, 0.05, -2.0, 4.0, 1.0).unwrap(),
        RiskSpec::new(0.1, 0.05, -2.0, 4.0, 1.0).unwrap(),
    ];
    for two_sided in [false, true] {
        let spec = MultiRiskSpec::new(risks.clone(), Aggregation::Max, two_sided).unwrap();
        let losses: Vec<Box<dyn RiskLoss<f64, Array2<f64>>>> =
            vec![Box::new(ImageMiscoverage::default()), Box::new(CenterFailure::default())];
        let trace = run_multi_stream(
            noisy_frames(1, 10_000),
            PrecomputedImage,
            ImageIntervals::new(UncertaintyHeuristic::constant()),
            losses,
            spec.clone(),
            Stretch::exponential(),
        )
        .unwrap();
        for cert in trace.certificates() {
            assert_eq!(cert.verdict, Verdict::Pass, "{cert}");
        }
        // One-sided bound recomputed independently of the library.
        for (i, risk) in spec.risks.iter().enumerate() {
            let d = (risk.upper + 2.0 * risk.gamma * risk.loss_bound - risk.theta_init) / risk.gamma;
            let mean = trace.records.iter().map(|r| r.losses[i]).sum::<f64>() / trace.len() as f64;
            assert!(mean <= risk.target + d / trace.len() as f64);
        }
    }
}

#[test]
fn two_risk_update_matches_hand_bound_on_bernoulli_losses() {
    let spec = MultiRiskSpec::new(
        vec![
            RiskSpec::new(0.2, 0.1, -1.0, 1.0, 1.0).unwrap(),
            RiskSpec::new(0.1, 0.01, -1.0, 1.0, 1.0).unwrap(),
        ],
        Aggregation::Max,
        false,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut theta = spec.theta_init();
    let mut sums = [0.0; 2];
    for t in 1..=10_000 {
        // Losses vanish once any coordinate passes M, as the full space would.
        let full = theta.iter().zip(&spec.risks).any(|(th, r)| *th > r.upper);
        let losses: Vec<f64> = [0.3, 0.15]
            .iter()
            .map(|&p| if !full && rng.random_bool(p) { 1.0 } else { 0.0 })
            .collect();
        sums[0] += losses[0];
        sums[1] += losses[1];
        theta = rollrc::multi::update_vector(&theta, &losses, &spec).unwrap();
        for (i, r) in spec.risks.iter().enumerate() {
            let d = (r.upper + 2.0 * r.gamma - r.theta_init) / r.gamma;
            assert!(sums[i] / t as f64 <= r.target + d / t as f64);
            assert!(theta[i] <= r.upper + 2.0 * r.gamma);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_specs_are_certified(
        gamma in 0.01..0.5_f64,
        r in 0.05..0.3_f64,
        m in -3.0..-0.1_f64,
        width in 0.5..5.0_f64,
        init in 0.0..1.0_f64,
        seed in any::<u64>(),
        adversarial in any::<bool>(),
    ) {
        let big_m = m + width;
        let spec = RiskSpec { target: r, gamma, lower: m, upper: big_m, loss_bound: 1.0, theta_init: m + init * width };
        spec.validate().unwrap();
        let mut c = RollingController::new(spec, Stretch::identity(), const_model(), Cqr::for_miscoverage(0.1), BinaryLoss).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = vec![];
        for _ in 0..2_000 {
            let set = c.announce(&x).unwrap();
            let y = if adversarial { adversarial_label(set) } else { rng.random_range(-2.0..2.0) };
            c.resolve(&x, &y).unwrap();
        }
        let trace = c.into_trace();
        let (lo, hi) = (m - 2.0 * gamma, big_m + 2.0 * gamma);
        let theta_1 = trace.records[0].theta_pre;
        let mut sum = 0.0;
        for (k, rec) in trace.records.iter().enumerate() {
            prop_assert!(lo <= rec.theta_post && rec.theta_post <= hi);
            sum += rec.loss;
            let t = (k + 1) as f64;
            let bound = f64::max(theta_1 - lo, hi - theta_1) / (t * gamma);
            prop_assert!((sum / t - r).abs() <= bound + 1e-9);
        }
        for cert in trace.certificates() {
            prop_assert_eq!(cert.verdict, Verdict::Pass);
        }
    }
}
