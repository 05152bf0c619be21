//! Monte Carlo checks of the simulation engine against closed-form normal
//! theory. Every oracle here is computed independently of the engine.

use rand::Rng;
use ssd_core::dgp::{AllocationRho, Family, Scenario, TwoArmNormalEta};
use ssd_core::engine::{
    choose_n1, find_min_n, find_min_n_weighted, fit_logit_lines, naive_sweep, predict_power, robust_ssd,
    run_algorithm1, weighted_power, Executor, LimitSlopes, N1Strategy, ScenarioRun, SsdSettings,
};
use ssd_core::estimators::Analysis;
use ssd_core::numeric::{std_normal_cdf, std_normal_quantile};
use ssd_core::pvalue::{HypothesisKind, HypothesisSpec};
use ssd_core::rng::{Purpose, RngStream, StreamPath};

const LOWER0: HypothesisKind = HypothesisKind::OneSidedLower { theta0: 0.0 };

fn normal(label: &str, diff: f64, sigma: f64) -> Scenario {
    Scenario::new(
        label,
        Family::TwoArmNormal {
            eta: TwoArmNormalEta {
                mean_difference: diff,
                control_mean: 1.0,
                sigma,
            },
            rho: AllocationRho { allocation: 0.5 },
        },
        diff,
        Analysis::MeanDiff,
    )
    .unwrap()
}

/// Φ(Δ√n/λ − z₁₋α) with λ = 2σ for equal allocation.
fn oracle_power(diff: f64, sigma: f64, alpha: f64, n: f64) -> f64 {
    let lambda = 2.0 * sigma;
    std_normal_cdf(diff * n.sqrt() / lambda - std_normal_quantile(1.0 - alpha).unwrap())
}

/// TOST power, ignoring the negligible joint-failure term.
fn oracle_tost_power(theta: f64, lo: f64, hi: f64, sigma: f64, alpha: f64, n: f64) -> f64 {
    let se = 2.0 * sigma / n.sqrt();
    let z = std_normal_quantile(1.0 - alpha).unwrap();
    (std_normal_cdf((hi - theta) / se - z) + std_normal_cdf((theta - lo) / se - z) - 1.0).max(0.0)
}

#[test]
fn null_rejection_rate_is_nominal() {
    let s = normal("null", 0.0, 1.0);
    let sample = run_algorithm1(&s, 0, &LOWER0, 10_000, 10_000, 101, &Executor::serial()).unwrap();
    let rate = sample.power(0.05).value();
    assert!((rate - 0.05).abs() <= 0.008, "rejection rate {rate}");
    assert_eq!(sample.n_nonconverged, 0);
}

#[test]
fn predicted_power_tracks_closed_form() {
    let s = normal("oracle", 0.5, 1.0);
    let exec = Executor::serial();
    let s0 = run_algorithm1(&s, 0, &LOWER0, 100, 10_000, 7, &exec).unwrap();
    let s1 = run_algorithm1(&s, 0, &LOWER0, 250, 10_000, 7, &exec).unwrap();
    let f = fit_logit_lines(&s0, &s1, &LOWER0).unwrap();
    for n in [120.0, 150.0, 170.0, 200.0, 230.0] {
        let got = predict_power(&f, n, 0.025).value();
        let want = oracle_power(0.5, 1.0, 0.025, n);
        assert!((got - want).abs() <= 0.02, "n = {n}: {got} vs {want}");
    }
}

#[test]
fn naive_sweep_matches_closed_form_and_size() {
    let exec = Executor::serial();
    let grid = [60, 120, 180, 240];
    let curve = naive_sweep(&normal("oracle", 0.4, 1.0), 3, &LOWER0, 0.05, &grid, 10_000, 9, &exec).unwrap();
    for p in &curve {
        let want = oracle_power(0.4, 1.0, 0.05, p.n as f64);
        assert!((p.power - want).abs() <= 0.015, "n = {}: {} vs {want}", p.n, p.power);
    }
    let null = naive_sweep(&normal("null", 0.0, 1.0), 4, &LOWER0, 0.05, &grid, 10_000, 9, &exec).unwrap();
    for p in &null {
        assert!((p.power - 0.05).abs() <= 0.01, "n = {}: {}", p.n, p.power);
    }
    let single = naive_sweep(&normal("oracle", 0.4, 1.0), 3, &LOWER0, 0.05, &[120], 10_000, 9, &exec).unwrap();
    let direct = run_algorithm1(&normal("oracle", 0.4, 1.0), 3, &LOWER0, 120, 10_000, 9, &exec).unwrap();
    assert_eq!(single[0].power, direct.power(0.05).value());
}

#[test]
fn median_slope_approaches_limit() {
    // a₁ = 0.3 / 2 = 0.15; limit −0.01125.
    let s = normal("slope", 0.3, 1.0);
    let exec = Executor::serial();
    let s0 = run_algorithm1(&s, 0, &LOWER0, 1_000, 4_000, 13, &exec).unwrap();
    let s1 = run_algorithm1(&s, 0, &LOWER0, 2_000, 4_000, 13, &exec).unwrap();
    let f = fit_logit_lines(&s0, &s1, &LOWER0).unwrap();
    let limit = -0.5 * 0.15f64.powi(2);
    let rel = (f.median_slope() - limit).abs() / limit.abs();
    assert!(rel < 0.1, "median slope {} vs {limit}", f.median_slope());
}

#[test]
fn equivalence_pairing_matches_naive_simulation() {
    let (lo, hi) = (-0.5, 0.5);
    let kind = HypothesisKind::Equivalence {
        theta0_lower: lo,
        theta0_upper: hi,
    };
    let s = normal("tost", 0.1, 1.0);
    let exec = Executor::serial();
    let s0 = run_algorithm1(&s, 0, &kind, 150, 10_000, 21, &exec).unwrap();
    let s1 = run_algorithm1(&s, 0, &kind, 300, 10_000, 21, &exec).unwrap();
    let f = fit_logit_lines(&s0, &s1, &kind).unwrap();
    let grid = [100, 200, 250, 400];
    let naive = naive_sweep(&s, 99, &kind, 0.05, &grid, 10_000, 21, &exec).unwrap();
    for p in &naive {
        let got = predict_power(&f, p.n as f64, 0.05).value();
        assert!((got - p.power).abs() <= 0.03, "n = {}: {got} vs naive {}", p.n, p.power);
        let closed = oracle_tost_power(0.1, lo, hi, 1.0, 0.05, p.n as f64);
        assert!((p.power - closed).abs() <= 0.02, "n = {}: naive {} vs {closed}", p.n, p.power);
    }
    // At the fitted sizes the per-rank max of the tails is close to the
    // simulated power but not identical to it.
    for (n, sample) in [(150.0, &s0), (300.0, &s1)] {
        let got = predict_power(&f, n, 0.05).value();
        assert!((got - sample.power(0.05).value()).abs() <= 0.01);
    }
}

#[test]
fn two_sided_predictions_track_closed_form() {
    let kind = HypothesisKind::TwoSided { theta0: 0.0 };
    let s = normal("two", 0.4, 1.0);
    let exec = Executor::serial();
    let s0 = run_algorithm1(&s, 0, &kind, 120, 10_000, 5, &exec).unwrap();
    let s1 = run_algorithm1(&s, 0, &kind, 240, 10_000, 5, &exec).unwrap();
    let f = fit_logit_lines(&s0, &s1, &kind).unwrap();
    for n in [150.0, 200.0] {
        let got = predict_power(&f, n, 0.05).value();
        let want = oracle_power(0.4, 1.0, 0.025, n);
        assert!((got - want).abs() <= 0.02, "n = {n}: {got} vs {want}");
    }
    assert_eq!(predict_power(&f, 120.0, 0.05), s0.power(0.05));
}

#[test]
fn robust_recommendation_for_unit_scale_oracle() {
    // σ = 0.5 gives λ = 1: n* = ((1.959964 + 1.281552) / 0.5)² ≈ 42.02.
    let s = normal("unit", 0.5, 0.5);
    let settings = SsdSettings {
        hypothesis: HypothesisSpec::new(LOWER0, 0.025).unwrap(),
        target_power: 0.9,
        replications: 10_000,
        n0: 30,
        strategy: N1Strategy::UserFixed { n1: 60 },
        master_seed: 17,
        search_range: None,
        pilot_replications: 1_000,
    };
    let out = robust_ssd(&[ScenarioRun { scenario: &s, stream_id: 0 }], &settings, &Executor::serial()).unwrap();
    let n = out.recommendation.robust_n as f64;
    let closed = std_normal_cdf(0.5 * n.sqrt() - 1.959964);
    assert!((0.885..=0.915).contains(&closed), "n = {n}, closed-form power {closed}");
}

#[test]
fn theorem_slope_n1_is_close_to_closed_form() {
    let s = normal("oracle", 0.5, 1.0);
    let exec = Executor::serial();
    let s0 = run_algorithm1(&s, 0, &LOWER0, 80, 10_000, 3, &exec).unwrap();
    let slopes = LimitSlopes::from_theory(0.5, 2.0, &LOWER0);
    let strategy = N1Strategy::TheoremSlope { lambda0: Some(2.0) };
    let n1 = choose_n1(&s0, &LOWER0, 0.025, 0.9, &strategy, Some(slopes)).unwrap();
    // The limiting slope is steeper than the finite-n slope, so the
    // extrapolation lands a little short of n* ≈ 168.
    assert!(n1 > 80 && (120..=190).contains(&n1), "n1 = {n1}");
}

#[test]
fn weighted_minimum_never_exceeds_robust_maximum() {
    let exec = Executor::serial();
    let diffs = [0.35, 0.5, 0.7];
    let families: Vec<_> = diffs
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let s = normal(&format!("d{i}"), d, 1.0);
            let s0 = run_algorithm1(&s, i as u64, &LOWER0, 80, 2_000, 4, &exec).unwrap();
            let s1 = run_algorithm1(&s, i as u64, &LOWER0, 300, 2_000, 4, &exec).unwrap();
            fit_logit_lines(&s0, &s1, &LOWER0).unwrap()
        })
        .collect();
    let range = (20, 3_000);
    let robust = families
        .iter()
        .map(|f| find_min_n(f, 0.05, 0.8, range).unwrap())
        .max()
        .unwrap();
    let mut rng = RngStream::new(8, StreamPath::new(0, 0, 0, Purpose::Custom(1)));
    for _ in 0..50 {
        let raw: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        w[2] = 1.0 - w[0] - w[1];
        let n = find_min_n_weighted(&families, &w, 0.05, 0.8, range).unwrap();
        assert!(n <= robust, "weighted {n} > robust {robust}");
        assert!(weighted_power(&families, &w, robust as f64, 0.05).unwrap().value() >= 0.8);
    }
}
