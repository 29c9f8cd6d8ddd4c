#[path = "support/baselines.rs"]
mod baselines;
#[path = "support/dd.rs"]
mod dd;

use dd::{ulps, Dd};
use flashd::nonlinear::*;
use flashd::tensorio::SplitMix64;

#[test]
fn sigmoid_against_extended_precision() {
    assert!(ulps(sigmoid(2.0), Dd::new(2.0).sigmoid().to_f64()) <= 1.0);
    let mut rng = SplitMix64::new(1);
    for _ in 0..5_000 {
        let x = rng.uniform(-700.0, 700.0);
        let exact = Dd::new(x).sigmoid().to_f64();
        assert!(ulps(sigmoid(x), exact) <= 2.0, "x={x}");
    }
}

#[test]
fn sigmoid_is_finite_everywhere() {
    for &x in &[f64::MAX, -f64::MAX, 1e308, -1e308, 745.0, -745.0, 0.0, -0.0] {
        let y = sigmoid(x);
        assert!(y.is_finite() && (0.0..=1.0).contains(&y), "x={x}");
    }
}

#[test]
fn ln_against_extended_precision() {
    assert_eq!(ln_weight(1.0).unwrap(), 0.0);
    assert!((ln_weight((-1f64).exp()).unwrap() + 1.0).abs() <= 2.0 * f64::EPSILON);
    let mut rng = SplitMix64::new(2);
    for _ in 0..5_000 {
        let w = rng.uniform(-60.0, 0.0).exp2();
        let exact = Dd::new(w).ln().to_f64();
        assert!(ulps(ln_weight(w).unwrap(), exact) <= 1.0, "w={w}");
    }
    assert!(ln_weight(0.0).is_err());
    assert!(ln_weight(1.5).is_err());
    assert!(ln_weight(-0.1).is_err());
}

#[test]
fn log_sigmoid_against_extended_precision() {
    assert_eq!(log_sigmoid(0.0), -std::f64::consts::LN_2);
    let far = log_sigmoid(-800.0);
    assert!(far.is_finite() && (far + 800.0).abs() < 1e-9);
    let mut rng = SplitMix64::new(3);
    for _ in 0..5_000 {
        let x = rng.uniform(-800.0, 60.0);
        let exact = Dd::new(x).log_sigmoid().to_f64();
        assert!(ulps(log_sigmoid(x), exact) <= 2.0, "x={x}");
    }
    assert!((log_sigmoid(40.0) + (-40f64).exp()).abs() <= 1e-30);
}

/// exp(log_sigmoid(x)) vs sigmoid(x). The exponential amplifies the
/// absolute error of its argument, |x|·eps for x << 0, so the allowance is
/// 4 ulps plus that conditioning term.
#[test]
fn exp_log_sigmoid_matches_sigmoid() {
    let mut rng = SplitMix64::new(4);
    for _ in 0..20_000 {
        let x = rng.uniform(-340.0, 40.0);
        let s = sigmoid(x);
        if s < 2f64.powi(-500) {
            continue;
        }
        let cond = (x.min(0.0)).abs().max(1.0);
        assert!(ulps(log_sigmoid(x).exp(), s) <= 4.0 + cond, "x={x}");
    }
    for x in -8..=8 {
        let x = x as f64;
        assert!(ulps(log_sigmoid(x).exp(), sigmoid(x)) <= 4.0, "x={x}");
    }
}

#[test]
fn linear_target_is_exact() {
    for n in [1, 3, 8] {
        let t = fit_pwl(|x| 3.0 * x + 1.0, 0.0, 1.0, n).unwrap();
        assert!(t.max_abs_error <= 1e-12, "n={n}: {}", t.max_abs_error);
    }
}

#[test]
fn eval_agrees_with_coefficients() {
    let t = &PwlTables::standard().sigmoid;
    let mut rng = SplitMix64::new(6);
    for _ in 0..1_000 {
        let x = rng.uniform(t.domain_lo(), t.domain_hi());
        let j = t.breakpoints.partition_point(|&b| b <= x).clamp(1, t.segments()) - 1;
        let direct = t.slopes[j] * x + t.intercepts[j];
        assert!((t.eval(x).unwrap() - direct).abs() <= 1e-15);
    }
    assert!(t.eval(t.domain_lo() - 1e-9).is_err());
    assert!(t.eval(t.domain_hi() + 1e-9).is_err());
    assert!(t.eval(t.domain_hi()).is_ok());
}

#[test]
fn standard_tables_hold_their_baselines() {
    let PwlTables { sigmoid: s, ln } = PwlTables::standard();
    assert_eq!(s.segments(), 8);
    assert_eq!(ln.segments(), 8);
    assert_eq!(s.breakpoints[0], -6.0);
    assert_eq!(s.breakpoints[8], 11.0);
    assert_eq!(ln.breakpoints[0], 2f64.powi(-24));
    assert_eq!(ln.breakpoints[8], 1.0);
    assert!(s.slopes.iter().all(|&m| m >= 0.0));
    assert!(s.continuity_gap() <= 1e-12 && ln.continuity_gap() <= 1e-12);
    assert!(s.max_abs_error <= baselines::SIGMOID_PWL8_MAX_ERR, "{}", s.max_abs_error);
    assert!(ln.max_abs_error <= baselines::LN_PWL8_MAX_ERR, "{}", ln.max_abs_error);
    // a denser independent grid sees (almost) the same worst case
    let dense_s = s.measure_error(sigmoid, GridSpacing::Linear, 200_001);
    let dense_ln = ln.measure_error(f64::ln, GridSpacing::Geometric, 200_001);
    assert!(dense_s <= baselines::SIGMOID_PWL8_MAX_ERR * 1.01, "{dense_s}");
    assert!(dense_ln <= baselines::LN_PWL8_MAX_ERR * 1.01, "{dense_ln}");
}

#[test]
fn sigmoid_error_shrinks_with_segments() {
    let e: Vec<f64> = [4, 8, 16]
        .iter()
        .map(|&n| sigmoid_table(n, FitObjective::MaxErr).unwrap().max_abs_error)
        .collect();
    assert!(e[0] >= e[1] && e[1] >= e[2], "{e:?}");
}

#[test]
fn maxerr_beats_least_squares_on_worst_case() {
    let mx = sigmoid_table(8, FitObjective::MaxErr).unwrap();
    let lsq = sigmoid_table(8, FitObjective::Lsq).unwrap();
    assert!(mx.max_abs_error <= lsq.max_abs_error, "{} vs {}", mx.max_abs_error, lsq.max_abs_error);
}

#[test]
fn fitter_rejects_non_finite_targets() {
    assert!(fit_pwl(f64::ln, -1.0, 1.0, 4).is_err());
}
