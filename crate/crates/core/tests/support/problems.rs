//! Problem builders shared by the integration tests.
#![allow(dead_code)]

use flashd::kernels::AttnProblem;

/// One query `e_0` and keys `s_i · e_0`, so the scores are exactly `scores`.
pub fn with_scores(scores: &[f64], values: Vec<Vec<f64>>) -> AttnProblem {
    let d = values[0].len();
    let mut q = vec![0.0; d];
    q[0] = 1.0;
    let keys = scores
        .iter()
        .map(|&s| {
            let mut k = vec![0.0; d];
            k[0] = s;
            k
        })
        .collect();
    AttnProblem::new(vec![q], keys, values).unwrap()
}

/// Largest componentwise relative error, denominator max(|b|, 1e-30).
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-30))
        .fold(0.0, f64::max)
}

/// ‖a − b‖∞ / ‖b‖∞.
pub fn norm_rel(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1e-30);
    num / den
}
