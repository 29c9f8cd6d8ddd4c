#[path = "support/enumeration.rs"]
mod enumeration;

use enumeration::Enumeration;
use flashd::precision::*;
use flashd::tensorio::SplitMix64;
use proptest::prelude::*;

fn same(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || a.to_bits() == b.to_bits() || (a == 0.0 && b == 0.0)
}

/// Magnitudes spread log-uniformly over the format's range, including
/// subnormals and overflow, plus exact midpoints between neighbours.
fn samples(fmt: FloatFormat, oracle: &Enumeration, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    let lo = fmt.min_positive().log2() - 2.0;
    let hi = fmt.max_finite().log2() + 1.5;
    let mut xs = Vec::with_capacity(count);
    while xs.len() < count {
        let sign = if rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 };
        if rng.next_u64() % 4 == 0 {
            let i = (rng.next_u64() as usize) % (oracle.positives.len() - 1);
            let mid = (oracle.positives[i].0 + oracle.positives[i + 1].0) / 2.0;
            xs.push(sign * mid);
        } else {
            xs.push(sign * rng.uniform(lo, hi).exp2());
        }
    }
    xs
}

#[test]
fn rounding_matches_enumeration_on_random_inputs() {
    for fmt in [FloatFormat::Bf16, FloatFormat::Fp8E4M3] {
        let oracle = Enumeration::new(fmt);
        let mut mismatches = 0;
        for x in samples(fmt, &oracle, 10_000, 11) {
            if !same(round_to_format(x, fmt), oracle.round(x)) {
                mismatches += 1;
            }
        }
        assert_eq!(mismatches, 0, "{fmt}");
    }
}

#[test]
fn every_encoding_round_trips() {
    for b in 0..=255u8 {
        let v = fp8_from_bits(b);
        if v.is_nan() {
            continue;
        }
        assert!(same(round_to_format(v, FloatFormat::Fp8E4M3), v), "fp8 {b:#04x}");
        assert_eq!(fp8_to_bits(v), b, "fp8 {b:#04x}");
    }
    for b in 0..=u16::MAX {
        let v = bf16_from_bits(b);
        if v.is_nan() {
            continue;
        }
        assert!(same(round_to_format(v, FloatFormat::Bf16), v), "bf16 {b:#06x}");
        assert_eq!(bf16_to_bits(v), b, "bf16 {b:#06x}");
    }
}

#[test]
fn fp8_encoding_table() {
    assert_eq!(fp8_from_bits(0x7E), 448.0);
    assert_eq!(fp8_from_bits(0x01), 2f64.powi(-9));
    assert_eq!(fp8_from_bits(0x08), 2f64.powi(-6));
    assert_eq!(fp8_from_bits(0x38), 1.0);
    assert!(fp8_from_bits(0x7F).is_nan());
    assert!(fp8_from_bits(0xFF).is_nan());
    let finite = (0..=255u8).filter(|&b| fp8_from_bits(b).is_finite()).count();
    assert_eq!(finite, 254);
}

#[test]
fn emulated_operations_match_oracle() {
    for fmt in [FloatFormat::Bf16, FloatFormat::Fp8E4M3] {
        let oracle = Enumeration::new(fmt);
        let vals = oracle.values();
        let mut rng = SplitMix64::new(5);
        for _ in 0..20_000 {
            let a = vals[(rng.next_u64() as usize) % vals.len()];
            let b = vals[(rng.next_u64() as usize) % vals.len()];
            let (x, y) = (EmulatedScalar::new(a, fmt), EmulatedScalar::new(b, fmt));
            assert!(same((x + y).value(), oracle.round(a + b)), "{a} + {b} in {fmt}");
            assert!(same((x - y).value(), oracle.round(a - b)), "{a} - {b} in {fmt}");
            assert!(same((x * y).value(), oracle.round(a * b)), "{a} * {b} in {fmt}");
            if b != 0.0 {
                assert!(same((x / y).value(), oracle.round(a / b)), "{a} / {b} in {fmt}");
            }
        }
    }
}

#[test]
fn spot_values() {
    assert_eq!(round_to_format(0.5, FloatFormat::Bf16), 0.5);
    assert_eq!(round_to_format(1.0, FloatFormat::Fp8E4M3), 1.0);
    let one = EmulatedScalar::new(1.0, FloatFormat::Fp8E4M3);
    assert_eq!((one + one).value(), 2.0);
    for &x in &[3.7, -1e-3, 448.0, 1e30] {
        for fmt in FloatFormat::ALL {
            let z = EmulatedScalar::new(0.0, fmt) * EmulatedScalar::new(x, fmt);
            assert_eq!(z.value(), 0.0);
        }
    }
}

fn finite_f64() -> impl Strategy<Value = f64> {
    prop_oneof![
        (-1e6f64..1e6),
        (-40.0f64..140.0).prop_map(|e| e.exp2()),
        (-40.0f64..140.0).prop_map(|e| -e.exp2()),
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
    ]
}

proptest! {
    #[test]
    fn rounding_is_idempotent(x in finite_f64()) {
        for fmt in FloatFormat::ALL {
            let r = round_to_format(x, fmt);
            prop_assert!(same(round_to_format(r, fmt), r));
        }
    }

    #[test]
    fn rounding_is_monotone(a in finite_f64(), b in finite_f64()) {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        for fmt in FloatFormat::ALL {
            prop_assert!(round_to_format(x, fmt) <= round_to_format(y, fmt));
        }
    }
}
