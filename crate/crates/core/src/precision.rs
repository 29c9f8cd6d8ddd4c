//! Software emulation of reduced-precision scalar formats.
//!
//! Every emulated value is carried in an `f64` that is exactly representable
//! in its target format. Arithmetic is compute-then-round: the operation is
//! evaluated in `f64` and the result rounded to nearest, ties to even.
//!
//! Overflow behaviour follows each format's published convention: BF16
//! overflows to infinity, FP8-E4M3 has no infinity encoding and saturates to
//! its largest finite magnitude (448). Subnormals are supported in both.

use std::fmt;
use std::ops::{Add, Div, Mul, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Scalar format selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FloatFormat {
    Fp64,
    Bf16,
    Fp8E4M3,
}

impl FloatFormat {
    pub const ALL: [FloatFormat; 3] = [FloatFormat::Fp64, FloatFormat::Bf16, FloatFormat::Fp8E4M3];

    pub fn exponent_bits(self) -> u32 {
        match self {
            FloatFormat::Fp64 => 11,
            FloatFormat::Bf16 => 8,
            FloatFormat::Fp8E4M3 => 4,
        }
    }

    /// Explicitly stored mantissa bits (the hidden bit is not counted).
    pub fn mantissa_bits(self) -> u32 {
        match self {
            FloatFormat::Fp64 => 52,
            FloatFormat::Bf16 => 7,
            FloatFormat::Fp8E4M3 => 3,
        }
    }

    pub fn bias(self) -> i32 {
        match self {
            FloatFormat::Fp64 => 1023,
            FloatFormat::Bf16 => 127,
            FloatFormat::Fp8E4M3 => 7,
        }
    }

    /// Largest finite magnitude.
    pub fn max_finite(self) -> f64 {
        match self {
            FloatFormat::Fp64 => f64::MAX,
            // (2 - 2^-7) * 2^127
            FloatFormat::Bf16 => f32::from_bits(0x7F7F_0000) as f64,
            // exponent field 1111 with mantissa 111 is NaN, so 1.110b * 2^8
            FloatFormat::Fp8E4M3 => 448.0,
        }
    }

    /// Smallest positive (subnormal) value.
    pub fn min_positive(self) -> f64 {
        if self == FloatFormat::Fp64 {
            return f64::from_bits(1);
        }
        let e_min = 1 - self.bias();
        pow2(e_min - self.mantissa_bits() as i32)
    }

    /// Smallest positive normal value.
    pub fn min_normal(self) -> f64 {
        pow2(1 - self.bias())
    }

    /// Unit roundoff, half the distance from 1.0 to the next value.
    pub fn unit_roundoff(self) -> f64 {
        pow2(-(self.mantissa_bits() as i32) - 1)
    }

    pub fn saturates(self) -> bool {
        matches!(self, FloatFormat::Fp8E4M3)
    }

    pub fn name(self) -> &'static str {
        match self {
            FloatFormat::Fp64 => "fp64",
            FloatFormat::Bf16 => "bf16",
            FloatFormat::Fp8E4M3 => "fp8e4m3",
        }
    }
}

impl fmt::Display for FloatFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown precision '{0}' (expected fp64, bf16 or fp8e4m3)")]
pub struct ParseFormatError(String);

impl FromStr for FloatFormat {
    type Err = ParseFormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fp64" | "f64" => Ok(FloatFormat::Fp64),
            "bf16" | "bfloat16" => Ok(FloatFormat::Bf16),
            "fp8e4m3" | "fp8" | "e4m3" => Ok(FloatFormat::Fp8E4M3),
            _ => Err(ParseFormatError(s.to_string())),
        }
    }
}

/// Exact power of two for exponents inside the normal `f64` range.
fn pow2(e: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// Round `x` to the nearest value representable in `fmt` (ties to even).
pub fn round_to_format(x: f64, fmt: FloatFormat) -> f64 {
    if fmt == FloatFormat::Fp64 || x.is_nan() || x == 0.0 {
        return x;
    }
    let a = x.abs();
    let max = fmt.max_finite();
    if a.is_infinite() {
        return if fmt.saturates() { max.copysign(x) } else { x };
    }

    let e_min = 1 - fmt.bias();
    // f64 subnormals sit far below every emulated format's range and
    // clamp to e_min anyway.
    let e_raw = ((a.to_bits() >> 52) & 0x7FF) as i32 - 1023;
    let e = e_raw.max(e_min);
    let quantum = pow2(e - fmt.mantissa_bits() as i32);
    let r = (a / quantum).round_ties_even() * quantum;

    let r = if r > max {
        if fmt.saturates() {
            max
        } else {
            f64::INFINITY
        }
    } else {
        r
    };
    r.copysign(x)
}

/// Whether `x` is exactly representable in `fmt`.
pub fn is_representable(x: f64, fmt: FloatFormat) -> bool {
    x.is_nan() || round_to_format(x, fmt).to_bits() == x.to_bits()
}

/// BF16 bit pattern of an already-rounded value.
pub fn bf16_to_bits(x: f64) -> u16 {
    let r = round_to_format(x, FloatFormat::Bf16);
    if r.is_nan() {
        return 0x7FC0;
    }
    // every BF16 value is exactly an f32 whose low 16 bits are zero
    ((r as f32).to_bits() >> 16) as u16
}

pub fn bf16_from_bits(bits: u16) -> f64 {
    f32::from_bits((bits as u32) << 16) as f64
}

/// FP8-E4M3 bit pattern of `x` after rounding. NaN encodes as `0x7F`.
pub fn fp8_to_bits(x: f64) -> u8 {
    let r = round_to_format(x, FloatFormat::Fp8E4M3);
    if r.is_nan() {
        return 0x7F;
    }
    let sign = if r.is_sign_negative() { 0x80u8 } else { 0 };
    let a = r.abs();
    if a == 0.0 {
        return sign;
    }
    let fmt = FloatFormat::Fp8E4M3;
    let bits = if a < fmt.min_normal() {
        // subnormal: mantissa counts multiples of 2^-9
        (a / fmt.min_positive()) as u8
    } else {
        let e = ((a.to_bits() >> 52) & 0x7FF) as i32 - 1023;
        let frac = a / pow2(e) - 1.0;
        let mant = (frac * 8.0) as u8;
        (((e + fmt.bias()) as u8) << 3) | mant
    };
    sign | bits
}

pub fn fp8_from_bits(bits: u8) -> f64 {
    let sign = if bits & 0x80 != 0 { -1.0 } else { 1.0 };
    let exp = ((bits >> 3) & 0x0F) as i32;
    let mant = (bits & 0x07) as f64;
    if exp == 0x0F && (bits & 0x07) == 0x07 {
        return f64::NAN;
    }
    let fmt = FloatFormat::Fp8E4M3;
    let mag = if exp == 0 {
        mant * fmt.min_positive()
    } else {
        (1.0 + mant / 8.0) * pow2(exp - fmt.bias())
    };
    sign * mag
}

/// A value held in an `f64` carrier that is exactly representable in its format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmulatedScalar {
    value: f64,
    format: FloatFormat,
}

impl EmulatedScalar {
    pub fn new(x: f64, format: FloatFormat) -> Self {
        Self {
            value: round_to_format(x, format),
            format,
        }
    }

    pub fn value(self) -> f64 {
        self.value
    }

    pub fn format(self) -> FloatFormat {
        self.format
    }

    fn binary(self, rhs: Self, op: impl FnOnce(f64, f64) -> f64) -> Self {
        assert_eq!(
            self.format, rhs.format,
            "emulated operands must share a format"
        );
        Self::new(op(self.value, rhs.value), self.format)
    }
}

impl Add for EmulatedScalar {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, |a, b| a + b)
    }
}

impl Sub for EmulatedScalar {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, |a, b| a - b)
    }
}

impl Mul for EmulatedScalar {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, |a, b| a * b)
    }
}

impl Div for EmulatedScalar {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self.binary(rhs, |a, b| a / b)
    }
}

/// Arithmetic context used by the kernels: every result is rounded to
/// `format`. With `wide_accumulate` set, dot products accumulate in `f64`
/// and round once at the end instead of after every multiply and add.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arith {
    pub format: FloatFormat,
    pub wide_accumulate: bool,
}

impl Default for Arith {
    fn default() -> Self {
        Self::new(FloatFormat::Fp64)
    }
}

impl Arith {
    pub fn new(format: FloatFormat) -> Self {
        Self {
            format,
            wide_accumulate: false,
        }
    }

    pub fn with_wide_accumulate(mut self, wide: bool) -> Self {
        self.wide_accumulate = wide;
        self
    }

    #[inline]
    pub fn round(&self, x: f64) -> f64 {
        round_to_format(x, self.format)
    }

    #[inline]
    pub fn add(&self, a: f64, b: f64) -> f64 {
        self.round(a + b)
    }

    #[inline]
    pub fn sub(&self, a: f64, b: f64) -> f64 {
        self.round(a - b)
    }

    #[inline]
    pub fn mul(&self, a: f64, b: f64) -> f64 {
        self.round(a * b)
    }

    #[inline]
    pub fn div(&self, a: f64, b: f64) -> f64 {
        self.round(a / b)
    }

    #[inline]
    pub fn exp(&self, x: f64) -> f64 {
        self.round(x.exp())
    }

    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        if self.wide_accumulate || self.format == FloatFormat::Fp64 {
            let acc: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            return self.round(acc);
        }
        let mut pairs = a.iter().zip(b);
        let Some((x0, y0)) = pairs.next() else {
            return 0.0;
        };
        let mut acc = self.mul(*x0, *y0);
        for (x, y) in pairs {
            acc = self.add(acc, self.mul(*x, *y));
        }
        acc
    }

    pub fn quantize(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|&x| self.round(x)).collect()
    }
}
