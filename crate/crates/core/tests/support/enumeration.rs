//! Enumeration oracle: lists every finite encoding of a format and rounds
//! by nearest-value search, ties to the even encoding.
#![allow(dead_code)]

use flashd::precision::{bf16_from_bits, fp8_from_bits, FloatFormat};

pub struct Enumeration {
    pub format: FloatFormat,
    /// (value, encoding) for every finite non-negative encoding, ascending.
    pub positives: Vec<(f64, u32)>,
}

impl Enumeration {
    pub fn new(format: FloatFormat) -> Self {
        let mut positives: Vec<(f64, u32)> = match format {
            FloatFormat::Bf16 => (0u32..0x8000)
                .map(|b| (bf16_from_bits(b as u16), b))
                .filter(|(v, _)| v.is_finite())
                .collect(),
            FloatFormat::Fp8E4M3 => (0u32..0x80)
                .map(|b| (fp8_from_bits(b as u8), b))
                .filter(|(v, _)| v.is_finite())
                .collect(),
            FloatFormat::Fp64 => panic!("fp64 is not enumerable"),
        };
        positives.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Self { format, positives }
    }

    pub fn round(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        let a = x.abs();
        let (max, _) = *self.positives.last().unwrap();
        let r = if a >= max {
            match self.format {
                FloatFormat::Fp8E4M3 => max,
                _ => {
                    // the next encoding after max would be 2^(emax+1), i.e. inf
                    let top = self.positives[self.positives.len() - 1].0;
                    let prev = self.positives[self.positives.len() - 2].0;
                    let inf_pos = top + (top - prev);
                    let mid = (top + inf_pos) / 2.0;
                    if a >= mid {
                        f64::INFINITY
                    } else {
                        top
                    }
                }
            }
        } else {
            let i = self.positives.partition_point(|&(v, _)| v <= a);
            let (lo, lo_bits) = self.positives[i - 1];
            let (hi, hi_bits) = self.positives[i];
            let (dl, dh) = (a - lo, hi - a);
            if dl < dh {
                lo
            } else if dh < dl {
                hi
            } else if lo_bits % 2 == 0 {
                lo
            } else {
                let _ = hi_bits;
                hi
            }
        };
        if x.is_sign_negative() {
            -r
        } else {
            r
        }
    }

    /// All finite values including negatives.
    pub fn values(&self) -> Vec<f64> {
        self.positives
            .iter()
            .flat_map(|&(v, _)| [v, -v])
            .collect()
    }
}
