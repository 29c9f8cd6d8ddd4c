//! Double-double arithmetic (~106-bit significand) used as an
//! extended-precision oracle in tests.
#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn scale(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    pub fn exp(self) -> Self {
        if self.hi < -745.2 {
            return Dd::ZERO;
        }
        assert!(self.hi < 709.0, "dd exp overflow");
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2 * Dd::new(k);
        // exp(r) = exp(r / 2^10)^(2^10)
        let t = r.scale(-10);
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for i in 1..=22 {
            term = term * t / Dd::new(i as f64);
            sum = sum + term;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.scale(k as i32)
    }

    pub fn ln(self) -> Self {
        assert!(self.hi > 0.0, "dd ln domain");
        let mut y = Dd::new(self.hi.ln());
        for _ in 0..3 {
            y = y + self * (-y).exp() - Dd::ONE;
        }
        y
    }

    pub fn sigmoid(self) -> Self {
        if self.hi >= 0.0 {
            Dd::ONE / (Dd::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (Dd::ONE + e)
        }
    }

    /// ln σ(x) = -ln(1 + e^{-x}), evaluated without cancellation for x < 0.
    pub fn log_sigmoid(self) -> Self {
        if self.hi >= 0.0 {
            -(Dd::ONE + (-self).exp()).ln()
        } else {
            self - (Dd::ONE + self.exp()).ln()
        }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::new(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::new(q3)
    }
}

/// Exact-as-possible dot product.
pub fn dot(a: &[f64], b: &[f64]) -> Dd {
    a.iter()
        .zip(b)
        .fold(Dd::ZERO, |acc, (&x, &y)| acc + Dd::new(x) * Dd::new(y))
}

/// Safe-softmax attention for one query in double-double.
pub fn attention(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Vec<f64> {
    let s: Vec<Dd> = keys.iter().map(|k| dot(q, k)).collect();
    let m = s.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.hi));
    let e: Vec<Dd> = s.iter().map(|&x| (x - Dd::new(m)).exp()).collect();
    let l = e.iter().fold(Dd::ZERO, |a, &x| a + x);
    (0..values[0].len())
        .map(|j| {
            let num = e
                .iter()
                .zip(values)
                .fold(Dd::ZERO, |a, (&w, v)| a + w * Dd::new(v[j]));
            (num / l).to_f64()
        })
        .collect()
}

/// Units in the last place separating `a` from `b`.
pub fn ulps(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let spacing = f64::from_bits(b.abs().to_bits() + 1) - b.abs();
    (a - b).abs() / spacing.max(f64::MIN_POSITIVE * f64::EPSILON)
}
