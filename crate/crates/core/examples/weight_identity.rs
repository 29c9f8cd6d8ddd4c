//! FLASH-D's sigmoid weight recursion reproduces the online-softmax
//! coefficient e^(s_i - m_i) / l_i step by step.

use flashd::instrumentation::{SkipStats, StageCounts};
use flashd::kernels::{score, Alg1State, FlashDState};
use flashd::{generate, Arith, GenSpec, KernelConfig, KernelKind, WeightMode};

pub fn run_example() -> Result<f64, Box<dyn std::error::Error>> {
    let p = generate(&GenSpec::gaussian(11, 12, 8, 1))?;
    let a = Arith::default();
    let cfg = KernelConfig::new(KernelKind::FlashD);
    let mut online = Alg1State::new(p.d());
    let mut fd = FlashDState::new(p.d(), WeightMode::Paper);
    let (mut counts, mut skips) = (StageCounts::default(), SkipStats::default());
    let mut worst: f64 = 0.0;
    println!("step        score   online weight     flashd weight");
    for (i, (k, v)) in p.keys.iter().zip(&p.values).enumerate() {
        let s = score(&p.queries[0], k, &a)?;
        online.step(&a, s, v, &mut counts);
        fd.step(&cfg, s, v, &mut counts, &mut skips);
        println!("{:4} {s:12.6} {:16.12} {:16.12}", i + 1, online.weight, fd.w);
        worst = worst.max((online.weight - fd.w).abs());
    }
    println!("largest weight difference: {worst:.2e}");
    Ok(worst)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
