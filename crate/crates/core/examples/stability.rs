//! Scores around 1e4: exponentiating them directly overflows, while
//! FLASH-D only ever sees score differences.

use flashd::kernels::naive_attention;
use flashd::{compare_outputs, generate, run_kernel, Distribution, GenSpec, KernelConfig, KernelKind, WeightMode};

pub fn run_example() -> Result<(usize, f64), Box<dyn std::error::Error>> {
    let p = generate(&GenSpec {
        seed: 3,
        n: 256,
        d: 32,
        n_queries: 4,
        distribution: Distribution::AdversarialLargeScores { scale: 1e4 },
    })?;
    let overflowed = (0..p.n_queries())
        .filter(|&qi| naive_attention(&p, qi).iter().any(|x| !x.is_finite()))
        .count();
    println!("naive softmax: {overflowed} of {} queries overflow", p.n_queries());

    let reference = run_kernel(&p, &KernelConfig::new(KernelKind::Reference))?;
    let fd = run_kernel(&p, &KernelConfig::new(KernelKind::FlashD).with_mode(WeightMode::Log))?;
    let err = compare_outputs(&fd.outputs, &reference.outputs)?;
    println!(
        "flashd (log mode): non-finite outputs {}, max relative error {:.2e}",
        err.non_finite, err.max_rel
    );
    Ok((overflowed, err.max_rel))
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
