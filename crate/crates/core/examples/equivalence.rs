//! The four kernels produce the same attention output in FP64.
//!
//! Run with `cargo run --example equivalence`.

use flashd::{compare_outputs, generate, run_kernel, GenSpec, KernelConfig, KernelKind};

pub fn run_example() -> Result<f64, Box<dyn std::error::Error>> {
    let mut worst: f64 = 0.0;
    for (seed, &(n, d)) in [(1usize, 16usize), (64, 64), (512, 256)].iter().enumerate() {
        let p = generate(&GenSpec::gaussian(seed as u64, n, d, 4))?;
        let reference = run_kernel(&p, &KernelConfig::new(KernelKind::Reference))?;
        for kind in [KernelKind::Alg1, KernelKind::Alg2, KernelKind::FlashD] {
            let run = run_kernel(&p, &KernelConfig::new(kind))?;
            let err = compare_outputs(&run.outputs, &reference.outputs)?;
            println!("N={n:4} d={d:3} {kind:>9} vs reference: {:.2e}", err.max_norm_rel);
            worst = worst.max(err.max_norm_rel);
        }
    }
    println!("worst relative error: {worst:.2e}");
    Ok(worst)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
