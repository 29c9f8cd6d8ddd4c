//! How often FLASH-D can skip an output update on synthetic inputs, and
//! what it costs in accuracy.

use flashd::instrumentation::SYNTHETIC_SKIP_NOTE;
use flashd::{compare_outputs, generate, run_kernel, GenSpec, KernelConfig, KernelKind, SkipConfig};

pub fn run_example() -> Result<Vec<f64>, Box<dyn std::error::Error>> {
    let mut rates = Vec::new();
    println!("   N    d   skipped   low   high   max deviation");
    for &(n, d) in &[(64, 16), (256, 64), (1024, 64), (1024, 256)] {
        let p = generate(&GenSpec::gaussian(7, n, d, 8))?;
        let off = run_kernel(&p, &KernelConfig::new(KernelKind::FlashD))?;
        let on = run_kernel(&p, &KernelConfig::new(KernelKind::FlashD).with_skip(SkipConfig::on()))?;
        let dev = compare_outputs(&on.outputs, &off.outputs)?;
        let s = on.skips;
        println!(
            "{n:4} {d:4} {:8.2}% {:5} {:6} {:15.2e}",
            100.0 * s.skip_rate(),
            s.skipped_low,
            s.skipped_high,
            dev.max_abs
        );
        rates.push(s.skip_rate());
    }
    println!("note: {SYNTHETIC_SKIP_NOTE}");
    Ok(rates)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
