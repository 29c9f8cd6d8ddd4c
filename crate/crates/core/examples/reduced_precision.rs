//! FLASH-D under emulated BF16 and FP8-E4M3, with exact and
//! piecewise-linear nonlinearities.

use flashd::{
    compare_outputs, generate, run_kernel, Arith, FloatFormat, GenSpec, KernelConfig, KernelKind, Nonlinear,
};

pub fn run_example() -> Result<Vec<(String, f64)>, Box<dyn std::error::Error>> {
    let p = generate(&GenSpec::gaussian(21, 128, 64, 8))?;
    let reference = run_kernel(&p, &KernelConfig::new(KernelKind::Reference))?;
    let mut out = Vec::new();
    println!("precision  wide-acc  nonlinear   error vs fp64 reference");
    for fmt in FloatFormat::ALL {
        for wide in [false, true] {
            if fmt == FloatFormat::Fp64 && wide {
                continue;
            }
            for nl in [Nonlinear::Exact, Nonlinear::standard_pwl()] {
                let name = nl.name();
                let cfg = KernelConfig::new(KernelKind::FlashD)
                    .with_arith(Arith::new(fmt).with_wide_accumulate(wide))
                    .with_nonlinear(nl);
                let run = run_kernel(&p, &cfg)?;
                let err = compare_outputs(&run.outputs, &reference.outputs)?;
                println!("{:9} {wide:9} {name:9} {:12.3e}", fmt.name(), err.max_norm_rel);
                out.push((format!("{fmt}/{wide}/{name}"), err.max_norm_rel));
            }
        }
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
