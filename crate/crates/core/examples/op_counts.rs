//! Per-stage operation counts for each kernel on one problem.

use flashd::{generate, run_kernel, summarize_run, GenSpec, KernelConfig, KernelKind};

pub fn run_example() -> Result<Vec<(KernelKind, u64)>, Box<dyn std::error::Error>> {
    let (n, d) = (128, 64);
    let p = generate(&GenSpec::gaussian(0, n, d, 1))?;
    let mut divs = Vec::new();
    println!("kernel     out.mul  out.add  out.sub    div  max_cmp   exp  sigmoid   ln");
    for kind in KernelKind::ALL {
        let run = run_kernel(&p, &KernelConfig::new(kind))?;
        let s = summarize_run(&run.counts, &run.skips, n, d, 1);
        let (o, t) = (s.counts.output, s.total);
        println!(
            "{:9} {:8} {:8} {:8} {:6} {:8} {:5} {:8} {:4}",
            kind.name(),
            o.mul,
            o.add,
            o.sub,
            t.div,
            t.max_cmp,
            t.exp,
            t.sigmoid_eval,
            t.ln
        );
        divs.push((kind, t.div));
    }
    println!("per output update, flashd uses d mul + d add + d sub; alg2 uses 2d mul + d add");
    Ok(divs)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
