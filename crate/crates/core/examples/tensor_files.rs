//! Writes a generated problem to ATN1 files, reads it back, and stores an
//! output tensor at reduced precision.

use flashd::tensorio::{read_problem, read_tensor, write_problem, write_tensor, DType, Tensor};
use flashd::{generate, run_kernel, GenSpec, KernelConfig, KernelKind};

pub fn run_example() -> Result<usize, Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("flashd-example-{}", std::process::id()));
    let p = generate(&GenSpec::gaussian(5, 32, 16, 2))?;
    write_problem(&dir, &p)?;
    let back = read_problem(&dir)?;
    assert_eq!(back, p);

    let run = run_kernel(&back, &KernelConfig::new(KernelKind::FlashD))?;
    let mut bytes = 0;
    for dtype in [DType::F64, DType::Bf16, DType::Fp8E4M3] {
        let path = dir.join(format!("out-{dtype:?}.atn").to_lowercase());
        write_tensor(&path, &Tensor::from_rows(&run.outputs, dtype)?)?;
        let t = read_tensor(&path)?;
        let len = std::fs::metadata(&path)?.len();
        println!("{:?}: dims {:?}, {len} bytes, first value {:.6}", t.dtype(), t.dims, t.to_f64()[0]);
        bytes += len as usize;
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(bytes)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
