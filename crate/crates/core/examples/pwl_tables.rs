//! Fits piecewise-linear sigmoid and ln tables and reports their error.

use flashd::nonlinear::{ln_table, sigmoid_table, FitObjective};

pub fn run_example() -> Result<Vec<(usize, f64, f64)>, Box<dyn std::error::Error>> {
    let mut rows = Vec::new();
    println!("segments   sigmoid err        ln err");
    for n in [4, 8, 16] {
        let s = sigmoid_table(n, FitObjective::MaxErr)?;
        let l = ln_table(n, FitObjective::MaxErr)?;
        println!("{n:8} {:13.6e} {:13.6e}", s.max_abs_error, l.max_abs_error);
        rows.push((n, s.max_abs_error, l.max_abs_error));
    }
    let s8 = sigmoid_table(8, FitObjective::MaxErr)?;
    println!("\n8-segment sigmoid table:\n{}", serde_json::to_string_pretty(&s8)?);
    Ok(rows)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
