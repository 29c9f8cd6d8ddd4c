//! Command-line harness: `gen`, `run`, `compare`, `fit-pwl`, `sweep`.
//!
//! JSON and CSV go to standard output, diagnostics to standard error.
//! Exit codes: 0 success, 1 tolerance failure, 2 usage, 3 I/O, 4 shape.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::instrumentation::{compare_outputs, summarize_run, write_csv, CsvRow, ErrorReport, RunSummary};
use crate::kernels::{
    run_kernel, AttnProblem, HighSkipTest, KernelConfig, KernelKind, KernelRun, Nonlinear, SkipConfig,
    WeightMode,
};
use crate::nonlinear::{self, FitObjective};
use crate::precision::{Arith, FloatFormat};
use crate::tensorio::{self, DType, Distribution, GenSpec, Tensor, TensorError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_TOLERANCE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_SHAPE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "flashd", version, about = "Streaming attention kernel laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate q.atn, k.atn and v.atn from a seeded distribution.
    Gen(GenArgs),
    /// Run one kernel and print its instrumentation record.
    Run(RunArgs),
    /// Compare two output tensors (the second is the baseline).
    Compare(CompareArgs),
    /// Fit a piecewise-linear table and print it as JSON.
    FitPwl(FitArgs),
    /// Run the kernels x precisions x dims x skip matrix and print CSV.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sequence length.
    #[arg(long)]
    pub n: Option<usize>,
    /// Hidden dimension.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub queries: usize,
    /// gaussian:MEAN,STD | uniform:LO,HI | adversarial:SCALE
    #[arg(long, default_value = "gaussian:0,1")]
    pub dist: Distribution,
}

impl GenFlags {
    fn spec(&self) -> Result<GenSpec, String> {
        match (self.seed, self.n, self.d) {
            (Some(seed), Some(n), Some(d)) => {
                if n == 0 || d == 0 {
                    return Err("--n and --d must be at least 1".into());
                }
                Ok(GenSpec {
                    seed,
                    n,
                    d,
                    n_queries: self.queries,
                    distribution: self.dist,
                })
            }
            _ => Err("--seed, --n and --d are all required".into()),
        }
    }

    fn any_set(&self) -> bool {
        self.seed.is_some() || self.n.is_some() || self.d.is_some()
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub gen: GenFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NonlinearArg {
    Exact,
    Pwl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SkipTestArg {
    Argument,
    Difference,
}

#[derive(Debug, Clone, Args)]
pub struct KernelFlags {
    #[arg(long, default_value = "fp64")]
    pub precision: FloatFormat,
    #[arg(long, value_enum, default_value = "off")]
    pub skip: OnOff,
    #[arg(long, default_value_t = -6.0, allow_hyphen_values = true)]
    pub skip_lo: f64,
    #[arg(long, default_value_t = 11.0, allow_hyphen_values = true)]
    pub skip_hi: f64,
    /// Quantity compared against --skip-hi.
    #[arg(long, value_enum, default_value = "argument")]
    pub skip_test: SkipTestArg,
    #[arg(long, value_enum, default_value = "exact")]
    pub nonlinear: NonlinearArg,
    #[arg(long, default_value = "paper")]
    pub mode: WeightMode,
    /// Accumulate dot products in FP64 and round once.
    #[arg(long)]
    pub wide_accumulate: bool,
}

impl KernelFlags {
    fn config(&self, kind: KernelKind, skip_on: bool) -> KernelConfig {
        KernelConfig::new(kind)
            .with_arith(Arith::new(self.precision).with_wide_accumulate(self.wide_accumulate))
            .with_skip(SkipConfig {
                enabled: skip_on,
                lo: self.skip_lo,
                hi: self.skip_hi,
                high_test: match self.skip_test {
                    SkipTestArg::Argument => HighSkipTest::Argument,
                    SkipTestArg::Difference => HighSkipTest::Difference,
                },
            })
            .with_nonlinear(match self.nonlinear {
                NonlinearArg::Exact => Nonlinear::Exact,
                NonlinearArg::Pwl => Nonlinear::standard_pwl(),
            })
            .with_mode(self.mode)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, default_value = "flashd")]
    pub kernel: KernelKind,
    /// Directory holding q.atn, k.atn and v.atn.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub gen: GenFlags,
    #[command(flatten)]
    pub kernel_flags: KernelFlags,
    /// Where to write the outputs tensor (fp64, queries x d).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    /// Baseline.
    pub b: PathBuf,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    /// Error measure checked against --tol.
    #[arg(long, value_enum, default_value = "normwise")]
    pub metric: Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Worst per-query `max|a - b| / max|b|`.
    Normwise,
    /// Worst per-element `|a - b| / max(|b|, 1e-30)`.
    Componentwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FunctionArg {
    Sigmoid,
    Ln,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub function: FunctionArg,
    #[arg(long, default_value_t = 8)]
    pub segments: usize,
    #[arg(long, default_value = "maxerr")]
    pub objective: FitObjective,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub queries: usize,
    #[arg(long, default_value = "gaussian:0,1")]
    pub dist: Distribution,
    #[arg(long, value_delimiter = ',', default_value = "reference,alg1,alg2,flashd")]
    pub kernels: Vec<KernelKind>,
    #[arg(long, value_delimiter = ',', default_value = "fp64,bf16,fp8e4m3")]
    pub precisions: Vec<FloatFormat>,
    #[arg(long, value_delimiter = ',', default_value = "16,64,256")]
    pub dims: Vec<usize>,
    /// Skip settings to sweep, e.g. `off,on`.
    #[arg(long = "skips", value_enum, value_delimiter = ',', default_value = "off")]
    pub skips: Vec<OnOff>,
    #[arg(long, value_enum, default_value = "exact")]
    pub nonlinear: NonlinearArg,
    #[arg(long, default_value = "paper")]
    pub mode: WeightMode,
    #[arg(long, value_enum, default_value = "argument")]
    pub skip_test: SkipTestArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failed command: exit code plus message for standard error.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

impl From<TensorError> for Failure {
    fn from(e: TensorError) -> Self {
        let code = match e {
            TensorError::Shape(_) => EXIT_SHAPE,
            _ => EXIT_IO,
        };
        Failure::new(code, e.to_string())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Run(a) => cmd_run(&a, out),
        Command::Compare(a) => cmd_compare(&a, out),
        Command::FitPwl(a) => cmd_fit_pwl(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn emit_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| Failure::new(EXIT_IO, e.to_string()))
}

pub fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let dir = a.out.as_ref().ok_or_else(|| Failure::usage("--out is required"))?;
    let spec = a.gen.spec().map_err(Failure::usage)?;
    let p = tensorio::generate(&spec).map_err(|e| Failure::usage(e.to_string()))?;
    tensorio::write_problem(dir, &p)?;
    emit_json(
        out,
        &serde_json::json!({
            "out": dir,
            "files": ["q.atn", "k.atn", "v.atn"],
            "seed": spec.seed,
            "n": spec.n,
            "d": spec.d,
            "queries": spec.n_queries,
        }),
    )?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct RunReport {
    kernel: KernelKind,
    precision: FloatFormat,
    skip: bool,
    skip_lo: f64,
    skip_hi: f64,
    mode: &'static str,
    nonlinear: &'static str,
    wide_accumulate: bool,
    summary: RunSummary,
    has_nan: bool,
    non_finite: usize,
    /// Error of this run against the FP64 safe-softmax reference.
    vs_reference: ErrorReport,
    runtime_ns: u128,
    repetitions: usize,
}

fn load_problem(a: &RunArgs) -> Result<AttnProblem, Failure> {
    match (&a.input, a.gen.any_set()) {
        (Some(_), true) => Err(Failure::usage(
            "give either --input or generator flags (--seed/--n/--d), not both",
        )),
        (None, false) => Err(Failure::usage("an input is required: --input DIR or --seed/--n/--d")),
        (Some(dir), false) => Ok(tensorio::read_problem(dir).map_err(|e| match e {
            TensorError::Shape(m) => Failure::new(EXIT_SHAPE, m),
            other => Failure::new(EXIT_IO, format!("{}: {other}", dir.display())),
        })?),
        (None, true) => {
            let spec = a.gen.spec().map_err(Failure::usage)?;
            tensorio::generate(&spec).map_err(|e| Failure::usage(e.to_string()))
        }
    }
}

fn timed_run(p: &AttnProblem, cfg: &KernelConfig, reps: usize) -> Result<(KernelRun, u128), Failure> {
    let mut best = u128::MAX;
    let mut last = None;
    for _ in 0..reps.max(1) {
        let t0 = Instant::now();
        let r = run_kernel(p, cfg).map_err(|e| Failure::usage(e.to_string()))?;
        best = best.min(t0.elapsed().as_nanos());
        last = Some(r);
    }
    Ok((last.expect("at least one repetition"), best))
}

pub fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let p = load_problem(a)?;
    let f = &a.kernel_flags;
    let cfg = f.config(a.kernel, f.skip == OnOff::On);
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let (run, runtime_ns) = timed_run(&p, &cfg, a.repetitions)?;
    let reference = run_kernel(&p, &KernelConfig::new(KernelKind::Reference))
        .map_err(|e| Failure::usage(e.to_string()))?;
    let vs_reference =
        compare_outputs(&run.outputs, &reference.outputs).map_err(|e| Failure::new(EXIT_SHAPE, e.to_string()))?;

    if let Some(path) = &a.out {
        let t = Tensor::from_rows(&run.outputs, DType::F64)?;
        tensorio::write_tensor(path, &t)?;
    }
    let report = RunReport {
        kernel: a.kernel,
        precision: f.precision,
        skip: cfg.skip.enabled,
        skip_lo: cfg.skip.lo,
        skip_hi: cfg.skip.hi,
        mode: cfg.mode.name(),
        nonlinear: cfg.nonlinear.name(),
        wide_accumulate: f.wide_accumulate,
        summary: summarize_run(&run.counts, &run.skips, p.n(), p.d(), p.n_queries()),
        has_nan: run.outputs.iter().flatten().any(|x| x.is_nan()),
        non_finite: vs_reference.non_finite,
        vs_reference,
        runtime_ns,
        repetitions: a.repetitions.max(1),
    };
    emit_json(out, &report)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct CompareReport<'a> {
    #[serde(flatten)]
    report: &'a ErrorReport,
    metric: Metric,
    tol: f64,
    pass: bool,
}

pub fn cmd_compare(a: &CompareArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let read = |p: &PathBuf| -> Result<Vec<Vec<f64>>, Failure> {
        let t = tensorio::read_tensor(p).map_err(|e| match e {
            TensorError::Shape(m) => Failure::new(EXIT_SHAPE, m),
            other => Failure::new(EXIT_IO, format!("{}: {other}", p.display())),
        })?;
        if t.dims.len() != 2 {
            return Err(Failure::new(EXIT_SHAPE, format!("{}: expected a rank-2 tensor", p.display())));
        }
        Ok(t.to_rows()?)
    };
    let (ta, tb) = (read(&a.a)?, read(&a.b)?);
    let report = compare_outputs(&ta, &tb).map_err(|e| Failure::new(EXIT_SHAPE, e.to_string()))?;
    let measured = match a.metric {
        Metric::Normwise => report.max_norm_rel,
        Metric::Componentwise => report.max_rel,
    };
    let pass = measured <= a.tol;
    emit_json(
        out,
        &CompareReport {
            report: &report,
            metric: a.metric,
            tol: a.tol,
            pass,
        },
    )?;
    Ok(if pass { EXIT_OK } else { EXIT_TOLERANCE })
}

pub fn cmd_fit_pwl(a: &FitArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    if a.segments == 0 {
        return Err(Failure::usage("--segments must be at least 1"));
    }
    let table = match a.function {
        FunctionArg::Sigmoid => nonlinear::sigmoid_table(a.segments, a.objective),
        FunctionArg::Ln => nonlinear::ln_table(a.segments, a.objective),
    }
    .map_err(|e| Failure::usage(e.to_string()))?;
    if let Some(path) = &a.out {
        let text = serde_json::to_string_pretty(&table).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    }
    emit_json(out, &table)?;
    Ok(EXIT_OK)
}

/// One cell of the sweep matrix, in output order.
#[derive(Debug, Clone, Copy)]
struct Cell {
    kind: KernelKind,
    precision: FloatFormat,
    d: usize,
    skip: OnOff,
}

/// Builds the sweep's CSV rows. Rows run in parallel but come back in
/// kernel x precision x dim x skip order; failures are recorded in the
/// row's `error` column.
pub fn sweep_rows(a: &SweepArgs) -> Result<Vec<CsvRow>, Failure> {
    if a.n == 0 || a.dims.contains(&0) {
        return Err(Failure::usage("--n and every dim must be at least 1"));
    }
    let problems: Vec<(usize, AttnProblem, Vec<Vec<f64>>)> = a
        .dims
        .iter()
        .map(|&d| {
            let p = tensorio::generate(&GenSpec {
                seed: a.seed,
                n: a.n,
                d,
                n_queries: a.queries,
                distribution: a.dist,
            })
            .map_err(|e| Failure::usage(e.to_string()))?;
            let reference = run_kernel(&p, &KernelConfig::new(KernelKind::Reference))
                .map_err(|e| Failure::usage(e.to_string()))?
                .outputs;
            Ok((d, p, reference))
        })
        .collect::<Result<_, Failure>>()?;

    let mut cells = Vec::new();
    for &kind in &a.kernels {
        for &precision in &a.precisions {
            for &d in &a.dims {
                for &skip in &a.skips {
                    cells.push(Cell {
                        kind,
                        precision,
                        d,
                        skip,
                    });
                }
            }
        }
    }
    let flags = KernelFlags {
        precision: FloatFormat::Fp64,
        skip: OnOff::Off,
        skip_lo: -6.0,
        skip_hi: 11.0,
        skip_test: a.skip_test,
        nonlinear: a.nonlinear,
        mode: a.mode,
        wide_accumulate: false,
    };
    let rows = cells
        .par_iter()
        .map(|c| {
            let (_, p, reference) = problems.iter().find(|(d, _, _)| *d == c.d).expect("dim generated");
            let cfg = KernelFlags {
                precision: c.precision,
                ..flags.clone()
            }
            .config(c.kind, c.skip == OnOff::On);
            let mut row = CsvRow {
                kernel: c.kind.name().into(),
                precision: c.precision.name().into(),
                n: p.n(),
                d: c.d,
                skip: if c.skip == OnOff::On { "on" } else { "off" }.into(),
                mode: cfg.mode.name().into(),
                nonlinear: cfg.nonlinear.name().into(),
                mul: None,
                add: None,
                sub: None,
                div: None,
                exp: None,
                max_cmp: None,
                vec_loads: None,
                skipped_low: None,
                skipped_high: None,
                max_rel_err: None,
                runtime_ns: None,
                error: String::new(),
            };
            let t0 = Instant::now();
            match run_kernel(p, &cfg) {
                Ok(run) => {
                    row.runtime_ns = Some(t0.elapsed().as_nanos());
                    row.fill_counts(&run.counts.total(), &run.skips);
                    match compare_outputs(&run.outputs, reference) {
                        Ok(r) => row.max_rel_err = Some(r.max_norm_rel),
                        Err(e) => row.error = e.to_string(),
                    }
                }
                Err(e) => row.error = e.to_string(),
            }
            row
        })
        .collect();
    Ok(rows)
}

pub fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let rows = sweep_rows(a)?;
    for r in rows.iter().filter(|r| !r.error.is_empty()) {
        eprintln!("row {} {} d={} skip={} failed: {}", r.kernel, r.precision, r.d, r.skip, r.error);
    }
    match &a.out {
        Some(path) => {
            let f = std::fs::File::create(path).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
            write_csv(f, &rows).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
        }
        None => write_csv(&mut *out, &rows).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?,
    }
    Ok(EXIT_OK)
}
