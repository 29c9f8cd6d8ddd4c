//! Streaming single-head attention kernels and the tooling to compare them.
//!
//! The crate implements four formulations of the same attention function
//! (safe softmax, online softmax with per-step division, online softmax with
//! a deferred division, and a division-free sigmoid-weight recursion), runs
//! them in FP64 or in emulated BF16 / FP8-E4M3, and counts the scalar work
//! each one performs.
//!
//! Start with [`kernels::run_kernel`]; the `examples/` directory has one
//! runnable program per capability.

pub mod cli;
pub mod instrumentation;
pub mod kernels;
pub mod nonlinear;
pub mod precision;
pub mod tensorio;

pub use instrumentation::{compare_outputs, summarize_run, ErrorReport, OpCounts, SkipStats, StageCounts};
pub use kernels::{
    run_kernel, AttnProblem, FlashDState, HighSkipTest, KernelConfig, KernelKind, KernelRun, Nonlinear,
    SkipConfig, WeightMode,
};
pub use nonlinear::{fit_pwl, PwlTable, PwlTables};
pub use precision::{round_to_format, Arith, EmulatedScalar, FloatFormat};
pub use tensorio::{generate, Distribution, GenSpec};
