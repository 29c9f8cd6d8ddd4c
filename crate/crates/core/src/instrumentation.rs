//! Operation counters, skip tracking and error metrics.
//!
//! Counters are attributed at the semantic level: a length-`d` vector
//! multiply counts as `d` scalar multiplies, whatever the precision.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Scalar event tally for one kernel run (or one stage of it).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub mul: u64,
    pub add: u64,
    pub sub: u64,
    pub div: u64,
    pub exp: u64,
    pub ln: u64,
    pub sigmoid_eval: u64,
    pub max_cmp: u64,
    /// Elements read from key/value memory.
    pub vec_loads: u64,
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        self.mul += o.mul;
        self.add += o.add;
        self.sub += o.sub;
        self.div += o.div;
        self.exp += o.exp;
        self.ln += o.ln;
        self.sigmoid_eval += o.sigmoid_eval;
        self.max_cmp += o.max_cmp;
        self.vec_loads += o.vec_loads;
    }
}

impl Add for OpCounts {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

/// Counters split by where in the kernel the work happens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    /// Dot products and key loads.
    pub score: OpCounts,
    /// Running max / sum / weight bookkeeping.
    pub state: OpCounts,
    /// Output accumulation, value loads and final normalisation.
    pub output: OpCounts,
}

impl StageCounts {
    pub fn total(&self) -> OpCounts {
        self.score + self.state + self.output
    }
}

impl AddAssign for StageCounts {
    fn add_assign(&mut self, o: Self) {
        self.score += o.score;
        self.state += o.state;
        self.output += o.output;
    }
}

/// Output updates that the skip criterion short-circuited.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipStats {
    /// Steps eligible for skipping (every step after a query's first).
    pub total_steps: u64,
    pub skipped_low: u64,
    pub skipped_high: u64,
}

impl SkipStats {
    pub fn skipped(&self) -> u64 {
        self.skipped_low + self.skipped_high
    }

    pub fn skip_rate(&self) -> f64 {
        if self.total_steps == 0 {
            0.0
        } else {
            self.skipped() as f64 / self.total_steps as f64
        }
    }
}

impl AddAssign for SkipStats {
    fn add_assign(&mut self, o: Self) {
        self.total_steps += o.total_steps;
        self.skipped_low += o.skipped_low;
        self.skipped_high += o.skipped_high;
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompareError {
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryError {
    pub max_abs: f64,
    pub max_rel: f64,
    pub mean_rel: f64,
    /// `max|a - b| / max|b|` over the query's components.
    pub norm_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub max_abs: f64,
    /// Componentwise, with denominator `max(|b|, 1e-30)`.
    pub max_rel: f64,
    pub mean_rel: f64,
    /// Worst per-query normwise relative error.
    pub max_norm_rel: f64,
    /// Entries of `a` that are NaN or infinite.
    pub non_finite: usize,
    pub per_query: Vec<QueryError>,
}

const REL_FLOOR: f64 = 1e-30;

/// NaN-propagating max.
fn worst(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// Compares `a` against the baseline `b`, query by query.
pub fn compare_outputs(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<ErrorReport, CompareError> {
    if a.len() != b.len() {
        return Err(CompareError::Shape(format!(
            "{} queries vs {} queries",
            a.len(),
            b.len()
        )));
    }
    let mut per_query = Vec::with_capacity(a.len());
    let mut non_finite = 0;
    let (mut max_abs, mut max_rel, mut max_norm_rel) = (0.0f64, 0.0f64, 0.0f64);
    let (mut rel_sum, mut count) = (0.0, 0usize);
    for (qa, qb) in a.iter().zip(b) {
        if qa.len() != qb.len() {
            return Err(CompareError::Shape(format!(
                "vector length {} vs {}",
                qa.len(),
                qb.len()
            )));
        }
        let mut q = QueryError {
            max_abs: 0.0,
            max_rel: 0.0,
            mean_rel: 0.0,
            norm_rel: 0.0,
        };
        let mut q_rel_sum = 0.0;
        let mut b_norm = 0.0f64;
        for (&x, &y) in qa.iter().zip(qb) {
            if !x.is_finite() {
                non_finite += 1;
            }
            let abs = (x - y).abs();
            let rel = abs / y.abs().max(REL_FLOOR);
            q.max_abs = worst(q.max_abs, abs);
            q.max_rel = worst(q.max_rel, rel);
            q_rel_sum += rel;
            b_norm = b_norm.max(y.abs());
        }
        if !qa.is_empty() {
            q.mean_rel = q_rel_sum / qa.len() as f64;
        }
        q.norm_rel = q.max_abs / b_norm.max(REL_FLOOR);
        max_abs = worst(max_abs, q.max_abs);
        max_rel = worst(max_rel, q.max_rel);
        max_norm_rel = worst(max_norm_rel, q.norm_rel);
        rel_sum += q_rel_sum;
        count += qa.len();
        per_query.push(q);
    }
    Ok(ErrorReport {
        max_abs,
        max_rel,
        mean_rel: if count == 0 { 0.0 } else { rel_sum / count as f64 },
        max_norm_rel,
        non_finite,
        per_query,
    })
}

/// Op counts normalised per streamed key/value step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerStep {
    pub mul: f64,
    pub add: f64,
    pub sub: f64,
    pub div: f64,
    pub exp: f64,
    pub ln: f64,
    pub sigmoid_eval: f64,
    pub max_cmp: f64,
    pub vec_loads: f64,
}

impl PerStep {
    fn of(c: &OpCounts, steps: u64) -> Self {
        let s = steps.max(1) as f64;
        Self {
            mul: c.mul as f64 / s,
            add: c.add as f64 / s,
            sub: c.sub as f64 / s,
            div: c.div as f64 / s,
            exp: c.exp as f64 / s,
            ln: c.ln as f64 / s,
            sigmoid_eval: c.sigmoid_eval as f64 / s,
            max_cmp: c.max_cmp as f64 / s,
            vec_loads: c.vec_loads as f64 / s,
        }
    }
}

pub const SYNTHETIC_SKIP_NOTE: &str =
    "measured on synthetic inputs; not comparable to skip rates measured inside real language models";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n: usize,
    pub d: usize,
    pub queries: usize,
    pub counts: StageCounts,
    pub total: OpCounts,
    pub per_step: PerStep,
    pub output_per_step: PerStep,
    pub skip: SkipStats,
    pub skip_rate: f64,
    pub skip_rate_percent: f64,
    pub skip_note: &'static str,
    pub division_free: bool,
    pub max_free: bool,
}

/// Normalises a completed run's counters. Per-step figures divide by the
/// number of streamed steps (`N` per query).
pub fn summarize_run(
    counts: &StageCounts,
    skip: &SkipStats,
    n: usize,
    d: usize,
    queries: usize,
) -> RunSummary {
    let steps = (n * queries) as u64;
    let total = counts.total();
    RunSummary {
        n,
        d,
        queries,
        counts: *counts,
        total,
        per_step: PerStep::of(&total, steps),
        output_per_step: PerStep::of(&counts.output, steps),
        skip: *skip,
        skip_rate: skip.skip_rate(),
        skip_rate_percent: 100.0 * skip.skip_rate(),
        skip_note: SYNTHETIC_SKIP_NOTE,
        division_free: total.div == 0,
        max_free: total.max_cmp == 0,
    }
}

/// One sweep/run record with the stable CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub kernel: String,
    pub precision: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub d: usize,
    pub skip: String,
    pub mode: String,
    pub nonlinear: String,
    pub mul: Option<u64>,
    pub add: Option<u64>,
    pub sub: Option<u64>,
    pub div: Option<u64>,
    pub exp: Option<u64>,
    pub max_cmp: Option<u64>,
    pub vec_loads: Option<u64>,
    pub skipped_low: Option<u64>,
    pub skipped_high: Option<u64>,
    pub max_rel_err: Option<f64>,
    pub runtime_ns: Option<u128>,
    /// Empty unless the row failed.
    pub error: String,
}

pub const CSV_COLUMNS: [&str; 19] = [
    "kernel",
    "precision",
    "N",
    "d",
    "skip",
    "mode",
    "nonlinear",
    "mul",
    "add",
    "sub",
    "div",
    "exp",
    "max_cmp",
    "vec_loads",
    "skipped_low",
    "skipped_high",
    "max_rel_err",
    "runtime_ns",
    "error",
];

impl CsvRow {
    pub fn fill_counts(&mut self, c: &OpCounts, s: &SkipStats) {
        self.mul = Some(c.mul);
        self.add = Some(c.add);
        self.sub = Some(c.sub);
        self.div = Some(c.div);
        self.exp = Some(c.exp);
        self.max_cmp = Some(c.max_cmp);
        self.vec_loads = Some(c.vec_loads);
        self.skipped_low = Some(s.skipped_low);
        self.skipped_high = Some(s.skipped_high);
    }
}

pub fn write_csv<W: std::io::Write>(w: W, rows: &[CsvRow]) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wr.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
