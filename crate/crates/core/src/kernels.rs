//! Single-head attention as streaming per-query state machines.
//!
//! Four formulations compute the same function:
//!
//! * [`reference_attention`]: all scores, safe softmax, weighted sum.
//! * [`Alg1State`]: online softmax with a running max `m` and running sum `l`,
//!   normalising the output at every step.
//! * [`Alg2State`]: the same recursion with the division deferred to a single
//!   vector division in [`Alg2State::finalize`].
//! * [`FlashDState`]: no running max, no running sum, no division. The output
//!   is a convex blend `o += (v - o) * w` whose weight follows
//!   `w_i = sigmoid(s_i - s_{i-1} + ln w_{i-1})`, starting from `w_1 = 1`.
//!
//! Every arithmetic result is rounded through an [`Arith`] context so the
//! same code runs in FP64, BF16 or FP8-E4M3.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::instrumentation::{SkipStats, StageCounts};
use crate::nonlinear::{self, PwlTables, LN_TABLE_LO};
use crate::precision::Arith;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("finalize called before any step")]
    NotStarted,
}

/// One set of queries against a shared key/value sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnProblem {
    d: usize,
    pub queries: Vec<Vec<f64>>,
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl AttnProblem {
    pub fn new(
        queries: Vec<Vec<f64>>,
        keys: Vec<Vec<f64>>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self, KernelError> {
        if keys.is_empty() {
            return Err(KernelError::Shape("at least one key/value pair is required".into()));
        }
        if keys.len() != values.len() {
            return Err(KernelError::Shape(format!(
                "{} keys but {} values",
                keys.len(),
                values.len()
            )));
        }
        let d = keys[0].len();
        if d == 0 {
            return Err(KernelError::Shape("hidden dimension must be at least 1".into()));
        }
        let bad = queries
            .iter()
            .chain(&keys)
            .chain(&values)
            .find(|v| v.len() != d);
        if let Some(v) = bad {
            return Err(KernelError::Shape(format!(
                "vector of length {} in a problem with d = {d}",
                v.len()
            )));
        }
        Ok(Self {
            d,
            queries,
            keys,
            values,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Sequence length.
    pub fn n(&self) -> usize {
        self.keys.len()
    }

    pub fn n_queries(&self) -> usize {
        self.queries.len()
    }

    /// Copy with every element rounded to `arith`'s format.
    pub fn quantized(&self, arith: &Arith) -> Self {
        let q = |vs: &[Vec<f64>]| vs.iter().map(|v| arith.quantize(v)).collect();
        Self {
            d: self.d,
            queries: q(&self.queries),
            keys: q(&self.keys),
            values: q(&self.values),
        }
    }

    /// Keeps the first `n` key/value pairs.
    pub fn prefix(&self, n: usize) -> Self {
        Self {
            d: self.d,
            queries: self.queries.clone(),
            keys: self.keys[..n].to_vec(),
            values: self.values[..n].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Reference,
    Alg1,
    Alg2,
    FlashD,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::Reference,
        KernelKind::Alg1,
        KernelKind::Alg2,
        KernelKind::FlashD,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Reference => "reference",
            KernelKind::Alg1 => "alg1",
            KernelKind::Alg2 => "alg2",
            KernelKind::FlashD => "flashd",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "reference" => Ok(KernelKind::Reference),
            "alg1" => Ok(KernelKind::Alg1),
            "alg2" => Ok(KernelKind::Alg2),
            "flashd" => Ok(KernelKind::FlashD),
            _ => Err(format!("unknown kernel '{s}'")),
        }
    }
}

/// How FLASH-D obtains `ln w` for the next step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// `w = sigmoid(z)`, then `ln w` from the stored weight.
    #[default]
    Paper,
    /// `ln w = log_sigmoid(z)` directly, then `w = exp(ln w)`. Never loses
    /// `ln w` to underflow of `w`.
    Log,
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::Paper => "paper",
            WeightMode::Log => "log",
        }
    }
}

impl FromStr for WeightMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(WeightMode::Paper),
            "log" | "log_domain" => Ok(WeightMode::Log),
            _ => Err(format!("unknown mode '{s}'")),
        }
    }
}

/// Which quantity the high-side skip test compares against `hi`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HighSkipTest {
    /// The full sigmoid argument `s_i - s_{i-1} + ln w_{i-1}`.
    #[default]
    Argument,
    /// The raw score difference `s_i - s_{i-1}`.
    Difference,
}

/// Static saturation window on the score difference `s_i - s_{i-1}`.
///
/// Below `lo` the step's weight is negligible: the output is left untouched,
/// the value vector is never loaded, and `ln w` advances by the difference
/// (the log-sigmoid asymptote) so later steps still see the right running
/// sum. Above `hi` (see [`HighSkipTest`]) the weight is taken as 1 and the
/// output becomes a copy of the value vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipConfig {
    pub enabled: bool,
    pub lo: f64,
    pub hi: f64,
    pub high_test: HighSkipTest,
}

impl Default for SkipConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            lo: -6.0,
            hi: 11.0,
            high_test: HighSkipTest::default(),
        }
    }
}

impl SkipConfig {
    pub fn on() -> Self {
        Self {
            enabled: true,
            ..Self::default()
        }
    }

    pub fn off() -> Self {
        Self::default()
    }
}

/// Source of sigmoid / ln values inside FLASH-D.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Nonlinear {
    #[default]
    Exact,
    Pwl(Arc<PwlTables>),
}

impl Nonlinear {
    /// The process-wide 8-segment tables.
    pub fn standard_pwl() -> Self {
        Nonlinear::Pwl(Arc::new(PwlTables::standard().clone()))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Nonlinear::Exact => "exact",
            Nonlinear::Pwl(_) => "pwl",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub arith: Arith,
    pub skip: SkipConfig,
    pub nonlinear: Nonlinear,
    pub mode: WeightMode,
}

impl KernelConfig {
    pub fn new(kind: KernelKind) -> Self {
        Self {
            kind,
            arith: Arith::default(),
            skip: SkipConfig::off(),
            nonlinear: Nonlinear::Exact,
            mode: WeightMode::Paper,
        }
    }

    pub fn with_arith(mut self, arith: Arith) -> Self {
        self.arith = arith;
        self
    }

    pub fn with_skip(mut self, skip: SkipConfig) -> Self {
        self.skip = skip;
        self
    }

    pub fn with_nonlinear(mut self, nonlinear: Nonlinear) -> Self {
        self.nonlinear = nonlinear;
        self
    }

    pub fn with_mode(mut self, mode: WeightMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if !(self.skip.lo < self.skip.hi) {
            return Err(KernelError::Config(format!(
                "skip window needs lo < hi, got [{}, {}]",
                self.skip.lo, self.skip.hi
            )));
        }
        if self.mode == WeightMode::Log && matches!(self.nonlinear, Nonlinear::Pwl(_)) {
            return Err(KernelError::Config(
                "log mode evaluates log-sigmoid exactly and has no PWL table".into(),
            ));
        }
        Ok(())
    }

    /// Smallest weight FLASH-D stores: the format's smallest positive value,
    /// raised to the ln table's lower bound when tables are in use.
    pub fn weight_floor(&self) -> f64 {
        let fmt_min = self.arith.format.min_positive();
        match &self.nonlinear {
            Nonlinear::Exact => fmt_min,
            Nonlinear::Pwl(t) => fmt_min.max(t.ln.domain_lo()).max(LN_TABLE_LO),
        }
    }
}

/// `dot(q, k)` under the context's rounding and accumulation rules.
pub fn score(q: &[f64], k: &[f64], arith: &Arith) -> Result<f64, KernelError> {
    if q.len() != k.len() {
        return Err(KernelError::Shape(format!(
            "query length {} vs key length {}",
            q.len(),
            k.len()
        )));
    }
    Ok(arith.dot(q, k))
}

fn counted_score(q: &[f64], k: &[f64], arith: &Arith, counts: &mut StageCounts) -> f64 {
    let d = q.len() as u64;
    counts.score.mul += d;
    counts.score.add += d - 1;
    counts.score.vec_loads += d;
    arith.dot(q, k)
}

/// Safe-softmax attention for one query: the ground truth the streaming
/// kernels are checked against.
pub fn reference_attention(p: &AttnProblem, query_index: usize, arith: &Arith) -> Vec<f64> {
    let mut counts = StageCounts::default();
    reference_counted(p, query_index, arith, &mut counts)
}

fn reference_counted(
    p: &AttnProblem,
    qi: usize,
    a: &Arith,
    counts: &mut StageCounts,
) -> Vec<f64> {
    let q = &p.queries[qi];
    let n = p.n() as u64;
    let d = p.d();
    let scores: Vec<f64> = p
        .keys
        .iter()
        .map(|k| counted_score(q, k, a, counts))
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    counts.state.max_cmp += n - 1;
    let exps: Vec<f64> = scores.iter().map(|&s| a.exp(a.sub(s, max))).collect();
    counts.state.sub += n;
    counts.state.exp += n;
    let sum = exps[1..].iter().fold(exps[0], |acc, &e| a.add(acc, e));
    counts.state.add += n - 1;
    counts.state.div += n;

    let mut out = vec![0.0; d];
    for (i, (e, v)) in exps.iter().zip(&p.values).enumerate() {
        let f = a.div(*e, sum);
        for (o, x) in out.iter_mut().zip(v) {
            let t = a.mul(f, *x);
            *o = if i == 0 { t } else { a.add(*o, t) };
        }
    }
    counts.output.mul += n * d as u64;
    counts.output.add += (n - 1) * d as u64;
    counts.output.vec_loads += n * d as u64;
    out
}

/// Softmax without max subtraction, in plain `f64`. Overflows once any
/// score exceeds ~709; kept as the counterexample for stability tests.
pub fn naive_attention(p: &AttnProblem, query_index: usize) -> Vec<f64> {
    let q = &p.queries[query_index];
    let exps: Vec<f64> = p
        .keys
        .iter()
        .map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>().exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    let mut out = vec![0.0; p.d()];
    for (e, v) in exps.iter().zip(&p.values) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += e / sum * x;
        }
    }
    out
}

/// Online-softmax state with per-step normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Alg1State {
    pub m: f64,
    pub l: f64,
    pub o: Vec<f64>,
    pub steps: usize,
    /// `e^{s_i - m_i} / l_i` of the latest step.
    pub weight: f64,
}

impl Alg1State {
    pub fn new(d: usize) -> Self {
        Self {
            m: f64::NEG_INFINITY,
            l: 0.0,
            o: vec![0.0; d],
            steps: 0,
            weight: 0.0,
        }
    }

    pub fn step(&mut self, a: &Arith, s: f64, v: &[f64], counts: &mut StageCounts) {
        let d = v.len() as u64;
        counts.output.vec_loads += d;
        if self.steps == 0 {
            self.m = s;
            self.l = 1.0;
            self.o.copy_from_slice(v);
            self.weight = 1.0;
            self.steps = 1;
            return;
        }
        let m_new = self.m.max(s);
        let alpha = a.exp(a.sub(self.m, m_new));
        let beta = a.exp(a.sub(s, m_new));
        let carried = a.mul(self.l, alpha);
        let l_new = a.add(carried, beta);
        let c_old = a.div(carried, l_new);
        let c_new = a.div(beta, l_new);
        counts.state.max_cmp += 1;
        counts.state.sub += 2;
        counts.state.exp += 2;
        counts.state.mul += 1;
        counts.state.add += 1;
        counts.state.div += 2;

        for (o, x) in self.o.iter_mut().zip(v) {
            *o = a.add(a.mul(*o, c_old), a.mul(*x, c_new));
        }
        counts.output.mul += 2 * d;
        counts.output.add += d;

        self.m = m_new;
        self.l = l_new;
        self.weight = c_new;
        self.steps += 1;
    }

    pub fn output(&self) -> &[f64] {
        &self.o
    }
}

/// Online-softmax state with the division deferred to [`Alg2State::finalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Alg2State {
    pub m: f64,
    pub l: f64,
    pub o: Vec<f64>,
    pub steps: usize,
}

impl Alg2State {
    pub fn new(d: usize) -> Self {
        Self {
            m: f64::NEG_INFINITY,
            l: 0.0,
            o: vec![0.0; d],
            steps: 0,
        }
    }

    pub fn step(&mut self, a: &Arith, s: f64, v: &[f64], counts: &mut StageCounts) {
        let d = v.len() as u64;
        counts.output.vec_loads += d;
        if self.steps == 0 {
            self.m = s;
            self.l = 1.0;
            self.o.copy_from_slice(v);
            self.steps = 1;
            return;
        }
        let m_new = self.m.max(s);
        let alpha = a.exp(a.sub(self.m, m_new));
        let beta = a.exp(a.sub(s, m_new));
        self.l = a.add(a.mul(self.l, alpha), beta);
        counts.state.max_cmp += 1;
        counts.state.sub += 2;
        counts.state.exp += 2;
        counts.state.mul += 1;
        counts.state.add += 1;

        for (o, x) in self.o.iter_mut().zip(v) {
            *o = a.add(a.mul(*o, alpha), a.mul(*x, beta));
        }
        counts.output.mul += 2 * d;
        counts.output.add += d;

        self.m = m_new;
        self.steps += 1;
    }

    /// The single vector division `o / l`.
    pub fn finalize(&self, a: &Arith, counts: &mut StageCounts) -> Result<Vec<f64>, KernelError> {
        if self.steps == 0 {
            return Err(KernelError::NotStarted);
        }
        counts.output.div += self.o.len() as u64;
        Ok(self.o.iter().map(|&x| a.div(x, self.l)).collect())
    }
}

/// What a FLASH-D step did with the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// First step: `w = 1`, `o = v`.
    First,
    Updated,
    /// Weight negligible: output untouched, value vector not loaded.
    SkippedLow,
    /// Weight saturated at 1: output replaced by the value vector.
    SkippedHigh,
}

/// FLASH-D per-query state.
#[derive(Debug, Clone, PartialEq)]
pub struct FlashDState {
    pub s_prev: f64,
    /// Weight applied at the latest step, in `(0, 1]`.
    pub w: f64,
    /// `ln w` driving the next step's recursion.
    pub lnw: f64,
    pub o: Vec<f64>,
    pub steps: usize,
    pub mode: WeightMode,
    /// Set when `w` was forced to the floor rather than derived from `lnw`.
    pub w_forced: bool,
}

impl FlashDState {
    pub fn new(d: usize, mode: WeightMode) -> Self {
        Self {
            s_prev: 0.0,
            w: 1.0,
            lnw: 0.0,
            o: vec![0.0; d],
            steps: 0,
            mode,
            w_forced: false,
        }
    }

    pub fn step(
        &mut self,
        cfg: &KernelConfig,
        s: f64,
        v: &[f64],
        counts: &mut StageCounts,
        skips: &mut SkipStats,
    ) -> StepOutcome {
        let a = &cfg.arith;
        let d = v.len() as u64;
        if self.steps == 0 {
            self.s_prev = s;
            self.w = 1.0;
            self.lnw = 0.0;
            self.w_forced = false;
            self.o.copy_from_slice(v);
            self.steps = 1;
            counts.output.vec_loads += d;
            return StepOutcome::First;
        }
        self.steps += 1;
        skips.total_steps += 1;
        let floor = cfg.weight_floor();

        let diff = a.sub(s, self.s_prev);
        counts.state.sub += 1;
        self.s_prev = s;

        let skip = &cfg.skip;
        if skip.enabled && diff < skip.lo {
            // drop this token from the running sum: ln w_i ~ diff + ln w_{i-1}
            self.lnw = a.add(diff, self.lnw);
            counts.state.add += 1;
            self.w = floor;
            self.w_forced = true;
            skips.skipped_low += 1;
            return StepOutcome::SkippedLow;
        }
        if skip.enabled && skip.high_test == HighSkipTest::Difference && diff > skip.hi {
            return self.take_value(v, counts, skips);
        }

        let z = a.add(diff, self.lnw);
        counts.state.add += 1;
        if skip.enabled && skip.high_test == HighSkipTest::Argument && z > skip.hi {
            return self.take_value(v, counts, skips);
        }

        self.w_forced = false;
        match (&cfg.nonlinear, self.mode) {
            (Nonlinear::Exact, WeightMode::Paper) => {
                self.w = a.round(nonlinear::sigmoid(z)).max(floor);
                self.lnw = a.round(self.w.ln());
                counts.state.sigmoid_eval += 1;
                counts.state.ln += 1;
            }
            (Nonlinear::Exact, WeightMode::Log) => {
                self.lnw = a.round(nonlinear::log_sigmoid(z));
                self.w = a.exp(self.lnw).max(floor);
                counts.state.sigmoid_eval += 1;
                counts.state.exp += 1;
            }
            (Nonlinear::Pwl(t), _) => {
                let (sig, ln) = (&t.sigmoid, &t.ln);
                if z < sig.domain_lo() {
                    // below the table the sigmoid is ~e^z, so ln w ~ z
                    self.w = floor;
                    self.w_forced = true;
                    self.lnw = z;
                } else if z > sig.domain_hi() {
                    self.w = 1.0;
                    self.lnw = 0.0;
                } else {
                    let w = sig.eval_in(z, a).expect("argument checked against domain");
                    self.w = w.clamp(floor, 1.0);
                    self.lnw = ln
                        .eval_in(self.w, a)
                        .expect("weight floored into the ln domain")
                        .min(0.0);
                }
                counts.state.sigmoid_eval += 1;
                counts.state.ln += 1;
            }
        }

        let w = self.w;
        for (o, x) in self.o.iter_mut().zip(v) {
            *o = a.add(*o, a.mul(a.sub(*x, *o), w));
        }
        counts.output.sub += d;
        counts.output.mul += d;
        counts.output.add += d;
        counts.output.vec_loads += d;
        StepOutcome::Updated
    }

    fn take_value(&mut self, v: &[f64], counts: &mut StageCounts, skips: &mut SkipStats) -> StepOutcome {
        self.w = 1.0;
        self.lnw = 0.0;
        self.w_forced = false;
        self.o.copy_from_slice(v);
        counts.output.vec_loads += v.len() as u64;
        skips.skipped_high += 1;
        StepOutcome::SkippedHigh
    }

    pub fn output(&self) -> &[f64] {
        &self.o
    }
}

/// Outputs and instrumentation of one kernel over every query.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRun {
    pub outputs: Vec<Vec<f64>>,
    pub counts: StageCounts,
    pub skips: SkipStats,
}

impl KernelRun {
    pub fn has_non_finite(&self) -> bool {
        self.outputs.iter().flatten().any(|x| !x.is_finite())
    }
}

fn run_query(
    p: &AttnProblem,
    qi: usize,
    cfg: &KernelConfig,
) -> Result<(Vec<f64>, StageCounts, SkipStats), KernelError> {
    let a = &cfg.arith;
    let mut counts = StageCounts::default();
    let mut skips = SkipStats::default();
    let q = &p.queries[qi];
    let out = match cfg.kind {
        KernelKind::Reference => reference_counted(p, qi, a, &mut counts),
        KernelKind::Alg1 => {
            let mut st = Alg1State::new(p.d());
            for (k, v) in p.keys.iter().zip(&p.values) {
                let s = counted_score(q, k, a, &mut counts);
                st.step(a, s, v, &mut counts);
            }
            st.o
        }
        KernelKind::Alg2 => {
            let mut st = Alg2State::new(p.d());
            for (k, v) in p.keys.iter().zip(&p.values) {
                let s = counted_score(q, k, a, &mut counts);
                st.step(a, s, v, &mut counts);
            }
            st.finalize(a, &mut counts)?
        }
        KernelKind::FlashD => {
            let mut st = FlashDState::new(p.d(), cfg.mode);
            for (k, v) in p.keys.iter().zip(&p.values) {
                let s = counted_score(q, k, a, &mut counts);
                st.step(cfg, s, v, &mut counts, &mut skips);
            }
            st.o
        }
    };
    Ok((out, counts, skips))
}

/// Runs `cfg.kind` over every query of `p`. Inputs are first rounded to the
/// configured format. Queries are independent and processed in parallel;
/// each query streams its keys and values once, in order.
pub fn run_kernel(p: &AttnProblem, cfg: &KernelConfig) -> Result<KernelRun, KernelError> {
    cfg.validate()?;
    let quantized;
    let p = if cfg.arith.format == crate::precision::FloatFormat::Fp64 {
        p
    } else {
        quantized = p.quantized(&cfg.arith);
        &quantized
    };
    let per_query: Vec<_> = (0..p.n_queries())
        .into_par_iter()
        .map(|qi| run_query(p, qi, cfg))
        .collect::<Result<_, _>>()?;

    let mut run = KernelRun {
        outputs: Vec::with_capacity(per_query.len()),
        counts: StageCounts::default(),
        skips: SkipStats::default(),
    };
    for (out, c, s) in per_query {
        run.outputs.push(out);
        run.counts += c;
        run.skips += s;
    }
    Ok(run)
}
