//! Sigmoid, natural log and log-sigmoid evaluation, plus continuous
//! piecewise-linear (PWL) tables that stand in for them in a fixed-function
//! datapath.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::precision::Arith;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NonlinearError {
    #[error("{function} is undefined at {x}")]
    Domain { function: &'static str, x: f64 },
    #[error("{x} lies outside the table domain [{lo}, {hi}]")]
    OutOfTableDomain { x: f64, lo: f64, hi: f64 },
    #[error("target function is not finite at {x}")]
    NonFinite { x: f64 },
    #[error("invalid fit request: {0}")]
    InvalidFit(String),
}

/// Logistic sigmoid without intermediate overflow for any finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(w)` restricted to weights in `(0, 1]`.
pub fn ln_weight(w: f64) -> Result<f64, NonlinearError> {
    if w > 0.0 && w <= 1.0 {
        Ok(w.ln())
    } else {
        Err(NonlinearError::Domain { function: "ln", x: w })
    }
}

/// `ln(sigmoid(x))`, i.e. `-softplus(-x)`. Finite for every finite `x`:
/// approaches `x` as `x -> -inf` and `-exp(-x)` as `x -> +inf`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// How the fitter spaces its sample grid over the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridSpacing {
    Linear,
    /// Log-spaced; requires `0 < lo`.
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitObjective {
    /// Minimise the worst-case absolute error.
    MaxErr,
    /// Minimise the sum of squared errors over the grid.
    Lsq,
}

impl std::str::FromStr for FitObjective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "maxerr" => Ok(FitObjective::MaxErr),
            "lsq" => Ok(FitObjective::Lsq),
            _ => Err(format!("unknown objective '{s}' (expected maxerr or lsq)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub segments: usize,
    pub objective: FitObjective,
    pub spacing: GridSpacing,
    /// Grid used while searching breakpoint positions.
    pub search_points: usize,
    /// Grid used for the final fit and the recorded error.
    pub validation_points: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            segments: 8,
            objective: FitObjective::MaxErr,
            spacing: GridSpacing::Linear,
            search_points: 1025,
            validation_points: 10_001,
        }
    }
}

/// Continuous piecewise-linear approximation.
///
/// Segment `j` covers `[breakpoints[j], breakpoints[j + 1])`; the last
/// segment is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlTable {
    pub function: String,
    pub domain: [f64; 2],
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub max_abs_error: f64,
}

impl PwlTable {
    /// Builds a table through the points `(breakpoints[j], ordinates[j])`,
    /// which makes it continuous by construction.
    pub fn from_ordinates(
        function: impl Into<String>,
        breakpoints: Vec<f64>,
        ordinates: &[f64],
    ) -> Result<Self, NonlinearError> {
        if breakpoints.len() < 2 || ordinates.len() != breakpoints.len() {
            return Err(NonlinearError::InvalidFit(
                "need at least two breakpoints and one ordinate per breakpoint".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(NonlinearError::InvalidFit(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        let mut slopes = Vec::with_capacity(breakpoints.len() - 1);
        let mut intercepts = Vec::with_capacity(breakpoints.len() - 1);
        for j in 0..breakpoints.len() - 1 {
            let slope = (ordinates[j + 1] - ordinates[j]) / (breakpoints[j + 1] - breakpoints[j]);
            slopes.push(slope);
            intercepts.push(ordinates[j] - slope * breakpoints[j]);
        }
        let domain = [breakpoints[0], *breakpoints.last().unwrap()];
        Ok(Self {
            function: function.into(),
            domain,
            breakpoints,
            slopes,
            intercepts,
            max_abs_error: f64::NAN,
        })
    }

    pub fn segments(&self) -> usize {
        self.slopes.len()
    }

    pub fn domain_lo(&self) -> f64 {
        self.domain[0]
    }

    pub fn domain_hi(&self) -> f64 {
        self.domain[1]
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.domain[0] && x <= self.domain[1]
    }

    /// Index of the segment owning `x` (caller guarantees `x` is in the domain).
    pub fn segment_of(&self, x: f64) -> usize {
        let interior = &self.breakpoints[1..self.breakpoints.len() - 1];
        interior.partition_point(|&b| b <= x)
    }

    pub fn eval(&self, x: f64) -> Result<f64, NonlinearError> {
        if !self.contains(x) {
            return Err(self.out_of_domain(x));
        }
        let j = self.segment_of(x);
        Ok(self.slopes[j] * x + self.intercepts[j])
    }

    /// Evaluates `slope * x + intercept` with coefficients, product and sum
    /// all rounded to the arithmetic context's format.
    pub fn eval_in(&self, x: f64, arith: &Arith) -> Result<f64, NonlinearError> {
        if !self.contains(x) {
            return Err(self.out_of_domain(x));
        }
        let j = self.segment_of(x);
        let slope = arith.round(self.slopes[j]);
        let intercept = arith.round(self.intercepts[j]);
        Ok(arith.add(arith.mul(slope, arith.round(x)), intercept))
    }

    fn out_of_domain(&self, x: f64) -> NonlinearError {
        NonlinearError::OutOfTableDomain {
            x,
            lo: self.domain[0],
            hi: self.domain[1],
        }
    }

    /// Worst gap between adjacent segments at the interior breakpoints.
    pub fn continuity_gap(&self) -> f64 {
        (1..self.segments())
            .map(|j| {
                let b = self.breakpoints[j];
                let left = self.slopes[j - 1] * b + self.intercepts[j - 1];
                let right = self.slopes[j] * b + self.intercepts[j];
                (left - right).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Max absolute error against `f` over a grid of `points` samples.
    pub fn measure_error(&self, f: impl Fn(f64) -> f64, spacing: GridSpacing, points: usize) -> f64 {
        let grid = Grid::new(self.domain[0], self.domain[1], spacing, points);
        grid.xs
            .iter()
            .chain(self.breakpoints.iter())
            .map(|&x| (self.eval(x).expect("grid lies in the domain") - f(x)).abs())
            .fold(0.0, f64::max)
    }
}

/// Sample positions over `[lo, hi]`, parameterised by `u` in `[0, 1]`.
struct Grid {
    lo: f64,
    hi: f64,
    spacing: GridSpacing,
    xs: Vec<f64>,
}

impl Grid {
    fn new(lo: f64, hi: f64, spacing: GridSpacing, points: usize) -> Self {
        let mut g = Grid {
            lo,
            hi,
            spacing,
            xs: Vec::with_capacity(points),
        };
        let last = (points - 1) as f64;
        g.xs = (0..points).map(|i| g.at(i as f64 / last)).collect();
        g
    }

    fn at(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.lo;
        }
        if u >= 1.0 {
            return self.hi;
        }
        match self.spacing {
            GridSpacing::Linear => self.lo + u * (self.hi - self.lo),
            GridSpacing::Geometric => self.lo * (self.hi / self.lo).powf(u),
        }
    }
}

/// Samples of the target on a grid, ready for repeated ordinate solves.
struct Samples {
    xs: Vec<f64>,
    fs: Vec<f64>,
}

impl Samples {
    fn new(grid: &Grid, f: &impl Fn(f64) -> f64) -> Result<Self, NonlinearError> {
        let mut fs = Vec::with_capacity(grid.xs.len());
        for &x in &grid.xs {
            let y = f(x);
            if !y.is_finite() {
                return Err(NonlinearError::NonFinite { x });
            }
            fs.push(y);
        }
        Ok(Self {
            xs: grid.xs.clone(),
            fs,
        })
    }
}

/// Weighted least-squares ordinates for fixed breakpoints. The normal
/// equations of the hat-function basis are tridiagonal. A tiny ridge term
/// pulls each ordinate toward `f(breakpoint)` so empty segments stay solvable.
fn solve_ordinates(bps: &[f64], f_at_bps: &[f64], s: &Samples, weights: &[f64]) -> Vec<f64> {
    let n = bps.len();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    let mut rhs = vec![0.0; n];
    let mut j = 0;
    let mut total = 0.0;
    for ((&x, &fx), &w) in s.xs.iter().zip(&s.fs).zip(weights) {
        while j + 2 < n && x >= bps[j + 1] {
            j += 1;
        }
        let t = ((x - bps[j]) / (bps[j + 1] - bps[j])).clamp(0.0, 1.0);
        let (a, b) = (1.0 - t, t);
        diag[j] += w * a * a;
        diag[j + 1] += w * b * b;
        off[j] += w * a * b;
        rhs[j] += w * a * fx;
        rhs[j + 1] += w * b * fx;
        total += w;
    }
    let ridge = 1e-12 * total.max(f64::MIN_POSITIVE);
    for k in 0..n {
        diag[k] += ridge;
        rhs[k] += ridge * f_at_bps[k];
    }
    // Thomas algorithm on the symmetric tridiagonal system
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { off[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for k in 1..n {
        let m = diag[k] - off[k - 1] * c[k - 1];
        if k < n - 1 {
            c[k] = off[k] / m;
        }
        d[k] = (rhs[k] - off[k - 1] * d[k - 1]) / m;
    }
    let mut y = vec![0.0; n];
    y[n - 1] = d[n - 1];
    for k in (0..n - 1).rev() {
        y[k] = d[k] - c[k] * y[k + 1];
    }
    y
}

fn residuals(bps: &[f64], ys: &[f64], s: &Samples, out: &mut [f64]) {
    let mut j = 0;
    for (i, (&x, &fx)) in s.xs.iter().zip(&s.fs).enumerate() {
        while j + 2 < bps.len() && x >= bps[j + 1] {
            j += 1;
        }
        let t = (x - bps[j]) / (bps[j + 1] - bps[j]);
        out[i] = ys[j] + t * (ys[j + 1] - ys[j]) - fx;
    }
}

/// Best ordinates for fixed breakpoints under `objective`, with the
/// objective value achieved. Max-error uses Lawson's iteratively
/// reweighted least squares.
fn fit_ordinates(
    bps: &[f64],
    f: &impl Fn(f64) -> f64,
    s: &Samples,
    objective: FitObjective,
    iterations: usize,
) -> (Vec<f64>, f64) {
    let f_at_bps: Vec<f64> = bps.iter().map(|&x| f(x)).collect();
    let m = s.xs.len();
    let mut weights = vec![1.0 / m as f64; m];
    let mut r = vec![0.0; m];
    let mut ys = solve_ordinates(bps, &f_at_bps, s, &weights);
    residuals(bps, &ys, s, &mut r);
    if objective == FitObjective::Lsq {
        return (ys, r.iter().map(|e| e * e).sum());
    }
    let mut best_err = r.iter().fold(0.0f64, |acc, e| acc.max(e.abs()));
    let mut best = ys.clone();
    for _ in 0..iterations {
        let mut sum = 0.0;
        for (w, e) in weights.iter_mut().zip(&r) {
            *w *= e.abs();
            sum += *w;
        }
        if !(sum > 0.0) || !sum.is_finite() {
            break;
        }
        // a small uniform share keeps non-critical segments anchored
        for w in weights.iter_mut() {
            *w = (1.0 - WEIGHT_FLOOR) * *w / sum + WEIGHT_FLOOR / m as f64;
        }
        ys = solve_ordinates(bps, &f_at_bps, s, &weights);
        residuals(bps, &ys, s, &mut r);
        let err = r.iter().fold(0.0f64, |acc, e| acc.max(e.abs()));
        if err < best_err {
            best_err = err;
            best.clone_from(&ys);
        }
        if best_err == 0.0 {
            break;
        }
    }
    (best, best_err)
}

/// Initial knots in grid-parameter space, placed so each segment holds an
/// equal share of `sqrt(|f''|)`, the asymptotically optimal density for
/// linear interpolation. A small constant keeps flat regions covered.
fn equidistributed_knots(s: &Samples, n: usize) -> Vec<f64> {
    let m = s.xs.len();
    let uniform: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
    if m < 5 {
        return uniform;
    }
    let mut curv = vec![0.0; m];
    for i in 1..m - 1 {
        let (x0, x1, x2) = (s.xs[i - 1], s.xs[i], s.xs[i + 1]);
        let (f0, f1, f2) = (s.fs[i - 1], s.fs[i], s.fs[i + 1]);
        let d2 = 2.0 * ((f2 - f1) / (x2 - x1) - (f1 - f0) / (x1 - x0)) / (x2 - x0);
        curv[i] = d2.abs().sqrt();
    }
    curv[0] = curv[1];
    curv[m - 1] = curv[m - 2];
    let mut mass = 0.0;
    for i in 1..m {
        mass += 0.5 * (curv[i] + curv[i - 1]) * (s.xs[i] - s.xs[i - 1]);
    }
    if !(mass > 0.0) || !mass.is_finite() {
        return uniform;
    }
    let floor = 0.05 * mass / (s.xs[m - 1] - s.xs[0]);
    let mut cum = vec![0.0; m];
    for i in 1..m {
        let dens = 0.5 * (curv[i] + curv[i - 1]) + floor;
        cum[i] = cum[i - 1] + dens * (s.xs[i] - s.xs[i - 1]);
    }
    let total = cum[m - 1];
    let mut us = uniform.clone();
    let last = (m - 1) as f64;
    let mut i = 0;
    for (j, u) in us.iter_mut().enumerate().take(n).skip(1) {
        let target = total * j as f64 / n as f64;
        while i + 1 < m - 1 && cum[i + 1] < target {
            i += 1;
        }
        let span = cum[i + 1] - cum[i];
        let t = if span > 0.0 { (target - cum[i]) / span } else { 0.0 };
        *u = (i as f64 + t) / last;
    }
    us
}

const WEIGHT_FLOOR: f64 = 1e-3;
const SEARCH_ITERATIONS: usize = 60;
const FINAL_ITERATIONS: usize = 400;

/// Fits an `n_segments` continuous PWL approximation of `f` on `[lo, hi]`
/// with default options (max-error objective, linear grid).
pub fn fit_pwl(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    n_segments: usize,
) -> Result<PwlTable, NonlinearError> {
    fit_pwl_with(
        f,
        lo,
        hi,
        &FitOptions {
            segments: n_segments,
            ..FitOptions::default()
        },
    )
}

/// Breakpoints start uniformly spaced in the grid parameter and are refined
/// by coordinate-wise pattern search against the objective on the search
/// grid; the final ordinates are refit on the validation grid, whose max
/// absolute error is recorded in the table.
pub fn fit_pwl_with(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    opts: &FitOptions,
) -> Result<PwlTable, NonlinearError> {
    let n = opts.segments;
    if n == 0 {
        return Err(NonlinearError::InvalidFit("n_segments must be at least 1".into()));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(NonlinearError::InvalidFit(format!("bad domain [{lo}, {hi}]")));
    }
    if opts.spacing == GridSpacing::Geometric && !(lo > 0.0) {
        return Err(NonlinearError::InvalidFit("geometric spacing needs lo > 0".into()));
    }
    if opts.search_points < 2 || opts.validation_points < 2 {
        return Err(NonlinearError::InvalidFit("grids need at least two points".into()));
    }

    let search_grid = Grid::new(lo, hi, opts.spacing, opts.search_points);
    let search = Samples::new(&search_grid, &f)?;
    let to_x = |us: &[f64]| -> Vec<f64> { us.iter().map(|&u| search_grid.at(u)).collect() };
    let score = |us: &[f64]| -> f64 {
        let bps = to_x(us);
        if bps.windows(2).any(|w| !(w[0] < w[1])) {
            return f64::INFINITY;
        }
        fit_ordinates(&bps, &f, &search, opts.objective, SEARCH_ITERATIONS).1
    };

    let uniform: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
    let spread = equidistributed_knots(&search, n);
    let (us_u, us_s) = (score(&uniform), score(&spread));
    let (mut us, mut best) = if us_s < us_u { (spread, us_s) } else { (uniform, us_u) };
    let min_gap = 1e-6;
    let mut step = 0.5 / n as f64;
    while step > 1e-5 && n > 1 && best > 0.0 {
        for _sweep in 0..8 {
            let mut improved = false;
            for j in 1..n {
                for dir in [-1.0, 1.0] {
                    let cand = us[j] + dir * step;
                    if cand <= us[j - 1] + min_gap || cand >= us[j + 1] - min_gap {
                        continue;
                    }
                    let old = us[j];
                    us[j] = cand;
                    let e = score(&us);
                    if e < best {
                        best = e;
                        improved = true;
                    } else {
                        us[j] = old;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        step *= 0.5;
    }

    let bps = to_x(&us);
    let val_grid = Grid::new(lo, hi, opts.spacing, opts.validation_points);
    let validation = Samples::new(&val_grid, &f)?;
    let (ys, _) = fit_ordinates(&bps, &f, &validation, opts.objective, FINAL_ITERATIONS);
    let mut table = PwlTable::from_ordinates("custom", bps, &ys)?;
    table.max_abs_error = table.measure_error(&f, opts.spacing, opts.validation_points);
    if !table.max_abs_error.is_finite() {
        return Err(NonlinearError::NonFinite { x: f64::NAN });
    }
    Ok(table)
}

/// Lower end of the ln table's domain; also the smallest weight fed to it.
pub const LN_TABLE_LO: f64 = 1.0 / 16_777_216.0; // 2^-24
pub const SIGMOID_TABLE_LO: f64 = -6.0;
pub const SIGMOID_TABLE_HI: f64 = 11.0;

/// The pair of tables a PWL datapath uses for the weight recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlTables {
    pub sigmoid: PwlTable,
    pub ln: PwlTable,
}

impl PwlTables {
    /// Fits both tables with `segments` segments each.
    pub fn fit(segments: usize, objective: FitObjective) -> Result<Self, NonlinearError> {
        Ok(Self {
            sigmoid: sigmoid_table(segments, objective)?,
            ln: ln_table(segments, objective)?,
        })
    }

    /// 8-segment max-error tables, fitted once per process.
    pub fn standard() -> &'static PwlTables {
        static TABLES: OnceLock<PwlTables> = OnceLock::new();
        TABLES.get_or_init(|| {
            PwlTables::fit(8, FitObjective::MaxErr).expect("standard tables fit")
        })
    }
}

pub fn sigmoid_table(segments: usize, objective: FitObjective) -> Result<PwlTable, NonlinearError> {
    let opts = FitOptions {
        segments,
        objective,
        spacing: GridSpacing::Linear,
        ..FitOptions::default()
    };
    let mut t = fit_pwl_with(sigmoid, SIGMOID_TABLE_LO, SIGMOID_TABLE_HI, &opts)?;
    t.function = "sigmoid".into();
    Ok(t)
}

/// ln on `[2^-24, 1]`, sampled geometrically so the steep end near zero is
/// resolved. The right end is closed so `ln(1)` (the first weight) is covered.
pub fn ln_table(segments: usize, objective: FitObjective) -> Result<PwlTable, NonlinearError> {
    let opts = FitOptions {
        segments,
        objective,
        spacing: GridSpacing::Geometric,
        ..FitOptions::default()
    };
    let mut t = fit_pwl_with(f64::ln, LN_TABLE_LO, 1.0, &opts)?;
    t.function = "ln".into();
    Ok(t)
}
