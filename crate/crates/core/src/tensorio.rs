//! Deterministic problem generation and the `.atn` tensor file format.
//!
//! # File layout
//!
//! All integers little-endian, payload row-major:
//!
//! | offset | size        | field                                          |
//! |--------|-------------|------------------------------------------------|
//! | 0      | 4           | magic `ATN1`                                   |
//! | 4      | 1           | dtype: 0 = fp64, 1 = fp32, 2 = bf16, 3 = fp8e4m3 |
//! | 5      | 1           | rank                                           |
//! | 6      | 4 * rank    | dims, `u32` each                               |
//! | ...    | prod(dims) * elem size | payload                             |
//!
//! Element sizes are 8, 4, 2 and 1 bytes. Files must end exactly at the
//! end of the payload.
//!
//! # Generator
//!
//! The PRNG is SplitMix64: a 64-bit counter advanced by
//! `0x9E3779B97F4A7C15`, each output mixed with
//! `z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9; z = (z ^ (z >> 27)) * 0x94D049BB133111EB; z ^ (z >> 31)`.
//! Uniform doubles take the top 53 bits (`(x >> 11) * 2^-53`). Gaussians
//! use Box-Muller on two uniforms, taking the cosine branch only. Queries
//! are drawn first, then keys, then values, element by element.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::kernels::AttnProblem;
use crate::precision::{bf16_from_bits, bf16_to_bits, fp8_from_bits, fp8_to_bits};

pub const MAGIC: &[u8; 4] = b"ATN1";

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"ATN1\"")]
    BadMagic([u8; 4]),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("shape error: {0}")]
    Shape(String),
}

impl TensorError {
    /// Stable numeric code per failure kind.
    pub fn code(&self) -> u8 {
        match self {
            TensorError::Io(_) => 1,
            TensorError::BadMagic(_) => 2,
            TensorError::UnknownDtype(_) => 3,
            TensorError::SizeMismatch { .. } => 4,
            TensorError::Shape(_) => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F64 = 0,
    F32 = 1,
    Bf16 = 2,
    Fp8E4M3 = 3,
}

impl DType {
    pub fn from_code(code: u8) -> Result<Self, TensorError> {
        match code {
            0 => Ok(DType::F64),
            1 => Ok(DType::F32),
            2 => Ok(DType::Bf16),
            3 => Ok(DType::Fp8E4M3),
            c => Err(TensorError::UnknownDtype(c)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
            DType::Bf16 => 2,
            DType::Fp8E4M3 => 1,
        }
    }
}

/// Element storage at the file's dtype, so reads and writes are lossless.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    Bf16(Vec<u16>),
    Fp8(Vec<u8>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::F32(v) => v.len(),
            TensorData::Bf16(v) => v.len(),
            TensorData::Fp8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self, TensorError> {
        let expected: usize = dims.iter().map(|&d| d as usize).product();
        if dims.len() > u8::MAX as usize {
            return Err(TensorError::Shape("rank exceeds 255".into()));
        }
        if data.len() != expected {
            return Err(TensorError::Shape(format!(
                "{} elements for dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// Encodes `values` at `dtype`, rounding to nearest-even where needed.
    pub fn from_f64(dims: Vec<u32>, dtype: DType, values: &[f64]) -> Result<Self, TensorError> {
        let data = match dtype {
            DType::F64 => TensorData::F64(values.to_vec()),
            DType::F32 => TensorData::F32(values.iter().map(|&x| x as f32).collect()),
            DType::Bf16 => TensorData::Bf16(values.iter().map(|&x| bf16_to_bits(x)).collect()),
            DType::Fp8E4M3 => TensorData::Fp8(values.iter().map(|&x| fp8_to_bits(x)).collect()),
        };
        Self::new(dims, data)
    }

    /// Rank-2 tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>], dtype: DType) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::Shape("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_f64(vec![rows.len() as u32, cols as u32], dtype, &flat)
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F64(_) => DType::F64,
            TensorData::F32(_) => DType::F32,
            TensorData::Bf16(_) => DType::Bf16,
            TensorData::Fp8(_) => DType::Fp8E4M3,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F64(v) => v.clone(),
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::Bf16(v) => v.iter().map(|&b| bf16_from_bits(b)).collect(),
            TensorData::Fp8(v) => v.iter().map(|&b| fp8_from_bits(b)).collect(),
        }
    }

    /// Rows of a rank-2 tensor.
    pub fn to_rows(&self) -> Result<Vec<Vec<f64>>, TensorError> {
        if self.dims.len() != 2 {
            return Err(TensorError::Shape(format!(
                "expected rank 2, found rank {}",
                self.dims.len()
            )));
        }
        let cols = self.dims[1] as usize;
        let flat = self.to_f64();
        if cols == 0 {
            return Ok(vec![Vec::new(); self.dims[0] as usize]);
        }
        Ok(flat.chunks(cols).map(<[f64]>::to_vec).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.data.len();
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + n * self.dtype().size());
        out.extend_from_slice(MAGIC);
        out.push(self.dtype() as u8);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::Bf16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::Fp8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let short = |expected: usize| TensorError::SizeMismatch {
            expected,
            actual: bytes.len(),
        };
        if bytes.len() < 4 {
            return Err(short(6));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(TensorError::BadMagic(magic));
        }
        if bytes.len() < 6 {
            return Err(short(6));
        }
        let dtype = DType::from_code(bytes[4])?;
        let rank = bytes[5] as usize;
        let header = 6 + 4 * rank;
        if bytes.len() < header {
            return Err(short(header));
        }
        let dims: Vec<u32> = bytes[6..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| TensorError::Shape("element count overflows".into()))?;
        let expected = count
            .checked_mul(dtype.size())
            .and_then(|p| p.checked_add(header))
            .ok_or_else(|| TensorError::Shape("payload size overflows".into()))?;
        if bytes.len() != expected {
            return Err(short(expected));
        }
        let payload = &bytes[header..];
        let data = match dtype {
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::Bf16 => TensorData::Bf16(
                payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::Fp8E4M3 => TensorData::Fp8(payload.to_vec()),
        };
        Tensor::new(dims, data)
    }
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<(), TensorError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&t.to_bytes())?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    Tensor::from_bytes(&fs::read(path)?)
}

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    pub fn uniform(&mut self, a: f64, b: f64) -> f64 {
        a + (b - a) * self.next_f64()
    }

    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        // 1 - u keeps the log argument in (0, 1]
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        mean + std * r * (std::f64::consts::TAU * u2).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Gaussian { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Queries and keys aligned along one direction so that scores spread
    /// over roughly `[-scale, scale]`, with at least one at full magnitude.
    AdversarialLargeScores { scale: f64 },
}

impl std::str::FromStr for Distribution {
    type Err = String;

    /// `gaussian:MEAN,STD`, `uniform:LO,HI` or `adversarial:SCALE`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let nums: Result<Vec<f64>, _> = if args.is_empty() {
            Ok(Vec::new())
        } else {
            args.split(',').map(|a| a.trim().parse::<f64>()).collect()
        };
        let nums = nums.map_err(|e| format!("bad number in '{s}': {e}"))?;
        let dist = match (kind, nums.as_slice()) {
            ("gaussian", []) => Distribution::Gaussian { mean: 0.0, std: 1.0 },
            ("gaussian", [m, sd]) => Distribution::Gaussian { mean: *m, std: *sd },
            ("uniform", []) => Distribution::Uniform { lo: -1.0, hi: 1.0 },
            ("uniform", [a, b]) => Distribution::Uniform { lo: *a, hi: *b },
            ("adversarial", [scale]) => Distribution::AdversarialLargeScores { scale: *scale },
            _ => return Err(format!("unrecognised distribution '{s}'")),
        };
        match dist {
            Distribution::Gaussian { std, .. } if !(std >= 0.0) => {
                Err("gaussian std must be non-negative".into())
            }
            Distribution::Uniform { lo, hi } if !(lo <= hi) => Err("uniform needs lo <= hi".into()),
            Distribution::AdversarialLargeScores { scale } if !(scale > 0.0) => {
                Err("adversarial scale must be positive".into())
            }
            d => Ok(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub n_queries: usize,
    pub distribution: Distribution,
}

impl GenSpec {
    pub fn gaussian(seed: u64, n: usize, d: usize, n_queries: usize) -> Self {
        Self {
            seed,
            n,
            d,
            n_queries,
            distribution: Distribution::Gaussian { mean: 0.0, std: 1.0 },
        }
    }
}

fn rows(rng: &mut SplitMix64, count: usize, d: usize, mut draw: impl FnMut(&mut SplitMix64) -> f64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..d).map(|_| draw(rng)).collect())
        .collect()
}

/// Builds a problem from `spec`; identical specs give bit-identical problems.
pub fn generate(spec: &GenSpec) -> Result<AttnProblem, crate::kernels::KernelError> {
    if spec.n == 0 || spec.d == 0 {
        return Err(crate::kernels::KernelError::Shape("N and d must be at least 1".into()));
    }
    let mut rng = SplitMix64::new(spec.seed);
    let (n, d, nq) = (spec.n, spec.d, spec.n_queries);
    let (queries, keys, values) = match spec.distribution {
        Distribution::Gaussian { mean, std } => {
            let mut g = |r: &mut SplitMix64| r.gaussian(mean, std);
            (rows(&mut rng, nq, d, &mut g), rows(&mut rng, n, d, &mut g), rows(&mut rng, n, d, &mut g))
        }
        Distribution::Uniform { lo, hi } => {
            let mut u = |r: &mut SplitMix64| r.uniform(lo, hi);
            (rows(&mut rng, nq, d, &mut u), rows(&mut rng, n, d, &mut u), rows(&mut rng, n, d, &mut u))
        }
        Distribution::AdversarialLargeScores { scale } => adversarial(&mut rng, n, d, nq, scale),
    };
    AttnProblem::new(queries, keys, values)
}

fn adversarial(
    rng: &mut SplitMix64,
    n: usize,
    d: usize,
    nq: usize,
    scale: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    // unit direction shared by every query and key
    let mut dir: Vec<f64> = (0..d).map(|_| rng.gaussian(0.0, 1.0)).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    dir.iter_mut().for_each(|x| *x /= norm);
    let root = scale.sqrt();
    let noise = 1e-3;

    let queries = (0..nq)
        .map(|_| {
            let sign = if rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 };
            let b = sign * rng.uniform(0.5, 1.0);
            dir.iter().map(|&u| b * root * u + noise * rng.gaussian(0.0, 1.0)).collect()
        })
        .collect();
    let extreme = (rng.next_u64() % n as u64) as usize;
    let keys = (0..n)
        .map(|i| {
            let a = if i == extreme { 1.0 } else { rng.uniform(-1.0, 1.0) };
            dir.iter().map(|&u| a * root * u + noise * rng.gaussian(0.0, 1.0)).collect()
        })
        .collect();
    let values = rows(rng, n, d, |r| r.gaussian(0.0, 1.0));
    (queries, keys, values)
}

/// Writes `q.atn`, `k.atn`, `v.atn` (fp64, rank 2) into `dir`.
pub fn write_problem(dir: impl AsRef<Path>, p: &AttnProblem) -> Result<(), TensorError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_tensor(dir.join("q.atn"), &Tensor::from_rows(&p.queries, DType::F64)?)?;
    write_tensor(dir.join("k.atn"), &Tensor::from_rows(&p.keys, DType::F64)?)?;
    write_tensor(dir.join("v.atn"), &Tensor::from_rows(&p.values, DType::F64)?)?;
    Ok(())
}

pub fn read_problem(dir: impl AsRef<Path>) -> Result<AttnProblem, TensorError> {
    let dir = dir.as_ref();
    let q = read_tensor(dir.join("q.atn"))?.to_rows()?;
    let k = read_tensor(dir.join("k.atn"))?.to_rows()?;
    let v = read_tensor(dir.join("v.atn"))?.to_rows()?;
    AttnProblem::new(q, k, v).map_err(|e| TensorError::Shape(e.to_string()))
}
