//! Driving paths: fractional Brownian motion samples, deterministic drivers and shifts.
//!
//! A [`DriverPath`] is a piecewise-linear path on a strictly increasing mesh,
//! starting at the origin. Fractional Brownian motion is sampled exactly on a
//! uniform mesh by a Cholesky factor of the increment covariance, which costs
//! `O(N³)` once per `(H, T, N)` and `O(N²)` per sample (`O(N)` for `H = 1/2`).

use std::io;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::expr::{EvalError, Expression, Program};

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("invalid driver specification: {0}")]
    InvalidSpec(String),
    #[error("increment covariance is not positive definite")]
    Factorization,
    #[error("paths live on different meshes")]
    MeshMismatch,
    #[error("driver component {component} is {value} at the initial time, not 0")]
    NotAtOrigin { component: usize, value: f64 },
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A piecewise-linear path in ℝᵈ on a mesh `t_0 < … < t_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverPath {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

/// `N + 1` equally spaced times on `[0, horizon]`.
pub fn uniform_mesh(horizon: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect()
}

impl DriverPath {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, DriverError> {
        if times.len() < 2 {
            return Err(DriverError::InvalidPath("need at least two mesh times".into()));
        }
        if times.len() != values.len() {
            return Err(DriverError::InvalidPath("times and values differ in length".into()));
        }
        if times.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) || times.iter().any(|t| !t.is_finite()) {
            return Err(DriverError::InvalidPath("times must be finite and strictly increasing".into()));
        }
        let d = values[0].len();
        if values.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
            return Err(DriverError::InvalidPath("values must be finite with a common dimension".into()));
        }
        if let Some((component, &value)) = values[0].iter().enumerate().find(|(_, x)| **x != 0.0) {
            return Err(DriverError::NotAtOrigin { component, value });
        }
        Ok(DriverPath { times, values })
    }

    /// The constant path at the origin.
    pub fn zero(dim: usize, times: Vec<f64>) -> Result<Self, DriverError> {
        let values = vec![vec![0.0; dim]; times.len()];
        DriverPath::new(times, values)
    }

    /// A straight segment from the origin to `end`, sampled on `times`.
    pub fn linear(end: &[f64], times: Vec<f64>) -> Result<Self, DriverError> {
        let t0 = times[0];
        let span = times[times.len() - 1] - t0;
        let values = times.iter().map(|t| end.iter().map(|e| e * (t - t0) / span).collect()).collect();
        DriverPath::new(times, values)
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Number of linear segments `N`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// `w(t_{k+1}) − w(t_k)`.
    pub fn increment(&self, k: usize) -> Vec<f64> {
        self.values[k + 1].iter().zip(&self.values[k]).map(|(b, a)| b - a).collect()
    }

    /// Linear interpolation, clamped to the mesh.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let n = self.steps();
        if t <= self.times[0] {
            return self.values[0].clone();
        }
        if t >= self.times[n] {
            return self.values[n].clone();
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let lam = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.values[k].iter().zip(&self.values[k + 1]).map(|(a, b)| a + lam * (b - a)).collect()
    }

    /// `sup_t |w(t)|∞`.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `w + εh` on the common mesh.
    pub fn shift(&self, h: &DriverPath, eps: f64) -> Result<DriverPath, DriverError> {
        if self.times != h.times || self.dim() != h.dim() {
            return Err(DriverError::MeshMismatch);
        }
        let values = self.values.iter().zip(&h.values).map(|(w, v)| w.iter().zip(v).map(|(a, b)| a + eps * b).collect()).collect();
        Ok(DriverPath { times: self.times.clone(), values })
    }

    /// The piece on mesh nodes `from..=to`, re-based to start at the origin.
    pub fn slice(&self, from: usize, to: usize) -> Result<DriverPath, DriverError> {
        if !(from < to && to <= self.steps()) {
            return Err(DriverError::InvalidPath(format!("bad slice {from}..={to}")));
        }
        let base = &self.values[from];
        let values = self.values[from..=to].iter().map(|v| v.iter().zip(base).map(|(a, b)| a - b).collect()).collect();
        Ok(DriverPath { times: self.times[from..=to].to_vec(), values })
    }

    /// The time-reversed path `s ↦ w(T − s) − w(T)`, on the reflected mesh.
    pub fn reversed(&self) -> DriverPath {
        let t_end = self.horizon();
        let t0 = self.times[0];
        let end = &self.values[self.steps()];
        let times = self.times.iter().rev().map(|t| t0 + t_end - t).collect();
        let values = self.values.iter().rev().map(|v| v.iter().zip(end).map(|(a, b)| a - b).collect()).collect();
        DriverPath { times, values }
    }

    /// Write as CSV with header `t,w1,..,wd`, optionally preceded by `# comment`.
    pub fn write_csv<W: io::Write>(&self, mut out: W, comment: Option<&str>) -> Result<(), DriverError> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("w{i}")));
        w.write_record(&header)?;
        for (t, v) in self.times.iter().zip(&self.values) {
            let mut rec = vec![format!("{t:?}")];
            rec.extend(v.iter().map(|x| format!("{x:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read the format written by [`DriverPath::write_csv`]; `#` lines are skipped.
    pub fn read_csv<R: io::Read>(input: R) -> Result<DriverPath, DriverError> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let nums: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| DriverError::InvalidPath(format!("bad number `{s}`: {e}"))))
                .collect::<Result<_, _>>()?;
            if nums.len() < 2 {
                return Err(DriverError::InvalidPath("expected columns t,w1,..".into()));
            }
            times.push(nums[0]);
            values.push(nums[1..].to_vec());
        }
        DriverPath::new(times, values)
    }
}

/// Parameters of an fBm sample on a uniform mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FbmSpec {
    pub hurst: f64,
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
    pub dim: usize,
}

impl FbmSpec {
    pub fn validate(&self) -> Result<(), DriverError> {
        if !(self.hurst > 0.25 && self.hurst < 1.0) {
            return Err(DriverError::InvalidSpec(format!("Hurst parameter {} outside (1/4, 1)", self.hurst)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(DriverError::InvalidSpec(format!("horizon {} must be positive", self.horizon)));
        }
        if self.steps == 0 {
            return Err(DriverError::InvalidSpec("steps must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(DriverError::InvalidSpec("dimension must be at least 1".into()));
        }
        Ok(())
    }
}

/// The generator for replicate `index` of a run seeded with `master`.
///
/// Each replicate owns a separate ChaCha stream, so results do not depend on
/// how replicates are distributed over workers.
pub fn replicate_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Covariance of fractional Gaussian noise increments at lag `k` on step `dt`.
pub fn fgn_covariance(hurst: f64, dt: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * dt.powf(h2) * ((k + 1.0).powf(h2) + (k - 1.0).abs().powf(h2) - 2.0 * k.powf(h2))
}

/// Reusable exact sampler for one `(H, T, N, d)`.
#[derive(Debug, Clone)]
pub struct FbmSampler {
    spec: FbmSpec,
    /// Row `i` of the Cholesky factor, restricted to columns `start[i]..=i`.
    rows: Vec<Vec<f64>>,
    start: Vec<usize>,
    times: Vec<f64>,
}

impl FbmSampler {
    pub fn new(spec: &FbmSpec) -> Result<Self, DriverError> {
        spec.validate()?;
        let n = spec.steps;
        let dt = spec.horizon / n as f64;
        let lags: Vec<f64> = (0..n).map(|k| fgn_covariance(spec.hurst, dt, k)).collect();
        let cov = DMatrix::from_fn(n, n, |i, j| lags[i.abs_diff(j)]);
        let chol = cov.cholesky().ok_or(DriverError::Factorization)?;
        let l = chol.l();
        let mut rows = Vec::with_capacity(n);
        let mut start = Vec::with_capacity(n);
        for i in 0..n {
            let s = (0..=i).find(|&j| l[(i, j)] != 0.0).unwrap_or(i);
            start.push(s);
            rows.push((s..=i).map(|j| l[(i, j)]).collect());
        }
        Ok(FbmSampler { spec: *spec, rows, start, times: uniform_mesh(spec.horizon, n) })
    }

    pub fn spec(&self) -> &FbmSpec {
        &self.spec
    }

    /// Draw one path from `rng`; coordinates are drawn one after another.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DriverPath {
        let n = self.spec.steps;
        let d = self.spec.dim;
        let mut values = vec![vec![0.0; d]; n + 1];
        let mut z = vec![0.0; n];
        for a in 0..d {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let mut level = 0.0;
            for i in 0..n {
                let s = self.start[i];
                let inc: f64 = self.rows[i].iter().zip(&z[s..=i]).map(|(l, x)| l * x).sum();
                level += inc;
                values[i + 1][a] = level;
            }
        }
        DriverPath { times: self.times.clone(), values }
    }
}

/// One fBm sample using the generator seeded by `spec.seed`.
pub fn sample_fbm(spec: &FbmSpec) -> Result<DriverPath, DriverError> {
    let sampler = FbmSampler::new(spec)?;
    Ok(sampler.sample(&mut replicate_rng(spec.seed, 0)))
}

/// Sample the formulas `t ↦ wᵅ(t)` on `times`. Formulas are expressions in the
/// single variable `x1` (parse them with the variable name `t`) and must vanish at the first time.
pub fn smooth_driver(formulas: &[Expression], times: Vec<f64>) -> Result<DriverPath, DriverError> {
    let prog = Program::new(formulas);
    if prog.arity() > 1 {
        return Err(DriverError::InvalidSpec("driver formulas may only depend on t".into()));
    }
    let mut values = Vec::with_capacity(times.len());
    for &t in &times {
        values.push(prog.eval(&[t])?);
    }
    if let Some((component, &value)) = values.first().and_then(|v: &Vec<f64>| v.iter().enumerate().find(|(_, x)| x.abs() > 1e-12)) {
        return Err(DriverError::NotAtOrigin { component, value });
    }
    for x in values[0].iter_mut() {
        *x = 0.0;
    }
    DriverPath::new(times, values)
}

/// Parse driver formulas written in the variable `t`.
pub fn parse_driver_formulas<S: AsRef<str>>(formulas: &[S]) -> Result<Vec<Expression>, crate::expr::ParseError> {
    let names = crate::expr::VarNames::custom(&["t"]);
    formulas.iter().map(|f| Expression::parse_with(f.as_ref(), &names)).collect()
}
