//! Truncated tensor series and path signatures.

use serde::Serialize;

use crate::driver::DriverPath;

/// A truncated element of the tensor algebra over ℝᵈ.
///
/// Level `k` is stored flat with `d^k` entries, the multi-index `(i₁, …, i_k)`
/// at offset `((i₁·d + i₂)·d + …)·d + i_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorSeries {
    dim: usize,
    levels: Vec<Vec<f64>>,
}

impl TensorSeries {
    /// The unit series `(1, 0, 0, …)`.
    pub fn identity(dim: usize, depth: usize) -> Self {
        let levels = (0..=depth).map(|k| {
            let mut v = vec![0.0; dim.pow(k as u32)];
            if k == 0 {
                v[0] = 1.0;
            }
            v
        });
        TensorSeries { dim, levels: levels.collect() }
    }

    /// `exp(v) = Σ v^{⊗k}/k!`, the signature of a straight segment with increment `v`.
    pub fn exp_linear(v: &[f64], depth: usize) -> Self {
        let d = v.len();
        let mut levels = vec![vec![1.0]];
        for k in 1..=depth {
            let prev = &levels[k - 1];
            let mut next = Vec::with_capacity(prev.len() * d);
            for a in prev {
                for b in v {
                    next.push(a * b / k as f64);
                }
            }
            levels.push(next);
        }
        TensorSeries { dim: d, levels }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k]
    }

    /// Coefficient of the word `(i₁, …, i_k)`, zero-based letters.
    pub fn coefficient(&self, word: &[usize]) -> f64 {
        let idx = word.iter().fold(0, |acc, &i| acc * self.dim + i);
        self.levels[word.len()][idx]
    }

    /// Truncated tensor product `self ⊗ other`.
    pub fn mul(&self, other: &TensorSeries) -> TensorSeries {
        let depth = self.depth().min(other.depth());
        let mut levels = Vec::with_capacity(depth + 1);
        for k in 0..=depth {
            let mut out = vec![0.0; self.dim.pow(k as u32)];
            for i in 0..=k {
                let a = &self.levels[i];
                let b = &other.levels[k - i];
                for (ia, va) in a.iter().enumerate() {
                    if *va == 0.0 {
                        continue;
                    }
                    let base = ia * b.len();
                    for (ib, vb) in b.iter().enumerate() {
                        out[base + ib] += va * vb;
                    }
                }
            }
            levels.push(out);
        }
        TensorSeries { dim: self.dim, levels }
    }

    /// Largest entrywise difference over all levels.
    pub fn max_abs_diff(&self, other: &TensorSeries) -> f64 {
        self.levels.iter().flatten().zip(other.levels.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Signed area `½(S^{(2)}_{ij} − S^{(2)}_{ji})`.
    pub fn levy_area(&self, i: usize, j: usize) -> f64 {
        0.5 * (self.coefficient(&[i, j]) - self.coefficient(&[j, i]))
    }
}

/// Signature of the piecewise-linear path through `points`, by Chen products of segment exponentials.
pub fn signature_of_points(points: &[&[f64]], depth: usize) -> TensorSeries {
    let d = points[0].len();
    let mut s = TensorSeries::identity(d, depth);
    for w in points.windows(2) {
        let inc: Vec<f64> = w[1].iter().zip(w[0]).map(|(b, a)| b - a).collect();
        s = s.mul(&TensorSeries::exp_linear(&inc, depth));
    }
    s
}

/// Signature of a driver over all its segments.
pub fn signature(path: &DriverPath, depth: usize) -> TensorSeries {
    let pts: Vec<&[f64]> = path.values().iter().map(Vec::as_slice).collect();
    signature_of_points(&pts, depth)
}

/// Signature of the solved path, linearly interpolated through its stored points.
pub fn signature_of_trajectory(traj: &crate::rde::Trajectory, depth: usize) -> TensorSeries {
    let pts: Vec<&[f64]> = (0..traj.n_points()).map(|j| traj.point(j)).collect();
    signature_of_points(&pts, depth)
}
