//! Cumulative Simpson quadrature on the `2P + 1` trajectory points.
//!
//! Integrands are given per piece: `density(p, k, out)` writes the integrand
//! at local point `k ∈ {0, 1, 2}` of piece `p` (start, midpoint, end), with
//! respect to the piece's unit parameter. Shared nodes may take different
//! values in adjacent pieces because the driver increment changes.

/// `∫₀^{t_j}` at every point `j`, for a `dim`-valued integrand.
pub fn cumulative_forward(pieces: usize, dim: usize, mut density: impl FnMut(usize, usize, &mut [f64])) -> Vec<f64> {
    let mut out = vec![0.0; (2 * pieces + 1) * dim];
    let (mut q0, mut qm, mut q1) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    for p in 0..pieces {
        density(p, 0, &mut q0);
        density(p, 1, &mut qm);
        density(p, 2, &mut q1);
        let base = 2 * p * dim;
        for i in 0..dim {
            let acc = out[base + i];
            out[base + dim + i] = acc + (5.0 * q0[i] + 8.0 * qm[i] - q1[i]) / 24.0;
            out[base + 2 * dim + i] = acc + (q0[i] + 4.0 * qm[i] + q1[i]) / 6.0;
        }
    }
    out
}

/// `∫_{t_j}^T` at every point `j`.
pub fn cumulative_backward(pieces: usize, dim: usize, mut density: impl FnMut(usize, usize, &mut [f64])) -> Vec<f64> {
    let mut out = vec![0.0; (2 * pieces + 1) * dim];
    let (mut q0, mut qm, mut q1) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    for p in (0..pieces).rev() {
        density(p, 0, &mut q0);
        density(p, 1, &mut qm);
        density(p, 2, &mut q1);
        let base = 2 * p * dim;
        for i in 0..dim {
            let acc = out[base + 2 * dim + i];
            out[base + dim + i] = acc + (-q0[i] + 8.0 * qm[i] + 5.0 * q1[i]) / 24.0;
            out[base + i] = acc + (q0[i] + 4.0 * qm[i] + q1[i]) / 6.0;
        }
    }
    out
}

/// `∫₀^T` of a scalar integrand.
pub fn total(pieces: usize, mut density: impl FnMut(usize, usize) -> f64) -> f64 {
    (0..pieces).map(|p| (density(p, 0) + 4.0 * density(p, 1) + density(p, 2)) / 6.0).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratics_exact_at_all_points() {
        // pieces of unit length in u; t = p + u, integrand t^2
        let f = |p: usize, k: usize| (p as f64 + 0.5 * k as f64).powi(2);
        let fwd = cumulative_forward(3, 1, |p, k, out| out[0] = f(p, k));
        for (j, v) in fwd.iter().enumerate() {
            let t = 0.5 * j as f64;
            assert!((v - t.powi(3) / 3.0).abs() < 1e-12);
        }
        let bwd = cumulative_backward(3, 1, |p, k, out| out[0] = f(p, k));
        for (j, v) in bwd.iter().enumerate() {
            let t = 0.5 * j as f64;
            assert!((v - (27.0 - t.powi(3)) / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cubics_exact_at_nodes() {
        let f = |p: usize, k: usize| (p as f64 + 0.5 * k as f64).powi(3);
        let fwd = cumulative_forward(3, 1, |p, k, out| out[0] = f(p, k));
        for j in (0..fwd.len()).step_by(2) {
            let t = 0.5 * j as f64;
            assert!((fwd[j] - t.powi(4) / 4.0).abs() < 1e-12);
        }
        assert!((total(3, f) - 81.0 / 4.0).abs() < 1e-12);
    }
}
