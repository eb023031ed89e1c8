//! Line integrals, iterated line integrals and their Malliavin kernels along
//! solved trajectories, plus truncated signatures.
//!
//! Along the solved path `dX = V_α(X) dwᵅ`, so a one-form integrates as
//! `∫ φ(dX) = ∫ (φ·V_α)(X) dwᵅ`. Every functional below is reduced to
//! integrands of that shape and integrated with Simpson's rule on each RK4
//! piece, using the Hermite midpoints stored in the trajectory.

pub mod quadrature;
pub mod signature;

use serde::Serialize;

use crate::driver::DriverPath;
use crate::expr::{EvalError, Expression, Program};
use crate::geometry::{CompiledFields, OneForm, VectorField};
use crate::rde::Trajectory;

use quadrature::{cumulative_backward, cumulative_forward, total};

pub use signature::{signature, signature_of_points, signature_of_trajectory, TensorSeries};

#[derive(Debug, thiserror::Error)]
pub enum IntegralError {
    #[error("trajectory was solved without the Jacobian")]
    MissingJacobian,
    #[error("direction mesh does not match the trajectory ({0})")]
    MeshMismatch(String),
    #[error("at least one form is required")]
    NoForms,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A one-form compiled against the driving fields: evaluates `φ·V_α` and,
/// optionally, `∇(φ·V_α)` at points.
#[derive(Debug, Clone)]
pub struct FormEvaluator {
    program: Program,
    n: usize,
    d: usize,
    gradient: bool,
}

/// Pointwise values of a [`FormEvaluator`] along a trajectory.
#[derive(Debug, Clone)]
pub struct FormTrace {
    /// `(φ·V_α)(X_j)`, `points × d`.
    pub paired: Vec<f64>,
    /// `∂ᵢ(φ·V_α)(X_j)`, `points × d × n`; empty without gradients.
    pub gradient: Vec<f64>,
}

impl FormEvaluator {
    pub fn new(phi: &OneForm, fields: &[VectorField], gradient: bool) -> Self {
        let n = phi.dim();
        let paired: Vec<Expression> = fields.iter().map(|v| phi.pair(v)).collect();
        let mut outputs = paired.clone();
        if gradient {
            for p in &paired {
                outputs.extend((0..n).map(|i| p.diff(i)));
            }
        }
        FormEvaluator { program: Program::new(&outputs), n, d: fields.len(), gradient }
    }

    pub fn trace(&self, traj: &Trajectory) -> Result<FormTrace, IntegralError> {
        if traj.dim() != self.n || traj.n_drivers() != self.d {
            return Err(IntegralError::Dimension("form and trajectory disagree".into()));
        }
        let points = traj.n_points();
        let (n, d) = (self.n, self.d);
        let mut paired = Vec::with_capacity(points * d);
        let mut gradient = Vec::with_capacity(if self.gradient { points * d * n } else { 0 });
        let mut regs = Vec::new();
        let mut out = vec![0.0; self.program.n_outputs()];
        for j in 0..points {
            self.program.eval_into(traj.point(j), &mut regs, &mut out)?;
            paired.extend_from_slice(&out[..d]);
            if self.gradient {
                gradient.extend_from_slice(&out[d..]);
            }
        }
        Ok(FormTrace { paired, gradient })
    }

    /// Like [`trace`](Self::trace), for a form known to vanish outside the open
    /// box `(lower, upper)`: points outside are set to zero without evaluation.
    pub fn trace_in_box(&self, traj: &Trajectory, lower: &[f64], upper: &[f64]) -> Result<FormTrace, IntegralError> {
        if traj.dim() != self.n || traj.n_drivers() != self.d || lower.len() != self.n || upper.len() != self.n {
            return Err(IntegralError::Dimension("form, box and trajectory disagree".into()));
        }
        let points = traj.n_points();
        let (n, d) = (self.n, self.d);
        let mut paired = vec![0.0; points * d];
        let mut gradient = vec![0.0; if self.gradient { points * d * n } else { 0 }];
        let mut regs = Vec::new();
        let mut out = vec![0.0; self.program.n_outputs()];
        for j in 0..points {
            let x = traj.point(j);
            if !x.iter().zip(lower.iter().zip(upper)).all(|(v, (a, b))| a < v && v < b) {
                continue;
            }
            self.program.eval_into(x, &mut regs, &mut out)?;
            paired[j * d..(j + 1) * d].copy_from_slice(&out[..d]);
            if self.gradient {
                gradient[j * d * n..(j + 1) * d * n].copy_from_slice(&out[d..]);
            }
        }
        Ok(FormTrace { paired, gradient })
    }
}

impl FormTrace {
    /// True when the form vanishes at every stored point.
    pub fn is_zero(&self) -> bool {
        self.paired.iter().all(|v| *v == 0.0)
    }
}

/// `Σ_α a[j·d + α] δwᵅ_p`: a pointwise row contracted with a piece increment.
fn contract(a: &[f64], j: usize, dw: &[f64]) -> f64 {
    let d = dw.len();
    a[j * d..(j + 1) * d].iter().zip(dw).map(|(x, w)| x * w).sum()
}

/// `∫₀ᵀ φ(dX_t)` from a precomputed trace.
pub fn line_integral_from_trace(trace: &FormTrace, traj: &Trajectory) -> f64 {
    total(traj.n_pieces(), |p, k| contract(&trace.paired, 2 * p + k, traj.piece_increment(p)))
}

/// `∫₀ᵀ φ(dX_t)`.
pub fn line_integral(phi: &OneForm, traj: &Trajectory) -> Result<f64, IntegralError> {
    let trace = FormEvaluator::new(phi, traj.fields(), false).trace(traj)?;
    Ok(line_integral_from_trace(&trace, traj))
}

/// An iterated integral with the running factors `G^k` and `H^k` on every point.
#[derive(Debug, Clone, Serialize)]
pub struct IteratedIntegral {
    pub value: f64,
    /// `G^k_t = ∫_{t₁<…<t_{k−1}<t} φ₁(dX)…φ_{k−1}(dX)`, for `k = 1..m`.
    pub g: Vec<Vec<f64>>,
    /// `H^k_t = ∫_{t<t_{k+1}<…<t_m} φ_{k+1}(dX)…φ_m(dX)`, for `k = 1..m`.
    pub h: Vec<Vec<f64>>,
}

/// The forward/backward recursions over precomputed traces.
pub fn iterated_from_traces(traces: &[FormTrace], traj: &Trajectory) -> Result<IteratedIntegral, IntegralError> {
    let m = traces.len();
    if m == 0 {
        return Err(IntegralError::NoForms);
    }
    let pieces = traj.n_pieces();
    let points = traj.n_points();
    let mut g = vec![vec![1.0; points]];
    for trace in &traces[..m - 1] {
        let prev = g.last().expect("nonempty");
        let next = cumulative_forward(pieces, 1, |p, k, out| {
            let j = 2 * p + k;
            out[0] = prev[j] * contract(&trace.paired, j, traj.piece_increment(p));
        });
        g.push(next);
    }
    let last = &g[m - 1];
    let value = total(pieces, |p, k| {
        let j = 2 * p + k;
        last[j] * contract(&traces[m - 1].paired, j, traj.piece_increment(p))
    });
    let mut h = vec![vec![1.0; points]];
    for trace in traces[1..].iter().rev() {
        let prev = h.last().expect("nonempty");
        let next = cumulative_backward(pieces, 1, |p, k, out| {
            let j = 2 * p + k;
            out[0] = prev[j] * contract(&trace.paired, j, traj.piece_increment(p));
        });
        h.push(next);
    }
    h.reverse();
    Ok(IteratedIntegral { value, g, h })
}

/// `t ↦ ∫₀ᵗ prev(s) φ(dX_s)` on every point: appends one letter to a running
/// iterated integral `prev` (use all ones for the first letter).
pub fn extend_running(prev: &[f64], trace: &FormTrace, traj: &Trajectory) -> Vec<f64> {
    cumulative_forward(traj.n_pieces(), 1, |p, k, out| {
        let j = 2 * p + k;
        out[0] = prev[j] * contract(&trace.paired, j, traj.piece_increment(p));
    })
}

/// `∫_{0<t₁<…<t_m<T} φ₁(dX_{t₁})…φ_m(dX_{t_m})`.
pub fn iterated_line_integral(forms: &[OneForm], traj: &Trajectory) -> Result<IteratedIntegral, IntegralError> {
    let traces = forms
        .iter()
        .map(|f| FormEvaluator::new(f, traj.fields(), false).trace(traj))
        .collect::<Result<Vec<_>, _>>()?;
    iterated_from_traces(&traces, traj)
}

/// The row `k(t) = (k_1(t), …, k_d(t))` with `D_hF = ∫₀ᵀ k_α(t) dhᵅ_t`.
#[derive(Debug, Clone, Serialize)]
pub struct MalliavinKernel {
    pub times: Vec<f64>,
    /// `points × d`.
    pub values: Vec<f64>,
    d: usize,
    substeps: usize,
}

impl MalliavinKernel {
    pub fn n_drivers(&self) -> usize {
        self.d
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.d..(j + 1) * self.d]
    }

    /// `sup_t max_α |k_α(t)|`.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `D_hF = ∫ k dh` for a direction `h` on the driver mesh.
    pub fn directional(&self, h: &DriverPath) -> Result<f64, IntegralError> {
        let pieces = (self.times.len() - 1) / 2;
        if h.dim() != self.d || h.steps() * self.substeps != pieces {
            return Err(IntegralError::MeshMismatch(format!("{} segments × {} substeps vs {pieces} pieces", h.steps(), self.substeps)));
        }
        let m = self.substeps as f64;
        let incs: Vec<Vec<f64>> = (0..h.steps()).map(|s| h.increment(s).into_iter().map(|v| v / m).collect()).collect();
        Ok(total(pieces, |p, k| contract(&self.values, 2 * p + k, &incs[p / self.substeps])))
    }

    /// Write `t,k1..kd` as CSV.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W, comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let header: Vec<String> = std::iter::once("t".to_string()).chain((1..=self.d).map(|a| format!("k{a}"))).collect();
        writeln!(out, "{}", header.join(","))?;
        for (j, t) in self.times.iter().enumerate() {
            let row: Vec<String> = self.row(j).iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{t:?},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Everything needed to evaluate `F` and its kernel along many trajectories of one system.
#[derive(Debug, Clone)]
pub struct PathFunctional {
    forms: Vec<FormEvaluator>,
    fields: CompiledFields,
    n: usize,
    d: usize,
}

/// `F`, its kernel and the iterated-integral factors along one trajectory.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub kernel: Option<MalliavinKernel>,
    pub iterated: IteratedIntegral,
    /// `η_t = ∫_t^T Σ_k G^kH^k dζ^k` on every point (`points × n`); empty without the kernel.
    pub eta: Vec<f64>,
}

impl PathFunctional {
    /// The iterated integral of `forms` (a single form gives the line integral).
    pub fn new(forms: &[OneForm], fields: &[VectorField]) -> Result<Self, IntegralError> {
        if forms.is_empty() {
            return Err(IntegralError::NoForms);
        }
        let n = forms[0].dim();
        Ok(PathFunctional {
            forms: forms.iter().map(|f| FormEvaluator::new(f, fields, true)).collect(),
            fields: CompiledFields::new(fields),
            n,
            d: fields.len(),
        })
    }

    pub fn evaluate(&self, traj: &Trajectory, with_kernel: bool) -> Result<Evaluation, IntegralError> {
        let traces = self.forms.iter().map(|f| f.trace(traj)).collect::<Result<Vec<_>, _>>()?;
        let iterated = iterated_from_traces(&traces, traj)?;
        if !with_kernel {
            return Ok(Evaluation { value: iterated.value, kernel: None, iterated, eta: Vec::new() });
        }
        if !traj.has_jacobian() {
            return Err(IntegralError::MissingJacobian);
        }
        let (n, d) = (self.n, self.d);
        let pieces = traj.n_pieces();
        let points = traj.n_points();

        // η_t = ∫_t^T Σ_k G^k H^k Σ_α ∇(φ_k·V_α) Φ dwᵅ, a row in ℝⁿ
        let mut grad_row = vec![0.0; n];
        let eta = cumulative_backward(pieces, n, |p, k, out| {
            let j = 2 * p + k;
            let dw = traj.piece_increment(p);
            grad_row.iter_mut().for_each(|v| *v = 0.0);
            for (idx, trace) in traces.iter().enumerate() {
                let weight = iterated.g[idx][j] * iterated.h[idx][j];
                if weight == 0.0 {
                    continue;
                }
                for (a, w) in dw.iter().enumerate() {
                    let base = (j * d + a) * n;
                    for (l, gr) in grad_row.iter_mut().enumerate() {
                        *gr += weight * w * trace.gradient[base + l];
                    }
                }
            }
            let phi = traj.jacobian_slice(j);
            for (i, o) in out.iter_mut().enumerate() {
                *o = (0..n).map(|l| grad_row[l] * phi[l * n + i]).sum();
            }
        });

        let mut values = Vec::with_capacity(points * d);
        for j in 0..points {
            let inv = traj.inverse_jacobian_slice(j);
            let eta_j = &eta[j * n..(j + 1) * n];
            let row: Vec<f64> = (0..n).map(|i| (0..n).map(|l| eta_j[l] * inv[l * n + i]).sum()).collect();
            let v = self.fields.eval(traj.point(j))?;
            for a in 0..d {
                let transported: f64 = (0..n).map(|i| row[i] * v[(i, a)]).sum();
                let local: f64 = traces.iter().enumerate().map(|(idx, t)| iterated.g[idx][j] * iterated.h[idx][j] * t.paired[j * d + a]).sum();
                values.push(transported + local);
            }
        }
        let kernel = MalliavinKernel { times: traj.times().to_vec(), values, d, substeps: traj.substeps() };
        Ok(Evaluation { value: iterated.value, kernel: Some(kernel), iterated, eta })
    }
}

/// Kernel of `F = ∫ φ(dX)`: `k_α(t) = ((ζ_T − ζ_t)Φ_t⁻¹ + φ(X_t))·V_α(X_t)`.
pub fn malliavin_kernel(phi: &OneForm, traj: &Trajectory) -> Result<MalliavinKernel, IntegralError> {
    malliavin_kernel_iterated(std::slice::from_ref(phi), traj)
}

/// Kernel of the iterated integral of `forms`.
pub fn malliavin_kernel_iterated(forms: &[OneForm], traj: &Trajectory) -> Result<MalliavinKernel, IntegralError> {
    let f = PathFunctional::new(forms, traj.fields())?;
    Ok(f.evaluate(traj, true)?.kernel.expect("kernel requested"))
}
