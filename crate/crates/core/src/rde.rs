//! Solving `dX = Σ V_α(X) dwᵅ` along piecewise-linear drivers, with the
//! Jacobian `Φ = ∂X/∂x₀` and its inverse transported alongside.
//!
//! Each driver segment is split into `substeps` equal pieces and every piece
//! is one classical RK4 step of the autonomous system
//!
//! ```text
//! X' = V(X)·δw,   Φ' = M(X)Φ,   (Φ⁻¹)' = −Φ⁻¹M(X),   M = Σ_α DV_α δwᵅ
//! ```
//!
//! in the piece's own unit parameter. The trajectory also stores a cubic
//! Hermite midpoint of every piece, so path functionals can be integrated with
//! Simpson's rule at the solver's resolution.

use std::io;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::driver::DriverPath;
use crate::expr::{EvalError, Expression, Program};
use crate::geometry::VectorField;

#[derive(Debug, thiserror::Error)]
pub enum RdeError {
    #[error("solution left the ball of radius {bound} at t = {time}")]
    BlowUp { time: f64, bound: f64 },
    #[error("non-finite state at t = {time}")]
    NonFinite { time: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// RK4 steps per driver segment.
    pub substeps: usize,
    /// Abort once `|X|∞` exceeds this.
    pub reach_bound: f64,
    /// Transport `Φ` and `Φ⁻¹` as well.
    pub jacobian: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { substeps: 4, reach_bound: 1e6, jacobian: true }
    }
}

/// Driving vector fields compiled together with their Jacobians.
#[derive(Debug, Clone)]
pub struct System {
    fields: Arc<Vec<VectorField>>,
    program: Program,
    n: usize,
}

impl System {
    pub fn new(fields: Vec<VectorField>) -> Result<Self, RdeError> {
        let n = fields.first().map(VectorField::dim).ok_or_else(|| RdeError::Dimension("no driving fields".into()))?;
        if fields.iter().any(|f| f.dim() != n) {
            return Err(RdeError::Dimension("fields of different dimensions".into()));
        }
        let mut outputs: Vec<Expression> = fields.iter().flat_map(|f| f.components().iter().cloned()).collect();
        for f in &fields {
            for row in f.jacobian() {
                outputs.extend(row);
            }
        }
        let program = Program::new(&outputs);
        Ok(System { fields: Arc::new(fields), program, n })
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn shared_fields(&self) -> Arc<Vec<VectorField>> {
        Arc::clone(&self.fields)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn n_drivers(&self) -> usize {
        self.fields.len()
    }

    /// Solve from `x0` along `driver`.
    pub fn solve(&self, x0: &[f64], driver: &DriverPath, opts: &SolverOptions) -> Result<Trajectory, RdeError> {
        Solver::new(self, opts.jacobian).run(x0, driver, opts)
    }
}

/// Convenience wrapper compiling `fields` for a single solve.
pub fn solve(fields: &[VectorField], x0: &[f64], driver: &DriverPath, opts: &SolverOptions) -> Result<Trajectory, RdeError> {
    System::new(fields.to_vec())?.solve(x0, driver, opts)
}

/// Solver state: register scratch and stage buffers.
struct Solver<'a> {
    sys: &'a System,
    jac: bool,
    regs: Vec<f64>,
    vals: Vec<f64>,
}

/// Derivative of the joint state at one stage.
struct Stage {
    dx: Vec<f64>,
    m: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(sys: &'a System, jac: bool) -> Self {
        let d = sys.fields.len();
        let n = sys.n;
        Solver { sys, jac, regs: Vec::new(), vals: vec![0.0; d * n + d * n * n] }
    }

    /// `V(x)·δw` and, if needed, `M(x) = Σ DV_α δwᵅ` (row-major).
    fn stage(&mut self, x: &[f64], dw: &[f64]) -> Result<Stage, EvalError> {
        let n = self.sys.n;
        let d = dw.len();
        self.sys.program.eval_into(x, &mut self.regs, &mut self.vals)?;
        let mut dx = vec![0.0; n];
        for (a, w) in dw.iter().enumerate() {
            for i in 0..n {
                dx[i] += self.vals[a * n + i] * w;
            }
        }
        let mut m = Vec::new();
        if self.jac {
            m = vec![0.0; n * n];
            let off = d * n;
            for (a, w) in dw.iter().enumerate() {
                let base = off + a * n * n;
                for (k, mk) in m.iter_mut().enumerate() {
                    *mk += self.vals[base + k] * w;
                }
            }
        }
        Ok(Stage { dx, m })
    }

    fn run(mut self, x0: &[f64], driver: &DriverPath, opts: &SolverOptions) -> Result<Trajectory, RdeError> {
        let n = self.sys.n;
        let d = self.sys.fields.len();
        if x0.len() != n {
            return Err(RdeError::Dimension(format!("initial point has {} coordinates, fields have {n}", x0.len())));
        }
        if driver.dim() != d {
            return Err(RdeError::Dimension(format!("driver has dimension {}, system has {d} fields", driver.dim())));
        }
        let m = opts.substeps.max(1);
        let pieces = driver.steps() * m;
        let points = 2 * pieces + 1;
        let nn = n * n;

        let mut times = Vec::with_capacity(points);
        let mut dws = Vec::with_capacity(pieces * d);
        let mut xs = Vec::with_capacity(points * n);
        let mut phis = Vec::with_capacity(if self.jac { points * nn } else { 0 });
        let mut invs = Vec::with_capacity(if self.jac { points * nn } else { 0 });

        let ident: Vec<f64> = (0..nn).map(|k| if k % (n + 1) == 0 { 1.0 } else { 0.0 }).collect();
        let mut x = x0.to_vec();
        let mut phi = ident.clone();
        let mut inv = ident;
        times.push(driver.times()[0]);
        xs.extend_from_slice(&x);
        if self.jac {
            phis.extend_from_slice(&phi);
            invs.extend_from_slice(&inv);
        }

        let mut xt = vec![0.0; n];
        let mut pt = vec![0.0; nn];
        let mut it = vec![0.0; nn];
        for seg in 0..driver.steps() {
            let t0 = driver.times()[seg];
            let t1 = driver.times()[seg + 1];
            let dw: Vec<f64> = driver.increment(seg).into_iter().map(|v| v / m as f64).collect();
            let mut start = self.stage(&x, &dw)?;
            for sub in 0..m {
                let ta = t0 + (t1 - t0) * sub as f64 / m as f64;
                let tb = t0 + (t1 - t0) * (sub + 1) as f64 / m as f64;
                dws.extend_from_slice(&dw);

                // classical RK4 on (X, Φ, Φ⁻¹)
                let k1 = &start;
                let (k1p, k1i) = if self.jac { (matmul(&k1.m, &phi, n), neg_matmul(&inv, &k1.m, n)) } else { (vec![], vec![]) };
                axpy(&mut xt, &x, 0.5, &k1.dx);
                if self.jac {
                    axpy(&mut pt, &phi, 0.5, &k1p);
                    axpy(&mut it, &inv, 0.5, &k1i);
                }
                let k2 = self.stage(&xt, &dw)?;
                let (k2p, k2i) = if self.jac { (matmul(&k2.m, &pt, n), neg_matmul(&it, &k2.m, n)) } else { (vec![], vec![]) };
                axpy(&mut xt, &x, 0.5, &k2.dx);
                if self.jac {
                    axpy(&mut pt, &phi, 0.5, &k2p);
                    axpy(&mut it, &inv, 0.5, &k2i);
                }
                let k3 = self.stage(&xt, &dw)?;
                let (k3p, k3i) = if self.jac { (matmul(&k3.m, &pt, n), neg_matmul(&it, &k3.m, n)) } else { (vec![], vec![]) };
                axpy(&mut xt, &x, 1.0, &k3.dx);
                if self.jac {
                    axpy(&mut pt, &phi, 1.0, &k3p);
                    axpy(&mut it, &inv, 1.0, &k3i);
                }
                let k4 = self.stage(&xt, &dw)?;
                let x1: Vec<f64> = (0..n).map(|i| x[i] + (k1.dx[i] + 2.0 * k2.dx[i] + 2.0 * k3.dx[i] + k4.dx[i]) / 6.0).collect();
                check_state(&x1, tb, opts.reach_bound)?;
                let end = self.stage(&x1, &dw)?;

                // Hermite midpoint: (y0 + y1)/2 + (f0 − f1)/8
                times.push(0.5 * (ta + tb));
                for i in 0..n {
                    xs.push(0.5 * (x[i] + x1[i]) + 0.125 * (start.dx[i] - end.dx[i]));
                }
                times.push(tb);
                xs.extend_from_slice(&x1);

                if self.jac {
                    let k4p = matmul(&k4.m, &pt, n);
                    let k4i = neg_matmul(&it, &k4.m, n);
                    let phi1: Vec<f64> = (0..nn).map(|k| phi[k] + (k1p[k] + 2.0 * k2p[k] + 2.0 * k3p[k] + k4p[k]) / 6.0).collect();
                    let inv1: Vec<f64> = (0..nn).map(|k| inv[k] + (k1i[k] + 2.0 * k2i[k] + 2.0 * k3i[k] + k4i[k]) / 6.0).collect();
                    if phi1.iter().chain(&inv1).any(|v| !v.is_finite()) {
                        return Err(RdeError::NonFinite { time: tb });
                    }
                    let f1p = matmul(&end.m, &phi1, n);
                    let f1i = neg_matmul(&inv1, &end.m, n);
                    for k in 0..nn {
                        phis.push(0.5 * (phi[k] + phi1[k]) + 0.125 * (k1p[k] - f1p[k]));
                    }
                    for k in 0..nn {
                        invs.push(0.5 * (inv[k] + inv1[k]) + 0.125 * (k1i[k] - f1i[k]));
                    }
                    phis.extend_from_slice(&phi1);
                    invs.extend_from_slice(&inv1);
                    phi = phi1;
                    inv = inv1;
                }
                x = x1;
                start = end;
            }
        }
        Ok(Trajectory {
            fields: self.sys.shared_fields(),
            n,
            d,
            substeps: m,
            times,
            dw: dws,
            x: xs,
            phi: phis,
            phi_inv: invs,
        })
    }
}

fn check_state(x: &[f64], time: f64, bound: f64) -> Result<(), RdeError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(RdeError::NonFinite { time });
    }
    if x.iter().any(|v| v.abs() > bound) {
        return Err(RdeError::BlowUp { time, bound });
    }
    Ok(())
}

/// `out = base + c·dir`.
fn axpy(out: &mut [f64], base: &[f64], c: f64, dir: &[f64]) {
    for ((o, b), v) in out.iter_mut().zip(base).zip(dir) {
        *o = b + c * v;
    }
}

/// Row-major `a·b` for `n×n` matrices.
fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

fn neg_matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = matmul(a, b, n);
    for v in out.iter_mut() {
        *v = -*v;
    }
    out
}

/// A solved path sampled at every RK4 node and the Hermite midpoint between nodes.
///
/// Point `2j` is the end of piece `j` (point `0` is `x₀`) and point `2j+1` is
/// the midpoint of piece `j`; there are `2P + 1` points for `P` pieces.
#[derive(Debug, Clone)]
pub struct Trajectory {
    fields: Arc<Vec<VectorField>>,
    n: usize,
    d: usize,
    substeps: usize,
    times: Vec<f64>,
    dw: Vec<f64>,
    x: Vec<f64>,
    phi: Vec<f64>,
    phi_inv: Vec<f64>,
}

impl Trajectory {
    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn n_drivers(&self) -> usize {
        self.d
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Number of RK4 pieces `P`.
    pub fn n_pieces(&self) -> usize {
        self.dw.len() / self.d
    }

    /// Number of stored points `2P + 1`.
    pub fn n_points(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, j: usize) -> f64 {
        self.times[j]
    }

    /// Driver increment over piece `p`.
    pub fn piece_increment(&self, p: usize) -> &[f64] {
        &self.dw[p * self.d..(p + 1) * self.d]
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.x[j * self.n..(j + 1) * self.n]
    }

    pub fn initial_point(&self) -> &[f64] {
        self.point(0)
    }

    pub fn final_point(&self) -> &[f64] {
        self.point(self.n_points() - 1)
    }

    pub fn has_jacobian(&self) -> bool {
        !self.phi.is_empty()
    }

    /// Row-major `Φ` at point `j`. Panics if the Jacobian was not transported.
    pub fn jacobian_slice(&self, j: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.phi[j * nn..(j + 1) * nn]
    }

    pub fn inverse_jacobian_slice(&self, j: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.phi_inv[j * nn..(j + 1) * nn]
    }

    pub fn jacobian(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, self.jacobian_slice(j))
    }

    pub fn inverse_jacobian(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, self.inverse_jacobian_slice(j))
    }

    /// Stored point index of driver-mesh node `k`.
    pub fn node_index(&self, k: usize) -> usize {
        2 * k * self.substeps
    }

    /// `max_j ‖Φ_j Φ⁻¹_j − Id‖_max`, a solver health metric.
    pub fn inverse_drift(&self) -> f64 {
        if !self.has_jacobian() {
            return 0.0;
        }
        let id = DMatrix::<f64>::identity(self.n, self.n);
        (0..self.n_points()).map(|j| (self.jacobian(j) * self.inverse_jacobian(j) - &id).abs().max()).fold(0.0, f64::max)
    }

    /// `|X|∞` over the path.
    pub fn sup_norm(&self) -> f64 {
        self.x.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Write the driver-mesh nodes as CSV `t,x1..xn[,det_phi]`.
    pub fn write_csv<W: io::Write>(&self, mut out: W, comment: Option<&str>) -> Result<(), RdeError> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n).map(|i| format!("x{i}")));
        if self.has_jacobian() {
            header.push("det_phi".into());
        }
        w.write_record(&header)?;
        for j in (0..self.n_points()).step_by(2 * self.substeps) {
            let mut rec = vec![format!("{:?}", self.times[j])];
            rec.extend(self.point(j).iter().map(|v| format!("{v:?}")));
            if self.has_jacobian() {
                rec.push(format!("{:?}", self.jacobian(j).determinant()));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Both sides of the pullback identity `Φ_t⁻¹W(X_t) = W(x₀) + ∫₀ᵗ Φ_s⁻¹[V_α, W](X_s) dwᵅ_s`
/// at every stored point.
#[derive(Debug, Clone)]
pub struct PullbackPath {
    pub direct: Vec<Vec<f64>>,
    pub integrated: Vec<Vec<f64>>,
}

impl PullbackPath {
    /// `max_j |direct_j − integrated_j|∞ / max(1, max_j |direct_j|∞)`.
    pub fn relative_residual(&self) -> f64 {
        let scale = self.direct.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        let err = self.direct.iter().zip(&self.integrated).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max);
        err / scale
    }
}

/// Evaluate both sides of the pullback identity for `w` along `traj`.
pub fn pullback_path(traj: &Trajectory, w: &VectorField) -> Result<PullbackPath, RdeError> {
    if !traj.has_jacobian() {
        return Err(RdeError::Dimension("trajectory was solved without the Jacobian".into()));
    }
    let n = traj.dim();
    let d = traj.n_drivers();
    let mut outputs: Vec<Expression> = w.components().to_vec();
    for v in traj.fields() {
        outputs.extend(v.bracket(w).components().iter().cloned());
    }
    let prog = Program::new(&outputs);
    let mut regs = Vec::new();
    let mut vals = vec![0.0; outputs.len()];
    let points = traj.n_points();
    let mut direct = Vec::with_capacity(points);
    // integrand per unit piece parameter: Φ⁻¹ Σ_α [V_α, W] δwᵅ
    let mut integrand = Vec::with_capacity(points);
    for j in 0..points {
        prog.eval_into(traj.point(j), &mut regs, &mut vals)?;
        let inv = traj.inverse_jacobian(j);
        direct.push((&inv * nalgebra::DVector::from_column_slice(&vals[..n])).iter().copied().collect::<Vec<_>>());
        let p = if j == points - 1 { (j - 1) / 2 } else { j / 2 };
        let dw = traj.piece_increment(p);
        let mut b = nalgebra::DVector::zeros(n);
        for a in 0..d {
            for i in 0..n {
                b[i] += vals[n + a * n + i] * dw[a];
            }
        }
        integrand.push(inv * b);
    }
    // piece increments use the piece's own δw at both ends, so even nodes
    // shared by two pieces are recomputed per piece
    let mut integrated = Vec::with_capacity(points);
    let mut acc = nalgebra::DVector::from_column_slice(&direct[0]);
    integrated.push(acc.iter().copied().collect::<Vec<_>>());
    for p in 0..traj.n_pieces() {
        let dw = traj.piece_increment(p);
        let q0 = piece_value(&prog, traj, 2 * p, dw, n, d)?;
        let qm = &integrand[2 * p + 1];
        let q1 = piece_value(&prog, traj, 2 * p + 2, dw, n, d)?;
        let half = &acc + (&q0 * 5.0 + qm * 8.0 - &q1) / 24.0;
        integrated.push(half.iter().copied().collect());
        acc += (&q0 + qm * 4.0 + &q1) / 6.0;
        integrated.push(acc.iter().copied().collect());
    }
    Ok(PullbackPath { direct, integrated })
}

fn piece_value(prog: &Program, traj: &Trajectory, j: usize, dw: &[f64], n: usize, d: usize) -> Result<nalgebra::DVector<f64>, RdeError> {
    let vals = prog.eval(traj.point(j))?;
    let mut b = nalgebra::DVector::zeros(n);
    for a in 0..d {
        for i in 0..n {
            b[i] += vals[n + a * n + i] * dw[a];
        }
    }
    Ok(traj.inverse_jacobian(j) * b)
}
