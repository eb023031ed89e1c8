//! A fast invariant suite over every module, run by the `selftest` command.
//!
//! Each check compares a computed quantity against an independent value and
//! reports the measured error next to its tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::driver::{parse_driver_formulas, sample_fbm, smooth_driver, uniform_mesh, DriverPath, FbmSpec};
use crate::geometry::{build_frame, exterior_derivative_pair, growth_vector, FrameOptions, OneForm, VectorField};
use crate::integrals::{iterated_line_integral, line_integral, malliavin_kernel, signature, TensorSeries};
use crate::lab::{simulate_samples, ExperimentSpec, LabTolerances};
use crate::nondeg::{construct_step2, criterion_elliptic, heisenberg_condition, GridSpec, Verdict, ZeroTolerances};
use crate::rde::{pullback_path, SolverOptions, System};
use crate::reconstruct::{build_grid, recover_route, true_route, Regime, RouteOptions};
use crate::Expression;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Outcome = Result<(bool, String), String>;

fn within(err: f64, tol: f64) -> (bool, String) {
    (err <= tol, format!("error {err:.3e}, tolerance {tol:.0e}"))
}

fn heisenberg() -> Vec<VectorField> {
    vec![VectorField::parse(&["1", "0", "-y"]).expect("valid"), VectorField::parse(&["0", "1", "x"]).expect("valid")]
}

fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn fbm(seed: u64, dim: usize, steps: usize) -> Result<DriverPath, String> {
    sample_fbm(&FbmSpec { hurst: 0.5, horizon: 1.0, steps, seed, dim }).map_err(|e| e.to_string())
}

fn expr_derivatives() -> Outcome {
    let e = Expression::parse("sin(x*y) + bump(0.5*x)*exp(y) - x/(1 + y^2)").map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p = random_point(&mut rng, 2);
        for i in 0..2 {
            let h = 1e-4;
            let mut a = p.clone();
            let mut b = p.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (e.eval(&a).map_err(|e| e.to_string())? - e.eval(&b).map_err(|e| e.to_string())?) / (2.0 * h);
            let exact = e.diff(i).eval(&p).map_err(|e| e.to_string())?;
            worst = worst.max((exact - fd).abs() / exact.abs().max(1.0));
        }
    }
    Ok(within(worst, 1e-6))
}

fn bump_flatness() -> Outcome {
    let mut e = Expression::parse("bump(x)").map_err(|e| e.to_string())?;
    for _ in 0..4 {
        for u in [-2.0, -1.0, 1.0, 3.0] {
            if e.eval(&[u]).map_err(|e| e.to_string())? != 0.0 {
                return Ok((false, format!("nonzero derivative at {u}")));
            }
        }
        e = e.diff(0);
    }
    Ok((true, "bump and three derivatives vanish outside (-1, 1)".into()))
}

fn bracket_identities() -> Outcome {
    let fields = [
        VectorField::parse(&["1 + y*z", "sin(x)", "x^2"]).map_err(|e| e.to_string())?,
        VectorField::parse(&["cos(z)", "1", "x*y"]).map_err(|e| e.to_string())?,
        VectorField::parse(&["z", "x - y", "1 + 0.5*y^2"]).map_err(|e| e.to_string())?,
    ];
    let (a, b, c) = (&fields[0], &fields[1], &fields[2]);
    let jacobi = a.bracket(&b.bracket(c)).add(&b.bracket(&c.bracket(a))).add(&c.bracket(&a.bracket(b)));
    let anti = a.bracket(b).add(&b.bracket(a));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = random_point(&mut rng, 3);
        worst = worst.max(jacobi.eval(&p).map_err(|e| e.to_string())?.amax());
        worst = worst.max(anti.eval(&p).map_err(|e| e.to_string())?.amax());
    }
    Ok(within(worst, 1e-9))
}

fn cartan_identity() -> Outcome {
    let phi = OneForm::parse(&["x*y + sin(z)", "exp(0.3*x)", "y*z^2"]).map_err(|e| e.to_string())?;
    let x = VectorField::parse(&["1 + y^2", "sin(x*z)", "x"]).map_err(|e| e.to_string())?;
    let ys = [VectorField::parse(&["y", "z", "x"]).map_err(|e| e.to_string())?, VectorField::coordinate(3, 1)];
    let lhs = OneForm::exact(&phi.pair(&x), 3).add(&phi.exterior_derivative().interior(&x));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = random_point(&mut rng, 3);
        for y in &ys {
            let oracle = x.apply(&phi.pair(y)).eval(&p).map_err(|e| e.to_string())? - phi.pair(&x.bracket(y)).eval(&p).map_err(|e| e.to_string())?;
            let got = lhs.pair(y).eval(&p).map_err(|e| e.to_string())?;
            worst = worst.max((got - oracle).abs());
        }
    }
    Ok(within(worst, 1e-9))
}

fn heisenberg_frame() -> Outcome {
    let v = heisenberg();
    let growth = growth_vector(&v, &[0.3, -0.2, 0.1], 4, 1e-8).map_err(|e| e.to_string())?;
    if growth != [2, 3] {
        return Ok((false, format!("growth vector {growth:?}")));
    }
    let frame = build_frame(&v, &[0.0; 3], &FrameOptions::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p = random_point(&mut rng, 3);
        let c = frame.coframe_at(&p).map_err(|e| e.to_string())?;
        let expect = [p[1] / 2.0, -p[0] / 2.0, 0.5];
        for (j, e) in expect.iter().enumerate() {
            worst = worst.max((c[(2, j)] - e).abs());
        }
    }
    Ok(within(worst, 1e-12))
}

fn levy_area() -> Outcome {
    let system = System::new(heisenberg()).map_err(|e| e.to_string())?;
    let w = fbm(5, 2, 1024)?;
    let traj = system.solve(&[0.0; 3], &w, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let mut area = 0.0;
    for k in 0..w.steps() {
        let (a, b) = (w.value(k), w.value(k + 1));
        area += 0.5 * (a[0] + b[0]) * (b[1] - a[1]) - 0.5 * (a[1] + b[1]) * (b[0] - a[0]);
    }
    Ok(within(((traj.final_point()[2] - area) / area).abs(), 1e-8))
}

fn exponential_solution() -> Outcome {
    let system = System::new(vec![VectorField::parse(&["x"]).map_err(|e| e.to_string())?]).map_err(|e| e.to_string())?;
    let w = fbm(6, 1, 1024)?;
    let traj = system.solve(&[1.3], &w, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for k in 0..=w.steps() {
        let exact = 1.3 * w.value(k)[0].exp();
        worst = worst.max(((traj.point(traj.node_index(k))[0] - exact) / exact).abs());
    }
    worst = worst.max(traj.inverse_drift());
    Ok(within(worst, 1e-8))
}

fn pullback_identity() -> Outcome {
    let fields = vec![
        VectorField::parse(&["1 + 0.2*sin(y)", "0.1*x*y", "0.2*cos(z)"]).map_err(|e| e.to_string())?,
        VectorField::parse(&["0.1*z", "1", "x + 0.1*y^2"]).map_err(|e| e.to_string())?,
    ];
    let system = System::new(fields).map_err(|e| e.to_string())?;
    let traj = system.solve(&[0.1, 0.2, -0.1], &fbm(7, 2, 1024)?, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let w = VectorField::parse(&["y", "x*z", "1 + x^2"]).map_err(|e| e.to_string())?;
    let pb = pullback_path(&traj, &w).map_err(|e| e.to_string())?;
    Ok(within(pb.relative_residual(), 1e-6))
}

fn signature_identities() -> Outcome {
    let w = fbm(8, 2, 64)?;
    let whole = signature(&w, 4);
    let mut worst: f64 = 0.0;
    for k in [1, 17, 40, 63] {
        let a = signature(&w.slice(0, k).map_err(|e| e.to_string())?, 4);
        let b = signature(&w.slice(k, 64).map_err(|e| e.to_string())?, 4);
        worst = worst.max(a.mul(&b).max_abs_diff(&whole));
    }
    let back = signature(&w.reversed(), 4);
    worst = worst.max(whole.mul(&back).max_abs_diff(&TensorSeries::identity(2, 4)));
    for (i, j) in [(0, 1), (0, 0), (1, 1)] {
        let shuffle = whole.coefficient(&[i]) * whole.coefficient(&[j]) - whole.coefficient(&[i, j]) - whole.coefficient(&[j, i]);
        worst = worst.max(shuffle.abs());
    }
    Ok(within(worst, 1e-9))
}

fn exact_form_integral() -> Outcome {
    let fields = vec![
        VectorField::parse(&["1 + 0.1*y^2", "0.2*x"]).map_err(|e| e.to_string())?,
        VectorField::parse(&["0.1*sin(x)", "1"]).map_err(|e| e.to_string())?,
    ];
    let system = System::new(fields).map_err(|e| e.to_string())?;
    let f = Expression::parse("x^2*y - sin(x - y)").map_err(|e| e.to_string())?;
    let formulas = parse_driver_formulas(&["0.8*sin(2*pi*t)", "t - 0.4*t^2"]).map_err(|e| e.to_string())?;
    let w = smooth_driver(&formulas, uniform_mesh(1.0, 1024)).map_err(|e| e.to_string())?;
    let x0 = [0.2, 0.1];
    let traj = system.solve(&x0, &w, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let value = line_integral(&OneForm::exact(&f, 2), &traj).map_err(|e| e.to_string())?;
    let expect = f.eval(traj.final_point()).map_err(|e| e.to_string())? - f.eval(&x0).map_err(|e| e.to_string())?;
    Ok(within(((value - expect) / expect).abs(), 1e-8))
}

fn kernel_finite_difference() -> Outcome {
    let fields = vec![
        VectorField::parse(&["1 + 0.2*x*y", "0.1*y^2"]).map_err(|e| e.to_string())?,
        VectorField::parse(&["0.3*sin(y)", "1 - 0.1*x"]).map_err(|e| e.to_string())?,
    ];
    let system = System::new(fields).map_err(|e| e.to_string())?;
    let forms = [OneForm::parse(&["x*y + cos(y)", "sin(2*x)"]).map_err(|e| e.to_string())?];
    let w = fbm(9, 2, 128)?;
    let formulas = parse_driver_formulas(&["0.7*sin(pi*t) + 0.2*t^2", "-0.5*t"]).map_err(|e| e.to_string())?;
    let h = smooth_driver(&formulas, uniform_mesh(1.0, 128)).map_err(|e| e.to_string())?;
    let opts = SolverOptions::default();
    let x0 = [0.1, -0.2];
    let traj = system.solve(&x0, &w, &opts).map_err(|e| e.to_string())?;
    let dh = malliavin_kernel(&forms[0], &traj).map_err(|e| e.to_string())?.directional(&h).map_err(|e| e.to_string())?;
    let value = |eps: f64| -> Result<f64, String> {
        let shifted = w.shift(&h, eps).map_err(|e| e.to_string())?;
        let t = system.solve(&x0, &shifted, &opts).map_err(|e| e.to_string())?;
        Ok(iterated_line_integral(&forms, &t).map_err(|e| e.to_string())?.value)
    };
    let eps = 1e-4 * w.sup_norm().max(1.0);
    let coarse = (value(eps)? - value(-eps)?) / (2.0 * eps);
    let fine = (value(eps / 2.0)? - value(-eps / 2.0)?) / eps;
    let fd = (4.0 * fine - coarse) / 3.0;
    Ok(within(((dh - fd) / fd).abs(), 1e-3))
}

fn criterion_verdicts() -> Outcome {
    let tol = ZeroTolerances::default();
    let grid = GridSpec::cube(2, 1.0, 24);
    let closed = OneForm::exact(&Expression::parse("bump(x)*bump(y)").map_err(|e| e.to_string())?, 2);
    let ellip = OneForm::parse(&["bump(x)*bump(y)*exp(bump(y)^2)", "0"]).map_err(|e| e.to_string())?;
    let a = criterion_elliptic(&closed, &grid, &tol).map_err(|e| e.to_string())?.verdict;
    let b = criterion_elliptic(&ellip, &grid, &tol).map_err(|e| e.to_string())?.verdict;
    let c2 = Expression::parse("x^2*y").map_err(|e| e.to_string())?;
    let c = heisenberg_condition(&Expression::zero(), &c2, &GridSpec::cube(2, 1.0, 20), &tol).map_err(|e| e.to_string())?.verdict;
    let ok = a == Verdict::Violated && b == Verdict::Satisfied && c == Verdict::Satisfied;
    Ok((ok, format!("closed {a:?}, elliptic example {b:?}, Heisenberg c2 = x^2 y {c:?}")))
}

fn step2_constructor() -> Outcome {
    let v = heisenberg();
    let c1 = Expression::parse("sin(x*y) + z").map_err(|e| e.to_string())?;
    let c2 = Expression::parse("x^2*y - cos(z)").map_err(|e| e.to_string())?;
    let phi = construct_step2(&c1, &c2, &v[0], &v[1]).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = random_point(&mut rng, 3);
        worst = worst.max(exterior_derivative_pair(&phi, &v[0], &v[1], &p).map_err(|e| e.to_string())?.abs());
    }
    Ok(within(worst, 1e-10))
}

fn route_recovery() -> Outcome {
    let system = System::new((0..2).map(|i| VectorField::coordinate(2, i)).collect()).map_err(|e| e.to_string())?;
    let grid = build_grid(&[-2.0, -2.0], &[2.0, 2.0], 1.0, 0.1, &Regime::Elliptic).map_err(|e| e.to_string())?;
    let formulas = parse_driver_formulas(&["2.4*t", "0.2*t + 0.1*sin(pi*t)"]).map_err(|e| e.to_string())?;
    let w = smooth_driver(&formulas, uniform_mesh(1.0, 256)).map_err(|e| e.to_string())?;
    let opts = SolverOptions { jacobian: false, ..SolverOptions::default() };
    let traj = system.solve(&[-1.5, -1.5], &w, &opts).map_err(|e| e.to_string())?;
    let truth = true_route(&traj, &grid);
    let rec = recover_route(&traj, &grid, &RouteOptions::default()).map_err(|e| e.to_string())?;
    Ok((rec.word == truth && truth.len() == 3, format!("recovered {:?}, true {:?}", rec.word.labels(&grid), truth.labels(&grid))))
}

fn sampling_reproducible() -> Outcome {
    let system = System::new((0..2).map(|i| VectorField::coordinate(2, i)).collect()).map_err(|e| e.to_string())?;
    let f = Expression::parse("bump(x)*bump(y)").map_err(|e| e.to_string())?;
    let spec = ExperimentSpec {
        system,
        x0: vec![0.1, 0.2],
        driver: FbmSpec { hurst: 0.5, horizon: 1.0, steps: 64, seed: 11, dim: 2 },
        solver: SolverOptions::default(),
        forms: vec![OneForm::exact(&f, 2)],
        event: Vec::new(),
        replicates: 16,
        tolerances: LabTolerances::default(),
        kernel: true,
    };
    let a = simulate_samples(&spec).map_err(|e| e.to_string())?;
    let b = simulate_samples(&spec).map_err(|e| e.to_string())?;
    let same = a.samples.iter().zip(&b.samples).all(|(x, y)| x.value.to_bits() == y.value.to_bits() && x.kernel_sup.to_bits() == y.kernel_sup.to_bits());
    Ok((same && a.len() == 16, format!("{} replicates compared bitwise", a.len())))
}

/// Run every check. Errors inside a check count as failures.
pub fn run_selftest() -> Vec<Check> {
    let checks: [(&'static str, fn() -> Outcome); 16] = [
        ("expr: derivatives match finite differences", expr_derivatives),
        ("expr: bump is flat outside (-1, 1)", bump_flatness),
        ("geometry: bracket antisymmetry and Jacobi", bracket_identities),
        ("geometry: Cartan identity", cartan_identity),
        ("geometry: Heisenberg growth and coframe", heisenberg_frame),
        ("rde: linear equation is exponential", exponential_solution),
        ("rde: Heisenberg third coordinate is Levy area", levy_area),
        ("rde: pullback identity", pullback_identity),
        ("integrals: Chen, reversal and shuffle", signature_identities),
        ("integrals: exact form integrates to increment", exact_form_integral),
        ("integrals: kernel matches finite differences", kernel_finite_difference),
        ("nondeg: criterion verdicts", criterion_verdicts),
        ("nondeg: step-two constructor postcondition", step2_constructor),
        ("reconstruct: straight crossing is recovered", route_recovery),
        ("lab: sampling is reproducible", sampling_reproducible),
        ("driver: same seed gives the same path", same_seed_same_path),
    ];
    checks
        .into_iter()
        .map(|(name, run)| match run() {
            Ok((passed, detail)) => Check { name, passed, detail },
            Err(err) => Check { name, passed: false, detail: format!("error: {err}") },
        })
        .collect()
}

fn same_seed_same_path() -> Outcome {
    let spec = FbmSpec { hurst: 0.7, horizon: 1.0, steps: 128, seed: 12, dim: 2 };
    let a = sample_fbm(&spec).map_err(|e| e.to_string())?;
    let b = sample_fbm(&spec).map_err(|e| e.to_string())?;
    Ok((a == b, "two draws compared bitwise".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
