use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use stochline::driver::sample_fbm;
use stochline::integrals::{line_integral, malliavin_kernel, signature};
use stochline::nondeg::{construct_step2, criterion_step2};
use stochline::{Expression, FbmSpec, GridSpec, OneForm, Program, SolverOptions, System, VectorField, ZeroTolerances};

fn heisenberg() -> Vec<VectorField> {
    vec![VectorField::parse(&["1", "0", "-y"]).unwrap(), VectorField::parse(&["0", "1", "x"]).unwrap()]
}

fn expressions(c: &mut Criterion) {
    let e = Expression::parse("bump(x)*bump(y)*exp(bump(y)^2) + sin(x*z)/(1 + y^2)").unwrap();
    let d = e.diff(0).diff(1);
    let program = Program::new(&[e.clone(), d.clone()]);
    let p = [0.3, -0.2, 0.7];
    c.bench_function("expr/tree_eval", |b| b.iter(|| (e.eval(black_box(&p)).unwrap(), d.eval(black_box(&p)).unwrap())));
    c.bench_function("expr/program_eval", |b| b.iter(|| program.eval(black_box(&p)).unwrap()));
    c.bench_function("expr/second_derivative", |b| b.iter(|| black_box(&e).diff(0).diff(1)));
}

fn solver(c: &mut Criterion) {
    let system = System::new(heisenberg()).unwrap();
    let w = sample_fbm(&FbmSpec { hurst: 0.5, horizon: 1.0, steps: 1024, seed: 1, dim: 2 }).unwrap();
    let x0 = [0.1, 0.2, 0.0];
    c.bench_function("rde/heisenberg_1024_with_jacobian", |b| b.iter(|| system.solve(&x0, black_box(&w), &SolverOptions::default()).unwrap()));
    let plain = SolverOptions { jacobian: false, ..SolverOptions::default() };
    c.bench_function("rde/heisenberg_1024_path_only", |b| b.iter(|| system.solve(&x0, black_box(&w), &plain).unwrap()));

    let traj = system.solve(&x0, &w, &SolverOptions::default()).unwrap();
    let phi = OneForm::parse(&["-y/2 + z", "x/2", "sin(x)"]).unwrap();
    c.bench_function("integrals/line_integral", |b| b.iter(|| line_integral(black_box(&phi), &traj).unwrap()));
    c.bench_function("integrals/malliavin_kernel", |b| b.iter(|| malliavin_kernel(black_box(&phi), &traj).unwrap()));
    c.bench_function("integrals/signature_depth4", |b| b.iter(|| signature(black_box(&w), 4)));
}

fn criteria(c: &mut Criterion) {
    let v = heisenberg();
    let phi = construct_step2(&Expression::zero(), &Expression::parse("x^2*y").unwrap(), &v[0], &v[1]).unwrap();
    let grid = GridSpec::cube(3, 1.0, 16);
    let tol = ZeroTolerances::default();
    c.bench_function("nondeg/step2_grid_16", |b| b.iter(|| criterion_step2(black_box(&phi), &v[0], &v[1], &grid, &tol).unwrap()));
}

criterion_group!(benches, expressions, solver, criteria);
criterion_main!(benches);
