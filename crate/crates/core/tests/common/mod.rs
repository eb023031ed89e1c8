//! Shared generators and oracles for the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stochline::driver::{parse_driver_formulas, smooth_driver, uniform_mesh, DriverPath};
use stochline::rde::{SolverOptions, System};
use stochline::{Expression, OneForm, VectorField};

pub fn rng(seed: u64) -> ChaCha8Rng {
    stochline::driver::replicate_rng(seed, 0)
}

/// A random polynomial of total degree ≤ 2 in `n` variables with coefficients in `[-scale, scale]`.
pub fn random_quadratic(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Expression {
    let mut e = Expression::constant(rng.random_range(-scale..scale));
    for i in 0..n {
        e = e + Expression::constant(rng.random_range(-scale..scale)) * Expression::var(i);
        for j in i..n {
            e = e + Expression::constant(rng.random_range(-scale..scale)) * Expression::var(i) * Expression::var(j);
        }
    }
    e
}

/// Fields `V_α = e_α + small quadratic perturbation`, `d ≤ n`.
pub fn random_fields(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<VectorField> {
    (0..d)
        .map(|a| {
            VectorField::new(
                (0..n)
                    .map(|i| {
                        let base = Expression::constant(if i == a { 1.0 } else { 0.0 });
                        base + random_quadratic(rng, n, scale)
                    })
                    .collect(),
            )
        })
        .collect()
}

/// A smooth form mixing polynomial and trigonometric terms.
pub fn random_form(rng: &mut ChaCha8Rng, n: usize) -> OneForm {
    OneForm::new(
        (0..n)
            .map(|i| {
                let k = rng.random_range(0.5..2.0);
                random_quadratic(rng, n, 1.0) + (Expression::var((i + 1) % n) * k).sin()
            })
            .collect(),
    )
}

/// `h(t) = (a sin(bπt) + c t²)` per coordinate on the given mesh.
pub fn random_direction(rng: &mut ChaCha8Rng, d: usize, horizon: f64, steps: usize) -> DriverPath {
    let formulas: Vec<String> = (0..d)
        .map(|_| {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(0.5..3.0);
            let c: f64 = rng.random_range(-1.0..1.0);
            format!("{a:?}*sin({b:?}*pi*t) + {c:?}*t^2")
        })
        .collect();
    smooth_driver(&parse_driver_formulas(&formulas).unwrap(), uniform_mesh(horizon, steps)).unwrap()
}

/// Central difference of `functional(solve(w + εh))` with one Richardson step.
pub fn finite_difference(
    system: &System,
    x0: &[f64],
    w: &DriverPath,
    h: &DriverPath,
    opts: &SolverOptions,
    functional: impl Fn(&stochline::Trajectory) -> f64,
) -> f64 {
    let eps = 1e-4 * w.sup_norm().max(1.0);
    let quotient = |e: f64| {
        let plus = system.solve(x0, &w.shift(h, e).unwrap(), opts).unwrap();
        let minus = system.solve(x0, &w.shift(h, -e).unwrap(), opts).unwrap();
        (functional(&plus) - functional(&minus)) / (2.0 * e)
    };
    let coarse = quotient(eps);
    let fine = quotient(0.5 * eps);
    (4.0 * fine - coarse) / 3.0
}

/// A random expression tree in `n` variables mixing every node kind.
///
/// Divisions use `1 + e²` denominators and bump arguments stay inside `(-0.7, 0.7)`
/// on the unit cube, so the result is smooth there.
pub fn random_expression(rng: &mut ChaCha8Rng, n: usize, depth: usize) -> Expression {
    if depth == 0 || rng.random_bool(0.2) {
        return if rng.random_bool(0.4) {
            Expression::constant(rng.random_range(-2.0..2.0))
        } else {
            Expression::var(rng.random_range(0..n))
        };
    }
    let sub = |rng: &mut ChaCha8Rng| random_expression(rng, n, depth - 1);
    match rng.random_range(0..9) {
        0 => sub(rng) + sub(rng),
        1 => sub(rng) - sub(rng),
        2 => sub(rng) * sub(rng),
        3 => {
            let den = sub(rng);
            sub(rng) / (den.powi(2) + 1.0)
        }
        4 => sub(rng).sin(),
        5 => sub(rng).cos(),
        6 => (sub(rng) * 0.3).sin().exp(),
        7 => sub(rng).powi(rng.random_range(2..=3)),
        _ => {
            let i = rng.random_range(0..n);
            (Expression::var(i) * 0.5 + rng.random_range(-0.2..0.2)).bump() * sub(rng)
        }
    }
}

pub fn random_point(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-half..half)).collect()
}

/// Five-point central difference of `f` along coordinate `i` with step `h`.
pub fn partial_fd(f: impl Fn(&[f64]) -> f64, p: &[f64], i: usize, h: f64) -> f64 {
    let at = |s: f64| {
        let mut q = p.to_vec();
        q[i] += s;
        f(&q)
    };
    (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
}

/// Bounded fields with bounded derivatives: `V_α = e_α + Σ a sin(b xⱼ + c)` per component.
pub fn random_bounded_fields(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<VectorField> {
    (0..d)
        .map(|a| {
            VectorField::new(
                (0..n)
                    .map(|i| {
                        let mut e = Expression::constant(if i == a { 1.0 } else { 0.0 });
                        for j in 0..n {
                            let amp = rng.random_range(-scale..scale);
                            let freq = rng.random_range(0.5..2.0);
                            let phase = rng.random_range(0.0..std::f64::consts::TAU);
                            e = e + (Expression::var(j) * freq + phase).sin() * amp;
                        }
                        e
                    })
                    .collect(),
            )
        })
        .collect()
}
