//! λ-selection for the cut-off `h_λ(x) = e^{−λ/(1−x²)}`.
//!
//! With `c₁ = h_λ(x)η(y, z)` and `c₂ = 0` in coordinates where `V_2 = ∂_x`,
//! `h_λ'' + f h_λ' + g h_λ = h_λ Φ_λ / (1 − x²)⁴`, so the zero set of the
//! criterion inside the cube is the zero set of the quadratic `Φ_λ`.

use serde::Serialize;

use super::{scan, GridProblem, GridSpec, NondegError, ZeroTolerances};
use crate::expr::Expression;

/// `h_λ(x)` in the first coordinate, exactly zero for `|x| ≥ 1`.
pub fn h_lambda(lambda: f64) -> Expression {
    let x = Expression::var(0);
    let body = (Expression::constant(-lambda) / (Expression::one() - x.powi(2))).exp();
    x.flat(body)
}

/// `Φ_λ = 4x²λ² − 2(1−x²)(1+3x²+x(1−x²)f)λ + (1−x²)⁴g`.
pub fn sard_polynomial(f: &Expression, g: &Expression, lambda: f64) -> Expression {
    let x = Expression::var(0);
    let one_minus = Expression::one() - x.powi(2);
    let inner = Expression::one() + x.powi(2) * 3.0 + &x * &one_minus * f;
    Expression::constant(4.0 * lambda * lambda) * x.powi(2) - Expression::constant(2.0 * lambda) * &one_minus * inner
        + one_minus.powi(4) * g
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub fraction_zero: f64,
}

/// The chosen λ, every candidate's score, and the seeds `c₁ = h_λ(x)η(y, z)`, `c₂ = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct SardSelection {
    pub lambda: f64,
    pub fraction_zero: f64,
    pub zero_measure_tol: f64,
    pub scores: Vec<LambdaScore>,
    pub c1: Expression,
    pub c2: Expression,
}

/// The default candidates `2^k`, `k = −4..8`.
pub fn default_lambda_candidates() -> Vec<f64> {
    (-4..=8).map(|k| 2f64.powi(k)).collect()
}

/// Scan `Φ_λ` on `grid` for each candidate and keep the λ with the smallest
/// zero fraction, provided it is within tolerance. Ties go to the earlier candidate.
pub fn sard_lambda_select(
    f: &Expression,
    g: &Expression,
    grid: &GridSpec,
    candidates: &[f64],
    tol: &ZeroTolerances,
) -> Result<SardSelection, NondegError> {
    if grid.dim() != 3 {
        return Err(NondegError::Invalid("the λ-selection works on a three-dimensional cube".into()));
    }
    if candidates.is_empty() || candidates.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(NondegError::Invalid("λ candidates must be positive and finite".into()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for &lambda in candidates {
        let problem = GridProblem { groups: vec![vec![sard_polynomial(f, g, lambda)]], support: vec![] };
        let report = scan("sard", problem, grid, tol, false)?;
        scores.push(LambdaScore { lambda, fraction_zero: report.fraction_zero });
    }
    let best = scores.iter().fold(&scores[0], |b, s| if s.fraction_zero < b.fraction_zero { s } else { b }).clone();
    let measure_tol = tol.measure_tol(grid);
    if best.fraction_zero > measure_tol {
        return Err(NondegError::NoValidLambda { best_fraction: best.fraction_zero });
    }
    let eta = Expression::var(1).bump() * Expression::var(2).bump();
    Ok(SardSelection {
        lambda: best.lambda,
        fraction_zero: best.fraction_zero,
        zero_measure_tol: measure_tol,
        scores,
        c1: h_lambda(best.lambda) * eta,
        c2: Expression::zero(),
    })
}
