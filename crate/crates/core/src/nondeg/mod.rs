//! Non-degeneracy criteria for line integrals and constructors of one-forms
//! that satisfy them.
//!
//! "Nonzero almost everywhere" is decided on a cell-centred grid: a point is
//! a zero of a vector-valued expression when every component satisfies
//! `|v| <= point_tol × magnitude`, where the magnitude is the roundoff scale
//! reported by [`Program::eval_with_magnitude`]. A criterion holds when the
//! fraction of zero points is at most `zero_measure_tol` (default `2/side`).

mod construct;
mod criteria;
mod sard;

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::expr::{EvalError, Expression, Program};
use crate::geometry::GeometryError;

pub use construct::{
    construct_elliptic_bump, construct_general, construct_step2, heisenberg_straightening, step2_coframe, BoxRegion,
    GeneralConstruction, Straightening,
};
pub use criteria::{
    check_expcond, criterion_elliptic, criterion_elliptic_with, criterion_general, criterion_general_with, criterion_step2,
    criterion_step2_with, expcond_expression, heisenberg_condition, heisenberg_condition_with, psi_table, xi_at, xi_form, PsiTable,
};
pub use sard::{default_lambda_candidates, h_lambda, sard_lambda_select, sard_polynomial, LambdaScore, SardSelection};

#[derive(Debug, thiserror::Error)]
pub enum NondegError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("no λ candidate keeps the zero set of Φ_λ below tolerance (best fraction {best_fraction})")]
    NoValidLambda { best_fraction: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// A cell-centred grid on an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Cells per axis.
    pub side: usize,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, side: usize) -> Self {
        GridSpec { lower, upper, side }
    }

    /// The cube `[-half, half]ⁿ`.
    pub fn cube(n: usize, half: f64, side: usize) -> Self {
        GridSpec { lower: vec![-half; n], upper: vec![half; n], side }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.side.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Centre of cell `index` (last axis varies fastest).
    pub fn point(&self, index: usize) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        let mut rest = index;
        for axis in (0..n).rev() {
            let k = rest % self.side;
            rest /= self.side;
            let h = (self.upper[axis] - self.lower[axis]) / self.side as f64;
            out[axis] = self.lower[axis] + (k as f64 + 0.5) * h;
        }
        out
    }

    pub fn validate(&self) -> Result<(), NondegError> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(NondegError::Invalid("grid bounds must have equal nonzero length".into()));
        }
        if self.side == 0 || self.lower.iter().zip(&self.upper).any(|(a, b)| !(a < b)) {
            return Err(NondegError::Invalid("grid needs side ≥ 1 and lower < upper".into()));
        }
        Ok(())
    }
}

/// Thresholds of the zero test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroTolerances {
    pub point_tol: f64,
    /// Largest zero fraction still accepted; `None` means `2/side`.
    pub zero_measure_tol: Option<f64>,
    /// Fewer support points than this gives an inconclusive verdict.
    pub min_support_points: usize,
}

impl Default for ZeroTolerances {
    fn default() -> Self {
        ZeroTolerances { point_tol: 1e-9, zero_measure_tol: None, min_support_points: 16 }
    }
}

impl ZeroTolerances {
    pub fn measure_tol(&self, grid: &GridSpec) -> f64 {
        self.zero_measure_tol.unwrap_or(2.0 / grid.side as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Satisfied,
    Violated,
    Inconclusive,
}

/// Per-point record kept for grid dumps.
#[derive(Debug, Clone, Serialize)]
pub struct GridSample {
    pub point: Vec<f64>,
    pub in_support: bool,
    /// `max |component|` per group (e.g. per α).
    pub values: Vec<f64>,
    pub zero: Vec<bool>,
}

/// Outcome of a grid-based criterion.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub criterion: String,
    pub grid: GridSpec,
    pub points: usize,
    pub support_points: usize,
    /// Zero fraction of the best group, the quantity the verdict is based on.
    pub fraction_zero: f64,
    /// Zero fraction per group (per α for the hypoelliptic criterion).
    pub per_alpha: Vec<f64>,
    /// Fraction of support points where every group vanishes.
    pub union_fraction: f64,
    pub point_tol: f64,
    pub zero_measure_tol: f64,
    pub verdict: Verdict,
    #[serde(skip)]
    pub samples: Vec<GridSample>,
}

impl CriterionReport {
    /// Write the grid dump `x1..xn,in_support,v1..vg,zero1..zerog` as CSV.
    pub fn write_grid_csv<W: std::io::Write>(&self, mut out: W, comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let n = self.grid.dim();
        let g = self.per_alpha.len();
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.push("in_support".into());
        header.extend((1..=g).map(|a| format!("value{a}")));
        header.extend((1..=g).map(|a| format!("zero{a}")));
        writeln!(out, "{}", header.join(","))?;
        for s in &self.samples {
            let mut rec: Vec<String> = s.point.iter().map(|v| format!("{v:?}")).collect();
            rec.push(u8::from(s.in_support).to_string());
            rec.extend(s.values.iter().map(|v| format!("{v:?}")));
            rec.extend(s.zero.iter().map(|z| u8::from(*z).to_string()));
            writeln!(out, "{}", rec.join(","))?;
        }
        Ok(())
    }
}

/// Expressions to test on a grid: groups of outputs that must all vanish for
/// a zero, and optional support indicators (nonzero ⇒ in support).
pub(crate) struct GridProblem {
    pub groups: Vec<Vec<Expression>>,
    pub support: Vec<Expression>,
}

/// Scan `grid`, counting zeros per group among support points.
pub(crate) fn scan(
    name: &str,
    problem: GridProblem,
    grid: &GridSpec,
    tol: &ZeroTolerances,
    keep_samples: bool,
) -> Result<CriterionReport, NondegError> {
    grid.validate()?;
    let mut outputs: Vec<Expression> = Vec::new();
    let mut ranges: Vec<Range<usize>> = Vec::new();
    for g in &problem.groups {
        ranges.push(outputs.len()..outputs.len() + g.len());
        outputs.extend(g.iter().cloned());
    }
    let support_range = outputs.len()..outputs.len() + problem.support.len();
    outputs.extend(problem.support.iter().cloned());
    let program = Program::new(&outputs);
    if program.arity() > grid.dim() {
        return Err(NondegError::Invalid(format!("expressions need {} coordinates, grid has {}", program.arity(), grid.dim())));
    }

    let per_point = |idx: usize| -> Result<GridSample, NondegError> {
        let p = grid.point(idx);
        let (vals, mags) = program.eval_with_magnitude(&p).map_err(|e| match e {
            EvalError::NonFinite | EvalError::DivisionByZero => NondegError::Geometry(GeometryError::SingularFrame { point: p.clone() }),
            other => NondegError::Eval(other),
        })?;
        let in_support = support_range.is_empty() || vals[support_range.clone()].iter().any(|v| *v != 0.0);
        let mut values = Vec::with_capacity(ranges.len());
        let mut zero = Vec::with_capacity(ranges.len());
        for r in &ranges {
            let scale = mags[r.clone()].iter().cloned().fold(0.0, f64::max);
            let vmax = vals[r.clone()].iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            values.push(vmax);
            zero.push(vmax <= tol.point_tol * scale);
        }
        Ok(GridSample { point: p, in_support, values, zero })
    };
    let samples: Vec<GridSample> = (0..grid.len()).into_par_iter().map(per_point).collect::<Result<_, _>>()?;

    let support_points = samples.iter().filter(|s| s.in_support).count();
    let groups = ranges.len();
    let mut zero_counts = vec![0usize; groups];
    let mut union = 0usize;
    for s in samples.iter().filter(|s| s.in_support) {
        for (c, z) in zero_counts.iter_mut().zip(&s.zero) {
            *c += usize::from(*z);
        }
        union += usize::from(s.zero.iter().all(|z| *z));
    }
    let denom = support_points.max(1) as f64;
    let per_alpha: Vec<f64> = zero_counts.iter().map(|&c| c as f64 / denom).collect();
    let fraction_zero = per_alpha.iter().cloned().fold(f64::INFINITY, f64::min).min(1.0);
    let measure_tol = tol.measure_tol(grid);
    let verdict = if support_points < tol.min_support_points.max(1) {
        Verdict::Inconclusive
    } else if fraction_zero <= measure_tol {
        Verdict::Satisfied
    } else {
        Verdict::Violated
    };
    Ok(CriterionReport {
        criterion: name.to_string(),
        grid: grid.clone(),
        points: grid.len(),
        support_points,
        fraction_zero,
        per_alpha,
        union_fraction: union as f64 / denom,
        point_tol: tol.point_tol,
        zero_measure_tol: measure_tol,
        verdict,
        samples: if keep_samples { samples } else { Vec::new() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points_are_cell_centres() {
        let g = GridSpec::new(vec![0.0, -1.0], vec![1.0, 1.0], 2);
        assert_eq!(g.len(), 4);
        assert_eq!(g.point(0), vec![0.25, -0.5]);
        assert_eq!(g.point(1), vec![0.25, 0.5]);
        assert_eq!(g.point(3), vec![0.75, 0.5]);
    }

    #[test]
    fn scan_counts_zero_slice() {
        // x*y vanishes on no cell centre of an even grid; x - 0.125 vanishes on one column of side 8 over [0,2]
        let grid = GridSpec::cube(2, 1.0, 8);
        let tol = ZeroTolerances::default();
        let e = Expression::parse("x*y").unwrap();
        let r = scan("t", GridProblem { groups: vec![vec![e]], support: vec![] }, &grid, &tol, false).unwrap();
        assert_eq!(r.fraction_zero, 0.0);
        assert_eq!(r.verdict, Verdict::Satisfied);
        let slice = Expression::parse("x - 0.125").unwrap();
        let grid2 = GridSpec::new(vec![0.0, 0.0], vec![2.0, 2.0], 8);
        let r = scan("t", GridProblem { groups: vec![vec![slice]], support: vec![] }, &grid2, &tol, false).unwrap();
        assert_eq!(r.fraction_zero, 1.0 / 8.0);
        assert_eq!(r.verdict, Verdict::Satisfied);
    }
}
