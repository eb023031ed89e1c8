//! The ψ recursion, the correction form Ξ, and the grid criteria.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;

use super::{scan, CriterionReport, GridProblem, GridSpec, NondegError, ZeroTolerances};
use crate::expr::Expression;
use crate::geometry::{bracket_of_word, Frame, OneForm, VectorField, Word};

/// The functions `ψ_I`, with `ψ_I = 0` for single letters and
/// `ψ_{(i,J)} = dφ(V_i, V_J) + V_i ψ_J`.
#[derive(Debug, Clone, Serialize)]
pub struct PsiTable {
    pub entries: BTreeMap<Word, Expression>,
}

impl PsiTable {
    pub fn get(&self, word: &Word) -> Option<&Expression> {
        self.entries.get(word)
    }
}

/// Build `ψ_I` for every word in `words` (and, recursively, their tails).
pub fn psi_table(phi: &OneForm, fields: &[VectorField], words: &[Word]) -> PsiTable {
    let dphi = phi.exterior_derivative();
    let mut entries = BTreeMap::new();
    let mut brackets: BTreeMap<Word, VectorField> = BTreeMap::new();
    fn fill(
        w: &Word,
        phi_d: &crate::geometry::TwoForm,
        fields: &[VectorField],
        entries: &mut BTreeMap<Word, Expression>,
        brackets: &mut BTreeMap<Word, VectorField>,
    ) -> Expression {
        if let Some(e) = entries.get(w) {
            return e.clone();
        }
        let value = match w.tail() {
            None => Expression::zero(),
            Some(tail) => {
                let psi_tail = fill(&tail, phi_d, fields, entries, brackets);
                let v_tail = brackets.entry(tail.clone()).or_insert_with(|| bracket_of_word(fields, &tail)).clone();
                let vi = &fields[w.head()];
                phi_d.pair(vi, &v_tail) + vi.apply(&psi_tail)
            }
        };
        entries.insert(w.clone(), value.clone());
        value
    }
    for w in words {
        fill(w, &dphi, fields, &mut entries, &mut brackets);
    }
    PsiTable { entries }
}

/// `Ξ = −Σ_{|I|≥2} ψ_I ω^I` on the frame neighbourhood, symbolically.
pub fn xi_form(phi: &OneForm, frame: &Frame) -> OneForm {
    let words: Vec<Word> = frame.words().into_iter().cloned().collect();
    let psi = psi_table(phi, frame.generators(), &words);
    let mut xi = OneForm::zero(frame.dim());
    for (w, omega) in words.iter().zip(frame.coframe()) {
        if w.len() < 2 {
            continue;
        }
        let coeff = psi.get(w).expect("filled");
        if coeff.is_zero() {
            continue;
        }
        xi = xi.sub(&omega.scale(coeff));
    }
    xi
}

/// `Ξ(x) = −Θ(x)·W(x)⁻¹` evaluated numerically, as a cross-check of [`xi_form`].
pub fn xi_at(phi: &OneForm, frame: &Frame, x: &[f64]) -> Result<DVector<f64>, NondegError> {
    let words: Vec<Word> = frame.words().into_iter().cloned().collect();
    let psi = psi_table(phi, frame.generators(), &words);
    let theta = DVector::from_iterator(words.len(), words.iter().map(|w| psi.get(w).expect("filled").eval(x).unwrap_or(f64::NAN)));
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(NondegError::Eval(crate::expr::EvalError::NonFinite));
    }
    let inv = frame.coframe_at(x)?;
    Ok(-(inv.transpose() * theta))
}

/// Nonzero-component indicators of `φ`, defining its support.
fn support_of(phi: &OneForm) -> Vec<Expression> {
    phi.components().iter().filter(|c| !c.is_zero()).cloned().collect()
}

/// `{dφ = 0} ∩ supp φ` on the grid, for elliptic systems.
pub fn criterion_elliptic(phi: &OneForm, grid: &GridSpec, tol: &ZeroTolerances) -> Result<CriterionReport, NondegError> {
    criterion_elliptic_with(phi, grid, tol, false)
}

/// [`criterion_elliptic`], keeping per-point samples for a grid dump when `keep` is set.
pub fn criterion_elliptic_with(phi: &OneForm, grid: &GridSpec, tol: &ZeroTolerances, keep: bool) -> Result<CriterionReport, NondegError> {
    let d = phi.exterior_derivative().upper();
    let problem = GridProblem { groups: vec![d], support: support_of(phi) };
    scan("elliptic", problem, grid, tol, keep)
}

/// Per generator α, the row `i(V_α)dφ − L_{V_α}Ξ` on the frame neighbourhood.
fn general_rows(phi: &OneForm, frame: &Frame) -> Vec<OneForm> {
    let xi = xi_form(phi, frame);
    let dphi = phi.exterior_derivative();
    frame
        .generators()
        .iter()
        .map(|v| {
            let base = dphi.interior(v);
            if xi.is_zero() {
                base
            } else {
                base.sub(&xi.lie_derivative(v))
            }
        })
        .collect()
}

/// Grid test of `i(V_α)dφ − L_{V_α}Ξ ≠ 0` per α.
pub fn criterion_general(phi: &OneForm, frame: &Frame, grid: &GridSpec, tol: &ZeroTolerances) -> Result<CriterionReport, NondegError> {
    criterion_general_with(phi, frame, grid, tol, false)
}

/// [`criterion_general`] with optional per-point samples.
pub fn criterion_general_with(
    phi: &OneForm,
    frame: &Frame,
    grid: &GridSpec,
    tol: &ZeroTolerances,
    keep: bool,
) -> Result<CriterionReport, NondegError> {
    let rows = general_rows(phi, frame);
    let groups = rows.into_iter().map(|r| r.components().to_vec()).collect();
    // the coframe must at least be invertible at the grid centre; exact
    // singularities elsewhere surface from the scan as SingularFrame
    grid.validate()?;
    let centre: Vec<f64> = grid.lower.iter().zip(&grid.upper).map(|(a, b)| 0.5 * (a + b)).collect();
    frame.coframe_at(&centre)?;
    scan("general", GridProblem { groups, support: support_of(phi) }, grid, tol, keep)
}

/// The step-two coframe `ω³` for `{V_1, V_2, [V_1, V_2]}`.
fn step2_third_coframe(v1: &VectorField, v2: &VectorField) -> Result<OneForm, NondegError> {
    let coframe = super::construct::step2_coframe(v1, v2)?;
    Ok(coframe[2].clone())
}

/// Grid test of `d(φ + dφ(V_1, V_2) ω³) ≠ 0`, paired on the frame `{V_1, V_2, [V_1, V_2]}`.
pub fn criterion_step2(phi: &OneForm, v1: &VectorField, v2: &VectorField, grid: &GridSpec, tol: &ZeroTolerances) -> Result<CriterionReport, NondegError> {
    criterion_step2_with(phi, v1, v2, grid, tol, false)
}

/// [`criterion_step2`] with optional per-point samples.
pub fn criterion_step2_with(
    phi: &OneForm,
    v1: &VectorField,
    v2: &VectorField,
    grid: &GridSpec,
    tol: &ZeroTolerances,
    keep: bool,
) -> Result<CriterionReport, NondegError> {
    if phi.dim() != 3 || v1.dim() != 3 || v2.dim() != 3 {
        return Err(NondegError::Invalid("the step-two criterion needs n = 3, d = 2".into()));
    }
    let omega3 = step2_third_coframe(v1, v2)?;
    let dphi = phi.exterior_derivative();
    let modifier = dphi.pair(v1, v2);
    let modified = phi.add(&omega3.scale(&modifier));
    let dmod = modified.exterior_derivative();
    let v3 = v1.bracket(v2);
    let frame = [v1, v2, &v3];
    let pairs = vec![dmod.pair(frame[0], frame[1]), dmod.pair(frame[0], frame[2]), dmod.pair(frame[1], frame[2])];
    scan("step2", GridProblem { groups: vec![pairs], support: support_of(phi) }, grid, tol, keep)
}

/// Grid test of `V_αc_J − V_Jc_α − Σ_K c_K ω^K([V_α, V_J]) ≠ 0` over the whole grid.
pub fn check_expcond(
    frame: &Frame,
    coefficients: &BTreeMap<Word, Expression>,
    alpha: usize,
    j: &Word,
    grid: &GridSpec,
    tol: &ZeroTolerances,
) -> Result<CriterionReport, NondegError> {
    let value = expcond_expression(frame, coefficients, alpha, j)?;
    scan("expcond", GridProblem { groups: vec![vec![value]], support: vec![] }, grid, tol, false)
}

/// The expression tested by [`check_expcond`].
pub fn expcond_expression(frame: &Frame, coefficients: &BTreeMap<Word, Expression>, alpha: usize, j: &Word) -> Result<Expression, NondegError> {
    let fields = frame.generators();
    if alpha >= fields.len() {
        return Err(NondegError::Invalid(format!("no generator {}", alpha + 1)));
    }
    let coeff = |w: &Word| -> Result<Expression, NondegError> {
        coefficients.get(w).cloned().ok_or_else(|| NondegError::Invalid(format!("no coefficient for word {w}")))
    };
    let c_j = coeff(j)?;
    let c_alpha = coeff(&Word::letter(alpha))?;
    let v_alpha = &fields[alpha];
    let v_j = bracket_of_word(fields, j);
    let bracket = v_alpha.bracket(&v_j);
    let mut value = v_alpha.apply(&c_j) - v_j.apply(&c_alpha);
    for (w, omega) in frame.words().into_iter().zip(frame.coframe()) {
        let c_k = coeff(w)?;
        if c_k.is_zero() {
            continue;
        }
        value = value - c_k * omega.pair(&bracket);
    }
    Ok(value)
}

/// Grid test of `(−∂²_{xy}c₁ + ∂²_{xx}c₂)(−∂²_{yy}c₁ + ∂²_{xy}c₂) ≠ 0` for `c_i(x, y)`.
pub fn heisenberg_condition(c1: &Expression, c2: &Expression, grid: &GridSpec, tol: &ZeroTolerances) -> Result<CriterionReport, NondegError> {
    heisenberg_condition_with(c1, c2, grid, tol, false)
}

/// [`heisenberg_condition`] with optional per-point samples.
pub fn heisenberg_condition_with(
    c1: &Expression,
    c2: &Expression,
    grid: &GridSpec,
    tol: &ZeroTolerances,
    keep: bool,
) -> Result<CriterionReport, NondegError> {
    if c1.arity() > 2 || c2.arity() > 2 {
        return Err(NondegError::Invalid("c₁, c₂ must depend on x and y only".into()));
    }
    let first = -c1.diff(0).diff(1) + c2.diff(0).diff(0);
    let second = -c1.diff(1).diff(1) + c2.diff(0).diff(1);
    let product = first * second;
    scan("heisenberg", GridProblem { groups: vec![vec![product]], support: vec![] }, grid, tol, keep)
}
