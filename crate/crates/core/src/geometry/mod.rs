//! Vector fields, one-forms, brackets and exterior calculus on ℝⁿ.
//!
//! Vector fields are columns `V = Vⁱ ∂ᵢ` and one-forms are rows `φ = φᵢ dxⁱ`,
//! both stored as tuples of [`Expression`]s. All operators here are symbolic;
//! numbers only appear when a result is evaluated.

mod frame;
pub mod linalg;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::expr::{EvalError, Expression, Program};

pub use frame::{build_frame, growth_vector, Frame, FrameOptions};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("Hörmander condition fails by step {max_step}: growth vector {growth:?}")]
    HormanderFailure { max_step: usize, growth: Vec<usize> },
    #[error("growth vector varies near the base point: {at_base:?} at base, {found:?} at {point:?}")]
    IrregularPoint { at_base: Vec<usize>, found: Vec<usize>, point: Vec<f64> },
    #[error("frame is singular at {point:?}")]
    SingularFrame { point: Vec<f64> },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A vector field `Vⁱ ∂ᵢ` on ℝⁿ.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorField {
    components: Vec<Expression>,
}

impl VectorField {
    pub fn new(components: Vec<Expression>) -> Self {
        VectorField { components }
    }

    /// Parse one DSL string per component.
    pub fn parse<S: AsRef<str>>(components: &[S]) -> Result<Self, crate::expr::ParseError> {
        let cs = components.iter().map(|s| Expression::parse(s.as_ref())).collect::<Result<_, _>>()?;
        Ok(VectorField::new(cs))
    }

    pub fn zero(n: usize) -> Self {
        VectorField::new(vec![Expression::zero(); n])
    }

    /// The coordinate field `∂_index`.
    pub fn coordinate(n: usize, index: usize) -> Self {
        VectorField::new((0..n).map(|i| Expression::constant(if i == index { 1.0 } else { 0.0 })).collect())
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expression] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Expression {
        &self.components[i]
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Expression::is_zero)
    }

    /// Directional derivative `Vf = Vⁱ ∂ᵢf`.
    pub fn apply(&self, f: &Expression) -> Expression {
        self.components.iter().enumerate().map(|(i, v)| v * f.diff(i)).sum()
    }

    /// The Lie bracket `[self, other]ⁱ = self(otherⁱ) − other(selfⁱ)`.
    pub fn bracket(&self, other: &VectorField) -> VectorField {
        let cs = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(mine, theirs)| self.apply(theirs) - other.apply(mine))
            .collect();
        VectorField::new(cs)
    }

    /// `DV` with `jacobian[i][j] = ∂ⱼVⁱ`.
    pub fn jacobian(&self) -> Vec<Vec<Expression>> {
        let n = self.dim();
        self.components.iter().map(|v| (0..n).map(|j| v.diff(j)).collect()).collect()
    }

    pub fn scale(&self, f: &Expression) -> VectorField {
        VectorField::new(self.components.iter().map(|v| f * v).collect())
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        VectorField::new(self.components.iter().zip(&other.components).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField::new(self.components.iter().zip(&other.components).map(|(a, b)| a - b).collect())
    }

    pub fn eval(&self, point: &[f64]) -> Result<DVector<f64>, EvalError> {
        let vals = self.components.iter().map(|c| c.eval(point)).collect::<Result<Vec<_>, _>>()?;
        Ok(DVector::from_vec(vals))
    }

    /// Express the field in new coordinates `y = map(x)`: returns
    /// `(DΨ·V)∘Ψ⁻¹` given both `map` and its inverse.
    pub fn pushforward(&self, map: &[Expression], inverse: &[Expression]) -> VectorField {
        let cs = map
            .iter()
            .map(|psi| {
                let directional: Expression = self.components.iter().enumerate().map(|(j, v)| psi.diff(j) * v).sum();
                directional.substitute(inverse)
            })
            .collect();
        VectorField::new(cs)
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_tuple(f, &self.components)
    }
}

fn write_tuple(f: &mut fmt::Formatter<'_>, cs: &[Expression]) -> fmt::Result {
    write!(f, "(")?;
    for (k, c) in cs.iter().enumerate() {
        if k > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{c}")?;
    }
    write!(f, ")")
}

/// A one-form `φᵢ dxⁱ` on ℝⁿ.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OneForm {
    components: Vec<Expression>,
}

impl OneForm {
    pub fn new(components: Vec<Expression>) -> Self {
        OneForm { components }
    }

    pub fn parse<S: AsRef<str>>(components: &[S]) -> Result<Self, crate::expr::ParseError> {
        let cs = components.iter().map(|s| Expression::parse(s.as_ref())).collect::<Result<_, _>>()?;
        Ok(OneForm::new(cs))
    }

    pub fn zero(n: usize) -> Self {
        OneForm::new(vec![Expression::zero(); n])
    }

    /// The exact form `df`.
    pub fn exact(f: &Expression, n: usize) -> Self {
        OneForm::new((0..n).map(|i| f.diff(i)).collect())
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expression] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Expression {
        &self.components[i]
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Expression::is_zero)
    }

    /// `φ(V) = φᵢVⁱ`.
    pub fn pair(&self, v: &VectorField) -> Expression {
        self.components.iter().zip(v.components()).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&self, f: &Expression) -> OneForm {
        OneForm::new(self.components.iter().map(|c| f * c).collect())
    }

    pub fn add(&self, other: &OneForm) -> OneForm {
        OneForm::new(self.components.iter().zip(&other.components).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &OneForm) -> OneForm {
        OneForm::new(self.components.iter().zip(&other.components).map(|(a, b)| a - b).collect())
    }

    /// `dφ(X, Y) = X(φ(Y)) − Y(φ(X)) − φ([X, Y])` as an expression.
    pub fn d_pair(&self, x: &VectorField, y: &VectorField) -> Expression {
        x.apply(&self.pair(y)) - y.apply(&self.pair(x)) - self.pair(&x.bracket(y))
    }

    /// The coordinate two-form `dφ = Σ (∂ᵢφⱼ − ∂ⱼφᵢ) dxⁱ⊗dxʲ / 2`.
    pub fn exterior_derivative(&self) -> TwoForm {
        let n = self.dim();
        let mut coeffs = vec![vec![Expression::zero(); n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let c = self.components[j].diff(i) - self.components[i].diff(j);
                coeffs[j][i] = -&c;
                coeffs[i][j] = c;
            }
        }
        TwoForm { coeffs }
    }

    /// `L_Xφ = X(φ) + φ·DX`, componentwise `X(φⱼ) + φᵢ ∂ⱼXⁱ`.
    pub fn lie_derivative(&self, x: &VectorField) -> OneForm {
        let n = self.dim();
        let cs = (0..n)
            .map(|j| {
                let transport: Expression = self.components.iter().enumerate().map(|(i, phi)| phi * x.component(i).diff(j)).sum();
                x.apply(&self.components[j]) + transport
            })
            .collect();
        OneForm::new(cs)
    }

    /// `i(X)dφ = L_Xφ − d(φ(X))`.
    pub fn interior_d(&self, x: &VectorField) -> OneForm {
        self.lie_derivative(x).sub(&OneForm::exact(&self.pair(x), self.dim()))
    }

    /// Pull back along `map: ℝⁿ → ℝⁿ`: `(Ψ*φ)ⱼ = Σᵢ φᵢ(Ψ) ∂ⱼΨⁱ`.
    pub fn pullback(&self, map: &[Expression]) -> OneForm {
        let n = map.len();
        let composed: Vec<Expression> = self.components.iter().map(|c| c.substitute(map)).collect();
        let cs = (0..n).map(|j| composed.iter().zip(map).map(|(c, psi)| c * psi.diff(j)).sum()).collect();
        OneForm::new(cs)
    }

    pub fn eval(&self, point: &[f64]) -> Result<DVector<f64>, EvalError> {
        let vals = self.components.iter().map(|c| c.eval(point)).collect::<Result<Vec<_>, _>>()?;
        Ok(DVector::from_vec(vals))
    }
}

impl fmt::Display for OneForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_tuple(f, &self.components)
    }
}

/// An antisymmetric two-form stored as its full coefficient matrix `ω(∂ᵢ, ∂ⱼ)`.
#[derive(Debug, Clone)]
pub struct TwoForm {
    coeffs: Vec<Vec<Expression>>,
}

impl TwoForm {
    pub fn coefficient(&self, i: usize, j: usize) -> &Expression {
        &self.coeffs[i][j]
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn pair(&self, x: &VectorField, y: &VectorField) -> Expression {
        let n = self.dim();
        let mut terms = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if !self.coeffs[i][j].is_zero() {
                    terms.push(&self.coeffs[i][j] * x.component(i) * y.component(j));
                }
            }
        }
        terms.into_iter().sum()
    }

    /// `(i(X)ω)ⱼ = Xⁱ ωᵢⱼ`.
    pub fn interior(&self, x: &VectorField) -> OneForm {
        let n = self.dim();
        OneForm::new((0..n).map(|j| (0..n).map(|i| x.component(i) * &self.coeffs[i][j]).sum()).collect())
    }

    /// The upper-triangle coefficients, the independent entries.
    pub fn upper(&self) -> Vec<Expression> {
        let n = self.dim();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(self.coeffs[i][j].clone());
            }
        }
        out
    }
}

/// `dφ(X, Y)` at `p`.
pub fn exterior_derivative_pair(phi: &OneForm, x: &VectorField, y: &VectorField, p: &[f64]) -> Result<f64, EvalError> {
    phi.d_pair(x, y).eval(p)
}

/// A bracket word `(i₁, …, i_k)` over zero-based letters; printed one-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Word(Vec<usize>);

impl Word {
    /// Panics on an empty letter list.
    pub fn new(letters: Vec<usize>) -> Self {
        assert!(!letters.is_empty(), "words are nonempty");
        Word(letters)
    }

    pub fn letter(i: usize) -> Self {
        Word(vec![i])
    }

    /// The word `(head, tail...)`.
    pub fn prepend(head: usize, tail: &Word) -> Self {
        let mut v = Vec::with_capacity(tail.len() + 1);
        v.push(head);
        v.extend_from_slice(&tail.0);
        Word(v)
    }

    pub fn letters(&self) -> &[usize] {
        &self.0
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn head(&self) -> usize {
        self.0[0]
    }

    /// The word without its first letter, `None` for single letters.
    pub fn tail(&self) -> Option<Word> {
        (self.0.len() > 1).then(|| Word(self.0[1..].to_vec()))
    }

    /// Parse one-based letters, e.g. `"1,2"`, `"(2,(1,2))"` or `"2 1 2"`.
    pub fn parse(src: &str) -> Option<Word> {
        let letters: Option<Vec<usize>> = src
            .split(|c: char| c == ',' || c == '(' || c == ')' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<usize>().ok().filter(|&k| k >= 1).map(|k| k - 1))
            .collect();
        letters.filter(|l| !l.is_empty()).map(Word)
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Length first, then lexicographic letters.
impl Ord for Word {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0.len(), &self.0).cmp(&(other.0.len(), &other.0))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, l) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", l + 1)?;
        }
        write!(f, ")")
    }
}

impl Serialize for Word {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|l| l + 1))
    }
}

impl<'de> Deserialize<'de> for Word {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        if v.is_empty() || v.contains(&0) {
            return Err(serde::de::Error::custom("words are nonempty lists of letters starting at 1"));
        }
        Ok(Word(v.into_iter().map(|l| l - 1).collect()))
    }
}

/// The right-nested bracket `[V_{i₁}, [V_{i₂}, …, V_{i_k}]]`.
pub fn bracket_of_word(fields: &[VectorField], word: &Word) -> VectorField {
    let letters = word.letters();
    let mut acc = fields[letters[letters.len() - 1]].clone();
    for &l in letters[..letters.len() - 1].iter().rev() {
        acc = fields[l].bracket(&acc);
    }
    acc
}

/// Evaluate the matrix whose columns are `fields` at `point`.
pub fn columns_at(fields: &[VectorField], point: &[f64]) -> Result<DMatrix<f64>, EvalError> {
    let n = point.len();
    let mut m = DMatrix::zeros(n, fields.len());
    for (j, f) in fields.iter().enumerate() {
        m.set_column(j, &f.eval(point)?);
    }
    Ok(m)
}

/// A batch of vector fields compiled for repeated evaluation.
#[derive(Debug, Clone)]
pub struct CompiledFields {
    program: Program,
    n: usize,
    count: usize,
}

impl CompiledFields {
    pub fn new(fields: &[VectorField]) -> Self {
        let n = fields.first().map_or(0, VectorField::dim);
        let outputs: Vec<Expression> = fields.iter().flat_map(|f| f.components().iter().cloned()).collect();
        CompiledFields { program: Program::new(&outputs), n, count: fields.len() }
    }

    /// Column `j` holds field `j`.
    pub fn eval(&self, point: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let vals = self.program.eval(point)?;
        Ok(DMatrix::from_column_slice(self.n, self.count, &vals))
    }
}
