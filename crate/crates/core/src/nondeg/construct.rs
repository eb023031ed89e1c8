//! Constructors of one-forms meeting the non-degeneracy criteria.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::NondegError;
use crate::expr::Expression;
use crate::geometry::{bracket_of_word, linalg, Frame, GeometryError, OneForm, VectorField, Word};

/// An axis-aligned box `Π [lower_k, upper_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        BoxRegion { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (a, b))| *a < *v && *v < *b)
    }

    pub fn centre(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// `u_k = (2x_k − (lo_k + hi_k)) / (hi_k − lo_k)`, mapping the box onto `[−1, 1]`.
    pub fn unit_coordinate(&self, k: usize) -> Expression {
        let (lo, hi) = (self.lower[k], self.upper[k]);
        (Expression::constant(2.0) * Expression::var(k) - (lo + hi)) / (hi - lo)
    }
}

/// The planar example `h(x)h(y)e^{h(y)²} dx`, rescaled to the first two axes
/// of `region` and windowed by `h(u_k)` in every further axis.
pub fn construct_elliptic_bump(region: &BoxRegion) -> Result<OneForm, NondegError> {
    let n = region.dim();
    if n < 2 || region.upper.len() != n {
        return Err(NondegError::Invalid("the elliptic bump form needs a box of dimension ≥ 2".into()));
    }
    if region.lower.iter().zip(&region.upper).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
        return Err(NondegError::Invalid("degenerate box".into()));
    }
    let hx = region.unit_coordinate(0).bump();
    let hy = region.unit_coordinate(1).bump();
    let mut coeff = hx * &hy * hy.powi(2).exp();
    for k in 2..n {
        coeff = coeff * region.unit_coordinate(k).bump();
    }
    let mut cs = vec![Expression::zero(); n];
    cs[0] = coeff;
    Ok(OneForm::new(cs))
}

/// The coframe `(ω¹, ω², ω³)` dual to `{V_1, V_2, [V_1, V_2]}`, symbolically.
pub fn step2_coframe(v1: &VectorField, v2: &VectorField) -> Result<Vec<OneForm>, NondegError> {
    let n = v1.dim();
    if n != 3 || v2.dim() != 3 {
        return Err(NondegError::Invalid("step-two frames need n = 3".into()));
    }
    let v3 = v1.bracket(v2);
    let cols = [v1, v2, &v3];
    let w: Vec<Vec<Expression>> = (0..3).map(|i| cols.iter().map(|c| c.component(i).clone()).collect()).collect();
    let det = linalg::symbolic_det(&w);
    if det.is_zero() {
        return Err(NondegError::Geometry(GeometryError::SingularFrame { point: vec![] }));
    }
    let adj = linalg::symbolic_adjugate(&w);
    Ok(adj.into_iter().map(|row| OneForm::new(row.into_iter().map(|a| a / &det).collect())).collect())
}

/// `φ = c₁ω¹ + c₂ω² + (V_1c₂ − V_2c₁)ω³`, which satisfies `dφ(V_1, V_2) = 0`.
pub fn construct_step2(c1: &Expression, c2: &Expression, v1: &VectorField, v2: &VectorField) -> Result<OneForm, NondegError> {
    let omega = step2_coframe(v1, v2)?;
    let c3 = v1.apply(c2) - v2.apply(c1);
    let mut phi = OneForm::zero(3);
    for (c, w) in [c1, c2, &c3].into_iter().zip(&omega) {
        if !c.is_zero() {
            phi = phi.add(&w.scale(c));
        }
    }
    Ok(phi)
}

/// Output of [`construct_general`].
#[derive(Debug, Clone, Serialize)]
pub struct GeneralConstruction {
    pub form: OneForm,
    /// `c_I` for every frame word.
    pub coefficients: BTreeMap<Word, Expression>,
}

/// `φ = Σ_I c_I ω^I` with seeds `c_i` and `c_{(i,J)} = V_ic_J − V_Jc_i`.
pub fn construct_general(frame: &Frame, seeds: &[Expression]) -> Result<GeneralConstruction, NondegError> {
    let fields = frame.generators();
    if seeds.len() != fields.len() {
        return Err(NondegError::Invalid(format!("{} seeds for {} generators", seeds.len(), fields.len())));
    }
    let mut coefficients: BTreeMap<Word, Expression> = BTreeMap::new();
    fn coeff(w: &Word, fields: &[VectorField], seeds: &[Expression], table: &mut BTreeMap<Word, Expression>) -> Expression {
        if let Some(c) = table.get(w) {
            return c.clone();
        }
        let c = match w.tail() {
            None => seeds[w.head()].clone(),
            Some(j) => {
                let i = w.head();
                let c_j = coeff(&j, fields, seeds, table);
                let v_j = bracket_of_word(fields, &j);
                fields[i].apply(&c_j) - v_j.apply(&seeds[i])
            }
        };
        table.insert(w.clone(), c.clone());
        c
    }
    let mut form = OneForm::zero(frame.dim());
    for (w, omega) in frame.words().into_iter().zip(frame.coframe()) {
        let c = coeff(w, fields, seeds, &mut coefficients);
        if !c.is_zero() {
            form = form.add(&omega.scale(&c));
        }
    }
    // keep only the frame words, so callers see exactly the c_I of the frame
    let words: Vec<Word> = frame.words().into_iter().cloned().collect();
    coefficients.retain(|w, _| words.contains(w));
    Ok(GeneralConstruction { form, coefficients })
}

/// A global change of coordinates with its inverse and the fields expressed
/// in the new coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct Straightening {
    pub map: Vec<Expression>,
    pub inverse: Vec<Expression>,
    pub fields: Vec<VectorField>,
}

/// Coordinates `(x̃, ỹ, z̃) = (y, x, z − xy)` in which the Heisenberg fields
/// `V_1 = ∂_x − y∂_z`, `V_2 = ∂_y + x∂_z` become `∂_ỹ − 2x̃∂_z̃` and `∂_x̃`.
pub fn heisenberg_straightening() -> Straightening {
    let (x, y, z) = (Expression::var(0), Expression::var(1), Expression::var(2));
    let map = vec![y.clone(), x.clone(), &z - &x * &y];
    let inverse = vec![y.clone(), x.clone(), &z + &x * &y];
    let v1 = VectorField::new(vec![Expression::one(), Expression::zero(), -y.clone()]);
    let v2 = VectorField::new(vec![Expression::zero(), Expression::one(), x.clone()]);
    let fields = vec![v1.pushforward(&map, &inverse), v2.pushforward(&map, &inverse)];
    Straightening { map, inverse, fields }
}
