//! Bracket-generated frames, coframes and growth vectors.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::linalg::{numerical_rank, symbolic_adjugate, symbolic_det};
use super::{bracket_of_word, columns_at, CompiledFields, GeometryError, OneForm, VectorField, Word};
use crate::expr::{Expression, Program};

/// Tuning knobs for [`build_frame`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameOptions {
    pub max_step: usize,
    /// Relative singular-value threshold for numerical rank.
    pub rank_tol: f64,
    /// Largest radius tried when sizing the neighbourhood; halved down to `min_radius`.
    pub max_radius: f64,
    pub min_radius: f64,
    /// Random sample points (besides the axis points) used for the radius and regularity checks.
    pub samples: usize,
}

impl Default for FrameOptions {
    fn default() -> Self {
        FrameOptions { max_step: 4, rank_tol: 1e-8, max_radius: 8.0, min_radius: 1.0 / 1024.0, samples: 16 }
    }
}

/// A local frame `{V_I : I ∈ I_1 ∪ … ∪ I_r}` around a base point, with its coframe.
#[derive(Debug, Clone, Serialize)]
pub struct Frame {
    base_point: Vec<f64>,
    radius: f64,
    layers: Vec<Vec<Word>>,
    growth: Vec<usize>,
    columns: Vec<VectorField>,
    det: Expression,
    #[serde(skip)]
    generators: Vec<VectorField>,
    #[serde(skip)]
    coframe: Vec<OneForm>,
    #[serde(skip)]
    compiled: CompiledFields,
}

/// Unit-ball sample directions: `±eᵢ` followed by `count` pseudo-random points.
fn sample_offsets(n: usize, count: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * n + count);
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut v = vec![0.0; n];
            v[i] = s;
            out.push(v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f4a3);
    for _ in 0..count {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
        out.push(v.into_iter().map(|x| x / norm).collect());
    }
    out
}

/// Dimensions of `D_1(x) ⊆ D_2(x) ⊆ …`, stopping at full rank or after `max_step` levels.
pub fn growth_vector(fields: &[VectorField], x: &[f64], max_step: usize, rank_tol: f64) -> Result<Vec<usize>, GeometryError> {
    let n = x.len();
    let mut level: Vec<(Word, VectorField)> = fields.iter().enumerate().map(|(i, f)| (Word::letter(i), f.clone())).collect();
    let mut all: Vec<VectorField> = Vec::new();
    let mut out = Vec::new();
    for step in 1..=max_step {
        if step > 1 {
            let mut next = Vec::new();
            for (i, vi) in fields.iter().enumerate() {
                for (w, vw) in &level {
                    next.push((Word::prepend(i, w), vi.bracket(vw)));
                }
            }
            level = next;
        }
        all.extend(level.iter().map(|(_, f)| f.clone()));
        let m = columns_at(&all, x)?;
        let rank = numerical_rank(&m, rank_tol);
        out.push(rank);
        if rank == n {
            break;
        }
    }
    Ok(out)
}

/// Greedy frame at `x_star`: `I_1` from the generators, then `I_k ⊆ I_1 × I_{k−1}`,
/// candidates scanned by (length, letters) and kept when they raise the rank.
pub fn build_frame(fields: &[VectorField], x_star: &[f64], opts: &FrameOptions) -> Result<Frame, GeometryError> {
    let n = x_star.len();
    for f in fields {
        if f.dim() != n {
            return Err(GeometryError::Dimension { expected: n, got: f.dim() });
        }
    }
    let mut chosen: Vec<VectorField> = Vec::new();
    let mut layers: Vec<Vec<Word>> = Vec::new();
    let mut rank = 0;
    let mut layer_fields: Vec<VectorField> = Vec::new();

    let mut candidates: Vec<(Word, VectorField)> = fields.iter().enumerate().map(|(i, f)| (Word::letter(i), f.clone())).collect();
    for step in 1..=opts.max_step {
        if step > 1 {
            let first = &layers[0];
            let prev = layers.last().expect("nonempty");
            candidates.clear();
            for &i in first.iter().map(|w| &w.letters()[0]) {
                for (w, vw) in prev.iter().zip(&layer_fields) {
                    candidates.push((Word::prepend(i, w), fields[i].bracket(vw)));
                }
            }
            candidates.sort_by(|a, b| a.0.cmp(&b.0));
        }
        let mut layer = Vec::new();
        let mut new_fields = Vec::new();
        for (w, f) in candidates.drain(..) {
            let mut trial = chosen.clone();
            trial.push(f.clone());
            let r = numerical_rank(&columns_at(&trial, x_star)?, opts.rank_tol);
            if r > rank {
                rank = r;
                chosen = trial;
                layer.push(w);
                new_fields.push(f);
            }
            if rank == n {
                break;
            }
        }
        if layer.is_empty() {
            break;
        }
        layers.push(layer);
        layer_fields = new_fields;
        if rank == n {
            return Frame::assemble(fields, layers, x_star, opts);
        }
    }
    let growth = growth_vector(fields, x_star, opts.max_step, opts.rank_tol)?;
    Err(GeometryError::HormanderFailure { max_step: opts.max_step, growth })
}

impl Frame {
    /// Build a frame from explicit word layers. The words must give `n` columns.
    pub fn from_layers(fields: &[VectorField], layers: Vec<Vec<Word>>, x_star: &[f64], opts: &FrameOptions) -> Result<Frame, GeometryError> {
        let count: usize = layers.iter().map(Vec::len).sum();
        if count != x_star.len() {
            return Err(GeometryError::Dimension { expected: x_star.len(), got: count });
        }
        Frame::assemble(fields, layers, x_star, opts)
    }

    fn assemble(fields: &[VectorField], layers: Vec<Vec<Word>>, x_star: &[f64], opts: &FrameOptions) -> Result<Frame, GeometryError> {
        let n = x_star.len();
        let columns: Vec<VectorField> = layers.iter().flatten().map(|w| bracket_of_word(fields, w)).collect();
        let w_entries: Vec<Vec<Expression>> = (0..n).map(|i| columns.iter().map(|c| c.component(i).clone()).collect()).collect();
        let det = symbolic_det(&w_entries);
        let adj = symbolic_adjugate(&w_entries);
        let coframe = adj.into_iter().map(|row| OneForm::new(row.into_iter().map(|a| a / &det).collect())).collect();
        let compiled = CompiledFields::new(&columns);
        let growth = growth_vector(fields, x_star, opts.max_step, opts.rank_tol)?;

        let det_prog = Program::new(std::slice::from_ref(&det));
        let base_det = det_prog.eval(x_star)?[0].abs();
        if base_det == 0.0 {
            return Err(GeometryError::SingularFrame { point: x_star.to_vec() });
        }
        let offsets = sample_offsets(n, opts.samples);
        let at = |r: f64, u: &[f64]| -> Vec<f64> { x_star.iter().zip(u).map(|(x, d)| x + r * d).collect() };
        let mut radius = opts.min_radius;
        let mut r = opts.max_radius;
        while r >= opts.min_radius {
            let ok = offsets.iter().all(|u| matches!(det_prog.eval(&at(r, u)), Ok(v) if v[0].abs() >= 0.5 * base_det));
            if ok {
                radius = r;
                break;
            }
            r *= 0.5;
        }
        for u in offsets.iter().take(2 * n + 4) {
            let p = at(radius, u);
            let found = growth_vector(fields, &p, opts.max_step, opts.rank_tol)?;
            if found != growth {
                return Err(GeometryError::IrregularPoint { at_base: growth, found, point: p });
            }
        }
        Ok(Frame {
            base_point: x_star.to_vec(),
            radius,
            layers,
            growth,
            columns,
            det,
            generators: fields.to_vec(),
            coframe,
            compiled,
        })
    }

    pub fn dim(&self) -> usize {
        self.base_point.len()
    }

    pub fn base_point(&self) -> &[f64] {
        &self.base_point
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// The step `r`, i.e. the number of word layers.
    pub fn step(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Vec<Word>] {
        &self.layers
    }

    pub fn growth(&self) -> &[usize] {
        &self.growth
    }

    /// Words in column order.
    pub fn words(&self) -> Vec<&Word> {
        self.layers.iter().flatten().collect()
    }

    pub fn index_of(&self, word: &Word) -> Option<usize> {
        self.words().iter().position(|w| *w == word)
    }

    pub fn generators(&self) -> &[VectorField] {
        &self.generators
    }

    /// The fields `V_I`, one per word, in column order.
    pub fn columns(&self) -> &[VectorField] {
        &self.columns
    }

    /// The symbolic dual basis `ω^I`, one row per word.
    pub fn coframe(&self) -> &[OneForm] {
        &self.coframe
    }

    pub fn det(&self) -> &Expression {
        &self.det
    }

    /// `W(x)`, columns `V_I(x)`.
    pub fn w_at(&self, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        Ok(self.compiled.eval(x)?)
    }

    /// `W(x)⁻¹`, rows `ω^I(x)`.
    pub fn coframe_at(&self, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        let w = self.w_at(x)?;
        let scale: f64 = w.column_iter().map(|c| c.norm()).product();
        let singular = || GeometryError::SingularFrame { point: x.to_vec() };
        if w.determinant().abs() <= 1e-12 * scale {
            return Err(singular());
        }
        w.try_inverse().ok_or_else(singular)
    }
}
