//! Route recovery from extended signatures on a grid of cubes.
//!
//! The bounding box is cut into cells of pitch `ε`; each cell holds a cube
//! shrunk by `δ/2` on every side, so neighbouring cubes are separated by gaps
//! of width exactly `δ`. Every cube carries a one-form supported inside it.
//! The route of a path is recovered as the longest word of cubes whose
//! extended signature is significant, searched breadth-first over adjacent
//! cubes.

use rayon::prelude::*;
use serde::Serialize;

use crate::expr::Expression;
use crate::geometry::{OneForm, VectorField};
use crate::integrals::{extend_running, iterated_line_integral, FormEvaluator, FormTrace, IntegralError};
use crate::nondeg::{
    construct_elliptic_bump, construct_step2, default_lambda_candidates, sard_lambda_select, BoxRegion, GridSpec, NondegError,
    ZeroTolerances,
};
use crate::rde::Trajectory;

#[derive(Debug, thiserror::Error)]
pub enum ReconstructError {
    #[error(transparent)]
    Nondeg(#[from] NondegError),
    #[error(transparent)]
    Integral(#[from] IntegralError),
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("{} maximal words survive; best by |signature| is {best:?}", candidates.len())]
    AmbiguousRoute { best: RouteWord, candidates: Vec<(RouteWord, f64)> },
    #[error("word search frontier exceeded {limit} words at length {length}")]
    SearchLimit { length: usize, limit: usize },
}

/// How the per-cube forms are built.
#[derive(Debug, Clone)]
pub enum Regime {
    /// The planar bump example on each cube.
    Elliptic,
    /// Step-two fields with `V_2 = ∂_{x₁}`: `c₁ = h_λ(u₁)η(u₂, u₃)`, `c₂ = 0`,
    /// λ chosen per cube from `Φ_λ` with the given `f`, `g` (in the state coordinates).
    Step2(Step2Setup),
}

#[derive(Debug, Clone)]
pub struct Step2Setup {
    pub v1: VectorField,
    pub v2: VectorField,
    pub f: Expression,
    pub g: Expression,
    pub lambda_candidates: Vec<f64>,
    /// Cells per axis of the λ-selection grid on each unit cube.
    pub sard_side: usize,
    pub tolerances: ZeroTolerances,
}

impl Step2Setup {
    /// Defaults for fields already in a chart where `V_2 = ∂_{x₁}` and `f = g = 0`.
    pub fn flat(v1: VectorField, v2: VectorField) -> Self {
        Step2Setup {
            v1,
            v2,
            f: Expression::zero(),
            g: Expression::zero(),
            lambda_candidates: default_lambda_candidates(),
            sard_side: 12,
            tolerances: ZeroTolerances::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Cube {
    /// Integer lattice coordinates of the cell.
    pub label: Vec<i64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub form: OneForm,
    /// The λ chosen for this cube in the step-two regime.
    pub lambda: Option<f64>,
}

impl Cube {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (a, b))| a < v && v < b)
    }

    /// Smallest distance to the boundary relative to the half-side, in `[0, 1]`
    /// inside the cube and 0 outside.
    pub fn depth(&self, x: &[f64]) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (a, b))| {
                let half = 0.5 * (b - a);
                (half - (v - 0.5 * (a + b)).abs()) / half
            })
            .fold(1.0, f64::min)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CubeGrid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
    /// Cells per axis.
    pub counts: Vec<usize>,
    /// Cubes in lexicographic label order, last axis fastest.
    pub cubes: Vec<Cube>,
}

/// A word of cube indices into [`CubeGrid::cubes`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RouteWord(pub Vec<usize>);

impl RouteWord {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self, grid: &CubeGrid) -> Vec<Vec<i64>> {
        self.0.iter().map(|&i| grid.cubes[i].label.clone()).collect()
    }

    /// Map each letter through `f` and collapse consecutive repeats.
    pub fn coarsen(&self, f: impl Fn(usize) -> usize) -> RouteWord {
        let mut out: Vec<usize> = Vec::new();
        for &c in &self.0 {
            let m = f(c);
            if out.last() != Some(&m) {
                out.push(m);
            }
        }
        RouteWord(out)
    }
}

impl CubeGrid {
    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn index_of(&self, label: &[i64]) -> Option<usize> {
        if label.len() != self.dim() {
            return None;
        }
        let mut idx = 0usize;
        for (l, &c) in label.iter().zip(&self.counts) {
            if *l < 0 || *l as usize >= c {
                return None;
            }
            idx = idx * c + *l as usize;
        }
        Some(idx)
    }

    /// The cube whose open interior contains `x`.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut label = Vec::with_capacity(self.dim());
        for (k, v) in x.iter().enumerate() {
            let cell = ((v - self.lower[k]) / self.epsilon).floor();
            if !(cell >= 0.0 && cell < self.counts[k] as f64) {
                return None;
            }
            label.push(cell as i64);
        }
        let idx = self.index_of(&label)?;
        self.cubes[idx].contains(x).then_some(idx)
    }

    /// Cubes at Chebyshev distance exactly one.
    pub fn neighbours(&self, index: usize) -> Vec<usize> {
        let base = &self.cubes[index].label;
        let n = self.dim();
        let mut out = Vec::new();
        for code in 0..3usize.pow(n as u32) {
            let mut rest = code;
            let mut label = base.clone();
            let mut moved = false;
            for l in label.iter_mut().rev() {
                let step = (rest % 3) as i64 - 1;
                rest /= 3;
                moved |= step != 0;
                *l += step;
            }
            if moved {
                if let Some(j) = self.index_of(&label) {
                    out.push(j);
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Cut `[lower, upper]` into cubes of pitch `ε` with gaps `δ` and attach a form to each.
pub fn build_grid(lower: &[f64], upper: &[f64], epsilon: f64, delta: f64, regime: &Regime) -> Result<CubeGrid, ReconstructError> {
    let n = lower.len();
    if n == 0 || upper.len() != n {
        return Err(ReconstructError::Invalid("bounds must have equal nonzero length".into()));
    }
    if !(epsilon > delta && delta > 0.0 && epsilon.is_finite()) {
        return Err(ReconstructError::Invalid("need ε > δ > 0".into()));
    }
    let mut counts = Vec::with_capacity(n);
    for (a, b) in lower.iter().zip(upper) {
        let cells = ((b - a) / epsilon).round();
        if !(cells >= 1.0) || ((b - a) - cells * epsilon).abs() > 1e-9 * epsilon.max(b - a) {
            return Err(ReconstructError::Invalid(format!("extent {} is not a positive multiple of ε = {epsilon}", b - a)));
        }
        counts.push(cells as usize);
    }
    if let Regime::Step2(setup) = regime {
        if n != 3 || setup.v1.dim() != 3 || setup.v2.dim() != 3 {
            return Err(ReconstructError::Invalid("the step-two regime needs n = 3".into()));
        }
    }
    let total: usize = counts.iter().product();
    let labels: Vec<Vec<i64>> = (0..total)
        .map(|idx| {
            let mut rest = idx;
            let mut label = vec![0i64; n];
            for k in (0..n).rev() {
                label[k] = (rest % counts[k]) as i64;
                rest /= counts[k];
            }
            label
        })
        .collect();
    let cubes = labels
        .into_par_iter()
        .map(|label| {
            let lo: Vec<f64> = (0..n).map(|k| lower[k] + label[k] as f64 * epsilon + 0.5 * delta).collect();
            let hi: Vec<f64> = (0..n).map(|k| lower[k] + (label[k] + 1) as f64 * epsilon - 0.5 * delta).collect();
            let region = BoxRegion::new(lo.clone(), hi.clone());
            let (form, lambda) = match regime {
                Regime::Elliptic => (construct_elliptic_bump(&region)?, None),
                Regime::Step2(setup) => {
                    let (form, lambda) = step2_cube_form(&region, setup)?;
                    (form, Some(lambda))
                }
            };
            Ok(Cube { label, lower: lo, upper: hi, form, lambda })
        })
        .collect::<Result<Vec<_>, ReconstructError>>()?;
    Ok(CubeGrid { lower: lower.to_vec(), upper: upper.to_vec(), epsilon, delta, counts, cubes })
}

/// The step-two form on one cube. In unit coordinates `u = a∘x + b` the
/// operator `V_2² + fV_2 + g` becomes `a₁²(∂²_u + (f/a₁)∂_u + g/a₁²)`.
fn step2_cube_form(region: &BoxRegion, setup: &Step2Setup) -> Result<(OneForm, f64), NondegError> {
    let scale: Vec<f64> = (0..3).map(|k| 2.0 / (region.upper[k] - region.lower[k])).collect();
    let centre = region.centre();
    // x(u) = centre + u / a
    let x_of_u: Vec<Expression> = (0..3).map(|k| Expression::var(k) / scale[k] + centre[k]).collect();
    let f_unit = setup.f.substitute(&x_of_u) / scale[0];
    let g_unit = setup.g.substitute(&x_of_u) / (scale[0] * scale[0]);
    let grid = GridSpec::cube(3, 1.0, setup.sard_side);
    let selection = sard_lambda_select(&f_unit, &g_unit, &grid, &setup.lambda_candidates, &setup.tolerances)?;
    let u_of_x: Vec<Expression> = (0..3).map(|k| region.unit_coordinate(k)).collect();
    let c1 = selection.c1.substitute(&u_of_x);
    let form = construct_step2(&c1, &Expression::zero(), &setup.v1, &setup.v2)?;
    Ok((form, selection.lambda))
}

/// `[φ_{z₁}, …, φ_{z_m}]_{0,T}`; the empty word gives 1.
pub fn extended_signature(traj: &Trajectory, word: &RouteWord, grid: &CubeGrid) -> Result<f64, ReconstructError> {
    if word.is_empty() {
        return Ok(1.0);
    }
    let forms: Vec<OneForm> = word.0.iter().map(|&i| grid.cubes[i].form.clone()).collect();
    Ok(iterated_line_integral(&forms, traj)?.value)
}

/// The cubes whose open interiors the stored points visit, with consecutive
/// repeats collapsed; excursions into gaps add no letter.
pub fn true_route(traj: &Trajectory, grid: &CubeGrid) -> RouteWord {
    let mut out: Vec<usize> = Vec::new();
    for j in 0..traj.n_points() {
        if let Some(c) = grid.locate(traj.point(j)) {
            if out.last() != Some(&c) {
                out.push(c);
            }
        }
    }
    RouteWord(out)
}

/// Thresholds of the crossing-cleanliness predicate.
#[derive(Debug, Clone, Copy, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Cleanliness {
    /// Minimum driver mesh steps spent inside a cube on each visit.
    pub min_dwell_steps: usize,
    /// Minimum penetration depth on each visit, relative to the half-side.
    pub min_depth: f64,
}

impl Default for Cleanliness {
    fn default() -> Self {
        Cleanliness { min_dwell_steps: 2, min_depth: 0.05 }
    }
}

/// A path crosses the grid cleanly when every visit to a cube lasts at least
/// `min_dwell_steps` mesh steps and reaches relative depth `min_depth`. A visit
/// runs from the first point in a cube until the path is next seen in a
/// different cube, so excursions into a gap and back belong to the same visit.
pub fn crossing_is_clean(traj: &Trajectory, grid: &CubeGrid, rule: &Cleanliness) -> bool {
    let per_step = 2 * traj.substeps();
    // (cube, points inside, deepest penetration)
    let mut visits: Vec<(usize, usize, f64)> = Vec::new();
    for j in 0..traj.n_points() {
        let x = traj.point(j);
        let Some(c) = grid.locate(x) else { continue };
        let depth = grid.cubes[c].depth(x);
        match visits.last_mut() {
            Some(v) if v.0 == c => {
                v.1 += 1;
                v.2 = v.2.max(depth);
            }
            _ => visits.push((c, 1, depth)),
        }
    }
    let dwell_points = rule.min_dwell_steps * per_step;
    visits.iter().all(|v| v.1 >= dwell_points && v.2 >= rule.min_depth)
}

#[derive(Debug, Clone, Copy, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouteOptions {
    /// Per-letter relative significance `r`; a word of length `m` is kept when
    /// `|signature| > r^m · L` with `L = ε · path scale`. `None` means `1e-6`.
    pub signif_tol: Option<f64>,
    pub max_len: usize,
    pub max_frontier: usize,
}

impl Default for RouteOptions {
    fn default() -> Self {
        RouteOptions { signif_tol: None, max_len: 16, max_frontier: 4096 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RouteRecovery {
    pub word: RouteWord,
    pub signature: f64,
    /// Signatures of every prefix of the recovered word, shortest first.
    pub prefix_signatures: Vec<f64>,
    /// Largest single-cube signature among unvisited neighbouring cubes.
    pub noise_floor: f64,
    /// The per-letter threshold actually used.
    pub letter_tol: f64,
    pub length_scale: f64,
    /// Surviving words per length.
    pub survivors: Vec<usize>,
    /// True when words of `max_len` letters still survived.
    pub truncated: bool,
}

impl RouteRecovery {
    pub fn threshold(&self, len: usize) -> f64 {
        self.letter_tol.powi(len as i32) * self.length_scale
    }
}

struct Candidate {
    word: Vec<usize>,
    running: Vec<f64>,
    value: f64,
}

/// Breadth-first search for the longest word with significant extended signature.
pub fn recover_route(traj: &Trajectory, grid: &CubeGrid, opts: &RouteOptions) -> Result<RouteRecovery, ReconstructError> {
    if traj.dim() != grid.dim() {
        return Err(ReconstructError::Invalid("trajectory and grid dimensions differ".into()));
    }
    let fields = traj.fields();
    let x0 = traj.initial_point();
    let path_scale = (0..traj.n_points())
        .map(|j| traj.point(j).iter().zip(x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let length_scale = grid.epsilon * path_scale;

    // Forms are exactly zero outside their cubes, so only cubes holding a stored
    // point need evaluating; unvisited neighbours are evaluated in full to
    // measure the noise floor.
    let mut visited = vec![false; grid.len()];
    for j in 0..traj.n_points() {
        if let Some(c) = grid.locate(traj.point(j)) {
            visited[c] = true;
        }
    }
    let mut probe = vec![false; grid.len()];
    for (c, v) in visited.iter().enumerate() {
        if *v {
            for nb in grid.neighbours(c) {
                probe[nb] = !visited[nb];
            }
        }
    }
    let traces: Vec<Option<FormTrace>> = (0..grid.len())
        .into_par_iter()
        .map(|c| -> Result<Option<FormTrace>, ReconstructError> {
            if !visited[c] && !probe[c] {
                return Ok(None);
            }
            let cube = &grid.cubes[c];
            let eval = FormEvaluator::new(&cube.form, fields, false);
            let trace = if visited[c] { eval.trace_in_box(traj, &cube.lower, &cube.upper)? } else { eval.trace(traj)? };
            Ok(Some(trace))
        })
        .collect::<Result<_, _>>()?;
    let ones = vec![1.0; traj.n_points()];
    let mut noise_floor: f64 = 0.0;
    for c in (0..grid.len()).filter(|&c| probe[c]) {
        let t = traces[c].as_ref().expect("probed");
        if !t.is_zero() {
            noise_floor = noise_floor.max(extend_running(&ones, t, traj).last().copied().unwrap_or(0.0).abs());
        }
    }
    let base = opts.signif_tol.unwrap_or(1e-6);
    let letter_tol = if length_scale > 0.0 { base.max(10.0 * noise_floor / length_scale) } else { base };
    let threshold = |m: usize| letter_tol.powi(m as i32) * length_scale;

    let live: Vec<usize> = (0..grid.len()).filter(|&c| visited[c]).collect();
    let mut frontier: Vec<Candidate> = live
        .par_iter()
        .map(|&c| {
            let running = extend_running(&ones, traces[c].as_ref().expect("visited"), traj);
            let value = *running.last().expect("points");
            Candidate { word: vec![c], running, value }
        })
        .filter(|cand| cand.value.abs() > threshold(1))
        .collect();
    let mut survivors = vec![frontier.len()];
    let mut best_level: Vec<Candidate> = Vec::new();
    let mut prefixes: Vec<Vec<(Vec<usize>, f64)>> = Vec::new();
    let mut truncated = false;
    while !frontier.is_empty() {
        prefixes.push(frontier.iter().map(|c| (c.word.clone(), c.value)).collect());
        let len = frontier[0].word.len();
        if len >= opts.max_len {
            truncated = true;
            best_level = frontier;
            break;
        }
        let next: Vec<Candidate> = frontier
            .par_iter()
            .flat_map_iter(|cand| {
                let last = *cand.word.last().expect("nonempty");
                grid.neighbours(last)
                    .into_iter()
                    .filter(|nb| visited[*nb])
                    .filter_map(|nb| {
                        let running = extend_running(&cand.running, traces[nb].as_ref().expect("visited"), traj);
                        let value = *running.last().expect("points");
                        (value.abs() > threshold(len + 1)).then(|| {
                            let mut word = cand.word.clone();
                            word.push(nb);
                            Candidate { word, running, value }
                        })
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        if next.len() > opts.max_frontier {
            return Err(ReconstructError::SearchLimit { length: len + 1, limit: opts.max_frontier });
        }
        if next.is_empty() {
            best_level = frontier;
            break;
        }
        survivors.push(next.len());
        frontier = next;
    }

    if best_level.is_empty() {
        return Ok(RouteRecovery {
            word: RouteWord(vec![]),
            signature: 1.0,
            prefix_signatures: vec![],
            noise_floor,
            letter_tol,
            length_scale,
            survivors,
            truncated,
        });
    }
    let mut ranked: Vec<(RouteWord, f64)> = best_level.into_iter().map(|c| (RouteWord(c.word), c.value)).collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
    if ranked.len() > 1 {
        return Err(ReconstructError::AmbiguousRoute { best: ranked[0].0.clone(), candidates: ranked });
    }
    let (word, signature) = ranked.pop().expect("one");
    let prefix_signatures = (1..=word.len())
        .map(|k| prefixes[k - 1].iter().find(|(w, _)| w[..] == word.0[..k]).map(|p| p.1).expect("prefix survived"))
        .collect();
    Ok(RouteRecovery { word, signature, prefix_signatures, noise_floor, letter_tol, length_scale, survivors, truncated })
}

/// Recovered and true routes side by side.
#[derive(Debug, Clone, Serialize)]
pub struct RouteReport {
    pub recovered: Vec<Vec<i64>>,
    pub truth: Vec<Vec<i64>>,
    #[serde(rename = "match")]
    pub matches: bool,
    pub clean: bool,
    pub signature: f64,
    pub prefix_signatures: Vec<f64>,
    pub letter_tol: f64,
    pub noise_floor: f64,
    pub survivors: Vec<usize>,
}

pub fn route_report(traj: &Trajectory, grid: &CubeGrid, recovery: &RouteRecovery, rule: &Cleanliness) -> RouteReport {
    let truth = true_route(traj, grid);
    RouteReport {
        recovered: recovery.word.labels(grid),
        truth: truth.labels(grid),
        matches: truth == recovery.word,
        clean: crossing_is_clean(traj, grid, rule),
        signature: recovery.signature,
        prefix_signatures: recovery.prefix_signatures.clone(),
        letter_tol: recovery.letter_tol,
        noise_floor: recovery.noise_floor,
        survivors: recovery.survivors.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout_and_gaps() {
        let g = build_grid(&[-2.0, -2.0], &[2.0, 2.0], 1.0, 0.1, &Regime::Elliptic).unwrap();
        assert_eq!(g.counts, vec![4, 4]);
        assert_eq!(g.len(), 16);
        assert_eq!(g.cubes[1].label, vec![0, 1]);
        assert!((g.cubes[1].lower[1] - (-0.95)).abs() < 1e-15);
        assert!((g.cubes[2].lower[1] - g.cubes[1].upper[1] - 0.1).abs() < 1e-12);
        assert_eq!(g.locate(&[-1.5, -0.5]), Some(1));
        assert_eq!(g.locate(&[-1.0, -0.5]), None);
        assert_eq!(g.neighbours(0), vec![1, 4, 5]);
        assert_eq!(g.neighbours(5).len(), 8);
        assert!(build_grid(&[0.0], &[1.5], 1.0, 0.1, &Regime::Elliptic).is_err());
        assert!(build_grid(&[0.0, 0.0], &[1.0, 1.0], 0.5, 0.5, &Regime::Elliptic).is_err());
    }

    #[test]
    fn coarsen_collapses() {
        let w = RouteWord(vec![0, 1, 2, 5, 4]);
        assert_eq!(w.coarsen(|c| c / 2), RouteWord(vec![0, 1, 2]));
    }
}
