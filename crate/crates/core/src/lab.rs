//! Monte Carlo experiments on line integrals: rejection-conditioned samples,
//! atom detection, kernel-vanishing rates and the residual of the kernel
//! identity along individual paths.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{replicate_rng, DriverError, FbmSampler, FbmSpec};
use crate::expr::{EvalError, Expression};
use crate::geometry::{bracket_of_word, OneForm, Word};
use crate::integrals::{IntegralError, PathFunctional};
use crate::nondeg::{psi_table, BoxRegion};
use crate::rde::{RdeError, SolverOptions, System, Trajectory};

/// Fewest conditional samples a run may end with.
pub const MIN_CONDITIONAL: usize = 30;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("only {found} of the replicates satisfied the event; at least {required} are needed")]
    InsufficientConditional { found: usize, required: usize },
    #[error("df_k ∧ df_(k+1) are not independent at x0 (rank {rank} of {needed})")]
    IndependenceFailure { rank: usize, needed: usize },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("replicate {replicate}: {source}")]
    Solve { replicate: u64, source: RdeError },
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Integral(#[from] IntegralError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabTolerances {
    /// Samples within this distance of a cluster's smallest value join it.
    pub atom_tol: f64,
    /// A kernel with sup-norm at or below this counts as vanishing.
    pub kernel_tol: f64,
}

impl Default for LabTolerances {
    fn default() -> Self {
        LabTolerances { atom_tol: 1e-6, kernel_tol: 1e-4 }
    }
}

/// One Monte Carlo experiment: simulate `dX = V(X) dB^H`, integrate the
/// forms (iterated when more than one), and flag whether the path visited
/// the event regions in order.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub system: System,
    pub x0: Vec<f64>,
    /// Driver law; `seed` is the master seed and `dim` must equal the number of fields.
    pub driver: FbmSpec,
    pub solver: SolverOptions,
    pub forms: Vec<OneForm>,
    /// Open boxes the path must enter, in this order. Empty means every path counts.
    pub event: Vec<BoxRegion>,
    pub replicates: u64,
    pub tolerances: LabTolerances,
    /// Compute kernel sup-norms (needs the Jacobian, roughly doubling the cost).
    pub kernel: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), LabError> {
        let n = self.system.dim();
        if self.replicates == 0 {
            return Err(LabError::Invalid("replicates must be at least 1".into()));
        }
        if self.x0.len() != n {
            return Err(LabError::Invalid(format!("x0 has {} entries for n = {n}", self.x0.len())));
        }
        if self.driver.dim != self.system.n_drivers() {
            return Err(LabError::Invalid(format!("{} driver channels for {} fields", self.driver.dim, self.system.n_drivers())));
        }
        self.driver.validate()?;
        if self.forms.is_empty() {
            return Err(LabError::Invalid("at least one form is required".into()));
        }
        if let Some(f) = self.forms.iter().find(|f| f.dim() != n) {
            return Err(LabError::Invalid(format!("form of dimension {} in n = {n}", f.dim())));
        }
        for r in &self.event {
            if r.dim() != n || r.upper.len() != n || r.lower.iter().zip(&r.upper).any(|(a, b)| !(a < b)) {
                return Err(LabError::Invalid("event regions must be nonempty open boxes in ℝⁿ".into()));
            }
        }
        Ok(())
    }
}

/// Whether the stored points enter each region's interior, in order.
/// Consecutive regions may be entered at the same point.
pub fn visits_in_order(traj: &Trajectory, regions: &[BoxRegion]) -> bool {
    let mut next = 0;
    for j in 0..traj.n_points() {
        while next < regions.len() && regions[next].contains(traj.point(j)) {
            next += 1;
        }
        if next == regions.len() {
            return true;
        }
    }
    regions.is_empty()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub replicate: u64,
    pub seed: u64,
    #[serde(rename = "F")]
    pub value: f64,
    pub event: bool,
    /// `NaN` when kernels were not computed.
    pub kernel_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples whose event flag is set.
    pub fn conditional(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.event)
    }

    pub fn conditional_values(&self) -> Vec<f64> {
        self.conditional().map(|s| s.value).collect()
    }

    pub fn event_rate(&self) -> f64 {
        self.conditional().count() as f64 / self.len() as f64
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W, comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulate every replicate, without requiring any conditional samples.
///
/// Replicate `i` draws from its own stream of the master seed and results are
/// collected in replicate order, so the output does not depend on the
/// number of worker threads.
pub fn simulate_samples(spec: &ExperimentSpec) -> Result<SampleSet, LabError> {
    spec.validate()?;
    let sampler = FbmSampler::new(&spec.driver)?;
    let functional = PathFunctional::new(&spec.forms, spec.system.fields())?;
    let opts = SolverOptions { jacobian: spec.kernel, ..spec.solver };
    let samples = (0..spec.replicates)
        .into_par_iter()
        .map(|replicate| -> Result<Sample, LabError> {
            let w = sampler.sample(&mut replicate_rng(spec.driver.seed, replicate));
            let traj = spec.system.solve(&spec.x0, &w, &opts).map_err(|source| LabError::Solve { replicate, source })?;
            let eval = functional.evaluate(&traj, spec.kernel)?;
            Ok(Sample {
                replicate,
                seed: spec.driver.seed,
                value: eval.value,
                event: visits_in_order(&traj, &spec.event),
                kernel_sup: eval.kernel.map_or(f64::NAN, |k| k.sup_norm()),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SampleSet { samples })
}

/// [`simulate_samples`], failing when fewer than [`MIN_CONDITIONAL`] replicates meet the event.
pub fn run_conditional_samples(spec: &ExperimentSpec) -> Result<SampleSet, LabError> {
    let set = simulate_samples(spec)?;
    let found = set.conditional().count();
    if found < MIN_CONDITIONAL {
        return Err(LabError::InsufficientConditional { found, required: MIN_CONDITIONAL });
    }
    Ok(set)
}

/// A cluster of samples carrying more mass than sampling noise explains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    /// Mean of the clustered values.
    pub value: f64,
    pub mass: f64,
    /// Binomial standard error of `mass`.
    pub sigma: f64,
    pub count: usize,
}

/// Clusters of `values` wider than `3/√N`.
///
/// Sorted values are grouped greedily: a cluster starts at the smallest
/// unassigned value `v` and takes everything up to `v + atom_tol`.
pub fn atom_test(values: &[f64], atom_tol: f64) -> Result<Vec<Atom>, LabError> {
    if values.len() < MIN_CONDITIONAL {
        return Err(LabError::InsufficientConditional { found: values.len(), required: MIN_CONDITIONAL });
    }
    if !(atom_tol >= 0.0) {
        return Err(LabError::Invalid("atom_tol must be non-negative".into()));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let threshold = 3.0 / n.sqrt();
    let mut atoms = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] - sorted[i] <= atom_tol {
            j += 1;
        }
        let count = j - i;
        let mass = count as f64 / n;
        if mass > threshold {
            let value = sorted[i..j].iter().sum::<f64>() / count as f64;
            atoms.push(Atom { value, mass, sigma: (mass * (1.0 - mass) / n).sqrt(), count });
        }
        i = j;
    }
    Ok(atoms)
}

/// Fraction of conditional samples whose kernel sup-norm is at most `kernel_tol`;
/// `None` without conditional samples or kernels.
pub fn kernel_vanishing_rate(samples: &SampleSet, kernel_tol: f64) -> Option<f64> {
    let sups: Vec<f64> = samples.conditional().map(|s| s.kernel_sup).collect();
    if sups.is_empty() || sups.iter().any(|v| v.is_nan()) {
        return None;
    }
    Some(sups.iter().filter(|v| **v <= kernel_tol).count() as f64 / sups.len() as f64)
}

/// Summary of a sample set, as written next to the CSV.
#[derive(Debug, Clone, Serialize)]
pub struct SampleSummary {
    pub replicates: usize,
    pub conditional: usize,
    pub event_rate: f64,
    pub atom_tol: f64,
    pub atoms: Vec<Atom>,
    pub atom_threshold: f64,
    pub kernel_tol: f64,
    pub kernel_vanishing_rate: Option<f64>,
    /// `(p, quantile)` of the conditional values.
    pub percentiles: Vec<(f64, f64)>,
}

pub fn summarize(samples: &SampleSet, tol: &LabTolerances) -> Result<SampleSummary, LabError> {
    let values = samples.conditional_values();
    let atoms = atom_test(&values, tol.atom_tol)?;
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let percentiles = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99]
        .iter()
        .map(|&p| {
            let idx = ((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1);
            (p, sorted[idx])
        })
        .collect();
    Ok(SampleSummary {
        replicates: samples.len(),
        conditional: values.len(),
        event_rate: samples.event_rate(),
        atom_tol: tol.atom_tol,
        atom_threshold: 3.0 / (values.len() as f64).sqrt(),
        atoms,
        kernel_tol: tol.kernel_tol,
        kernel_vanishing_rate: kernel_vanishing_rate(samples, tol.kernel_tol),
        percentiles,
    })
}

/// `r_I(t) = (η_tΦ_t⁻¹ + φ(X_t))·V_I(X_t) + ψ_I(X_t)` on every stored point,
/// where `η_t` is the tail integral entering the kernel of `∫φ(dX)`.
///
/// For a single letter this is the kernel row of that driver.
pub fn consalldeg_residual(traj: &Trajectory, phi: &OneForm, word: &Word) -> Result<Vec<f64>, LabError> {
    let fields = traj.fields();
    if word.letters().iter().any(|&a| a >= fields.len()) {
        return Err(LabError::Invalid(format!("word {word} uses a letter beyond {} fields", fields.len())));
    }
    let n = traj.dim();
    let eval = PathFunctional::new(std::slice::from_ref(phi), fields)?.evaluate(traj, true)?;
    let v_word = bracket_of_word(fields, word);
    let psi = psi_table(phi, fields, std::slice::from_ref(word)).get(word).cloned().unwrap_or_else(Expression::zero);
    let mut out = Vec::with_capacity(traj.n_points());
    for j in 0..traj.n_points() {
        let x = traj.point(j);
        let inv = traj.inverse_jacobian_slice(j);
        let eta = &eval.eta[j * n..(j + 1) * n];
        let phi_x = phi.eval(x)?;
        let v = v_word.eval(x)?;
        let paired: f64 = (0..n).map(|i| ((0..n).map(|l| eta[l] * inv[l * n + i]).sum::<f64>() + phi_x[i]) * v[i]).sum();
        out.push(paired + psi.eval(x)?);
    }
    Ok(out)
}

/// Rank of the stacked coefficient rows of `df_k ∧ df_(k+1)` at `x`.
pub fn wedge_rank(functions: &[Expression], n: usize, x: &[f64], rank_tol: f64) -> Result<usize, LabError> {
    if functions.len() < 2 {
        return Ok(0);
    }
    let grads: Vec<Vec<f64>> =
        functions.iter().map(|f| (0..n).map(|i| f.diff(i).eval(x)).collect::<Result<Vec<_>, _>>()).collect::<Result<_, _>>()?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    if pairs.is_empty() {
        return Ok(0);
    }
    let rows = functions.len() - 1;
    let m = DMatrix::from_fn(rows, pairs.len(), |k, c| {
        let (i, j) = pairs[c];
        let (a, b) = (&grads[k], &grads[k + 1]);
        a[i] * b[j] - a[j] * b[i]
    });
    let sv = m.singular_values();
    let scale = sv.max().max(f64::MIN_POSITIVE);
    Ok(sv.iter().filter(|s| **s > rank_tol * scale && **s > rank_tol).count())
}

/// Samples of `F = ∫⋯∫ df_1 ⋯ df_m` with atoms detected among all replicates.
#[derive(Debug, Clone, Serialize)]
pub struct ExactFormExperiment {
    pub wedge_rank: usize,
    pub samples: SampleSet,
    pub atoms: Vec<Atom>,
}

/// Run the iterated integral of exact forms after checking that
/// `df_1∧df_2, …, df_(m−1)∧df_m` are independent at `x0`. The event and
/// forms of `spec` are ignored.
pub fn exactform_pair_experiment(functions: &[Expression], spec: &ExperimentSpec) -> Result<ExactFormExperiment, LabError> {
    if functions.is_empty() {
        return Err(LabError::Invalid("at least one function is required".into()));
    }
    let n = spec.system.dim();
    let rank = wedge_rank(functions, n, &spec.x0, 1e-10)?;
    let needed = functions.len() - 1;
    if rank < needed {
        return Err(LabError::IndependenceFailure { rank, needed });
    }
    let spec = ExperimentSpec {
        forms: functions.iter().map(|f| OneForm::exact(f, n)).collect(),
        event: Vec::new(),
        ..spec.clone()
    };
    let samples = simulate_samples(&spec)?;
    let atoms = atom_test(&samples.conditional_values(), spec.tolerances.atom_tol)?;
    Ok(ExactFormExperiment { wedge_rank: rank, samples, atoms })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atoms_of_constant_samples() {
        let atoms = atom_test(&[2.5; 100], 1e-9).unwrap();
        assert_eq!(atoms.len(), 1);
        assert_eq!(atoms[0].mass, 1.0);
        assert_eq!(atoms[0].value, 2.5);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(atom_test(&[0.0; 29], 1e-9), Err(LabError::InsufficientConditional { found: 29, .. })));
    }

    #[test]
    fn wedge_of_equal_functions_vanishes() {
        let f = Expression::parse("bump(x)*x").unwrap();
        assert_eq!(wedge_rank(&[f.clone(), f], 2, &[0.0, 0.0], 1e-10).unwrap(), 0);
    }
}
