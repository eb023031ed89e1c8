/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod driver;
pub mod expr;
pub mod geometry;
pub mod integrals;
pub mod lab;
pub mod nondeg;
pub mod rde;
pub mod reconstruct;
pub mod selftest;

pub use driver::{DriverPath, FbmSampler, FbmSpec};
pub use expr::{EvalError, Expression, ParseError, Program, VarNames};
pub use geometry::{CompiledFields, Frame, FrameOptions, OneForm, TwoForm, VectorField, Word};
pub use rde::{SolverOptions, System, Trajectory};
pub use lab::{ExperimentSpec, LabTolerances, Sample, SampleSet};
pub use nondeg::{CriterionReport, GridSpec, NondegError, Verdict, ZeroTolerances};
pub use reconstruct::{CubeGrid, Regime, RouteWord};
