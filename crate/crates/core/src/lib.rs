//! Finite-element solver for semilinear parabolic SPDEs driven by Q-Wiener
//! noise, with a stochastic Rosenbrock-type time stepper, baseline
//! integrators and a Monte Carlo strong-convergence harness.

pub mod darcy;
pub mod error;
pub mod expm;
pub mod fem;
pub mod harness;
pub mod integrators;
pub mod linsolve;
pub mod mesh;
pub mod noise;
pub mod operators;
pub mod problem;
pub mod sparse;

pub use error::{Error, Result};
pub use harness::{fit_order, run_study, timing_profile, ConvergenceReport, OrderFit, StudyConfig};
pub use integrators::{integrate, NoiseInput, Scheme, SchemeConfig, StepContext, Trajectory};
pub use linsolve::{SolveReport, SolverSettings};
pub use mesh::{BcLayout, Mesh};
pub use noise::{NoiseKind, NoisePath, NoiseSpec};
pub use operators::Drift;
pub use problem::{Problem, ProblemSpec};
pub use sparse::CsrMatrix;

/// Seed used whenever a configuration does not name one.
pub const DEFAULT_MASTER_SEED: u64 = 20_240_601;
