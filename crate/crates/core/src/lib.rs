//! Variable-step BDF2/BDF3 time integration built on discrete orthogonal
//! convolution (DOC) kernels, together with the companion-matrix stability
//! machinery that certifies when those kernels decay geometrically.
//!
//! The crate is organized along the pipeline an experiment follows:
//!
//! * [`mesh`] — uniform, graded, and random time grids plus step-ratio
//!   statistics;
//! * [`kernels`] — BDF convolution kernels, the DOC inverse kernels, their
//!   orthogonality identities and closed forms;
//! * [`stability`] — companion matrices, elliptic norms, step-ratio threshold
//!   roots, and per-mesh decay certificates;
//! * [`integrator`] — the BDF2/BDF3 stepper with an SDIRK starter, error and
//!   order metrics, and perturbed twin runs for stability bound checks;
//! * [`experiments`] — the bundled stiff model problem, convergence-table and
//!   kernel-figure drivers, and CSV/JSON report emission.
//!
//! All floating-point work is performed in `f64`. Random meshes are drawn
//! from a seeded ChaCha8 generator, so every experiment is reproducible from
//! the seed recorded in its report.

pub mod error;
pub mod experiments;
pub mod integrator;
pub mod kernels;
pub mod mesh;
pub mod stability;

pub use error::{Error, Result};
pub use experiments::{DocPattern, ExperimentReport, FigureDoc};
pub use integrator::{OdeProblem, PerturbationRun, Trajectory};
pub use kernels::{DocTable, KernelTable};
pub use mesh::{MeshStats, TimeMesh};
pub use stability::{Companion2x2, HNormConfig, StabilityCertificate, StepRatioThresholds};
