//! D-optimal experimental designs on finite candidate sets, computed by a
//! backward-Euler discretization of the gradient flow of the log-determinant
//! energy in square-root coordinates.
//!
//! Typical use: build a [`CandidateSet`], evaluate a [`Vandermonde`] matrix for a
//! [`BasisSpec`], then call [`solve_adaptive`] on [`Objective::energy_f`].

pub mod basis;
pub mod compression;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod generators;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod regularization;
pub mod step;

pub use basis::BasisSpec;
pub use compression::{compress, CompressedDesign};
pub use design::{build_vandermonde, energy_e, energy_f, gram_matrix, CandidateSet, Design, SqrtDesign, Vandermonde};
pub use error::{Error, Result};
pub use experiment::{execute, run_experiment, Algorithm, ExperimentConfig, ExperimentOutcome, Overrides};
pub use flow::{solve_adaptive, solve_fixed_step, FlowOutcome, FlowParams, FlowTrace, Objective};
pub use linalg::Execution;
pub use regularization::{build_phi2, kernel_projector, solve_regularized, EtaSchedule, KernelProjector, Phi2Space};
