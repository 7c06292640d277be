//! Numerical laboratory for symmetrised ensembles of continuous-time random
//! walks on finite state spaces.
//!
//! The crate is organised around one pipeline:
//!
//! * [`markov_core`] builds generators, transition / Feynman-Kac / Boltzmann
//!   kernels, lattice Laplacians and principal eigenpairs;
//! * [`path_sampler`] draws exact jump paths and endpoint-conditioned bridges
//!   and measures occupation local times;
//! * [`pair_measure`] handles equal-marginal pair probability measures, their
//!   entropies, discretizations and exact permutation counting;
//! * [`symmetrized_ensemble`] samples the permutation-symmetrised path
//!   ensemble and evaluates its partition functions exactly through the
//!   cycle-type recursion;
//! * [`rate_engine`] computes the large-deviation rate functions, their
//!   Legendre duals and the saddle-point certificates;
//! * [`bose_trace`] evaluates symmetric-subspace (Bose) traces and the
//!   mean-field free energy, including the two-state telegraph benchmark.
//!
//! All numeric routines are deterministic given an explicit
//! [`path_sampler::RngStream`]; nothing in the crate touches global state.

pub mod bose_trace;
pub mod functional;
pub mod markov_core;
pub mod pair_measure;
pub mod path_sampler;
pub mod rate_engine;
pub mod symmetrized_ensemble;

pub use bose_trace::{MeanFieldProblem, SymmetricBasis};
pub use functional::ScalarFn;
pub use markov_core::{Boundary, Generator, Kernel, KernelKind, StateSpace};
pub use pair_measure::{GridPairMeasure, PairMeasure, ReferenceMeasure};
pub use path_sampler::{BridgeSampler, JumpPath, LocalTime, RngStream};
pub use rate_engine::{RateProblem, SaddleCertificate};
pub use symmetrized_ensemble::{
    EnsembleSample, EnsembleSampler, EnsembleSpec, MeanPath, OccupationMeasure,
};
