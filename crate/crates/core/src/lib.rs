//! Deterministic simulator for diffusion-based decentralized multi-task
//! representation learning.
//!
//! `L` simulated nodes hold disjoint subsets of `T` linear-regression tasks
//! whose parameter vectors all lie in a common rank-`r` subspace of `R^d`.
//! The nodes jointly recover an orthonormal basis of that subspace while
//! exchanging only `d x r` subspace estimates (and one scalar during
//! initialization) with their graph neighbors. Raw measurements never leave
//! a node.
//!
//! The crate is organized around one experiment pipeline:
//!
//! * [`synth`] generates ground-truth low-rank problems and per-task
//!   Gaussian measurements.
//! * [`topology`] builds the communication graph, the node-to-task
//!   partition, and the mixing matrix with its spectral gap.
//! * [`consensus`] runs synchronous neighbor-averaging rounds (the
//!   agreement protocol) with full message accounting.
//! * [`spectral_init`] computes the decentralized truncated spectral
//!   initialization via a distributed power method.
//! * [`solvers`] implements the four optimization algorithms
//!   (Dif-AltGDmin, centralized AltGDmin, Dec-AltGDmin, and a
//!   DGD-style variant) on top of shared least-squares and gradient
//!   kernels.
//! * [`metrics`] defines the per-iteration diagnostics, the simulated
//!   communication-time model, and the CSV trace schema.
//! * [`harness`] drives multi-trial seeded experiments and writes raw and
//!   aggregated CSV output plus a metadata file.
//!
//! Everything is deterministic: a run is a pure function of its
//! configuration and base seed, and repeated runs produce byte-identical
//! output files.

pub mod consensus;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod solvers;
pub mod spectral_init;
pub mod synth;
pub mod topology;

pub use error::{Error, Result};
pub use harness::{preset, run_experiment, ExperimentConfig, ExperimentSummary};
pub use linalg::{Matrix, OrthonormalBasis, Vector};
pub use metrics::{CommModel, IterationRecord, RunTrace};
pub use solvers::{Algorithm, EtaRule, NodeState, SolverConfig};
pub use spectral_init::{InitConfig, InitOutcome};
pub use synth::ProblemInstance;
pub use topology::{MixingScheme, Network};
