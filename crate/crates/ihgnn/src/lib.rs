//! Implicit hypergraph neural networks.
//!
//! Node representations are computed as the fixed point of
//! `Z = phi(M Z W + X~)` where `M` is the normalized hypergraph propagation
//! operator, rather than by stacking a finite number of propagation layers.
//! The crate provides:
//!
//! - [`linalg`]: dense/CSR kernels, power iteration, norms
//! - [`hypergraph`]: incidence model, admissibility checks, operator assembly
//! - [`equilibrium`]: contractive forward solver and explicit-unroll reference
//! - [`autograd`]: adjoint fixed-point solve and implicit parameter gradients
//! - [`model`]: the full mapping (affine input, equilibrium layer, linear
//!   readout, masked cross-entropy) and the row-wise l-infinity projection
//! - [`train`]: projected-gradient training loop, metrics, stability harness
//! - [`theory`]: executable checks for the convergence, expressivity and
//!   generalization-bound results
//! - [`data`]: citation-format ingestion and hypergraph construction
//! - [`cli`]: subcommand implementations backing the `ihgnn` binary

pub mod autograd;
pub mod cli;
pub mod data;
pub mod equilibrium;
pub mod error;
pub mod hypergraph;
pub mod linalg;
pub mod model;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
