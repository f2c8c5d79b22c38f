//! Semi-supervised graph classification with the semi-discrete implicit
//! Euler scheme for the Allen-Cahn equation with fidelity forcing, and its
//! MBO special case.
//!
//! The pieces, bottom up:
//! - [`graph`]: weights, inner products, Laplacians, Ginzburg-Landau energy
//! - [`lowrank`]: Nyström-type compression of the symmetric Laplacian
//! - [`expsolver`]: forced diffusion `S_τ u = e^{-τA}u + b` on low-rank factors
//! - [`engine`]: the SDIE/MBO update, Lyapunov functional and main loop
//! - [`oracle`]: dense exact references and the property battery
//! - [`imgpipe`]: images to graph problems

pub mod error;
pub mod graph;
pub mod linalg;
pub mod lowrank;

pub use error::{Error, Result};
pub mod engine;
pub mod expsolver;
pub mod oracle;
pub mod imgpipe;
