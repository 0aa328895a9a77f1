//! critlab-core: a numerical laboratory for the loss landscape of small
//! fully connected networks.
//!
//! The crate constructs families of critical points of the squared-error
//! loss (star and core loci, global minima, fiber-level sets), computes
//! exact first and second derivatives, and verifies the expected spectral
//! and dimensional structure with independent finite-difference and
//! SVD-based oracles. Everything is deterministic under a seed.
//!
//! Modules:
//! - [`net`]: shapes, parameter layout, datasets, activations, forward
//!   pass, loss, and hidden feature maps.
//! - [`deriv`]: exact reverse-mode gradients, exact Hessians via
//!   forward-over-reverse, and the finite-difference oracles.
//! - [`loci`]: star/core locus masks, sampling, and dimension formulas.
//! - [`spectral`]: eigensolver-backed spectrum classification, ranks, and
//!   the star/core verifiers.
//! - [`fiber`]: the quadratic restriction of the loss to a final-layer
//!   slice, its minimizers, descent lines, and level-set witnesses.
//! - [`flow`]: gradient-flow integration, basin measurements, and terminal
//!   classification.

pub mod deriv;
pub mod error;
pub mod fiber;
pub mod flow;
pub mod linalg;
pub mod loci;
pub mod net;
pub mod rng;
pub mod scalar;
pub mod spectral;

pub use error::{Error, Result};
pub use linalg::Mat;
pub use net::{Activation, Dataset, NetworkShape, ParamVector};
