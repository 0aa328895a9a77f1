//! Error type shared by every module in the crate.

use thiserror::Error;

/// Errors surfaced by constructors, evaluators, and verifiers.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A vector or matrix had the wrong length for the given network shape.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument was structurally invalid (bad index, empty list, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A forward or derivative pass produced a non-finite value.
    /// `layer` is the 1-based affine layer in which it first appeared.
    #[error("non-finite value while evaluating layer {layer}: {context}")]
    NonFinite { layer: usize, context: String },

    /// The dense Hessian would exceed the configured size cap.
    #[error("parameter count {d} exceeds the dense-Hessian cap of {cap}")]
    HessianCap { d: usize, cap: usize },

    /// A theorem-level hypothesis (depth, width, sample count) is not met.
    #[error("hypothesis violation: {0}")]
    Hypothesis(String),

    /// A point that must be critical for the requested analysis is not.
    #[error("point is not critical: |grad|_inf = {grad_inf_norm:.3e} exceeds {tolerance:.3e}")]
    NotCritical { grad_inf_norm: f64, tolerance: f64 },

    /// A fiber operation needed a full-rank feature matrix and did not get one.
    #[error("rank-deficient slice: rank = {rank}, need {need}")]
    RankDeficient { rank: usize, need: usize },

    /// A descent line could not be built because the point is already minimal.
    #[error("degenerate descent line: the point is already a fiber minimizer")]
    DegenerateLine,

    /// An outcome the theory says cannot happen under hypotheses that were
    /// checked and held. Callers should surface this loudly (it would
    /// falsify the claim under test), never swallow it.
    #[error("falsification event: {claim}")]
    Falsification { claim: String },
}

pub type Result<T> = std::result::Result<T, Error>;
