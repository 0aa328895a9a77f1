//! Run configuration: one JSON document that pins every knob of a run.
//!
//! Parsing is strict — unknown keys anywhere in the document are rejected —
//! and every optional field has an explicit default, so the config echoed
//! back in a report is the fully materialized version of what ran.

use anyhow::Context;
use critlab_core::flow::BasinTarget;
use critlab_core::loci::LocusKind;
use critlab_core::net::Activation;
use critlab_core::flow::StepPolicy;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Top-level configuration shared by every subcommand. A given command
/// reads only the blocks it needs; extra blocks are harmless.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Layer widths, input first, output last. Required by every command
    /// except `flow` on an analytic function and `dims`.
    #[serde(default)]
    pub shape: Option<Vec<usize>>,

    /// Hidden-layer activation.
    #[serde(default)]
    pub activation: ActivationKind,

    /// Training data. Required wherever a loss is evaluated.
    #[serde(default)]
    pub dataset: Option<DatasetSource>,

    /// Base seed; commands derive per-sample streams from it, so one seed
    /// fixes the entire run.
    #[serde(default)]
    pub seed: u64,

    /// Numerical thresholds. `None` means "relative default".
    #[serde(default)]
    pub tolerances: Tolerances,

    /// Settings for `verify-star` / `verify-core`.
    #[serde(default)]
    pub verify: Option<VerifyBlock>,

    /// Settings for `spectrum`.
    #[serde(default)]
    pub spectrum: Option<SpectrumBlock>,

    /// Settings for `fiber`.
    #[serde(default)]
    pub fiber: Option<FiberBlock>,

    /// Settings for `flow`.
    #[serde(default)]
    pub flow: Option<FlowBlock>,

    /// Settings for `dims`.
    #[serde(default)]
    pub dims: Option<DimsBlock>,
}

/// Activation names as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    #[default]
    Tanh,
    CenteredSigmoid,
    Identity,
}

impl ActivationKind {
    pub fn to_core(self) -> Activation {
        match self {
            ActivationKind::Tanh => Activation::Tanh,
            ActivationKind::CenteredSigmoid => Activation::CenteredSigmoid,
            ActivationKind::Identity => Activation::Identity,
        }
    }
}

/// Where the dataset comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSource {
    /// Samples written directly in the config.
    Inline(InlineData),
    /// CSV file with headers `x_0..x_{a-1}, y_0..y_{b-1}`.
    Csv(FileRef),
    /// JSON file shaped like the inline form.
    Json(FileRef),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineData {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
}

/// Numerical thresholds used across commands.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Absolute zero-eigenvalue cutoff. `None`: 1e-8 relative to the
    /// spectral radius (floored at 1).
    pub tau_zero: Option<f64>,
    /// Absolute rank cutoff on singular values. `None`: max(rows, cols)
    /// times machine epsilon times the largest singular value.
    pub tau_rank: Option<f64>,
    /// Gradient infinity norm below which a flow counts as converged.
    pub tol_g: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tau_zero: None,
            tau_rank: None,
            tol_g: 1e-8,
        }
    }
}

/// Sampling plan for the star / core verifiers.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyBlock {
    /// Points sampled per star index (or per core pair).
    pub count: usize,
    /// Standard deviation of the free coordinates.
    pub scale: f64,
    /// Pass threshold on the gradient infinity norm.
    pub grad_tol: f64,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        VerifyBlock {
            count: 100,
            scale: 1.0,
            grad_tol: 1e-8,
        }
    }
}

/// Which parameter point `spectrum` should analyze.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumBlock {
    pub point: PointSpec,
    /// Scale for sampled points (locus free coordinates or the random draw).
    #[serde(default = "defaults::unit_scale")]
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointSpec {
    /// Draw one point of the named locus family.
    Locus(LocusKind),
    /// A Gaussian parameter vector.
    Random,
    /// An explicit parameter vector of full length.
    Explicit(Vec<f64>),
}

/// Sampling plan for random fiber slices.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiberBlock {
    /// Number of random slices to analyze.
    pub slices: usize,
    /// Standard deviation of the slice base point.
    pub scale: f64,
    /// Walk the straight descent line to the slice minimum.
    pub descent: bool,
    /// Cross-check the restricted Hessian against the full second-derivative
    /// matrix (costs one dense Hessian per slice).
    pub kronecker: bool,
    /// Probe flat directions at each slice minimizer.
    pub witness: bool,
    /// Probe points per flat direction.
    pub witness_probes: usize,
    /// When set, also search for an equal-loss neighbor at this distance
    /// from each slice minimizer.
    pub nonisolation_epsilon: Option<f64>,
}

impl Default for FiberBlock {
    fn default() -> Self {
        FiberBlock {
            slices: 10,
            scale: 0.8,
            descent: true,
            kronecker: false,
            witness: true,
            witness_probes: 20,
            nonisolation_epsilon: None,
        }
    }
}

/// Gradient-flow run plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowBlock {
    /// Name of a catalog function. `None` flows the network loss instead,
    /// which requires `shape` and `dataset`.
    pub function: Option<String>,
    /// Explicit start points (function arity, or full parameter length).
    pub starts: Vec<Vec<f64>>,
    /// Additional Gaussian starts (network mode).
    pub random_starts: usize,
    /// Standard deviation of the random starts.
    pub start_scale: f64,
    /// Optional basin-of-attraction estimate.
    pub basin: Option<BasinBlock>,
    /// Step-size policy overrides; unset fields keep their defaults.
    pub step: StepOverrides,
    /// Abort radius for runaway trajectories.
    pub divergence_radius: Option<f64>,
    /// Cap on accepted steps.
    pub max_steps: Option<usize>,
    /// Cap on integration time.
    pub t_max: Option<f64>,
}

impl Default for FlowBlock {
    fn default() -> Self {
        FlowBlock {
            function: None,
            starts: Vec::new(),
            random_starts: 0,
            start_scale: 0.3,
            basin: None,
            step: StepOverrides::default(),
            divergence_radius: None,
            max_steps: None,
            t_max: None,
        }
    }
}

/// Monte Carlo basin estimate over a box of start points.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasinBlock {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub samples: usize,
    pub target: BasinTarget,
}

/// Optional overrides for the adaptive step policy.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepOverrides {
    pub h0: Option<f64>,
    pub h_min: Option<f64>,
    pub h_max: Option<f64>,
    pub err_tol: Option<f64>,
}

impl StepOverrides {
    pub fn apply(&self, mut base: StepPolicy) -> StepPolicy {
        if let Some(v) = self.h0 {
            base.h0 = v;
        }
        if let Some(v) = self.h_min {
            base.h_min = v;
        }
        if let Some(v) = self.h_max {
            base.h_max = v;
        }
        if let Some(v) = self.err_tol {
            base.err_tol = v;
        }
        base
    }
}

/// Width sweep for the dimension table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsBlock {
    /// Number of affine layers.
    pub depth: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Sample count the table is computed for.
    pub n: usize,
    /// Smallest uniform hidden width in the sweep.
    pub m_min: usize,
    /// Largest uniform hidden width in the sweep (inclusive).
    pub m_max: usize,
}

mod defaults {
    pub fn unit_scale() -> f64 {
        1.0
    }
}

/// Read and strictly parse a config file.
pub fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let config: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    Ok(config)
}
