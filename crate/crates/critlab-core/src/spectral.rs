//! Loss-Hessian spectra, numerical rank, and the verification routines
//! built on them: star-family criticality (with its sum-bias negative
//! control), core-family spectra, the zero-eigenvalue lower bound at
//! critical points, and the Monte-Carlo full-rank experiment for the
//! deepest feature matrix.

use crate::deriv::{gradient, hessian};
use crate::error::{Error, Result};
use crate::linalg::{svd, Mat};
use crate::loci::{
    make_locus, make_locus_with_convention, sample_locus, BiasConvention, LocusKind,
};
use crate::net::{phi_matrix, Activation, Dataset, NetworkShape, ParamVector};
use crate::rng::stream_rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// An eigenvalue counts as zero when `|lambda| <= tau_zero` with
/// `tau_zero = ZERO_EIG_REL_TOL * max(1, spectral radius)` by default.
pub const ZERO_EIG_REL_TOL: f64 = 1e-8;

/// A point is accepted as critical for bound checks when the gradient
/// infinity norm is at most this.
pub const CRITICAL_GRAD_TOL: f64 = 1e-6;

/// Nonzero core eigenvalues must sit within this of `2n`.
pub const CORE_CURVATURE_TOL: f64 = 1e-6;

/// Core eigenvalues outside the `2n` cluster must be this close to zero,
/// and no eigenvalue may fall below the negated tolerance.
pub const CORE_ZERO_TOL: f64 = 1e-8;

/// Classified eigenvalue list of a symmetric matrix, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Threshold actually used to classify eigenvalues as zero.
    pub tau_zero: f64,
    pub negative_count: usize,
    pub zero_count: usize,
    pub positive_count: usize,
}

impl HessianSpectrum {
    pub fn min_eigenvalue(&self) -> f64 {
        *self.eigenvalues.first().expect("spectrum is nonempty")
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().expect("spectrum is nonempty")
    }
}

/// Default zero threshold for a computed eigenvalue list.
pub fn default_tau_zero(eigenvalues: &[f64]) -> f64 {
    let radius = eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    ZERO_EIG_REL_TOL * radius.max(1.0)
}

/// Eigen-decomposes a symmetric matrix and classifies the eigenvalues.
/// `tau` overrides the zero threshold with an absolute value.
pub fn spectrum(h: &Mat, tau: Option<f64>) -> Result<HessianSpectrum> {
    let eig = crate::linalg::jacobi_eigh(h)?;
    let eigenvalues = eig.values;
    let tau_zero = tau.unwrap_or_else(|| default_tau_zero(&eigenvalues));
    if !(tau_zero >= 0.0) {
        return Err(Error::Argument(format!("zero threshold must be >= 0, got {tau_zero}")));
    }
    let negative_count = eigenvalues.iter().filter(|&&x| x < -tau_zero).count();
    let zero_count = eigenvalues.iter().filter(|&&x| x.abs() <= tau_zero).count();
    let positive_count = eigenvalues.len() - negative_count - zero_count;
    Ok(HessianSpectrum { eigenvalues, tau_zero, negative_count, zero_count, positive_count })
}

/// Loss-Hessian spectrum at a parameter point.
pub fn hessian_spectrum(
    p: &ParamVector,
    data: &Dataset,
    act: Activation,
    tau: Option<f64>,
) -> Result<HessianSpectrum> {
    spectrum(&hessian(p, data, act)?, tau)
}

/// Singular values and the numerical rank they imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    /// Descending.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// Threshold actually used: singular values above it count.
    pub tau_rank: f64,
}

/// Default rank threshold, `max(rows, cols) * eps * sigma_max` — the
/// conventional choice that scales with both the matrix size and its norm.
pub fn default_tau_rank(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

/// Numerical rank via singular values. `tau` overrides the threshold with
/// an absolute value.
pub fn rank_of(a: &Mat, tau: Option<f64>) -> Result<RankResult> {
    let dec = svd(a)?;
    let sigma_max = dec.sigma.first().copied().unwrap_or(0.0);
    let tau_rank = tau.unwrap_or_else(|| default_tau_rank(a.rows(), a.cols(), sigma_max));
    if !(tau_rank >= 0.0) {
        return Err(Error::Argument(format!("rank threshold must be >= 0, got {tau_rank}")));
    }
    let rank = dec.sigma.iter().filter(|&&s| s > tau_rank).count();
    Ok(RankResult { singular_values: dec.sigma, rank, tau_rank })
}

/// Result of checking one star family at one index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarIndexResult {
    pub k: usize,
    pub samples: usize,
    /// Largest gradient infinity norm seen over the samples.
    pub max_grad_inf: f64,
}

/// Outcome of the star criticality check across every hidden index, with
/// the sum-bias negative control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarVerification {
    pub tolerance: f64,
    pub per_index: Vec<StarIndexResult>,
    pub max_grad_inf: f64,
    /// Largest gradient seen on points using the *sum* of the targets as
    /// output bias instead of the mean.
    pub sum_control_grad_inf: f64,
    /// The exact gradient magnitude the control must show:
    /// `2 (n-1) * |sum(y)|_inf`.
    pub sum_control_expected: f64,
    /// True when the control point is genuinely non-critical (always the
    /// case for n >= 2 with a nonzero target sum).
    pub sum_control_fails: bool,
    pub pass: bool,
}

fn grad_inf_norm(p: &ParamVector, data: &Dataset, act: Activation) -> Result<f64> {
    let g = gradient(p, data, act)?;
    Ok(g.iter().fold(0.0f64, |m, x| m.max(x.abs())))
}

/// Samples every star family of the shape and verifies the gradient
/// vanishes to `tol`; also draws one sum-bias control point per index and
/// records its (non-vanishing) gradient.
pub fn verify_star(
    shape: &NetworkShape,
    data: &Dataset,
    act: Activation,
    samples_per_index: usize,
    seed: u64,
    scale: f64,
    tol: f64,
) -> Result<StarVerification> {
    if samples_per_index == 0 {
        return Err(Error::Argument("need at least one sample per index".into()));
    }
    let l = shape.depth();
    let mut per_index = Vec::with_capacity(l - 1);
    let mut sum_control_grad_inf = 0.0f64;
    for k in 1..l {
        let spec = make_locus(shape, data, LocusKind::Star { k })?;
        let max_grad_inf = sample_locus(&spec, samples_per_index, seed ^ k as u64, scale)
            .par_iter()
            .map(|p| grad_inf_norm(p, data, act))
            .try_reduce(|| 0.0f64, |a, b| Ok(a.max(b)))?;
        per_index.push(StarIndexResult { k, samples: samples_per_index, max_grad_inf });

        let control = make_locus_with_convention(
            shape,
            data,
            LocusKind::Star { k },
            BiasConvention::Sum,
        )?;
        let q = sample_locus(&control, 1, seed ^ k as u64, scale).remove(0);
        sum_control_grad_inf = sum_control_grad_inf.max(grad_inf_norm(&q, data, act)?);
    }
    let max_grad_inf =
        per_index.iter().map(|e| e.max_grad_inf).fold(0.0f64, f64::max);
    let n = data.n() as f64;
    let sum_inf = data.sum_target().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let sum_control_expected = 2.0 * (n - 1.0) * sum_inf;
    let sum_control_fails = sum_control_grad_inf > tol;
    let pass = max_grad_inf <= tol && (data.n() == 1 || sum_control_fails);
    Ok(StarVerification {
        tolerance: tol,
        per_index,
        max_grad_inf,
        sum_control_grad_inf,
        sum_control_expected,
        sum_control_fails,
        pass,
    })
}

/// Result of checking the Hessian structure on one core pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorePairResult {
    pub indices: [usize; 2],
    pub samples: usize,
    /// Largest deviation of the nonzero cluster from `2n`.
    pub max_curvature_dev: f64,
    /// Largest magnitude among the eigenvalues outside that cluster.
    pub max_zero_dev: f64,
    /// Smallest eigenvalue seen (must not be meaningfully negative).
    pub min_eigenvalue: f64,
    /// True when every sample had exactly `m_l` eigenvalues near `2n`.
    pub cluster_size_exact: bool,
}

/// Outcome of the core Hessian-structure check over all index pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreVerification {
    /// `2n`, the curvature carried by each output-bias coordinate.
    pub expected_curvature: f64,
    /// `m_l`, the expected number of eigenvalues at `2n`.
    pub expected_cluster_size: usize,
    pub curvature_tol: f64,
    pub zero_tol: f64,
    pub per_pair: Vec<CorePairResult>,
    pub pass: bool,
}

/// Samples every two-index core family and verifies the Hessian spectrum
/// is `2n` with multiplicity `m_l` and zero with multiplicity `d - m_l`,
/// with no negative eigenvalue below `-CORE_ZERO_TOL`. Requires depth >= 4,
/// where core criticality is guaranteed.
pub fn verify_core(
    shape: &NetworkShape,
    data: &Dataset,
    act: Activation,
    samples_per_pair: usize,
    seed: u64,
    scale: f64,
) -> Result<CoreVerification> {
    if shape.depth() < 4 {
        return Err(Error::Hypothesis(format!(
            "core spectra need depth >= 4, shape has depth {}",
            shape.depth()
        )));
    }
    if samples_per_pair == 0 {
        return Err(Error::Argument("need at least one sample per pair".into()));
    }
    let l = shape.depth();
    let expected_curvature = 2.0 * data.n() as f64;
    let expected_cluster_size = shape.output_dim();
    let mut per_pair = Vec::new();
    for i in 1..l {
        for j in (i + 1)..l {
            let spec = make_locus(shape, data, LocusKind::Core { indices: vec![i, j] })?;
            let samples = sample_locus(&spec, samples_per_pair, seed ^ (i * 37 + j) as u64, scale);
            let mut max_curvature_dev = 0.0f64;
            let mut max_zero_dev = 0.0f64;
            let mut min_eigenvalue = f64::INFINITY;
            let mut cluster_size_exact = true;
            for p in &samples {
                let sp = hessian_spectrum(p, data, act, None)?;
                min_eigenvalue = min_eigenvalue.min(sp.min_eigenvalue());
                let mut cluster = 0usize;
                for &lam in &sp.eigenvalues {
                    let dev = (lam - expected_curvature).abs();
                    if dev <= CORE_CURVATURE_TOL {
                        cluster += 1;
                        max_curvature_dev = max_curvature_dev.max(dev);
                    } else {
                        max_zero_dev = max_zero_dev.max(lam.abs());
                    }
                }
                cluster_size_exact &= cluster == expected_cluster_size;
            }
            per_pair.push(CorePairResult {
                indices: [i, j],
                samples: samples_per_pair,
                max_curvature_dev,
                max_zero_dev,
                min_eigenvalue,
                cluster_size_exact,
            });
        }
    }
    let pass = per_pair.iter().all(|r| {
        r.cluster_size_exact
            && r.max_curvature_dev <= CORE_CURVATURE_TOL
            && r.max_zero_dev <= CORE_ZERO_TOL
            && r.min_eigenvalue >= -CORE_ZERO_TOL
    });
    Ok(CoreVerification {
        expected_curvature,
        expected_cluster_size,
        curvature_tol: CORE_CURVATURE_TOL,
        zero_tol: CORE_ZERO_TOL,
        per_pair,
        pass,
    })
}

/// Zero-eigenvalue count at a critical point against the ranks of the
/// deepest feature matrix.
///
/// With `m = m_{l-1}`, `r = rank(Phi)` and `r_hat = rank(PhiHat)` (the
/// feature matrix with a ones row appended), the level set through a
/// critical point contains an affine subspace of dimension
/// `(m + 1 - r_hat) * m_l` inside the final-layer slice. At a local
/// minimum every direction of that subspace is a Hessian null vector, so
/// `zero_count >= (m + 1 - r_hat) * m_l`. The cruder `(m + 1 - n) * m_l`
/// form assumes `PhiHat` has full column rank and is reported alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroEigBound {
    pub grad_inf_norm: f64,
    pub spectrum: HessianSpectrum,
    /// Rank of the plain feature matrix `Phi`.
    pub phi_rank: usize,
    /// Rank of the ones-augmented feature matrix `PhiHat`.
    pub phi_aug_rank: usize,
    /// `(m + 1 - r_hat) * m_l`.
    pub rank_bound: i64,
    /// `(m + 1 - n) * m_l`; may be negative (then trivially satisfied).
    pub data_bound: i64,
    pub rank_bound_satisfied: bool,
    pub data_bound_satisfied: bool,
}

/// Counts Hessian zero eigenvalues at `p` and compares them with the
/// feature-rank lower bound. Fails with [`Error::NotCritical`] when the
/// gradient is larger than [`CRITICAL_GRAD_TOL`]: away from critical
/// points the bound claims nothing.
pub fn zero_eig_bound_check(
    p: &ParamVector,
    data: &Dataset,
    act: Activation,
) -> Result<ZeroEigBound> {
    let grad_inf_norm = grad_inf_norm(p, data, act)?;
    if grad_inf_norm > CRITICAL_GRAD_TOL {
        return Err(Error::NotCritical { grad_inf_norm, tolerance: CRITICAL_GRAD_TOL });
    }
    let spec = hessian_spectrum(p, data, act, None)?;
    let (phi, phi_hat) = phi_matrix(p, data, act)?;
    let phi_rank = rank_of(&phi, None)?.rank;
    let phi_aug_rank = rank_of(&phi_hat, None)?.rank;
    let m = p.shape().last_hidden_width() as i64;
    let out = p.shape().output_dim() as i64;
    let rank_bound = (m + 1 - phi_aug_rank as i64) * out;
    let data_bound = (m + 1 - data.n() as i64) * out;
    let zero = spec.zero_count as i64;
    Ok(ZeroEigBound {
        grad_inf_norm,
        spectrum: spec,
        phi_rank,
        phi_aug_rank,
        rank_bound,
        data_bound,
        rank_bound_satisfied: zero >= rank_bound,
        data_bound_satisfied: zero >= data_bound,
    })
}

/// Outcome of the Monte-Carlo full-rank experiment on `PhiHat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullRankStats {
    pub trials: usize,
    /// Trials where `rank(PhiHat) = n`.
    pub full_rank_count: usize,
    pub n: usize,
    /// `m_{l-1} + 1`, the row count of `PhiHat`.
    pub phi_rows: usize,
}

impl FullRankStats {
    pub fn fraction(&self) -> f64 {
        self.full_rank_count as f64 / self.trials as f64
    }
}

/// Draws `trials` random parameter points (i.i.d. normal, standard
/// deviation `scale`, trial `t` from stream `t + 1` of `seed`) and counts
/// how often the ones-augmented feature matrix has full column rank `n`.
/// Full rank is only possible when the inputs are pairwise distinct and
/// `n <= m_{l-1} + 1`; both are required up front so a vacuous experiment
/// errors instead of reporting zero.
pub fn phi_full_rank_fraction(
    shape: &NetworkShape,
    data: &Dataset,
    act: Activation,
    trials: usize,
    seed: u64,
    scale: f64,
) -> Result<FullRankStats> {
    if trials == 0 {
        return Err(Error::Argument("need at least one trial".into()));
    }
    data.check_shape(shape)?;
    if !data.inputs_distinct() {
        return Err(Error::Hypothesis(
            "full-rank experiment needs pairwise distinct inputs".into(),
        ));
    }
    let phi_rows = shape.last_hidden_width() + 1;
    if data.n() > phi_rows {
        return Err(Error::Hypothesis(format!(
            "full column rank is impossible: n = {} exceeds m+1 = {}",
            data.n(),
            phi_rows
        )));
    }
    let d = shape.total_params();
    let full_rank_count = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<usize> {
            let mut rng = stream_rng(seed, t as u64 + 1);
            let coords: Vec<f64> = (0..d)
                .map(|_| {
                    scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                })
                .collect();
            let p = ParamVector::from_vec(shape, coords)?;
            let (_, phi_hat) = phi_matrix(&p, data, act)?;
            Ok((rank_of(&phi_hat, None)?.rank == data.n()) as usize)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(FullRankStats { trials, full_rank_count, n: data.n(), phi_rows })
}
