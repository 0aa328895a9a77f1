//! The loss restricted to the final-layer slice.
//!
//! Freezing every parameter except the last weight matrix and bias makes
//! the network output *linear* in the remaining coordinates, so the loss
//! restricted to that slice is an exact quadratic: with feature matrix
//! `PhiHat` (deepest hidden activations plus a ones row) and `W` the
//! `[M_l | b_l]` block,
//!
//! ```text
//! L(W) = |W PhiHat - Y|_F^2,   Hessian = 2 (PhiHat PhiHat^T  kron  I_{m_l}).
//! ```
//!
//! Fiber coordinates order the block column-major with the output index
//! fastest: coordinate `j * m_l + u` is `W[u, j]`, with column `j = m`
//! holding the bias. That ordering is what makes the Hessian a literal
//! Kronecker product.
//!
//! The evaluator accumulates in the same order as the full forward pass
//! (bias first, then weight terms by ascending column; squares summed
//! sample-major), so restriction and full loss agree bit-for-bit, not just
//! to rounding.

use crate::deriv::{gradient, hessian};
use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigh, lstsq_min_norm, svd, Mat};
use crate::net::{loss, phi_matrix, Activation, Dataset, NetworkShape, ParamVector};
use crate::rng::stream_rng;
use crate::spectral::{default_tau_rank, CRITICAL_GRAD_TOL};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

/// Restricted and full loss must agree to this relative gap on descent
/// lines (they agree exactly in practice).
pub const FIBER_EMBED_TOL: f64 = 1e-12;

/// Maximum relative residual of the degree-2 fit along a descent line.
pub const DESCENT_FIT_TOL: f64 = 1e-9;

/// Loss at the descent-line endpoint (a global minimizer of the slice,
/// hence of the whole problem when the feature matrix has full column
/// rank) must fall below this.
pub const DESCENT_ENDPOINT_TOL: f64 = 1e-18;

/// Probes of a level-set witness may deviate from the base loss by this
/// relative amount.
pub const LEVEL_SET_TOL: f64 = 1e-9;

/// Loss gap accepted between a candidate minimum and its equal-loss
/// neighbor.
pub const NONISOLATION_TOL: f64 = 1e-10;

/// Smallest Hessian eigenvalue allowed when screening for local minima.
pub const LOCAL_MIN_SCREEN_TOL: f64 = 1e-8;

/// The loss as an explicit quadratic in the final-layer block, with the
/// interior parameters frozen.
#[derive(Debug, Clone)]
pub struct FiberQuadratic {
    context: ParamVector,
    data: Dataset,
    act: Activation,
    phi: Mat,
    phi_hat: Mat,
    gram: Mat,
    m: usize,
    out_dim: usize,
}

/// Freezes the interior of `p` and captures the feature matrix there.
pub fn build_fiber(p: &ParamVector, data: &Dataset, act: Activation) -> Result<FiberQuadratic> {
    let (phi, phi_hat) = phi_matrix(p, data, act)?;
    let gram = phi_hat.matmul(&phi_hat.transpose());
    Ok(FiberQuadratic {
        context: p.clone(),
        data: data.clone(),
        act,
        m: p.shape().last_hidden_width(),
        out_dim: p.shape().output_dim(),
        phi,
        phi_hat,
        gram,
    })
}

impl FiberQuadratic {
    /// Number of fiber coordinates, `(m + 1) * m_l`.
    pub fn dim(&self) -> usize {
        (self.m + 1) * self.out_dim
    }

    /// Fiber coordinate of `W[u, j]`; `j = m` is the bias column.
    pub fn fiber_index(&self, u: usize, j: usize) -> usize {
        debug_assert!(u < self.out_dim && j <= self.m);
        j * self.out_dim + u
    }

    pub fn shape(&self) -> &NetworkShape {
        self.context.shape()
    }

    /// Deepest hidden activations over the dataset (no bias row).
    pub fn phi(&self) -> &Mat {
        &self.phi
    }

    pub fn phi_hat(&self) -> &Mat {
        &self.phi_hat
    }

    /// `PhiHat PhiHat^T`.
    pub fn gram(&self) -> &Mat {
        &self.gram
    }

    pub fn output_dim(&self) -> usize {
        self.out_dim
    }

    pub fn last_hidden_width(&self) -> usize {
        self.m
    }

    /// Reads the final block of `p` into fiber coordinates.
    pub fn w_from_params(&self, p: &ParamVector) -> Vec<f64> {
        debug_assert_eq!(p.shape(), self.context.shape());
        let l = p.shape().depth();
        let mut w = vec![0.0; self.dim()];
        for u in 0..self.out_dim {
            for j in 0..self.m {
                w[self.fiber_index(u, j)] = p.weight(l, u, j);
            }
            w[self.fiber_index(u, self.m)] = p.bias(l, u);
        }
        w
    }

    /// Writes fiber coordinates into the frozen context, yielding a full
    /// parameter point.
    pub fn params_with_fiber(&self, w: &[f64]) -> Result<ParamVector> {
        if w.len() != self.dim() {
            return Err(Error::Argument(format!(
                "fiber has {} coordinates, got {}",
                self.dim(),
                w.len()
            )));
        }
        let mut p = self.context.clone();
        let l = p.shape().depth();
        for u in 0..self.out_dim {
            for j in 0..self.m {
                p.set_weight(l, u, j, w[self.fiber_index(u, j)]);
            }
            p.set_bias(l, u, w[self.fiber_index(u, self.m)]);
        }
        Ok(p)
    }

    /// Restricted loss. Accumulation mirrors the full forward pass exactly
    /// (bias, then weight terms by ascending feature index; squares summed
    /// sample-major), so this equals the full-network loss at the embedded
    /// point bit-for-bit.
    pub fn eval(&self, w: &[f64]) -> f64 {
        assert_eq!(w.len(), self.dim(), "fiber coordinate count mismatch");
        let mut total = 0.0;
        for k in 0..self.data.n() {
            let y = self.data.target(k);
            for u in 0..self.out_dim {
                let mut acc = w[self.fiber_index(u, self.m)];
                for j in 0..self.m {
                    acc += w[self.fiber_index(u, j)] * self.phi_hat[(j, k)];
                }
                let r = acc - y[u];
                total += r * r;
            }
        }
        total
    }

    /// Gradient of the restricted loss, `2 (W PhiHat - Y) PhiHat^T` in
    /// fiber coordinates.
    pub fn fiber_gradient(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.dim(), "fiber coordinate count mismatch");
        let n = self.data.n();
        let mut residual = Mat::zeros(self.out_dim, n);
        for k in 0..n {
            let y = self.data.target(k);
            for u in 0..self.out_dim {
                let mut acc = w[self.fiber_index(u, self.m)];
                for j in 0..self.m {
                    acc += w[self.fiber_index(u, j)] * self.phi_hat[(j, k)];
                }
                residual[(u, k)] = acc - y[u];
            }
        }
        let mut g = vec![0.0; self.dim()];
        for u in 0..self.out_dim {
            for j in 0..=self.m {
                let mut acc = 0.0;
                for k in 0..n {
                    let phi = if j < self.m { self.phi_hat[(j, k)] } else { 1.0 };
                    acc += residual[(u, k)] * phi;
                }
                g[self.fiber_index(u, j)] = 2.0 * acc;
            }
        }
        g
    }

    /// The constant Hessian of the restricted loss,
    /// `2 (Gram kron I_{m_l})` in fiber coordinates.
    pub fn hessian_matrix(&self) -> Mat {
        let o = self.out_dim;
        Mat::from_fn(self.dim(), self.dim(), |r, c| {
            if r % o == c % o {
                2.0 * self.gram[(r / o, c / o)]
            } else {
                0.0
            }
        })
    }

    /// Targets as an `m_l x n` matrix, column per sample.
    fn target_matrix(&self) -> Mat {
        Mat::from_fn(self.out_dim, self.data.n(), |u, k| self.data.target(k)[u])
    }

    fn dataset(&self) -> &Dataset {
        &self.data
    }

    fn activation(&self) -> Activation {
        self.act
    }
}

/// Rank accounting for the restricted Hessian, in two forms: with the bias
/// coordinates frozen (weights-only block, bounded by `rank(Phi) * m_l`)
/// and over the whole fiber (equal to `rank(PhiHat) * m_l`). The bias row
/// of the feature matrix can raise the rank by at most `m_l`, which is
/// exactly the gap between the two bounds.
#[derive(Debug, Clone, Serialize)]
pub struct FiberRankCheck {
    /// `rank(Phi)`.
    pub phi_rank: usize,
    /// `rank(PhiHat)`.
    pub phi_aug_rank: usize,
    /// Rank of the weights-only leading block of the restricted Hessian.
    pub weight_block_rank: usize,
    /// Rank of the full restricted Hessian.
    pub full_rank: usize,
    /// `rank(Phi) * m_l`; the weights-only block can never exceed it.
    pub weight_block_bound: usize,
    pub weight_block_within_bound: bool,
    /// Whether `full_rank == rank(PhiHat) * m_l` held at the default
    /// tolerances.
    pub full_rank_matches: bool,
}

/// Computes both rank forms. Fiber coordinates put all weight columns
/// before the bias column, so the weights-only block is the leading
/// `m * m_l` principal submatrix of the restricted Hessian.
pub fn rank_check(fq: &FiberQuadratic) -> Result<FiberRankCheck> {
    let rank_with_default_tau = |m: &Mat| -> Result<usize> {
        let dec = svd(m)?;
        let sigma_max = dec.sigma.first().copied().unwrap_or(0.0);
        Ok(dec.rank_at(default_tau_rank(m.rows(), m.cols(), sigma_max)))
    };
    let phi_rank = rank_with_default_tau(&fq.phi)?;
    let phi_aug_rank = rank_with_default_tau(&fq.phi_hat)?;
    let h = fq.hessian_matrix();
    let wdim = fq.m * fq.out_dim;
    let h_weights = Mat::from_fn(wdim, wdim, |r, c| h[(r, c)]);
    let weight_block_rank = rank_with_default_tau(&h_weights)?;
    let full_rank = rank_with_default_tau(&h)?;
    let weight_block_bound = phi_rank * fq.out_dim;
    Ok(FiberRankCheck {
        phi_rank,
        phi_aug_rank,
        weight_block_rank,
        full_rank,
        weight_block_bound,
        weight_block_within_bound: weight_block_rank <= weight_block_bound,
        full_rank_matches: full_rank == phi_aug_rank * fq.out_dim,
    })
}

/// Rank of `PhiHat` plus an orthonormal basis of the restricted-Hessian
/// null space. The null space of `Gram kron I` is `null(Gram) kron I`, so
/// each basis vector is a small Gram eigenvector spread over one output
/// coordinate; the rank is pinned by the singular values of `PhiHat`
/// itself, which resolves tiny values more reliably than the squared
/// spectrum of the Gram matrix.
fn null_directions(fq: &FiberQuadratic) -> Result<(usize, Vec<Vec<f64>>)> {
    let dec = svd(&fq.phi_hat)?;
    let sigma_max = dec.sigma.first().copied().unwrap_or(0.0);
    let tau = default_tau_rank(fq.phi_hat.rows(), fq.phi_hat.cols(), sigma_max);
    let r_hat = dec.rank_at(tau);
    let eig = jacobi_eigh(&fq.gram)?;
    let null_cols = fq.m + 1 - r_hat;
    let mut basis = Vec::with_capacity(null_cols * fq.out_dim);
    for s in 0..null_cols {
        for u in 0..fq.out_dim {
            let mut e = vec![0.0; fq.dim()];
            for j in 0..=fq.m {
                e[fq.fiber_index(u, j)] = eig.vectors[(j, s)];
            }
            basis.push(e);
        }
    }
    Ok((r_hat, basis))
}

/// Minimum-norm minimizer of the restricted quadratic and the null space
/// around it.
#[derive(Debug, Clone, Serialize)]
pub struct FiberMinimum {
    /// Fiber coordinates of `Y * pinv(PhiHat)`.
    pub w_min_norm: Vec<f64>,
    /// Restricted loss there; zero (to rounding) iff `rank(PhiHat) = n`.
    pub loss_min: f64,
    pub phi_aug_rank: usize,
    /// `(m + 1 - rank) * m_l`.
    pub null_dim: usize,
    /// Orthonormal basis of the Hessian null space, fiber coordinates.
    pub null_basis: Vec<Vec<f64>>,
    /// The minimizer embedded back into full parameter space.
    #[serde(skip)]
    pub params: ParamVector,
}

/// Least-squares minimizer of the slice via the pseudoinverse of the
/// feature matrix.
pub fn fiber_minimize(fq: &FiberQuadratic) -> Result<FiberMinimum> {
    let dec = svd(&fq.phi_hat)?;
    let sigma_max = dec.sigma.first().copied().unwrap_or(0.0);
    let tau = default_tau_rank(fq.phi_hat.rows(), fq.phi_hat.cols(), sigma_max);
    let phi_aug_rank = dec.rank_at(tau);
    let w_hat = fq.target_matrix().matmul(&dec.pseudoinverse(tau));
    let mut w_min_norm = vec![0.0; fq.dim()];
    for u in 0..fq.out_dim {
        for j in 0..=fq.m {
            w_min_norm[fq.fiber_index(u, j)] = w_hat[(u, j)];
        }
    }
    let (r_check, null_basis) = null_directions(fq)?;
    debug_assert_eq!(r_check, phi_aug_rank);
    let loss_min = fq.eval(&w_min_norm);
    let params = fq.params_with_fiber(&w_min_norm)?;
    Ok(FiberMinimum {
        w_min_norm,
        loss_min,
        phi_aug_rank,
        null_dim: null_basis.len(),
        null_basis,
        params,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Straight-line segment from a start point to the *nearest* global
/// minimizer of its slice, with the restricted loss sampled along it.
#[derive(Debug, Clone, Serialize)]
pub struct DescentLine {
    pub t_grid: Vec<f64>,
    /// Restricted loss at each grid point.
    pub fiber_loss: Vec<f64>,
    /// Full-network loss at the embedded grid points.
    pub full_loss: Vec<f64>,
    pub start_loss: f64,
    pub endpoint_loss: f64,
    /// `[c0, c1, c2]` of the least-squares degree-2 fit of loss against t.
    pub quadratic_coeffs: [f64; 3],
    /// Largest fit deviation, relative to `max(1, start_loss)`.
    pub fit_residual: f64,
    /// Largest relative gap between restricted and full loss on the grid.
    pub embed_rel_dev: f64,
    pub strictly_decreasing: bool,
    /// Distance from the start to the chosen minimizer.
    pub line_length: f64,
    #[serde(skip)]
    pub endpoint_params: ParamVector,
    pub pass: bool,
}

/// Builds the descent line from `start` (fiber coordinates). Requires
/// `rank(PhiHat) = n` so the endpoint is a global minimizer of the full
/// loss; fails with [`Error::DegenerateLine`] when the start already
/// minimizes. The loss along the line is exactly
/// `start_loss * (1 - t)^2`, which the degree-2 fit confirms.
pub fn descent_line(fq: &FiberQuadratic, start: &[f64]) -> Result<DescentLine> {
    if start.len() != fq.dim() {
        return Err(Error::Argument(format!(
            "fiber has {} coordinates, got {}",
            fq.dim(),
            start.len()
        )));
    }
    let n = fq.dataset().n();
    let min = fiber_minimize(fq)?;
    if min.phi_aug_rank < n {
        return Err(Error::RankDeficient { rank: min.phi_aug_rank, need: n });
    }

    // Nearest minimizer: translate the min-norm solution by the null-space
    // component of the offset.
    let offset: Vec<f64> =
        start.iter().zip(&min.w_min_norm).map(|(s, m)| s - m).collect();
    let mut w_star = min.w_min_norm.clone();
    for e in &min.null_basis {
        let c = dot(&offset, e);
        for (ws, ei) in w_star.iter_mut().zip(e) {
            *ws += c * ei;
        }
    }
    let dir: Vec<f64> = w_star.iter().zip(start).map(|(t, s)| t - s).collect();
    let line_length = l2(&dir);
    if line_length <= 1e-12 * l2(start).max(1.0) {
        return Err(Error::DegenerateLine);
    }

    let steps = 50usize;
    let mut t_grid = Vec::with_capacity(steps + 1);
    let mut fiber_loss = Vec::with_capacity(steps + 1);
    let mut full_loss = Vec::with_capacity(steps + 1);
    let mut embed_rel_dev = 0.0f64;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let w: Vec<f64> = start.iter().zip(&dir).map(|(s, d)| s + t * d).collect();
        let lf = fq.eval(&w);
        let lp = loss(&fq.params_with_fiber(&w)?, fq.dataset(), fq.activation())?;
        embed_rel_dev = embed_rel_dev.max((lf - lp).abs() / lp.abs().max(1.0));
        t_grid.push(t);
        fiber_loss.push(lf);
        full_loss.push(lp);
    }
    let start_loss = fiber_loss[0];
    let endpoint_loss = full_loss[steps];
    let strictly_decreasing = fiber_loss.windows(2).all(|w| w[1] < w[0]);

    let design = Mat::from_fn(steps + 1, 3, |r, c| t_grid[r].powi(c as i32));
    let coeffs = lstsq_min_norm(&design, &fiber_loss, 1e-12)?;
    let quadratic_coeffs = [coeffs[0], coeffs[1], coeffs[2]];
    let fit_residual = t_grid
        .iter()
        .zip(&fiber_loss)
        .map(|(&t, &lv)| {
            let fit = quadratic_coeffs[0] + quadratic_coeffs[1] * t + quadratic_coeffs[2] * t * t;
            (fit - lv).abs()
        })
        .fold(0.0f64, f64::max)
        / start_loss.max(1.0);

    let pass = strictly_decreasing
        && fit_residual <= DESCENT_FIT_TOL
        && endpoint_loss <= DESCENT_ENDPOINT_TOL
        && embed_rel_dev <= FIBER_EMBED_TOL
        && quadratic_coeffs[2] > 0.0
        && quadratic_coeffs[1] < 0.0;
    let endpoint_params = fq.params_with_fiber(&w_star)?;
    Ok(DescentLine {
        t_grid,
        fiber_loss,
        full_loss,
        start_loss,
        endpoint_loss,
        quadratic_coeffs,
        fit_residual,
        embed_rel_dev,
        strictly_decreasing,
        line_length,
        endpoint_params,
        pass,
    })
}

/// Affine piece of the level set through a critical point.
#[derive(Debug, Clone, Serialize)]
pub struct LevelSetWitness {
    pub base_loss: f64,
    pub phi_aug_rank: usize,
    /// `(m + 1 - rank) * m_l`, the dimension of the witnessed affine
    /// subspace (zero when the feature matrix has full row rank).
    pub witness_dim: usize,
    pub probes: usize,
    /// Largest `|L(probe) - L(base)| / max(1, |L(base)|)` observed.
    pub max_loss_dev: f64,
    /// Whether the loss also stayed constant along the output-bias
    /// directions, which would extend the witness to the whole final-layer
    /// slice. The curvature along each bias coordinate is `2n > 0`, so on
    /// any nonempty dataset this comes back false; it is probed, not
    /// assumed.
    pub output_bias_directions_constant: bool,
    pub pass: bool,
}

/// Probes the affine subspace `p + null(Gram) kron I` with random
/// combinations of basis directions and checks the *full-network* loss
/// stays at the base value. Requires `p` critical to the usual gradient
/// tolerance — away from critical points the construction still keeps the
/// loss constant, but it stops saying anything about the critical locus.
pub fn level_set_witness(
    p: &ParamVector,
    data: &Dataset,
    act: Activation,
    probes: usize,
    seed: u64,
) -> Result<LevelSetWitness> {
    if probes == 0 {
        return Err(Error::Argument("need at least one probe".into()));
    }
    let g = gradient(p, data, act)?;
    let grad_inf = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if grad_inf > CRITICAL_GRAD_TOL {
        return Err(Error::NotCritical { grad_inf_norm: grad_inf, tolerance: CRITICAL_GRAD_TOL });
    }
    let fq = build_fiber(p, data, act)?;
    let (phi_aug_rank, basis) = null_directions(&fq)?;
    let base_loss = loss(p, data, act)?;
    let w_base = fq.w_from_params(p);
    let mut max_loss_dev = 0.0f64;
    for probe in 0..probes {
        let mut rng = stream_rng(seed, probe as u64 + 1);
        let mut w = w_base.clone();
        for e in &basis {
            let c: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            for (wi, ei) in w.iter_mut().zip(e) {
                *wi += c * ei;
            }
        }
        let probe_loss = loss(&fq.params_with_fiber(&w)?, data, act)?;
        max_loss_dev = max_loss_dev.max((probe_loss - base_loss).abs() / base_loss.abs().max(1.0));
    }
    let mut output_bias_directions_constant = true;
    'bias: for u in 0..fq.out_dim {
        for step in [0.1, -0.1] {
            let mut w = w_base.clone();
            w[fq.fiber_index(u, fq.m)] += step;
            let probe_loss = loss(&fq.params_with_fiber(&w)?, data, act)?;
            if (probe_loss - base_loss).abs() > LEVEL_SET_TOL * base_loss.abs().max(1.0) {
                output_bias_directions_constant = false;
                break 'bias;
            }
        }
    }
    Ok(LevelSetWitness {
        base_loss,
        phi_aug_rank,
        witness_dim: basis.len(),
        probes,
        max_loss_dev,
        output_bias_directions_constant,
        pass: max_loss_dev <= LEVEL_SET_TOL,
    })
}

/// An equal-loss neighbor strictly inside a prescribed ball around a local
/// minimum.
#[derive(Debug, Clone, Serialize)]
pub struct NonIsolationWitness {
    pub base_loss: f64,
    pub neighbor_loss: f64,
    /// `|L(q) - L(p)| / max(1, |L(p)|)`.
    pub loss_delta_rel: f64,
    /// `|q - p|`, half the requested radius.
    pub distance: f64,
    pub null_dim: usize,
    /// Smallest Hessian eigenvalue at `p` (the local-minimum screen).
    pub min_eigenvalue: f64,
    pub neighbor_grad_inf: f64,
    pub pass: bool,
}

/// Produces a point `q` with `|q - p| = epsilon / 2` and the same loss,
/// witnessing that the minimum at `p` is not isolated. Only stated for
/// nets whose last hidden width exceeds the sample count (that is what
/// guarantees a flat fiber direction), and demands that `p` pass a
/// local-minimum screen (gradient small, no meaningfully negative
/// eigenvalue): at a saddle the flat direction still preserves the loss
/// but the neighbor need not be critical, so nothing would be witnessed.
/// With the width hypothesis checked, an *absence* of flat directions is
/// impossible; if it happens anyway that is a falsification event and is
/// reported as [`Error::Falsification`].
pub fn nonisolation_witness(
    p: &ParamVector,
    data: &Dataset,
    act: Activation,
    epsilon: f64,
) -> Result<NonIsolationWitness> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Argument(format!("radius must be positive, got {epsilon}")));
    }
    let m = p.shape().last_hidden_width();
    if m <= data.n() {
        return Err(Error::Hypothesis(format!(
            "nonisolation needs last hidden width > sample count, got width {m} with {} samples",
            data.n()
        )));
    }
    let g = gradient(p, data, act)?;
    let grad_inf = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if grad_inf > CRITICAL_GRAD_TOL {
        return Err(Error::NotCritical { grad_inf_norm: grad_inf, tolerance: CRITICAL_GRAD_TOL });
    }
    let h = hessian(p, data, act)?;
    let eig = jacobi_eigh(&h)?;
    let min_eigenvalue = eig.values[0];
    if min_eigenvalue < -LOCAL_MIN_SCREEN_TOL {
        return Err(Error::Hypothesis(format!(
            "not a local-minimum candidate: smallest Hessian eigenvalue is {min_eigenvalue:e}"
        )));
    }
    let fq = build_fiber(p, data, act)?;
    let (_, basis) = null_directions(&fq)?;
    let Some(v) = basis.first() else {
        return Err(Error::Falsification {
            claim: format!(
                "a net with last hidden width {m} and {} samples must have a flat fiber \
                 direction at every critical point, but none was found",
                data.n()
            ),
        });
    };
    let w_base = fq.w_from_params(p);
    let step = epsilon / 2.0;
    let w_q: Vec<f64> = w_base.iter().zip(v).map(|(wi, vi)| wi + step * vi).collect();
    let q = fq.params_with_fiber(&w_q)?;
    let base_loss = loss(p, data, act)?;
    let neighbor_loss = loss(&q, data, act)?;
    let loss_delta_rel = (neighbor_loss - base_loss).abs() / base_loss.abs().max(1.0);
    let gq = gradient(&q, data, act)?;
    let neighbor_grad_inf = gq.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(NonIsolationWitness {
        base_loss,
        neighbor_loss,
        loss_delta_rel,
        distance: step,
        null_dim: basis.len(),
        min_eigenvalue,
        neighbor_grad_inf,
        pass: loss_delta_rel <= NONISOLATION_TOL,
    })
}

/// Final-layer submatrix of a full `d x d` Hessian, permuted into fiber
/// coordinates so it can be compared against
/// [`FiberQuadratic::hessian_matrix`] entry by entry.
pub fn extract_fiber_block(h: &Mat, shape: &NetworkShape) -> Result<Mat> {
    let d = shape.total_params();
    if h.rows() != d || h.cols() != d {
        return Err(Error::Shape(format!(
            "Hessian is {}x{}, shape needs {d}x{d}",
            h.rows(),
            h.cols()
        )));
    }
    let l = shape.depth();
    let m = shape.last_hidden_width();
    let o = shape.output_dim();
    let param_index = |f: usize| {
        let (j, u) = (f / o, f % o);
        if j < m {
            shape.weight_index(l, u, j)
        } else {
            shape.bias_index(l, u)
        }
    };
    Ok(Mat::from_fn((m + 1) * o, (m + 1) * o, |r, c| h[(param_index(r), param_index(c))]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loci::{make_locus, sample_locus, LocusKind};

    fn reference_shape() -> NetworkShape {
        NetworkShape::new(vec![2, 3, 3, 3, 1]).unwrap()
    }

    fn reference_dataset() -> Dataset {
        Dataset::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![1.0], vec![3.0]]).unwrap()
    }

    #[test]
    fn restricted_loss_equals_full_loss_bit_for_bit() {
        let cases = [
            (vec![2, 3, 3, 3, 1], 2, 1),
            (vec![2, 3, 3, 2], 3, 2),
            (vec![1, 4, 4, 4, 3], 4, 3),
        ];
        for (widths, n, tdim) in cases {
            let shape = NetworkShape::new(widths).unwrap();
            let data = Dataset::random(n, shape.input_dim(), tdim, 17).unwrap();
            for seed in 0..20u64 {
                let p = ParamVector::random(&shape, seed, 0.8);
                let fq = build_fiber(&p, &data, Activation::Tanh).unwrap();
                let w = fq.w_from_params(&p);
                let restricted = fq.eval(&w);
                let full = loss(&p, &data, Activation::Tanh).unwrap();
                assert_eq!(restricted, full, "seed {seed}");
            }
        }
    }

    #[test]
    fn fiber_gradient_matches_full_gradient_final_block() {
        let shape = NetworkShape::new(vec![2, 3, 3, 2]).unwrap();
        let data = Dataset::random(3, 2, 2, 23).unwrap();
        let p = ParamVector::random(&shape, 4, 0.6);
        let fq = build_fiber(&p, &data, Activation::Tanh).unwrap();
        let w = fq.w_from_params(&p);
        let gf = fq.fiber_gradient(&w);
        let g = gradient(&p, &data, Activation::Tanh).unwrap();
        let l = shape.depth();
        for u in 0..shape.output_dim() {
            for j in 0..shape.last_hidden_width() {
                let full = g[shape.weight_index(l, u, j)];
                let fib = gf[fq.fiber_index(u, j)];
                assert!((full - fib).abs() <= 1e-13 * full.abs().max(1.0), "W[{u},{j}]");
            }
            let full = g[shape.bias_index(l, u)];
            let fib = gf[fq.fiber_index(u, shape.last_hidden_width())];
            assert!((full - fib).abs() <= 1e-13 * full.abs().max(1.0), "b[{u}]");
        }
    }

    #[test]
    fn fiber_gradient_agrees_with_finite_differences() {
        let shape = reference_shape();
        let data = reference_dataset();
        let p = ParamVector::random(&shape, 9, 0.5);
        let fq = build_fiber(&p, &data, Activation::Tanh).unwrap();
        let w = fq.w_from_params(&p);
        let g = fq.fiber_gradient(&w);
        let h = 1e-6;
        for i in 0..fq.dim() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let fd = (fq.eval(&wp) - fq.eval(&wm)) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "coordinate {i}");
        }
    }

    #[test]
    fn restricted_hessian_is_kronecker_block_of_full_hessian() {
        for (widths, n, tdim) in [(vec![2, 3, 3, 3, 1], 2, 1), (vec![2, 3, 3, 2], 3, 2)] {
            let shape = NetworkShape::new(widths).unwrap();
            let data = Dataset::random(n, shape.input_dim(), tdim, 31).unwrap();
            let p = ParamVector::random(&shape, 8, 0.7);
            let fq = build_fiber(&p, &data, Activation::Tanh).unwrap();
            let h_full = hessian(&p, &data, Activation::Tanh).unwrap();
            let block = extract_fiber_block(&h_full, &shape).unwrap();
            let h_fiber = fq.hessian_matrix();
            assert_eq!(block.rows(), fq.dim());
            for r in 0..fq.dim() {
                for c in 0..fq.dim() {
                    let dev = (block[(r, c)] - h_fiber[(r, c)]).abs();
                    assert!(dev <= 1e-10, "entry ({r},{c}): dev {dev:e}");
                }
            }
        }
    }

    #[test]
    fn min_norm_solution_with_dead_features_is_the_mean_bias() {
        let shape = reference_shape();
        let data = reference_dataset();
        let p = ParamVector::zeros(&shape);
        let fq = build_fiber(&p, &data, Activation::Tanh).unwrap();
        let min = fiber_minimize(&fq).unwrap();
        // All features vanish, so PhiHat is just the ones row: the least-
        // squares solution is weightless with the target mean as bias.
        assert_eq!(min.phi_aug_rank, 1);
        assert_eq!(min.null_dim, 3);
        for (i, &v) in min.w_min_norm.iter().enumerate() {
            let expect = if i == 3 { 2.0 } else { 0.0 };
            assert!((v - expect).abs() <= 1e-14, "coordinate {i}: {v}");
        }
        assert!((min.loss_min - 2.0).abs() <= 1e-12);
        for e in &min.null_basis {
            assert!((l2(e) - 1.0).abs() <= 1e-12);
            assert!(e[3].abs() <= 1e-12, "flat directions never move the bias here");
        }
    }

    #[test]
    fn descent_line_is_an_exact_quadratic_reaching_a_global_minimum() {
        let shape = reference_shape();
        let data = reference_dataset();
        let p = ParamVector::random(&shape, 21, 0.8);
        let fq = build_fiber(&p, &data, Activation::Tanh).unwrap();
        let start = fq.w_from_params(&p);
        let line = descent_line(&fq, &start).unwrap();
        assert!(line.pass, "fit {:e}, endpoint {:e}", line.fit_residual, line.endpoint_loss);
        assert_eq!(line.t_grid.len(), 51);
        assert_eq!(line.embed_rel_dev, 0.0);
        assert!(line.endpoint_loss <= DESCENT_ENDPOINT_TOL);
        assert!(line.strictly_decreasing);
        // L(t) = L(0) (1-t)^2: coefficients (L0, -2 L0, L0).
        let l0 = line.start_loss;
        assert!((line.quadratic_coeffs[0] - l0).abs() <= 1e-9 * l0.max(1.0));
        assert!((line.quadratic_coeffs[1] + 2.0 * l0).abs() <= 1e-8 * l0.max(1.0));
        assert!((line.quadratic_coeffs[2] - l0).abs() <= 1e-8 * l0.max(1.0));
        // The endpoint really is a minimum of the full problem.
        let g = gradient(&line.endpoint_params, &data, Activation::Tanh).unwrap();
        let ginf = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(ginf <= 1e-9, "gradient at endpoint: {ginf:e}");
    }

    #[test]
    fn descent_line_rejects_rank_deficient_features_and_degenerate_starts() {
        let shape = reference_shape();
        // Identical inputs give identical feature columns: rank 1 < n = 2.
        let dup = Dataset::new(
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            vec![vec![1.0], vec![3.0]],
        )
        .unwrap();
        let p = ParamVector::random(&shape, 2, 0.5);
        let fq = build_fiber(&p, &dup, Activation::Tanh).unwrap();
        let start = fq.w_from_params(&p);
        assert!(matches!(
            descent_line(&fq, &start),
            Err(Error::RankDeficient { rank: 1, need: 2 })
        ));

        let data = reference_dataset();
        let fq = build_fiber(&p, &data, Activation::Tanh).unwrap();
        let min = fiber_minimize(&fq).unwrap();
        assert!(matches!(descent_line(&fq, &min.w_min_norm), Err(Error::DegenerateLine)));
    }

    #[test]
    fn level_sets_through_star_and_core_points_contain_affine_pieces() {
        let shape = reference_shape();
        let data = reference_dataset();
        let core = make_locus(&shape, &data, LocusKind::Core { indices: vec![1, 3] }).unwrap();
        let p = sample_locus(&core, 1, 19, 1.0).remove(0);
        let w = level_set_witness(&p, &data, Activation::Tanh, 25, 41).unwrap();
        // Features are dead, so rank(PhiHat) = 1 and the whole final weight
        // matrix moves freely: the probes change nothing at all.
        assert_eq!(w.phi_aug_rank, 1);
        assert_eq!(w.witness_dim, 3);
        assert_eq!(w.max_loss_dev, 0.0);
        assert!(w.pass);
        assert!((w.base_loss - 2.0).abs() <= 1e-12);
        // Moving the output bias always changes the loss (curvature 2n).
        assert!(!w.output_bias_directions_constant);
    }

    #[test]
    fn level_set_witness_at_a_global_minimum_has_codimension_n() {
        let shape = reference_shape();
        let data = reference_dataset();
        let p = ParamVector::random(&shape, 35, 0.8);
        let fq = build_fiber(&p, &data, Activation::Tanh).unwrap();
        let min = fiber_minimize(&fq).unwrap();
        let w = level_set_witness(&min.params, &data, Activation::Tanh, 25, 43).unwrap();
        assert_eq!(w.phi_aug_rank, 2);
        assert_eq!(w.witness_dim, 2);
        assert!(w.pass, "max deviation {:e}", w.max_loss_dev);
        assert!(!w.output_bias_directions_constant);
    }

    #[test]
    fn weight_block_rank_is_feature_rank_times_outputs() {
        // Freezing the bias coordinates drops the ones row: the remaining
        // block is 2 (Phi Phi^T kron I), whose rank is rank(Phi) * m_l.
        for (widths, n, tdim) in [(vec![2, 3, 3, 3, 1], 2, 1), (vec![2, 3, 3, 2], 3, 2)] {
            let shape = NetworkShape::new(widths).unwrap();
            let data = Dataset::random(n, shape.input_dim(), tdim, 47).unwrap();
            for seed in 0..10u64 {
                let p = ParamVector::random(&shape, seed, 0.7);
                let fq = build_fiber(&p, &data, Activation::Tanh).unwrap();
                let rc = rank_check(&fq).unwrap();
                let o = shape.output_dim();
                assert_eq!(rc.weight_block_rank, rc.phi_rank * o, "seed {seed}");
                assert!(rc.weight_block_within_bound);
                assert!(rc.full_rank_matches, "seed {seed}");
                assert!(rc.phi_aug_rank <= rc.phi_rank + 1);
                assert!(rc.full_rank <= rc.weight_block_rank + o);
            }
        }

        // Dead features: the weight block vanishes entirely while the bias
        // row keeps the full form at rank m_l.
        let shape = reference_shape();
        let data = reference_dataset();
        let p = ParamVector::zeros(&shape);
        let fq = build_fiber(&p, &data, Activation::Tanh).unwrap();
        let rc = rank_check(&fq).unwrap();
        assert_eq!(rc.phi_rank, 0);
        assert_eq!(rc.weight_block_rank, 0);
        assert_eq!(rc.phi_aug_rank, 1);
        assert_eq!(rc.full_rank, 1);
        assert!(rc.weight_block_within_bound && rc.full_rank_matches);
    }

    #[test]
    fn nonisolation_requires_width_above_sample_count() {
        // Last hidden width 2 with two samples: the flat-direction
        // guarantee is not stated there, so the witness refuses to run.
        let shape = NetworkShape::new(vec![2, 2, 2, 2, 1]).unwrap();
        let data = reference_dataset();
        let p = ParamVector::zeros(&shape);
        let err = nonisolation_witness(&p, &data, Activation::Tanh, 1e-3).unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)), "got {err:?}");
        assert!(err.to_string().contains("width"));
    }

    #[test]
    fn level_set_witness_requires_a_critical_point() {
        let shape = reference_shape();
        let data = reference_dataset();
        let p = ParamVector::random(&shape, 3, 0.5);
        assert!(matches!(
            level_set_witness(&p, &data, Activation::Tanh, 5, 1),
            Err(Error::NotCritical { .. })
        ));
    }

    #[test]
    fn minima_are_not_isolated() {
        let shape = reference_shape();
        let data = reference_dataset();
        // An exact global minimum from the slice.
        let p = ParamVector::random(&shape, 35, 0.8);
        let fq = build_fiber(&p, &data, Activation::Tanh).unwrap();
        let min = fiber_minimize(&fq).unwrap();
        let w = nonisolation_witness(&min.params, &data, Activation::Tanh, 1e-3).unwrap();
        assert!(w.pass, "loss delta {:e}", w.loss_delta_rel);
        assert_eq!(w.distance, 5e-4);
        assert_eq!(w.null_dim, 2);
        assert!(w.neighbor_grad_inf <= 1e-9);

        // A core point: positive semidefinite Hessian, dead features, and
        // the witness direction changes the loss by exactly nothing.
        let core = make_locus(&shape, &data, LocusKind::Core { indices: vec![2, 3] }).unwrap();
        let q = sample_locus(&core, 1, 23, 1.0).remove(0);
        let wc = nonisolation_witness(&q, &data, Activation::Tanh, 1e-2).unwrap();
        assert_eq!(wc.loss_delta_rel, 0.0);
        assert!(wc.min_eigenvalue >= -LOCAL_MIN_SCREEN_TOL);
        assert!(wc.pass);
    }

    #[test]
    fn nonisolation_screen_rejects_saddles() {
        let shape = reference_shape();
        let data = reference_dataset();
        // Star points with live second-layer features have strictly
        // negative Hessian directions (paired with positive ones), so the
        // local-minimum screen must refuse them.
        let star = make_locus(&shape, &data, LocusKind::Star { k: 3 }).unwrap();
        let p = sample_locus(&star, 1, 29, 1.0).remove(0);
        let err = nonisolation_witness(&p, &data, Activation::Tanh, 1e-3).unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)), "got {err:?}");
    }
}
