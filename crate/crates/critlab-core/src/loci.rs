//! Star and core loci: affine families of critical points built by zeroing
//! prescribed weight matrices and biases, plus the dimension bookkeeping
//! for them.
//!
//! For a depth-`l` network and hidden index `k`, the *star* family fixes
//! `M_l = 0`, `M_k = 0`, `b_k = ... = b_{l-1} = 0` and sets the output bias
//! to the target mean; every remaining coordinate is free. Zeroing the
//! hidden signal makes the network output constantly equal to that mean,
//! and the mean is the unique constant with vanishing loss gradient — so
//! each such point is critical (guaranteed for depth >= 3). A *core*
//! family zeroes two or more hidden matrices; from depth >= 4 on, its
//! points are degenerate critical points whose Hessian is `2n` on the
//! output-bias block and zero elsewhere.
//!
//! The output bias must be the target *mean*: placing the target *sum*
//! there instead leaves a gradient of exactly `2(n-1) * sum(y)` on the
//! output-bias coordinates. That variant is available behind
//! [`BiasConvention::Sum`] purely as a negative control.

use crate::error::{Error, Result};
use crate::net::{Dataset, NetworkShape, ParamVector};
use crate::rng::stream_rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Which locus family to build.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LocusKind {
    /// One zeroed hidden matrix `M_k`.
    Star { k: usize },
    /// Two or more zeroed hidden matrices (one index is accepted and then
    /// coincides with the star family).
    Core { indices: Vec<usize> },
}

impl LocusKind {
    /// Sorted list of zeroed hidden-layer indices.
    pub fn indices(&self) -> Vec<usize> {
        match self {
            LocusKind::Star { k } => vec![*k],
            LocusKind::Core { indices } => indices.clone(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            LocusKind::Star { k } => format!("star(k={k})"),
            LocusKind::Core { indices } => format!("core({indices:?})"),
        }
    }
}

/// Where the output bias of a locus point comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BiasConvention {
    /// Componentwise mean of the targets — the value that makes the points
    /// critical.
    #[default]
    Mean,
    /// Componentwise sum of the targets — a documented negative control
    /// that is *not* critical for n >= 2.
    Sum,
}

/// An affine coordinate-subspace of parameter space: each coordinate is
/// either fixed to a constant or free.
#[derive(Debug, Clone, PartialEq)]
pub struct LocusSpec {
    shape: NetworkShape,
    kind: LocusKind,
    convention: BiasConvention,
    /// `Some(v)` pins flat coordinate `i` to `v`; `None` leaves it free.
    fixed: Vec<Option<f64>>,
    output_bias: Vec<f64>,
    criticality_guaranteed: bool,
}

/// Builds the locus mask with the mean-bias convention.
pub fn make_locus(shape: &NetworkShape, data: &Dataset, kind: LocusKind) -> Result<LocusSpec> {
    make_locus_with_convention(shape, data, kind, BiasConvention::Mean)
}

/// Builds the locus mask with an explicit output-bias convention; `Sum` is
/// the negative control.
pub fn make_locus_with_convention(
    shape: &NetworkShape,
    data: &Dataset,
    kind: LocusKind,
    convention: BiasConvention,
) -> Result<LocusSpec> {
    data.check_shape(shape)?;
    let l = shape.depth();
    let indices = kind.indices();
    if indices.is_empty() {
        return Err(Error::Argument("core locus needs at least one index".into()));
    }
    for w in indices.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Argument(format!(
                "locus indices must be strictly increasing, got {indices:?}"
            )));
        }
    }
    if indices[0] < 1 || *indices.last().unwrap() > l - 1 {
        return Err(Error::Argument(format!(
            "locus indices {indices:?} out of hidden range 1..={}",
            l - 1
        )));
    }

    let output_bias = match convention {
        BiasConvention::Mean => data.mean_target(),
        BiasConvention::Sum => data.sum_target(),
    };

    let mut fixed: Vec<Option<f64>> = vec![None; shape.total_params()];
    let mut zero_weights = indices.clone();
    zero_weights.push(l);
    for &i in &zero_weights {
        for r in 0..shape.width(i) {
            for c in 0..shape.width(i - 1) {
                fixed[shape.weight_index(i, r, c)] = Some(0.0);
            }
        }
    }
    for j in indices[0]..l {
        for r in 0..shape.width(j) {
            fixed[shape.bias_index(j, r)] = Some(0.0);
        }
    }
    for r in 0..shape.output_dim() {
        fixed[shape.bias_index(l, r)] = Some(output_bias[r]);
    }

    let criticality_guaranteed = match &kind {
        LocusKind::Star { .. } => l >= 3,
        LocusKind::Core { indices } => {
            if indices.len() >= 2 {
                l >= 4
            } else {
                l >= 3
            }
        }
    } && convention == BiasConvention::Mean;

    Ok(LocusSpec {
        shape: shape.clone(),
        kind,
        convention,
        fixed,
        output_bias,
        criticality_guaranteed,
    })
}

impl LocusSpec {
    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn kind(&self) -> &LocusKind {
        &self.kind
    }

    pub fn convention(&self) -> BiasConvention {
        self.convention
    }

    /// Value pinned into the output bias.
    pub fn output_bias(&self) -> &[f64] {
        &self.output_bias
    }

    /// Whether the depth hypothesis for guaranteed criticality holds
    /// (star: depth >= 3; core of >= 2 indices: depth >= 4). Construction
    /// below these depths is permitted, flagged rather than rejected.
    pub fn criticality_guaranteed(&self) -> bool {
        self.criticality_guaranteed
    }

    /// Number of free coordinates — the dimension of the affine family.
    pub fn free_count(&self) -> usize {
        self.fixed.iter().filter(|c| c.is_none()).count()
    }

    /// Fixed/free mask over flat parameter coordinates.
    pub fn mask(&self) -> &[Option<f64>] {
        &self.fixed
    }

    /// Fills the free coordinates (in flat storage order) into the mask.
    pub fn embed(&self, free: &[f64]) -> Result<ParamVector> {
        if free.len() != self.free_count() {
            return Err(Error::Argument(format!(
                "locus has {} free coordinates, got {}",
                self.free_count(),
                free.len()
            )));
        }
        let mut data = Vec::with_capacity(self.fixed.len());
        let mut it = free.iter();
        for slot in &self.fixed {
            data.push(match slot {
                Some(v) => *v,
                None => *it.next().unwrap(),
            });
        }
        ParamVector::from_vec(&self.shape, data)
    }

    /// The point with every free coordinate zero. With all hidden indices
    /// zeroed this is the single deepest point: all parameters zero except
    /// the output bias.
    pub fn base_point(&self) -> ParamVector {
        self.embed(&vec![0.0; self.free_count()]).expect("length matches by construction")
    }

    /// Euclidean distance from `p` to the locus (over fixed coordinates
    /// only — the free ones never contribute).
    pub fn residual(&self, p: &ParamVector) -> f64 {
        p.as_slice()
            .iter()
            .zip(&self.fixed)
            .map(|(x, slot)| match slot {
                Some(v) => (x - v) * (x - v),
                None => 0.0,
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Orthogonal projection of `p` onto the locus: fixed coordinates are
    /// overwritten, free ones kept.
    pub fn project(&self, p: &ParamVector) -> ParamVector {
        let data = p
            .as_slice()
            .iter()
            .zip(&self.fixed)
            .map(|(x, slot)| slot.unwrap_or(*x))
            .collect();
        ParamVector::from_vec(&self.shape, data).expect("projection preserves length")
    }
}

/// Draws `count` points of the locus: free coordinates i.i.d. normal with
/// standard deviation `scale` (scale 0 reproduces the base point). Sample
/// `i` comes from stream `i + 1` of `seed`, so parallel and serial callers
/// see identical points.
pub fn sample_locus(spec: &LocusSpec, count: usize, seed: u64, scale: f64) -> Vec<ParamVector> {
    (0..count)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64 + 1);
            let free: Vec<f64> = (0..spec.free_count())
                .map(|_| {
                    scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                })
                .collect();
            spec.embed(&free).expect("length matches by construction")
        })
        .collect()
}

/// Per-family dimension of the star locus: total parameters minus the
/// count of pinned coordinates for index `k`.
pub fn star_dim(shape: &NetworkShape, k: usize) -> usize {
    let l = shape.depth();
    assert!((1..l).contains(&k), "star index out of range");
    let fixed = (shape.last_hidden_width() + 1) * shape.output_dim()
        + shape.width(k - 1) * shape.width(k)
        + (k..l).map(|j| shape.width(j)).sum::<usize>();
    shape.total_params() - fixed
}

/// Per-pair dimension of the core locus for zeroed indices `i < j`.
pub fn core_dim(shape: &NetworkShape, i: usize, j: usize) -> usize {
    let l = shape.depth();
    assert!(i < j && i >= 1 && j <= l - 1, "core indices out of range");
    let fixed = (shape.last_hidden_width() + 1) * shape.output_dim()
        + shape.width(i - 1) * shape.width(i)
        + shape.width(j - 1) * shape.width(j)
        + (i..l).map(|t| shape.width(t)).sum::<usize>();
    shape.total_params() - fixed
}

/// One star-family dimension entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StarDimEntry {
    pub k: usize,
    pub dim: usize,
}

/// One core-pair dimension entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreDimEntry {
    pub indices: [usize; 2],
    pub dim: usize,
}

/// Closed forms valid only when every hidden layer has the same width `m`
/// (depth `l`, input `a`, output `b`):
///
/// ```text
/// d      = (l-2) m^2 + (l+a+b-1) m + b
/// dim(S) = (l-3) m^2 + (a+1) m
/// dim(C) = (l-4) m^2 + (a+1) m
/// dim(M) = (l-2) m^2 + (a+b+l-1) m + b (1-n)
/// ```
///
/// `dim(S)` here equals the per-index value at `k = 2`; zeroing the *last*
/// hidden matrix pins fewer biases and gives a strictly larger family
/// whenever `m > a + 1`, which the mask-based maximum reports. The report
/// carries both values and flags the disagreement instead of resolving it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformClosedForms {
    pub m: usize,
    pub d: i64,
    pub dim_star: i64,
    pub dim_core: i64,
    pub dim_global_min: i64,
}

/// Expected zero-eigenvalue counts of the loss Hessian by critical-point
/// type: `d - 1` on a core point, `d - b n` at a global minimum, and at
/// least `(m_{l-1} + 1 - n) * m_l` at any other critical point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroEigTable {
    pub core: usize,
    pub global_min: i64,
    pub other_lower_bound: i64,
}

/// Dimension report for one shape and dataset size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub widths: Vec<usize>,
    pub n: usize,
    /// Total parameter count.
    pub d: usize,
    pub star_dims: Vec<StarDimEntry>,
    pub star_dim_max: usize,
    pub core_dims: Vec<CoreDimEntry>,
    pub core_dim_max: Option<usize>,
    /// `d - b n`, the dimension of the global-minimum locus in the
    /// overparameterized regime (may be negative and meaningless outside it).
    pub dim_global_min: i64,
    /// Closed forms, present only for uniform hidden widths.
    pub uniform: Option<UniformClosedForms>,
    /// Set when the uniform star closed form disagrees with the mask-based
    /// maximum over `k`.
    pub star_closed_form_mismatch: bool,
    pub zero_eig: ZeroEigTable,
}

/// Computes every dimension quantity for a shape with `n` training samples.
pub fn dimensions(shape: &NetworkShape, n: usize) -> Result<DimensionReport> {
    if n == 0 {
        return Err(Error::Argument("dataset size must be positive".into()));
    }
    let l = shape.depth();
    let d = shape.total_params();
    let b = shape.output_dim();
    let a = shape.input_dim();

    let star_dims: Vec<StarDimEntry> =
        (1..l).map(|k| StarDimEntry { k, dim: star_dim(shape, k) }).collect();
    let star_dim_max = star_dims.iter().map(|e| e.dim).max().expect("l >= 2");

    let mut core_dims = Vec::new();
    for i in 1..l {
        for j in (i + 1)..l {
            core_dims.push(CoreDimEntry { indices: [i, j], dim: core_dim(shape, i, j) });
        }
    }
    let core_dim_max = core_dims.iter().map(|e| e.dim).max();

    let uniform = shape.uniform_hidden_width().map(|m| {
        let (li, mi, ai, bi, ni) = (l as i64, m as i64, a as i64, b as i64, n as i64);
        UniformClosedForms {
            m,
            d: (li - 2) * mi * mi + (li + ai + bi - 1) * mi + bi,
            dim_star: (li - 3) * mi * mi + (ai + 1) * mi,
            dim_core: (li - 4) * mi * mi + (ai + 1) * mi,
            dim_global_min: (li - 2) * mi * mi + (ai + bi + li - 1) * mi + bi * (1 - ni),
        }
    });
    let star_closed_form_mismatch =
        uniform.as_ref().is_some_and(|u| u.dim_star != star_dim_max as i64);

    let zero_eig = ZeroEigTable {
        core: d - 1,
        global_min: d as i64 - (b * n) as i64,
        other_lower_bound: (shape.last_hidden_width() as i64 + 1 - n as i64) * b as i64,
    };

    Ok(DimensionReport {
        widths: shape.widths().to_vec(),
        n,
        d,
        star_dims,
        star_dim_max,
        core_dims,
        core_dim_max,
        dim_global_min: d as i64 - (b * n) as i64,
        uniform,
        star_closed_form_mismatch,
        zero_eig,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deriv::gradient;
    use crate::net::Activation;

    fn reference_shape() -> NetworkShape {
        NetworkShape::new(vec![2, 3, 3, 3, 1]).unwrap()
    }

    fn reference_dataset() -> Dataset {
        Dataset::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![1.0], vec![3.0]]).unwrap()
    }

    #[test]
    fn star_and_core_free_counts_on_reference_net() {
        let shape = reference_shape();
        let data = reference_dataset();
        let star2 = make_locus(&shape, &data, LocusKind::Star { k: 2 }).unwrap();
        assert_eq!(star2.free_count(), 18);
        assert_eq!(star2.output_bias(), &[2.0]);
        assert!(star2.criticality_guaranteed());

        let core23 = make_locus(&shape, &data, LocusKind::Core { indices: vec![2, 3] }).unwrap();
        assert_eq!(core23.free_count(), 9);
        assert!(core23.criticality_guaranteed());
    }

    #[test]
    fn full_core_is_the_single_deepest_point() {
        let shape = reference_shape();
        let data = reference_dataset();
        let all = make_locus(&shape, &data, LocusKind::Core { indices: vec![1, 2, 3] }).unwrap();
        assert_eq!(all.free_count(), 0);
        let p = all.base_point();
        let bias_idx = shape.bias_index(4, 0);
        for (i, &v) in p.as_slice().iter().enumerate() {
            assert_eq!(v, if i == bias_idx { 2.0 } else { 0.0 });
        }
    }

    #[test]
    fn mask_dimensions_match_analytic_formulas() {
        for widths in [
            vec![2, 3, 3, 3, 1],
            vec![2, 4, 4, 4, 4, 2],
            vec![3, 5, 5, 1],
            vec![1, 2, 2, 1],
            vec![2, 3, 1],
        ] {
            let shape = NetworkShape::new(widths).unwrap();
            let data =
                Dataset::random(2, shape.input_dim(), shape.output_dim(), 99).unwrap();
            let l = shape.depth();
            for k in 1..l {
                let spec = make_locus(&shape, &data, LocusKind::Star { k }).unwrap();
                assert_eq!(spec.free_count(), star_dim(&shape, k), "star k={k}");
            }
            for i in 1..l {
                for j in (i + 1)..l {
                    let spec =
                        make_locus(&shape, &data, LocusKind::Core { indices: vec![i, j] })
                            .unwrap();
                    assert_eq!(spec.free_count(), core_dim(&shape, i, j), "core ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn deeper_cores_nest_inside_shallower_ones() {
        let shape = NetworkShape::new(vec![2, 4, 4, 4, 4, 2]).unwrap();
        let data = Dataset::random(3, 2, 2, 5).unwrap();
        let chains: [&[usize]; 3] = [&[2], &[2, 3], &[2, 3, 4]];
        let mut prev: Option<LocusSpec> = None;
        for ids in chains {
            let spec =
                make_locus(&shape, &data, LocusKind::Core { indices: ids.to_vec() }).unwrap();
            if let Some(p) = &prev {
                for (slot_new, slot_old) in spec.mask().iter().zip(p.mask()) {
                    if slot_old.is_some() {
                        assert_eq!(slot_new, slot_old, "adding an index must only pin more");
                    }
                }
                assert!(spec.free_count() < p.free_count());
            }
            prev = Some(spec);
        }
    }

    #[test]
    fn sampled_star_points_are_critical() {
        let shape = reference_shape();
        let data = reference_dataset();
        let spec = make_locus(&shape, &data, LocusKind::Star { k: 2 }).unwrap();
        let samples = sample_locus(&spec, 100, 3, 1.0);
        for (i, p) in samples.iter().enumerate() {
            let g = gradient(p, &data, Activation::Tanh).unwrap();
            let inf = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(inf <= 1e-10, "sample {i}: |grad|_inf = {inf:e}");
            // The network output is constantly the target mean.
            let out = crate::net::forward(p, &[0.37, -0.8], Activation::Tanh).unwrap();
            assert_eq!(out, vec![2.0]);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_scale_zero_gives_base_point() {
        let shape = reference_shape();
        let data = reference_dataset();
        let spec = make_locus(&shape, &data, LocusKind::Core { indices: vec![1, 2] }).unwrap();
        assert_eq!(sample_locus(&spec, 5, 7, 1.0), sample_locus(&spec, 5, 7, 1.0));
        let base = sample_locus(&spec, 2, 7, 0.0);
        assert_eq!(base[0], spec.base_point());
        assert_eq!(base[1], spec.base_point());
    }

    #[test]
    fn sum_convention_is_not_critical_for_two_or_more_samples() {
        let shape = reference_shape();
        let data = reference_dataset();
        let spec = make_locus_with_convention(
            &shape,
            &data,
            LocusKind::Star { k: 2 },
            BiasConvention::Sum,
        )
        .unwrap();
        assert!(!spec.criticality_guaranteed());
        assert_eq!(spec.output_bias(), &[4.0]);
        let p = sample_locus(&spec, 1, 1, 1.0).remove(0);
        let g = gradient(&p, &data, Activation::Tanh).unwrap();
        let inf = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        // Output-bias gradient is exactly 2 (n-1) sum(y) = 2 * 1 * 4.
        assert!((inf - 8.0).abs() <= 1e-12, "expected 8, got {inf}");
        let bias_grad = g[shape.bias_index(4, 0)];
        assert!((bias_grad - 8.0).abs() <= 1e-12);
    }

    #[test]
    fn invalid_indices_are_rejected() {
        let shape = reference_shape();
        let data = reference_dataset();
        for kind in [
            LocusKind::Star { k: 0 },
            LocusKind::Star { k: 4 },
            LocusKind::Core { indices: vec![] },
            LocusKind::Core { indices: vec![2, 2] },
            LocusKind::Core { indices: vec![3, 2] },
            LocusKind::Core { indices: vec![1, 5] },
        ] {
            assert!(make_locus(&shape, &data, kind.clone()).is_err(), "{kind:?} accepted");
        }
    }

    #[test]
    fn embed_checks_free_length_and_projection_restores_mask() {
        let shape = reference_shape();
        let data = reference_dataset();
        let spec = make_locus(&shape, &data, LocusKind::Star { k: 1 }).unwrap();
        assert!(spec.embed(&[0.0]).is_err());
        let q = ParamVector::random(&shape, 21, 1.0);
        let proj = spec.project(&q);
        assert_eq!(spec.residual(&proj), 0.0);
        assert!(spec.residual(&q) > 0.0);
    }

    #[test]
    fn depth_two_star_is_flagged_unguaranteed() {
        let shape = NetworkShape::new(vec![2, 3, 1]).unwrap();
        let data = Dataset::random(2, 2, 1, 1).unwrap();
        let spec = make_locus(&shape, &data, LocusKind::Star { k: 1 }).unwrap();
        assert!(!spec.criticality_guaranteed());
        assert_eq!(spec.free_count(), 0);
    }

    #[test]
    fn locus_kind_serializes_to_tagged_json() {
        let star = serde_json::to_string(&LocusKind::Star { k: 2 }).unwrap();
        assert_eq!(star, r#"{"kind":"star","k":2}"#);
        let core = serde_json::to_string(&LocusKind::Core { indices: vec![2, 3] }).unwrap();
        assert_eq!(core, r#"{"kind":"core","indices":[2,3]}"#);
        let parsed: LocusKind = serde_json::from_str(r#"{"kind":"core","indices":[1,3]}"#).unwrap();
        assert_eq!(parsed, LocusKind::Core { indices: vec![1, 3] });
    }

    #[test]
    fn dimension_report_for_reference_net() {
        let shape = reference_shape();
        let rep = dimensions(&shape, 2).unwrap();
        assert_eq!(rep.d, 37);
        assert_eq!(rep.dim_global_min, 35);
        let by_k: Vec<usize> = rep.star_dims.iter().map(|e| e.dim).collect();
        assert_eq!(by_k, vec![18, 18, 21]);
        assert_eq!(rep.star_dim_max, 21);
        assert!(rep.core_dims.iter().all(|e| e.dim == 9));
        assert_eq!(rep.core_dim_max, Some(9));
        let u = rep.uniform.unwrap();
        assert_eq!(u.d, 37);
        assert_eq!(u.dim_star, 18);
        assert_eq!(u.dim_core, 9);
        assert_eq!(u.dim_global_min, 35);
        assert!(rep.star_closed_form_mismatch, "k=3 gives 21, closed form 18");
        assert_eq!(rep.zero_eig.core, 36);
        assert_eq!(rep.zero_eig.global_min, 35);
        assert_eq!(rep.zero_eig.other_lower_bound, 2);
    }

    #[test]
    fn uniform_closed_forms_match_masks_at_interior_indices() {
        // The closed forms correspond to k = 2 (star) and (i, j) = (2, 3)
        // (core) in the mask counts, for any uniform-width shape deep enough
        // to have those indices.
        for (widths, n) in [
            (vec![2, 3, 3, 3, 1], 2),
            (vec![2, 5, 5, 5, 5, 3], 4),
            (vec![4, 2, 2, 2, 2, 2, 1], 3),
        ] {
            let shape = NetworkShape::new(widths).unwrap();
            let rep = dimensions(&shape, n).unwrap();
            let u = rep.uniform.clone().unwrap();
            assert_eq!(u.d, rep.d as i64);
            assert_eq!(u.dim_global_min, rep.dim_global_min);
            let star2 = rep.star_dims.iter().find(|e| e.k == 2).unwrap();
            assert_eq!(u.dim_star, star2.dim as i64);
            if shape.depth() >= 4 {
                let core23 =
                    rep.core_dims.iter().find(|e| e.indices == [2, 3]).unwrap();
                assert_eq!(u.dim_core, core23.dim as i64);
            }
        }
    }
}
