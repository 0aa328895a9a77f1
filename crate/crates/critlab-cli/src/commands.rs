//! The six subcommands, implemented against critlab-core and returning a
//! [`Report`] that main serializes.
//!
//! Error policy: anything wrong with the *request* (missing blocks, bad
//! shapes, unknown function names, hypothesis violations) comes back as an
//! `Err` and exits with code 2. Checks that ran but missed their threshold
//! land in `Report::failures`; outcomes that would contradict a claim whose
//! hypotheses held land in `Report::falsifications`. Either kind flips
//! `pass` to false (exit code 1).

use crate::config::{PointSpec, RunConfig};
use crate::dataset::resolve_dataset;
use crate::report::Report;
use anyhow::{anyhow, bail};
use critlab_core::deriv::{gradient, hessian};
use critlab_core::fiber::{
    build_fiber, descent_line, extract_fiber_block, fiber_minimize, level_set_witness,
    nonisolation_witness, rank_check,
};
use critlab_core::flow::{
    basin_fraction, classify_terminal, integrate_flow, AnalyticFunction, FlowOptions, FlowOutcome,
    FlowResult, NetworkLoss, StepPolicy, TerminalTag,
};
use critlab_core::loci::{dimensions, make_locus, sample_locus, LocusKind, LocusSpec};
use critlab_core::net::loss;
use critlab_core::rng::stream_rng;
use critlab_core::spectral::{
    hessian_spectrum, verify_core, verify_star, zero_eig_bound_check, CORE_CURVATURE_TOL,
    CORE_ZERO_TOL, CRITICAL_GRAD_TOL,
};
use critlab_core::{Dataset, Error, NetworkShape, ParamVector};
use rand::Rng;
use serde_json::{json, Value};
use std::path::Path;
use std::time::Instant;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Stream per-step flow CSV to stderr.
    pub trace: bool,
    /// Keep null-space basis vectors in the report payload.
    pub emit_basis: bool,
    /// Run the documented negative controls and demand they fail.
    pub falsify: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    VerifyStar,
    VerifyCore,
    Spectrum,
    Fiber,
    Flow,
    Dims,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::VerifyStar => "verify-star",
            CommandKind::VerifyCore => "verify-core",
            CommandKind::Spectrum => "spectrum",
            CommandKind::Fiber => "fiber",
            CommandKind::Flow => "flow",
            CommandKind::Dims => "dims",
        }
    }
}

/// Runs one command against a parsed config. `base_dir` anchors relative
/// dataset paths (normally the config file's directory).
pub fn run(
    kind: CommandKind,
    config: &RunConfig,
    base_dir: &Path,
    opts: &RunOptions,
) -> anyhow::Result<Report> {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut falsifications = Vec::new();
    let mut results = match kind {
        CommandKind::VerifyStar => {
            cmd_verify_star(config, base_dir, opts, &mut failures, &mut falsifications)?
        }
        CommandKind::VerifyCore => {
            cmd_verify_core(config, base_dir, opts, &mut failures, &mut falsifications)?
        }
        CommandKind::Spectrum => {
            cmd_spectrum(config, base_dir, opts, &mut failures, &mut falsifications)?
        }
        CommandKind::Fiber => {
            cmd_fiber(config, base_dir, opts, &mut failures, &mut falsifications)?
        }
        CommandKind::Flow => {
            cmd_flow(config, base_dir, opts, &mut failures, &mut falsifications)?
        }
        CommandKind::Dims => cmd_dims(config, opts)?,
    };
    if !opts.emit_basis {
        strip_key(&mut results, "null_basis");
    }
    let pass = failures.is_empty() && falsifications.is_empty();
    Ok(Report {
        command: kind.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        pass,
        failures,
        falsifications,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        config: serde_json::to_value(config)?,
        results,
    })
}

fn require_shape(config: &RunConfig) -> anyhow::Result<NetworkShape> {
    let widths = config
        .shape
        .clone()
        .ok_or_else(|| anyhow!("this command needs a `shape` entry in the config"))?;
    Ok(NetworkShape::new(widths)?)
}

fn require_dataset(config: &RunConfig, base_dir: &Path) -> anyhow::Result<Dataset> {
    let source = config
        .dataset
        .as_ref()
        .ok_or_else(|| anyhow!("this command needs a `dataset` entry in the config"))?;
    resolve_dataset(source, base_dir)
}

/// Removes a key everywhere in a JSON tree (used to drop basis vectors,
/// which are large and rarely wanted).
fn strip_key(value: &mut Value, key: &str) {
    match value {
        Value::Object(map) => {
            map.remove(key);
            for v in map.values_mut() {
                strip_key(v, key);
            }
        }
        Value::Array(items) => {
            for v in items {
                strip_key(v, key);
            }
        }
        _ => {}
    }
}

fn cmd_verify_star(
    config: &RunConfig,
    base_dir: &Path,
    opts: &RunOptions,
    failures: &mut Vec<String>,
    falsifications: &mut Vec<String>,
) -> anyhow::Result<Value> {
    let shape = require_shape(config)?;
    let data = require_dataset(config, base_dir)?;
    let act = config.activation.to_core();
    let block = config.verify.unwrap_or_default();

    let rep = verify_star(
        &shape,
        &data,
        act,
        block.count,
        config.seed,
        block.scale,
        block.grad_tol,
    )?;
    if !rep.pass {
        failures.push(format!(
            "star gradients reached {:.3e}, over the {:.1e} tolerance",
            rep.max_grad_inf, rep.tolerance
        ));
    }
    // The control is only informative when the sum and mean conventions
    // actually differ (n >= 2 and a nonzero target sum).
    let control_applicable = rep.sum_control_expected > block.grad_tol;
    if control_applicable && !rep.sum_control_fails {
        falsifications.push(format!(
            "sum-bias control point was critical (gradient {:.3e}, expected {:.3e}); \
             the mean convention did not separate from the sum",
            rep.sum_control_grad_inf, rep.sum_control_expected
        ));
    }
    let mut results = json!({ "star": serde_json::to_value(&rep)? });
    if opts.falsify {
        if !control_applicable {
            bail!(
                "the sum-bias control is vacuous here (expected gradient {:.3e}); \
                 it needs n >= 2 samples with a nonzero target sum",
                rep.sum_control_expected
            );
        }
        results["falsify"] = json!({
            "control": "output bias set to the target sum instead of the mean",
            "expected_grad_inf": rep.sum_control_expected,
            "observed_grad_inf": rep.sum_control_grad_inf,
            "failed_as_expected": rep.sum_control_fails,
        });
    }
    Ok(results)
}

fn cmd_verify_core(
    config: &RunConfig,
    base_dir: &Path,
    opts: &RunOptions,
    failures: &mut Vec<String>,
    _falsifications: &mut Vec<String>,
) -> anyhow::Result<Value> {
    if opts.falsify {
        bail!("no negative control is defined for verify-core; --falsify applies to verify-star and fiber");
    }
    let shape = require_shape(config)?;
    let data = require_dataset(config, base_dir)?;
    let act = config.activation.to_core();
    let block = config.verify.unwrap_or_default();

    let rep = verify_core(&shape, &data, act, block.count, config.seed, block.scale)?;
    if !rep.pass {
        let worst_curv = rep
            .per_pair
            .iter()
            .map(|p| p.max_curvature_dev)
            .fold(0.0f64, f64::max);
        let worst_zero = rep
            .per_pair
            .iter()
            .map(|p| p.max_zero_dev)
            .fold(0.0f64, f64::max);
        let min_eig = rep
            .per_pair
            .iter()
            .map(|p| p.min_eigenvalue)
            .fold(f64::INFINITY, f64::min);
        let clusters_ok = rep.per_pair.iter().all(|p| p.cluster_size_exact);
        failures.push(format!(
            "core spectra off: curvature dev {:.3e} (tol {:.1e}), off-cluster {:.3e} (tol {:.1e}), \
             min eigenvalue {:.3e}, cluster sizes exact: {}",
            worst_curv, rep.curvature_tol, worst_zero, rep.zero_tol, min_eig, clusters_ok
        ));
    }
    Ok(json!({ "core": serde_json::to_value(&rep)? }))
}

fn cmd_spectrum(
    config: &RunConfig,
    base_dir: &Path,
    opts: &RunOptions,
    failures: &mut Vec<String>,
    _falsifications: &mut Vec<String>,
) -> anyhow::Result<Value> {
    if opts.falsify {
        bail!("no negative control is defined for spectrum; --falsify applies to verify-star and fiber");
    }
    let shape = require_shape(config)?;
    let data = require_dataset(config, base_dir)?;
    let act = config.activation.to_core();
    let block = config
        .spectrum
        .as_ref()
        .ok_or_else(|| anyhow!("spectrum needs a `spectrum` block in the config"))?;

    let (point, described) = match &block.point {
        PointSpec::Locus(kind) => {
            let spec = make_locus(&shape, &data, kind.clone())?;
            let p = sample_locus(&spec, 1, config.seed, block.scale)
                .pop()
                .expect("one sample requested");
            (p, spec.kind().describe())
        }
        PointSpec::Random => (
            ParamVector::random(&shape, config.seed, block.scale),
            "random point".to_string(),
        ),
        PointSpec::Explicit(values) => (
            ParamVector::from_vec(&shape, values.clone())?,
            "explicit point".to_string(),
        ),
    };

    let g = gradient(&point, &data, act)?;
    let grad_inf = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let spec = hessian_spectrum(&point, &data, act, config.tolerances.tau_zero)?;
    let bound = if grad_inf <= CRITICAL_GRAD_TOL {
        Some(zero_eig_bound_check(&point, &data, act)?)
    } else {
        None
    };

    // Locus points carry expectations worth checking on the spot.
    if let PointSpec::Locus(kind) = &block.point {
        match kind {
            LocusKind::Star { .. } => {
                if grad_inf > config.tolerances.tol_g {
                    failures.push(format!(
                        "star point should be critical, gradient is {grad_inf:.3e} \
                         (tolerance {:.1e})",
                        config.tolerances.tol_g
                    ));
                }
            }
            LocusKind::Core { indices } if indices.len() >= 2 && shape.depth() >= 4 => {
                let target = 2.0 * data.n() as f64;
                let cluster = spec
                    .eigenvalues
                    .iter()
                    .filter(|&&ev| (ev - target).abs() <= CORE_CURVATURE_TOL)
                    .count();
                let off = spec
                    .eigenvalues
                    .iter()
                    .filter(|&&ev| (ev - target).abs() > CORE_CURVATURE_TOL)
                    .fold(0.0f64, |m, &ev| m.max(ev.abs()));
                if cluster != shape.output_dim() {
                    failures.push(format!(
                        "core spectrum should have exactly {} eigenvalues at {target}, found {cluster}",
                        shape.output_dim()
                    ));
                }
                if off > CORE_ZERO_TOL {
                    failures.push(format!(
                        "core spectrum has off-cluster eigenvalue of magnitude {off:.3e} \
                         (tolerance {CORE_ZERO_TOL:.1e})"
                    ));
                }
                if spec.min_eigenvalue() < -CORE_ZERO_TOL {
                    failures.push(format!(
                        "core spectrum has negative eigenvalue {:.3e}",
                        spec.min_eigenvalue()
                    ));
                }
            }
            LocusKind::Core { .. } => {}
        }
    }

    Ok(json!({
        "point": described,
        "loss": loss(&point, &data, act)?,
        "grad_inf": grad_inf,
        "spectrum": serde_json::to_value(&spec)?,
        "zero_eig_bound": bound.map(|b| serde_json::to_value(&b)).transpose()?,
    }))
}

fn cmd_fiber(
    config: &RunConfig,
    base_dir: &Path,
    opts: &RunOptions,
    failures: &mut Vec<String>,
    falsifications: &mut Vec<String>,
) -> anyhow::Result<Value> {
    let shape = require_shape(config)?;
    let data = require_dataset(config, base_dir)?;
    let act = config.activation.to_core();
    let block = config.fiber.unwrap_or_default();
    if block.slices == 0 {
        bail!("fiber needs at least one slice");
    }

    let m = shape.last_hidden_width();
    let out_dim = shape.output_dim();
    let mut rows = Vec::new();
    for s in 0..block.slices {
        let p = ParamVector::random(&shape, config.seed.wrapping_add(s as u64), block.scale);
        let fq = build_fiber(&p, &data, act)?;

        let rc = rank_check(&fq)?;
        if !rc.weight_block_within_bound {
            falsifications.push(format!(
                "slice {s}: weights-only restricted Hessian has rank {}, over the \
                 rank(Phi) * m_l bound {} that holds for every slice",
                rc.weight_block_rank, rc.weight_block_bound
            ));
        }
        if !rc.full_rank_matches {
            failures.push(format!(
                "slice {s}: restricted Hessian rank {} differs from rank(PhiHat) * m_l = {}",
                rc.full_rank,
                rc.phi_aug_rank * out_dim
            ));
        }

        let min = fiber_minimize(&fq)?;
        let expected_null = (m + 1 - min.phi_aug_rank) * out_dim;
        if min.null_dim != expected_null {
            failures.push(format!(
                "slice {s}: null dimension {} != (m + 1 - rank) * m_l = {expected_null}",
                min.null_dim
            ));
        }

        // The restriction must agree with the full loss at the base point.
        let w = fq.w_from_params(&p);
        let full = loss(&p, &data, act)?;
        let embed_rel_dev = (fq.eval(&w) - full).abs() / full.abs().max(1.0);
        if embed_rel_dev > 1e-12 {
            failures.push(format!(
                "slice {s}: restricted loss deviates from the full loss by {embed_rel_dev:.3e} \
                 at the base point"
            ));
        }

        let mut row = json!({
            "slice": s,
            "rank": serde_json::to_value(&rc)?,
            "minimum": serde_json::to_value(&min)?,
            "embed_rel_dev": embed_rel_dev,
        });

        if block.descent {
            if min.phi_aug_rank == data.n() {
                match descent_line(&fq, &w) {
                    Ok(line) => {
                        if !line.pass {
                            failures.push(format!(
                                "slice {s}: descent line failed (fit residual {:.3e}, \
                                 endpoint loss {:.3e}, strictly decreasing: {})",
                                line.fit_residual, line.endpoint_loss, line.strictly_decreasing
                            ));
                        }
                        row["descent"] = serde_json::to_value(&line)?;
                    }
                    Err(Error::DegenerateLine) => {
                        row["descent"] = json!({ "skipped": "start is already the minimizer" });
                    }
                    Err(e) => return Err(e.into()),
                }
            } else {
                row["descent"] = json!({
                    "skipped": format!(
                        "feature matrix rank {} is below the sample count {}",
                        min.phi_aug_rank,
                        data.n()
                    )
                });
            }
        }

        if block.kronecker {
            let h = hessian(&p, &data, act)?;
            let dev = extract_fiber_block(&h, &shape)?.sub(&fq.hessian_matrix()).max_abs();
            if dev > 1e-10 {
                failures.push(format!(
                    "slice {s}: restricted Hessian deviates from the second-derivative \
                     block by {dev:.3e}"
                ));
            }
            row["kronecker_dev"] = json!(dev);
        }

        if block.witness {
            match level_set_witness(&min.params, &data, act, block.witness_probes, config.seed) {
                Ok(wit) => {
                    if !wit.pass {
                        failures.push(format!(
                            "slice {s}: level-set witness saw loss drift {:.3e}",
                            wit.max_loss_dev
                        ));
                    }
                    row["level_set"] = serde_json::to_value(&wit)?;
                }
                Err(Error::NotCritical { grad_inf_norm, .. }) => {
                    row["level_set"] = json!({
                        "skipped": format!(
                            "slice minimizer is not critical in the full space \
                             (gradient {grad_inf_norm:.3e}); interior coordinates keep a \
                             gradient unless the slice reaches loss zero"
                        )
                    });
                }
                Err(Error::Falsification { claim }) => {
                    falsifications.push(claim.clone());
                    row["level_set"] = json!({ "falsified": claim });
                }
                Err(e) => return Err(e.into()),
            }
        }

        if let Some(eps) = block.nonisolation_epsilon {
            match nonisolation_witness(&min.params, &data, act, eps) {
                Ok(wit) => {
                    if !wit.pass {
                        failures.push(format!(
                            "slice {s}: equal-loss neighbor at distance {:.3e} drifted \
                             by {:.3e} in loss",
                            wit.distance, wit.loss_delta_rel
                        ));
                    }
                    row["nonisolation"] = serde_json::to_value(&wit)?;
                }
                Err(Error::Hypothesis(msg)) => {
                    row["nonisolation"] = json!({ "skipped": msg });
                }
                Err(Error::NotCritical { grad_inf_norm, .. }) => {
                    row["nonisolation"] = json!({
                        "skipped": format!(
                            "slice minimizer is not critical in the full space \
                             (gradient {grad_inf_norm:.3e})"
                        )
                    });
                }
                Err(Error::Falsification { claim }) => {
                    falsifications.push(claim.clone());
                    row["nonisolation"] = json!({ "falsified": claim });
                }
                Err(e) => return Err(e.into()),
            }
        }

        rows.push(row);
    }

    let mut results = json!({ "slices": rows });

    if opts.falsify {
        // Negative control: collapse all inputs onto one point so the
        // feature matrix is rank one; the descent line must refuse to run.
        if data.n() < 2 {
            bail!("the rank-deficient control needs at least two samples");
        }
        let dup_inputs = vec![data.input(0).to_vec(); data.n()];
        let dup_targets: Vec<Vec<f64>> = (0..data.n()).map(|k| data.target(k).to_vec()).collect();
        let control_data = Dataset::new(dup_inputs, dup_targets)?;
        let p = ParamVector::random(&shape, config.seed ^ 0xFA15, block.scale);
        let fq = build_fiber(&p, &control_data, act)?;
        let w = fq.w_from_params(&p);
        results["falsify"] = match descent_line(&fq, &w) {
            Err(Error::RankDeficient { rank, need }) => json!({
                "control": "descent line on a slice whose inputs all coincide",
                "failed_as_expected": true,
                "rank": rank,
                "need": need,
            }),
            Ok(_) => {
                falsifications.push(
                    "descent line accepted a rank-deficient slice; the full-rank hypothesis \
                     did not bite"
                        .to_string(),
                );
                json!({
                    "control": "descent line on a slice whose inputs all coincide",
                    "failed_as_expected": false,
                })
            }
            Err(e) => return Err(e.into()),
        };
    }

    Ok(results)
}

fn flow_row(result: &FlowResult) -> Value {
    json!({
        "initial": result.initial,
        "outcome": result.outcome.label(),
        "t_final": result.t_final,
        "state": result.state,
        "value": result.value,
        "grad_inf": result.grad_inf,
        "steps": result.steps,
        "rejected_steps": result.rejected_steps,
    })
}

fn stream_trace(index: usize, result: &FlowResult) {
    eprintln!("# trajectory {index}: {}", result.outcome.label());
    eprintln!("step,t,f,grad_inf");
    for (step, tp) in result.trace.iter().enumerate() {
        eprintln!("{step},{},{},{}", tp.t, tp.value, tp.grad_inf);
    }
}

fn cmd_flow(
    config: &RunConfig,
    base_dir: &Path,
    opts: &RunOptions,
    failures: &mut Vec<String>,
    falsifications: &mut Vec<String>,
) -> anyhow::Result<Value> {
    if opts.falsify {
        bail!("no negative control is defined for flow; --falsify applies to verify-star and fiber");
    }
    let block = config
        .flow
        .clone()
        .ok_or_else(|| anyhow!("flow needs a `flow` block in the config"))?;
    let policy = block.step.apply(StepPolicy::default());
    let mut flow_opts = FlowOptions {
        grad_tol: config.tolerances.tol_g,
        record_trace: opts.trace,
        ..FlowOptions::default()
    };
    if let Some(r) = block.divergence_radius {
        flow_opts.divergence_radius = r;
    }
    if let Some(n) = block.max_steps {
        flow_opts.max_steps = n;
    }
    flow_opts.t_max = block.t_max;
    let basin_opts = FlowOptions {
        record_trace: false,
        ..flow_opts
    };

    if let Some(name) = &block.function {
        let f = AnalyticFunction::from_name(name).ok_or_else(|| {
            anyhow!(
                "unknown function {name:?}; catalog: {}",
                AnalyticFunction::ALL
                    .iter()
                    .map(|f| f.name())
                    .collect::<Vec<_>>()
                    .join(", ")
            )
        })?;
        let arity = f.arity();
        let mut starts = block.starts.clone();
        // Extra starts are drawn uniformly from the centered box with
        // half-width `start_scale`.
        let mut rng = stream_rng(config.seed, 101);
        for _ in 0..block.random_starts {
            starts.push(
                (0..arity)
                    .map(|_| rng.gen_range(-block.start_scale..=block.start_scale))
                    .collect(),
            );
        }
        if starts.is_empty() && block.basin.is_none() {
            bail!("flow needs at least one start point or a basin block");
        }
        for (i, start) in starts.iter().enumerate() {
            if start.len() != arity {
                bail!(
                    "start {i} has {} coordinates, {} takes {arity}",
                    start.len(),
                    f.name()
                );
            }
        }

        let mut rows = Vec::new();
        let mut outcomes = std::collections::BTreeMap::<String, usize>::new();
        for (i, start) in starts.iter().enumerate() {
            let result = integrate_flow(&f, start, &policy, &flow_opts)?;
            if opts.trace {
                stream_trace(i, &result);
            }
            *outcomes.entry(result.outcome.label().to_string()).or_insert(0) += 1;
            rows.push(flow_row(&result));
        }

        let basin = match &block.basin {
            Some(b) => Some(serde_json::to_value(basin_fraction(
                &f,
                &b.target,
                &b.lo,
                &b.hi,
                b.samples,
                config.seed,
                &policy,
                &basin_opts,
            )?)?),
            None => None,
        };

        return Ok(json!({
            "function": f.name(),
            "trajectories": rows,
            "outcomes": outcomes,
            "basin": basin,
        }));
    }

    // Network mode: flow the loss itself.
    let shape = require_shape(config)?;
    let data = require_dataset(config, base_dir)?;
    let act = config.activation.to_core();
    let sys = NetworkLoss {
        shape: shape.clone(),
        data: data.clone(),
        act,
    };
    let d = shape.total_params();
    let mut starts = block.starts.clone();
    for i in 0..block.random_starts {
        starts.push(
            ParamVector::random(&shape, config.seed.wrapping_add(1 + i as u64), block.start_scale)
                .into_vec(),
        );
    }
    if starts.is_empty() && block.basin.is_none() {
        bail!("flow needs at least one start point or a basin block");
    }
    for (i, start) in starts.iter().enumerate() {
        if start.len() != d {
            bail!(
                "start {i} has {} coordinates, the parameter space has {d}",
                start.len()
            );
        }
    }

    // Terminal classification candidates, most specific first: core pairs,
    // then stars (every core point lies on the stars through its indices).
    let l = shape.depth();
    let mut loci: Vec<LocusSpec> = Vec::new();
    if l >= 4 {
        for i in 1..l {
            for j in (i + 1)..l {
                loci.push(make_locus(&shape, &data, LocusKind::Core { indices: vec![i, j] })?);
            }
        }
    }
    for k in 1..l {
        loci.push(make_locus(&shape, &data, LocusKind::Star { k })?);
    }

    let mut rows = Vec::new();
    let mut outcomes = std::collections::BTreeMap::<String, usize>::new();
    for (i, start) in starts.iter().enumerate() {
        let result = integrate_flow(&sys, start, &policy, &flow_opts)?;
        if opts.trace {
            stream_trace(i, &result);
        }
        *outcomes.entry(result.outcome.label().to_string()).or_insert(0) += 1;
        let mut row = flow_row(&result);
        if result.outcome == FlowOutcome::Converged {
            let p = ParamVector::from_vec(&shape, result.state.clone())?;
            let term = classify_terminal(&p, &data, act, &loci)?;
            if let Some(bound) = &term.bound {
                // At any critical point the zero count is bounded below by
                // the feature-rank form; a violation contradicts linear
                // algebra, not a tolerance choice.
                if !bound.rank_bound_satisfied {
                    falsifications.push(format!(
                        "terminal of start {i}: only {} zero eigenvalues, below the \
                         feature-rank bound {} that holds at every critical point",
                        bound.spectrum.zero_count, bound.rank_bound
                    ));
                }
                let non_global = !matches!(term.tag, TerminalTag::GlobalMinimum);
                if non_global && !bound.data_bound_satisfied {
                    failures.push(format!(
                        "terminal of start {i}: only {} zero eigenvalues, below the \
                         (m + 1 - n) * m_l = {} floor for non-global critical points",
                        bound.spectrum.zero_count, bound.data_bound
                    ));
                }
            }
            // A terminal tagged with a locus must still be critical after
            // snapping onto the exact mask.
            if let TerminalTag::OnLocus { kind, .. } = &term.tag {
                if let Some(spec) = loci.iter().find(|s| s.kind() == kind) {
                    let projected = spec.project(&p);
                    let pg = gradient(&projected, &data, act)?;
                    let projected_grad_inf = pg.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    if spec.criticality_guaranteed()
                        && projected_grad_inf > config.tolerances.tol_g
                    {
                        failures.push(format!(
                            "terminal of start {i}: projected onto the exact {} mask, \
                             the gradient is {projected_grad_inf:.3e} (tolerance {:.1e})",
                            spec.kind().describe(),
                            config.tolerances.tol_g
                        ));
                    }
                    row["projected_grad_inf"] = json!(projected_grad_inf);
                }
            }
            row["terminal"] = serde_json::to_value(&term)?;
        }
        rows.push(row);
    }

    let basin = match &block.basin {
        Some(b) => Some(serde_json::to_value(basin_fraction(
            &sys,
            &b.target,
            &b.lo,
            &b.hi,
            b.samples,
            config.seed,
            &policy,
            &basin_opts,
        )?)?),
        None => None,
    };

    Ok(json!({
        "system": "network-loss",
        "trajectories": rows,
        "outcomes": outcomes,
        "basin": basin,
    }))
}

fn cmd_dims(config: &RunConfig, opts: &RunOptions) -> anyhow::Result<Value> {
    if opts.falsify {
        bail!("no negative control is defined for dims; --falsify applies to verify-star and fiber");
    }
    let block = config
        .dims
        .ok_or_else(|| anyhow!("dims needs a `dims` block in the config"))?;
    if block.depth < 2 {
        bail!("dims needs at least two affine layers");
    }
    if block.m_min == 0 || block.m_min > block.m_max {
        bail!(
            "dims needs 1 <= m_min <= m_max, got {}..{}",
            block.m_min,
            block.m_max
        );
    }

    let mut rows = Vec::new();
    for m in block.m_min..=block.m_max {
        let mut widths = vec![block.input_dim];
        widths.resize(block.depth, m);
        widths.push(block.output_dim);
        let shape = NetworkShape::new(widths)?;
        let rep = dimensions(&shape, block.n)?;
        // How much bigger the global-minimum locus is than the deepest star
        // family (closed forms; meaningful in the overparameterized regime).
        let gap = rep
            .uniform
            .as_ref()
            .map(|u| rep.dim_global_min - u.dim_star);
        let note = if m == block.n {
            Value::String(format!(
                "m = n = {m}: smallest width where a generic feature matrix reaches full \
                 column rank; below it the global-minimum dimension formula stops applying"
            ))
        } else {
            Value::Null
        };
        rows.push(json!({
            "m": m,
            "widths": rep.widths,
            "d": rep.d,
            "dim_global_min": rep.dim_global_min,
            "star_dims": rep.star_dims,
            "star_dim_max": rep.star_dim_max,
            "core_dims": rep.core_dims,
            "core_dim_max": rep.core_dim_max,
            "closed_forms": rep.uniform,
            "star_closed_form_mismatch": rep.star_closed_form_mismatch,
            "zero_eig": rep.zero_eig,
            "gap_min_minus_star": gap,
            "note": note,
        }));
    }

    Ok(json!({ "n": block.n, "rows": rows }))
}

/// Flattens the dims rows into CSV (one line per width).
pub fn dims_csv(results: &Value) -> anyhow::Result<String> {
    let rows = results
        .get("rows")
        .and_then(Value::as_array)
        .ok_or_else(|| anyhow!("--csv needs the dims sweep payload"))?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "m",
        "d",
        "dim_global_min",
        "dim_star_closed_form",
        "star_dim_max",
        "dim_core_closed_form",
        "core_dim_max",
        "zero_eig_core",
        "zero_eig_global_min",
        "zero_eig_other_bound",
        "gap_min_minus_star",
        "star_closed_form_mismatch",
        "note",
    ])?;
    let field = |row: &Value, path: &[&str]| -> String {
        let mut v = row;
        for key in path {
            v = &v[*key];
        }
        match v {
            Value::Null => String::new(),
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    };
    for row in rows {
        writer.write_record([
            field(row, &["m"]),
            field(row, &["d"]),
            field(row, &["dim_global_min"]),
            field(row, &["closed_forms", "dim_star"]),
            field(row, &["star_dim_max"]),
            field(row, &["closed_forms", "dim_core"]),
            field(row, &["core_dim_max"]),
            field(row, &["zero_eig", "core"]),
            field(row, &["zero_eig", "global_min"]),
            field(row, &["zero_eig", "other_lower_bound"]),
            field(row, &["gap_min_minus_star"]),
            field(row, &["star_closed_form_mismatch"]),
            field(row, &["note"]),
        ])?;
    }
    Ok(String::from_utf8(writer.into_inner()?)?)
}
