//! Gradient flow `y' = -grad f(y)` with adaptive Runge-Kutta integration,
//! a small catalog of analytic test functions with closed-form derivatives,
//! basin-of-attraction statistics, and classification of flow terminals
//! against the known critical families.
//!
//! The integrator accepts a step only when two conditions hold: the
//! step-doubling error estimate stays below tolerance, and the function
//! value does not increase (gradient flow is monotone, so an energy
//! increase always means the step was too long). The second rule alone
//! stops the classic failure on stiff descent like `x^3 + y^3`, where a
//! fixed step overshoots through the flat minimum onto the divergent
//! branch; the first keeps trajectories accurate enough to compare against
//! closed forms.

use crate::deriv::gradient_generic;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::loci::{LocusKind, LocusSpec};
use crate::net::{loss_generic, Activation, Dataset, NetworkShape, ParamVector};
use crate::rng::stream_rng;
use crate::spectral::{zero_eig_bound_check, ZeroEigBound, CRITICAL_GRAD_TOL};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A flow terminal with loss at or below this is a global minimum (the
/// loss is a sum of squares, bounded below by zero).
pub const GLOBAL_MIN_LOSS_TOL: f64 = 1e-12;

/// A terminal within this distance of a star/core family counts as
/// landing on it.
pub const LOCUS_RESIDUAL_TOL: f64 = 1e-6;

/// Anything that exposes a value and an exact gradient.
pub trait GradientSystem {
    fn dim(&self) -> usize;
    fn value(&self, y: &[f64]) -> Result<f64>;
    fn grad(&self, y: &[f64]) -> Result<Vec<f64>>;
}

/// Closed-form test functions. Gradients and Hessians are hand-written
/// polynomials, so flow behavior can be checked against pencil-and-paper
/// solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnalyticFunction {
    /// `x^3 + y^3`: degenerate critical point at the origin; the flow
    /// converges there exactly from the closed positive quadrant.
    CubicSum,
    /// `x^2 - y^2`: strict saddle with constant Hessian `diag(2, -2)` and
    /// closed-form trajectories `(x e^{-2t}, y e^{2t})`.
    SaddlePair,
    /// `x^2` as a function of `(x, y)`: the critical set is the whole line
    /// `{x = 0}`, every trajectory converges to it.
    FlatParabola,
    /// `x^4 + 5x^3 + 6x^2` in one variable: minima at `0` and near
    /// `-2.593`, separated by a local maximum near `-1.157`.
    QuarticWell,
    /// `5x^4 - 5x^2 + x` as a function of `(x, y)`: a tilted double well
    /// in `x` (minima near `0.650` and `-0.753`, local maximum near
    /// `0.102`), flat in `y`.
    TiltedDoubleWell,
}

impl AnalyticFunction {
    pub const ALL: [AnalyticFunction; 5] = [
        AnalyticFunction::CubicSum,
        AnalyticFunction::SaddlePair,
        AnalyticFunction::FlatParabola,
        AnalyticFunction::QuarticWell,
        AnalyticFunction::TiltedDoubleWell,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnalyticFunction::CubicSum => "x^3+y^3",
            AnalyticFunction::SaddlePair => "x^2-y^2",
            AnalyticFunction::FlatParabola => "x^2",
            AnalyticFunction::QuarticWell => "x^4+5x^3+6x^2",
            AnalyticFunction::TiltedDoubleWell => "5x^4-5x^2+x",
        }
    }

    pub fn from_name(name: &str) -> Option<AnalyticFunction> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn arity(self) -> usize {
        match self {
            AnalyticFunction::QuarticWell => 1,
            _ => 2,
        }
    }

    pub fn eval(self, y: &[f64]) -> f64 {
        match self {
            AnalyticFunction::CubicSum => y[0].powi(3) + y[1].powi(3),
            AnalyticFunction::SaddlePair => y[0] * y[0] - y[1] * y[1],
            AnalyticFunction::FlatParabola => y[0] * y[0],
            AnalyticFunction::QuarticWell => {
                let x = y[0];
                x.powi(4) + 5.0 * x.powi(3) + 6.0 * x * x
            }
            AnalyticFunction::TiltedDoubleWell => {
                let x = y[0];
                5.0 * x.powi(4) - 5.0 * x * x + x
            }
        }
    }

    pub fn gradient(self, y: &[f64]) -> Vec<f64> {
        match self {
            AnalyticFunction::CubicSum => vec![3.0 * y[0] * y[0], 3.0 * y[1] * y[1]],
            AnalyticFunction::SaddlePair => vec![2.0 * y[0], -2.0 * y[1]],
            AnalyticFunction::FlatParabola => vec![2.0 * y[0], 0.0],
            AnalyticFunction::QuarticWell => {
                let x = y[0];
                vec![4.0 * x.powi(3) + 15.0 * x * x + 12.0 * x]
            }
            AnalyticFunction::TiltedDoubleWell => {
                let x = y[0];
                vec![20.0 * x.powi(3) - 10.0 * x + 1.0, 0.0]
            }
        }
    }

    pub fn hessian(self, y: &[f64]) -> Mat {
        match self {
            AnalyticFunction::CubicSum => {
                Mat::from_rows(&[vec![6.0 * y[0], 0.0], vec![0.0, 6.0 * y[1]]]).unwrap()
            }
            AnalyticFunction::SaddlePair => {
                Mat::from_rows(&[vec![2.0, 0.0], vec![0.0, -2.0]]).unwrap()
            }
            AnalyticFunction::FlatParabola => {
                Mat::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap()
            }
            AnalyticFunction::QuarticWell => {
                let x = y[0];
                Mat::from_rows(&[vec![12.0 * x * x + 30.0 * x + 12.0]]).unwrap()
            }
            AnalyticFunction::TiltedDoubleWell => {
                Mat::from_rows(&[vec![60.0 * y[0] * y[0] - 10.0, 0.0], vec![0.0, 0.0]]).unwrap()
            }
        }
    }
}

impl GradientSystem for AnalyticFunction {
    fn dim(&self) -> usize {
        self.arity()
    }

    fn value(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.arity() {
            return Err(Error::Argument(format!(
                "{} takes {} variables, got {}",
                self.name(),
                self.arity(),
                y.len()
            )));
        }
        Ok(self.eval(y))
    }

    fn grad(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.arity() {
            return Err(Error::Argument(format!(
                "{} takes {} variables, got {}",
                self.name(),
                self.arity(),
                y.len()
            )));
        }
        Ok(self.gradient(y))
    }
}

/// The network loss as a flow system over flat parameter vectors.
#[derive(Debug, Clone)]
pub struct NetworkLoss {
    pub shape: NetworkShape,
    pub data: Dataset,
    pub act: Activation,
}

impl GradientSystem for NetworkLoss {
    fn dim(&self) -> usize {
        self.shape.total_params()
    }

    fn value(&self, y: &[f64]) -> Result<f64> {
        loss_generic(&self.shape, y, &self.data, self.act)
    }

    fn grad(&self, y: &[f64]) -> Result<Vec<f64>> {
        gradient_generic(&self.shape, y, &self.data, self.act)
    }
}

/// Step-size control for the integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    /// Initial step.
    pub h0: f64,
    /// Below this the step controller gives up (`StepLimit`).
    pub h_min: f64,
    /// Growth cap.
    pub h_max: f64,
    /// Local-error tolerance for step doubling, relative to
    /// `max(1, |state|_inf)`.
    pub err_tol: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy { h0: 1e-2, h_min: 1e-8, h_max: 10.0, err_tol: 1e-9 }
    }
}

impl StepPolicy {
    fn validate(&self) -> Result<()> {
        if !(self.h_min > 0.0 && self.h0 >= self.h_min && self.h_max >= self.h0) {
            return Err(Error::Argument(format!(
                "need 0 < h_min <= h0 <= h_max, got {self:?}"
            )));
        }
        if !(self.err_tol > 0.0) {
            return Err(Error::Argument("error tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Stopping rules for the integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    /// Converged when the gradient infinity norm falls to this.
    pub grad_tol: f64,
    /// Diverged when the state infinity norm exceeds this. The default of
    /// `1e4` classifies polynomial runaway unambiguously while keeping the
    /// accuracy-limited step size far above `h_min` near the exit (for
    /// cubic growth the required step shrinks like `1/|state|`).
    pub divergence_radius: f64,
    pub max_steps: usize,
    /// Stop once this flow time is reached (for trajectory comparisons).
    pub t_max: Option<f64>,
    /// Record `(t, state, value, grad norm)` at every accepted step.
    pub record_trace: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            grad_tol: 1e-8,
            divergence_radius: 1e4,
            max_steps: 200_000,
            t_max: None,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowOutcome {
    /// Gradient fell below tolerance.
    Converged,
    /// State left the divergence radius or stopped being finite.
    Diverged,
    /// Step budget exhausted, or no acceptable step above `h_min`.
    StepLimit,
    /// Requested flow time reached.
    TimeLimit,
}

impl FlowOutcome {
    pub fn label(self) -> &'static str {
        match self {
            FlowOutcome::Converged => "converged",
            FlowOutcome::Diverged => "diverged",
            FlowOutcome::StepLimit => "step-limit",
            FlowOutcome::TimeLimit => "time-limit",
        }
    }
}

/// One recorded trajectory point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub state: Vec<f64>,
    pub value: f64,
    pub grad_inf: f64,
}

/// Where the flow ended and how it got there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub outcome: FlowOutcome,
    /// Start point of the trajectory.
    pub initial: Vec<f64>,
    pub t_final: f64,
    pub state: Vec<f64>,
    pub value: f64,
    pub grad_inf: f64,
    pub steps: usize,
    pub rejected_steps: usize,
    /// Empty unless tracing was requested.
    pub trace: Vec<TracePoint>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// One classical fourth-order Runge-Kutta step of `y' = -grad f`.
fn rk4_step<S: GradientSystem + ?Sized>(sys: &S, y: &[f64], h: f64) -> Result<Vec<f64>> {
    let stage = |base: &[f64], scale: f64, k: &[f64]| -> Vec<f64> {
        base.iter().zip(k).map(|(b, ki)| b - scale * ki).collect()
    };
    let k1 = sys.grad(y)?;
    let k2 = sys.grad(&stage(y, h / 2.0, &k1))?;
    let k3 = sys.grad(&stage(y, h / 2.0, &k2))?;
    let k4 = sys.grad(&stage(y, h, &k3))?;
    Ok(y.iter()
        .enumerate()
        .map(|(i, &yi)| yi - h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// A candidate step: the two-half-steps state (kept when accepted), its
/// error estimate against the single full step, and its value.
fn attempt_step<S: GradientSystem + ?Sized>(
    sys: &S,
    y: &[f64],
    h: f64,
) -> Result<(Vec<f64>, f64, f64)> {
    let full = rk4_step(sys, y, h)?;
    let half = rk4_step(sys, &rk4_step(sys, y, h / 2.0)?, h / 2.0)?;
    let err = full
        .iter()
        .zip(&half)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max)
        / 15.0;
    let value = sys.value(&half)?;
    Ok((half, err, value))
}

/// Integrates the gradient flow from `y0` until one of the stopping rules
/// fires. Steps must both pass the step-doubling error test and not
/// increase the function value; a failed step is retried at half length
/// down to `h_min`.
pub fn integrate_flow<S: GradientSystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    policy: &StepPolicy,
    opts: &FlowOptions,
) -> Result<FlowResult> {
    policy.validate()?;
    if y0.len() != sys.dim() {
        return Err(Error::Argument(format!(
            "state has {} coordinates, system needs {}",
            y0.len(),
            sys.dim()
        )));
    }
    let mut y = y0.to_vec();
    let mut t = 0.0f64;
    let mut h = policy.h0;
    let mut steps = 0usize;
    let mut rejected_steps = 0usize;
    let mut trace = Vec::new();
    let mut value = sys.value(&y)?;

    let finish = |outcome: FlowOutcome,
                  t: f64,
                  y: Vec<f64>,
                  value: f64,
                  grad_inf: f64,
                  steps: usize,
                  rejected_steps: usize,
                  trace: Vec<TracePoint>| FlowResult {
        outcome,
        initial: y0.to_vec(),
        t_final: t,
        state: y,
        value,
        grad_inf,
        steps,
        rejected_steps,
        trace,
    };

    loop {
        let grad_inf = if all_finite(&y) { inf_norm(&sys.grad(&y)?) } else { f64::INFINITY };
        if opts.record_trace {
            trace.push(TracePoint { t, state: y.clone(), value, grad_inf });
        }
        if !all_finite(&y) || inf_norm(&y) > opts.divergence_radius {
            return Ok(finish(FlowOutcome::Diverged, t, y, value, grad_inf, steps, rejected_steps, trace));
        }
        if grad_inf <= opts.grad_tol {
            return Ok(finish(FlowOutcome::Converged, t, y, value, grad_inf, steps, rejected_steps, trace));
        }
        if let Some(tm) = opts.t_max {
            if t >= tm - 1e-12 * tm.abs().max(1.0) {
                return Ok(finish(FlowOutcome::TimeLimit, t, y, value, grad_inf, steps, rejected_steps, trace));
            }
        }
        if steps >= opts.max_steps {
            return Ok(finish(FlowOutcome::StepLimit, t, y, value, grad_inf, steps, rejected_steps, trace));
        }

        let mut h_eff = h.min(policy.h_max);
        if let Some(tm) = opts.t_max {
            h_eff = h_eff.min(tm - t);
        }
        loop {
            let attempt = attempt_step(sys, &y, h_eff);
            let accepted = match attempt {
                Ok((y_new, err, v_new)) => {
                    let tol = policy.err_tol * inf_norm(&y_new).max(1.0);
                    // Gradient flow is monotone, but near a minimum with
                    // nonzero value the true decrement drops below the
                    // rounding noise of evaluating f itself; demand descent
                    // only beyond that noise or the controller jams.
                    let slack = 128.0 * f64::EPSILON * value.abs();
                    if all_finite(&y_new) && v_new.is_finite() && err <= tol && v_new <= value + slack
                    {
                        Some((y_new, err, v_new))
                    } else {
                        None
                    }
                }
                // A state so extreme the system cannot evaluate it is just
                // an overlong step: shorten and retry.
                Err(Error::NonFinite { .. }) => None,
                Err(e) => return Err(e),
            };
            match accepted {
                Some((y_new, err, v_new)) => {
                    y = y_new;
                    t += h_eff;
                    value = v_new;
                    steps += 1;
                    let tol = policy.err_tol * inf_norm(&y).max(1.0);
                    h = if err <= tol / 64.0 { (2.0 * h_eff).min(policy.h_max) } else { h_eff };
                    break;
                }
                None => {
                    rejected_steps += 1;
                    h_eff /= 2.0;
                    if h_eff < policy.h_min {
                        // The current point was already recorded at the top
                        // of the outer loop.
                        let grad_inf = inf_norm(&sys.grad(&y)?);
                        return Ok(finish(
                            FlowOutcome::StepLimit,
                            t,
                            y,
                            value,
                            grad_inf,
                            steps,
                            rejected_steps,
                            trace,
                        ));
                    }
                }
            }
        }
    }
}

/// Membership test for where a converged trajectory is considered to have
/// arrived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "kebab-case")]
pub enum BasinTarget {
    /// Within `radius` (infinity norm) of a specific point.
    Point { point: Vec<f64>, radius: f64 },
    /// Within `tol` of the hyperplane `{state[coordinate] = 0}` — the
    /// whole critical set of functions flat in the other coordinates.
    CoordinateZero { coordinate: usize, tol: f64 },
}

impl BasinTarget {
    pub fn contains(&self, state: &[f64]) -> bool {
        match self {
            BasinTarget::Point { point, radius } => {
                state.len() == point.len()
                    && state
                        .iter()
                        .zip(point)
                        .map(|(s, p)| (s - p).abs())
                        .fold(0.0f64, f64::max)
                        <= *radius
            }
            BasinTarget::CoordinateZero { coordinate, tol } => {
                state.get(*coordinate).is_some_and(|x| x.abs() <= *tol)
            }
        }
    }
}

/// Estimated measure of a basin of attraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinStats {
    pub samples: usize,
    /// Trajectories that converged inside the target.
    pub hits: usize,
    pub fraction: f64,
    /// Binomial standard error `sqrt(p (1-p) / samples)`.
    pub stderr: f64,
    /// Outcome label -> count, over all samples.
    pub outcomes: BTreeMap<String, usize>,
}

/// Samples start points uniformly from the box `[lo, hi]` (one deterministic
/// stream per sample), flows each, and counts arrivals in the target.
pub fn basin_fraction<S: GradientSystem + Sync>(
    sys: &S,
    target: &BasinTarget,
    lo: &[f64],
    hi: &[f64],
    samples: usize,
    seed: u64,
    policy: &StepPolicy,
    opts: &FlowOptions,
) -> Result<BasinStats> {
    if samples < 100 {
        return Err(Error::Argument(format!(
            "basin estimates need at least 100 samples for a usable standard error, got {samples}"
        )));
    }
    if lo.len() != sys.dim() || hi.len() != sys.dim() {
        return Err(Error::Argument("box bounds must match the system dimension".into()));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(Error::Argument("box must have positive extent in every coordinate".into()));
    }
    let runs: Vec<(FlowOutcome, bool)> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<(FlowOutcome, bool)> {
            let mut rng = stream_rng(seed, i as u64 + 1);
            let y0: Vec<f64> =
                lo.iter().zip(hi).map(|(&a, &b)| rand::Rng::gen_range(&mut rng, a..b)).collect();
            let res = integrate_flow(sys, &y0, policy, opts)?;
            let hit = res.outcome == FlowOutcome::Converged && target.contains(&res.state);
            Ok((res.outcome, hit))
        })
        .collect::<Result<Vec<_>>>()?;
    let hits = runs.iter().filter(|(_, hit)| *hit).count();
    let mut outcomes = BTreeMap::new();
    for (outcome, _) in &runs {
        *outcomes.entry(outcome.label().to_string()).or_insert(0usize) += 1;
    }
    let fraction = hits as f64 / samples as f64;
    let stderr = (fraction * (1.0 - fraction) / samples as f64).sqrt();
    Ok(BasinStats { samples, hits, fraction, stderr, outcomes })
}

/// What a network-flow terminal turned out to be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "kebab-case")]
pub enum TerminalTag {
    /// Loss at zero to tolerance.
    GlobalMinimum,
    /// Within [`LOCUS_RESIDUAL_TOL`] of a star/core family.
    OnLocus { kind: LocusKind, residual: f64 },
    /// A critical point outside the named families (or not critical at
    /// all — see the gradient norm).
    Other,
}

/// Classification of one terminal point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalReport {
    pub tag: TerminalTag,
    pub loss: f64,
    pub grad_inf: f64,
    /// Zero-eigenvalue bound check, present when the point is critical to
    /// the usual tolerance.
    pub bound: Option<ZeroEigBound>,
}

/// Classifies a terminal: global minimum first, then nearest known locus,
/// otherwise `Other`. Critical terminals also get the zero-eigenvalue
/// bound check. A point can lie on several nested families at once (every
/// core point also sits on the stars through its indices); distance ties
/// go to the earliest candidate, so order `loci` from most specific to
/// least.
pub fn classify_terminal(
    p: &ParamVector,
    data: &Dataset,
    act: Activation,
    loci: &[LocusSpec],
) -> Result<TerminalReport> {
    let loss = crate::net::loss(p, data, act)?;
    let g = crate::deriv::gradient(p, data, act)?;
    let grad_inf = inf_norm(&g);
    let tag = if loss <= GLOBAL_MIN_LOSS_TOL {
        TerminalTag::GlobalMinimum
    } else {
        let nearest = loci
            .iter()
            .map(|spec| (spec, spec.residual(p)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((spec, residual)) if residual <= LOCUS_RESIDUAL_TOL => {
                TerminalTag::OnLocus { kind: spec.kind().clone(), residual }
            }
            _ => TerminalTag::Other,
        }
    };
    let bound =
        if grad_inf <= CRITICAL_GRAD_TOL { Some(zero_eig_bound_check(p, data, act)?) } else { None };
    Ok(TerminalReport { tag, loss, grad_inf, bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deriv::fd_gradient_fn;
    use crate::loci::{make_locus, sample_locus};

    fn reference_shape() -> NetworkShape {
        NetworkShape::new(vec![2, 3, 3, 3, 1]).unwrap()
    }

    fn reference_dataset() -> Dataset {
        Dataset::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![1.0], vec![3.0]]).unwrap()
    }

    #[test]
    fn catalog_names_round_trip_and_derivatives_match_finite_differences() {
        assert_eq!(AnalyticFunction::ALL.len(), 5);
        for f in AnalyticFunction::ALL {
            assert_eq!(AnalyticFunction::from_name(f.name()), Some(f));
            let probe: Vec<f64> = (0..f.arity()).map(|i| 0.3 + 0.41 * i as f64).collect();
            let g = f.gradient(&probe);
            let fd = fd_gradient_fn(&|y: &[f64]| Ok(f.eval(y)), &probe, 1e-6).unwrap();
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{}", f.name());
            }
            // Hessian columns against gradient differences.
            let h = f.hessian(&probe);
            for c in 0..f.arity() {
                let mut hi = probe.clone();
                let mut lo = probe.clone();
                hi[c] += 1e-5;
                lo[c] -= 1e-5;
                let dg: Vec<f64> = f
                    .gradient(&hi)
                    .iter()
                    .zip(f.gradient(&lo))
                    .map(|(a, b)| (a - b) / 2e-5)
                    .collect();
                for r in 0..f.arity() {
                    assert!((h[(r, c)] - dg[r]).abs() <= 1e-5, "{} entry ({r},{c})", f.name());
                }
            }
        }
        assert_eq!(AnalyticFunction::from_name("x^5"), None);
    }

    #[test]
    fn saddle_flow_tracks_the_closed_form_solution() {
        let f = AnalyticFunction::SaddlePair;
        let opts = FlowOptions {
            grad_tol: 1e-14,
            t_max: Some(5.0),
            record_trace: true,
            ..FlowOptions::default()
        };
        let res = integrate_flow(&f, &[1.0, 0.0], &StepPolicy::default(), &opts).unwrap();
        assert_eq!(res.outcome, FlowOutcome::TimeLimit);
        assert!((res.t_final - 5.0).abs() <= 1e-9);
        assert!(res.trace.len() > 10);
        for pt in &res.trace {
            let exact = (-2.0 * pt.t).exp();
            assert!(
                (pt.state[0] - exact).abs() <= 1e-6,
                "t = {}: {} vs {}",
                pt.t,
                pt.state[0],
                exact
            );
            // The second coordinate starts at exactly zero and must stay
            // there: its flow is linear with no coupling.
            assert_eq!(pt.state[1], 0.0);
        }
    }

    #[test]
    fn saddle_flow_diverges_off_the_stable_line() {
        let f = AnalyticFunction::SaddlePair;
        let res =
            integrate_flow(&f, &[0.5, 1e-3], &StepPolicy::default(), &FlowOptions::default())
                .unwrap();
        assert_eq!(res.outcome, FlowOutcome::Diverged);
        assert!(res.state[1].abs() > 1e4);
    }

    #[test]
    fn stiff_cubic_descent_does_not_overshoot_the_degenerate_minimum() {
        let f = AnalyticFunction::CubicSum;
        let res =
            integrate_flow(&f, &[0.8, 0.3], &StepPolicy::default(), &FlowOptions::default())
                .unwrap();
        assert_eq!(res.outcome, FlowOutcome::Converged, "ended at {:?}", res.state);
        assert!(inf_norm(&res.state) <= 1e-3, "state {:?}", res.state);
        assert!(res.state.iter().all(|&x| x >= 0.0), "overshot into the divergent branch");
    }

    #[test]
    fn oversized_initial_steps_are_rejected_then_flow_succeeds() {
        let f = AnalyticFunction::QuarticWell;
        let policy = StepPolicy { h0: 5.0, h_max: 10.0, ..StepPolicy::default() };
        let res = integrate_flow(&f, &[1.0], &policy, &FlowOptions::default()).unwrap();
        assert_eq!(res.outcome, FlowOutcome::Converged);
        assert!(res.rejected_steps > 0);
        assert!(res.state[0].abs() <= 1e-4);
    }

    #[test]
    fn double_well_basins_are_separated_by_the_local_maximum() {
        let f = AnalyticFunction::TiltedDoubleWell;
        // Roots of 20x^3 - 10x + 1: local max near 0.10214, minima near
        // 0.65049 and -0.75262.
        let right =
            integrate_flow(&f, &[1.0, 0.25], &StepPolicy::default(), &FlowOptions::default())
                .unwrap();
        assert_eq!(right.outcome, FlowOutcome::Converged);
        assert!((right.state[0] - 0.65049).abs() <= 1e-3, "got {}", right.state[0]);
        assert_eq!(right.state[1], 0.25, "flat coordinate never moves");

        let left =
            integrate_flow(&f, &[0.0, -0.5], &StepPolicy::default(), &FlowOptions::default())
                .unwrap();
        assert_eq!(left.outcome, FlowOutcome::Converged);
        assert!((left.state[0] + 0.75262).abs() <= 1e-3, "got {}", left.state[0]);
    }

    #[test]
    fn cubic_basin_is_the_positive_quadrant() {
        let f = AnalyticFunction::CubicSum;
        let target = BasinTarget::Point { point: vec![0.0, 0.0], radius: 1e-4 };
        let stats = basin_fraction(
            &f,
            &target,
            &[-1.0, -1.0],
            &[1.0, 1.0],
            1000,
            101,
            &StepPolicy::default(),
            &FlowOptions::default(),
        )
        .unwrap();
        // True measure is exactly 1/4; allow a bit over 3 standard errors.
        let dev = (stats.fraction - 0.25).abs();
        assert!(dev <= 0.045, "fraction {} (dev {dev})", stats.fraction);
        assert_eq!(stats.hits + stats.outcomes["diverged"], stats.samples);
    }

    #[test]
    fn flat_parabola_basin_is_everything_with_the_critical_line_as_target() {
        let f = AnalyticFunction::FlatParabola;
        let target = BasinTarget::CoordinateZero { coordinate: 0, tol: 1e-4 };
        let stats = basin_fraction(
            &f,
            &target,
            &[-1.0, -1.0],
            &[1.0, 1.0],
            400,
            7,
            &StepPolicy::default(),
            &FlowOptions::default(),
        )
        .unwrap();
        assert_eq!(stats.fraction, 1.0);
        assert_eq!(stats.outcomes["converged"], 400);
    }

    #[test]
    fn saddle_basin_has_measure_zero() {
        let f = AnalyticFunction::SaddlePair;
        let target = BasinTarget::Point { point: vec![0.0, 0.0], radius: 1e-4 };
        let stats = basin_fraction(
            &f,
            &target,
            &[-1.0, -1.0],
            &[1.0, 1.0],
            400,
            13,
            &StepPolicy::default(),
            &FlowOptions::default(),
        )
        .unwrap();
        assert!(stats.fraction <= 0.01, "fraction {}", stats.fraction);
    }

    #[test]
    fn basin_sampling_is_deterministic() {
        let f = AnalyticFunction::FlatParabola;
        let target = BasinTarget::CoordinateZero { coordinate: 0, tol: 1e-4 };
        let run = || {
            basin_fraction(
                &f,
                &target,
                &[-1.0, -1.0],
                &[1.0, 1.0],
                100,
                3,
                &StepPolicy::default(),
                &FlowOptions::default(),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn network_flow_descends_monotonically_and_terminals_classify() {
        let shape = reference_shape();
        let data = reference_dataset();
        let sys = NetworkLoss { shape: shape.clone(), data: data.clone(), act: Activation::Tanh };
        let p0 = ParamVector::random(&shape, 2, 0.3);
        let opts = FlowOptions {
            grad_tol: 1e-7,
            max_steps: 50_000,
            record_trace: true,
            ..FlowOptions::default()
        };
        let res = integrate_flow(&sys, p0.as_slice(), &StepPolicy::default(), &opts).unwrap();
        assert_eq!(res.outcome, FlowOutcome::Converged);
        for w in res.trace.windows(2) {
            // Monotone descent, up to the rounding noise the controller
            // itself tolerates.
            assert!(
                w[1].value <= w[0].value + 128.0 * f64::EPSILON * w[0].value.abs(),
                "energy rose: {} -> {}",
                w[0].value,
                w[1].value
            );
        }

        let loci = vec![
            make_locus(&shape, &data, LocusKind::Star { k: 1 }).unwrap(),
            make_locus(&shape, &data, LocusKind::Core { indices: vec![1, 2] }).unwrap(),
        ];
        let terminal = ParamVector::from_vec(&shape, res.state.clone()).unwrap();
        let report = classify_terminal(&terminal, &data, Activation::Tanh, &loci).unwrap();
        assert!(report.grad_inf <= 1e-7);
        assert!(report.bound.is_some());
    }

    #[test]
    fn exact_locus_points_converge_immediately_and_classify_by_residual() {
        let shape = reference_shape();
        let data = reference_dataset();
        let sys = NetworkLoss { shape: shape.clone(), data: data.clone(), act: Activation::Tanh };
        let core = make_locus(&shape, &data, LocusKind::Core { indices: vec![2, 3] }).unwrap();
        let p = sample_locus(&core, 1, 5, 1.0).remove(0);
        let res = integrate_flow(&sys, p.as_slice(), &StepPolicy::default(), &FlowOptions::default())
            .unwrap();
        assert_eq!(res.outcome, FlowOutcome::Converged);
        assert_eq!(res.steps, 0, "the start is already critical");
        assert_eq!(res.state, p.as_slice());

        // The core point also has zero residual to the star at k = 2; the
        // more specific family goes first so the tie resolves to it.
        let loci = vec![
            core.clone(),
            make_locus(&shape, &data, LocusKind::Star { k: 2 }).unwrap(),
        ];
        let report = classify_terminal(&p, &data, Activation::Tanh, &loci).unwrap();
        match &report.tag {
            TerminalTag::OnLocus { kind, residual } => {
                assert_eq!(kind, &LocusKind::Core { indices: vec![2, 3] });
                assert_eq!(*residual, 0.0);
            }
            other => panic!("expected a core terminal, got {other:?}"),
        }
        assert!((report.loss - 2.0).abs() <= 1e-12);
        let bound = report.bound.expect("critical point gets the bound check");
        assert!(bound.rank_bound_satisfied);
    }

    #[test]
    fn global_minimum_terminals_are_tagged_first() {
        let shape = reference_shape();
        let data = reference_dataset();
        let p = ParamVector::random(&shape, 35, 0.8);
        let fq = crate::fiber::build_fiber(&p, &data, Activation::Tanh).unwrap();
        let min = crate::fiber::fiber_minimize(&fq).unwrap();
        let report = classify_terminal(&min.params, &data, Activation::Tanh, &[]).unwrap();
        assert_eq!(report.tag, TerminalTag::GlobalMinimum);
        assert!(report.loss <= GLOBAL_MIN_LOSS_TOL);
        let bound = report.bound.expect("global minimum is critical");
        // d - b n zero eigenvalues at a regular global minimum.
        assert_eq!(bound.spectrum.zero_count, 35);
        assert!(bound.rank_bound_satisfied && bound.data_bound_satisfied);
    }

    #[test]
    fn non_critical_points_classify_as_other_without_bound() {
        let shape = reference_shape();
        let data = reference_dataset();
        let p = ParamVector::random(&shape, 77, 0.5);
        let report = classify_terminal(&p, &data, Activation::Tanh, &[]).unwrap();
        assert_eq!(report.tag, TerminalTag::Other);
        assert!(report.grad_inf > CRITICAL_GRAD_TOL);
        assert!(report.bound.is_none());
    }

    #[test]
    fn step_policy_and_box_validation() {
        let f = AnalyticFunction::FlatParabola;
        let bad = StepPolicy { h0: 1e-9, h_min: 1e-8, ..StepPolicy::default() };
        assert!(integrate_flow(&f, &[1.0, 0.0], &bad, &FlowOptions::default()).is_err());
        assert!(integrate_flow(&f, &[1.0], &StepPolicy::default(), &FlowOptions::default())
            .is_err());
        let target = BasinTarget::Point { point: vec![0.0, 0.0], radius: 1e-4 };
        // Degenerate box extent.
        assert!(basin_fraction(
            &f,
            &target,
            &[1.0, -1.0],
            &[1.0, 1.0],
            100,
            1,
            &StepPolicy::default(),
            &FlowOptions::default(),
        )
        .is_err());
        // Too few samples for a meaningful standard error.
        assert!(basin_fraction(
            &f,
            &target,
            &[-1.0, -1.0],
            &[1.0, 1.0],
            99,
            1,
            &StepPolicy::default(),
            &FlowOptions::default(),
        )
        .is_err());
    }
}
