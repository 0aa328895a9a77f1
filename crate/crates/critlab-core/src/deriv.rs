//! Exact derivatives of the loss, plus independent finite-difference
//! oracles.
//!
//! The gradient is reverse-mode accumulation through the network; the
//! Hessian is assembled column-by-column by re-running the same reverse
//! pass on first-order dual numbers (forward-over-reverse). Both are exact
//! up to floating-point rounding — no truncation error, no fallback to
//! differencing anywhere.
//!
//! [`fd_gradient`] and [`fd_hessian`] are deliberately kept on a separate
//! code path: they evaluate nothing but the loss itself, so they can serve
//! as an independent check of the exact routines rather than a restatement
//! of them.
//!
//! Gradient entries are ordered exactly like [`ParamVector`] storage
//! (layer-major, `M_i` row-major then `b_i`); the Hessian is a dense
//! `d x d` matrix in the same coordinate order.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::net::{Activation, Dataset, NetworkShape, ParamVector};
use crate::scalar::{Dual, Real};
use rayon::prelude::*;

/// Largest parameter count for which a dense Hessian is assembled.
pub const HESSIAN_CAP: usize = 2000;

/// Maximum tolerated asymmetry `max|H - H^T|` relative to the matrix scale
/// before symmetrization; exceeding it indicates a defect in the
/// accumulation itself, so it is reported as an error rather than patched.
pub const HESSIAN_SYMMETRY_TOL: f64 = 1e-10;

/// Reverse-mode gradient of the loss, generic over the scalar type.
///
/// At `S = f64` this is the exact gradient; at `S = Dual` with one
/// coordinate seeded it also carries the directional derivative of every
/// gradient entry, i.e. one Hessian column.
pub fn gradient_generic<S: Real>(
    shape: &NetworkShape,
    params: &[S],
    data: &Dataset,
    act: Activation,
) -> Result<Vec<S>> {
    data.check_shape(shape)?;
    let l = shape.depth();
    let zero = S::from_f64(0.0);
    let two = S::from_f64(2.0);
    let mut grad = vec![zero; shape.total_params()];

    for k in 0..data.n() {
        let x: Vec<S> = data.input(k).iter().map(|&v| S::from_f64(v)).collect();

        // Forward pass, keeping pre-activations and activations per layer.
        let mut acts: Vec<Vec<S>> = Vec::with_capacity(l + 1);
        let mut preacts: Vec<Vec<S>> = Vec::with_capacity(l);
        acts.push(x);
        for i in 1..=l {
            let rows = shape.width(i);
            let cols = shape.width(i - 1);
            let w0 = shape.block_start(i);
            let b0 = w0 + rows * cols;
            let prev = &acts[i - 1];
            let mut z = Vec::with_capacity(rows);
            for r in 0..rows {
                let mut acc = params[b0 + r];
                let row = &params[w0 + r * cols..w0 + (r + 1) * cols];
                for (w, a) in row.iter().zip(prev) {
                    acc = acc + *w * *a;
                }
                z.push(acc);
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: i, context: "pre-activation".into() });
            }
            let a: Vec<S> =
                if i < l { z.iter().map(|&v| act.apply(v)).collect() } else { z.clone() };
            preacts.push(z);
            acts.push(a);
        }

        // Residual seed: dL/df = 2 (f - y).
        let mut delta: Vec<S> = acts[l]
            .iter()
            .zip(data.target(k))
            .map(|(f, &y)| two * (*f - S::from_f64(y)))
            .collect();

        // Reverse pass.
        for i in (1..=l).rev() {
            let rows = shape.width(i);
            let cols = shape.width(i - 1);
            let w0 = shape.block_start(i);
            let b0 = w0 + rows * cols;
            let prev = &acts[i - 1];
            for r in 0..rows {
                let dr = delta[r];
                for c in 0..cols {
                    grad[w0 + r * cols + c] = grad[w0 + r * cols + c] + dr * prev[c];
                }
                grad[b0 + r] = grad[b0 + r] + dr;
            }
            if i > 1 {
                let mut prev_delta = vec![zero; cols];
                for c in 0..cols {
                    let mut acc = zero;
                    for r in 0..rows {
                        acc = acc + params[w0 + r * cols + c] * delta[r];
                    }
                    prev_delta[c] = acc * act.apply_prime(preacts[i - 2][c]);
                }
                delta = prev_delta;
            }
        }
    }
    Ok(grad)
}

/// Exact gradient of `L` at `p`, ordered like the parameter vector.
pub fn gradient(p: &ParamVector, data: &Dataset, act: Activation) -> Result<Vec<f64>> {
    gradient_generic(p.shape(), p.as_slice(), data, act)
}

/// Exact dense Hessian of `L` at `p` by forward-over-reverse: column `j`
/// is the derivative of the gradient along coordinate direction `j`,
/// computed with dual numbers. The result is checked for symmetry (defect
/// must stay within [`HESSIAN_SYMMETRY_TOL`] of the matrix scale) and then
/// symmetrized.
pub fn hessian(p: &ParamVector, data: &Dataset, act: Activation) -> Result<Mat> {
    let d = p.shape().total_params();
    if d > HESSIAN_CAP {
        return Err(Error::HessianCap { d, cap: HESSIAN_CAP });
    }
    data.check_shape(p.shape())?;

    let columns: Vec<Result<Vec<f64>>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let params: Vec<Dual> = p
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, &v)| if i == j { Dual::seeded(v) } else { Dual::constant(v) })
                .collect();
            let g = gradient_generic(p.shape(), &params, data, act)?;
            Ok(g.into_iter().map(|x| x.du).collect())
        })
        .collect();

    let mut h = Mat::zeros(d, d);
    for (j, col) in columns.into_iter().enumerate() {
        let col = col?;
        for i in 0..d {
            h[(i, j)] = col[i];
        }
    }

    let defect = h.symmetry_defect();
    let scale = h.max_abs().max(1.0);
    if defect > HESSIAN_SYMMETRY_TOL * scale {
        return Err(Error::Argument(format!(
            "hessian asymmetry {defect:.3e} exceeds {HESSIAN_SYMMETRY_TOL:.1e} of scale {scale:.3e}"
        )));
    }
    h.symmetrize();
    Ok(h)
}

/// Default base step for first-derivative central differences:
/// `eps^(1/3)`, scaled per coordinate by `max(1, |x_i|)`.
pub fn fd_gradient_default_step() -> f64 {
    f64::EPSILON.cbrt()
}

/// Default base step for second-derivative central differences:
/// `eps^(1/4)`, scaled per coordinate by `max(1, |x_i|)`.
pub fn fd_hessian_default_step() -> f64 {
    f64::EPSILON.powf(0.25)
}

/// Central-difference gradient of an arbitrary scalar function.
pub fn fd_gradient_fn(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    base_step: f64,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    let mut xs = x.to_vec();
    for i in 0..x.len() {
        let h = base_step * x[i].abs().max(1.0);
        xs[i] = x[i] + h;
        let fp = f(&xs)?;
        xs[i] = x[i] - h;
        let fm = f(&xs)?;
        xs[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Central-difference Hessian of an arbitrary scalar function: the
/// four-point cross formula off the diagonal, the three-point second
/// difference on it. Truncation error is O(h^2).
pub fn fd_hessian_fn(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    base_step: f64,
) -> Result<Mat> {
    let d = x.len();
    let steps: Vec<f64> = x.iter().map(|&v| base_step * v.abs().max(1.0)).collect();
    let f0 = f(x)?;
    let mut h = Mat::zeros(d, d);
    let mut xs = x.to_vec();
    for i in 0..d {
        let hi = steps[i];
        xs[i] = x[i] + hi;
        let fp = f(&xs)?;
        xs[i] = x[i] - hi;
        let fm = f(&xs)?;
        xs[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in (i + 1)..d {
            let hj = steps[j];
            xs[i] = x[i] + hi;
            xs[j] = x[j] + hj;
            let fpp = f(&xs)?;
            xs[j] = x[j] - hj;
            let fpm = f(&xs)?;
            xs[i] = x[i] - hi;
            xs[j] = x[j] + hj;
            let fmp = f(&xs)?;
            xs[j] = x[j] - hj;
            let fmm = f(&xs)?;
            xs[i] = x[i];
            xs[j] = x[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Finite-difference gradient of the loss. Evaluates only [`crate::net::loss`];
/// shares no code with [`gradient`].
pub fn fd_gradient(
    p: &ParamVector,
    data: &Dataset,
    act: Activation,
    base_step: Option<f64>,
) -> Result<Vec<f64>> {
    let shape = p.shape().clone();
    let data = data.clone();
    let f = move |theta: &[f64]| -> Result<f64> {
        crate::net::loss_generic(&shape, theta, &data, act)
    };
    fd_gradient_fn(&f, p.as_slice(), base_step.unwrap_or_else(fd_gradient_default_step))
}

/// Finite-difference Hessian of the loss; see [`fd_gradient`] for the
/// independence guarantee.
pub fn fd_hessian(
    p: &ParamVector,
    data: &Dataset,
    act: Activation,
    base_step: Option<f64>,
) -> Result<Mat> {
    let shape = p.shape().clone();
    let data = data.clone();
    let f = move |theta: &[f64]| -> Result<f64> {
        crate::net::loss_generic(&shape, theta, &data, act)
    };
    fd_hessian_fn(&f, p.as_slice(), base_step.unwrap_or_else(fd_hessian_default_step))
}

/// `max_i |a_i - b_i| / max(1, max_i |b_i|)`: the relative disagreement
/// measure used when comparing exact and differenced derivatives.
pub fn rel_inf_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Entrywise matrix disagreement `max_ij |A_ij - B_ij| / max(1, |A_ij|, |B_ij|)`.
pub fn entrywise_rel_error(a: &Mat, b: &Mat) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    let mut worst = 0.0f64;
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            let x = a[(i, j)];
            let y = b[(i, j)];
            worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(1.0));
        }
    }
    worst
}
