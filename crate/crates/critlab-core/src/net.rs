//! Fully connected feedforward networks with a fixed parameter layout,
//! their squared-error loss, and the hidden-feature maps used by the
//! fiber analysis.
//!
//! A network of depth `l` (number of affine layers) with widths
//! `m_0, m_1, ..., m_l` computes
//!
//! ```text
//! f_p(x) = M_l s(M_{l-1}( ... s(M_1 x + b_1) ... ) + b_{l-1}) + b_l
//! ```
//!
//! where `s` is the activation applied componentwise after every affine
//! layer except the last. Layer `i` contributes `(m_{i-1} + 1) * m_i`
//! parameters. Loss over a dataset is the plain sum of squared residuals,
//! `L(p) = sum_k |f_p(x_k) - y_k|^2`, with no `1/n` factor: this keeps the
//! output-bias curvature at exactly `2n` and is relied on by the spectral
//! checks downstream.
//!
//! Parameter storage is layer-major: block `i` holds `M_i` in row-major
//! order followed by `b_i`. The final-layer block `(M_l, b_l)` is therefore
//! contiguous and trailing, which the fiber module exploits.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::stream_rng;
use crate::scalar::Real;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Componentwise nonlinearity. All variants fix `s(0) = 0` exactly, which
/// the locus constructions depend on: a zeroed layer must kill the signal
/// bit-for-bit, not merely approximately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// Hyperbolic tangent.
    Tanh,
    /// Logistic sigmoid shifted to pass through the origin: `1/(1+e^-x) - 1/2`.
    CenteredSigmoid,
    /// Identity, for tests where the network should be exactly affine.
    Identity,
}

impl Activation {
    /// Applies the activation to a generic scalar.
    pub fn apply<S: Real>(self, z: S) -> S {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::CenteredSigmoid => {
                let one = S::from_f64(1.0);
                let half = S::from_f64(0.5);
                (one + (-z).exp()).recip() - half
            }
            Activation::Identity => z,
        }
    }

    /// Derivative `s'` on a generic scalar. With a dual-number scalar this
    /// transparently differentiates through `s'`, yielding `s''` terms.
    pub fn apply_prime<S: Real>(self, z: S) -> S {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                S::from_f64(1.0) - t * t
            }
            Activation::CenteredSigmoid => {
                let s = (S::from_f64(1.0) + (-z).exp()).recip();
                s * (S::from_f64(1.0) - s)
            }
            Activation::Identity => S::from_f64(1.0),
        }
    }

    /// `s(x)` on plain floats.
    pub fn sigma(self, x: f64) -> f64 {
        self.apply::<f64>(x)
    }

    /// First derivative `s'(x)`.
    pub fn sigma_prime(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::CenteredSigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }

    /// Second derivative `s''(x)`.
    pub fn sigma_double_prime(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::CenteredSigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Identity => 0.0,
        }
    }
}

/// Widths `m_0..m_l` of a fully connected network; depth is the number of
/// affine layers `l = widths.len() - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct NetworkShape {
    widths: Vec<usize>,
}

impl NetworkShape {
    /// Validates `l >= 2` and every width positive.
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::Shape(format!(
                "need at least 3 widths (depth >= 2), got {}",
                widths.len()
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Shape("every width must be positive".into()));
        }
        Ok(NetworkShape { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of affine layers.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Width `m_i`, `0 <= i <= depth`.
    pub fn width(&self, i: usize) -> usize {
        self.widths[i]
    }

    /// Width of the last hidden layer, `m_{l-1}`.
    pub fn last_hidden_width(&self) -> usize {
        self.widths[self.depth() - 1]
    }

    /// `(m_{i-1} + 1) * m_i` parameters in affine layer `i` (1-based).
    pub fn layer_params(&self, i: usize) -> usize {
        assert!((1..=self.depth()).contains(&i), "layer index out of range");
        (self.width(i - 1) + 1) * self.width(i)
    }

    /// Total parameter count `d`.
    pub fn total_params(&self) -> usize {
        (1..=self.depth()).map(|i| self.layer_params(i)).sum()
    }

    /// Offset of layer `i`'s block in the flat parameter vector.
    pub fn block_start(&self, i: usize) -> usize {
        assert!((1..=self.depth()).contains(&i), "layer index out of range");
        (1..i).map(|j| self.layer_params(j)).sum()
    }

    /// Flat index of weight `M_i[r, c]`.
    pub fn weight_index(&self, i: usize, r: usize, c: usize) -> usize {
        debug_assert!(r < self.width(i) && c < self.width(i - 1));
        self.block_start(i) + r * self.width(i - 1) + c
    }

    /// Flat index of bias `b_i[r]`.
    pub fn bias_index(&self, i: usize, r: usize) -> usize {
        debug_assert!(r < self.width(i));
        self.block_start(i) + self.width(i) * self.width(i - 1) + r
    }

    /// True when all hidden widths are equal (the closed-form dimension
    /// formulas apply only then).
    pub fn uniform_hidden_width(&self) -> Option<usize> {
        let hidden = &self.widths[1..self.widths.len() - 1];
        match hidden {
            [] => None,
            [first, rest @ ..] if rest.iter().all(|w| w == first) => Some(*first),
            _ => None,
        }
    }
}

/// Flat parameter vector tied to a shape. Layout: layer-major, each layer
/// storing `M_i` row-major followed by `b_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    shape: NetworkShape,
    data: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(shape: &NetworkShape) -> Self {
        ParamVector { shape: shape.clone(), data: vec![0.0; shape.total_params()] }
    }

    pub fn from_vec(shape: &NetworkShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.total_params() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, shape needs {}",
                data.len(),
                shape.total_params()
            )));
        }
        Ok(ParamVector { shape: shape.clone(), data })
    }

    /// All coordinates i.i.d. normal with standard deviation `scale`,
    /// drawn from the deterministic stream of `seed`.
    pub fn random(shape: &NetworkShape, seed: u64, scale: f64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let data = (0..shape.total_params())
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        ParamVector { shape: shape.clone(), data }
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn weight(&self, i: usize, r: usize, c: usize) -> f64 {
        self.data[self.shape.weight_index(i, r, c)]
    }

    pub fn set_weight(&mut self, i: usize, r: usize, c: usize, v: f64) {
        let idx = self.shape.weight_index(i, r, c);
        self.data[idx] = v;
    }

    pub fn bias(&self, i: usize, r: usize) -> f64 {
        self.data[self.shape.bias_index(i, r)]
    }

    pub fn set_bias(&mut self, i: usize, r: usize, v: f64) {
        let idx = self.shape.bias_index(i, r);
        self.data[idx] = v;
    }

    /// Weight matrix `M_i` as a dense copy.
    pub fn weight_matrix(&self, i: usize) -> Mat {
        Mat::from_fn(self.shape.width(i), self.shape.width(i - 1), |r, c| self.weight(i, r, c))
    }

    /// Bias vector `b_i` as a copy.
    pub fn bias_vector(&self, i: usize) -> Vec<f64> {
        (0..self.shape.width(i)).map(|r| self.bias(i, r)).collect()
    }
}

/// Finite training set: `n` input/target pairs of fixed dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;
    fn try_from(r: DatasetRepr) -> Result<Self> {
        Dataset::new(r.inputs, r.targets)
    }
}

impl From<Dataset> for DatasetRepr {
    fn from(d: Dataset) -> DatasetRepr {
        DatasetRepr { inputs: d.inputs, targets: d.targets }
    }
}

impl TryFrom<Vec<usize>> for NetworkShape {
    type Error = Error;
    fn try_from(widths: Vec<usize>) -> Result<Self> {
        NetworkShape::new(widths)
    }
}

impl From<NetworkShape> for Vec<usize> {
    fn from(s: NetworkShape) -> Vec<usize> {
        s.widths
    }
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Argument("dataset must contain at least one sample".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Argument(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let a = inputs[0].len();
        let b = targets[0].len();
        if a == 0 || b == 0 {
            return Err(Error::Argument("inputs and targets must be non-empty vectors".into()));
        }
        if inputs.iter().any(|x| x.len() != a) || targets.iter().any(|y| y.len() != b) {
            return Err(Error::Argument("inconsistent sample dimensions".into()));
        }
        if inputs.iter().chain(targets.iter()).flatten().any(|v| !v.is_finite()) {
            return Err(Error::Argument("dataset contains non-finite values".into()));
        }
        Ok(Dataset { inputs, targets })
    }

    /// Deterministic random dataset with standard-normal inputs and targets.
    pub fn random(n: usize, input_dim: usize, target_dim: usize, seed: u64) -> Result<Self> {
        let draw = |stream: u64, len: usize| -> Vec<Vec<f64>> {
            let mut rng = stream_rng(seed, stream);
            (0..n)
                .map(|_| {
                    (0..len)
                        .map(|_| {
                            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                        })
                        .collect()
                })
                .collect()
        };
        let inputs = draw(1, input_dim);
        let targets = draw(2, target_dim);
        Dataset::new(inputs, targets)
    }

    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn target_dim(&self) -> usize {
        self.targets[0].len()
    }

    pub fn input(&self, k: usize) -> &[f64] {
        &self.inputs[k]
    }

    pub fn target(&self, k: usize) -> &[f64] {
        &self.targets[k]
    }

    /// True when all inputs are pairwise distinct. Samplers that rely on
    /// genericity (full-rank feature matrices) must reject duplicates;
    /// other operations merely warn.
    pub fn inputs_distinct(&self) -> bool {
        for i in 0..self.inputs.len() {
            for j in (i + 1)..self.inputs.len() {
                if self.inputs[i] == self.inputs[j] {
                    return false;
                }
            }
        }
        true
    }

    /// Componentwise mean of the targets.
    pub fn mean_target(&self) -> Vec<f64> {
        let mut m = self.sum_target();
        for v in &mut m {
            *v /= self.n() as f64;
        }
        m
    }

    /// Componentwise sum of the targets.
    pub fn sum_target(&self) -> Vec<f64> {
        let b = self.target_dim();
        let mut s = vec![0.0; b];
        for y in &self.targets {
            for (acc, v) in s.iter_mut().zip(y) {
                *acc += v;
            }
        }
        s
    }

    /// Checks input/output dimensions against a shape.
    pub fn check_shape(&self, shape: &NetworkShape) -> Result<()> {
        if self.input_dim() != shape.input_dim() {
            return Err(Error::Shape(format!(
                "dataset inputs have dimension {}, network expects {}",
                self.input_dim(),
                shape.input_dim()
            )));
        }
        if self.target_dim() != shape.output_dim() {
            return Err(Error::Shape(format!(
                "dataset targets have dimension {}, network outputs {}",
                self.target_dim(),
                shape.output_dim()
            )));
        }
        Ok(())
    }
}

/// Applies affine layer `i` (1-based) to `input`, reading parameters from
/// the generic slice `params` laid out as documented on [`ParamVector`].
fn affine_layer<S: Real>(
    shape: &NetworkShape,
    params: &[S],
    i: usize,
    input: &[S],
) -> Vec<S> {
    let rows = shape.width(i);
    let cols = shape.width(i - 1);
    let w0 = shape.block_start(i);
    let b0 = w0 + rows * cols;
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut acc = params[b0 + r];
        let row = &params[w0 + r * cols..w0 + (r + 1) * cols];
        for (w, x) in row.iter().zip(input) {
            acc = acc + *w * *x;
        }
        out.push(acc);
    }
    out
}

fn check_finite<S: Real>(layer: usize, values: &[S], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { layer, context: what.into() });
    }
    Ok(())
}

/// Network output for one input, generic over the scalar type.
pub fn forward_generic<S: Real>(
    shape: &NetworkShape,
    params: &[S],
    x: &[S],
    act: Activation,
) -> Result<Vec<S>> {
    let l = shape.depth();
    let mut a: Vec<S> = x.to_vec();
    for i in 1..=l {
        let z = affine_layer(shape, params, i, &a);
        check_finite(i, &z, "pre-activation")?;
        a = if i < l { z.into_iter().map(|v| act.apply(v)).collect() } else { z };
    }
    Ok(a)
}

/// Network output `f_p(x)`.
pub fn forward(p: &ParamVector, x: &[f64], act: Activation) -> Result<Vec<f64>> {
    if x.len() != p.shape().input_dim() {
        return Err(Error::Shape(format!(
            "input has dimension {}, network expects {}",
            x.len(),
            p.shape().input_dim()
        )));
    }
    forward_generic(p.shape(), p.as_slice(), x, act)
}

/// Squared-error loss summed over the dataset, generic over the scalar type.
pub fn loss_generic<S: Real>(
    shape: &NetworkShape,
    params: &[S],
    data: &Dataset,
    act: Activation,
) -> Result<S> {
    data.check_shape(shape)?;
    let mut total = S::from_f64(0.0);
    for k in 0..data.n() {
        let x: Vec<S> = data.input(k).iter().map(|&v| S::from_f64(v)).collect();
        let out = forward_generic(shape, params, &x, act)?;
        for (f, y) in out.iter().zip(data.target(k)) {
            let r = *f - S::from_f64(*y);
            total = total + r * r;
        }
    }
    Ok(total)
}

/// `L(p) = sum_k |f_p(x_k) - y_k|^2` (no `1/n` normalization).
pub fn loss(p: &ParamVector, data: &Dataset, act: Activation) -> Result<f64> {
    loss_generic(p.shape(), p.as_slice(), data, act)
}

/// Hidden feature map after layer `i`: the activation is applied after the
/// final affine step as well, unlike the network output. Requires
/// `1 <= i <= depth - 1`.
pub fn phi(p: &ParamVector, i: usize, x: &[f64], act: Activation) -> Result<Vec<f64>> {
    let l = p.shape().depth();
    if i == 0 || i > l - 1 {
        return Err(Error::Argument(format!(
            "feature layer index {i} out of range 1..={}",
            l - 1
        )));
    }
    if x.len() != p.shape().input_dim() {
        return Err(Error::Shape(format!(
            "input has dimension {}, network expects {}",
            x.len(),
            p.shape().input_dim()
        )));
    }
    let params = p.as_slice();
    let mut a: Vec<f64> = x.to_vec();
    for j in 1..=i {
        let z = affine_layer(p.shape(), params, j, &a);
        check_finite(j, &z, "pre-activation")?;
        a = z.into_iter().map(|v| act.apply(v)).collect();
    }
    Ok(a)
}

/// Feature matrices of the deepest hidden layer over a dataset.
///
/// Returns `(Phi, PhiHat)`: `Phi` is `m_{l-1} x n` with column `k` equal to
/// `phi(p, l-1, x_k)`; `PhiHat` appends a row of ones (the bias row), making
/// it `(m_{l-1} + 1) x n`.
pub fn phi_matrix(p: &ParamVector, data: &Dataset, act: Activation) -> Result<(Mat, Mat)> {
    data.check_shape(p.shape())?;
    let l = p.shape().depth();
    let m = p.shape().last_hidden_width();
    let n = data.n();
    let mut phi_mat = Mat::zeros(m, n);
    for k in 0..n {
        let col = phi(p, l - 1, data.input(k), act)?;
        for r in 0..m {
            phi_mat[(r, k)] = col[r];
        }
    }
    let mut hat = Mat::zeros(m + 1, n);
    for k in 0..n {
        for r in 0..m {
            hat[(r, k)] = phi_mat[(r, k)];
        }
        hat[(m, k)] = 1.0;
    }
    Ok((phi_mat, hat))
}
