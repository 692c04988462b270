//! MLP inference and backpropagation through a hardware weight view.
//!
//! Layer `i` is a `(fan_in + 1) × fan_out` matrix whose last row is the bias,
//! multiplied by a constant-one input column. The bias row passes through
//! the same hardware model as every other weight.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::hwmodels::HardwareModelSpec;
use crate::numerics::Rng;
use crate::{Error, Matrix, Result, Scalar};

/// Layer widths: inputs (without bias), hidden layers, output classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Topology {
    pub fn new(inputs: usize, hidden: Vec<usize>, classes: usize) -> Self {
        Self {
            inputs,
            hidden,
            classes,
        }
    }

    /// `(fan_in, fan_out)` of each layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.inputs];
        widths.extend(&self.hidden);
        widths.push(self.classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.inputs)?;
        for h in &self.hidden {
            write!(f, "-{h}")?;
        }
        write!(f, "-{}", self.classes)
    }
}

/// Network weights, one bias-augmented matrix per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    layers: Vec<Matrix<T>>,
}

impl<T: Scalar> MlpParams<T> {
    pub fn new(layers: Vec<Matrix<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].cols() + 1 != pair[1].rows() {
                return Err(Error::TopologyMismatch {
                    expected: format!("layer {} with {} rows", i + 1, pair[0].cols() + 1),
                    found: format!("{} rows", pair[1].rows()),
                });
            }
        }
        if layers.iter().any(|l| l.rows() < 2 || l.cols() == 0) {
            return Err(Error::invalid("every layer needs inputs and outputs"));
        }
        Ok(Self { layers })
    }

    /// Scaled normal initialization with stddev `1/√fan_in`.
    pub fn init(topology: &Topology, rng: &mut Rng) -> Result<Self> {
        let layers = topology
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                Matrix::gaussian(fan_in + 1, fan_out, 1.0 / (fan_in as f64).sqrt(), rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn zeros(topology: &Topology) -> Self {
        let layers = topology
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Matrix::zeros(i + 1, o))
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Matrix<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Matrix<T>> {
        self.layers
    }

    pub fn topology(&self) -> Topology {
        Topology {
            inputs: self.layers[0].rows() - 1,
            hidden: self.layers[..self.layers.len() - 1]
                .iter()
                .map(Matrix::cols)
                .collect(),
            classes: self.layers.last().unwrap().cols(),
        }
    }

    pub fn num_weights(&self) -> usize {
        self.layers.iter().map(|l| l.data().len()).sum()
    }

    /// Applies `f` to every weight, bias rows included.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            layers: self.layers.iter().map(|l| l.map(&f)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> MlpParams<U> {
        MlpParams {
            layers: self.layers.iter().map(Matrix::cast).collect(),
        }
    }

    pub fn check_same_shape(&self, other: &MlpParams<T>) -> Result<()> {
        if self.layers.len() != other.layers.len()
            || self
                .layers
                .iter()
                .zip(&other.layers)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::TopologyMismatch {
                expected: self.topology().to_string(),
                found: other.topology().to_string(),
            });
        }
        Ok(())
    }
}

/// A hardware model at a given realism. `w_sc = None` is the hard
/// (`w_sc → 0`) limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightModel {
    pub spec: HardwareModelSpec,
    pub w_sc: Option<f64>,
}

impl WeightModel {
    pub fn smooth(spec: HardwareModelSpec, w_sc: f64) -> Result<Self> {
        if !(w_sc > 0.0 && w_sc.is_finite()) {
            return Err(Error::invalid(format!("w_sc must be positive, got {w_sc}")));
        }
        Ok(Self {
            spec,
            w_sc: Some(w_sc),
        })
    }

    pub fn hard(spec: HardwareModelSpec) -> Self {
        Self { spec, w_sc: None }
    }

    pub fn identity() -> Self {
        Self::hard(HardwareModelSpec::Identity)
    }

    #[inline]
    pub fn value<T: Scalar>(&self, w: T) -> T {
        match self.w_sc {
            Some(s) => self.spec.value(T::of(s), w),
            None => self.spec.hard_value(w),
        }
    }

    /// `∂g/∂w`; in the hard limit this is zero except where `g` is locally
    /// the identity.
    #[inline]
    pub fn derivative<T: Scalar>(&self, w: T) -> T {
        match self.w_sc {
            Some(s) => self.spec.derivative(T::of(s), w),
            None => match self.spec {
                HardwareModelSpec::Identity => T::one(),
                HardwareModelSpec::Pruning { w0 } | HardwareModelSpec::PruningAsPrinted { w0 }
                    if w.abs().as_f64() > w0 =>
                {
                    T::one()
                }
                HardwareModelSpec::PruningAsPrinted { .. } => T::of(2.0),
                _ => T::zero(),
            },
        }
    }

    fn is_identity(&self) -> bool {
        self.spec == HardwareModelSpec::Identity
    }

    /// Effective (hardware) weights of every layer.
    pub fn effective<T: Scalar>(&self, params: &MlpParams<T>) -> Vec<Matrix<T>> {
        if self.is_identity() {
            return params.layers.clone();
        }
        params.layers.iter().map(|l| l.map(|w| self.value(w))).collect()
    }
}

/// Scale standing in for `z_sc → 0`; `tanh(z / 1e-12)` is `sign(z)` for any
/// pre-activation that matters.
pub const HARD_Z_SC: f64 = 1e-12;

/// Hidden-unit nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActivationSpec {
    Relu,
    /// `tanh(z / z_sc)`, saturating to ±1 as `z_sc` shrinks.
    HwBinary { z_sc: f64 },
}

impl ActivationSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationSpec::Relu => Ok(()),
            ActivationSpec::HwBinary { z_sc } if z_sc > 0.0 && z_sc.is_finite() => Ok(()),
            ActivationSpec::HwBinary { z_sc } => {
                Err(Error::invalid(format!("z_sc must be positive, got {z_sc}")))
            }
        }
    }

    /// The `z_sc → 0` limit: `sign(z)` for hw_binary, unchanged relu.
    pub fn hard(&self) -> Self {
        self.with_scale(HARD_Z_SC)
    }

    /// Same kind with its scale replaced (no-op for relu).
    pub fn with_scale(&self, z_sc: f64) -> Self {
        match self {
            ActivationSpec::Relu => ActivationSpec::Relu,
            ActivationSpec::HwBinary { .. } => ActivationSpec::HwBinary { z_sc },
        }
    }

    #[inline]
    fn apply<T: Scalar>(&self, z: T) -> T {
        match *self {
            ActivationSpec::Relu => z.max(T::zero()),
            ActivationSpec::HwBinary { z_sc } => (z / T::of(z_sc)).tanh(),
        }
    }

    #[inline]
    fn derivative<T: Scalar>(&self, z: T) -> T {
        match *self {
            ActivationSpec::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            ActivationSpec::HwBinary { z_sc } => {
                let s = T::of(z_sc);
                let t = (z / s).tanh();
                (T::one() - t * t) / s
            }
        }
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// Bias-augmented input of each layer.
    pub inputs: Vec<Matrix<T>>,
    /// Pre-activations `z` of each layer; the last entry holds the logits.
    pub pre: Vec<Matrix<T>>,
    /// Hardware weights `g(W)` used in the pass.
    pub effective: Vec<Matrix<T>>,
    /// Row-wise softmax of the logits.
    pub probs: Matrix<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn logits(&self) -> &Matrix<T> {
        self.pre.last().expect("trace has layers")
    }

    /// Post-activation outputs of hidden layer `i` (without the bias column).
    pub fn hidden_output(&self, i: usize) -> Matrix<T> {
        self.inputs[i + 1].without_last_column()
    }
}

fn softmax_rows<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    let cols = logits.cols();
    for row in out.data_mut().chunks_exact_mut(cols) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Forward pass with every weight matrix replaced by `g(W)`.
pub fn forward<T: Scalar>(
    params: &MlpParams<T>,
    model: &WeightModel,
    act: &ActivationSpec,
    x: &Matrix<T>,
) -> Result<ForwardTrace<T>> {
    let effective = model.effective(params);
    forward_with_effective(effective, act, x)
}

/// Forward pass with precomputed hardware weights.
pub fn forward_with_effective<T: Scalar>(
    effective: Vec<Matrix<T>>,
    act: &ActivationSpec,
    x: &Matrix<T>,
) -> Result<ForwardTrace<T>> {
    if x.cols() != effective[0].rows() {
        return Err(Error::Shape {
            op: "forward",
            left: x.shape(),
            right: effective[0].shape(),
        });
    }
    let n_layers = effective.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);
    let mut a = x.clone();
    for (i, w) in effective.iter().enumerate() {
        let z = a.matmul(w)?;
        inputs.push(a);
        if i + 1 < n_layers {
            a = z.map(|v| act.apply(v)).with_ones_column();
        } else {
            a = Matrix::zeros(0, 0);
        }
        pre.push(z);
    }
    let probs = softmax_rows(pre.last().unwrap());
    Ok(ForwardTrace {
        inputs,
        pre,
        effective,
        probs,
    })
}

/// Gradient of the mean cross-entropy with respect to the mathematical
/// weights: the ordinary backprop gradient for the effective weights,
/// multiplied entrywise by `g'(W)`.
pub fn backward<T: Scalar>(
    trace: &ForwardTrace<T>,
    params: &MlpParams<T>,
    model: &WeightModel,
    act: &ActivationSpec,
    y: &[usize],
) -> Result<Vec<Matrix<T>>> {
    let n = trace.probs.rows();
    if y.len() != n || trace.effective.len() != params.layers.len() {
        return Err(Error::invalid(format!(
            "trace of {n} rows / {} layers does not match {} labels / {} layers",
            trace.effective.len(),
            y.len(),
            params.layers.len()
        )));
    }
    for (e, w) in trace.effective.iter().zip(&params.layers) {
        if e.shape() != w.shape() {
            return Err(Error::Shape {
                op: "backward",
                left: e.shape(),
                right: w.shape(),
            });
        }
    }
    let m = trace.probs.cols();
    let inv_n = T::of(1.0 / n as f64);
    let mut dz = trace.probs.clone();
    for (row, &label) in dz.data_mut().chunks_exact_mut(m).zip(y) {
        if label >= m {
            return Err(Error::invalid(format!("label {label} out of range for {m} classes")));
        }
        row[label] = row[label] - T::one();
        for v in row.iter_mut() {
            *v = *v * inv_n;
        }
    }

    let mut grads = vec![Matrix::zeros(0, 0); params.layers.len()];
    for l in (0..params.layers.len()).rev() {
        let d_eff = trace.inputs[l].t_matmul(&dz)?;
        grads[l] = if model.is_identity() {
            d_eff
        } else {
            d_eff.zip_map(&params.layers[l], |g, w| g * model.derivative(w))?
        };
        if l > 0 {
            let da = dz.matmul_t(&trace.effective[l])?.without_last_column();
            dz = da.zip_map(&trace.pre[l - 1], |d, z| d * act.derivative(z))?;
        }
    }
    Ok(grads)
}

/// Mean `-ln p[label]`, with `p` floored at `1e-12`.
pub fn cross_entropy<T: Scalar>(trace: &ForwardTrace<T>, y: &[usize]) -> f64 {
    cross_entropy_of(&trace.probs, y)
}

pub fn cross_entropy_of<T: Scalar>(probs: &Matrix<T>, y: &[usize]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(r, &label)| -probs.get(r, label).as_f64().max(1e-12).ln())
        .sum();
    total / y.len() as f64
}

/// Row index of the largest entry, lowest index on ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label. Works on logits or
/// probabilities alike.
pub fn accuracy_of<T: Scalar>(scores: &Matrix<T>, y: &[usize]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let hits = y
        .iter()
        .enumerate()
        .filter(|&(r, &label)| argmax(scores.row(r)) == label)
        .count();
    hits as f64 / y.len() as f64
}

pub fn accuracy<T: Scalar>(trace: &ForwardTrace<T>, y: &[usize]) -> f64 {
    accuracy_of(&trace.probs, y)
}

/// Loss and accuracy summary of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub cost: f64,
    pub accuracy: f64,
}

/// Evaluates in row chunks to bound memory on large sets.
pub fn evaluate<T: Scalar>(
    params: &MlpParams<T>,
    model: &WeightModel,
    act: &ActivationSpec,
    x: &Matrix<T>,
    y: &[usize],
) -> Result<Evaluation> {
    const CHUNK: usize = 2000;
    if x.rows() != y.len() {
        return Err(Error::invalid(format!(
            "{} rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    let effective = model.effective(params);
    let (mut cost, mut hits) = (0.0, 0.0);
    let mut start = 0;
    while start < x.rows() {
        let end = (start + CHUNK).min(x.rows());
        let idx: Vec<usize> = (start..end).collect();
        let trace = forward_with_effective(effective.clone(), act, &x.select_rows(&idx))?;
        let ys = &y[start..end];
        cost += cross_entropy(&trace, ys) * ys.len() as f64;
        hits += accuracy(&trace, ys) * ys.len() as f64;
        start = end;
    }
    let n = y.len().max(1) as f64;
    Ok(Evaluation {
        cost: cost / n,
        accuracy: hits / n,
    })
}

pub const CHECKPOINT_FORMAT: &str = "hwaware-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk weights.
///
/// JSON object:
///
/// ```text
/// {
///   "format": "hwaware-checkpoint",
///   "version": 1,
///   "topology": {"inputs": 784, "hidden": [100], "classes": 10},
///   "weight_model": {"kind": "ternary_symmetric", "delta": 0.45},
///   "w_sc": 0.005,                  // realism of the final stage, null if untrained for one
///   "activation": {"kind": "relu"},
///   "layers": [{"rows": 785, "cols": 100, "data": [..row-major f64..]}, ...]
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub topology: Topology,
    pub weight_model: HardwareModelSpec,
    pub w_sc: Option<f64>,
    pub activation: ActivationSpec,
    pub layers: Vec<Matrix<f64>>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(
        params: &MlpParams<T>,
        weight_model: HardwareModelSpec,
        w_sc: Option<f64>,
        activation: ActivationSpec,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            topology: params.topology(),
            weight_model,
            w_sc,
            activation,
            layers: params.layers.iter().map(Matrix::cast).collect(),
        }
    }

    pub fn params<T: Scalar>(&self) -> Result<MlpParams<T>> {
        let params = MlpParams::new(self.layers.iter().map(Matrix::cast).collect())?;
        if params.topology() != self.topology {
            return Err(Error::TopologyMismatch {
                expected: self.topology.to_string(),
                found: params.topology().to_string(),
            });
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "{}: expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        ck.params::<f64>()?;
        Ok(ck)
    }
}
