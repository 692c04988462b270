//! Hardware-description functions.
//!
//! Each [`HardwareModelSpec`] maps a mathematical weight `w` to the weight the
//! hardware would realize, smoothed by the realism scale `w_sc`. Steps are
//! built from scaled logistic sigmoids `σ(x) = 1 / (1 + e^-x)`:
//!
//! | kind                 | `g(w; w_sc)`                                                    |
//! |----------------------|-----------------------------------------------------------------|
//! | identity             | `w`                                                             |
//! | binary               | `Δ tanh(w / w_sc)`                                              |
//! | ternary (symmetric)  | `2Δ [σ((w-Δ)/w_sc) + σ((w+Δ)/w_sc) - 1]`                        |
//! | ternary (asymmetric) | `2Δ [σ((w-Δ)/w_sc) + β σ((w+Δ)/w_sc) - β]`                      |
//! | quinary              | `2Δ Σ_{k=1,2} β_k [σ((w-(2k-1)Δ)/w_sc) + σ((w+(2k-1)Δ)/w_sc) - 1]` |
//! | pruning              | `w [σ((w-w0)/w_sc) + 1 - σ((w+w0)/w_sc)]`                       |
//!
//! As `w_sc → 0` every function collapses onto its hard map; the level sets
//! are returned by [`HardwareModelSpec::hard_levels`].
//!
//! The asymmetric-ternary and pruning forms above keep the zero level at
//! exactly zero. The variants `ternary_asymmetric_as_printed` and
//! `pruning_as_printed` keep the alternative placements (β on the positive
//! sigmoid, and the window factor `1 - σ((w-w0)/w_sc) + σ((w+w0)/w_sc)`) for
//! comparison runs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Kind tag of a [`HardwareModelSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Identity,
    Binary,
    TernarySymmetric,
    TernaryAsymmetric,
    TernaryAsymmetricAsPrinted,
    Quinary,
    Pruning,
    PruningAsPrinted,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Identity => "identity",
            ModelKind::Binary => "binary",
            ModelKind::TernarySymmetric => "ternary_symmetric",
            ModelKind::TernaryAsymmetric => "ternary_asymmetric",
            ModelKind::TernaryAsymmetricAsPrinted => "ternary_asymmetric_as_printed",
            ModelKind::Quinary => "quinary",
            ModelKind::Pruning => "pruning",
            ModelKind::PruningAsPrinted => "pruning_as_printed",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A hardware weight model and its physical parameters.
///
/// Serialized as a flat JSON object tagged by `kind`, carrying only the
/// parameters that kind uses, e.g. `{"kind":"ternary_asymmetric","delta":0.45,"beta":0.75}`.
/// Unknown or irrelevant keys are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub enum HardwareModelSpec {
    Identity,
    Binary { delta: f64 },
    TernarySymmetric { delta: f64 },
    TernaryAsymmetric { delta: f64, beta: f64 },
    TernaryAsymmetricAsPrinted { delta: f64, beta: f64 },
    Quinary { delta: f64, beta1: f64, beta2: f64 },
    Pruning { w0: f64 },
    PruningAsPrinted { w0: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum SpecRepr {
    Identity,
    Binary { delta: f64 },
    TernarySymmetric { delta: f64 },
    TernaryAsymmetric { delta: f64, beta: f64 },
    TernaryAsymmetricAsPrinted { delta: f64, beta: f64 },
    Quinary { delta: f64, beta1: f64, beta2: f64 },
    Pruning { w0: f64 },
    PruningAsPrinted { w0: f64 },
}

impl TryFrom<SpecRepr> for HardwareModelSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        let spec = match r {
            SpecRepr::Identity => HardwareModelSpec::Identity,
            SpecRepr::Binary { delta } => HardwareModelSpec::Binary { delta },
            SpecRepr::TernarySymmetric { delta } => HardwareModelSpec::TernarySymmetric { delta },
            SpecRepr::TernaryAsymmetric { delta, beta } => {
                HardwareModelSpec::TernaryAsymmetric { delta, beta }
            }
            SpecRepr::TernaryAsymmetricAsPrinted { delta, beta } => {
                HardwareModelSpec::TernaryAsymmetricAsPrinted { delta, beta }
            }
            SpecRepr::Quinary {
                delta,
                beta1,
                beta2,
            } => HardwareModelSpec::Quinary {
                delta,
                beta1,
                beta2,
            },
            SpecRepr::Pruning { w0 } => HardwareModelSpec::Pruning { w0 },
            SpecRepr::PruningAsPrinted { w0 } => HardwareModelSpec::PruningAsPrinted { w0 },
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<HardwareModelSpec> for SpecRepr {
    fn from(s: HardwareModelSpec) -> Self {
        match s {
            HardwareModelSpec::Identity => SpecRepr::Identity,
            HardwareModelSpec::Binary { delta } => SpecRepr::Binary { delta },
            HardwareModelSpec::TernarySymmetric { delta } => SpecRepr::TernarySymmetric { delta },
            HardwareModelSpec::TernaryAsymmetric { delta, beta } => {
                SpecRepr::TernaryAsymmetric { delta, beta }
            }
            HardwareModelSpec::TernaryAsymmetricAsPrinted { delta, beta } => {
                SpecRepr::TernaryAsymmetricAsPrinted { delta, beta }
            }
            HardwareModelSpec::Quinary {
                delta,
                beta1,
                beta2,
            } => SpecRepr::Quinary {
                delta,
                beta1,
                beta2,
            },
            HardwareModelSpec::Pruning { w0 } => SpecRepr::Pruning { w0 },
            HardwareModelSpec::PruningAsPrinted { w0 } => SpecRepr::PruningAsPrinted { w0 },
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Symmetric smooth step `σ((w-c)/s) + σ((w+c)/s) - 1`, written as a
/// difference so it is exactly odd in `w` and exactly zero at `w = 0`.
#[inline]
fn step<T: Scalar>(w: T, center: T, w_sc: T) -> T {
    sigmoid((w - center) / w_sc) - sigmoid((-w - center) / w_sc)
}

/// `σ'(x) = σ(x) σ(-x)`, without the cancellation of `σ(1 - σ)`.
#[inline]
pub fn sigmoid_prime<T: Scalar>(x: T) -> T {
    sigmoid(x) * sigmoid(-x)
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_w_sc(w_sc: f64) -> Result<()> {
    positive("w_sc", w_sc)
}

impl HardwareModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            HardwareModelSpec::Identity => ModelKind::Identity,
            HardwareModelSpec::Binary { .. } => ModelKind::Binary,
            HardwareModelSpec::TernarySymmetric { .. } => ModelKind::TernarySymmetric,
            HardwareModelSpec::TernaryAsymmetric { .. } => ModelKind::TernaryAsymmetric,
            HardwareModelSpec::TernaryAsymmetricAsPrinted { .. } => {
                ModelKind::TernaryAsymmetricAsPrinted
            }
            HardwareModelSpec::Quinary { .. } => ModelKind::Quinary,
            HardwareModelSpec::Pruning { .. } => ModelKind::Pruning,
            HardwareModelSpec::PruningAsPrinted { .. } => ModelKind::PruningAsPrinted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            HardwareModelSpec::Identity => Ok(()),
            HardwareModelSpec::Binary { delta } | HardwareModelSpec::TernarySymmetric { delta } => {
                positive("delta", delta)
            }
            HardwareModelSpec::TernaryAsymmetric { delta, beta }
            | HardwareModelSpec::TernaryAsymmetricAsPrinted { delta, beta } => {
                positive("delta", delta)?;
                if beta > 0.0 && beta <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("beta must lie in (0, 1], got {beta}")))
                }
            }
            HardwareModelSpec::Quinary {
                delta,
                beta1,
                beta2,
            } => {
                positive("delta", delta)?;
                positive("beta1", beta1)?;
                positive("beta2", beta2)
            }
            HardwareModelSpec::Pruning { w0 } | HardwareModelSpec::PruningAsPrinted { w0 } => {
                positive("w0", w0)
            }
        }
    }

    /// Level spacing Δ, for kinds that have one.
    pub fn delta(&self) -> Option<f64> {
        match *self {
            HardwareModelSpec::Binary { delta }
            | HardwareModelSpec::TernarySymmetric { delta }
            | HardwareModelSpec::TernaryAsymmetric { delta, .. }
            | HardwareModelSpec::TernaryAsymmetricAsPrinted { delta, .. }
            | HardwareModelSpec::Quinary { delta, .. } => Some(delta),
            _ => None,
        }
    }

    /// Same model with a different level spacing. Kinds without Δ are
    /// returned unchanged.
    pub fn with_delta(&self, new: f64) -> HardwareModelSpec {
        let mut out = *self;
        match &mut out {
            HardwareModelSpec::Binary { delta }
            | HardwareModelSpec::TernarySymmetric { delta }
            | HardwareModelSpec::TernaryAsymmetric { delta, .. }
            | HardwareModelSpec::TernaryAsymmetricAsPrinted { delta, .. }
            | HardwareModelSpec::Quinary { delta, .. } => *delta = new,
            _ => {}
        }
        out
    }

    /// Smooth hardware weight. Assumes `w_sc > 0`; see [`g_value`] for the
    /// checked entry point.
    pub fn value<T: Scalar>(&self, w_sc: T, w: T) -> T {
        let two = T::of(2.0);
        match *self {
            HardwareModelSpec::Identity => w,
            HardwareModelSpec::Binary { delta } => T::of(delta) * (w / w_sc).tanh(),
            HardwareModelSpec::TernarySymmetric { delta } => {
                let d = T::of(delta);
                two * d * step(w, d, w_sc)
            }
            HardwareModelSpec::TernaryAsymmetric { delta, beta } => {
                // σ(a) + βσ(b) - β = σ(a) - βσ(-b)
                let (d, b) = (T::of(delta), T::of(beta));
                two * d * (sigmoid((w - d) / w_sc) - b * sigmoid((-w - d) / w_sc))
            }
            HardwareModelSpec::TernaryAsymmetricAsPrinted { delta, beta } => {
                // βσ(a) + σ(b) - β = σ(b) - βσ(-a)
                let (d, b) = (T::of(delta), T::of(beta));
                two * d * (sigmoid((w + d) / w_sc) - b * sigmoid((d - w) / w_sc))
            }
            HardwareModelSpec::Quinary {
                delta,
                beta1,
                beta2,
            } => {
                let d = T::of(delta);
                two * d
                    * (T::of(beta1) * step(w, d, w_sc)
                        + T::of(beta2) * step(w, T::of(3.0) * d, w_sc))
            }
            HardwareModelSpec::Pruning { w0 } => {
                let w0 = T::of(w0);
                w * (sigmoid((w - w0) / w_sc) + sigmoid((-w - w0) / w_sc))
            }
            HardwareModelSpec::PruningAsPrinted { w0 } => {
                let w0 = T::of(w0);
                w * (sigmoid((w0 - w) / w_sc) + sigmoid((w + w0) / w_sc))
            }
        }
    }

    /// Exact `∂g/∂w`. Assumes `w_sc > 0`.
    pub fn derivative<T: Scalar>(&self, w_sc: T, w: T) -> T {
        let two = T::of(2.0);
        match *self {
            HardwareModelSpec::Identity => T::one(),
            HardwareModelSpec::Binary { delta } => {
                let t = (w / w_sc).tanh();
                T::of(delta) * (T::one() - t * t) / w_sc
            }
            HardwareModelSpec::TernarySymmetric { delta } => {
                let d = T::of(delta);
                two * d / w_sc * (sigmoid_prime((w - d) / w_sc) + sigmoid_prime((w + d) / w_sc))
            }
            HardwareModelSpec::TernaryAsymmetric { delta, beta } => {
                let (d, b) = (T::of(delta), T::of(beta));
                two * d / w_sc
                    * (sigmoid_prime((w - d) / w_sc) + b * sigmoid_prime((w + d) / w_sc))
            }
            HardwareModelSpec::TernaryAsymmetricAsPrinted { delta, beta } => {
                let (d, b) = (T::of(delta), T::of(beta));
                two * d / w_sc
                    * (b * sigmoid_prime((w - d) / w_sc) + sigmoid_prime((w + d) / w_sc))
            }
            HardwareModelSpec::Quinary {
                delta,
                beta1,
                beta2,
            } => {
                let d = T::of(delta);
                let bump = |center: T| {
                    sigmoid_prime((w - center) / w_sc) + sigmoid_prime((w + center) / w_sc)
                };
                two * d / w_sc * (T::of(beta1) * bump(d) + T::of(beta2) * bump(T::of(3.0) * d))
            }
            HardwareModelSpec::Pruning { w0 } => {
                let w0 = T::of(w0);
                let (a, b) = ((w - w0) / w_sc, (w + w0) / w_sc);
                let window = sigmoid(a) + T::one() - sigmoid(b);
                window + w / w_sc * (sigmoid_prime(a) - sigmoid_prime(b))
            }
            HardwareModelSpec::PruningAsPrinted { w0 } => {
                let w0 = T::of(w0);
                let (a, b) = ((w - w0) / w_sc, (w + w0) / w_sc);
                let window = T::one() - sigmoid(a) + sigmoid(b);
                window + w / w_sc * (sigmoid_prime(b) - sigmoid_prime(a))
            }
        }
    }

    /// Asymptotic (`w_sc → 0`) level set, ascending.
    pub fn hard_levels(&self) -> Result<Vec<f64>> {
        match *self {
            HardwareModelSpec::Identity => Err(Error::NoLevelSet("identity")),
            HardwareModelSpec::Pruning { .. } => Err(Error::NoLevelSet("pruning")),
            HardwareModelSpec::PruningAsPrinted { .. } => {
                Err(Error::NoLevelSet("pruning_as_printed"))
            }
            HardwareModelSpec::Binary { delta } => Ok(vec![-delta, delta]),
            HardwareModelSpec::TernarySymmetric { delta } => {
                Ok(vec![-2.0 * delta, 0.0, 2.0 * delta])
            }
            HardwareModelSpec::TernaryAsymmetric { delta, beta } => {
                Ok(vec![-2.0 * delta * beta, 0.0, 2.0 * delta])
            }
            HardwareModelSpec::TernaryAsymmetricAsPrinted { delta, beta } => Ok(vec![
                -2.0 * delta * beta,
                2.0 * delta * (1.0 - beta),
                2.0 * delta,
            ]),
            HardwareModelSpec::Quinary {
                delta,
                beta1,
                beta2,
            } => {
                let (l1, l2) = (2.0 * delta * beta1, 2.0 * delta * (beta1 + beta2));
                Ok(vec![-l2, -l1, 0.0, l1, l2])
            }
        }
    }

    /// Transition thresholds of `g` in the mathematical-weight domain,
    /// ascending. Empty for identity.
    pub fn thresholds(&self) -> Vec<f64> {
        match *self {
            HardwareModelSpec::Identity => vec![],
            HardwareModelSpec::Binary { .. } => vec![0.0],
            HardwareModelSpec::TernarySymmetric { delta }
            | HardwareModelSpec::TernaryAsymmetric { delta, .. }
            | HardwareModelSpec::TernaryAsymmetricAsPrinted { delta, .. } => vec![-delta, delta],
            HardwareModelSpec::Quinary { delta, .. } => {
                vec![-3.0 * delta, -delta, delta, 3.0 * delta]
            }
            HardwareModelSpec::Pruning { w0 } | HardwareModelSpec::PruningAsPrinted { w0 } => {
                vec![-w0, w0]
            }
        }
    }

    /// Pointwise `w_sc → 0` limit of [`value`](Self::value), defined for every
    /// kind. A weight exactly on a threshold goes to the level nearer zero;
    /// binary sends `w = 0` to `+Δ`.
    pub fn hard_value<T: Scalar>(&self, w: T) -> T {
        let x = w.as_f64();
        let out = match *self {
            HardwareModelSpec::Identity => x,
            HardwareModelSpec::Binary { delta } => {
                if x < 0.0 {
                    -delta
                } else {
                    delta
                }
            }
            HardwareModelSpec::TernarySymmetric { delta } => {
                ternary_pick(x, delta, -2.0 * delta, 0.0, 2.0 * delta)
            }
            HardwareModelSpec::TernaryAsymmetric { delta, beta } => {
                ternary_pick(x, delta, -2.0 * delta * beta, 0.0, 2.0 * delta)
            }
            HardwareModelSpec::TernaryAsymmetricAsPrinted { delta, beta } => ternary_pick(
                x,
                delta,
                -2.0 * delta * beta,
                2.0 * delta * (1.0 - beta),
                2.0 * delta,
            ),
            HardwareModelSpec::Quinary {
                delta,
                beta1,
                beta2,
            } => {
                let a = x.abs();
                let mag = if a > 3.0 * delta {
                    2.0 * delta * (beta1 + beta2)
                } else if a > delta {
                    2.0 * delta * beta1
                } else {
                    0.0
                };
                mag.copysign(x)
            }
            HardwareModelSpec::Pruning { w0 } => {
                if x.abs() <= w0 {
                    0.0
                } else {
                    x
                }
            }
            HardwareModelSpec::PruningAsPrinted { w0 } => {
                if x.abs() < w0 {
                    2.0 * x
                } else {
                    x
                }
            }
        };
        // `copysign` above can produce -0.0; normalize.
        T::of(out + 0.0)
    }

    /// Direct quantization onto the hard level set. Errors for kinds
    /// without a finite level set.
    pub fn quantize_direct<T: Scalar>(&self, w: T) -> Result<T> {
        self.hard_levels()?;
        Ok(self.hard_value(w))
    }
}

fn ternary_pick(x: f64, delta: f64, low: f64, mid: f64, high: f64) -> f64 {
    if x > delta {
        high
    } else if x < -delta {
        low
    } else {
        mid
    }
}

/// Checked `g(w; w_sc)`.
pub fn g_value<T: Scalar>(spec: &HardwareModelSpec, w_sc: f64, w: T) -> Result<T> {
    check_w_sc(w_sc)?;
    Ok(spec.value(T::of(w_sc), w))
}

/// Checked `∂g/∂w`.
pub fn g_derivative<T: Scalar>(spec: &HardwareModelSpec, w_sc: f64, w: T) -> Result<T> {
    check_w_sc(w_sc)?;
    Ok(spec.derivative(T::of(w_sc), w))
}

/// Quinary distortion factors `(β1, β2)` from a finite on-conductance FET in
/// series with each binary-weighted ladder branch of conductance `2^k g0`.
///
/// Branch `k` conducts `1 / (1/g_fet_on + 1/(2^k g0))`; the factors are the
/// branch conductances normalized by their ideal values `g0` and `2 g0`.
pub fn derive_quinary_betas(g_fet_on: f64, g0: f64) -> Result<(f64, f64)> {
    positive("g_fet_on", g_fet_on)?;
    positive("g0", g0)?;
    let branch = |k: i32| 1.0 / (1.0 / g_fet_on + 1.0 / (2f64.powi(k) * g0));
    Ok((branch(0) / g0, branch(1) / (2.0 * g0)))
}

/// Geometric interpolation `init^(1-α) · final^α` of the realism scale.
pub fn wsc_from_alpha(alpha: f64, w_sc_init: f64, w_sc_final: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    positive("w_sc_final", w_sc_final)?;
    if w_sc_init <= w_sc_final {
        return Err(Error::invalid(format!(
            "w_sc_init ({w_sc_init}) must exceed w_sc_final ({w_sc_final})"
        )));
    }
    if alpha == 0.0 {
        return Ok(w_sc_init);
    }
    if alpha == 1.0 {
        return Ok(w_sc_final);
    }
    Ok(w_sc_init.powf(1.0 - alpha) * w_sc_final.powf(alpha))
}

fn default_lr_scale() -> f64 {
    1.0
}

fn is_unit(v: &f64) -> bool {
    *v == 1.0
}

/// One continuation stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub w_sc: f64,
    pub epochs: usize,
    /// Activation transition scale for `hw_binary` hidden units. Defaults
    /// to `w_sc`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_sc: Option<f64>,
    /// Multiplier on the base learning rate during this stage.
    #[serde(default = "default_lr_scale", skip_serializing_if = "is_unit")]
    pub lr_scale: f64,
}

impl Stage {
    pub fn new(w_sc: f64, epochs: usize) -> Self {
        Self {
            w_sc,
            epochs,
            z_sc: None,
            lr_scale: 1.0,
        }
    }

    pub fn z_sc(&self) -> f64 {
        self.z_sc.unwrap_or(self.w_sc)
    }
}

/// Ordered realism stages; `w_sc` strictly decreases, and the last stage
/// defines the exact model used for validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Stage>", into = "Vec<Stage>")]
pub struct ContinuationSchedule {
    stages: Vec<Stage>,
}

impl TryFrom<Vec<Stage>> for ContinuationSchedule {
    type Error = Error;

    fn try_from(stages: Vec<Stage>) -> Result<Self> {
        ContinuationSchedule::new(stages)
    }
}

impl From<ContinuationSchedule> for Vec<Stage> {
    fn from(s: ContinuationSchedule) -> Self {
        s.stages
    }
}

impl ContinuationSchedule {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::EmptySchedule);
        }
        for s in &stages {
            check_w_sc(s.w_sc)?;
            if let Some(z) = s.z_sc {
                positive("z_sc", z)?;
            }
            positive("lr_scale", s.lr_scale)?;
        }
        if stages.windows(2).any(|p| p[1].w_sc >= p[0].w_sc) {
            return Err(Error::invalid("w_sc must strictly decrease across stages"));
        }
        Ok(Self { stages })
    }

    /// Stages generated from continuation parameters `α` via
    /// [`wsc_from_alpha`], each run for `epochs`.
    pub fn from_alphas(
        alphas: &[f64],
        w_sc_init: f64,
        w_sc_final: f64,
        epochs: usize,
    ) -> Result<Self> {
        let stages = alphas
            .iter()
            .map(|&a| Ok(Stage::new(wsc_from_alpha(a, w_sc_init, w_sc_final)?, epochs)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(stages)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn final_stage(&self) -> &Stage {
        self.stages.last().expect("schedule is non-empty")
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }
}
