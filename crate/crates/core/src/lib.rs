//! Hardware-aware training of multi-layer perceptrons.
//!
//! Every weight matrix of the network is viewed through a smooth hardware
//! model `g(w; w_sc)` that collapses onto the discrete (and possibly
//! distorted) levels a device can realize as the realism scale `w_sc`
//! shrinks. Training anneals `w_sc` stage by stage, starting from an
//! ordinary floating-point solution, so the final mathematical weights sit
//! well away from level-transition thresholds and survive transfer to the
//! hardware almost losslessly.
//!
//! Module map:
//!
//! - [`numerics`]: dense row-major [`Matrix`], seeded [`Rng`].
//! - [`hwmodels`]: the hardware-model family, exact derivatives, hard level
//!   sets and the continuation schedule.
//! - [`dataio`]: IDX loading and train/validation/test preparation.
//! - [`network`]: forward inference and backprop through the hardware view.
//! - [`training`]: ADAM, the staged training loop, hyperparameter search,
//!   direct-transfer and pruning baselines.
//! - [`evalreport`]: metrics, experiment records and size sweeps.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the CLI and the experiment drivers.

pub mod dataio;
pub mod error;
pub mod evalreport;
pub mod hwmodels;
pub mod network;
pub mod numerics;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use hwmodels::{ContinuationSchedule, HardwareModelSpec, ModelKind, Stage};
pub use network::{ActivationSpec, MlpParams, Topology, WeightModel};
pub use numerics::{Matrix, Rng};
pub use scalar::Scalar;

/// Double-precision matrix, the default working type.
pub type Matrix64 = Matrix<f64>;
/// Single-precision matrix.
pub type Matrix32 = Matrix<f32>;
/// Double-precision network parameters.
pub type MlpParams64 = MlpParams<f64>;
/// Single-precision network parameters.
pub type MlpParams32 = MlpParams<f32>;
