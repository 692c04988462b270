//! ADAM, the staged hardware-aware training loop, and the baselines it is
//! compared against.
//!
//! Training starts from floating-point weights `w_fp`. Each stage of the
//! [`ContinuationSchedule`] rebuilds the network view with a sharper hardware
//! model and continues ADAM from the previous stage's weights. Validation is
//! always scored under the final (sharpest) stage's model.

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::dataio::DatasetSplit;
use crate::hwmodels::{ContinuationSchedule, HardwareModelSpec, Stage};
use crate::network::{
    backward, evaluate, forward, ActivationSpec, Evaluation, MlpParams, Topology, WeightModel,
};
use crate::numerics::Rng;
use crate::{Error, Matrix, Result, Scalar};

/// ADAM hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub decay1: f64,
    pub decay2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            decay1: 0.9,
            decay2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// L1/L2 penalty coefficients on the mathematical weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    pub l1: f64,
    pub l2: f64,
}

/// First/second moment accumulators for every parameter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Vec<Matrix<T>>,
    second: Vec<Matrix<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &MlpParams<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Matrix<T>> = params
            .layers()
            .iter()
            .map(|l| Matrix::zeros(l.rows(), l.cols()))
            .collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected ADAM update. Data gradients are clipped entrywise
    /// to `±clip`; the L2 term `l2·w` and L1 term `l1·sign(w)` are added
    /// before the moment update.
    pub fn step(
        &mut self,
        params: &mut MlpParams<T>,
        grads: &[Matrix<T>],
        reg: Regularization,
        clip: Option<f64>,
        lr_scale: f64,
    ) -> Result<()> {
        if grads.len() != params.layers().len() {
            return Err(Error::invalid(format!(
                "{} gradient matrices for {} layers",
                grads.len(),
                params.layers().len()
            )));
        }
        for (g, w) in grads.iter().zip(params.layers()) {
            if g.shape() != w.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: w.shape(),
                    right: g.shape(),
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::of(c.decay1);
        let b2 = T::of(c.decay2);
        let one = T::one();
        let corr1 = T::of(1.0 - c.decay1.powi(t));
        let corr2 = T::of(1.0 - c.decay2.powi(t));
        let lr = T::of(c.lr * lr_scale);
        let eps = T::of(c.epsilon);
        let (l1, l2) = (T::of(reg.l1), T::of(reg.l2));
        let clip = clip.map(T::of);

        for (((w, g), m), v) in params
            .layers_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((w, &g), m), v) in w
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let mut g = match clip {
                    Some(c) => g.max(-c).min(c),
                    None => g,
                };
                if l2 > T::zero() {
                    g = g + l2 * *w;
                }
                if l1 > T::zero() && *w != T::zero() {
                    g = g + l1 * w.signum();
                }
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Grid of hyperparameters searched by [`hyperparam_search`]; the cartesian
/// product of the lists. Empty lists default to the configured value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperparamGrid {
    pub delta: Vec<f64>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
}

/// One point of a [`HyperparamGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub delta: Option<f64>,
    pub l1: f64,
    pub l2: f64,
}

impl HyperparamGrid {
    pub fn points(&self, base: &TrainConfig) -> Result<Vec<Hyperparams>> {
        if self.delta.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::invalid("grid deltas must be positive"));
        }
        if self.l1.iter().chain(&self.l2).any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid("grid regularization must be non-negative"));
        }
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let deltas: Vec<Option<f64>> = if self.delta.is_empty() {
            vec![base.weight_model.delta()]
        } else {
            self.delta.iter().map(|&d| Some(d)).collect()
        };
        let mut out = Vec::new();
        for &delta in &deltas {
            for &l1 in &or(&self.l1, base.l1) {
                for &l2 in &or(&self.l2, base.l2) {
                    out.push(Hyperparams { delta, l1, l2 });
                }
            }
        }
        Ok(out)
    }
}

fn default_version() -> u32 {
    1
}
fn default_fp_epochs() -> usize {
    10
}
fn default_batch() -> usize {
    100
}
fn default_clip() -> Option<f64> {
    Some(1e3)
}
fn default_valid_fraction() -> f64 {
    1.0 / 6.0
}
fn default_schedule() -> ContinuationSchedule {
    ContinuationSchedule::new(vec![Stage::new(0.05, 5), Stage::new(0.005, 5)])
        .expect("default schedule is valid")
}
fn default_activation() -> ActivationSpec {
    ActivationSpec::Relu
}

/// Full description of a training run, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub hidden: Vec<usize>,
    pub weight_model: HardwareModelSpec,
    #[serde(default = "default_activation")]
    pub activation: ActivationSpec,
    #[serde(default = "default_schedule")]
    pub schedule: ContinuationSchedule,
    #[serde(default = "default_fp_epochs")]
    pub fp_pretrain_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub l1: f64,
    #[serde(default)]
    pub l2: f64,
    /// Regularization during floating-point pretraining (none by default).
    #[serde(default)]
    pub fp_regularization: Regularization,
    /// Entrywise clip on data gradients; `null` disables.
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_valid_fraction")]
    pub valid_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<HyperparamGrid>,
    /// Absolute Δ values for the direct-transfer scan; derived from the
    /// weight spread when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_scan: Option<Vec<f64>>,
}

pub const CONFIG_VERSION: u32 = 1;

impl TrainConfig {
    pub fn new(hidden: Vec<usize>, weight_model: HardwareModelSpec) -> Self {
        Self {
            version: CONFIG_VERSION,
            hidden,
            weight_model,
            activation: default_activation(),
            schedule: default_schedule(),
            fp_pretrain_epochs: default_fp_epochs(),
            batch_size: default_batch(),
            adam: AdamConfig::default(),
            l1: 0.0,
            l2: 0.0,
            fp_regularization: Regularization::default(),
            grad_clip: default_clip(),
            seed: 0,
            valid_fraction: default_valid_fraction(),
            grid: None,
            delta_scan: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Format(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden layer sizes must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.schedule.stages().iter().any(|s| s.epochs == 0) {
            return Err(Error::invalid("every stage needs at least one epoch"));
        }
        let regs = [
            self.l1,
            self.l2,
            self.fp_regularization.l1,
            self.fp_regularization.l2,
        ];
        if regs.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("regularization coefficients must be non-negative"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::invalid("grad_clip must be positive"));
            }
        }
        self.weight_model.validate()?;
        self.activation.validate()
    }

    pub fn regularization(&self) -> Regularization {
        Regularization {
            l1: self.l1,
            l2: self.l2,
        }
    }

    pub fn topology<T: Scalar>(&self, data: &DatasetSplit<T>) -> Topology {
        Topology::new(data.num_inputs(), self.hidden.clone(), data.num_classes)
    }

    /// Weight model and activation of the final (exact) stage.
    pub fn exact_view(&self) -> (WeightModel, ActivationSpec) {
        let last = self.schedule.final_stage();
        (
            WeightModel {
                spec: self.weight_model,
                w_sc: Some(last.w_sc),
            },
            self.activation.with_scale(last.z_sc()),
        )
    }

    /// Hard (`w_sc → 0`, `z_sc → 0`) weight model and activation: what the
    /// hardware actually computes.
    pub fn hard_view(&self) -> (WeightModel, ActivationSpec) {
        (WeightModel::hard(self.weight_model), self.activation.hard())
    }
}

/// Metrics of one epoch. Train metrics are running means over the epoch's
/// mini-batches under the stage's training model; validation uses the exact
/// model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    pub train_accuracy: f64,
    pub train_cost: f64,
    pub valid_accuracy: f64,
    pub valid_cost: f64,
}

/// Per-stage summary. `entry_*` scores the incoming weights under the
/// stage's model before any update, exposing the model-switch drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub label: String,
    pub w_sc: Option<f64>,
    pub z_sc: Option<f64>,
    pub epochs: usize,
    pub entry_train_accuracy: f64,
    pub entry_train_cost: f64,
}

/// History and outcome of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stages: Vec<StageRecord>,
    pub epochs: Vec<EpochRecord>,
    pub final_train_accuracy: f64,
    pub final_valid_accuracy: f64,
    pub final_valid_cost: f64,
    /// Test accuracy under the final stage's smooth model.
    pub final_test_accuracy: f64,
    /// Test accuracy under the hard (`w_sc → 0`) model.
    pub final_test_accuracy_hard: f64,
    pub hyperparams: Option<Hyperparams>,
    pub wall_time_s: f64,
}

impl TrainReport {
    /// Appends another run's history, renumbering its epochs to follow on.
    pub fn extend(&mut self, other: &TrainReport) {
        let offset = self.epochs.last().map_or(0, |e| e.epoch);
        self.stages.extend(other.stages.iter().cloned());
        self.epochs.extend(other.epochs.iter().map(|e| EpochRecord {
            epoch: e.epoch + offset,
            ..e.clone()
        }));
        self.final_train_accuracy = other.final_train_accuracy;
        self.final_valid_accuracy = other.final_valid_accuracy;
        self.final_valid_cost = other.final_valid_cost;
        self.final_test_accuracy = other.final_test_accuracy;
        self.final_test_accuracy_hard = other.final_test_accuracy_hard;
        self.hyperparams = other.hyperparams.or(self.hyperparams);
        self.wall_time_s += other.wall_time_s;
    }

    pub fn stage_epochs(&self, label: &str) -> Vec<&EpochRecord> {
        self.epochs.iter().filter(|e| e.stage == label).collect()
    }

    /// CSV with columns `epoch,stage,train_acc,valid_acc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,stage,train_acc,valid_acc\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.stage, e.train_accuracy, e.valid_accuracy
            ));
        }
        out
    }
}

struct Phase<'a> {
    label: &'a str,
    model: WeightModel,
    act: ActivationSpec,
    epochs: usize,
    lr_scale: f64,
    reg: Regularization,
}

/// Mini-batch ADAM over `phase.epochs` epochs; appends one record per epoch.
#[allow(clippy::too_many_arguments)]
fn run_phase<T: Scalar>(
    params: &mut MlpParams<T>,
    config: &TrainConfig,
    data: &DatasetSplit<T>,
    phase: &Phase<'_>,
    valid_view: (&WeightModel, &ActivationSpec),
    rng: &mut Rng,
    report: &mut TrainReport,
) -> Result<()> {
    let entry = evaluate(params, &phase.model, &phase.act, &data.x_train, &data.y_train)?;
    report.stages.push(StageRecord {
        label: phase.label.to_string(),
        w_sc: phase.model.w_sc,
        z_sc: match phase.act {
            ActivationSpec::HwBinary { z_sc } => Some(z_sc),
            ActivationSpec::Relu => None,
        },
        epochs: phase.epochs,
        entry_train_accuracy: entry.accuracy,
        entry_train_cost: entry.cost,
    });
    info!(
        "stage {} entry: train acc {:.4} cost {:.4}",
        phase.label, entry.accuracy, entry.cost
    );

    let mut adam = AdamState::new(params, config.adam);
    let n = data.x_train.rows();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..phase.epochs {
        rng.shuffle(&mut order);
        let (mut cost, mut hits) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let x = data.x_train.select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| data.y_train[i]).collect();
            let trace = forward(params, &phase.model, &phase.act, &x)?;
            cost += crate::network::cross_entropy(&trace, &y) * y.len() as f64;
            hits += crate::network::accuracy(&trace, &y) * y.len() as f64;
            let grads = backward(&trace, params, &phase.model, &phase.act, &y)?;
            adam.step(params, &grads, phase.reg, config.grad_clip, phase.lr_scale)?;
        }
        let valid = evaluate(params, valid_view.0, valid_view.1, &data.x_valid, &data.y_valid)?;
        let record = EpochRecord {
            stage: phase.label.to_string(),
            epoch: report.epochs.last().map_or(1, |e| e.epoch + 1),
            train_accuracy: hits / n as f64,
            train_cost: cost / n as f64,
            valid_accuracy: valid.accuracy,
            valid_cost: valid.cost,
        };
        info!(
            "stage {} epoch {}: train acc {:.4} valid acc {:.4}",
            record.stage, record.epoch, record.train_accuracy, record.valid_accuracy
        );
        report.epochs.push(record);
    }
    Ok(())
}

fn finish<T: Scalar>(
    params: &MlpParams<T>,
    data: &DatasetSplit<T>,
    exact: (&WeightModel, &ActivationSpec),
    hard: (&WeightModel, &ActivationSpec),
    report: &mut TrainReport,
) -> Result<()> {
    let train = evaluate(params, exact.0, exact.1, &data.x_train, &data.y_train)?;
    let valid = evaluate(params, exact.0, exact.1, &data.x_valid, &data.y_valid)?;
    let test = evaluate(params, exact.0, exact.1, &data.x_test, &data.y_test)?;
    let test_hard = evaluate(params, hard.0, hard.1, &data.x_test, &data.y_test)?;
    report.final_train_accuracy = train.accuracy;
    report.final_valid_accuracy = valid.accuracy;
    report.final_valid_cost = valid.cost;
    report.final_test_accuracy = test.accuracy;
    report.final_test_accuracy_hard = test_hard.accuracy;
    Ok(())
}

/// Floating-point pretraining (`w_FP`): identity weight model, the
/// configured activation, `fp_pretrain_epochs` epochs from a scaled normal
/// initialization.
pub fn pretrain_fp<T: Scalar>(
    config: &TrainConfig,
    data: &DatasetSplit<T>,
    rng: &mut Rng,
) -> Result<(MlpParams<T>, TrainReport)> {
    config.validate()?;
    if config.fp_pretrain_epochs == 0 {
        return Err(Error::invalid("fp_pretrain_epochs must be at least 1"));
    }
    let started = Instant::now();
    let mut params = MlpParams::init(&config.topology(data), rng)?;
    let model = WeightModel::identity();
    let act = config.activation;
    let mut report = TrainReport::default();
    let phase = Phase {
        label: "FP",
        model,
        act,
        epochs: config.fp_pretrain_epochs,
        lr_scale: 1.0,
        reg: config.fp_regularization,
    };
    run_phase(&mut params, config, data, &phase, (&model, &act), rng, &mut report)?;
    finish(&params, data, (&model, &act), (&model, &act), &mut report)?;
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((params, report))
}

/// Staged hardware-aware refinement of `w_fp`.
pub fn hw_approx_train<T: Scalar>(
    config: &TrainConfig,
    data: &DatasetSplit<T>,
    w_fp: &MlpParams<T>,
    rng: &mut Rng,
) -> Result<(MlpParams<T>, TrainReport)> {
    config.validate()?;
    let topology = config.topology(data);
    if w_fp.topology() != topology {
        return Err(Error::TopologyMismatch {
            expected: topology.to_string(),
            found: w_fp.topology().to_string(),
        });
    }
    let started = Instant::now();
    let (exact_model, exact_act) = config.exact_view();
    let (hard_model, hard_act) = config.hard_view();
    let mut params = w_fp.clone();
    let mut report = TrainReport::default();
    for (i, stage) in config.schedule.stages().iter().enumerate() {
        let label = format!("T{}", i + 1);
        let phase = Phase {
            label: &label,
            model: WeightModel::smooth(config.weight_model, stage.w_sc)?,
            act: config.activation.with_scale(stage.z_sc()),
            epochs: stage.epochs,
            lr_scale: stage.lr_scale,
            reg: config.regularization(),
        };
        run_phase(
            &mut params,
            config,
            data,
            &phase,
            (&exact_model, &exact_act),
            rng,
            &mut report,
        )?;
    }
    finish(
        &params,
        data,
        (&exact_model, &exact_act),
        (&hard_model, &hard_act),
        &mut report,
    )?;
    report.hyperparams = Some(Hyperparams {
        delta: config.weight_model.delta(),
        l1: config.l1,
        l2: config.l2,
    });
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((params, report))
}

/// Index of the smallest cost; the first one wins ties.
pub fn argmin_first(costs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &c) in costs.iter().enumerate() {
        if best.is_none_or(|b| c < costs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Outcome of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub hyperparams: Hyperparams,
    pub valid_cost: f64,
    pub valid_accuracy: f64,
    pub test_accuracy: f64,
}

/// Result of [`hyperparam_search`].
#[derive(Debug, Clone)]
pub struct SearchOutcome<T> {
    pub params: MlpParams<T>,
    pub report: TrainReport,
    pub best: usize,
    pub results: Vec<GridResult>,
}

/// Exhaustive grid search: every point restarts from `w_fp` with an
/// identical generator state, and the point with the lowest validation
/// cross-entropy under the exact model wins.
pub fn hyperparam_search<T: Scalar>(
    grid: &HyperparamGrid,
    config: &TrainConfig,
    data: &DatasetSplit<T>,
    w_fp: &MlpParams<T>,
    rng: &Rng,
) -> Result<SearchOutcome<T>> {
    let points = grid.points(config)?;
    let mut results = Vec::with_capacity(points.len());
    let mut best: Option<(MlpParams<T>, TrainReport)> = None;
    let mut best_cost = f64::INFINITY;
    for hp in points {
        let mut cfg = config.clone();
        if let Some(d) = hp.delta {
            cfg.weight_model = cfg.weight_model.with_delta(d);
        }
        cfg.l1 = hp.l1;
        cfg.l2 = hp.l2;
        let mut point_rng = rng.clone();
        let (params, report) = hw_approx_train(&cfg, data, w_fp, &mut point_rng)?;
        info!(
            "grid point {:?}: valid cost {:.4} acc {:.4}",
            hp, report.final_valid_cost, report.final_valid_accuracy
        );
        results.push(GridResult {
            hyperparams: hp,
            valid_cost: report.final_valid_cost,
            valid_accuracy: report.final_valid_accuracy,
            test_accuracy: report.final_test_accuracy,
        });
        if best.is_none() || report.final_valid_cost < best_cost {
            best_cost = report.final_valid_cost;
            best = Some((params, report));
        }
    }
    let costs: Vec<f64> = results.iter().map(|r| r.valid_cost).collect();
    let best_idx = argmin_first(&costs).ok_or_else(|| Error::invalid("empty grid"))?;
    let (params, report) = best.expect("non-empty grid");
    Ok(SearchOutcome {
        params,
        report,
        best: best_idx,
        results,
    })
}

/// Δ candidates for direct transfer: `points` log-spaced multiples in
/// `[0.05, 2.0]` of the pooled weight standard deviation.
pub fn default_delta_scan<T: Scalar>(w_fp: &MlpParams<T>, points: usize) -> Vec<f64> {
    let all: Vec<f64> = w_fp
        .layers()
        .iter()
        .flat_map(|l| l.data().iter().map(|v| v.as_f64()))
        .collect();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let std = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (lo, hi) = (0.05f64.ln(), 2.0f64.ln());
    (0..points)
        .map(|i| {
            let f = if points == 1 { 0.0 } else { i as f64 / (points - 1) as f64 };
            (lo + f * (hi - lo)).exp() * std
        })
        .collect()
}

/// Outcome of [`direct_transfer_baseline`].
#[derive(Debug, Clone)]
pub struct DirectTransfer<T> {
    /// Hardware weights (hard levels) at the chosen Δ.
    pub quantized: MlpParams<T>,
    pub spec: HardwareModelSpec,
    pub valid_accuracy: f64,
    pub test_accuracy: f64,
}

/// Quantizes `w_fp` directly for every Δ in `delta_scan`, keeps the Δ with
/// the best validation accuracy (first on ties), and reports its test
/// accuracy. `act` is the activation used at inference.
pub fn direct_transfer_baseline<T: Scalar>(
    w_fp: &MlpParams<T>,
    spec: &HardwareModelSpec,
    act: &ActivationSpec,
    data: &DatasetSplit<T>,
    delta_scan: &[f64],
) -> Result<DirectTransfer<T>> {
    if delta_scan.is_empty() {
        return Err(Error::invalid("delta scan is empty"));
    }
    spec.hard_levels()?;
    let mut best: Option<(HardwareModelSpec, Evaluation)> = None;
    for &delta in delta_scan {
        let s = spec.with_delta(delta);
        s.validate()?;
        let valid = evaluate(w_fp, &WeightModel::hard(s), act, &data.x_valid, &data.y_valid)?;
        if best.is_none_or(|(_, b)| valid.accuracy > b.accuracy) {
            best = Some((s, valid));
        }
    }
    let (spec, valid) = best.expect("non-empty scan");
    let quantized = w_fp.map(|w| spec.hard_value(w));
    let test = evaluate(
        &quantized,
        &WeightModel::identity(),
        act,
        &data.x_test,
        &data.y_test,
    )?;
    Ok(DirectTransfer {
        quantized,
        spec,
        valid_accuracy: valid.accuracy,
        test_accuracy: test.accuracy,
    })
}

/// Fraction of weights the pruning model maps to exactly zero.
pub fn pruned_fraction<T: Scalar>(params: &MlpParams<T>, spec: &HardwareModelSpec) -> f64 {
    crate::evalreport::sparsity(params, spec)
}

/// Half-window `w0` such that a `fraction` of the weights have `|w| <= w0`.
pub fn w0_for_fraction<T: Scalar>(params: &MlpParams<T>, fraction: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction must lie in [0, 1), got {fraction}")));
    }
    let mut mags: Vec<f64> = params
        .layers()
        .iter()
        .flat_map(|l| l.data().iter().map(|v| v.abs().as_f64()))
        .collect();
    mags.sort_by(f64::total_cmp);
    let k = ((fraction * mags.len() as f64).ceil() as usize).clamp(1, mags.len());
    Ok(mags[k - 1].max(f64::MIN_POSITIVE))
}

/// Zeroes every weight with `|w| <= w0`, without retraining.
pub fn naive_prune<T: Scalar>(params: &MlpParams<T>, w0: f64) -> MlpParams<T> {
    let w0 = T::of(w0);
    params.map(|w| if w.abs() <= w0 { T::zero() } else { w })
}

/// Outcome of [`prune_train`].
#[derive(Debug, Clone)]
pub struct PruneOutcome<T> {
    pub params: MlpParams<T>,
    pub report: TrainReport,
    pub pruned_fraction: f64,
    pub test_accuracy: f64,
}

/// Hardware-aware pruning: staged training with the pruning model, then
/// every weight inside the window is snapped to exactly zero.
pub fn prune_train<T: Scalar>(
    config: &TrainConfig,
    data: &DatasetSplit<T>,
    w_fp: &MlpParams<T>,
    rng: &mut Rng,
) -> Result<PruneOutcome<T>> {
    let w0 = match config.weight_model {
        HardwareModelSpec::Pruning { w0 } | HardwareModelSpec::PruningAsPrinted { w0 } => w0,
        other => {
            return Err(Error::invalid(format!(
                "prune_train needs a pruning model, got {}",
                other.kind()
            )))
        }
    };
    let (trained, report) = hw_approx_train(config, data, w_fp, rng)?;
    let params = naive_prune(&trained, w0);
    let (_, act) = config.hard_view();
    let test = evaluate(
        &params,
        &WeightModel::identity(),
        &act,
        &data.x_test,
        &data.y_test,
    )?;
    Ok(PruneOutcome {
        pruned_fraction: pruned_fraction(&params, &config.weight_model),
        params,
        report,
        test_accuracy: test.accuracy,
    })
}
