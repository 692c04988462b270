//! Experiment records and the network-size sweep.
//!
//! Records are appended one JSON object per line to `records.ndjson` in the
//! sweep directory, so an interrupted sweep resumes by skipping the cells
//! already present. [`write_csv`] exports the same records with the fixed
//! column order
//! `dataset,topology,model,method,seed,test_acc,error_vs_sw,pruned_fraction,runtime_s`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dataio::DatasetSplit;
use crate::hwmodels::HardwareModelSpec;
use crate::network::{evaluate, ActivationSpec, Checkpoint, MlpParams, WeightModel};
use crate::numerics::{derive_seed, Rng};
use crate::training::{
    default_delta_scan, direct_transfer_baseline, hw_approx_train, naive_prune, pretrain_fp,
    prune_train, TrainConfig,
};
use crate::{Error, Result, Scalar};

/// Software accuracy minus hardware accuracy; negative when the hardware
/// model does better.
pub fn error_vs_sw(sw_acc: f64, hw_acc: f64) -> f64 {
    sw_acc - hw_acc
}

/// Fraction of weights mapped to exactly zero by a pruning model (the
/// pruned fraction; `1 - pruned_fraction` of the weights are retained).
pub fn sparsity<T: Scalar>(params: &MlpParams<T>, model: &HardwareModelSpec) -> f64 {
    let total = params.num_weights();
    let zero = params
        .layers()
        .iter()
        .flat_map(|l| l.data())
        .filter(|&&w| model.hard_value(w) == T::zero())
        .count();
    zero as f64 / total.max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SwFp,
    Direct,
    HwAware,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::SwFp => "sw_fp",
            Method::Direct => "direct",
            Method::HwAware => "hw_aware",
        })
    }
}

/// Compact label of a hardware model, e.g. `ternary_asymmetric(delta=0.45,beta=0.75)`.
pub fn model_label(spec: &HardwareModelSpec) -> String {
    let kind = spec.kind().name();
    match *spec {
        HardwareModelSpec::Identity => kind.to_string(),
        HardwareModelSpec::Binary { delta } | HardwareModelSpec::TernarySymmetric { delta } => {
            format!("{kind}(delta={delta})")
        }
        HardwareModelSpec::TernaryAsymmetric { delta, beta }
        | HardwareModelSpec::TernaryAsymmetricAsPrinted { delta, beta } => {
            format!("{kind}(delta={delta},beta={beta})")
        }
        HardwareModelSpec::Quinary {
            delta,
            beta1,
            beta2,
        } => format!("{kind}(delta={delta},beta1={beta1},beta2={beta2})"),
        HardwareModelSpec::Pruning { w0 } | HardwareModelSpec::PruningAsPrinted { w0 } => {
            format!("{kind}(w0={w0})")
        }
    }
}

const FP_MODEL: &str = "fp";

/// One evaluated sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub dataset: String,
    pub topology: String,
    pub model: String,
    pub method: Method,
    pub seed: u64,
    pub test_accuracy: f64,
    pub error_vs_sw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruned_fraction: Option<f64>,
    pub runtime_s: f64,
}

/// Identity of a sweep cell.
pub type CellKey = (String, String, String, Method, u64);

impl ExperimentRecord {
    pub fn key(&self) -> CellKey {
        (
            self.dataset.clone(),
            self.topology.clone(),
            self.model.clone(),
            self.method,
            self.seed,
        )
    }
}

/// Hidden-layer arrangement of the benchmark networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Depth {
    /// One hidden layer.
    Single,
    /// Three identically sized hidden layers.
    Triple,
}

impl Depth {
    pub fn hidden(self, size: usize) -> Vec<usize> {
        match self {
            Depth::Single => vec![size],
            Depth::Triple => vec![size; 3],
        }
    }

    pub fn label(self, size: usize) -> String {
        match self {
            Depth::Single => format!("1x{size}"),
            Depth::Triple => format!("3x{size}"),
        }
    }
}

/// Axes of a size sweep. Training settings other than the hidden sizes and
/// the hardware model come from `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    #[serde(default = "plan_version")]
    pub version: u32,
    pub datasets: Vec<String>,
    pub sizes: Vec<usize>,
    pub depths: Vec<Depth>,
    pub models: Vec<HardwareModelSpec>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub base: TrainConfig,
}

fn plan_version() -> u32 {
    PLAN_VERSION
}

pub const PLAN_VERSION: u32 = 1;

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.version != PLAN_VERSION {
            return Err(Error::Format(format!(
                "sweep plan version {} is not supported (expected {PLAN_VERSION})",
                self.version
            )));
        }
        let empty = [
            ("datasets", self.datasets.is_empty()),
            ("sizes", self.sizes.is_empty()),
            ("depths", self.depths.is_empty()),
            ("models", self.models.is_empty()),
            ("methods", self.methods.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::invalid(format!("sweep axis `{name}` is empty")));
        }
        self.base.validate()
    }
}

pub const RECORDS_FILE: &str = "records.ndjson";
pub const FAILURES_FILE: &str = "failures.ndjson";

/// Reads an NDJSON record file; a missing file is an empty sweep.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ExperimentRecord>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn append_line(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(value)?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Writes the CSV export.
pub fn write_csv(records: &[ExperimentRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(
        "dataset,topology,model,method,seed,test_acc,error_vs_sw,pruned_fraction,runtime_s\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},\"{}\",{},{},{},{},{},{}\n",
            r.dataset,
            r.topology,
            r.model,
            r.method,
            r.seed,
            r.test_accuracy,
            r.error_vs_sw,
            r.pruned_fraction.map(|v| v.to_string()).unwrap_or_default(),
            r.runtime_s
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
struct Failure<'a> {
    dataset: &'a str,
    topology: &'a str,
    model: &'a str,
    method: Method,
    seed: u64,
    error: String,
}

struct Cell<'a, T> {
    dataset: &'a str,
    topology: String,
    seed: u64,
    config: TrainConfig,
    data: &'a DatasetSplit<T>,
}

impl<T: Scalar> Cell<'_, T> {
    fn rng(&self, model: &str, method: Method) -> Rng {
        Rng::new(derive_seed(
            self.seed,
            &[self.dataset, &self.topology, model, &method.to_string()],
        ))
    }

    fn record(
        &self,
        model: &str,
        method: Method,
        test_accuracy: f64,
        sw: f64,
        pruned: Option<f64>,
        started: Instant,
    ) -> ExperimentRecord {
        ExperimentRecord {
            dataset: self.dataset.to_string(),
            topology: self.topology.clone(),
            model: model.to_string(),
            method,
            seed: self.seed,
            test_accuracy,
            error_vs_sw: error_vs_sw(sw, test_accuracy),
            pruned_fraction: pruned,
            runtime_s: started.elapsed().as_secs_f64(),
        }
    }

    fn run_method(
        &self,
        spec: &HardwareModelSpec,
        method: Method,
        w_fp: &MlpParams<T>,
        sw: f64,
    ) -> Result<ExperimentRecord> {
        let started = Instant::now();
        let label = model_label(spec);
        let mut cfg = self.config.clone();
        cfg.weight_model = *spec;
        let pruning = matches!(
            spec,
            HardwareModelSpec::Pruning { .. } | HardwareModelSpec::PruningAsPrinted { .. }
        );
        match (method, pruning) {
            (Method::Direct, false) => {
                let scan = cfg
                    .delta_scan
                    .clone()
                    .unwrap_or_else(|| default_delta_scan(w_fp, 25));
                let (_, act) = cfg.hard_view();
                let d = direct_transfer_baseline(w_fp, spec, &act, self.data, &scan)?;
                Ok(self.record(&label, method, d.test_accuracy, sw, None, started))
            }
            (Method::Direct, true) => {
                let w0 = match spec {
                    HardwareModelSpec::Pruning { w0 } | HardwareModelSpec::PruningAsPrinted { w0 } => *w0,
                    _ => unreachable!(),
                };
                let pruned = naive_prune(w_fp, w0);
                let (_, act) = cfg.hard_view();
                let test = evaluate(
                    &pruned,
                    &WeightModel::identity(),
                    &act,
                    &self.data.x_test,
                    &self.data.y_test,
                )?;
                let frac = sparsity(&pruned, spec);
                Ok(self.record(&label, method, test.accuracy, sw, Some(frac), started))
            }
            (Method::HwAware, false) => {
                let mut rng = self.rng(&label, method);
                let (_, report) = hw_approx_train(&cfg, self.data, w_fp, &mut rng)?;
                Ok(self.record(
                    &label,
                    method,
                    report.final_test_accuracy_hard,
                    sw,
                    None,
                    started,
                ))
            }
            (Method::HwAware, true) => {
                let mut rng = self.rng(&label, method);
                let out = prune_train(&cfg, self.data, w_fp, &mut rng)?;
                Ok(self.record(
                    &label,
                    method,
                    out.test_accuracy,
                    sw,
                    Some(out.pruned_fraction),
                    started,
                ))
            }
            (Method::SwFp, _) => Err(Error::invalid("sw_fp is not a hardware method")),
        }
    }
}

/// Runs every (dataset, depth, size, seed) cell of the plan: one
/// floating-point baseline, then each requested method for each model.
/// Cells already in `out_dir/records.ndjson` are skipped; failed cells are
/// logged to `out_dir/failures.ndjson` and the sweep continues. Returns all
/// records sorted by cell key, so the result does not depend on execution
/// order.
pub fn size_sweep<T: Scalar>(
    plan: &SweepPlan,
    mut load: impl FnMut(&str) -> Result<DatasetSplit<T>>,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<ExperimentRecord>> {
    plan.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records_path = out_dir.join(RECORDS_FILE);
    let failures_path = out_dir.join(FAILURES_FILE);
    let mut records = read_records(&records_path)?;
    let mut done: BTreeSet<CellKey> = records.iter().map(ExperimentRecord::key).collect();

    for dataset in &plan.datasets {
        let data = load(dataset)?;
        for &depth in &plan.depths {
            for &size in &plan.sizes {
                for &seed in &plan.seeds {
                    let mut config = plan.base.clone();
                    config.hidden = depth.hidden(size);
                    let cell = Cell {
                        dataset,
                        topology: depth.label(size),
                        seed,
                        config,
                        data: &data,
                    };
                    let (w_fp, sw) = match fp_baseline(&cell, out_dir, &records) {
                        Ok(v) => v,
                        Err(e) => {
                            warn!("{dataset} {} seed {seed}: FP baseline failed: {e}", cell.topology);
                            append_line(
                                &failures_path,
                                &Failure {
                                    dataset,
                                    topology: &cell.topology,
                                    model: FP_MODEL,
                                    method: Method::SwFp,
                                    seed,
                                    error: e.to_string(),
                                },
                            )?;
                            continue;
                        }
                    };
                    let fp_key = (
                        dataset.clone(),
                        cell.topology.clone(),
                        FP_MODEL.to_string(),
                        Method::SwFp,
                        seed,
                    );
                    if !done.contains(&fp_key) {
                        let rec = ExperimentRecord {
                            dataset: dataset.clone(),
                            topology: cell.topology.clone(),
                            model: FP_MODEL.into(),
                            method: Method::SwFp,
                            seed,
                            test_accuracy: sw,
                            error_vs_sw: 0.0,
                            pruned_fraction: None,
                            runtime_s: 0.0,
                        };
                        append_line(&records_path, &rec)?;
                        done.insert(fp_key);
                        records.push(rec);
                    }
                    for spec in &plan.models {
                        for &method in plan.methods.iter().filter(|&&m| m != Method::SwFp) {
                            let key = (
                                dataset.clone(),
                                cell.topology.clone(),
                                model_label(spec),
                                method,
                                seed,
                            );
                            if done.contains(&key) {
                                continue;
                            }
                            match cell.run_method(spec, method, &w_fp, sw) {
                                Ok(rec) => {
                                    info!(
                                        "{} {} {} {}: test acc {:.4}, error vs sw {:.4}",
                                        rec.dataset,
                                        rec.topology,
                                        rec.model,
                                        rec.method,
                                        rec.test_accuracy,
                                        rec.error_vs_sw
                                    );
                                    append_line(&records_path, &rec)?;
                                    done.insert(key);
                                    records.push(rec);
                                }
                                Err(e) => {
                                    warn!("cell {key:?} failed: {e}");
                                    append_line(
                                        &failures_path,
                                        &Failure {
                                            dataset,
                                            topology: &cell.topology,
                                            model: &key.2,
                                            method,
                                            seed,
                                            error: e.to_string(),
                                        },
                                    )?;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    records.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok(records)
}

fn fp_checkpoint_path<T>(out_dir: &Path, cell: &Cell<'_, T>) -> PathBuf {
    out_dir.join(format!(
        "fp-{}-{}-s{}.json",
        cell.dataset, cell.topology, cell.seed
    ))
}

/// Loads or trains the cell's floating-point weights and returns them with
/// their test accuracy.
fn fp_baseline<T: Scalar>(
    cell: &Cell<'_, T>,
    out_dir: &Path,
    records: &[ExperimentRecord],
) -> Result<(MlpParams<T>, f64)> {
    let path = fp_checkpoint_path(out_dir, cell);
    let act = cell.config.activation;
    if path.exists() {
        let params: MlpParams<T> = Checkpoint::load(&path)?.params()?;
        let known = records.iter().find(|r| {
            r.method == Method::SwFp
                && r.dataset == cell.dataset
                && r.topology == cell.topology
                && r.seed == cell.seed
        });
        let sw = match known {
            Some(r) => r.test_accuracy,
            None => {
                evaluate(
                    &params,
                    &WeightModel::identity(),
                    &act,
                    &cell.data.x_test,
                    &cell.data.y_test,
                )?
                .accuracy
            }
        };
        return Ok((params, sw));
    }
    let mut rng = cell.rng(FP_MODEL, Method::SwFp);
    let (params, report) = pretrain_fp(&cell.config, cell.data, &mut rng)?;
    Checkpoint::new(&params, HardwareModelSpec::Identity, None, act).save(&path)?;
    Ok((params, report.final_test_accuracy))
}

/// Per-seed check that every record's `error_vs_sw` equals its paired
/// baseline accuracy minus its own accuracy.
pub fn check_pairing(records: &[ExperimentRecord]) -> Result<()> {
    for r in records.iter().filter(|r| r.method != Method::SwFp) {
        let sw = records
            .iter()
            .find(|b| {
                b.method == Method::SwFp
                    && b.dataset == r.dataset
                    && b.topology == r.topology
                    && b.seed == r.seed
            })
            .ok_or_else(|| Error::invalid(format!("no sw_fp record for {:?}", r.key())))?;
        if error_vs_sw(sw.test_accuracy, r.test_accuracy) != r.error_vs_sw {
            return Err(Error::invalid(format!("inconsistent error_vs_sw in {:?}", r.key())));
        }
    }
    Ok(())
}

/// Activation a model family is evaluated with, when a sweep mixes them.
pub fn default_activation_for(spec: &HardwareModelSpec) -> ActivationSpec {
    match spec {
        HardwareModelSpec::Binary { .. } => ActivationSpec::HwBinary { z_sc: 1.0 },
        _ => ActivationSpec::Relu,
    }
}
