//! `hwaware` command-line driver.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage error, 3 missing file,
//! 4 config or schema violation, 5 topology/checkpoint mismatch,
//! 6 malformed dataset file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use hwaware::dataio::{load_dir, prepare, DatasetSplit};
use hwaware::evalreport::{error_vs_sw, model_label, size_sweep, write_csv, SweepPlan};
use hwaware::network::{evaluate, Checkpoint};
use hwaware::training::{
    default_delta_scan, direct_transfer_baseline, hw_approx_train, hyperparam_search,
    naive_prune, pretrain_fp, prune_train, w0_for_fraction, TrainConfig, TrainReport,
};
use hwaware::{HardwareModelSpec, MlpParams, Rng, WeightModel};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::Serialize;

const EXIT_FAILURE: u8 = 1;
const EXIT_MISSING: u8 = 3;
const EXIT_SCHEMA: u8 = 4;
const EXIT_TOPOLOGY: u8 = 5;
const EXIT_DATA: u8 = 6;

#[derive(Parser, Debug)]
#[command(name = "hwaware", version, about = "Hardware-aware training of MLPs with discrete weights")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config (training config, or sweep plan for `sweep`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset directory with train-/t10k- IDX files (per-dataset
    /// subdirectories for `sweep`).
    #[arg(long, global = true, env = "HWAWARE_DATA_DIR")]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only warnings and errors on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Undo the transposed storage of EMNIST images.
    #[arg(long, global = true)]
    transpose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Floating-point pretraining; writes fp.json and fp-report.{json,csv}.
    Pretrain,
    /// Staged hardware-aware training from an FP checkpoint; writes hw.json
    /// and hw-report.{json,csv}. Runs the grid search when the config has one.
    Hwtrain {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Direct quantization of an FP checkpoint; writes direct.json and
    /// baseline-report.json.
    Baseline {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Hardware-aware pruning; writes pruned.json and prune-report.json.
    Prune {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Choose w0 so this fraction of the FP weights lies in the window.
        #[arg(long)]
        target_fraction: Option<f64>,
    },
    /// Size sweep; appends to records.ndjson and writes records.csv.
    Sweep,
    /// Prints the test accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Hardware model JSON to evaluate under instead of the checkpoint's.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Realism scale; defaults to the checkpoint's.
        #[arg(long)]
        w_sc: Option<f64>,
        /// Evaluate the abrupt (w_sc -> 0) hardware.
        #[arg(long)]
        hard: bool,
    },
}

/// Error carrying its exit code.
#[derive(Debug)]
struct Coded(u8, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Coded {
    fn from(e: E) -> Self {
        let e = e.into();
        Coded(classify(&e), e)
    }
}

fn classify(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<hwaware::Error>() {
            return match err {
                hwaware::Error::Io { source, .. }
                    if source.kind() == std::io::ErrorKind::NotFound =>
                {
                    EXIT_MISSING
                }
                hwaware::Error::TopologyMismatch { .. } => EXIT_TOPOLOGY,
                hwaware::Error::BadMagic { .. }
                | hwaware::Error::Truncated { .. }
                | hwaware::Error::DimensionOverflow { .. }
                | hwaware::Error::CountMismatch { .. } => EXIT_DATA,
                hwaware::Error::Json(_)
                | hwaware::Error::Format(_)
                | hwaware::Error::InvalidParameter(_)
                | hwaware::Error::EmptySchedule
                | hwaware::Error::NoLevelSet(_) => EXIT_SCHEMA,
                _ => EXIT_FAILURE,
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return EXIT_SCHEMA;
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return EXIT_MISSING;
            }
        }
    }
    EXIT_FAILURE
}

fn fail(code: u8, msg: impl Into<String>) -> Coded {
    Coded(code, anyhow!(msg.into()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Coded> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(|e| Coded(EXIT_SCHEMA, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Coded> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_report(out: &Path, stem: &str, report: &TrainReport) -> Result<(), Coded> {
    write_json(&out.join(format!("{stem}.json")), report)?;
    let csv = out.join(format!("{stem}.csv"));
    fs::write(&csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    Ok(())
}

fn load_config(common: &Common) -> Result<TrainConfig, Coded> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| fail(2, "--config is required for this command"))?;
    let mut config: TrainConfig = read_json(path)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config
        .validate()
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(|e| Coded(EXIT_SCHEMA, e))?;
    Ok(config)
}

fn load_data(dir: &Path, transpose: bool, valid_fraction: f64, seed: u64) -> Result<DatasetSplit<f64>, Coded> {
    let (train, test) = load_dir(dir, transpose)?;
    info!(
        "loaded {} training and {} test images from {}",
        train.len(),
        test.len(),
        dir.display()
    );
    Ok(prepare(&train, &test, valid_fraction, seed)?)
}

fn data_dir(common: &Common) -> Result<&Path, Coded> {
    common
        .data
        .as_deref()
        .ok_or_else(|| fail(2, "--data (or HWAWARE_DATA_DIR) is required for this command"))
}

fn out_dir(common: &Common) -> Result<&Path, Coded> {
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    Ok(&common.out)
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, MlpParams<f64>), Coded> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let params = ck.params()?;
    Ok((ck, params))
}

/// Rejects checkpoints whose input or class count does not fit the data.
fn check_fits(ck: &Checkpoint, data: &DatasetSplit<f64>) -> Result<(), Coded> {
    if ck.topology.inputs != data.num_inputs() || ck.topology.classes != data.num_classes {
        return Err(hwaware::Error::TopologyMismatch {
            expected: format!("{} inputs, {} classes", data.num_inputs(), data.num_classes),
            found: ck.topology.to_string(),
        }
        .into());
    }
    Ok(())
}

fn sw_accuracy(ck: &Checkpoint, params: &MlpParams<f64>, data: &DatasetSplit<f64>) -> Result<f64, Coded> {
    Ok(evaluate(params, &WeightModel::identity(), &ck.activation, &data.x_test, &data.y_test)?.accuracy)
}

fn pretrain(common: &Common) -> Result<(), Coded> {
    let config = load_config(common)?;
    let data = load_data(data_dir(common)?, common.transpose, config.valid_fraction, config.seed)?;
    let out = out_dir(common)?;
    let mut rng = Rng::new(config.seed);
    let (params, report) = pretrain_fp(&config, &data, &mut rng)?;
    Checkpoint::new(&params, HardwareModelSpec::Identity, None, config.activation)
        .save(out.join("fp.json"))?;
    write_report(out, "fp-report", &report)?;
    println!(
        "train accuracy {:.4}, test accuracy {:.4}",
        report.final_train_accuracy, report.final_test_accuracy
    );
    Ok(())
}

/// Generator for the stages after pretraining, kept apart from the
/// pretraining stream so each command is reproducible on its own.
fn stage_rng(config: &TrainConfig, name: &str) -> Rng {
    Rng::new(hwaware::numerics::derive_seed(config.seed, &[name]))
}

fn hwtrain(common: &Common, checkpoint: &Path) -> Result<(), Coded> {
    let config = load_config(common)?;
    let (_, w_fp) = load_checkpoint(checkpoint)?;
    let data = load_data(data_dir(common)?, common.transpose, config.valid_fraction, config.seed)?;
    let out = out_dir(common)?;
    let rng = stage_rng(&config, "hwtrain");
    let (params, report, spec) = match &config.grid {
        Some(grid) => {
            let search = hyperparam_search(grid, &config, &data, &w_fp, &rng)?;
            write_json(&out.join("grid.json"), &search.results)?;
            let hp = search.results[search.best].hyperparams;
            let spec = hp.delta.map_or(config.weight_model, |d| config.weight_model.with_delta(d));
            info!("selected {hp:?}");
            (search.params, search.report, spec)
        }
        None => {
            let (p, r) = hw_approx_train(&config, &data, &w_fp, &mut rng.clone())?;
            (p, r, config.weight_model)
        }
    };
    let (exact, act) = config.exact_view();
    Checkpoint::new(&params, spec, exact.w_sc, act).save(out.join("hw.json"))?;
    write_report(out, "hw-report", &report)?;
    println!(
        "test accuracy {} (hard hardware {})",
        report.final_test_accuracy, report.final_test_accuracy_hard
    );
    Ok(())
}

#[derive(Serialize)]
struct BaselineReport {
    model: HardwareModelSpec,
    valid_accuracy: f64,
    test_accuracy: f64,
    sw_test_accuracy: f64,
    error_vs_sw: f64,
}

fn baseline(common: &Common, checkpoint: &Path) -> Result<(), Coded> {
    let config = load_config(common)?;
    let (ck, w_fp) = load_checkpoint(checkpoint)?;
    let data = load_data(data_dir(common)?, common.transpose, config.valid_fraction, config.seed)?;
    check_fits(&ck, &data)?;
    let out = out_dir(common)?;
    let scan = config
        .delta_scan
        .clone()
        .unwrap_or_else(|| default_delta_scan(&w_fp, 25));
    let (_, act) = config.hard_view();
    let dt = direct_transfer_baseline(&w_fp, &config.weight_model, &act, &data, &scan)?;
    let sw = sw_accuracy(&ck, &w_fp, &data)?;
    Checkpoint::new(&dt.quantized, dt.spec, None, act).save(out.join("direct.json"))?;
    let report = BaselineReport {
        model: dt.spec,
        valid_accuracy: dt.valid_accuracy,
        test_accuracy: dt.test_accuracy,
        sw_test_accuracy: sw,
        error_vs_sw: error_vs_sw(sw, dt.test_accuracy),
    };
    write_json(&out.join("baseline-report.json"), &report)?;
    println!(
        "{}: test accuracy {:.4}, error vs sw {:.4}",
        model_label(&dt.spec),
        dt.test_accuracy,
        report.error_vs_sw
    );
    Ok(())
}

#[derive(Serialize)]
struct PruneReport {
    model: HardwareModelSpec,
    pruned_fraction: f64,
    test_accuracy: f64,
    sw_test_accuracy: f64,
    naive_test_accuracy: f64,
    training: TrainReport,
}

fn prune(common: &Common, checkpoint: &Path, target: Option<f64>) -> Result<(), Coded> {
    let mut config = load_config(common)?;
    let (ck, w_fp) = load_checkpoint(checkpoint)?;
    let data = load_data(data_dir(common)?, common.transpose, config.valid_fraction, config.seed)?;
    check_fits(&ck, &data)?;
    let out = out_dir(common)?;
    if let Some(f) = target {
        let w0 = w0_for_fraction(&w_fp, f)?;
        config.weight_model = match config.weight_model {
            HardwareModelSpec::PruningAsPrinted { .. } => HardwareModelSpec::PruningAsPrinted { w0 },
            _ => HardwareModelSpec::Pruning { w0 },
        };
        info!("w0 = {w0} prunes {f} of the FP weights");
    }
    let mut rng = stage_rng(&config, "prune");
    let outcome = prune_train(&config, &data, &w_fp, &mut rng)?;
    let (_, act) = config.hard_view();
    let naive = naive_prune(&w_fp, w0_for_fraction(&w_fp, outcome.pruned_fraction.min(0.999_999))?);
    let naive_acc = evaluate(&naive, &WeightModel::identity(), &act, &data.x_test, &data.y_test)?.accuracy;
    Checkpoint::new(&outcome.params, config.weight_model, None, act).save(out.join("pruned.json"))?;
    let report = PruneReport {
        model: config.weight_model,
        pruned_fraction: outcome.pruned_fraction,
        test_accuracy: outcome.test_accuracy,
        sw_test_accuracy: sw_accuracy(&ck, &w_fp, &data)?,
        naive_test_accuracy: naive_acc,
        training: outcome.report,
    };
    write_json(&out.join("prune-report.json"), &report)?;
    println!(
        "pruned fraction {:.4}: test accuracy {:.4} (naive {:.4}, unpruned {:.4})",
        report.pruned_fraction, report.test_accuracy, naive_acc, report.sw_test_accuracy
    );
    Ok(())
}

fn sweep(common: &Common) -> Result<(), Coded> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| fail(2, "--config is required for sweep"))?;
    let mut plan: SweepPlan = read_json(path)?;
    if let Some(seed) = common.seed {
        plan.seeds = vec![seed];
        plan.base.seed = seed;
    }
    plan.validate()
        .with_context(|| format!("invalid sweep plan {}", path.display()))
        .map_err(|e| Coded(EXIT_SCHEMA, e))?;
    let root = data_dir(common)?.to_path_buf();
    let out = out_dir(common)?;
    let (fraction, seed) = (plan.base.valid_fraction, plan.base.seed);
    let transpose = common.transpose;
    let records = size_sweep::<f64>(
        &plan,
        |name| {
            let (train, test) = load_dir(root.join(name), transpose || name.starts_with("emnist"))?;
            prepare(&train, &test, fraction, seed)
        },
        out,
    )?;
    write_csv(&records, out.join("records.csv"))?;
    println!("{} records in {}", records.len(), out.display());
    Ok(())
}

fn eval(
    common: &Common,
    checkpoint: &Path,
    model: Option<&Path>,
    w_sc: Option<f64>,
    hard: bool,
) -> Result<(), Coded> {
    let (ck, params) = load_checkpoint(checkpoint)?;
    let data = load_data(data_dir(common)?, common.transpose, 1.0 / 6.0, 0)?;
    check_fits(&ck, &data)?;
    let spec = match model {
        Some(p) => {
            let spec: HardwareModelSpec = read_json(p)?;
            if spec != ck.weight_model {
                warn!(
                    "checkpoint was trained for {}, evaluating under {}",
                    model_label(&ck.weight_model),
                    model_label(&spec)
                );
            }
            spec
        }
        None => ck.weight_model,
    };
    let w_sc = w_sc.or(ck.w_sc);
    let (weights, act) = if hard || w_sc.is_none() {
        (WeightModel::hard(spec), ck.activation.hard())
    } else {
        (WeightModel::smooth(spec, w_sc.unwrap())?, ck.activation)
    };
    let result = evaluate(&params, &weights, &act, &data.x_test, &data.y_test)?;
    println!("test_accuracy {}", result.accuracy);
    println!("test_cost {}", result.cost);
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Coded> {
    let c = &cli.common;
    match &cli.command {
        Command::Pretrain => pretrain(c),
        Command::Hwtrain { checkpoint } => hwtrain(c, checkpoint),
        Command::Baseline { checkpoint } => baseline(c, checkpoint),
        Command::Prune {
            checkpoint,
            target_fraction,
        } => prune(c, checkpoint, *target_fraction),
        Command::Sweep => sweep(c),
        Command::Eval {
            checkpoint,
            model,
            w_sc,
            hard,
        } => eval(c, checkpoint, model.as_deref(), *w_sc, *hard),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Coded(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
