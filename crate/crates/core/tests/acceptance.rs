//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Criteria 1 and 2 always run. The dataset criteria (3 to 9) run with
//! `--include-ignored` (or `--ignored`) and read MNIST-style IDX directories
//! `mnist/` and `fashion/` below `$HWAWARE_DATA_DIR`. Criterion 10 also needs
//! `emnist/` and `HWAWARE_ACCEPTANCE_SLOW=1`. Positional arguments such as
//! `C4` restrict the run to the named criteria.

mod common;

use std::collections::HashMap;
use std::env;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use common::{all_specs, both_activations, instance, max_gradient_error};
use hwaware::dataio::{load_dir, prepare, DatasetSplit};
use hwaware::evalreport::error_vs_sw;
use hwaware::network::evaluate;
use hwaware::training::{
    default_delta_scan, direct_transfer_baseline, hw_approx_train, hyperparam_search,
    naive_prune, pretrain_fp, prune_train, w0_for_fraction, HyperparamGrid, TrainConfig,
    TrainReport,
};
use hwaware::{
    ActivationSpec, ContinuationSchedule, HardwareModelSpec, MlpParams, Rng, Stage, WeightModel,
};

type Data = DatasetSplit<f64>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn all_pass(checks: &[(bool, String)]) -> Outcome {
    outcome(
        checks.iter().all(|c| c.0),
        checks.iter().map(|c| c.1.as_str()).collect::<Vec<_>>().join("; "),
    )
}

/// Master seed; `HWAWARE_ACCEPTANCE_SEED` overrides the default of 0.
fn seed() -> u64 {
    env::var("HWAWARE_ACCEPTANCE_SEED")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

// ---------------------------------------------------------------- C1, C2

fn c1_gradient_oracle() -> Outcome {
    let (params, x, y) = instance(9, &[5], 3, 8, 2024);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for spec in all_specs() {
        for w_sc in [0.05, 0.2, 1.0] {
            for act in both_activations(0.5) {
                let model = WeightModel::smooth(spec, w_sc).unwrap();
                worst = worst.max(max_gradient_error(&params, &model, &act, &x, &y, 1e-4, 1e-6));
                cases += 1;
            }
        }
    }
    outcome(
        worst <= 1e-4,
        format!("{cases} model/activation cases, max relative error {worst:.2e} (tol 1e-4)"),
    )
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

fn c2_g_properties() -> Outcome {
    let ws = grid(-3.0, 3.0, 1e-4);
    let specs = all_specs();
    let mut checks = Vec::new();

    // Odd symmetry.
    let mut odd = 0.0f64;
    for spec in specs.iter().filter(|s| {
        matches!(
            s,
            HardwareModelSpec::Binary { .. }
                | HardwareModelSpec::TernarySymmetric { .. }
                | HardwareModelSpec::Quinary { .. }
                | HardwareModelSpec::Pruning { .. }
        )
    }) {
        for w_sc in [1e-3, 0.05, 1.0] {
            for &w in &ws {
                odd = odd.max((spec.value(w_sc, -w) + spec.value(w_sc, w)).abs());
            }
        }
    }
    checks.push((odd <= 1e-12, format!("odd symmetry {odd:.1e}")));

    // Monotonicity, every kind but the pruning windows.
    let mut drops = 0usize;
    for spec in specs.iter().filter(|s| {
        !matches!(
            s,
            HardwareModelSpec::Pruning { .. } | HardwareModelSpec::PruningAsPrinted { .. }
        )
    }) {
        for w_sc in [1e-3, 0.05, 1.0] {
            drops += ws
                .windows(2)
                .filter(|p| spec.value(w_sc, p[1]) < spec.value(w_sc, p[0]))
                .count();
        }
    }
    checks.push((drops == 0, format!("monotonicity violations {drops}")));

    // Saturation at the outermost levels.
    let mut sat = 0.0f64;
    for spec in specs.iter().filter(|s| s.hard_levels().is_ok()) {
        let levels = spec.hard_levels().unwrap();
        let (lo, hi) = (levels[0], *levels.last().unwrap());
        sat = sat
            .max((spec.value(1e-3, 50.0) - hi).abs())
            .max((spec.value(1e-3, -50.0) - lo).abs());
    }
    checks.push((sat <= 1e-12, format!("saturation {sat:.1e}")));

    // Limit consistency with the direct quantizer.
    let mut limit = 0.0f64;
    for spec in specs.iter().filter(|s| s.hard_levels().is_ok()) {
        let th = spec.thresholds();
        for &w in &ws {
            if th.iter().any(|t| (w - t).abs() <= 1e-4) {
                continue;
            }
            let q = spec.quantize_direct(w).unwrap();
            limit = limit.max((spec.value(1e-6, w) - q).abs());
        }
    }
    checks.push((limit < 1e-5, format!("limit gap {limit:.1e}")));

    // Derivative exactness against central differences.
    let mut deriv = 0.0f64;
    for spec in &specs {
        for w_sc in [0.05, 0.5] {
            let h = 1e-3 * w_sc;
            for &w in ws.iter().step_by(7) {
                let numeric = (spec.value(w_sc, w + h) - spec.value(w_sc, w - h)) / (2.0 * h);
                let analytic = spec.derivative(w_sc, w);
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                deriv = deriv.max((analytic - numeric).abs() / denom);
            }
        }
    }
    checks.push((deriv <= 1e-5, format!("derivative rel err {deriv:.1e}")));

    // Derivative localization.
    let ts = HardwareModelSpec::TernarySymmetric { delta: 0.45 };
    let w_sc = 0.005;
    let mut far = 0.0f64;
    for &w in &ws {
        if (w - 0.45).abs().min((w + 0.45).abs()) > 20.0 * w_sc {
            far = far.max(ts.derivative(w_sc, w));
        }
    }
    checks.push((far < 1e-6, format!("far-field derivative {far:.1e}")));
    all_pass(&checks)
}

// ---------------------------------------------------------------- datasets

fn data_root() -> Option<PathBuf> {
    env::var_os("HWAWARE_DATA_DIR").map(PathBuf::from)
}

struct Lab {
    data: HashMap<&'static str, Data>,
    fp: HashMap<String, (MlpParams<f64>, TrainReport)>,
    ternary_run: Option<(MlpParams<f64>, TrainReport)>,
}

impl Lab {
    fn new() -> Self {
        Self {
            data: HashMap::new(),
            fp: HashMap::new(),
            ternary_run: None,
        }
    }

    fn data(&mut self, name: &'static str) -> Result<&Data, String> {
        if !self.data.contains_key(name) {
            let root = data_root().ok_or("HWAWARE_DATA_DIR is not set")?;
            let dir = root.join(name);
            let (train, test) = load_dir(&dir, name == "emnist")
                .map_err(|e| format!("cannot load {}: {e}", dir.display()))?;
            let split = prepare(&train, &test, 1.0 / 6.0, seed()).map_err(|e| e.to_string())?;
            self.data.insert(name, split);
        }
        Ok(&self.data[name])
    }

    /// Floating-point baseline for a dataset, hidden sizes and activation.
    fn fp(&mut self, dataset: &'static str, config: &TrainConfig) -> Result<(MlpParams<f64>, TrainReport), String> {
        let key = format!("{dataset}/{:?}/{:?}/{}", config.hidden, config.activation, config.fp_pretrain_epochs);
        if !self.fp.contains_key(&key) {
            let data = self.data(dataset)?.clone();
            let mut rng = Rng::new(seed());
            let out = pretrain_fp(config, &data, &mut rng).map_err(|e| e.to_string())?;
            eprintln!(
                "  [fp {key}] train {:.4} test {:.4} ({:.0}s)",
                out.1.final_train_accuracy, out.1.final_test_accuracy, out.1.wall_time_s
            );
            self.fp.insert(key.clone(), out);
        }
        Ok(self.fp[&key].clone())
    }
}

fn config(hidden: usize, spec: HardwareModelSpec) -> TrainConfig {
    let mut c = TrainConfig::new(vec![hidden], spec);
    c.seed = seed();
    c
}

/// HW-aware refinement from the FP weights, continuing the FP generator.
fn hw_run(
    lab: &mut Lab,
    dataset: &'static str,
    cfg: &TrainConfig,
) -> Result<(MlpParams<f64>, TrainReport, f64), String> {
    let (w_fp, fp) = lab.fp(dataset, cfg)?;
    let data = lab.data(dataset)?;
    let mut rng = Rng::new(seed() ^ 0x5157_4157);
    let (w, report) = hw_approx_train(cfg, data, &w_fp, &mut rng).map_err(|e| e.to_string())?;
    eprintln!(
        "  [hw {dataset} {:?} {:?}] exact train {:.4} test {:.4} hard test {:.4} ({:.0}s)",
        cfg.hidden,
        cfg.weight_model,
        report.final_train_accuracy,
        report.final_test_accuracy,
        report.final_test_accuracy_hard,
        report.wall_time_s
    );
    Ok((w, report, fp.final_test_accuracy))
}

fn direct_error(lab: &mut Lab, dataset: &'static str, cfg: &TrainConfig) -> Result<(f64, f64), String> {
    let (w_fp, fp) = lab.fp(dataset, cfg)?;
    let (_, act) = cfg.hard_view();
    let scan = default_delta_scan(&w_fp, 25);
    let data = lab.data(dataset)?;
    let dt = direct_transfer_baseline(&w_fp, &cfg.weight_model, &act, data, &scan)
        .map_err(|e| e.to_string())?;
    eprintln!(
        "  [direct {dataset} {:?}] best {:?}: test {:.4}",
        cfg.hidden, dt.spec, dt.test_accuracy
    );
    Ok((error_vs_sw(fp.final_test_accuracy, dt.test_accuracy), dt.test_accuracy))
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn c3_fp_baseline(lab: &mut Lab) -> Result<Outcome, String> {
    let cfg = config(100, HardwareModelSpec::Identity);
    let (_, fp) = lab.fp("mnist", &cfg)?;
    Ok(all_pass(&[
        (fp.final_train_accuracy >= 0.985, format!("train {} (>= 98.5%)", pct(fp.final_train_accuracy))),
        (fp.final_test_accuracy >= 0.975, format!("test {} (>= 97.5%)", pct(fp.final_test_accuracy))),
    ]))
}

fn c4_training_curve(lab: &mut Lab) -> Result<Outcome, String> {
    let cfg = config(100, HardwareModelSpec::TernarySymmetric { delta: 0.45 });
    let (_, fp) = lab.fp("mnist", &cfg)?;
    let (w, report, _) = hw_run(lab, "mnist", &cfg)?;
    let entry = report.stages[0].entry_train_accuracy;
    let drop = fp.final_train_accuracy - entry;
    let last_fp_epoch = fp.epochs.last().map_or(0.0, |e| e.train_accuracy);
    let first_t1_epoch = report.stage_epochs("T1")[0].train_accuracy;
    eprintln!(
        "  [curve] last FP epoch {:.4}, T1 entry {:.4}, first T1 epoch mean {:.4}",
        last_fp_epoch, entry, first_t1_epoch
    );
    lab.ternary_run = Some((w, report.clone()));
    Ok(all_pass(&[
        (drop >= 0.03, format!("T1 drop {} -> {} = {} (>= 3%)", pct(fp.final_train_accuracy), pct(entry), pct(drop))),
        (
            report.final_train_accuracy >= 0.97,
            format!("final exact-model train {} (>= 97%)", pct(report.final_train_accuracy)),
        ),
    ]))
}

/// Binary weights with binary hidden activations; `z_ratio` sets each
/// stage's activation scale as a multiple of its weight scale.
fn binary_config(hidden: usize, z_ratio: f64) -> TrainConfig {
    let mut cfg = config(hidden, HardwareModelSpec::Binary { delta: 0.2 });
    cfg.activation = ActivationSpec::HwBinary { z_sc: 1.0 };
    let stage = |w_sc: f64| Stage {
        w_sc,
        epochs: 5,
        z_sc: Some(z_ratio * w_sc),
        lr_scale: 1.0,
    };
    cfg.schedule = ContinuationSchedule::new(vec![stage(0.05), stage(0.005)]).unwrap();
    cfg
}

fn c5_binary(lab: &mut Lab) -> Result<Outcome, String> {
    // Δ and the activation schedule are hyperparameters, picked by the
    // lowest validation cross-entropy.
    let grid = HyperparamGrid {
        delta: vec![0.05, 0.2, 0.5],
        ..Default::default()
    };
    let mut best: Option<(f64, f64, TrainReport)> = None;
    for z_ratio in [10.0, 40.0] {
        let cfg = binary_config(100, z_ratio);
        let (w_fp, _) = lab.fp("mnist", &cfg)?;
        let data = lab.data("mnist")?;
        let rng = Rng::new(seed() ^ 0x5157_4157);
        let search = hyperparam_search(&grid, &cfg, data, &w_fp, &rng).map_err(|e| e.to_string())?;
        for r in &search.results {
            eprintln!(
                "  [binary z/w {z_ratio}] delta {:?}: valid cost {:.4} acc {:.4}",
                r.hyperparams.delta, r.valid_cost, r.valid_accuracy
            );
        }
        let cost = search.results[search.best].valid_cost;
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, z_ratio, search.report));
        }
    }
    let (_, z_ratio, report) = best.unwrap();
    let cfg = binary_config(100, z_ratio);
    let (direct, _) = direct_error(lab, "mnist", &cfg)?;
    let (_, fp) = lab.fp("mnist", &cfg)?;
    let hw = error_vs_sw(fp.final_test_accuracy, report.final_test_accuracy_hard);
    let delta = report.hyperparams.and_then(|h| h.delta).unwrap_or(f64::NAN);
    Ok(all_pass(&[
        (direct >= 0.20, format!("direct error {} (>= 20%)", pct(direct))),
        (
            hw <= 0.02,
            format!("hw-aware error {} at delta {delta}, z_sc = {z_ratio} w_sc (<= 2%)", pct(hw)),
        ),
    ]))
}

fn c6_asymmetric(lab: &mut Lab) -> Result<Outcome, String> {
    let spec = HardwareModelSpec::TernaryAsymmetric { delta: 0.45, beta: 0.75 };
    let mut checks = Vec::new();
    for (hidden, bound) in [(100, 0.02), (200, 0.01)] {
        let cfg = config(hidden, spec);
        let (direct, _) = direct_error(lab, "mnist", &cfg)?;
        let (_, report, sw) = hw_run(lab, "mnist", &cfg)?;
        let hw = error_vs_sw(sw, report.final_test_accuracy_hard);
        checks.push((direct >= 0.20, format!("h{hidden} direct error {} (>= 20%)", pct(direct))));
        checks.push((hw <= bound, format!("h{hidden} hw-aware error {} (<= {})", pct(hw), pct(bound))));
    }
    Ok(all_pass(&checks))
}

fn c7_quinary(lab: &mut Lab) -> Result<Outcome, String> {
    let cfg = config(200, HardwareModelSpec::Quinary { delta: 0.2, beta1: 1.0, beta2: 0.6 });
    let (direct, _) = direct_error(lab, "mnist", &cfg)?;
    let (_, report, sw) = hw_run(lab, "mnist", &cfg)?;
    let hw = error_vs_sw(sw, report.final_test_accuracy_hard);
    Ok(all_pass(&[
        (hw <= 0.01, format!("hw-aware error {} (<= 1%)", pct(hw))),
        (
            direct > 0.0 && direct >= 5.0 * hw.max(0.0) && direct > hw,
            format!("direct error {} vs 5 x hw-aware {}", pct(direct), pct(5.0 * hw)),
        ),
    ]))
}

fn c8_pruning(lab: &mut Lab) -> Result<Outcome, String> {
    let mut cfg = config(200, HardwareModelSpec::Identity);
    let (w_fp, fp) = lab.fp("fashion", &cfg)?;
    let data = lab.data("fashion")?;
    // Retraining moves some weights out of the window, so the achieved
    // fraction trails the window quantile. Widen the window until the
    // achieved sparsity reaches the target; accuracy plays no part here.
    let mut w0 = 0.0;
    let mut out = None;
    for quantile in [0.95, 0.97, 0.98, 0.99] {
        w0 = w0_for_fraction(&w_fp, quantile).map_err(|e| e.to_string())?;
        cfg.weight_model = HardwareModelSpec::Pruning { w0 };
        let mut rng = Rng::new(seed() ^ 0x5157_4157);
        let run = prune_train(&cfg, data, &w_fp, &mut rng).map_err(|e| e.to_string())?;
        eprintln!("  [prune] window quantile {quantile}: pruned fraction {:.4}", run.pruned_fraction);
        let done = run.pruned_fraction >= 0.90;
        out = Some(run);
        if done {
            break;
        }
    }
    let out = out.unwrap();
    let same = w0_for_fraction(&w_fp, out.pruned_fraction).map_err(|e| e.to_string())?;
    let naive = naive_prune(&w_fp, same);
    let (_, act) = cfg.hard_view();
    let naive_acc = evaluate(&naive, &WeightModel::identity(), &act, &data.x_test, &data.y_test)
        .map_err(|e| e.to_string())?
        .accuracy;
    let sw = fp.final_test_accuracy;
    let hw_loss = sw - out.test_accuracy;
    let naive_loss = sw - naive_acc;
    eprintln!(
        "  [prune] w0 {w0:.4} fp {sw:.4} hw {:.4} naive {naive_acc:.4} fraction {:.4}",
        out.test_accuracy, out.pruned_fraction
    );
    Ok(all_pass(&[
        (out.pruned_fraction >= 0.90, format!("pruned fraction {} (>= 90%)", pct(out.pruned_fraction))),
        (hw_loss <= 0.02, format!("hw-aware loss {} (<= 2%)", pct(hw_loss))),
        (
            naive_loss - hw_loss >= 0.05,
            format!("naive loss {} exceeds hw-aware by {} (>= 5%)", pct(naive_loss), pct(naive_loss - hw_loss)),
        ),
    ]))
}

fn c9_stratification(lab: &mut Lab) -> Result<Outcome, String> {
    if lab.ternary_run.is_none() {
        c4_training_curve(lab)?;
    }
    let (w, report) = lab.ternary_run.as_ref().unwrap();
    let w_sc = report.stages.last().and_then(|s| s.w_sc).unwrap_or(0.005);
    let hidden = &w.layers()[0];
    let near = hidden
        .data()
        .iter()
        .filter(|&&v| (v - 0.45).abs().min((v + 0.45).abs()) <= 2.0 * w_sc)
        .count();
    let frac = near as f64 / hidden.data().len() as f64;
    Ok(outcome(
        frac < 0.005,
        format!("{near} of {} hidden weights within 2 w_sc of a threshold: {} (< 0.5%)", hidden.data().len(), pct(frac)),
    ))
}

fn c10_emnist(lab: &mut Lab) -> Result<Outcome, String> {
    let mut cfg = TrainConfig::new(vec![512; 3], HardwareModelSpec::TernarySymmetric { delta: 0.45 });
    cfg.seed = seed();
    let (_, fp) = lab.fp("emnist", &cfg)?;
    let (_, report, sw) = hw_run(lab, "emnist", &cfg)?;
    let hw = error_vs_sw(sw, report.final_test_accuracy_hard);
    Ok(all_pass(&[
        (
            (fp.final_test_accuracy - 0.85).abs() <= 0.02,
            format!("FP test {} (85% +- 2%)", pct(fp.final_test_accuracy)),
        ),
        (hw <= 0.02, format!("hw-aware ternary error {} (<= 2%)", pct(hw))),
    ]))
}

// ---------------------------------------------------------------- driver

type Criterion = fn(&mut Lab) -> Result<Outcome, String>;

fn main() -> ExitCode {
    let args: Vec<String> = env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let with_data = args.iter().any(|a| a == "--include-ignored" || a == "--ignored");
    let slow = env::var("HWAWARE_ACCEPTANCE_SLOW").is_ok_and(|v| v == "1");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| filters.is_empty() || filters.iter().any(|f| f.eq_ignore_ascii_case(id));

    let fast: [(&str, &str, fn() -> Outcome); 2] = [
        ("C1", "gradient oracle", c1_gradient_oracle),
        ("C2", "g-function properties", c2_g_properties),
    ];
    let heavy: [(&str, &str, Criterion); 8] = [
        ("C3", "FP baseline (MNIST)", c3_fp_baseline),
        ("C4", "training-curve shape (ternary, MNIST)", c4_training_curve),
        ("C5", "direct-transfer failure (binary, MNIST)", c5_binary),
        ("C6", "asymmetric ternary (MNIST)", c6_asymmetric),
        ("C7", "non-linear quinary (MNIST)", c7_quinary),
        ("C8", "pruning (Fashion-MNIST)", c8_pruning),
        ("C9", "stratification", c9_stratification),
        ("C10", "EMNIST extended run", c10_emnist),
    ];

    let mut failed = 0;
    let mut report = |id: &str, name: &str, result: Result<Outcome, String>, secs: f64| {
        let (tag, detail) = match result {
            Ok(o) if o.pass => ("PASS", o.detail),
            Ok(o) => ("FAIL", o.detail),
            Err(e) => ("FAIL", e),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("{tag} {id} {name}: {detail} [{secs:.1}s]");
    };

    for (id, name, run) in fast {
        if wanted(id) {
            let t = Instant::now();
            let o = run();
            report(id, name, Ok(o), t.elapsed().as_secs_f64());
        }
    }
    let mut lab = Lab::new();
    for (id, name, run) in heavy {
        if !wanted(id) {
            continue;
        }
        let enabled = with_data && (id != "C10" || slow);
        if !enabled {
            let why = if id == "C10" {
                "slow; needs --include-ignored and HWAWARE_ACCEPTANCE_SLOW=1"
            } else {
                "needs datasets; run with --include-ignored"
            };
            println!("SKIP {id} {name}: {why}");
            continue;
        }
        let t = Instant::now();
        let o = run(&mut lab);
        report(id, name, o, t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
