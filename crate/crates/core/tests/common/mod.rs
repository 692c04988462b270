#![allow(dead_code)]

use hwaware::dataio::{prepare, synthetic, DatasetSplit, IdxTensor, RawDataset};
use hwaware::network::{backward, cross_entropy, forward};
use hwaware::{ActivationSpec, HardwareModelSpec, Matrix, MlpParams, Rng, Topology, WeightModel};

/// Every weight-model kind with moderate parameters.
pub fn all_specs() -> Vec<HardwareModelSpec> {
    vec![
        HardwareModelSpec::Identity,
        HardwareModelSpec::Binary { delta: 0.3 },
        HardwareModelSpec::TernarySymmetric { delta: 0.2 },
        HardwareModelSpec::TernaryAsymmetric { delta: 0.2, beta: 0.75 },
        HardwareModelSpec::TernaryAsymmetricAsPrinted { delta: 0.2, beta: 0.75 },
        HardwareModelSpec::Quinary { delta: 0.1, beta1: 1.0, beta2: 0.6 },
        HardwareModelSpec::Pruning { w0: 0.15 },
        HardwareModelSpec::PruningAsPrinted { w0: 0.15 },
    ]
}

pub fn both_activations(z_sc: f64) -> [ActivationSpec; 2] {
    [ActivationSpec::Relu, ActivationSpec::HwBinary { z_sc }]
}

/// Random instance: augmented inputs (last column 1), labels and weights.
pub fn instance(
    inputs: usize,
    hidden: &[usize],
    classes: usize,
    samples: usize,
    seed: u64,
) -> (MlpParams<f64>, Matrix<f64>, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let topo = Topology::new(inputs, hidden.to_vec(), classes);
    let mut params = MlpParams::init(&topo, &mut rng).unwrap();
    // Spread weights across the transition regions of every model.
    for l in params.layers_mut() {
        let g = Matrix::gaussian(l.rows(), l.cols(), 0.3, &mut rng).unwrap();
        *l = g;
    }
    let x = Matrix::gaussian(samples, inputs, 1.0, &mut rng)
        .unwrap()
        .with_ones_column();
    let y = (0..samples).map(|i| (i * 7 + seed as usize) % classes).collect();
    (params, x, y)
}

pub fn loss(
    params: &MlpParams<f64>,
    model: &WeightModel,
    act: &ActivationSpec,
    x: &Matrix<f64>,
    y: &[usize],
) -> f64 {
    cross_entropy(&forward(params, model, act, x).unwrap(), y)
}

/// Largest relative error between backprop and central differences with
/// step `h`. Entries whose gradients are both below `floor` are compared
/// against `floor`.
pub fn max_gradient_error(
    params: &MlpParams<f64>,
    model: &WeightModel,
    act: &ActivationSpec,
    x: &Matrix<f64>,
    y: &[usize],
    h: f64,
    floor: f64,
) -> f64 {
    let trace = forward(params, model, act, x).unwrap();
    let grads = backward(&trace, params, model, act, y).unwrap();
    let mut worst = 0.0f64;
    for (l, g) in grads.iter().enumerate() {
        for i in 0..g.data().len() {
            let mut plus = params.clone();
            plus.layers_mut()[l].data_mut()[i] += h;
            let mut minus = params.clone();
            minus.layers_mut()[l].data_mut()[i] -= h;
            let numeric = (loss(&plus, model, act, x, y) - loss(&minus, model, act, x, y)) / (2.0 * h);
            let analytic = g.data()[i];
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}

/// Small separable classification problem.
pub fn toy_data(samples: usize, seed: u64) -> DatasetSplit<f64> {
    let n_test = samples / 3;
    let all = synthetic(samples + n_test, 6, 4, 0.35, seed);
    let (train, test) = split_raw(&all, samples);
    prepare(&train, &test, 0.2, seed).unwrap()
}

pub fn split_raw(all: &RawDataset, at: usize) -> (RawDataset, RawDataset) {
    let px = all.pixels();
    let part = |lo: usize, hi: usize| {
        RawDataset::new(
            IdxTensor {
                dims: vec![(hi - lo) as u32, all.images.dims[1], all.images.dims[2]],
                data: all.images.data[lo * px..hi * px].to_vec(),
            },
            IdxTensor {
                dims: vec![(hi - lo) as u32],
                data: all.labels.data[lo..hi].to_vec(),
            },
        )
        .unwrap()
    };
    (part(0, at), part(at, all.len()))
}
