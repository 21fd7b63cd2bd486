use std::path::PathBuf;

use riconv_core::calib::CalibratorKind;
use riconv_core::data::{
    build_mnist_rot, load_mnist, split_train_val, synth_fixture_sized, DatasetBundle, FixtureKind, Split,
};
use riconv_core::nn::{LayerGraph, Network};
use riconv_core::polar::rot90;
use riconv_core::train::{evaluate, train, TrainConfig};
use riconv_core::Tensor;

fn small(side: usize, classes: usize, kind: CalibratorKind) -> LayerGraph {
    LayerGraph::six_layer([1, side, side], [4, 4, 8, 8, 8, 8], 3, 3, classes, kind)
}

fn cfg(epochs: usize, batch: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch,
        lr,
        lr_decay: 1.0,
        train_size: None,
        ..TrainConfig::default()
    }
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("RICONV_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn images(b: &DatasetBundle) -> Tensor<f64> {
    b.images.cast()
}

#[test]
fn invariant_features_ignore_quarter_turns_of_bars() {
    let bars = synth_fixture_sized(FixtureKind::OrientedBars, 8, 16, 3).unwrap();
    let turned = build_mnist_rot(&bars, &[90.0]).unwrap().remove(0).1;
    for kind in [
        CalibratorKind::Gd,
        CalibratorKind::Sb,
        CalibratorKind::St,
        CalibratorKind::Max,
    ] {
        let net = Network::<f64>::new(small(16, 4, kind), 11).unwrap();
        let depth = net.feature_depth();
        let a = net.forward_to(&images(&bars), depth).unwrap();
        let b = net.forward_to(&images(&turned), depth).unwrap();
        let d = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(d <= 1e-4, "{kind}: {d}");
    }
}

#[test]
fn plain_convolution_learns_the_linear_fixture() {
    let data = synth_fixture_sized(FixtureKind::TwoClassLinear, 200, 16, 1).unwrap();
    let mut net = Network::<f64>::new(small(16, 2, CalibratorKind::None), 2).unwrap();
    train(&mut net, &data, &cfg(15, 20, 0.01)).unwrap();
    let acc = evaluate(&net, &data).unwrap().accuracy;
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn untrained_models_are_at_chance_on_random_labels() {
    let data = synth_fixture_sized(FixtureKind::RandomNoise, 2000, 16, 4).unwrap();
    let net = Network::<f32>::new(small(16, 10, CalibratorKind::Gd), 5).unwrap();
    let acc = evaluate(&net, &data).unwrap().accuracy;
    assert!((acc - 0.1).abs() <= 0.03, "{acc}");
}

#[test]
fn a_tiny_set_of_noise_is_memorised() {
    let data = synth_fixture_sized(FixtureKind::RandomNoise, 20, 16, 6).unwrap();
    let mut net = Network::<f64>::new(small(16, 10, CalibratorKind::None), 7).unwrap();
    train(&mut net, &data, &cfg(150, 20, 0.02)).unwrap();
    let acc = evaluate(&net, &data).unwrap().accuracy;
    assert_eq!(acc, 1.0);
}

#[test]
fn validation_split_is_disjoint_and_complete() {
    let data = synth_fixture_sized(FixtureKind::RandomNoise, 50, 4, 9).unwrap();
    let (tr, va) = split_train_val(&data, 10, 1).unwrap();
    assert_eq!((tr.len(), va.len()), (40, 10));
    assert_eq!((tr.split, va.split), (Split::Train, Split::Val));
    let mut rows: Vec<Vec<u32>> = (0..tr.len())
        .map(|i| tr.image(i).iter().map(|v| v.to_bits()).collect())
        .chain((0..va.len()).map(|i| va.image(i).iter().map(|v| v.to_bits()).collect()))
        .collect();
    let mut all: Vec<Vec<u32>> = (0..data.len())
        .map(|i| data.image(i).iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort();
    all.sort();
    assert_eq!(rows, all);
    assert!(split_train_val(&data, 0, 1).is_err());
}

#[test]
fn rotated_test_sets_follow_the_angles() {
    let data = synth_fixture_sized(FixtureKind::OrientedBars, 6, 12, 2).unwrap();
    let sets = build_mnist_rot(&data, &[0.0, 90.0, 45.0]).unwrap();
    assert_eq!(sets.len(), 3);
    assert_eq!(sets[0].1.images, data.images);
    for i in 0..data.len() {
        assert_eq!(sets[1].1.image(i), rot90(data.image(i), 12, 1).as_slice());
    }
    assert!(sets.iter().all(|(_, s)| s.labels == data.labels));
    assert!(build_mnist_rot(&data, &[0.0, 0.0]).is_err());
    assert!(build_mnist_rot(&data, &[360.0]).is_err());
}

#[test]
fn mnist_splits_have_the_published_sizes() {
    let dir = mnist_dir();
    if !dir.join("train-images-idx3-ubyte.gz").exists() && !dir.join("train-images-idx3-ubyte").exists() {
        eprintln!("MNIST not found under {}; skipping", dir.display());
        return;
    }
    let train = load_mnist(&dir, Split::Train).unwrap();
    let test = load_mnist(&dir, Split::Test).unwrap();
    assert_eq!((train.len(), test.len()), (60_000, 10_000));
    assert_eq!(train.images.shape().dims(), [60_000, 1, 28, 28]);
    train.validate(10).unwrap();
    test.validate(10).unwrap();
    assert!(train.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let (tr, va) = split_train_val(&train, 10_000, 0).unwrap();
    assert_eq!((tr.len(), va.len()), (50_000, 10_000));
    let rot = build_mnist_rot(&test.take(50).unwrap(), &[0.0, 30.0]).unwrap();
    assert_eq!(rot[1].1.len(), 50);
}
