use bfa_core::data::{gen_blobs, gen_moons, gen_rings};
use bfa_core::model::{load_model, save_model};
use bfa_core::{Activation, Architecture, TrainHyper};

fn mlp(dim: usize, classes: usize) -> Architecture {
    Architecture::mlp(dim, &[32, 32], classes, Activation::Relu)
}

#[test]
fn well_separated_blobs_are_learned() {
    let ds = gen_blobs(3, 2, 200, 0.08, 1).unwrap();
    let model = ds.train_model(&mlp(2, 3), &TrainHyper::default(), 7).unwrap();
    let acc = model.accuracy(&ds.test_points()).unwrap();
    assert!(acc >= 0.95, "test accuracy {acc}");
}

#[test]
fn vanishing_spread_is_linearly_separable() {
    let ds = gen_blobs(4, 3, 50, 1e-3, 2).unwrap();
    let model = ds.train_model(&Architecture::linear(3, 4), &TrainHyper::default(), 3).unwrap();
    assert_eq!(model.train_meta.final_train_accuracy, 1.0);
}

#[test]
fn noiseless_moons_are_fit_exactly() {
    let ds = gen_moons(100, 0.0, 3).unwrap();
    let hyper = TrainHyper { epochs: 200, ..TrainHyper::default() };
    let model = ds.train_model(&mlp(2, 2), &hyper, 5).unwrap();
    assert_eq!(model.accuracy(&ds.points).unwrap(), 1.0);
}

#[test]
fn noisy_moons_generalize() {
    let ds = gen_moons(200, 0.1, 4).unwrap();
    let hyper = TrainHyper { epochs: 200, ..TrainHyper::default() };
    let model = ds.train_model(&mlp(2, 2), &hyper, 6).unwrap();
    let acc = model.accuracy(&ds.test_points()).unwrap();
    assert!(acc >= 0.97, "test accuracy {acc}");
}

#[test]
fn noiseless_rings_are_fit() {
    let ds = gen_rings(3, 150, 0.0, 5).unwrap();
    let hyper = TrainHyper { epochs: 200, ..TrainHyper::default() };
    let model = ds.train_model(&Architecture::mlp(2, &[64, 64], 3, Activation::Relu), &hyper, 8).unwrap();
    let acc = model.accuracy(&ds.points).unwrap();
    assert!(acc >= 0.99, "accuracy {acc}");
}

#[test]
fn accuracy_survives_a_trip_through_disk() {
    let ds = gen_blobs(3, 5, 40, 0.2, 6).unwrap();
    let model = ds.train_model(&Architecture::mlp(5, &[16], 3, Activation::Tanh), &TrainHyper::default(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.accuracy(&ds.test_points()).unwrap(), model.accuracy(&ds.test_points()).unwrap());
    assert_eq!(back.train_meta.dataset, ds.name);
}
