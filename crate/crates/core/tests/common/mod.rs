#![allow(dead_code)]

use bfa_core::model::Dense;
use bfa_core::{Activation, Architecture, LabeledPoint, ModelParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A model with weights drawn uniformly from `[-scale, scale]` per layer
/// (scaled by fan-in) and small random biases.
pub fn random_model(rng: &mut ChaCha8Rng, arch: Architecture) -> ModelParams {
    let layers = arch
        .layer_shapes()
        .into_iter()
        .map(|(inputs, outputs)| {
            let bound = (6.0 / inputs as f64).sqrt();
            let w = (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect();
            let b = (0..outputs).map(|_| rng.random_range(-0.5..0.5)).collect();
            Dense::new(inputs, outputs, w, b).unwrap()
        })
        .collect();
    ModelParams::from_layers(arch, layers).unwrap()
}

pub fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

/// Cycles through linear, relu MLP and tanh MLP architectures.
pub fn arch_for(case: usize, dim: usize, classes: usize) -> Architecture {
    match case % 3 {
        0 => Architecture::linear(dim, classes),
        1 => Architecture::mlp(dim, &[12, 8], classes, Activation::Relu),
        _ => Architecture::mlp(dim, &[12, 8], classes, Activation::Tanh),
    }
}

/// Hidden pre-activation signs; two points with equal patterns lie in the
/// same linear piece of a relu network.
pub fn relu_pattern(model: &ModelParams, x: &[f64]) -> Vec<bool> {
    let mut a = x.to_vec();
    let mut pattern = Vec::new();
    let layers = model.layers();
    for layer in &layers[..layers.len() - 1] {
        let z: Vec<f64> = (0..layer.outputs)
            .map(|r| layer.row(r).iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + layer.bias[r])
            .collect();
        pattern.extend(z.iter().map(|&v| v > 0.0));
        a = match model.arch().activation {
            Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Tanh => z.iter().map(|v| v.tanh()).collect(),
        };
    }
    pattern
}

pub fn correctly_classified(model: &ModelParams, points: &[LabeledPoint]) -> Vec<LabeledPoint> {
    points.iter().filter(|p| model.predict(&p.x).unwrap() == p.y).cloned().collect()
}
