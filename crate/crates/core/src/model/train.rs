use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, Dense, LabeledPoint, ModelParams, TrainMeta};
use crate::error::{Error, Result};
use crate::rng::{gaussian_vector, Stream};

/// Minibatch SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// When positive, every epoch sees a fresh Gaussian-perturbed copy of
    /// each training point instead of the clean point.
    pub noise_augment_sigma: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper { epochs: 60, batch_size: 32, learning_rate: 0.05, momentum: 0.9, noise_augment_sigma: 0.0 }
    }
}

impl TrainHyper {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0,1)".into()));
        }
        if !(self.noise_augment_sigma >= 0.0 && self.noise_augment_sigma.is_finite()) {
            return Err(Error::InvalidConfig("noise_augment_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// He-style uniform initialization: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
fn init_layers(arch: &Architecture, stream: Stream) -> Vec<Dense> {
    let mut rng = stream.rng();
    arch.layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let limit = (6.0 / fan_in as f64).sqrt();
            let weights = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
            Dense { inputs: fan_in, outputs: fan_out, weights, bias: vec![0.0; fan_out] }
        })
        .collect()
}

/// Trains a classifier with momentum SGD on softmax cross-entropy.
///
/// Bitwise deterministic for a fixed `seed`: initialization, shuffling and
/// noise augmentation each draw from their own child stream.
pub fn train(arch: &Architecture, data: &[LabeledPoint], hyper: &TrainHyper, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("training data is empty".into()));
    }
    let mut seen = vec![false; arch.num_classes];
    for (i, p) in data.iter().enumerate() {
        if p.x.len() != arch.input_dim {
            return Err(Error::InvalidInput(format!(
                "training point {i} has dimension {}, expected {}",
                p.x.len(),
                arch.input_dim
            )));
        }
        if p.y >= arch.num_classes {
            return Err(Error::InvalidInput(format!("training point {i} has label {}", p.y)));
        }
        seen[p.y] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::InvalidConfig("training labels cover fewer than two classes".into()));
    }

    let root = Stream::new(seed);
    let mut model = ModelParams::from_layers(arch.clone(), init_layers(arch, root.child(0)))?;
    let mut shuffle_rng = root.child(1).rng();
    let mut noise_rng = root.child(2).rng();

    let mut velocity = model.zero_param_grads();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut noisy = vec![0.0; arch.input_dim];
    for _ in 0..hyper.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(hyper.batch_size) {
            let mut grads = model.zero_param_grads();
            for &i in batch {
                let p = &data[i];
                let x = if hyper.noise_augment_sigma > 0.0 {
                    let n = gaussian_vector(&mut noise_rng, arch.input_dim, hyper.noise_augment_sigma);
                    for ((dst, a), b) in noisy.iter_mut().zip(&p.x).zip(n) {
                        *dst = a + b;
                    }
                    &noisy[..]
                } else {
                    &p.x[..]
                };
                model.accumulate_param_grads(x, p.y, &mut grads);
            }
            let scale = hyper.learning_rate / batch.len() as f64;
            for (l, layer) in model.layers_mut().iter_mut().enumerate() {
                for ((w, v), g) in layer.weights.iter_mut().zip(&mut velocity.weights[l]).zip(&grads.weights[l]) {
                    *v = hyper.momentum * *v - scale * g;
                    *w += *v;
                }
                for ((b, v), g) in layer.bias.iter_mut().zip(&mut velocity.bias[l]).zip(&grads.bias[l]) {
                    *v = hyper.momentum * *v - scale * g;
                    *b += *v;
                }
            }
        }
    }

    if model.layers().iter().any(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite())) {
        return Err(Error::InvalidConfig("training diverged (non-finite parameters)".into()));
    }
    let accuracy = model.accuracy(data)?;
    model.train_seed = seed;
    model.train_meta = TrainMeta { dataset: String::new(), epochs: hyper.epochs, final_train_accuracy: accuracy };
    Ok(model)
}
