//! JSON model files. Every real number is a hex-float string so a save/load
//! round trip reproduces the parameters bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Dense, ModelParams, TrainMeta};
use crate::error::{Error, Result};
use crate::hexfloat::HexF64;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    arch: Architecture,
    train_seed: u64,
    train_meta: MetaFile,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    dataset: String,
    epochs: usize,
    final_train_accuracy: HexF64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    w: Vec<Vec<HexF64>>,
    b: Vec<HexF64>,
}

pub fn model_to_json(model: &ModelParams) -> String {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        arch: model.arch.clone(),
        train_seed: model.train_seed,
        train_meta: MetaFile {
            dataset: model.train_meta.dataset.clone(),
            epochs: model.train_meta.epochs,
            final_train_accuracy: HexF64(model.train_meta.final_train_accuracy),
        },
        layers: model
            .layers
            .iter()
            .map(|l| LayerFile {
                w: (0..l.outputs).map(|r| l.row(r).iter().map(|&v| HexF64(v)).collect()).collect(),
                b: l.bias.iter().map(|&v| HexF64(v)).collect(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("model serializes");
    text.push('\n');
    text
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub fn model_from_json(text: &str) -> Result<ModelParams> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| Error::parse(byte_offset(text, e.line(), e.column()), e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::parse(0, format!("unsupported format_version {}", file.format_version)));
    }
    let shapes = file.arch.layer_shapes();
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, lf) in file.layers.into_iter().enumerate() {
        let outputs = lf.w.len();
        let inputs = lf.w.first().map_or(0, Vec::len);
        if let Some(r) = lf.w.iter().position(|row| row.len() != inputs) {
            return Err(Error::Shape {
                layer: i,
                message: format!("row {r} has {} entries, row 0 has {inputs}", lf.w[r].len()),
            });
        }
        if lf.b.len() != outputs {
            return Err(Error::Shape { layer: i, message: format!("{} biases for {outputs} outputs", lf.b.len()) });
        }
        if let Some(&(fi, fo)) = shapes.get(i) {
            if (inputs, outputs) != (fi, fo) {
                return Err(Error::Shape {
                    layer: i,
                    message: format!("expected {fo}x{fi}, found {outputs}x{inputs}"),
                });
            }
        }
        let weights = lf.w.into_iter().flatten().map(|h| h.0).collect();
        let bias = lf.b.into_iter().map(|h| h.0).collect();
        layers.push(Dense { inputs, outputs, weights, bias });
    }
    let mut model = ModelParams::from_layers(file.arch, layers)?;
    model.train_seed = file.train_seed;
    model.train_meta = TrainMeta {
        dataset: file.train_meta.dataset,
        epochs: file.train_meta.epochs,
        final_train_accuracy: file.train_meta.final_train_accuracy.0,
    };
    Ok(model)
}

pub fn save_model(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_json(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}
