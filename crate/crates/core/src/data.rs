//! Seeded synthetic classification problems in the unit cube, and an IDX
//! (MNIST-style) reader.
//!
//! Generated point clouds are mapped into the cube by one translation and a
//! single isotropic scale, so relative geometry is preserved.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabeledPoint, ModelParams};
use crate::rng::{gaussian_vector, Stream};

/// Fraction of each class held out for testing.
const TEST_FRACTION: f64 = 0.3;
/// Margin left between the rescaled cloud and the cube faces.
const CUBE_PADDING: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub points: Vec<LabeledPoint>,
    pub num_classes: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub gen_seed: u64,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.x.len())
    }

    pub fn train_points(&self) -> Vec<LabeledPoint> {
        self.train.iter().map(|&i| self.points[i].clone()).collect()
    }

    pub fn test_points(&self) -> Vec<LabeledPoint> {
        self.test.iter().map(|&i| self.points[i].clone()).collect()
    }

    /// Pooled standard deviation of all coordinates.
    pub fn coordinate_std(&self) -> f64 {
        let d = self.dim();
        if d == 0 || self.points.len() < 2 {
            return 0.0;
        }
        let n = self.points.len() as f64;
        let mut total = 0.0;
        for c in 0..d {
            let mean = self.points.iter().map(|p| p.x[c]).sum::<f64>() / n;
            total += self.points.iter().map(|p| (p.x[c] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        }
        (total / d as f64).sqrt()
    }

    /// Every `len / n`-th training point, `n` in total (all of them when
    /// `n` is at least the split size). Training indices are sorted by
    /// position, so the stride visits every class.
    pub fn train_subsample(&self, n: usize) -> Vec<LabeledPoint> {
        let all = self.train_points();
        if n == 0 || n >= all.len() {
            return all;
        }
        let stride = all.len() / n;
        all.into_iter().step_by(stride).take(n).collect()
    }

    /// Trains `arch`-shaped model on the training split, recording the dataset name.
    pub fn train_model(
        &self,
        arch: &crate::model::Architecture,
        hyper: &crate::model::TrainHyper,
        seed: u64,
    ) -> Result<ModelParams> {
        self.train_model_on(&self.train_points(), arch, hyper, seed)
    }

    /// As [`Dataset::train_model`] on a caller-chosen subset of the points.
    pub fn train_model_on(
        &self,
        points: &[LabeledPoint],
        arch: &crate::model::Architecture,
        hyper: &crate::model::TrainHyper,
        seed: u64,
    ) -> Result<ModelParams> {
        let mut model = crate::model::train(arch, points, hyper, seed)?;
        model.train_meta.dataset = self.name.clone();
        Ok(model)
    }

    /// Writes `x0,..,x{d-1},y` rows with a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.dim();
        let header: Vec<String> = (0..d).map(|i| format!("x{i}")).chain(["y".to_string()]).collect();
        writeln!(out, "{}", header.join(","))?;
        for p in &self.points {
            for v in &p.x {
                write!(out, "{v},")?;
            }
            writeln!(out, "{}", p.y)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    fn from_raw(name: String, raw: Vec<(Vec<f64>, usize)>, num_classes: usize, seed: u64) -> Result<Dataset> {
        let points = raw.into_iter().map(|(x, y)| LabeledPoint::new(x, y)).collect::<Result<Vec<_>>>()?;
        let (train, test) = stratified_split(&points, num_classes, Stream::new(seed).child(99))?;
        Ok(Dataset { name, points, num_classes, train, test, gen_seed: seed })
    }
}

/// Per-class shuffle, then the first `TEST_FRACTION` of each class goes to test.
fn stratified_split(points: &[LabeledPoint], num_classes: usize, stream: Stream) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = stream.rng();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..num_classes {
        let mut members: Vec<usize> = (0..points.len()).filter(|&i| points[i].y == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "class {class} has a single point; cannot appear in both splits"
            )));
        }
        members.shuffle(&mut rng);
        let n_test = ((members.len() as f64 * TEST_FRACTION).round() as usize).clamp(1, members.len() - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Translates and isotropically scales the cloud into `[pad, 1 - pad]^d`.
fn fit_into_cube(raw: &mut [(Vec<f64>, usize)]) {
    let Some(d) = raw.first().map(|(x, _)| x.len()) else {
        return;
    };
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for (x, _) in raw.iter() {
        for c in 0..d {
            lo[c] = lo[c].min(x[c]);
            hi[c] = hi[c].max(x[c]);
        }
    }
    let range = lo.iter().zip(&hi).map(|(l, h)| h - l).fold(0.0f64, f64::max);
    let scale = if range > 0.0 { (1.0 - 2.0 * CUBE_PADDING) / range } else { 0.0 };
    for (x, _) in raw.iter_mut() {
        for c in 0..d {
            x[c] = (CUBE_PADDING + (x[c] - lo[c]) * scale).clamp(0.0, 1.0);
        }
    }
}

const MIN_CENTER_GAP: f64 = 0.5;
const CENTER_DRAWS: usize = 100;

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `k` isotropic Gaussian clusters of standard deviation `spread` around
/// centers drawn uniformly from the unit cube, redrawn (up to a bound) until
/// every pair of centers is at least 0.5 apart.
pub fn gen_blobs(k: usize, d: usize, n_per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("blobs need at least 2 classes, got {k}")));
    }
    if d < 1 || n_per_class < 2 {
        return Err(Error::InvalidConfig("blobs need d >= 1 and n_per_class >= 2".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidConfig(format!("spread must be >= 0, got {spread}")));
    }
    let root = Stream::new(seed);
    let mut center_rng = root.child(0).rng();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        // Best of a bounded number of draws, so crowded settings still terminate.
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..CENTER_DRAWS {
            let c: Vec<f64> = (0..d).map(|_| center_rng.random()).collect();
            let gap = centers.iter().map(|o| euclidean(o, &c)).fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|(g, _)| gap > *g) {
                best = Some((gap, c));
            }
            if gap >= MIN_CENTER_GAP {
                break;
            }
        }
        centers.push(best.expect("at least one draw").1);
    }
    let mut noise_rng = root.child(1).rng();
    let mut raw = Vec::with_capacity(k * n_per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            let noise = gaussian_vector(&mut noise_rng, d, spread);
            raw.push((center.iter().zip(noise).map(|(c, e)| c + e).collect(), class));
        }
    }
    fit_into_cube(&mut raw);
    Dataset::from_raw(format!("blobs-k{k}-d{d}"), raw, k, seed)
}

/// Two interleaved half circles with Gaussian jitter of standard deviation `noise`.
pub fn gen_moons(n_per_class: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n_per_class < 2 || !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidConfig("moons need n_per_class >= 2 and noise >= 0".into()));
    }
    let mut rng = Stream::new(seed).child(0).rng();
    let mut raw = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        let t = std::f64::consts::PI * i as f64 / (n_per_class - 1) as f64;
        let e = gaussian_vector(&mut rng, 2, noise);
        raw.push((vec![t.cos() + e[0], t.sin() + e[1]], 0));
    }
    for i in 0..n_per_class {
        let t = std::f64::consts::PI * i as f64 / (n_per_class - 1) as f64;
        let e = gaussian_vector(&mut rng, 2, noise);
        raw.push((vec![1.0 - t.cos() + e[0], 0.5 - t.sin() + e[1]], 1));
    }
    fit_into_cube(&mut raw);
    Dataset::from_raw("moons".into(), raw, 2, seed)
}

/// `k` concentric annuli of radii `1..=k` with radial jitter `noise`.
pub fn gen_rings(k: usize, n_per_class: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("rings need at least 2 classes, got {k}")));
    }
    if n_per_class < 2 || !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidConfig("rings need n_per_class >= 2 and noise >= 0".into()));
    }
    let mut rng = Stream::new(seed).child(0).rng();
    let mut raw = Vec::with_capacity(k * n_per_class);
    for class in 0..k {
        for _ in 0..n_per_class {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (class + 1) as f64 + noise * gaussian_vector(&mut rng, 1, 1.0)[0];
            raw.push((vec![r * angle.cos(), r * angle.sin()], class));
        }
    }
    fit_into_cube(&mut raw);
    Dataset::from_raw(format!("rings-k{k}"), raw, k, seed)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse(bytes.len(), format!("header truncated: need 4 bytes at offset {offset}")))
}

/// Decodes an IDX image file and label file held in memory.
///
/// Pixels map to `[0,1]` by dividing by 255. With `downscale = k > 1` each
/// `k x k` block is replaced by its mean (trailing rows/columns that do not
/// fill a block are dropped).
pub fn parse_idx(images: &[u8], labels: &[u8], max_items: Option<usize>, downscale: usize) -> Result<Dataset> {
    if downscale == 0 {
        return Err(Error::InvalidConfig("downscale must be at least 1".into()));
    }
    let magic = read_u32(images, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::parse(0, format!("image file magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let magic = read_u32(labels, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::parse(0, format!("label file magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let count = read_u32(images, 4)? as usize;
    let rows = read_u32(images, 8)? as usize;
    let cols = read_u32(images, 12)? as usize;
    let label_count = read_u32(labels, 4)? as usize;
    if label_count != count {
        return Err(Error::parse(4, format!("label file declares {label_count} items, image file {count}")));
    }
    let pixels = rows * cols;
    let image_end = 16 + count * pixels;
    if images.len() < image_end {
        return Err(Error::parse(
            images.len(),
            format!("image payload truncated: {} bytes, expected {image_end}", images.len()),
        ));
    }
    if labels.len() < 8 + count {
        return Err(Error::parse(
            labels.len(),
            format!("label payload truncated: {} bytes, expected {}", labels.len(), 8 + count),
        ));
    }
    let take = max_items.map_or(count, |m| m.min(count));
    let (out_rows, out_cols) = (rows / downscale, cols / downscale);
    let block = (downscale * downscale) as f64;
    let mut raw = Vec::with_capacity(take);
    let mut num_classes = 0;
    for item in 0..take {
        let img = &images[16 + item * pixels..16 + (item + 1) * pixels];
        let x: Vec<f64> = if downscale == 1 {
            img.iter().map(|&p| p as f64 / 255.0).collect()
        } else {
            let mut x = Vec::with_capacity(out_rows * out_cols);
            for br in 0..out_rows {
                for bc in 0..out_cols {
                    let mut sum = 0u32;
                    for r in br * downscale..(br + 1) * downscale {
                        for c in bc * downscale..(bc + 1) * downscale {
                            sum += img[r * cols + c] as u32;
                        }
                    }
                    x.push(sum as f64 / block / 255.0);
                }
            }
            x
        };
        let y = labels[8 + item] as usize;
        num_classes = num_classes.max(y + 1);
        raw.push((x, y));
    }
    let points = raw.into_iter().map(|(x, y)| LabeledPoint::new(x, y)).collect::<Result<Vec<_>>>()?;
    // splits need two members per class; tiny files keep everything in train
    let (train, test) = stratified_split(&points, num_classes, Stream::new(0).child(99))
        .unwrap_or_else(|_| ((0..points.len()).collect(), Vec::new()));
    Ok(Dataset { name: "idx".into(), points, num_classes: num_classes.max(2), train, test, gen_seed: 0 })
}

pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    max_items: Option<usize>,
    downscale: usize,
) -> Result<Dataset> {
    let ip = images_path.as_ref();
    let lp = labels_path.as_ref();
    let images = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    parse_idx(&images, &labels, max_items, downscale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_in_cube() {
        let sets =
            [gen_blobs(3, 4, 30, 0.1, 5).unwrap(), gen_moons(40, 0.1, 5).unwrap(), gen_rings(3, 40, 0.1, 5).unwrap()];
        let again =
            [gen_blobs(3, 4, 30, 0.1, 5).unwrap(), gen_moons(40, 0.1, 5).unwrap(), gen_rings(3, 40, 0.1, 5).unwrap()];
        for (a, b) in sets.iter().zip(&again) {
            assert_eq!(a, b);
            assert!(a.points.iter().all(|p| p.x.iter().all(|v| (0.0..=1.0).contains(v))));
            assert_eq!(a.train.len() + a.test.len(), a.points.len());
            for class in 0..a.num_classes {
                assert!(a.train.iter().any(|&i| a.points[i].y == class));
                assert!(a.test.iter().any(|&i| a.points[i].y == class));
            }
        }
        assert_ne!(gen_moons(40, 0.1, 6).unwrap(), sets[1]);
    }

    #[test]
    fn too_few_classes_rejected() {
        assert!(gen_blobs(1, 2, 10, 0.1, 0).is_err());
        assert!(gen_rings(1, 10, 0.1, 0).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let ds = gen_blobs(2, 3, 2, 0.1, 1).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x0,x1,x2,y"));
        assert_eq!(lines.count(), 4);
    }

    fn idx_images(n: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for w in [IDX_IMAGES_MAGIC, n, rows, cols] {
            v.extend_from_slice(&w.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn idx_all_white_image() {
        let ds = parse_idx(&idx_images(1, 28, 28, &[255; 784]), &idx_labels(&[3]), None, 1).unwrap();
        assert_eq!(ds.points.len(), 1);
        assert!(ds.points[0].x.iter().all(|&v| v == 1.0));
        assert_eq!(ds.points[0].y, 3);
    }

    #[test]
    fn idx_checkerboard_downscale() {
        let board: Vec<u8> = (0..784).map(|i| if (i / 28 + i % 28) % 2 == 0 { 255 } else { 0 }).collect();
        let ds = parse_idx(&idx_images(1, 28, 28, &board), &idx_labels(&[0]), None, 2).unwrap();
        assert_eq!(ds.points[0].x.len(), 196);
        assert!(ds.points[0].x.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let good = idx_images(2, 2, 2, &[0; 8]);
        let mut bad_magic = good.clone();
        bad_magic[3] = 0x01;
        match parse_idx(&bad_magic, &idx_labels(&[0, 1]), None, 1) {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_idx(&good[..20], &idx_labels(&[0, 1]), None, 1) {
            Err(Error::Parse { offset: 20, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_idx(&good, &idx_labels(&[0, 1, 1]), None, 1) {
            Err(Error::Parse { offset: 4, message }) => assert!(message.contains("3 items")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn idx_max_items_truncates() {
        let ds =
            parse_idx(&idx_images(4, 1, 2, &[0, 255, 255, 0, 10, 20, 30, 40]), &idx_labels(&[0, 1, 0, 1]), Some(2), 1)
                .unwrap();
        assert_eq!(ds.points.len(), 2);
        assert_eq!(ds.points[1].x, vec![1.0, 0.0]);
    }
}
