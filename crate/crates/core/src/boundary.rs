//! Decision-boundary geometry of a single classifier.
//!
//! Boundary points are found by drawing a Gaussian offset `d` and shrinking
//! it geometrically, `x + gamma^t * d` for `t = 0, 1, ..`, until the probe
//! lands back in the source class region. Boundary distances are measured
//! along a direction normalized to unit L∞ norm, so the step length is
//! itself the L∞ distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::{gaussian_vector, Stream};

/// Which class region boundary probes must stay in once an attack iterate
/// is already misclassified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceRegion {
    /// The ground-truth label while the iterate is still classified as it,
    /// the iterate's current prediction afterwards.
    #[default]
    Adaptive,
    /// Always the ground-truth label, even when the iterate has left its region.
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    /// Standard deviation of each coordinate of the random offset.
    pub sigma: f64,
    /// Shrinkage factor in (0, 1).
    pub gamma: f64,
    /// Largest shrink exponent tried before falling back to `x`.
    pub t_max: u32,
    /// Number of boundary points averaged per gradient.
    pub n_points: usize,
    pub source_region: SourceRegion,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig {
            sigma: 20.0 / 255.0,
            gamma: 0.6,
            t_max: 5,
            n_points: 20,
            source_region: SourceRegion::Adaptive,
        }
    }
}

impl BoundaryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if self.t_max < 1 {
            return Err(Error::InvalidConfig("t_max must be at least 1".into()));
        }
        if self.n_points < 1 {
            return Err(Error::InvalidConfig("n_points must be at least 1".into()));
        }
        Ok(())
    }
}

/// One boundary probe and the loss gradient taken there.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySample {
    pub point: Vec<f64>,
    pub direction: Vec<f64>,
    pub shrink_count: u32,
    pub gradient: Vec<f64>,
    /// No shrink exponent up to `t_max` re-entered the source region;
    /// `point` is then `x` itself.
    pub fell_back: bool,
    /// Forward passes plus gradient evaluations spent on this sample.
    pub evaluations: usize,
}

/// `x + gamma^t * d`, the probe location for shrink exponent `t`.
pub fn probe_point(x: &[f64], direction: &[f64], gamma: f64, t: u32) -> Vec<f64> {
    let scale = gamma.powi(t as i32);
    x.iter().zip(direction).map(|(a, d)| a + scale * d).collect()
}

/// Draws one boundary point of the region of `source_class` around `x`.
///
/// `y_attack` is the label the loss gradient is taken against. Probes are
/// not clamped to the unit cube.
pub fn sample_boundary_point(
    model: &ModelParams,
    x: &[f64],
    source_class: usize,
    y_attack: usize,
    cfg: &BoundaryConfig,
    stream: Stream,
) -> Result<BoundarySample> {
    cfg.validate()?;
    let current = model.predict(x)?;
    if current != source_class {
        return Err(Error::Contract(format!("x is classified as {current}, not as source class {source_class}")));
    }
    if y_attack >= model.num_classes() {
        return Err(Error::InvalidInput(format!("label {y_attack} out of range")));
    }
    Ok(sample_unchecked(model, x, source_class, y_attack, cfg, stream))
}

/// As [`sample_boundary_point`] without the source-region precondition, for
/// callers that have already validated inputs (or that deliberately probe
/// toward a region `x` is not in).
pub(crate) fn sample_unchecked(
    model: &ModelParams,
    x: &[f64],
    source_class: usize,
    y_attack: usize,
    cfg: &BoundaryConfig,
    stream: Stream,
) -> BoundarySample {
    let mut rng = stream.rng();
    let direction = gaussian_vector(&mut rng, x.len(), cfg.sigma);
    let mut evaluations = 0;
    let mut found = None;
    for t in 0..=cfg.t_max {
        let p = probe_point(x, &direction, cfg.gamma, t);
        evaluations += 1;
        if model.predict(&p).expect("validated dimension") == source_class {
            found = Some((p, t));
            break;
        }
    }
    let (point, shrink_count, fell_back) = match found {
        Some((p, t)) => (p, t, false),
        None => (x.to_vec(), cfg.t_max, true),
    };
    let gradient = model.input_gradient(&point, y_attack).expect("validated dimension and label");
    evaluations += 1;
    BoundarySample { point, direction, shrink_count, gradient, fell_back, evaluations }
}

/// Mean of the loss gradients over `n_points` boundary samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGradient {
    pub mean: Vec<f64>,
    pub fallback_count: usize,
    pub evaluations: usize,
}

/// Averages gradients of `cfg.n_points` independent boundary samples.
/// Sample `i` draws from `stream.child(i)`.
pub fn averaged_boundary_gradient(
    model: &ModelParams,
    x: &[f64],
    y_attack: usize,
    source_class: usize,
    cfg: &BoundaryConfig,
    stream: Stream,
) -> Result<BoundaryGradient> {
    // validates config, dimensions and the source-region precondition
    let first = sample_boundary_point(model, x, source_class, y_attack, cfg, stream.child(0))?;
    Ok(average_from(model, x, y_attack, source_class, cfg, stream, first))
}

pub(crate) fn averaged_unchecked(
    model: &ModelParams,
    x: &[f64],
    y_attack: usize,
    source_class: usize,
    cfg: &BoundaryConfig,
    stream: Stream,
) -> BoundaryGradient {
    let first = sample_unchecked(model, x, source_class, y_attack, cfg, stream.child(0));
    average_from(model, x, y_attack, source_class, cfg, stream, first)
}

fn average_from(
    model: &ModelParams,
    x: &[f64],
    y_attack: usize,
    source_class: usize,
    cfg: &BoundaryConfig,
    stream: Stream,
    first: BoundarySample,
) -> BoundaryGradient {
    let mut sum = first.gradient;
    let mut fallback_count = first.fell_back as usize;
    let mut evaluations = first.evaluations;
    for i in 1..cfg.n_points {
        let s = sample_unchecked(model, x, source_class, y_attack, cfg, stream.child(i as u64));
        for (acc, g) in sum.iter_mut().zip(&s.gradient) {
            *acc += g;
        }
        fallback_count += s.fell_back as usize;
        evaluations += s.evaluations;
    }
    let n = cfg.n_points as f64;
    for v in &mut sum {
        *v /= n;
    }
    BoundaryGradient { mean: sum, fallback_count, evaluations }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionKind {
    SignGradient,
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceMeasurement {
    /// L∞ distance to the first prediction flip, or the cap when censored.
    pub distance: f64,
    pub censored: bool,
    pub direction_kind: DirectionKind,
    /// Largest step known not to flip the prediction (the inside end of the
    /// final bracket).
    pub inside: f64,
}

/// `direction / ||direction||_inf`
pub fn linf_unit(direction: &[f64]) -> Result<Vec<f64>> {
    let norm = direction.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if norm == 0.0 {
        return Err(Error::InvalidInput("direction is the zero vector".into()));
    }
    if !norm.is_finite() {
        return Err(Error::InvalidInput("direction is not finite".into()));
    }
    Ok(direction.iter().map(|v| v / norm).collect())
}

/// Distance from `x` to the nearest prediction change along `direction`.
///
/// Steps of `tol, 2 tol, 4 tol, ..` (the last one truncated to `cap`)
/// bracket the first flip, which bisection then narrows to width `tol`.
pub fn boundary_distance(
    model: &ModelParams,
    x: &[f64],
    direction: &[f64],
    cap: f64,
    tol: f64,
    kind: DirectionKind,
) -> Result<DistanceMeasurement> {
    if !(cap > 0.0 && cap.is_finite()) || !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidConfig(format!("cap ({cap}) and tol ({tol}) must be positive")));
    }
    if direction.len() != x.len() {
        return Err(Error::InvalidInput("direction and x differ in length".into()));
    }
    let unit = linf_unit(direction)?;
    let base = model.predict(x)?;
    let mut along = vec![0.0; x.len()];
    let mut flips = |s: f64| {
        for ((dst, a), u) in along.iter_mut().zip(x).zip(&unit) {
            *dst = a + s * u;
        }
        model.predict(&along).map(|c| c != base)
    };

    let mut lo = 0.0;
    let mut step = tol;
    let mut hi = loop {
        if step >= cap {
            if flips(cap)? {
                break cap;
            }
            return Ok(DistanceMeasurement { distance: cap, censored: true, direction_kind: kind, inside: cap });
        }
        if flips(step)? {
            break step;
        }
        lo = step;
        step *= 2.0;
    };
    while hi - lo > tol {
        let mid = lo + 0.5 * (hi - lo);
        if flips(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(DistanceMeasurement { distance: hi, censored: false, direction_kind: kind, inside: lo })
}

/// Boundary distance along a fresh Gaussian direction `N(0, sigma^2 I)`.
pub fn natural_direction_distance(
    model: &ModelParams,
    x: &[f64],
    sigma: f64,
    stream: Stream,
    cap: f64,
    tol: f64,
) -> Result<DistanceMeasurement> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma must be > 0, got {sigma}")));
    }
    let d = gaussian_vector(&mut stream.rng(), x.len(), sigma);
    boundary_distance(model, x, &d, cap, tol, DirectionKind::Natural)
}

pub const DEFAULT_DISTANCE_CAP: f64 = 4.0;
pub const DEFAULT_DISTANCE_TOL: f64 = 1e-4;

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-class linear model whose class-0 margin is `w.x + b`.
    fn binary_linear(w: &[f64], b: f64) -> ModelParams {
        // logit_0 = w.x + b, logit_1 = 0
        ModelParams::linear(vec![w.to_vec(), vec![0.0; w.len()]], vec![b, 0.0]).unwrap()
    }

    #[test]
    fn tiny_offset_needs_no_shrink() {
        let m = binary_linear(&[1.0, -1.0], 0.1);
        let x = [0.5, 0.5];
        let cfg = BoundaryConfig { sigma: 1e-6, ..BoundaryConfig::default() };
        let s = sample_boundary_point(&m, &x, 0, 0, &cfg, Stream::new(1)).unwrap();
        assert_eq!(s.shrink_count, 0);
        assert!(!s.fell_back);
        assert_eq!(s.point, probe_point(&x, &s.direction, cfg.gamma, 0));
    }

    #[test]
    fn precondition_is_enforced() {
        let m = binary_linear(&[1.0, -1.0], 0.1);
        let err = sample_boundary_point(&m, &[0.5, 0.5], 1, 0, &BoundaryConfig::default(), Stream::new(1));
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn exhausted_shrinks_fall_back_to_x() {
        // x sits almost on the boundary and sigma is huge, so most draws
        // stay outside even after five shrinks.
        let m = binary_linear(&[1.0, 0.0], -0.5 + 1e-9);
        let x = [0.5, 0.5];
        let cfg = BoundaryConfig { sigma: 100.0, ..BoundaryConfig::default() };
        let mut fell = 0;
        for i in 0..50 {
            let s = sample_boundary_point(&m, &x, 0, 1, &cfg, Stream::new(i)).unwrap();
            if s.fell_back {
                fell += 1;
                assert_eq!(s.point, x.to_vec());
                assert_eq!(s.gradient, m.input_gradient(&x, 1).unwrap());
                assert_eq!(s.evaluations, cfg.t_max as usize + 2);
            }
        }
        assert!(fell > 10);
    }

    #[test]
    fn single_point_average_is_the_sample_gradient() {
        let m = binary_linear(&[0.7, -1.3], 0.05);
        let x = [0.4, 0.2];
        let cfg = BoundaryConfig { n_points: 1, sigma: 0.3, ..BoundaryConfig::default() };
        let g = averaged_boundary_gradient(&m, &x, 0, 0, &cfg, Stream::new(4)).unwrap();
        let s = sample_boundary_point(&m, &x, 0, 0, &cfg, Stream::new(4).child(0)).unwrap();
        assert_eq!(g.mean, s.gradient);
    }

    #[test]
    fn distance_along_linear_normal_is_closed_form() {
        let w = [0.8, -0.6];
        let b = 0.3;
        let m = binary_linear(&w, b);
        let x = [0.2, 0.4];
        // move against class 0: direction -w, u = sign
        let dir = [-w[0], -w[1]];
        let meas = boundary_distance(&m, &x, &dir, 4.0, 1e-4, DirectionKind::SignGradient).unwrap();
        let u = linf_unit(&dir).unwrap();
        let margin = w[0] * x[0] + w[1] * x[1] + b;
        let wu = w[0] * u[0] + w[1] * u[1];
        let exact = margin.abs() / wu.abs();
        assert!(!meas.censored);
        assert!(meas.distance >= exact - 1e-12 && meas.distance <= exact + 1e-4);
        assert!(meas.inside <= exact);
    }

    #[test]
    fn distance_away_from_boundary_is_censored() {
        let m = binary_linear(&[1.0, 0.0], 0.0);
        let meas = boundary_distance(&m, &[0.5, 0.5], &[1.0, 0.0], 4.0, 1e-4, DirectionKind::Natural).unwrap();
        assert!(meas.censored);
        assert_eq!(meas.distance, 4.0);
        assert!(matches!(
            boundary_distance(&m, &[0.5, 0.5], &[0.0, 0.0], 4.0, 1e-4, DirectionKind::Natural),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn natural_distance_is_seeded() {
        let m = binary_linear(&[1.0, 1.0], -0.9);
        let x = [0.2, 0.3];
        let a = natural_direction_distance(&m, &x, 0.5, Stream::new(3), 4.0, 1e-4).unwrap();
        let b = natural_direction_distance(&m, &x, 0.5, Stream::new(3), 4.0, 1e-4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.direction_kind, DirectionKind::Natural);
    }

    #[test]
    fn config_validation() {
        let bad = [
            BoundaryConfig { gamma: 1.0, ..Default::default() },
            BoundaryConfig { gamma: 0.0, ..Default::default() },
            BoundaryConfig { sigma: 0.0, ..Default::default() },
            BoundaryConfig { t_max: 0, ..Default::default() },
            BoundaryConfig { n_points: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!(BoundaryConfig::default().validate().is_ok());
    }
}
