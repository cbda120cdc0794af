//! Iterative sign-gradient attacks under an L∞ budget.
//!
//! All four variants share one loop: compute an update direction at the
//! current iterate (the plain loss gradient, or the averaged boundary
//! gradient), optionally fold it into a momentum accumulator, take a signed
//! step of size `step`, and project back onto the ε-ball and the unit cube.

use serde::{Deserialize, Serialize};

use crate::boundary::{averaged_unchecked, BoundaryConfig, SourceRegion};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    #[serde(rename = "i_fgsm")]
    IFgsm,
    #[serde(rename = "mi_fgsm")]
    MiFgsm,
    #[serde(rename = "bf_fgsm")]
    BfFgsm,
    #[serde(rename = "bf_mi_fgsm")]
    BfMiFgsm,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [AttackKind::IFgsm, AttackKind::MiFgsm, AttackKind::BfFgsm, AttackKind::BfMiFgsm];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::IFgsm => "I-FGSM",
            AttackKind::MiFgsm => "MI-FGSM",
            AttackKind::BfFgsm => "BF-FGSM",
            AttackKind::BfMiFgsm => "BF-MI-FGSM",
        }
    }

    pub fn uses_boundary(self) -> bool {
        matches!(self, AttackKind::BfFgsm | AttackKind::BfMiFgsm)
    }

    pub fn uses_momentum(self) -> bool {
        matches!(self, AttackKind::MiFgsm | AttackKind::BfMiFgsm)
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// L∞ budget in unit-cube units.
    pub epsilon: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Per-iteration step; `epsilon / iterations` when absent.
    #[serde(default)]
    pub step: Option<f64>,
    /// Momentum decay; only read by the momentum variants.
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// Boundary sampling settings; required by the boundary-fitting variants.
    #[serde(default)]
    pub boundary: Option<BoundaryConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub record_trace: bool,
}

fn default_iterations() -> usize {
    10
}

fn default_mu() -> f64 {
    1.0
}

impl AttackConfig {
    /// `T = 10`, `alpha = epsilon / T`, `mu = 1`, no boundary sampling.
    pub fn new(epsilon: f64) -> Self {
        AttackConfig {
            epsilon,
            iterations: default_iterations(),
            step: None,
            mu: default_mu(),
            boundary: None,
            seed: 0,
            record_trace: false,
        }
    }

    pub fn with_boundary(mut self, boundary: BoundaryConfig) -> Self {
        self.boundary = Some(boundary);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn step_size(&self) -> f64 {
        self.step.unwrap_or(self.epsilon / self.iterations.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        let step = self.step_size();
        if !(step >= 0.0 && step <= self.epsilon) {
            return Err(Error::InvalidConfig(format!("step {step} must lie in [0, epsilon = {}]", self.epsilon)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidConfig(format!("mu must be >= 0, got {}", self.mu)));
        }
        if let Some(b) = &self.boundary {
            b.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: Vec<f64>,
    pub success_substitute: bool,
    /// Iterates `x'_1 ..= x'_T` when `record_trace` is set.
    pub iterate_trace: Option<Vec<Vec<f64>>>,
    /// Boundary samples that exhausted their shrinks (boundary variants).
    pub fallback_count: usize,
    /// Forward and gradient evaluations spent while crafting.
    pub queries: usize,
}

/// `sign(0) = 0`
#[inline]
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projects onto `[origin - epsilon, origin + epsilon]` and then onto
/// `[0, 1]`, coordinate-wise.
///
/// The ball bound holds exactly in floating point: `|result - origin| <=
/// epsilon` as computed, without rounding slack.
pub fn clip_ball(candidate: &[f64], origin: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if candidate.len() != origin.len() {
        return Err(Error::InvalidInput(format!("candidate has length {}, origin {}", candidate.len(), origin.len())));
    }
    Ok(candidate.iter().zip(origin).map(|(&c, &o)| clip_coordinate(c, o, epsilon)).collect())
}

#[inline]
fn clip_coordinate(c: f64, o: f64, epsilon: f64) -> f64 {
    let mut v = c.max(o - epsilon).min(o + epsilon);
    // o +/- epsilon may round outward by an ulp
    while v - o > epsilon {
        v = v.next_down();
    }
    while o - v > epsilon {
        v = v.next_up();
    }
    v.clamp(0.0, 1.0)
}

fn check_inputs(model: &ModelParams, x: &[f64], y: usize, cfg: &AttackConfig) -> Result<()> {
    cfg.validate()?;
    if x.len() != model.input_dim() {
        return Err(Error::InvalidInput(format!("input has length {}, model expects {}", x.len(), model.input_dim())));
    }
    if let Some(i) = x.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput(format!("coordinate {i} lies outside [0,1]")));
    }
    if y >= model.num_classes() {
        return Err(Error::InvalidInput(format!("label {y} out of range")));
    }
    Ok(())
}

/// Runs `kind` against `model` from clean input `x` with true label `y`.
pub fn run_attack(
    kind: AttackKind,
    model: &ModelParams,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    check_inputs(model, x, y, cfg)?;
    let boundary = if kind.uses_boundary() {
        Some(
            cfg.boundary
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig(format!("{kind} requires a boundary configuration")))?,
        )
    } else {
        None
    };
    let step = cfg.step_size();
    let mu = if kind.uses_momentum() { Some(cfg.mu) } else { None };
    let root = Stream::new(cfg.seed);

    let mut current = x.to_vec();
    let mut accumulator = vec![0.0; x.len()];
    let mut trace = cfg.record_trace.then(|| Vec::with_capacity(cfg.iterations));
    let mut queries = 0;
    let mut fallback_count = 0;

    for t in 0..cfg.iterations {
        let direction = match boundary {
            Some(bcfg) => {
                let source = match bcfg.source_region {
                    SourceRegion::Adaptive => {
                        queries += 1;
                        model.predict(&current)?
                    }
                    SourceRegion::GroundTruth => y,
                };
                let g = averaged_unchecked(model, &current, y, source, bcfg, root.child(t as u64));
                queries += g.evaluations;
                fallback_count += g.fallback_count;
                g.mean
            }
            None => {
                queries += 1;
                model.input_gradient(&current, y)?
            }
        };
        let direction = match mu {
            Some(mu) => {
                let l1: f64 = direction.iter().map(|v| v.abs()).sum();
                for (acc, g) in accumulator.iter_mut().zip(&direction) {
                    *acc *= mu;
                    if l1 > 0.0 {
                        *acc += g / l1;
                    }
                }
                &accumulator
            }
            None => &direction,
        };
        for ((v, &o), d) in current.iter_mut().zip(x).zip(direction) {
            *v = clip_coordinate(*v + step * sign(*d), o, cfg.epsilon);
        }
        if let Some(tr) = trace.as_mut() {
            tr.push(current.clone());
        }
    }

    let success_substitute = model.predict(&current)? != y;
    Ok(AttackResult { adversarial: current, success_substitute, iterate_trace: trace, fallback_count, queries })
}

pub fn i_fgsm(model: &ModelParams, x: &[f64], y: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    run_attack(AttackKind::IFgsm, model, x, y, cfg)
}

pub fn mi_fgsm(model: &ModelParams, x: &[f64], y: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    run_attack(AttackKind::MiFgsm, model, x, y, cfg)
}

/// Boundary fitting: each step follows the sign of the gradient averaged
/// over fresh boundary points sampled around the current iterate.
pub fn bf_fgsm(model: &ModelParams, x: &[f64], y: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    run_attack(AttackKind::BfFgsm, model, x, y, cfg)
}

pub fn bf_mi_fgsm(model: &ModelParams, x: &[f64], y: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    run_attack(AttackKind::BfMiFgsm, model, x, y, cfg)
}
