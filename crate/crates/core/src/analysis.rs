//! Desk-scale diagnostic studies over substitute/victim model pairs.
//!
//! Every study is a deterministic function of its models, inputs,
//! configuration and seed: per-input work draws from `Stream(seed)` children
//! indexed by input position and runs in parallel, and results are reduced
//! in input order. Means carry standard errors, and per-input records are
//! kept so callers can pool across seed banks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{run_attack, AttackConfig, AttackKind};
use crate::boundary::{
    averaged_boundary_gradient, boundary_distance, linf_unit, natural_direction_distance, BoundaryConfig,
    DirectionKind, DEFAULT_DISTANCE_CAP, DEFAULT_DISTANCE_TOL,
};
use crate::error::{Error, Result};
use crate::model::{LabeledPoint, ModelParams};
use crate::rng::Stream;
use crate::stats::{cosine, spearman, MeanSe};

#[derive(Debug, Clone)]
pub struct ModelPair {
    pub substitute: ModelParams,
    pub victim: ModelParams,
    pub pair_id: String,
}

impl ModelPair {
    pub fn new(pair_id: impl Into<String>, substitute: ModelParams, victim: ModelParams) -> Result<Self> {
        if substitute.input_dim() != victim.input_dim() || substitute.num_classes() != victim.num_classes() {
            return Err(Error::InvalidConfig(format!(
                "substitute ({}->{}) and victim ({}->{}) disagree on input_dim/num_classes",
                substitute.input_dim(),
                substitute.num_classes(),
                victim.input_dim(),
                victim.num_classes()
            )));
        }
        Ok(ModelPair { substitute, victim, pair_id: pair_id.into() })
    }
}

/// Bracket search settings shared by the distance-based studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub cap: f64,
    pub tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { cap: DEFAULT_DISTANCE_CAP, tol: DEFAULT_DISTANCE_TOL }
    }
}

fn check_inputs(inputs: &[LabeledPoint], model: &ModelParams) -> Result<()> {
    for (i, p) in inputs.iter().enumerate() {
        if p.x.len() != model.input_dim() || p.y >= model.num_classes() {
            return Err(Error::InvalidInput(format!("input {i} does not fit the models")));
        }
    }
    Ok(())
}

fn in_unit_interval(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

// ---------------------------------------------------------------------------
// gradient similarity

/// Where the victim gradient is taken for the boundary rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CosineProtocol {
    /// Victim gradient at the clean input.
    AtInput,
    /// Victim gradient at the victim's own boundary crossing along the
    /// substitute's averaged boundary gradient.
    #[default]
    AtVictimBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineRecord {
    pub index: usize,
    pub original: f64,
    pub boundary_n1: f64,
    pub boundary_nn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineReport {
    pub pair_id: String,
    pub protocol: CosineProtocol,
    pub n_points: usize,
    pub mean_original: MeanSe,
    pub mean_boundary_n1: MeanSe,
    pub mean_boundary_nn: MeanSe,
    /// Paired `boundary_nn - original`.
    pub gap_nn: MeanSe,
    pub n_inputs: usize,
    pub skipped: usize,
    /// Boundary rows whose victim search found no crossing; the victim
    /// gradient at the input is used instead.
    pub victim_censored: usize,
    pub records: Vec<CosineRecord>,
}

impl CosineReport {
    pub fn check_invariants(&self) -> Result<()> {
        let ok = self
            .records
            .iter()
            .all(|r| [r.original, r.boundary_n1, r.boundary_nn].iter().all(|c| (-1.0..=1.0).contains(c)));
        if !ok || self.records.len() + self.skipped != self.n_inputs {
            return Err(Error::Contract("cosine report violates its invariants".into()));
        }
        Ok(())
    }
}

/// Compares substitute and victim loss gradients at the input and at
/// substitute boundary points (one point, and `cfg.n_points` averaged).
pub fn cosine_study(
    pair: &ModelPair,
    inputs: &[LabeledPoint],
    cfg: &BoundaryConfig,
    protocol: CosineProtocol,
    search: &SearchConfig,
    seed: u64,
) -> Result<CosineReport> {
    cfg.validate()?;
    check_inputs(inputs, &pair.substitute)?;
    let root = Stream::new(seed);
    let single = BoundaryConfig { n_points: 1, ..*cfg };
    let results: Vec<Option<(CosineRecord, usize)>> = inputs
        .par_iter()
        .enumerate()
        .map(|(index, p)| -> Result<_> {
            let sub = &pair.substitute;
            let vic = &pair.victim;
            if sub.predict(&p.x)? != p.y || vic.predict(&p.x)? != p.y {
                return Ok(None);
            }
            let stream = root.child(index as u64);
            let g_sub = sub.input_gradient(&p.x, p.y)?;
            let g_vic = vic.input_gradient(&p.x, p.y)?;
            let g1 = averaged_boundary_gradient(sub, &p.x, p.y, p.y, &single, stream.child(0))?.mean;
            let gn = averaged_boundary_gradient(sub, &p.x, p.y, p.y, cfg, stream.child(1))?.mean;
            let mut censored = 0;
            let mut victim_grad_along = |g: &[f64]| -> Result<Vec<f64>> {
                match protocol {
                    CosineProtocol::AtInput => Ok(g_vic.clone()),
                    CosineProtocol::AtVictimBoundary => {
                        if g.iter().all(|&v| v == 0.0) {
                            censored += 1;
                            return Ok(g_vic.clone());
                        }
                        let m = boundary_distance(vic, &p.x, g, search.cap, search.tol, DirectionKind::SignGradient)?;
                        if m.censored {
                            censored += 1;
                            return Ok(g_vic.clone());
                        }
                        let u = linf_unit(g)?;
                        let point: Vec<f64> = p.x.iter().zip(&u).map(|(a, b)| a + m.inside * b).collect();
                        vic.input_gradient(&point, p.y)
                    }
                }
            };
            let v1 = victim_grad_along(&g1)?;
            let vn = victim_grad_along(&gn)?;
            Ok(Some((
                CosineRecord {
                    index,
                    original: cosine(&g_sub, &g_vic),
                    boundary_n1: cosine(&g1, &v1),
                    boundary_nn: cosine(&gn, &vn),
                },
                censored,
            )))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut victim_censored = 0;
    for (r, c) in results.into_iter().flatten() {
        records.push(r);
        victim_censored += c;
    }
    if records.is_empty() {
        return Err(Error::EmptyStudy(format!(
            "no input of {} is classified correctly by both models of {}",
            inputs.len(),
            pair.pair_id
        )));
    }
    let col = |f: fn(&CosineRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let original = col(|r| r.original);
    let nn = col(|r| r.boundary_nn);
    let report = CosineReport {
        pair_id: pair.pair_id.clone(),
        protocol,
        n_points: cfg.n_points,
        mean_original: MeanSe::of(&original),
        mean_boundary_n1: MeanSe::of(&col(|r| r.boundary_n1)),
        mean_boundary_nn: MeanSe::of(&nn),
        gap_nn: MeanSe::paired_difference(&nn, &original),
        n_inputs: inputs.len(),
        skipped: inputs.len() - records.len(),
        victim_censored,
        records,
    };
    report.check_invariants()?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// boundary distance along first-step attack directions

/// How the first-step direction is obtained on the substitute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionSource {
    /// `sign(grad J)` at the input (first step of I-FGSM and MI-FGSM).
    Gradient,
    /// `sign(G)` with `G` the averaged boundary gradient at the input
    /// (first step of BF-FGSM and BF-MI-FGSM).
    BoundaryGradient,
    /// A uniformly random sign vector.
    RandomSign,
}

impl DirectionSource {
    pub fn name(self) -> &'static str {
        match self {
            DirectionSource::Gradient => "I-FGSM",
            DirectionSource::BoundaryGradient => "BF-FGSM",
            DirectionSource::RandomSign => "random-sign",
        }
    }
}

impl From<AttackKind> for DirectionSource {
    fn from(kind: AttackKind) -> Self {
        if kind.uses_boundary() {
            DirectionSource::BoundaryGradient
        } else {
            DirectionSource::Gradient
        }
    }
}

/// The signed first-step direction of `source` at `p` on `model`.
pub fn first_step_direction(
    model: &ModelParams,
    p: &LabeledPoint,
    source: DirectionSource,
    cfg: &BoundaryConfig,
    stream: Stream,
) -> Result<Vec<f64>> {
    let raw = match source {
        DirectionSource::Gradient => model.input_gradient(&p.x, p.y)?,
        DirectionSource::BoundaryGradient => averaged_boundary_gradient(model, &p.x, p.y, p.y, cfg, stream)?.mean,
        DirectionSource::RandomSign => {
            use rand::Rng;
            let mut rng = stream.rng();
            (0..p.x.len()).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
        }
    };
    Ok(raw.into_iter().map(crate::attack::sign).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub direction: String,
    pub victim: String,
    pub distance: MeanSe,
    pub censored: usize,
    pub skipped: usize,
    /// Per-input distance; `None` when skipped or censored.
    pub per_input: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceTable {
    pub rows: Vec<DistanceRow>,
    pub n_inputs: usize,
}

impl DistanceTable {
    pub fn row(&self, direction: &str, victim: &str) -> Option<&DistanceRow> {
        self.rows.iter().find(|r| r.direction == direction && r.victim == victim)
    }

    pub fn check_invariants(&self) -> Result<()> {
        for r in &self.rows {
            let processed = r.per_input.iter().filter(|d| d.is_some()).count();
            let nonneg = r.per_input.iter().flatten().all(|&d| d >= 0.0);
            if !nonneg || processed + r.censored + r.skipped != self.n_inputs {
                return Err(Error::Contract(format!(
                    "distance row {}/{} violates its invariants",
                    r.direction, r.victim
                )));
            }
        }
        Ok(())
    }
}

/// Victim L∞ boundary distance along each substitute first-step direction.
///
/// Inputs misclassified by the substitute or the victim are skipped;
/// censored searches are excluded from the means and counted.
pub fn distance_study(
    pairs: &[ModelPair],
    inputs: &[LabeledPoint],
    directions: &[DirectionSource],
    cfg: &BoundaryConfig,
    search: &SearchConfig,
    seed: u64,
) -> Result<DistanceTable> {
    cfg.validate()?;
    let root = Stream::new(seed);
    let mut rows = Vec::new();
    for (pi, pair) in pairs.iter().enumerate() {
        check_inputs(inputs, &pair.substitute)?;
        // per input: None when skipped, else one measurement per direction
        let measured: Vec<Option<Vec<(f64, bool)>>> = inputs
            .par_iter()
            .enumerate()
            .map(|(index, p)| -> Result<_> {
                if pair.substitute.predict(&p.x)? != p.y || pair.victim.predict(&p.x)? != p.y {
                    return Ok(None);
                }
                let stream = root.path(&[pi as u64, index as u64]);
                directions
                    .iter()
                    .enumerate()
                    .map(|(di, &source)| {
                        // boundary-gradient directions share a stream so
                        // different attacks see the same boundary samples
                        let s = stream.child(match source {
                            DirectionSource::RandomSign => 1000 + di as u64,
                            _ => 0,
                        });
                        let dir = first_step_direction(&pair.substitute, p, source, cfg, s)?;
                        if dir.iter().all(|&v| v == 0.0) {
                            return Ok((search.cap, true));
                        }
                        let m = boundary_distance(
                            &pair.victim,
                            &p.x,
                            &dir,
                            search.cap,
                            search.tol,
                            DirectionKind::SignGradient,
                        )?;
                        Ok((m.distance, m.censored))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Some)
            })
            .collect::<Result<_>>()?;
        for (di, source) in directions.iter().enumerate() {
            let mut per_input = Vec::with_capacity(inputs.len());
            let (mut censored, mut skipped) = (0, 0);
            for m in &measured {
                match m {
                    None => {
                        skipped += 1;
                        per_input.push(None);
                    }
                    Some(v) if v[di].1 => {
                        censored += 1;
                        per_input.push(None);
                    }
                    Some(v) => per_input.push(Some(v[di].0)),
                }
            }
            let values: Vec<f64> = per_input.iter().flatten().copied().collect();
            if values.is_empty() {
                return Err(Error::EmptyStudy(format!(
                    "every {} measurement on {} was skipped or censored",
                    source.name(),
                    pair.pair_id
                )));
            }
            rows.push(DistanceRow {
                direction: source.name().to_string(),
                victim: pair.pair_id.clone(),
                distance: MeanSe::of(&values),
                censored,
                skipped,
                per_input,
            });
        }
    }
    let table = DistanceTable { rows, n_inputs: inputs.len() };
    table.check_invariants()?;
    Ok(table)
}

// ---------------------------------------------------------------------------
// robustness vs. natural-direction distance

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    /// Standard deviation of the natural directions.
    pub sigma: f64,
    pub n_directions: usize,
    /// White-box I-FGSM used for robust accuracy.
    pub attack: AttackConfig,
    pub search: SearchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRobustness {
    pub model_id: String,
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
    pub natural_distance: MeanSe,
    pub natural_censored: usize,
    pub adversarial_distance: MeanSe,
    pub adversarial_censored: usize,
    /// Inputs misclassified before attack (excluded from distance means).
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub models: Vec<ModelRobustness>,
    /// Spearman correlation of mean natural distance with robust accuracy;
    /// `None` when either ranking is constant.
    pub spearman_natural_vs_robust: Option<f64>,
    pub n_inputs: usize,
}

/// An empty mean is NaN, which the invariant tolerates.
fn nonnegative_or_empty(mean: f64) -> bool {
    mean >= 0.0 || mean.is_nan()
}

impl RobustnessReport {
    pub fn check_invariants(&self) -> Result<()> {
        for m in &self.models {
            let ok = in_unit_interval(m.clean_accuracy)
                && in_unit_interval(m.robust_accuracy)
                && nonnegative_or_empty(m.natural_distance.mean)
                && nonnegative_or_empty(m.adversarial_distance.mean);
            if !ok {
                return Err(Error::Contract(format!("robustness entry {} out of range", m.model_id)));
            }
        }
        Ok(())
    }
}

/// Per-model natural and adversarial boundary distances plus white-box
/// robust accuracy, and their rank correlation across models.
pub fn robustness_study(
    models: &[(String, ModelParams)],
    inputs: &[LabeledPoint],
    cfg: &RobustnessConfig,
    seed: u64,
) -> Result<RobustnessReport> {
    if models.len() < 2 {
        return Err(Error::InvalidConfig("robustness study needs at least two models".into()));
    }
    let (dim, classes) = (models[0].1.input_dim(), models[0].1.num_classes());
    if models.iter().any(|(_, m)| m.input_dim() != dim || m.num_classes() != classes) {
        return Err(Error::InvalidConfig("models disagree on input_dim/num_classes".into()));
    }
    if cfg.n_directions == 0 {
        return Err(Error::InvalidConfig("n_directions must be positive".into()));
    }
    cfg.attack.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyStudy("no inputs".into()));
    }
    check_inputs(inputs, &models[0].1)?;
    let root = Stream::new(seed);

    struct PerInput {
        correct: bool,
        robust: bool,
        natural: Vec<Option<f64>>,
        adversarial: Option<Option<f64>>,
    }

    let mut entries = Vec::with_capacity(models.len());
    for (id, model) in models {
        let per: Vec<PerInput> = inputs
            .par_iter()
            .enumerate()
            .map(|(index, p)| -> Result<PerInput> {
                let stream = root.child(index as u64);
                let attack = AttackConfig { seed: stream.key(), ..cfg.attack.clone() };
                let adv = run_attack(AttackKind::IFgsm, model, &p.x, p.y, &attack)?;
                let robust = model.predict(&adv.adversarial)? == p.y;
                if model.predict(&p.x)? != p.y {
                    return Ok(PerInput { correct: false, robust, natural: Vec::new(), adversarial: None });
                }
                let natural = (0..cfg.n_directions)
                    .map(|k| {
                        natural_direction_distance(
                            model,
                            &p.x,
                            cfg.sigma,
                            stream.child(k as u64),
                            cfg.search.cap,
                            cfg.search.tol,
                        )
                        .map(|m| (!m.censored).then_some(m.distance))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let g: Vec<f64> = model.input_gradient(&p.x, p.y)?.into_iter().map(crate::attack::sign).collect();
                let adversarial = if g.iter().all(|&v| v == 0.0) {
                    None
                } else {
                    let m = boundary_distance(
                        model,
                        &p.x,
                        &g,
                        cfg.search.cap,
                        cfg.search.tol,
                        DirectionKind::SignGradient,
                    )?;
                    (!m.censored).then_some(m.distance)
                };
                Ok(PerInput { correct: true, robust, natural, adversarial: Some(adversarial) })
            })
            .collect::<Result<_>>()?;
        let n = inputs.len() as f64;
        let natural: Vec<f64> = per.iter().flat_map(|r| r.natural.iter().flatten().copied()).collect();
        let natural_censored = per.iter().map(|r| r.natural.iter().filter(|d| d.is_none()).count()).sum();
        let adversarial: Vec<f64> = per.iter().filter_map(|r| r.adversarial.flatten()).collect();
        let adversarial_censored = per.iter().filter(|r| matches!(r.adversarial, Some(None))).count();
        entries.push(ModelRobustness {
            model_id: id.clone(),
            clean_accuracy: per.iter().filter(|r| r.correct).count() as f64 / n,
            robust_accuracy: per.iter().filter(|r| r.robust).count() as f64 / n,
            natural_distance: MeanSe::of(&natural),
            natural_censored,
            adversarial_distance: MeanSe::of(&adversarial),
            adversarial_censored,
            skipped: per.iter().filter(|r| !r.correct).count(),
        });
    }
    let nat: Vec<f64> = entries.iter().map(|e| e.natural_distance.mean).collect();
    let rob: Vec<f64> = entries.iter().map(|e| e.robust_accuracy).collect();
    let spearman_natural_vs_robust = if nat.iter().any(|v| v.is_nan()) { None } else { spearman(&nat, &rob) };
    let report = RobustnessReport { models: entries, spearman_natural_vs_robust, n_inputs: inputs.len() };
    report.check_invariants()?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// transfer success

/// Which inputs enter success-rate tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputFilter {
    /// Only inputs the substitute classifies correctly before the attack.
    #[default]
    SubstituteCorrect,
    /// Only inputs both models of the pair classify correctly, so a zero
    /// budget yields zero success in every column.
    BothCorrect,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedAttack {
    pub name: String,
    pub kind: AttackKind,
    pub config: AttackConfig,
}

impl NamedAttack {
    pub fn new(kind: AttackKind, config: AttackConfig) -> Self {
        NamedAttack { name: kind.name().to_string(), kind, config }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub attacks: Vec<String>,
    /// Column labels `"<pair>/substitute"` and `"<pair>/victim"`.
    pub victims: Vec<String>,
    pub success: Vec<Vec<f64>>,
    pub whitebox_flags: Vec<Vec<bool>>,
    pub counts: Vec<Vec<usize>>,
    /// Per attack, per column, per input: `Some(fooled)` for evaluated inputs.
    pub outcomes: Vec<Vec<Vec<Option<bool>>>>,
    /// Mean queries per attack over evaluated inputs.
    pub mean_queries: Vec<f64>,
    pub mean_fallbacks: Vec<f64>,
    pub n_inputs: usize,
}

impl TransferMatrix {
    pub fn check_invariants(&self) -> Result<()> {
        let shape_ok = self.success.len() == self.attacks.len()
            && self.success.iter().all(|r| r.len() == self.victims.len())
            && self.whitebox_flags.len() == self.attacks.len()
            && self.whitebox_flags.iter().all(|r| r.len() == self.victims.len());
        let range_ok = self.success.iter().flatten().all(|&r| in_unit_interval(r) || r.is_nan());
        if !shape_ok || !range_ok {
            return Err(Error::Contract("transfer matrix violates its invariants".into()));
        }
        Ok(())
    }

    fn attack_index(&self, attack: &str) -> Option<usize> {
        self.attacks.iter().position(|a| a == attack)
    }

    /// All evaluated outcomes of `attack`, as 0/1, over black-box
    /// (`whitebox = false`) or white-box columns.
    pub fn outcomes_of(&self, attack: &str, whitebox: bool) -> Vec<f64> {
        let Some(a) = self.attack_index(attack) else {
            return Vec::new();
        };
        self.outcomes[a]
            .iter()
            .enumerate()
            .filter(|(v, _)| self.whitebox_flags[a][*v] == whitebox)
            .flat_map(|(_, col)| col.iter().flatten().map(|&b| b as u8 as f64))
            .collect()
    }

    /// Pooled success rate of `attack` with its standard error.
    pub fn pooled(&self, attack: &str, whitebox: bool) -> MeanSe {
        MeanSe::of(&self.outcomes_of(attack, whitebox))
    }

    /// Paired black-box difference `a - b` over inputs evaluated for both.
    pub fn paired_blackbox_gap(&self, a: &str, b: &str) -> (Vec<f64>, Vec<f64>) {
        let (Some(ia), Some(ib)) = (self.attack_index(a), self.attack_index(b)) else {
            return (Vec::new(), Vec::new());
        };
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for v in 0..self.victims.len() {
            if self.whitebox_flags[ia][v] {
                continue;
            }
            for (oa, ob) in self.outcomes[ia][v].iter().zip(&self.outcomes[ib][v]) {
                if let (Some(oa), Some(ob)) = (oa, ob) {
                    xs.push(*oa as u8 as f64);
                    ys.push(*ob as u8 as f64);
                }
            }
        }
        (xs, ys)
    }
}

/// White-box fooled, black-box fooled, queries, fallbacks.
type AttackOutcome = (bool, bool, usize, usize);

/// Crafts adversarial examples on each pair's substitute and evaluates them
/// on the substitute (white-box) and the victim (black-box).
///
/// The attack seed for input `i` of pair `p` is `Stream(seed).path([p, i])`,
/// shared by every attack so boundary variants see the same directions.
pub fn transfer_eval(
    pairs: &[ModelPair],
    inputs: &[LabeledPoint],
    attacks: &[NamedAttack],
    filter: InputFilter,
    seed: u64,
) -> Result<TransferMatrix> {
    for a in attacks {
        a.config.validate()?;
    }
    let root = Stream::new(seed);
    let n_cols = pairs.len() * 2;
    let mut outcomes = vec![vec![Vec::with_capacity(inputs.len()); n_cols]; attacks.len()];
    let mut query_totals = vec![(0usize, 0usize, 0usize); attacks.len()];
    for (pi, pair) in pairs.iter().enumerate() {
        check_inputs(inputs, &pair.substitute)?;
        let per: Vec<Option<Vec<AttackOutcome>>> = inputs
            .par_iter()
            .enumerate()
            .map(|(index, p)| -> Result<_> {
                let keep = match filter {
                    InputFilter::All => true,
                    InputFilter::SubstituteCorrect => pair.substitute.predict(&p.x)? == p.y,
                    InputFilter::BothCorrect => {
                        pair.substitute.predict(&p.x)? == p.y && pair.victim.predict(&p.x)? == p.y
                    }
                };
                if !keep {
                    return Ok(None);
                }
                let stream = root.path(&[pi as u64, index as u64]);
                attacks
                    .iter()
                    .map(|a| {
                        let cfg = AttackConfig { seed: stream.key(), record_trace: false, ..a.config.clone() };
                        let r = run_attack(a.kind, &pair.substitute, &p.x, p.y, &cfg)?;
                        let black = pair.victim.predict(&r.adversarial)? != p.y;
                        Ok((r.success_substitute, black, r.queries, r.fallback_count))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Some)
            })
            .collect::<Result<_>>()?;
        for (ai, totals) in query_totals.iter_mut().enumerate() {
            for row in &per {
                match row {
                    Some(v) => {
                        outcomes[ai][2 * pi].push(Some(v[ai].0));
                        outcomes[ai][2 * pi + 1].push(Some(v[ai].1));
                        totals.0 += v[ai].2;
                        totals.1 += v[ai].3;
                        totals.2 += 1;
                    }
                    None => {
                        outcomes[ai][2 * pi].push(None);
                        outcomes[ai][2 * pi + 1].push(None);
                    }
                }
            }
        }
    }
    let victims =
        pairs.iter().flat_map(|p| [format!("{}/substitute", p.pair_id), format!("{}/victim", p.pair_id)]).collect();
    let whitebox_flags = vec![(0..n_cols).map(|c| c % 2 == 0).collect::<Vec<_>>(); attacks.len()];
    let counts: Vec<Vec<usize>> =
        outcomes.iter().map(|cols| cols.iter().map(|c| c.iter().flatten().count()).collect()).collect();
    let success = outcomes
        .iter()
        .map(|cols| {
            cols.iter()
                .map(|c| {
                    let n = c.iter().flatten().count();
                    if n == 0 {
                        0.0
                    } else {
                        c.iter().flatten().filter(|&&b| b).count() as f64 / n as f64
                    }
                })
                .collect()
        })
        .collect();
    let matrix = TransferMatrix {
        attacks: attacks.iter().map(|a| a.name.clone()).collect(),
        victims,
        success,
        whitebox_flags,
        counts,
        outcomes,
        mean_queries: query_totals.iter().map(|t| t.0 as f64 / t.2.max(1) as f64).collect(),
        mean_fallbacks: query_totals.iter().map(|t| t.1 as f64 / t.2.max(1) as f64).collect(),
        n_inputs: inputs.len(),
    };
    matrix.check_invariants()?;
    Ok(matrix)
}

// ---------------------------------------------------------------------------
// ablation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationParameter {
    Gamma,
    NPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub value: f64,
    pub blackbox_success: MeanSe,
    pub whitebox_success: MeanSe,
    pub mean_queries: f64,
    pub mean_fallbacks: f64,
    /// Black-box outcomes (0/1) over every evaluated input and pair.
    pub outcomes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub parameter: AblationParameter,
    pub attack: AttackKind,
    pub points: Vec<AblationPoint>,
}

/// Sweeps one boundary parameter of a boundary-fitting attack, holding
/// everything else fixed, and records transfer success per grid value.
pub fn ablate(
    parameter: AblationParameter,
    grid: &[f64],
    kind: AttackKind,
    fixed: &AttackConfig,
    pairs: &[ModelPair],
    inputs: &[LabeledPoint],
    seed: u64,
) -> Result<AblationCurve> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("ablation grid is empty".into()));
    }
    if !kind.uses_boundary() {
        return Err(Error::InvalidConfig(format!("{kind} has no boundary parameters to ablate")));
    }
    let base = fixed.boundary.ok_or_else(|| Error::InvalidConfig("ablation needs a boundary configuration".into()))?;
    let mut points = Vec::with_capacity(grid.len());
    for &value in grid {
        let mut b = base;
        match parameter {
            AblationParameter::Gamma => b.gamma = value,
            AblationParameter::NPoints => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::InvalidConfig(format!("n_points grid value {value} is not a positive integer")));
                }
                b.n_points = value as usize;
            }
        }
        b.validate()?;
        let attack = NamedAttack::new(kind, AttackConfig { boundary: Some(b), ..fixed.clone() });
        let m = transfer_eval(pairs, inputs, std::slice::from_ref(&attack), InputFilter::SubstituteCorrect, seed)?;
        let outcomes = m.outcomes_of(&attack.name, false);
        points.push(AblationPoint {
            value,
            blackbox_success: MeanSe::of(&outcomes),
            whitebox_success: m.pooled(&attack.name, true),
            mean_queries: m.mean_queries[0],
            mean_fallbacks: m.mean_fallbacks[0],
            outcomes,
        });
    }
    Ok(AblationCurve { parameter, attack: kind, points })
}
