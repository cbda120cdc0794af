//! Subcommand bodies. Each returns the artifacts to write; nothing touches
//! the file system until every computation has finished.

use std::collections::BTreeMap;
use std::time::Instant;

use bfa_core::analysis::{
    ablate as run_ablation, cosine_study, distance_study, robustness_study, transfer_eval, AblationParameter,
    CosineReport, ModelPair, NamedAttack, RobustnessConfig, TransferMatrix,
};
use bfa_core::attack::run_attack;
use bfa_core::boundary::sample_boundary_point;
use bfa_core::data::{gen_blobs, gen_moons, gen_rings, load_idx};
use bfa_core::model::model_to_json;
use bfa_core::plot::{render_svg, PlotSpec, Scene, Slice};
use bfa_core::stats::MeanSe;
use bfa_core::{AttackConfig, AttackKind, Dataset, LabeledPoint, ModelParams, Stream};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::output::{num, Artifact, Csv, Provenance, StudyReport};
use crate::CliError;

pub struct Context {
    pub config: ExperimentConfig,
    pub data: Dataset,
    /// Selected slice of the test split.
    pub inputs: Vec<LabeledPoint>,
    /// Test-split index of `inputs[0]`.
    pub input_offset: usize,
    pub models: BTreeMap<String, ModelParams>,
    started: Instant,
}

impl Context {
    pub fn new(config: ExperimentConfig) -> Result<Self, CliError> {
        let started = Instant::now();
        let data = build_dataset(&config)?;
        let test = data.test_points();
        let range = &config.attack.inputs;
        let end = range.end.unwrap_or(test.len());
        if end > test.len() || range.start >= end {
            return Err(CliError::Validation(format!(
                "input range {}..{end} is out of range for {} test points",
                range.start,
                test.len()
            )));
        }
        let inputs = test[range.start..end].to_vec();
        let trained: Vec<(String, ModelParams)> = config
            .models
            .par_iter()
            .map(|spec| -> Result<_, CliError> {
                let arch = spec.architecture(data.dim(), data.num_classes);
                let model = match &spec.path {
                    Some(path) => {
                        let m = bfa_core::model::load_model(path)?;
                        if m.input_dim() != data.dim() || m.num_classes() != data.num_classes {
                            return Err(CliError::Validation(format!(
                                "model file {} does not fit dataset {}",
                                path.display(),
                                data.name
                            )));
                        }
                        m
                    }
                    None => {
                        let points = match spec.train_points {
                            Some(n) => data.train_subsample(n),
                            None => data.train_points(),
                        };
                        data.train_model_on(&points, &arch, &spec.train, spec.seed)?
                    }
                };
                Ok((spec.id.clone(), model))
            })
            .collect::<Result<_, _>>()?;
        Ok(Context { input_offset: range.start, inputs, models: trained.into_iter().collect(), data, config, started })
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.config.hash(),
            seed: self.config.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        }
    }

    fn pairs(&self) -> Result<Vec<ModelPair>, CliError> {
        if self.config.pairs.is_empty() {
            return Err(CliError::Validation("this command needs at least one entry in \"pairs\"".into()));
        }
        self.config
            .pairs
            .iter()
            .map(|p| {
                ModelPair::new(p.id.clone(), self.models[&p.substitute].clone(), self.models[&p.victim].clone())
                    .map_err(CliError::from)
            })
            .collect()
    }

    fn attack_config(&self) -> AttackConfig {
        self.config.attack.attack_config(self.data.coordinate_std())
    }

    fn attack_kinds(&self, kind: Option<&str>) -> Result<Vec<AttackKind>, CliError> {
        match kind {
            None => Ok(self.config.attack.kinds.clone()),
            Some(k) => parse_attack(k).map(|k| vec![k]),
        }
    }

    fn report<T: Serialize>(&self, kind: &'static str, payload: T) -> Artifact {
        Artifact::json(format!("{kind}.json"), &StudyReport { kind, provenance: self.provenance(), payload })
    }
}

fn parse_attack(name: &str) -> Result<AttackKind, CliError> {
    AttackKind::ALL
        .into_iter()
        .find(|k| {
            k.name().eq_ignore_ascii_case(name)
                || serde_json::to_value(k).ok().and_then(|v| v.as_str().map(|s| s == name)) == Some(true)
        })
        .ok_or_else(|| {
            CliError::Validation(format!("unknown attack {name:?}; expected i_fgsm, mi_fgsm, bf_fgsm or bf_mi_fgsm"))
        })
}

fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let ds = match &cfg.dataset {
        DatasetSpec::Blobs { classes, dim, n_per_class, spread, seed } => {
            gen_blobs(*classes, *dim, *n_per_class, *spread, seed.unwrap_or(cfg.seed))?
        }
        DatasetSpec::Moons { n_per_class, noise, seed } => gen_moons(*n_per_class, *noise, seed.unwrap_or(cfg.seed))?,
        DatasetSpec::Rings { classes, n_per_class, noise, seed } => {
            gen_rings(*classes, *n_per_class, *noise, seed.unwrap_or(cfg.seed))?
        }
        DatasetSpec::Idx { images, labels, max_items, downscale } => load_idx(images, labels, *max_items, *downscale)?,
    };
    Ok(ds)
}

fn no_kind(command: &str, kind: Option<&str>) -> Result<(), CliError> {
    match kind {
        Some(k) => Err(CliError::Validation(format!("{command} takes no --kind (got {k:?})"))),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct TrainedModel<'a> {
    id: &'a str,
    file: String,
    final_train_accuracy: f64,
    test_accuracy: f64,
}

pub fn train(ctx: &Context, kind: Option<&str>) -> Result<Vec<Artifact>, CliError> {
    no_kind("train", kind)?;
    let test = ctx.data.test_points();
    let mut artifacts = Vec::new();
    let mut summary = Vec::new();
    for (id, model) in &ctx.models {
        let file = format!("models/{id}.json");
        summary.push(TrainedModel {
            id,
            file: file.clone(),
            final_train_accuracy: model.train_meta.final_train_accuracy,
            test_accuracy: model.accuracy(&test)?,
        });
        artifacts.push(Artifact::new(file, model_to_json(model)));
    }
    let mut csv = Vec::new();
    ctx.data.write_csv(&mut csv).map_err(|e| CliError::Runtime(e.to_string()))?;
    artifacts.push(Artifact::new("dataset.csv", csv));
    artifacts.push(ctx.report("train", summary));
    Ok(artifacts)
}

pub fn attack(ctx: &Context, kind: Option<&str>) -> Result<Vec<Artifact>, CliError> {
    let kinds = ctx.attack_kinds(kind)?;
    let pairs = ctx.pairs()?;
    let base = ctx.attack_config();
    base.validate()?;
    let root = Stream::new(ctx.config.seed);
    let mut records = Csv::new(&[
        "pair",
        "index",
        "attack",
        "success_substitute",
        "success_victim",
        "linf",
        "queries",
        "fallback_count",
    ]);
    let mut header = vec!["pair".to_string(), "index".to_string(), "attack".to_string()];
    header.extend((0..ctx.data.dim()).map(|c| format!("x{c}")));
    let mut examples = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for (pi, pair) in pairs.iter().enumerate() {
        let rows: Vec<Vec<(Vec<String>, Vec<String>)>> = ctx
            .inputs
            .par_iter()
            .enumerate()
            .map(|(i, p)| -> Result<_, CliError> {
                let index = ctx.input_offset + i;
                let seed = root.path(&[pi as u64, index as u64]).key();
                kinds
                    .iter()
                    .map(|&k| {
                        let r = run_attack(k, &pair.substitute, &p.x, p.y, &base.clone().with_seed(seed))?;
                        let linf = r.adversarial.iter().zip(&p.x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                        let fooled_victim = pair.victim.predict(&r.adversarial)? != p.y;
                        let head = vec![pair.pair_id.clone(), index.to_string(), k.name().to_string()];
                        let mut record = head.clone();
                        record.extend([
                            r.success_substitute.to_string(),
                            fooled_victim.to_string(),
                            num(linf),
                            r.queries.to_string(),
                            r.fallback_count.to_string(),
                        ]);
                        let mut example = head;
                        example.extend(r.adversarial.iter().map(|&v| num(v)));
                        Ok((record, example))
                    })
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        for (record, example) in rows.into_iter().flatten() {
            records.row(&record);
            examples.row(&example);
        }
    }
    Ok(vec![records.into_artifact("attack.csv"), examples.into_artifact("adversarial.csv")])
}

pub fn study(ctx: &Context, kind: Option<&str>) -> Result<Vec<Artifact>, CliError> {
    match kind {
        Some("transfer") => transfer(ctx),
        Some("cosine") => cosine(ctx),
        Some("distance") => distance(ctx),
        Some("robustness") => robustness(ctx),
        Some("ablation") => ablation(ctx, ctx.config.studies.ablation.parameter),
        Some(other) => Err(CliError::Validation(format!(
            "unknown study {other:?}; expected transfer, cosine, distance, robustness or ablation"
        ))),
        None => Err(CliError::Validation("study needs --kind".into())),
    }
}

pub fn ablate(ctx: &Context, kind: Option<&str>) -> Result<Vec<Artifact>, CliError> {
    let parameter = match kind {
        None => ctx.config.studies.ablation.parameter,
        Some("gamma") => AblationParameter::Gamma,
        Some("n_points") => AblationParameter::NPoints,
        Some(other) => {
            return Err(CliError::Validation(format!(
                "unknown ablation parameter {other:?}; expected gamma or n_points"
            )))
        }
    };
    ablation(ctx, parameter)
}

#[derive(Serialize)]
struct PooledRate {
    attack: String,
    whitebox: MeanSe,
    blackbox: MeanSe,
}

#[derive(Serialize)]
struct PairedGap {
    better: String,
    baseline: String,
    /// Paired black-box difference `better - baseline`.
    gap: MeanSe,
}

#[derive(Serialize)]
struct TransferPayload {
    attacks: Vec<String>,
    columns: Vec<String>,
    success: Vec<Vec<f64>>,
    whitebox_flags: Vec<Vec<bool>>,
    counts: Vec<Vec<usize>>,
    mean_queries: Vec<f64>,
    mean_fallbacks: Vec<f64>,
    n_inputs: usize,
    pooled: Vec<PooledRate>,
    gaps: Vec<PairedGap>,
}

fn transfer_gaps(m: &TransferMatrix) -> Vec<PairedGap> {
    [(AttackKind::BfFgsm, AttackKind::IFgsm), (AttackKind::BfMiFgsm, AttackKind::MiFgsm)]
        .iter()
        .filter(|(a, b)| m.attacks.iter().any(|x| x == a.name()) && m.attacks.iter().any(|x| x == b.name()))
        .map(|(a, b)| {
            let (x, y) = m.paired_blackbox_gap(a.name(), b.name());
            PairedGap { better: a.name().into(), baseline: b.name().into(), gap: MeanSe::paired_difference(&x, &y) }
        })
        .collect()
}

fn transfer(ctx: &Context) -> Result<Vec<Artifact>, CliError> {
    let base = ctx.attack_config();
    let attacks: Vec<NamedAttack> =
        ctx.config.attack.kinds.iter().map(|&k| NamedAttack::new(k, base.clone())).collect();
    let m = transfer_eval(&ctx.pairs()?, &ctx.inputs, &attacks, ctx.config.attack.filter, ctx.config.seed)?;
    let mut csv = Csv::new(&["attack", "column", "whitebox", "success", "count"]);
    for (a, attack) in m.attacks.iter().enumerate() {
        for (v, column) in m.victims.iter().enumerate() {
            csv.row(&[
                attack.clone(),
                column.clone(),
                m.whitebox_flags[a][v].to_string(),
                num(m.success[a][v]),
                m.counts[a][v].to_string(),
            ]);
        }
    }
    let payload = TransferPayload {
        pooled: m
            .attacks
            .iter()
            .map(|a| PooledRate { attack: a.clone(), whitebox: m.pooled(a, true), blackbox: m.pooled(a, false) })
            .collect(),
        gaps: transfer_gaps(&m),
        attacks: m.attacks,
        columns: m.victims,
        success: m.success,
        whitebox_flags: m.whitebox_flags,
        counts: m.counts,
        mean_queries: m.mean_queries,
        mean_fallbacks: m.mean_fallbacks,
        n_inputs: m.n_inputs,
    };
    Ok(vec![ctx.report("transfer", payload), csv.into_artifact("transfer.csv")])
}

#[derive(Serialize)]
struct CosineSummary {
    pair_id: String,
    protocol: bfa_core::analysis::CosineProtocol,
    n_points: usize,
    mean_original: MeanSe,
    mean_boundary_n1: MeanSe,
    mean_boundary_nn: MeanSe,
    gap_nn: MeanSe,
    n_inputs: usize,
    skipped: usize,
    victim_censored: usize,
}

impl From<&CosineReport> for CosineSummary {
    fn from(r: &CosineReport) -> Self {
        CosineSummary {
            pair_id: r.pair_id.clone(),
            protocol: r.protocol,
            n_points: r.n_points,
            mean_original: r.mean_original,
            mean_boundary_n1: r.mean_boundary_n1,
            mean_boundary_nn: r.mean_boundary_nn,
            gap_nn: r.gap_nn,
            n_inputs: r.n_inputs,
            skipped: r.skipped,
            victim_censored: r.victim_censored,
        }
    }
}

#[derive(Serialize)]
struct CosinePayload {
    per_pair: Vec<CosineSummary>,
    pooled: Vec<CosineSummary>,
}

fn cosine(ctx: &Context) -> Result<Vec<Artifact>, CliError> {
    let pairs = ctx.pairs()?;
    let section = &ctx.config.studies.cosine;
    let boundary = ctx.config.attack.boundary_for(ctx.data.coordinate_std());
    let mut csv = Csv::new(&["pair", "protocol", "index", "original", "boundary_n1", "boundary_nn"]);
    let mut per_pair = Vec::new();
    let mut pooled = Vec::new();
    for &protocol in &section.protocols {
        let mut records = Vec::new();
        let mut totals = (0, 0, 0);
        for (pi, pair) in pairs.iter().enumerate() {
            let seed = Stream::new(ctx.config.seed).child(pi as u64).key();
            let r = cosine_study(pair, &ctx.inputs, &boundary, protocol, &section.search, seed)?;
            let label = serde_json::to_value(protocol).expect("protocol serializes");
            for rec in &r.records {
                csv.row(&[
                    pair.pair_id.clone(),
                    label.as_str().unwrap_or_default().to_string(),
                    (ctx.input_offset + rec.index).to_string(),
                    num(rec.original),
                    num(rec.boundary_n1),
                    num(rec.boundary_nn),
                ]);
            }
            totals = (totals.0 + r.n_inputs, totals.1 + r.skipped, totals.2 + r.victim_censored);
            records.extend(r.records.iter().cloned());
            per_pair.push(CosineSummary::from(&r));
        }
        let col = |f: fn(&bfa_core::analysis::CosineRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
        pooled.push(CosineSummary {
            pair_id: "pooled".into(),
            protocol,
            n_points: boundary.n_points,
            mean_original: MeanSe::of(&col(|r| r.original)),
            mean_boundary_n1: MeanSe::of(&col(|r| r.boundary_n1)),
            mean_boundary_nn: MeanSe::of(&col(|r| r.boundary_nn)),
            gap_nn: MeanSe::paired_difference(&col(|r| r.boundary_nn), &col(|r| r.original)),
            n_inputs: totals.0,
            skipped: totals.1,
            victim_censored: totals.2,
        });
    }
    Ok(vec![ctx.report("cosine", CosinePayload { per_pair, pooled }), csv.into_artifact("cosine.csv")])
}

#[derive(Serialize)]
struct DistanceEntry {
    direction: String,
    victim: String,
    distance: MeanSe,
    censored: usize,
    skipped: usize,
}

#[derive(Serialize)]
struct DistancePayload {
    rows: Vec<DistanceEntry>,
    /// Per direction, over all victims.
    pooled: Vec<DistanceEntry>,
    /// Paired `I-FGSM - BF-FGSM` distance over inputs measured for both.
    gradient_minus_boundary: Option<MeanSe>,
    n_inputs: usize,
}

fn distance(ctx: &Context) -> Result<Vec<Artifact>, CliError> {
    let section = &ctx.config.studies.distance;
    let boundary = ctx.config.attack.boundary_for(ctx.data.coordinate_std());
    let t =
        distance_study(&ctx.pairs()?, &ctx.inputs, &section.directions, &boundary, &section.search, ctx.config.seed)?;
    let mut csv = Csv::new(&["direction", "victim", "mean", "se", "n", "censored", "skipped"]);
    for r in &t.rows {
        csv.row(&[
            r.direction.clone(),
            r.victim.clone(),
            num(r.distance.mean),
            num(r.distance.se),
            r.distance.n.to_string(),
            r.censored.to_string(),
            r.skipped.to_string(),
        ]);
    }
    let mut pooled = Vec::new();
    for d in &section.directions {
        let rows: Vec<_> = t.rows.iter().filter(|r| r.direction == d.name()).collect();
        let values: Vec<f64> = rows.iter().flat_map(|r| r.per_input.iter().flatten().copied()).collect();
        pooled.push(DistanceEntry {
            direction: d.name().into(),
            victim: "pooled".into(),
            distance: MeanSe::of(&values),
            censored: rows.iter().map(|r| r.censored).sum(),
            skipped: rows.iter().map(|r| r.skipped).sum(),
        });
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for gi in t.rows.iter().filter(|r| r.direction == "I-FGSM") {
        if let Some(bi) = t.row("BF-FGSM", &gi.victim) {
            for (x, y) in gi.per_input.iter().zip(&bi.per_input) {
                if let (Some(x), Some(y)) = (x, y) {
                    a.push(*x);
                    b.push(*y);
                }
            }
        }
    }
    let payload = DistancePayload {
        rows: t
            .rows
            .iter()
            .map(|r| DistanceEntry {
                direction: r.direction.clone(),
                victim: r.victim.clone(),
                distance: r.distance,
                censored: r.censored,
                skipped: r.skipped,
            })
            .collect(),
        pooled,
        gradient_minus_boundary: (!a.is_empty()).then(|| MeanSe::paired_difference(&a, &b)),
        n_inputs: t.n_inputs,
    };
    Ok(vec![ctx.report("distance", payload), csv.into_artifact("distance.csv")])
}

fn robustness(ctx: &Context) -> Result<Vec<Artifact>, CliError> {
    let section = &ctx.config.studies.robustness;
    let ids: Vec<String> = if section.models.is_empty() {
        ctx.config.models.iter().map(|m| m.id.clone()).collect()
    } else {
        section.models.clone()
    };
    let models: Vec<(String, ModelParams)> = ids.iter().map(|id| (id.clone(), ctx.models[id].clone())).collect();
    let cfg = RobustnessConfig {
        sigma: section.sigma_std_factor * ctx.data.coordinate_std(),
        n_directions: section.n_directions,
        attack: AttackConfig { iterations: section.iterations, ..AttackConfig::new(section.epsilon) },
        search: section.search,
    };
    let r = robustness_study(&models, &ctx.inputs, &cfg, ctx.config.seed)?;
    let mut csv = Csv::new(&[
        "model",
        "clean_accuracy",
        "robust_accuracy",
        "natural_mean",
        "natural_se",
        "natural_censored",
        "adversarial_mean",
        "adversarial_se",
        "adversarial_censored",
        "skipped",
    ]);
    for m in &r.models {
        csv.row(&[
            m.model_id.clone(),
            num(m.clean_accuracy),
            num(m.robust_accuracy),
            num(m.natural_distance.mean),
            num(m.natural_distance.se),
            m.natural_censored.to_string(),
            num(m.adversarial_distance.mean),
            num(m.adversarial_distance.se),
            m.adversarial_censored.to_string(),
            m.skipped.to_string(),
        ]);
    }
    Ok(vec![ctx.report("robustness", r), csv.into_artifact("robustness.csv")])
}

#[derive(Serialize)]
struct AblationRow {
    value: f64,
    blackbox_success: MeanSe,
    whitebox_success: MeanSe,
    mean_queries: f64,
    mean_fallbacks: f64,
}

#[derive(Serialize)]
struct AblationPayload {
    parameter: AblationParameter,
    attack: AttackKind,
    points: Vec<AblationRow>,
}

fn ablation(ctx: &Context, parameter: AblationParameter) -> Result<Vec<Artifact>, CliError> {
    let section = &ctx.config.studies.ablation;
    let curve = run_ablation(
        parameter,
        &section.grid_for(parameter),
        section.attack,
        &ctx.attack_config(),
        &ctx.pairs()?,
        &ctx.inputs,
        ctx.config.seed,
    )?;
    let mut csv = Csv::new(&[
        "value",
        "blackbox_mean",
        "blackbox_se",
        "whitebox_mean",
        "whitebox_se",
        "mean_queries",
        "mean_fallbacks",
    ]);
    for p in &curve.points {
        csv.row(&[
            num(p.value),
            num(p.blackbox_success.mean),
            num(p.blackbox_success.se),
            num(p.whitebox_success.mean),
            num(p.whitebox_success.se),
            num(p.mean_queries),
            num(p.mean_fallbacks),
        ]);
    }
    let payload = AblationPayload {
        parameter: curve.parameter,
        attack: curve.attack,
        points: curve
            .points
            .iter()
            .map(|p| AblationRow {
                value: p.value,
                blackbox_success: p.blackbox_success,
                whitebox_success: p.whitebox_success,
                mean_queries: p.mean_queries,
                mean_fallbacks: p.mean_fallbacks,
            })
            .collect(),
    };
    Ok(vec![ctx.report("ablation", payload), csv.into_artifact("ablation.csv")])
}

pub fn plot(ctx: &Context, kind: Option<&str>) -> Result<Vec<Artifact>, CliError> {
    let section = &ctx.config.plot;
    let attack = match kind {
        Some(k) => parse_attack(k)?,
        None => section.attack,
    };
    let pairs = ctx.pairs()?;
    let pair = match &section.pair {
        Some(id) => pairs.iter().find(|p| &p.pair_id == id).expect("validated pair id"),
        None => &pairs[0],
    };
    let input = ctx.inputs.get(section.input_index).ok_or_else(|| {
        CliError::Validation(format!(
            "plot.input_index {} is out of range for {} inputs",
            section.input_index,
            ctx.inputs.len()
        ))
    })?;
    let spec = PlotSpec {
        slice: match section.slice_dims {
            Some([i, j]) => Some(Slice { dims: (i, j), anchor: input.x.clone() }),
            None => section.spec.slice.clone(),
        },
        ..section.spec.clone()
    };
    let boundary = ctx.config.attack.boundary_for(ctx.data.coordinate_std());
    boundary.validate()?;
    let root = Stream::new(ctx.config.seed);
    let source = pair.substitute.predict(&input.x)?;
    let points = (0..boundary.n_points as u64)
        .map(|i| {
            sample_boundary_point(&pair.substitute, &input.x, source, input.y, &boundary, root.child(0).child(i))
                .map(|s| s.point)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = AttackConfig { record_trace: true, ..ctx.attack_config() }.with_seed(root.child(1).key());
    let result = run_attack(attack, &pair.substitute, &input.x, input.y, &cfg)?;
    let mut trajectory = vec![input.x.clone()];
    trajectory.extend(result.iterate_trace.unwrap_or_default());
    let scene = Scene {
        substitute: &pair.substitute,
        victim: Some(&pair.victim),
        input: Some(input),
        boundary_points: &points,
        trajectory: &trajectory,
    };
    let svg = render_svg(&scene, &spec)?;
    Ok(vec![Artifact::new("plot.svg", svg)])
}
