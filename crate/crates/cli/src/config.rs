//! The experiment document and its validation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use bfa_core::analysis::{AblationParameter, CosineProtocol, DirectionSource, InputFilter, SearchConfig};
use bfa_core::plot::PlotSpec;
use bfa_core::{Activation, Architecture, AttackConfig, AttackKind, BoundaryConfig, TrainHyper};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub pairs: Vec<PairSpec>,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub studies: StudySection,
    #[serde(default)]
    pub plot: PlotSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        classes: usize,
        dim: usize,
        n_per_class: usize,
        spread: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Moons {
        n_per_class: usize,
        noise: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Rings {
        classes: usize,
        n_per_class: usize,
        noise: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        max_items: Option<usize>,
        #[serde(default = "one")]
        downscale: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    /// Hidden layer widths; empty for a linear model.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
    #[serde(default)]
    pub train: TrainHyper,
    /// Train on this many evenly strided training points instead of all.
    #[serde(default)]
    pub train_points: Option<usize>,
    /// Load parameters from this file instead of training.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl ModelSpec {
    pub fn architecture(&self, input_dim: usize, classes: usize) -> Architecture {
        if self.hidden.is_empty() {
            Architecture::linear(input_dim, classes)
        } else {
            Architecture::mlp(input_dim, &self.hidden, classes, self.activation)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub id: String,
    pub substitute: String,
    pub victim: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputRange {
    pub start: usize,
    /// Exclusive end; the whole test split when absent.
    pub end: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub kinds: Vec<AttackKind>,
    pub epsilon: f64,
    pub iterations: usize,
    pub step: Option<f64>,
    pub mu: f64,
    pub boundary: BoundaryConfig,
    /// When set, the boundary sigma is this multiple of the dataset's
    /// coordinate standard deviation.
    pub sigma_std_factor: Option<f64>,
    pub filter: InputFilter,
    pub inputs: InputRange,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            kinds: AttackKind::ALL.to_vec(),
            epsilon: 0.15,
            iterations: 10,
            step: None,
            mu: 1.0,
            boundary: BoundaryConfig::default(),
            sigma_std_factor: Some(0.5),
            filter: InputFilter::default(),
            inputs: InputRange::default(),
        }
    }
}

impl AttackSection {
    /// Boundary settings with the data-relative sigma applied.
    pub fn boundary_for(&self, coordinate_std: f64) -> BoundaryConfig {
        let mut b = self.boundary;
        if let Some(f) = self.sigma_std_factor {
            b.sigma = f * coordinate_std;
        }
        b
    }

    pub fn attack_config(&self, coordinate_std: f64) -> AttackConfig {
        AttackConfig { iterations: self.iterations, step: self.step, mu: self.mu, ..AttackConfig::new(self.epsilon) }
            .with_boundary(self.boundary_for(coordinate_std))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub cosine: CosineSection,
    pub distance: DistanceSection,
    pub robustness: RobustnessSection,
    pub ablation: AblationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CosineSection {
    pub protocols: Vec<CosineProtocol>,
    pub search: SearchConfig,
}

impl Default for CosineSection {
    fn default() -> Self {
        CosineSection {
            protocols: vec![CosineProtocol::AtInput, CosineProtocol::AtVictimBoundary],
            search: SearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceSection {
    pub directions: Vec<DirectionSource>,
    pub search: SearchConfig,
}

impl Default for DistanceSection {
    fn default() -> Self {
        DistanceSection {
            directions: vec![DirectionSource::Gradient, DirectionSource::BoundaryGradient, DirectionSource::RandomSign],
            search: SearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSection {
    /// Model ids to compare; every model when empty.
    pub models: Vec<String>,
    /// Natural-direction sigma as a multiple of the coordinate std.
    pub sigma_std_factor: f64,
    pub n_directions: usize,
    pub epsilon: f64,
    pub iterations: usize,
    pub search: SearchConfig,
}

impl Default for RobustnessSection {
    fn default() -> Self {
        RobustnessSection {
            models: Vec::new(),
            sigma_std_factor: 0.5,
            n_directions: 10,
            epsilon: 0.08,
            iterations: 10,
            search: SearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub parameter: AblationParameter,
    /// Values to sweep; a per-parameter default grid when absent.
    pub grid: Option<Vec<f64>>,
    pub attack: AttackKind,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection { parameter: AblationParameter::Gamma, grid: None, attack: AttackKind::BfFgsm }
    }
}

impl AblationSection {
    pub fn grid_for(&self, parameter: AblationParameter) -> Vec<f64> {
        match (&self.grid, parameter) {
            (Some(g), _) => g.clone(),
            (None, AblationParameter::Gamma) => vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            (None, AblationParameter::NPoints) => vec![1.0, 5.0, 10.0, 20.0, 40.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSection {
    /// Pair to draw; the first pair when absent.
    pub pair: Option<String>,
    /// Index into the selected inputs.
    pub input_index: usize,
    pub attack: AttackKind,
    /// For inputs above two dimensions: the plotted axes, sliced through the input.
    pub slice_dims: Option<[usize; 2]>,
    pub spec: PlotSpec,
}

impl Default for PlotSection {
    fn default() -> Self {
        PlotSection {
            pair: None,
            input_index: 0,
            attack: AttackKind::BfFgsm,
            slice_dims: None,
            spec: PlotSpec::default(),
        }
    }
}

/// Command-line values that replace document fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub eps: Option<f64>,
    pub iters: Option<usize>,
    pub n_points: Option<usize>,
    pub gamma: Option<f64>,
    pub sigma: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.output_dir = v.clone();
        }
        if let Some(v) = o.eps {
            self.attack.epsilon = v;
        }
        if let Some(v) = o.iters {
            self.attack.iterations = v;
        }
        if let Some(v) = o.n_points {
            self.attack.boundary.n_points = v;
        }
        if let Some(v) = o.gamma {
            self.attack.boundary.gamma = v;
        }
        if let Some(v) = o.sigma {
            self.attack.boundary.sigma = v;
            self.attack.sigma_std_factor = None;
        }
    }

    /// SHA-256 of the canonical serialization: defaults filled in, fixed
    /// field order, no insignificant whitespace.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn model(&self, id: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.id == id)
    }

    /// Structural checks that need no data or models.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        let mut ids = BTreeSet::new();
        for m in &self.models {
            check_id(&m.id)?;
            if !ids.insert(m.id.as_str()) {
                return bad(format!("duplicate model id {:?}", m.id));
            }
            if m.hidden.contains(&0) {
                return bad(format!("model {:?} has an empty hidden layer", m.id));
            }
            if let Some(p) = &m.path {
                if !p.is_file() {
                    return bad(format!("model file {} for {:?} does not exist", p.display(), m.id));
                }
            }
        }
        let mut pair_ids = BTreeSet::new();
        for p in &self.pairs {
            check_id(&p.id)?;
            if !pair_ids.insert(p.id.as_str()) {
                return bad(format!("duplicate pair id {:?}", p.id));
            }
            for side in [&p.substitute, &p.victim] {
                if self.model(side).is_none() {
                    return bad(format!("pair {:?} references unknown model {side:?}", p.id));
                }
            }
        }
        for id in &self.studies.robustness.models {
            if self.model(id).is_none() {
                return bad(format!("robustness study references unknown model {id:?}"));
            }
        }
        if let Some(p) = &self.plot.pair {
            if !pair_ids.contains(p.as_str()) {
                return bad(format!("plot references unknown pair {p:?}"));
            }
        }
        let a = &self.attack;
        if a.kinds.is_empty() {
            return bad("attack.kinds is empty".into());
        }
        if let Some(f) = a.sigma_std_factor {
            if !(f > 0.0 && f.is_finite()) {
                return bad(format!("attack.sigma_std_factor must be > 0, got {f}"));
            }
        }
        // Sigma is data-relative here; any positive stand-in checks the rest.
        let probe =
            AttackConfig { boundary: Some(BoundaryConfig { sigma: 1.0, ..a.boundary }), ..a.attack_config(1.0) };
        probe.validate().map_err(CliError::from)?;
        if a.sigma_std_factor.is_none() {
            a.boundary.validate().map_err(CliError::from)?;
        }
        if let Some(end) = a.inputs.end {
            if end <= a.inputs.start {
                return bad(format!("attack.inputs range {}..{end} is empty", a.inputs.start));
            }
        }
        let r = &self.studies.robustness;
        if !(r.sigma_std_factor > 0.0 && r.sigma_std_factor.is_finite()) || r.n_directions == 0 {
            return bad("robustness study needs sigma_std_factor > 0 and n_directions >= 1".into());
        }
        if self.studies.cosine.protocols.is_empty() || self.studies.distance.directions.is_empty() {
            return bad("cosine protocols and distance directions must be non-empty".into());
        }
        Ok(())
    }
}

fn check_id(id: &str) -> Result<(), CliError> {
    let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c));
    if ok {
        Ok(())
    } else {
        Err(CliError::Validation(format!("id {id:?} must be non-empty and use only [A-Za-z0-9_.-]")))
    }
}
