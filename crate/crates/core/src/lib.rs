//! Boundary fitting attacks and decision-boundary diagnostics on small,
//! self-contained differentiable classifiers.
//!
//! The crate is organized bottom-up:
//!
//! * [`model`]: fully connected classifiers with exact input gradients,
//!   deterministic training, and bit-exact JSON persistence.
//! * [`data`]: seeded synthetic datasets in the unit cube and an IDX reader.
//! * [`boundary`]: boundary-point sampling by geometric shrinkage, averaged
//!   boundary gradients, and L∞ boundary distances along a direction.
//! * [`attack`]: I-FGSM, MI-FGSM and their boundary-fitting counterparts.
//! * [`analysis`]: gradient-similarity, boundary-distance, robustness,
//!   transfer and ablation studies.
//! * [`plot`]: deterministic SVG renderings of 2-D decision geometry.

pub mod analysis;
pub mod attack;
pub mod boundary;
pub mod data;
pub mod error;
pub mod hexfloat;
pub mod model;
pub mod plot;
pub mod rng;
pub mod stats;

pub use attack::{AttackConfig, AttackKind, AttackResult};
pub use boundary::{BoundaryConfig, BoundarySample, DistanceMeasurement, SourceRegion};
pub use data::Dataset;
pub use error::{Error, Result};
pub use model::{Activation, Architecture, LabeledPoint, ModelParams, TrainHyper};
pub use rng::Stream;
