//! Nominal vehicle performance prediction.
//!
//! A single-hidden-layer network is trained on qualification-run telemetry to
//! predict actual vehicle speed from what is known before a run: the commanded
//! speed, the previous command, the time spent at the current command and the
//! energy utilization. Post-run telemetry is then compared against the
//! prediction (and against simple non-network baselines) to flag anomalous
//! behavior.
//!
//! Module map:
//!
//! - [`domain`]: telemetry records, mission profiles, feature extraction and
//!   non-dimensionalization.
//! - [`mlp`]: the 4-H-1 network, its regularized error and exact gradient.
//! - [`optim`]: scaled conjugate gradient and mini-batch SGD trainers.
//! - [`pipeline`]: end-to-end training and model persistence.
//! - [`eval`]: prediction for a mission profile, baselines, accumulated error
//!   and anomaly flagging.
//! - [`sim`]: synthetic mission profiles and run telemetry.
//! - [`plot`]: static SVG figures for evaluation reports.
//!
//! The network and trainers are generic over the floating point type (see
//! [`Scalar`]); everything built on top of them works in `f64`.

pub mod config;
pub mod domain;
mod error;
pub mod eval;
pub mod io;
pub mod mlp;
pub mod modelfile;
pub mod optim;
pub mod pipeline;
pub mod plot;
mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use domain::{FeatureRow, MissionProfile, NormalizationMeta, RunRecord, Sample, Segment};
pub use eval::{EvalReport, FlaggedInterval, MethodEval, PredictionTrace, UtilizationModel};
pub use mlp::{Activation, Matrix, MlpModel, TrainingBatch};
pub use optim::{ScgOptions, SgdOptions, StopReason, TrainingTrace};
pub use pipeline::{OptimizerChoice, ResidualStats, TrainConfig, TrainedArtifact};
pub use sim::ScenarioConfig;

/// Double precision network, the default used by the pipeline.
pub type Mlp = MlpModel<f64>;
/// Single precision network.
pub type Mlp32 = MlpModel<f32>;
/// Double precision batch.
pub type Batch = TrainingBatch<f64>;
/// Single precision batch.
pub type Batch32 = TrainingBatch<f32>;
