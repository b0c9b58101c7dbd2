//! End-to-end training: corpus -> normalization -> features -> trainer -> artifact.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::{Versioned, CONFIG_VERSION};
use crate::domain::{self, FeatureRow, NormalizationMeta, RunRecord, N_FEATURES};
use crate::mlp::{Activation, Matrix, MlpModel, TrainingBatch};
use crate::optim::{self, Control, ScgOptions, SgdOptions, TrainingTrace};
use crate::{Error, Mlp, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerChoice {
    #[default]
    Scg,
    Sgd,
}

impl std::str::FromStr for OptimizerChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scg" => Ok(OptimizerChoice::Scg),
            "sgd" => Ok(OptimizerChoice::Sgd),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// Early stopping on whole validation runs. Off unless configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopping {
    pub validation_run_ids: Vec<String>,
    /// Cycles between validation checks.
    pub interval: usize,
    /// Checks without improvement before stopping.
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub version: u32,
    pub hidden_units: usize,
    pub alpha: f64,
    pub activation: Activation,
    pub optimizer: OptimizerChoice,
    pub seed: u64,
    /// Divisor for time-since-change. Defaults to the longest dwell in the
    /// training corpus.
    pub dwell_scale: Option<f64>,
    /// Runs excluded from training, normalization and residual statistics.
    pub holdout_run_ids: Vec<String>,
    pub scg: ScgOptions,
    pub sgd: SgdOptions,
    pub early_stopping: Option<EarlyStopping>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            hidden_units: 750,
            alpha: 0.1,
            activation: Activation::Logistic,
            optimizer: OptimizerChoice::Scg,
            seed: 0,
            dwell_scale: None,
            holdout_run_ids: Vec::new(),
            scg: ScgOptions::default(),
            sgd: SgdOptions::default(),
            early_stopping: None,
        }
    }
}

impl Versioned for TrainConfig {
    fn version(&self) -> u32 {
        self.version
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units < 1 {
            return Err(Error::Config("hidden_units must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if let Some(s) = self.dwell_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("dwell_scale must be positive, got {s}")));
            }
        }
        match self.optimizer {
            OptimizerChoice::Scg => self.scg.validate()?,
            OptimizerChoice::Sgd => self.sgd.validate()?,
        }
        if let Some(es) = &self.early_stopping {
            if self.optimizer != OptimizerChoice::Scg {
                return Err(Error::Config("early stopping is only available with scg".into()));
            }
            if es.interval < 1 || es.patience < 1 || es.validation_run_ids.is_empty() {
                return Err(Error::Config(
                    "early stopping needs validation runs, interval >= 1 and patience >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Mean and standard deviation of |predicted - actual| over training rows,
/// in raw speed units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl ResidualStats {
    pub fn from_residuals(residuals: &[f64]) -> Self {
        let n = residuals.len();
        if n == 0 {
            return Self {
                mean: 0.0,
                std: 0.0,
                count: 0,
            };
        }
        let mean = residuals.iter().sum::<f64>() / n as f64;
        let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            mean,
            std: var.sqrt(),
            count: n,
        }
    }
}

/// A trained network with everything needed to apply it to raw telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedArtifact {
    pub model: Mlp,
    pub normalization: NormalizationMeta,
    pub dwell_scale: f64,
    /// Sample interval in non-dimensional time.
    pub dt: f64,
    pub trace: TrainingTrace,
    pub residuals: ResidualStats,
}

impl TrainedArtifact {
    /// Sample interval in raw time units.
    pub fn raw_dt(&self) -> f64 {
        self.dt * self.normalization.time_scale
    }

    /// Network outputs in raw speed units for rows built from normalized runs.
    pub fn predict_rows(&self, rows: &[FeatureRow]) -> Result<Vec<f64>> {
        let inputs = feature_matrix(rows, self.dwell_scale)?;
        let out = self.model.forward(&inputs)?;
        Ok(out
            .as_slice()
            .iter()
            .map(|y| y * self.normalization.speed_scale)
            .collect())
    }
}

pub fn feature_matrix(rows: &[FeatureRow], dwell_scale: f64) -> Result<Matrix<f64>> {
    let mut data = Vec::with_capacity(rows.len() * N_FEATURES);
    for r in rows {
        data.extend_from_slice(&r.inputs(dwell_scale));
    }
    Matrix::from_vec(rows.len(), N_FEATURES, data)
}

pub fn build_batch(rows: &[FeatureRow], dwell_scale: f64) -> Result<TrainingBatch<f64>> {
    let inputs = feature_matrix(rows, dwell_scale)?;
    let targets = Matrix::from_vec(rows.len(), 1, rows.iter().map(|r| r.target).collect())?;
    TrainingBatch::new(inputs, targets)
}

/// Feature rows for every run, in corpus order.
pub fn corpus_features(runs: &[RunRecord]) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::new();
    for run in runs {
        rows.extend(domain::extract_features(run)?);
    }
    Ok(rows)
}

fn common_dt(runs: &[RunRecord]) -> Result<f64> {
    let dt = runs[0].dt();
    if let Some(r) = runs.iter().find(|r| (r.dt() - dt).abs() > 1e-9 * dt) {
        return Err(Error::Config(format!(
            "all runs must share one sample interval: {} has dt {} but {} has {}",
            r.run_id(),
            r.dt(),
            runs[0].run_id(),
            dt
        )));
    }
    Ok(dt)
}

/// Trains a network on `runs`, leaving out `cfg.holdout_run_ids` (and any
/// early-stopping validation runs) entirely.
pub fn train_pipeline(runs: &[RunRecord], cfg: &TrainConfig) -> Result<TrainedArtifact> {
    cfg.validate()?;
    if runs.is_empty() {
        return Err(Error::EmptyInput("corpus has no runs".into()));
    }
    let ids: BTreeSet<&str> = runs.iter().map(|r| r.run_id()).collect();
    if ids.len() != runs.len() {
        return Err(Error::Config("run ids must be unique".into()));
    }
    let validation_ids: Vec<String> = cfg
        .early_stopping
        .as_ref()
        .map(|es| es.validation_run_ids.clone())
        .unwrap_or_default();
    for id in cfg.holdout_run_ids.iter().chain(&validation_ids) {
        if !ids.contains(id.as_str()) {
            return Err(Error::Config(format!("unknown run id '{id}' in holdout/validation")));
        }
    }
    let excluded: BTreeSet<&str> = cfg
        .holdout_run_ids
        .iter()
        .chain(&validation_ids)
        .map(String::as_str)
        .collect();
    let training: Vec<RunRecord> = runs
        .iter()
        .filter(|r| !excluded.contains(r.run_id()))
        .cloned()
        .collect();
    if training.is_empty() {
        return Err(Error::EmptyInput("no training runs left after holdout".into()));
    }
    for run in &training {
        run.validate()?;
    }

    let meta = domain::fit_normalization(&training)?;
    let normalized = training
        .iter()
        .map(|r| meta.apply(r))
        .collect::<Result<Vec<_>>>()?;
    let dt = common_dt(&normalized)?;
    let rows = corpus_features(&normalized)?;
    let dwell_scale = match cfg.dwell_scale {
        Some(s) => s,
        None => {
            let longest = domain::max_dwell(&rows);
            if longest > 0.0 {
                longest
            } else {
                1.0
            }
        }
    };
    let batch = build_batch(&rows, dwell_scale)?;
    log::debug!(
        "training on {} rows from {} runs (dwell scale {dwell_scale})",
        batch.len(),
        training.len()
    );

    let init = MlpModel::init(
        N_FEATURES,
        cfg.hidden_units,
        1,
        cfg.activation,
        cfg.alpha,
        cfg.seed,
    )?;
    let (model, trace) = match cfg.optimizer {
        OptimizerChoice::Scg => match &cfg.early_stopping {
            None => optim::train_scg(&init, &batch, &cfg.scg)?,
            Some(es) => {
                let validation: Vec<RunRecord> = runs
                    .iter()
                    .filter(|r| es.validation_run_ids.iter().any(|id| id == r.run_id()))
                    .map(|r| meta.apply(r))
                    .collect::<Result<_>>()?;
                let vbatch = build_batch(&corpus_features(&validation)?, dwell_scale)?;
                train_with_early_stopping(&init, &batch, &vbatch, &cfg.scg, es)?
            }
        },
        OptimizerChoice::Sgd => optim::train_sgd(&init, &batch, &cfg.sgd)?,
    };

    let mut artifact = TrainedArtifact {
        model,
        normalization: meta,
        dwell_scale,
        dt,
        trace,
        residuals: ResidualStats::from_residuals(&[]),
    };
    let predicted = artifact.predict_rows(&rows)?;
    let residuals: Vec<f64> = predicted
        .iter()
        .zip(&rows)
        .map(|(p, r)| (p - r.target * meta.speed_scale).abs())
        .collect();
    artifact.residuals = ResidualStats::from_residuals(&residuals);
    Ok(artifact)
}

fn train_with_early_stopping(
    init: &Mlp,
    batch: &TrainingBatch<f64>,
    validation: &TrainingBatch<f64>,
    opts: &ScgOptions,
    es: &EarlyStopping,
) -> Result<(Mlp, TrainingTrace)> {
    // Validation error is the data term only.
    let unregularized = init.with_alpha(0.0)?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stale = 0usize;
    let mut failure = None;
    let (last, trace) = optim::train_scg_with_monitor(init, batch, opts, &mut |info| {
        if info.cycle % es.interval != 0 {
            return Control::Continue;
        }
        let v = match unregularized.error_at(info.theta, validation) {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e);
                return Control::Stop;
            }
        };
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, info.theta.to_vec()));
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= es.patience {
            Control::Stop
        } else {
            Control::Continue
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let model = match best {
        Some((_, theta)) => init.with_params(theta)?,
        None => last,
    };
    Ok((model, trace))
}
