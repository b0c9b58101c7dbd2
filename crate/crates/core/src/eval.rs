//! Prediction for a mission profile, baseline predictors, accumulated error
//! and residual-based anomaly flagging.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{command_columns, MissionProfile, RunRecord, N_FEATURES};
use crate::mlp::Matrix;
use crate::pipeline::{ResidualStats, TrainedArtifact};
use crate::{Error, Result};

pub const REPORT_VERSION: u32 = 1;
pub const DEFAULT_K: f64 = 3.0;
pub const DEFAULT_WINDOW: usize = 25;
pub const DEFAULT_BIN_WIDTH: f64 = 0.05;

pub const METHOD_ANN: &str = "ann";
pub const METHOD_SETPOINT: &str = "setpoint";
pub const METHOD_SPEED_AVERAGE: &str = "speed_average";

/// Source of the utilization input during prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum UtilizationModel {
    /// A recorded series, one value per expanded timestep.
    Recorded(Vec<f64>),
    /// du/dt = burn * speed^exponent, speed in non-dimensional units,
    /// clipped to 1.
    Forecast { burn: f64, exponent: f64 },
}

impl UtilizationModel {
    /// Forecast calibrated so a run held at full speed depletes reserves in
    /// `duration` (raw time units).
    pub fn calibrated(duration: f64) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Config(format!("calibration duration must be positive, got {duration}")));
        }
        Ok(UtilizationModel::Forecast {
            burn: 1.0 / duration,
            exponent: 3.0,
        })
    }

    /// Utilization at each step for non-dimensional commands `cmds` sampled
    /// every `dt` raw time units.
    pub fn series(&self, cmds: &[f64], dt: f64) -> Result<Vec<f64>> {
        match self {
            UtilizationModel::Recorded(u) => {
                if u.len() != cmds.len() {
                    return Err(Error::LengthMismatch(format!(
                        "recorded utilization has {} samples, profile expands to {}",
                        u.len(),
                        cmds.len()
                    )));
                }
                if u.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return Err(Error::NonFinite("recorded utilization outside [0, 1]".into()));
                }
                Ok(u.clone())
            }
            &UtilizationModel::Forecast { burn, exponent } => {
                if !(burn >= 0.0 && burn.is_finite() && exponent.is_finite()) {
                    return Err(Error::Config(format!(
                        "forecast needs burn >= 0 and finite exponent, got {burn}, {exponent}"
                    )));
                }
                let mut u = 0.0f64;
                Ok(cmds
                    .iter()
                    .map(|&c| {
                        let now = u;
                        u = (u + burn * c.max(0.0).powf(exponent) * dt).min(1.0);
                        now
                    })
                    .collect())
            }
        }
    }
}

/// Per-step prediction for one profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub method: String,
    pub t: Vec<f64>,
    pub cmd_speed: Vec<f64>,
    pub predicted_speed: Vec<f64>,
    pub utilization: Vec<f64>,
    /// Steps whose command exceeds the training speed range.
    pub out_of_range: usize,
}

impl PredictionTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

fn expand_checked(profile: &MissionProfile, dt: f64) -> Result<Vec<f64>> {
    let cmds = profile.expand(dt);
    if cmds.is_empty() {
        return Err(Error::EmptyInput("profile expands to no timesteps".into()));
    }
    Ok(cmds)
}

fn times(n: usize, dt: f64) -> Vec<f64> {
    (0..n).map(|k| k as f64 * dt).collect()
}

/// Applies the trained network to a mission profile. Commands above the
/// training maximum produce a warning and are counted in `out_of_range`.
pub fn predict_run(
    artifact: &TrainedArtifact,
    profile: &MissionProfile,
    util: &UtilizationModel,
) -> Result<PredictionTrace> {
    let meta = artifact.normalization;
    let dt_raw = artifact.raw_dt();
    let cmds = expand_checked(profile, dt_raw)?;
    let cmd_n: Vec<f64> = cmds.iter().map(|c| c / meta.speed_scale).collect();
    let out_of_range = cmd_n.iter().filter(|&&c| c > 1.0 + 1e-9).count();
    if out_of_range > 0 {
        log::warn!(
            "{out_of_range} steps command more than the training maximum speed {}",
            meta.speed_scale
        );
    }
    let utilization = util.series(&cmd_n, dt_raw)?;

    let mut data = Vec::with_capacity(cmds.len() * N_FEATURES);
    for ((cur, prev, since), &u) in command_columns(&cmd_n, artifact.dt).into_iter().zip(&utilization) {
        data.extend_from_slice(&[cur, prev, since / artifact.dwell_scale, u]);
    }
    let out = artifact
        .model
        .forward(&Matrix::from_vec(cmds.len(), N_FEATURES, data)?)?;
    Ok(PredictionTrace {
        method: METHOD_ANN.into(),
        t: times(cmds.len(), dt_raw),
        predicted_speed: out.as_slice().iter().map(|y| y * meta.speed_scale).collect(),
        cmd_speed: cmds,
        utilization,
        out_of_range,
    })
}

/// Predicts actual speed equal to the command.
pub fn baseline_setpoint(profile: &MissionProfile, dt: f64) -> Result<PredictionTrace> {
    let cmds = expand_checked(profile, dt)?;
    Ok(PredictionTrace {
        method: METHOD_SETPOINT.into(),
        t: times(cmds.len(), dt),
        predicted_speed: cmds.clone(),
        utilization: vec![0.0; cmds.len()],
        cmd_speed: cmds,
        out_of_range: 0,
    })
}

/// Mean measured speed per commanded-speed bin over past runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedAverage {
    bin_width: f64,
    bins: BTreeMap<i64, (f64, usize)>,
}

impl SpeedAverage {
    /// Bins are centered on multiples of `bin_width`.
    pub fn fit(runs: &[RunRecord], bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::Config(format!("bin width must be positive, got {bin_width}")));
        }
        if runs.is_empty() {
            return Err(Error::EmptyInput("speed-average baseline needs training runs".into()));
        }
        let mut bins: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
        for s in runs.iter().flat_map(|r| r.samples()) {
            let e = bins.entry(Self::bin(s.cmd_speed, bin_width)).or_default();
            e.0 += s.actual_speed;
            e.1 += 1;
        }
        Ok(Self { bin_width, bins })
    }

    fn bin(cmd: f64, width: f64) -> i64 {
        (cmd / width).round() as i64
    }

    /// Bin mean, or the command itself for an empty bin.
    pub fn predict(&self, cmd: f64) -> f64 {
        match self.bins.get(&Self::bin(cmd, self.bin_width)) {
            Some(&(sum, n)) => sum / n as f64,
            None => cmd,
        }
    }
}

pub fn baseline_speed_average(
    training_runs: &[RunRecord],
    profile: &MissionProfile,
    dt: f64,
    bin_width: f64,
) -> Result<PredictionTrace> {
    let avg = SpeedAverage::fit(training_runs, bin_width)?;
    let cmds = expand_checked(profile, dt)?;
    Ok(PredictionTrace {
        method: METHOD_SPEED_AVERAGE.into(),
        t: times(cmds.len(), dt),
        predicted_speed: cmds.iter().map(|&c| avg.predict(c)).collect(),
        utilization: vec![0.0; cmds.len()],
        cmd_speed: cmds,
        out_of_range: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub mean_residual: f64,
    pub max_residual: f64,
    pub final_accumulated: f64,
}

/// One method's residuals against a recorded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEval {
    pub method: String,
    pub predicted: Vec<f64>,
    /// |predicted - actual| per step.
    pub residuals: Vec<f64>,
    /// Running sum of residuals (unweighted by dt).
    pub accumulated: Vec<f64>,
    pub summary: MethodSummary,
}

impl MethodEval {
    pub fn from_series(method: &str, predicted: &[f64], actual: &[f64]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::LengthMismatch(format!(
                "{method}: {} predictions for {} samples",
                predicted.len(),
                actual.len()
            )));
        }
        if predicted.is_empty() {
            return Err(Error::EmptyInput(format!("{method}: nothing to evaluate")));
        }
        let residuals: Vec<f64> = predicted.iter().zip(actual).map(|(p, a)| (p - a).abs()).collect();
        let mut acc = 0.0;
        let accumulated: Vec<f64> = residuals
            .iter()
            .map(|r| {
                acc += r;
                acc
            })
            .collect();
        let summary = MethodSummary {
            mean_residual: acc / residuals.len() as f64,
            max_residual: residuals.iter().copied().fold(0.0, f64::max),
            final_accumulated: acc,
        };
        Ok(Self {
            method: method.into(),
            predicted: predicted.to_vec(),
            residuals,
            accumulated,
            summary,
        })
    }
}

/// Compares a prediction with a recorded run. Timestamps are matched
/// relative to the start of each series.
pub fn evaluate(pred: &PredictionTrace, actual: &RunRecord) -> Result<MethodEval> {
    if pred.len() != actual.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predicts {} steps but run {} has {} samples",
            pred.method,
            pred.len(),
            actual.run_id(),
            actual.len()
        )));
    }
    let t0 = actual.samples().first().map_or(0.0, |s| s.t);
    let tol = 1e-6 * actual.dt();
    for (k, (tp, s)) in pred.t.iter().zip(actual.samples()).enumerate() {
        if ((s.t - t0) - (tp - pred.t[0])).abs() > tol + 1e-12 * s.t.abs() {
            return Err(Error::LengthMismatch(format!(
                "timestamps misaligned at step {k}: prediction {tp}, run {}",
                s.t
            )));
        }
    }
    MethodEval::from_series(&pred.method, &pred.predicted_speed, &actual.actual_speeds())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagPolicy {
    pub k: f64,
    pub window: usize,
}

impl Default for FlagPolicy {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedInterval {
    pub method: String,
    /// Inclusive sample indices.
    pub start_idx: usize,
    pub end_idx: usize,
    pub peak_residual: f64,
}

/// Evaluation of every method on one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub run_id: String,
    pub t: Vec<f64>,
    pub cmd_speed: Vec<f64>,
    pub actual_speed: Vec<f64>,
    pub methods: Vec<MethodEval>,
    pub residual_stats: Option<ResidualStats>,
    pub flag_policy: Option<FlagPolicy>,
    pub flags: Vec<FlaggedInterval>,
}

impl EvalReport {
    pub fn new(run: &RunRecord) -> Self {
        let s = run.samples();
        Self {
            version: REPORT_VERSION,
            run_id: run.run_id().into(),
            t: s.iter().map(|x| x.t).collect(),
            cmd_speed: run.cmd_speeds(),
            actual_speed: run.actual_speeds(),
            methods: Vec::new(),
            residual_stats: None,
            flag_policy: None,
            flags: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn method(&self, name: &str) -> Option<&MethodEval> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// Flags the named method's residuals and stores the result.
    pub fn flag(&mut self, method: &str, stats: &ResidualStats, policy: FlagPolicy) -> Result<()> {
        let m = self
            .method(method)
            .ok_or_else(|| Error::Config(format!("report has no method '{method}'")))?;
        self.flags = flag_anomalies(&m.residuals, stats, policy.k, policy.window, method)?;
        self.residual_stats = Some(*stats);
        self.flag_policy = Some(policy);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != REPORT_VERSION {
            return Err(Error::UnsupportedVersion(format!(
                "report version {} (expected {REPORT_VERSION})",
                self.version
            )));
        }
        let n = self.t.len();
        if n == 0 || self.methods.is_empty() {
            return Err(Error::EmptyInput("report has no samples or methods".into()));
        }
        if self.cmd_speed.len() != n || self.actual_speed.len() != n {
            return Err(Error::LengthMismatch("report columns differ in length".into()));
        }
        for m in &self.methods {
            if m.predicted.len() != n || m.residuals.len() != n || m.accumulated.len() != n {
                return Err(Error::LengthMismatch(format!(
                    "method {} arrays differ from report length {n}",
                    m.method
                )));
            }
        }
        for f in &self.flags {
            if f.start_idx > f.end_idx || f.end_idx >= n {
                return Err(Error::Parse(format!(
                    "flag interval {}..{} out of bounds",
                    f.start_idx, f.end_idx
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }
}

/// Builds a report for `run` with the network (if any) and both baselines.
/// The profile is recovered from the run's commands.
pub fn evaluate_all(
    artifact: Option<&TrainedArtifact>,
    util: &UtilizationModel,
    training_runs: &[RunRecord],
    run: &RunRecord,
    bin_width: f64,
) -> Result<EvalReport> {
    let profile = MissionProfile::from_run(run)?;
    let mut report = EvalReport::new(run);
    if let Some(a) = artifact {
        report.methods.push(evaluate(&predict_run(a, &profile, util)?, run)?);
    }
    report
        .methods
        .push(evaluate(&baseline_setpoint(&profile, run.dt())?, run)?);
    if !training_runs.is_empty() {
        let avg = baseline_speed_average(training_runs, &profile, run.dt(), bin_width)?;
        report.methods.push(evaluate(&avg, run)?);
    }
    Ok(report)
}

/// Centered rolling mean over `window` samples, truncated at the edges.
/// Sample i averages indices [i - (window-1)/2, i + window/2].
pub fn rolling_mean(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let (lo, hi) = ((window.max(1) - 1) / 2, window.max(1) / 2);
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(lo);
            let b = (i + hi).min(n - 1);
            x[a..=b].iter().sum::<f64>() / (b - a + 1) as f64
        })
        .collect()
}

/// Maximal intervals where the rolling mean residual exceeds
/// `stats.mean + k * stats.std`.
pub fn flag_anomalies(
    residuals: &[f64],
    stats: &ResidualStats,
    k: f64,
    window: usize,
    method: &str,
) -> Result<Vec<FlaggedInterval>> {
    if window < 1 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    if !(k > 0.0) {
        return Err(Error::Config(format!("k must be positive, got {k}")));
    }
    if residuals.len() < window {
        return Err(Error::LengthMismatch(format!(
            "report has {} samples, fewer than the window {window}",
            residuals.len()
        )));
    }
    let threshold = stats.mean + k * stats.std;
    let rolling = rolling_mean(residuals, window);
    let mut out: Vec<FlaggedInterval> = Vec::new();
    let mut open: Option<usize> = None;
    for i in 0..=rolling.len() {
        let hot = i < rolling.len() && rolling[i] > threshold;
        match (hot, open) {
            (true, None) => open = Some(i),
            (false, Some(s)) => {
                out.push(FlaggedInterval {
                    method: method.into(),
                    start_idx: s,
                    end_idx: i - 1,
                    peak_residual: residuals[s..i].iter().copied().fold(0.0, f64::max),
                });
                open = None;
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Indices within `half_width` steps of a command change.
pub fn transient_mask(cmds: &[f64], half_width: usize) -> Vec<bool> {
    let mut mask = vec![false; cmds.len()];
    for i in 1..cmds.len() {
        if cmds[i] != cmds[i - 1] {
            let a = i.saturating_sub(half_width);
            let b = (i + half_width).min(cmds.len() - 1);
            mask[a..=b].iter_mut().for_each(|m| *m = true);
        }
    }
    mask
}
