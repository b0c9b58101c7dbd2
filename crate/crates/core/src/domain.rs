//! Telemetry data model and network input features.
//!
//! A run is a uniformly sampled series of (time, commanded speed, measured
//! speed, utilization) samples. Each sample maps to one [`FeatureRow`] whose
//! network inputs are, in order:
//!
//! 1. current commanded speed
//! 2. previous commanded speed (0 while the first command of the run is held)
//! 3. time since the last command change
//! 4. utilization (fraction of energy reserves depleted)

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative tolerance applied to `dt` when checking uniform sampling.
const GRID_TOL: f64 = 1e-6;

/// Number of network inputs produced per timestep.
pub const N_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub cmd_speed: f64,
    pub actual_speed: f64,
    pub utilization: f64,
}

/// One qualification run, uniformly sampled every `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    run_id: String,
    dt: f64,
    samples: Vec<Sample>,
}

impl RunRecord {
    /// Builds a run and checks its invariants: finite values, strictly
    /// increasing times on a uniform `dt` grid, non-negative commands, and a
    /// utilization series in [0, 1] that starts at 0 and never decreases.
    pub fn new(run_id: impl Into<String>, dt: f64, samples: Vec<Sample>) -> Result<Self> {
        let run = Self::new_unchecked(run_id, dt, samples);
        run.validate()?;
        Ok(run)
    }

    /// Builds a run without validation. [`extract_features`] and the pipeline
    /// re-check the invariants before using it.
    pub fn new_unchecked(run_id: impl Into<String>, dt: f64, samples: Vec<Sample>) -> Self {
        Self {
            run_id: run_id.into(),
            dt,
            samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.run_id.as_str();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::malformed(id, format!("dt must be positive, got {}", self.dt)));
        }
        let Some(first) = self.samples.first() else {
            return Ok(());
        };
        if let Some(i) = (1..self.samples.len()).find(|&i| self.samples[i].t <= self.samples[i - 1].t) {
            return Err(Error::malformed(id, format!("non-monotonic time at index {i}")));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if ![s.t, s.cmd_speed, s.actual_speed, s.utilization]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(Error::malformed(id, format!("non-finite value at index {i}")));
            }
            if s.cmd_speed < 0.0 {
                return Err(Error::malformed(id, format!("negative command at index {i}")));
            }
            if !(0.0..=1.0).contains(&s.utilization) {
                return Err(Error::malformed(
                    id,
                    format!("utilization {} outside [0, 1] at index {i}", s.utilization),
                ));
            }
            if i > 0 {
                let prev = &self.samples[i - 1];
                if s.utilization < prev.utilization {
                    return Err(Error::malformed(id, format!("utilization decreases at index {i}")));
                }
                let expected = first.t + i as f64 * self.dt;
                if (s.t - expected).abs() > GRID_TOL * self.dt + 1e-12 * expected.abs() {
                    return Err(Error::malformed(
                        id,
                        format!("time {} off the uniform grid (expected {expected})", s.t),
                    ));
                }
            }
        }
        if first.utilization.abs() > 1e-9 {
            return Err(Error::malformed(id, "utilization must start at 0"));
        }
        Ok(())
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn cmd_speeds(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.cmd_speed).collect()
    }

    pub fn actual_speeds(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.actual_speed).collect()
    }

    pub fn utilizations(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.utilization).collect()
    }

    /// Same run with the measured speed replaced.
    pub fn with_actual_speeds(&self, actual: &[f64]) -> Result<Self> {
        if actual.len() != self.samples.len() {
            return Err(Error::LengthMismatch(format!(
                "{} speeds for a run of {} samples",
                actual.len(),
                self.samples.len()
            )));
        }
        let samples = self
            .samples
            .iter()
            .zip(actual)
            .map(|(s, &a)| Sample {
                actual_speed: a,
                ..*s
            })
            .collect();
        RunRecord::new(self.run_id.clone(), self.dt, samples)
    }

    /// Splits a series holding several runs back to back. A new run starts
    /// wherever utilization drops, which is how a reset of the energy reserves
    /// shows up in concatenated telemetry. Each piece gets id
    /// `{prefix}-{index}` and its own time origin is preserved.
    pub fn split_on_utilization_reset(
        prefix: &str,
        dt: f64,
        samples: &[Sample],
    ) -> Result<Vec<RunRecord>> {
        let mut runs = Vec::new();
        let mut start = 0;
        for i in 1..=samples.len() {
            if i == samples.len() || samples[i].utilization < samples[i - 1].utilization {
                let id = format!("{prefix}-{}", runs.len());
                runs.push(RunRecord::new(id, dt, samples[start..i].to_vec())?);
                start = i;
            }
        }
        Ok(runs)
    }
}

/// A command change: from `start` onward the vehicle is commanded to `cmd_speed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub cmd_speed: f64,
}

/// The progression of commanded speeds for one run. Times are relative to the
/// run start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionProfile {
    segments: Vec<Segment>,
    duration: f64,
}

impl MissionProfile {
    pub fn new(segments: Vec<Segment>, duration: f64) -> Result<Self> {
        let Some(first) = segments.first() else {
            return Err(Error::EmptyInput("mission profile has no segments".into()));
        };
        if first.start != 0.0 {
            return Err(Error::MalformedProfile(format!(
                "first segment must start at 0, starts at {}",
                first.start
            )));
        }
        for (i, s) in segments.iter().enumerate() {
            if !s.start.is_finite() || !s.cmd_speed.is_finite() || s.cmd_speed < 0.0 {
                return Err(Error::MalformedProfile(format!("invalid segment {i}: {s:?}")));
            }
            if i > 0 && s.start <= segments[i - 1].start {
                return Err(Error::MalformedProfile(format!(
                    "segment start times must increase (segment {i})"
                )));
            }
        }
        let last = segments.last().map(|s| s.start).unwrap_or(0.0);
        if !(duration.is_finite() && duration > last) {
            return Err(Error::MalformedProfile(format!(
                "duration {duration} must exceed the last segment start {last}"
            )));
        }
        Ok(Self { segments, duration })
    }

    /// The profile a run was driven with, on the run's own time origin.
    pub fn from_run(run: &RunRecord) -> Result<Self> {
        let samples = run.samples();
        if samples.is_empty() {
            return Err(Error::EmptyInput(format!("run {} has no samples", run.run_id())));
        }
        let mut segments = vec![Segment {
            start: 0.0,
            cmd_speed: samples[0].cmd_speed,
        }];
        for i in 1..samples.len() {
            if samples[i].cmd_speed != samples[i - 1].cmd_speed {
                segments.push(Segment {
                    start: i as f64 * run.dt(),
                    cmd_speed: samples[i].cmd_speed,
                });
            }
        }
        Self::new(segments, samples.len() as f64 * run.dt())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn max_cmd(&self) -> f64 {
        self.segments.iter().map(|s| s.cmd_speed).fold(0.0, f64::max)
    }

    /// Number of uniform steps of size `dt` covering the profile.
    pub fn n_steps(&self, dt: f64) -> usize {
        (self.duration / dt).round().max(1.0) as usize
    }

    /// Commanded speed at every step `k * dt`, `k = 0..n_steps(dt)`.
    pub fn expand(&self, dt: f64) -> Vec<f64> {
        let n = self.n_steps(dt);
        let mut out = Vec::with_capacity(n);
        let mut seg = 0;
        for k in 0..n {
            let t = k as f64 * dt;
            while seg + 1 < self.segments.len() && self.segments[seg + 1].start <= t + GRID_TOL * dt
            {
                seg += 1;
            }
            out.push(self.segments[seg].cmd_speed);
        }
        out
    }

    /// Same profile with speeds and times divided by the given scales.
    pub fn scaled(&self, speed_scale: f64, time_scale: f64) -> Result<Self> {
        let segments = self
            .segments
            .iter()
            .map(|s| Segment {
                start: s.start / time_scale,
                cmd_speed: s.cmd_speed / speed_scale,
            })
            .collect();
        Self::new(segments, self.duration / time_scale)
    }
}

/// Network inputs for one timestep plus the measured speed it should predict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub cur_cmd: f64,
    pub prev_cmd: f64,
    /// In the run's time units; divide by a dwell scale before use.
    pub time_since_change: f64,
    pub utilization: f64,
    pub target: f64,
}

impl FeatureRow {
    /// Input vector with time since change divided by `dwell_scale`.
    #[inline]
    pub fn inputs(&self, dwell_scale: f64) -> [f64; N_FEATURES] {
        [
            self.cur_cmd,
            self.prev_cmd,
            self.time_since_change / dwell_scale,
            self.utilization,
        ]
    }
}

/// Command-derived columns for a command series: (current, previous, time
/// since change). Shared by feature extraction and profile prediction so both
/// produce identical inputs.
pub(crate) fn command_columns(cmds: &[f64], dt: f64) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(cmds.len());
    let mut prev = 0.0;
    let mut change_idx = 0usize;
    for (i, &c) in cmds.iter().enumerate() {
        if i > 0 && c != cmds[i - 1] {
            prev = cmds[i - 1];
            change_idx = i;
        }
        out.push((c, prev, (i - change_idx) as f64 * dt));
    }
    out
}

/// One feature row per sample, in time order. Rows never carry state across
/// runs; call once per run.
pub fn extract_features(run: &RunRecord) -> Result<Vec<FeatureRow>> {
    if run.is_empty() {
        return Err(Error::EmptyInput(format!("run {} has no samples", run.run_id())));
    }
    run.validate()?;
    let cmds = run.cmd_speeds();
    Ok(command_columns(&cmds, run.dt())
        .into_iter()
        .zip(run.samples())
        .map(|((cur, prev, since), s)| FeatureRow {
            cur_cmd: cur,
            prev_cmd: prev,
            time_since_change: since,
            utilization: s.utilization,
            target: s.actual_speed,
        })
        .collect())
}

/// Longest time spent at one command across the given feature rows.
pub fn max_dwell(rows: &[FeatureRow]) -> f64 {
    rows.iter().map(|r| r.time_since_change).fold(0.0, f64::max)
}

/// Scale factors mapping raw telemetry to non-dimensional units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMeta {
    /// Raw speed corresponding to non-dimensional speed 1 (the corpus maximum command).
    pub speed_scale: f64,
    /// Raw time corresponding to non-dimensional time 1 (the corpus maximum time).
    pub time_scale: f64,
}

impl NormalizationMeta {
    pub const IDENTITY: Self = Self {
        speed_scale: 1.0,
        time_scale: 1.0,
    };

    pub fn apply(&self, run: &RunRecord) -> Result<RunRecord> {
        self.map(run, |v, s| v / s)
    }

    pub fn invert(&self, run: &RunRecord) -> Result<RunRecord> {
        self.map(run, |v, s| v * s)
    }

    fn map(&self, run: &RunRecord, f: impl Fn(f64, f64) -> f64) -> Result<RunRecord> {
        let samples = run
            .samples()
            .iter()
            .map(|s| Sample {
                t: f(s.t, self.time_scale),
                cmd_speed: f(s.cmd_speed, self.speed_scale),
                actual_speed: f(s.actual_speed, self.speed_scale),
                utilization: s.utilization,
            })
            .collect();
        RunRecord::new(run.run_id(), f(run.dt(), self.time_scale), samples)
    }
}

/// Non-dimensionalizes a corpus: speeds are divided by the largest commanded
/// speed and times by the largest timestamp, so the corpus spans [0, 1].
pub fn normalize(runs: &[RunRecord]) -> Result<(Vec<RunRecord>, NormalizationMeta)> {
    let meta = fit_normalization(runs)?;
    let out = runs.iter().map(|r| meta.apply(r)).collect::<Result<Vec<_>>>()?;
    Ok((out, meta))
}

/// Scale factors [`normalize`] would use, without transforming anything.
pub fn fit_normalization(runs: &[RunRecord]) -> Result<NormalizationMeta> {
    if runs.iter().all(|r| r.is_empty()) {
        return Err(Error::EmptyInput("corpus has no samples".into()));
    }
    let samples = || runs.iter().flat_map(|r| r.samples());
    if samples().any(|s| s.cmd_speed < 0.0 || s.actual_speed < 0.0) {
        return Err(Error::DegenerateCorpus("raw speeds must be non-negative".into()));
    }
    let speed_scale = samples().map(|s| s.cmd_speed).fold(0.0, f64::max);
    if !(speed_scale > 0.0 && speed_scale.is_finite()) {
        return Err(Error::DegenerateCorpus("maximum commanded speed is zero".into()));
    }
    let max_t = samples().map(|s| s.t).fold(f64::NEG_INFINITY, f64::max);
    let time_scale = if max_t > 0.0 && max_t.is_finite() {
        max_t
    } else {
        1.0
    };
    Ok(NormalizationMeta {
        speed_scale,
        time_scale,
    })
}
