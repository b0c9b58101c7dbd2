//! Synthetic mission profiles and run telemetry.
//!
//! Profiles are piecewise constant on a speed grid and mix four motifs after a
//! startup segment: staircases (rapid adjacent steps from the lowest to the
//! highest speed), full-speed plateaus, isolated one-grid steps, and random
//! jumps.
//!
//! The plant is a first-order lag toward an effective target with these
//! departures:
//!
//! - downward steps split the gap into a fast part (time constant `tau_v`)
//!   and a slow settling part (`settle_tau`)
//! - at the top speed the target caps at `cmd - delta * (u - u_crit)` once
//!   utilization exceeds `u_crit`
//! - moderate upward steps may overshoot by a decaying half-sine bump
//! - some runs fade late: the target sags once utilization passes an onset
//! - with a positive `preview` the target ramps toward an upcoming higher
//!   command during the lead time before it is issued
//!
//! Utilization integrates `burn * speed^3` and measured speed carries
//! Gaussian noise.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{Versioned, CONFIG_VERSION};
use crate::domain::{MissionProfile, RunRecord, Sample, Segment};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub n_runs: usize,
    /// Run length in time units. Ignored when `total_steps` is set.
    pub duration: f64,
    /// Split this many samples as evenly as possible across the runs.
    pub total_steps: Option<usize>,
    pub dt: f64,
    pub speed_grid: Vec<f64>,
    /// Probability that a motif is a staircase.
    pub staircase_probability: f64,
    /// Relative weights of the remaining motifs.
    pub plateau_weight: f64,
    pub small_step_weight: f64,
    pub jump_weight: f64,
    /// Dwell range for ordinary segments (time units).
    pub dwell_min: f64,
    pub dwell_max: f64,
    /// Dwell range for the inner steps of a staircase.
    pub stair_dwell_min: f64,
    pub stair_dwell_max: f64,
    pub tau_v: f64,
    /// Share of a downward gap closed with `tau_v`; the rest settles with `settle_tau`.
    pub drop_fraction: f64,
    pub settle_tau: f64,
    pub u_crit: f64,
    pub undershoot_slope: f64,
    pub overshoot_probability: f64,
    /// Peak excess as a fraction of the new command.
    pub overshoot_magnitude: f64,
    /// Largest upward step that may overshoot.
    pub overshoot_max_step: f64,
    /// Lead time over which the vehicle eases toward an upcoming higher
    /// command before it is issued. 0 disables.
    pub preview: f64,
    pub fade_probability: f64,
    pub fade_onset: f64,
    /// Relative target loss per unit of utilization past the onset.
    pub fade_depth: f64,
    pub noise_std: f64,
    /// Utilization burn coefficient. Defaults to 1 / run duration.
    pub burn: Option<f64>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::canonical()
    }
}

impl Versioned for ScenarioConfig {
    fn version(&self) -> u32 {
        self.version
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be in [0, 1], got {p}")))
    }
}

fn check_pos(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be >= 0, got {v}")))
    }
}

impl ScenarioConfig {
    /// Twenty runs of 250 steps, about 5,000 samples in all.
    pub fn canonical() -> Self {
        Self {
            version: CONFIG_VERSION,
            n_runs: 20,
            duration: 250.0,
            total_steps: None,
            dt: 1.0,
            speed_grid: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            staircase_probability: 0.3,
            plateau_weight: 1.0,
            small_step_weight: 1.0,
            jump_weight: 1.0,
            dwell_min: 20.0,
            dwell_max: 50.0,
            stair_dwell_min: 4.0,
            stair_dwell_max: 8.0,
            tau_v: 4.0,
            drop_fraction: 0.6,
            settle_tau: 15.0,
            u_crit: 0.4,
            undershoot_slope: 0.4,
            overshoot_probability: 0.3,
            overshoot_magnitude: 0.05,
            overshoot_max_step: 0.4,
            preview: 0.0,
            fade_probability: 0.2,
            fade_onset: 0.6,
            fade_depth: 0.3,
            noise_std: 0.005,
            burn: None,
            seed: 42,
        }
    }

    /// The canonical scenario stretched to 64,779 samples over 20 runs.
    pub fn full_scale() -> Self {
        Self {
            total_steps: Some(64_779),
            ..Self::canonical()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_pos("dt", self.dt)?;
        if self.total_steps.is_none() {
            check_pos("duration", self.duration)?;
        }
        if self.speed_grid.is_empty() {
            return Err(Error::Config("speed_grid is empty".into()));
        }
        if self.speed_grid.windows(2).any(|w| !(w[1] > w[0])) || !(self.speed_grid[0] > 0.0) {
            return Err(Error::Config("speed_grid must be positive and increasing".into()));
        }
        if self.speed_grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("speed_grid must be finite".into()));
        }
        for (n, p) in [
            ("staircase_probability", self.staircase_probability),
            ("overshoot_probability", self.overshoot_probability),
            ("fade_probability", self.fade_probability),
            ("drop_fraction", self.drop_fraction),
            ("u_crit", self.u_crit),
            ("fade_onset", self.fade_onset),
        ] {
            check_prob(n, p)?;
        }
        for (n, v) in [
            ("plateau_weight", self.plateau_weight),
            ("small_step_weight", self.small_step_weight),
            ("jump_weight", self.jump_weight),
            ("undershoot_slope", self.undershoot_slope),
            ("overshoot_magnitude", self.overshoot_magnitude),
            ("overshoot_max_step", self.overshoot_max_step),
            ("preview", self.preview),
            ("fade_depth", self.fade_depth),
            ("noise_std", self.noise_std),
        ] {
            check_nonneg(n, v)?;
        }
        if self.staircase_probability < 1.0
            && self.plateau_weight + self.small_step_weight + self.jump_weight <= 0.0
        {
            return Err(Error::Config("motif weights are all zero".into()));
        }
        check_pos("tau_v", self.tau_v)?;
        check_pos("settle_tau", self.settle_tau)?;
        check_pos("dwell_min", self.dwell_min)?;
        check_pos("stair_dwell_min", self.stair_dwell_min)?;
        if self.dwell_max < self.dwell_min || self.stair_dwell_max < self.stair_dwell_min {
            return Err(Error::Config("dwell ranges must have max >= min".into()));
        }
        if let Some(b) = self.burn {
            check_nonneg("burn", b)?;
        }
        Ok(())
    }

    /// Sample count of run `i`.
    pub fn run_steps(&self, i: usize) -> usize {
        match self.total_steps {
            Some(total) => {
                let base = total / self.n_runs.max(1);
                base + usize::from(i < total % self.n_runs.max(1))
            }
            None => (self.duration / self.dt).round() as usize,
        }
    }

    fn top(&self) -> f64 {
        *self.speed_grid.last().unwrap_or(&1.0)
    }
}

/// Builds segments on the grid, merging repeated levels.
struct ProfileBuilder {
    segments: Vec<Segment>,
    level: Option<usize>,
    step: usize,
    last_up: bool,
}

impl ProfileBuilder {
    fn push(&mut self, level: usize, steps: usize, grid: &[f64]) {
        if self.level != Some(level) {
            self.last_up = self.level.is_none_or(|l| level > l);
            self.segments.push(Segment {
                start: self.step as f64,
                cmd_speed: grid[level],
            });
            self.level = Some(level);
        }
        self.step += steps.max(1);
    }
}

fn draw_steps<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64, dt: f64) -> usize {
    let a = (lo / dt).round().max(1.0) as usize;
    let b = ((hi / dt).round() as usize).max(a);
    rng.random_range(a..=b)
}

/// Generates a profile of `n_steps` samples at spacing `cfg.dt`.
pub fn generate_profile_steps<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    n_steps: usize,
    rng: &mut R,
) -> Result<MissionProfile> {
    cfg.validate()?;
    if n_steps == 0 {
        return Err(Error::Config("run duration must be positive".into()));
    }
    let grid = &cfg.speed_grid;
    let top = grid.len() - 1;
    let dt = cfg.dt;
    let dwell = |rng: &mut R| draw_steps(rng, cfg.dwell_min, cfg.dwell_max, dt);
    let stair = |rng: &mut R| draw_steps(rng, cfg.stair_dwell_min, cfg.stair_dwell_max, dt);
    let mut b = ProfileBuilder {
        segments: Vec::new(),
        level: None,
        step: 0,
        last_up: true,
    };

    // Startup from rest into the lower half of the grid.
    let start = rng.random_range(0..=top / 2);
    let d = dwell(rng);
    b.push(start, d, grid);

    let rest = cfg.plateau_weight + cfg.small_step_weight + cfg.jump_weight;
    while b.step < n_steps {
        let cur = b.level.unwrap_or(0);
        if rng.random::<f64>() < cfg.staircase_probability {
            if cur > 0 {
                let d = dwell(rng);
                b.push(0, d, grid);
            }
            for lvl in 1..top {
                let d = stair(rng);
                b.push(lvl, d, grid);
            }
            let d = dwell(rng);
            b.push(top, d, grid);
            continue;
        }
        let pick = rng.random::<f64>() * rest;
        if pick < cfg.plateau_weight {
            if cur == top && top > 0 {
                let lvl = rng.random_range(0..top);
                let d = dwell(rng);
                b.push(lvl, d, grid);
            }
            let d = dwell(rng);
            b.push(top, d, grid);
        } else if pick < cfg.plateau_weight + cfg.small_step_weight && top > 0 {
            let base = if cur >= top || b.last_up {
                rng.random_range(0..top.min(cur.max(1)))
            } else {
                cur
            };
            if base != cur {
                let d = dwell(rng);
                b.push(base, d, grid);
            }
            let d = dwell(rng);
            b.push(base + 1, d, grid);
        } else if top > 0 {
            let mut lvl = rng.random_range(0..top);
            if lvl >= cur {
                lvl += 1;
            }
            let d = dwell(rng);
            b.push(lvl, d, grid);
        } else {
            let d = dwell(rng);
            b.push(0, d, grid);
        }
    }
    let duration = n_steps as f64 * dt;
    let segments: Vec<Segment> = b
        .segments
        .into_iter()
        .filter(|s| s.start < n_steps as f64)
        .map(|s| Segment {
            start: s.start * dt,
            ..s
        })
        .collect();
    MissionProfile::new(segments, duration)
}

/// Generates a profile of `cfg.duration` time units.
pub fn generate_profile<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<MissionProfile> {
    cfg.validate()?;
    if !(cfg.duration > 0.0) {
        return Err(Error::Config("run duration must be positive".into()));
    }
    generate_profile_steps(cfg, (cfg.duration / cfg.dt).round() as usize, rng)
}

/// Simulates the plant driven by `profile`.
pub fn simulate_run<R: Rng + ?Sized>(
    run_id: &str,
    profile: &MissionProfile,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<RunRecord> {
    cfg.validate()?;
    let dt = cfg.dt;
    let cmds = profile.expand(dt);
    let n = cmds.len();
    let top = cfg.top();
    let burn = cfg.burn.unwrap_or(1.0 / (n.max(1) as f64 * dt));
    let a_fast = (-dt / cfg.tau_v).exp();
    let a_slow = (-dt / cfg.settle_tau).exp();
    let noise = if cfg.noise_std > 0.0 {
        Some(Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let fades = rng.random::<f64>() < cfg.fade_probability;
    // Index of the next command change after each step, if it goes up.
    let mut next_up: Vec<Option<usize>> = vec![None; n];
    for k in (0..n.saturating_sub(1)).rev() {
        next_up[k] = if cmds[k + 1] != cmds[k] {
            (cmds[k + 1] > cmds[k]).then_some(k + 1)
        } else {
            next_up[k + 1]
        };
    }

    let mut samples = Vec::with_capacity(n);
    let (mut fast, mut slow) = (0.0f64, 0.0f64);
    let mut prev_target = 0.0f64;
    let mut u = 0.0f64;
    let mut overshoot_from: Option<usize> = None;
    for k in 0..n {
        let cmd = cmds[k];
        let mut target = cmd;
        if let Some(kn) = next_up[k].filter(|_| cfg.preview > 0.0) {
            let lead = (kn - k) as f64 * dt;
            if lead <= cfg.preview {
                target += (cmds[kn] - cmd) * (1.0 - lead / cfg.preview);
            }
        }
        if cmd >= top && u > cfg.u_crit {
            target -= cfg.undershoot_slope * (u - cfg.u_crit);
        }
        if fades && u > cfg.fade_onset {
            target -= cfg.fade_depth * (u - cfg.fade_onset) * cmd;
        }
        let target = target.max(0.0);

        if k == 0 {
            fast = -target;
            slow = 0.0;
        } else if cmd != cmds[k - 1] {
            let gap = prev_target + fast + slow - target;
            if cmd < cmds[k - 1] {
                fast = cfg.drop_fraction * gap;
                slow = (1.0 - cfg.drop_fraction) * gap;
                overshoot_from = None;
            } else {
                fast = gap;
                slow = 0.0;
                overshoot_from = None;
                if cmd - cmds[k - 1] <= cfg.overshoot_max_step + 1e-12
                    && rng.random::<f64>() < cfg.overshoot_probability
                {
                    overshoot_from = Some(k);
                }
            }
        } else {
            // Keep the true speed continuous while the target drifts.
            fast += prev_target - target;
        }

        let mut speed = target + fast + slow;
        if let Some(k0) = overshoot_from {
            // Bump of one tau_v starting once the rise is mostly done.
            let s = (k - k0) as f64 * dt - cfg.tau_v;
            if (0.0..cfg.tau_v).contains(&s) {
                let phase = std::f64::consts::PI * s / cfg.tau_v;
                speed += cfg.overshoot_magnitude * cmd * phase.sin() * (-s / cfg.tau_v).exp();
            }
        }
        let measured = match &noise {
            Some(d) => speed + d.sample(rng),
            None => speed,
        };
        samples.push(Sample {
            t: k as f64 * dt,
            cmd_speed: cmd,
            actual_speed: measured.clamp(0.0, top.max(1.0)),
            utilization: u,
        });
        u = (u + burn * speed.max(0.0).powi(3) * dt).min(1.0);
        fast *= a_fast;
        slow *= a_slow;
        prev_target = target;
    }
    RunRecord::new(run_id, dt, samples)
}

/// Per-run seed and identifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub run_id: String,
    pub seed: u64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub master_seed: u64,
    pub config_sha256: String,
    pub runs: Vec<ManifestEntry>,
}

pub fn run_id(i: usize) -> String {
    format!("run_{i:03}")
}

/// Generates every run of the scenario. Each run draws its own seed from a
/// master generator seeded with `cfg.seed`.
pub fn generate_corpus(cfg: &ScenarioConfig) -> Result<(Vec<RunRecord>, Manifest)> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut runs = Vec::with_capacity(cfg.n_runs);
    let mut entries = Vec::with_capacity(cfg.n_runs);
    for i in 0..cfg.n_runs {
        let seed = master.next_u64();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = generate_profile_steps(cfg, cfg.run_steps(i), &mut rng)?;
        let id = run_id(i);
        let run = simulate_run(&id, &profile, cfg, &mut rng)?;
        entries.push(ManifestEntry {
            run_id: id,
            seed,
            samples: run.len(),
        });
        runs.push(run);
    }
    let manifest = Manifest {
        version: CONFIG_VERSION,
        master_seed: cfg.seed,
        config_sha256: crate::config::config_hash(cfg)?,
        runs: entries,
    };
    Ok((runs, manifest))
}
