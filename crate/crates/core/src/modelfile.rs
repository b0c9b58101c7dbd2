//! Model file format.
//!
//! A line-oriented text file: a magic/version header, `key value` lines, the
//! training trace, the flat parameter vector, and a trailing SHA-256 checksum
//! of every preceding byte. Floats use Rust's shortest round-trip exponent
//! form, so a save/load cycle is bit exact.
//!
//! ```text
//! nomperf-model 1
//! n_in 4
//! ...
//! trace_records 2
//! 0 1.5e0 3e-1
//! ...
//! params 3001
//! 1.234e-1
//! ...
//! checksum 9f86d0...
//! ```

use std::str::FromStr;

use crate::config::sha256_hex;
use crate::domain::NormalizationMeta;
use crate::mlp::{Activation, MlpModel};
use crate::optim::{StopReason, TraceRecord, TrainingTrace};
use crate::pipeline::{ResidualStats, TrainedArtifact};
use crate::{Error, Result};

pub const MAGIC: &str = "nomperf-model";
pub const MODEL_VERSION: u32 = 1;

fn stop_from_str(s: &str) -> Result<Option<StopReason>> {
    Ok(Some(match s {
        "none" => return Ok(None),
        "max_cycles" => StopReason::MaxCycles,
        "gradient_tolerance" => StopReason::GradientTolerance,
        "step_tolerance" => StopReason::StepTolerance,
        "zero_direction" => StopReason::ZeroDirection,
        "monitor" => StopReason::Monitor,
        other => return Err(Error::Parse(format!("unknown stop reason '{other}'"))),
    }))
}

pub fn to_bytes(a: &TrainedArtifact) -> Vec<u8> {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push(' ');
        s.push_str(&v);
        s.push('\n');
    };
    let m = &a.model;
    kv(MAGIC, MODEL_VERSION.to_string());
    kv("n_in", m.n_in().to_string());
    kv("n_hidden", m.n_hidden().to_string());
    kv("n_out", m.n_out().to_string());
    kv("activation", m.activation().as_str().to_string());
    kv("alpha", format!("{:e}", m.alpha()));
    kv("speed_scale", format!("{:e}", a.normalization.speed_scale));
    kv("time_scale", format!("{:e}", a.normalization.time_scale));
    kv("dwell_scale", format!("{:e}", a.dwell_scale));
    kv("dt", format!("{:e}", a.dt));
    kv("residual_mean", format!("{:e}", a.residuals.mean));
    kv("residual_std", format!("{:e}", a.residuals.std));
    kv("residual_count", a.residuals.count.to_string());
    let stop = a.trace.stop_reason.map_or("none".to_string(), |r| r.to_string());
    kv("trace_stop", stop);
    kv("trace_cycles_run", a.trace.cycles_run.to_string());
    kv("trace_rejected_steps", a.trace.rejected_steps.to_string());
    kv("trace_lambda_floor_hits", a.trace.lambda_floor_hits.to_string());
    kv("trace_records", a.trace.records.len().to_string());
    for r in &a.trace.records {
        s.push_str(&format!("{} {:e} {:e}\n", r.cycle, r.error, r.grad_norm));
    }
    s.push_str(&format!("params {}\n", m.params().len()));
    for p in m.params() {
        s.push_str(&format!("{p:e}\n"));
    }
    let sum = sha256_hex(s.as_bytes());
    s.push_str(&format!("checksum {sum}\n"));
    s.into_bytes()
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.it
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Truncated("model file ends early".into()))
    }

    fn value<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let (n, line) = self.next_line()?;
        let rest = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| Error::Parse(format!("line {n}: expected '{key}'")))?;
        rest.parse()
            .map_err(|_| Error::Parse(format!("line {n}: bad value for '{key}': {rest}")))
    }
}

fn parse_num<T: FromStr>(n: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("line {n}: bad number '{s}'")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainedArtifact> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Parse("model file is not valid UTF-8".into()))?;
    let header = text.lines().next().unwrap_or("");
    let version = header
        .strip_prefix(MAGIC)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::Parse("not a model file (bad header)".into()))?;
    if version.trim() != MODEL_VERSION.to_string() {
        return Err(Error::UnsupportedVersion(format!(
            "model file version '{version}' (expected {MODEL_VERSION})"
        )));
    }

    let body_end = text
        .trim_end_matches('\n')
        .rfind('\n')
        .map(|i| i + 1)
        .ok_or_else(|| Error::Truncated("model file has no checksum".into()))?;
    let (body, tail) = text.split_at(body_end);
    let stored = tail
        .trim_end()
        .strip_prefix("checksum ")
        .ok_or_else(|| Error::Truncated("model file has no checksum".into()))?;
    if stored != sha256_hex(body.as_bytes()) {
        return Err(Error::Checksum);
    }

    let mut l = Lines {
        it: body.lines().enumerate(),
    };
    l.next_line()?;
    let n_in: usize = l.value("n_in")?;
    let n_hidden: usize = l.value("n_hidden")?;
    let n_out: usize = l.value("n_out")?;
    let activation: Activation = l.value("activation")?;
    let alpha: f64 = l.value("alpha")?;
    let speed_scale: f64 = l.value("speed_scale")?;
    let time_scale: f64 = l.value("time_scale")?;
    let dwell_scale: f64 = l.value("dwell_scale")?;
    let dt: f64 = l.value("dt")?;
    let mean: f64 = l.value("residual_mean")?;
    let std: f64 = l.value("residual_std")?;
    let count: usize = l.value("residual_count")?;
    let stop: String = l.value("trace_stop")?;
    let mut trace = TrainingTrace {
        stop_reason: stop_from_str(&stop)?,
        cycles_run: l.value("trace_cycles_run")?,
        rejected_steps: l.value("trace_rejected_steps")?,
        lambda_floor_hits: l.value("trace_lambda_floor_hits")?,
        ..TrainingTrace::default()
    };
    let n_records: usize = l.value("trace_records")?;
    for _ in 0..n_records {
        let (n, line) = l.next_line()?;
        let f: Vec<&str> = line.split(' ').collect();
        if f.len() != 3 {
            return Err(Error::Parse(format!("line {n}: expected 3 trace fields")));
        }
        trace.records.push(TraceRecord {
            cycle: parse_num(n, f[0])?,
            error: parse_num(n, f[1])?,
            grad_norm: parse_num(n, f[2])?,
        });
    }
    let n_params: usize = l.value("params")?;
    let expected = MlpModel::<f64>::param_count(n_in, n_hidden, n_out);
    if n_params != expected {
        return Err(Error::Shape {
            expected: format!("{expected} parameters"),
            got: n_params.to_string(),
        });
    }
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let (n, line) = l.next_line()?;
        params.push(parse_num::<f64>(n, line)?);
    }
    if let Some((n, _)) = l.it.next() {
        return Err(Error::Parse(format!("line {}: unexpected trailing data", n + 1)));
    }

    let model = MlpModel::zeros(n_in, n_hidden, n_out, activation, alpha)?.with_params(params)?;
    Ok(TrainedArtifact {
        model,
        normalization: NormalizationMeta {
            speed_scale,
            time_scale,
        },
        dwell_scale,
        dt,
        trace,
        residuals: ResidualStats { mean, std, count },
    })
}

pub fn save(path: &std::path::Path, a: &TrainedArtifact) -> Result<()> {
    std::fs::write(path, to_bytes(a))?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<TrainedArtifact> {
    from_bytes(&std::fs::read(path)?)
}
