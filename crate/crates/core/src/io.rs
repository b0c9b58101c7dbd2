//! CSV readers and writers for runs, mission profiles and flagged intervals.
//!
//! Run CSV: header `t,cmd_speed,actual_speed,utilization`, one row per sample.
//! Profile CSV: header `t,cmd_speed`, one row per command change. The profile
//! duration goes in a leading `# duration=<value>` comment.
//! Floats are written in plain decimal notation with the shortest digits that
//! round-trip.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::domain::{MissionProfile, RunRecord, Sample, Segment};
use crate::eval::FlaggedInterval;
use crate::{Error, Result};

pub const RUN_HEADER: &str = "t,cmd_speed,actual_speed,utilization";
pub const PROFILE_HEADER: &str = "t,cmd_speed";
pub const FLAGS_HEADER: &str = "start_idx,end_idx,peak_residual";

fn csv_error(what: &str, e: csv::Error) -> Error {
    let line = e.position().map(|p| format!(" line {}", p.line())).unwrap_or_default();
    Error::Parse(format!("{what}{line}: {e}"))
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &str, what: &str) -> Result<()> {
    let got = rdr.headers().map_err(|e| csv_error(what, e))?;
    let got: Vec<&str> = got.iter().map(str::trim).collect();
    if got.join(",") != expected {
        return Err(Error::Parse(format!(
            "{what}: header must be '{expected}', got '{}'",
            got.join(",")
        )));
    }
    Ok(())
}

/// Sample interval implied by a time column.
fn infer_dt(samples: &[Sample]) -> f64 {
    match samples {
        [first, .., last] => (last.t - first.t) / (samples.len() - 1) as f64,
        _ => 1.0,
    }
}

/// Parses a run CSV. The sample interval is inferred from the time column and
/// the run is validated.
pub fn parse_run(run_id: &str, text: &str) -> Result<RunRecord> {
    let what = format!("run {run_id}");
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    check_header(&mut rdr, RUN_HEADER, &what)?;
    let samples = rdr
        .deserialize::<Sample>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_error(&what, e))?;
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!("{what} has no samples")));
    }
    let dt = infer_dt(&samples);
    RunRecord::new(run_id, dt, samples)
}

pub fn format_run(run: &RunRecord) -> String {
    let mut s = String::with_capacity(run.len() * 40);
    s.push_str(RUN_HEADER);
    s.push('\n');
    for x in run.samples() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            x.t, x.cmd_speed, x.actual_speed, x.utilization
        );
    }
    s
}

pub fn read_run(path: &Path) -> Result<RunRecord> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run")
        .to_string();
    parse_run(&id, &std::fs::read_to_string(path)?)
}

/// All `*.csv` files in `dir`, sorted by name.
pub fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "csv") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Reads every run CSV in `dir`; run ids are the file stems.
pub fn read_run_dir(dir: &Path) -> Result<Vec<RunRecord>> {
    csv_files(dir)?.iter().map(|p| read_run(p)).collect()
}

#[derive(Deserialize)]
struct ProfileRow {
    t: f64,
    cmd_speed: f64,
}

/// Parses a profile CSV. Without a `# duration=` comment the profile ends
/// `default_tail` after its last command change.
pub fn parse_profile(text: &str, default_tail: f64) -> Result<MissionProfile> {
    let mut duration = None;
    for line in text.lines() {
        let Some(c) = line.trim().strip_prefix('#') else {
            continue;
        };
        if let Some(v) = c.trim().strip_prefix("duration=") {
            duration = Some(v.trim().parse::<f64>().map_err(|_| {
                Error::MalformedProfile(format!("bad duration comment '{}'", line.trim()))
            })?);
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    check_header(&mut rdr, PROFILE_HEADER, "profile")?;
    let segments = rdr
        .deserialize::<ProfileRow>()
        .map(|r| {
            r.map(|r| Segment {
                start: r.t,
                cmd_speed: r.cmd_speed,
            })
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_error("profile", e))?;
    let Some(last) = segments.last() else {
        return Err(Error::EmptyInput("profile has no segments".into()));
    };
    let duration = duration.unwrap_or(last.start + default_tail);
    MissionProfile::new(segments, duration)
}

pub fn format_profile(p: &MissionProfile) -> String {
    let mut s = format!("# duration={}\n{PROFILE_HEADER}\n", p.duration());
    for seg in p.segments() {
        let _ = writeln!(s, "{},{}", seg.start, seg.cmd_speed);
    }
    s
}

pub fn format_flags(flags: &[FlaggedInterval]) -> String {
    let mut s = format!("{FLAGS_HEADER}\n");
    for f in flags {
        let _ = writeln!(s, "{},{},{}", f.start_idx, f.end_idx, f.peak_residual);
    }
    s
}
