//! Trainers minimizing the regularized network error.
//!
//! [`train_scg`] is the canonical full-batch trainer; [`train_sgd`] is a
//! shuffled mini-batch alternative. Both return a new model and leave the
//! input untouched.

mod scg;
mod sgd;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::mlp::{MlpModel, TrainingBatch};
use crate::{Error, Result, Scalar};

pub use scg::{minimize_scg, train_scg, train_scg_with_monitor, Control, CycleInfo, ScgOptions};
pub use sgd::{train_sgd, SgdOptions};

/// A differentiable function of a flat parameter vector.
pub trait Objective<T: Scalar> {
    fn dim(&self) -> usize;

    fn value(&self, theta: &[T]) -> Result<T>;

    fn value_and_gradient(&self, theta: &[T]) -> Result<(T, Vec<T>)>;

    fn gradient(&self, theta: &[T]) -> Result<Vec<T>> {
        Ok(self.value_and_gradient(theta)?.1)
    }
}

/// Network error over a fixed batch as a function of the parameters.
pub struct MlpObjective<'a, T> {
    pub model: &'a MlpModel<T>,
    pub batch: &'a TrainingBatch<T>,
}

impl<T: Scalar> Objective<T> for MlpObjective<'_, T> {
    fn dim(&self) -> usize {
        self.model.n_params()
    }

    fn value(&self, theta: &[T]) -> Result<T> {
        self.model.error_at(theta, self.batch)
    }

    fn value_and_gradient(&self, theta: &[T]) -> Result<(T, Vec<T>)> {
        self.model.error_and_gradient_at(theta, self.batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxCycles,
    GradientTolerance,
    StepTolerance,
    /// The search direction vanished (zero gradient).
    ZeroDirection,
    /// A monitor callback asked to stop (early stopping).
    Monitor,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StopReason::MaxCycles => "max_cycles",
            StopReason::GradientTolerance => "gradient_tolerance",
            StopReason::StepTolerance => "step_tolerance",
            StopReason::ZeroDirection => "zero_direction",
            StopReason::Monitor => "monitor",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub cycle: usize,
    pub error: f64,
    pub grad_norm: f64,
}

/// Error after each accepted cycle (SCG) or epoch (SGD). Record 0 is the
/// starting point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
    pub stop_reason: Option<StopReason>,
    pub cycles_run: usize,
    pub rejected_steps: usize,
    /// Times the trust-region scale was held at its lower guard rail.
    pub lambda_floor_hits: usize,
}

pub const TRACE_CSV_HEADER: &str = "cycle,error,grad_norm";

impl TrainingTrace {
    pub(crate) fn push(&mut self, cycle: usize, error: f64, grad_norm: f64) {
        self.records.push(TraceRecord {
            cycle,
            error,
            grad_norm,
        });
    }

    pub fn final_error(&self) -> Option<f64> {
        self.records.last().map(|r| r.error)
    }

    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.error).collect()
    }

    /// Number of consecutive record pairs whose error increases.
    pub fn monotonicity_violations(&self) -> usize {
        self.records
            .windows(2)
            .filter(|w| w[1].error > w[0].error)
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{}\n", r.cycle, r.error, r.grad_norm));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == TRACE_CSV_HEADER => {}
            other => {
                return Err(Error::Parse(format!(
                    "expected header '{TRACE_CSV_HEADER}', got {other:?}"
                )))
            }
        }
        let mut trace = TrainingTrace::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Parse(format!("line {}: malformed trace row '{line}'", i + 2));
            let mut f = line.split(',');
            let cycle = f.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
            let error = f.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
            let grad_norm = f.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
            if f.next().is_some() {
                return Err(bad());
            }
            trace.push(cycle, error, grad_norm);
        }
        Ok(trace)
    }
}

pub(crate) fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
