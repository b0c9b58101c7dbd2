//! Scaled conjugate gradient (Møller).
//!
//! Each cycle estimates the curvature along the search direction `d` from a
//! gradient difference at `x + sigma d` with `sigma = sigma0 / |d|`, shifts it
//! by the trust-region scale `lambda * |d|^2` and takes the resulting
//! Newton-like step. The comparison ratio between actual and predicted
//! reduction decides acceptance and how `lambda` moves. Directions follow the
//! Polak-Ribière update with a steepest-descent restart every `dim` accepted
//! steps.

use serde::{Deserialize, Serialize};

use super::{dot, norm, MlpObjective, Objective, StopReason, TrainingTrace};
use crate::mlp::{MlpModel, TrainingBatch};
use crate::{Error, Result, Scalar};

const LAMBDA_MIN: f64 = 1e-15;
const LAMBDA_MAX: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScgOptions {
    pub max_cycles: usize,
    /// Stop once the gradient norm drops below this.
    pub grad_tol: f64,
    /// Stop once an accepted step moves no coordinate by more than this.
    pub step_tol: f64,
    pub sigma0: f64,
    pub lambda_init: f64,
    /// Log the error after every accepted cycle.
    pub display: bool,
}

impl Default for ScgOptions {
    fn default() -> Self {
        Self {
            max_cycles: 75_000,
            grad_tol: 1e-12,
            step_tol: 1e-15,
            sigma0: 1e-4,
            lambda_init: 1e-6,
            display: false,
        }
    }
}

impl ScgOptions {
    pub fn with_cycles(max_cycles: usize) -> Self {
        Self {
            max_cycles,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_cycles < 1 {
            return Err(Error::Config("max_cycles must be at least 1".into()));
        }
        for (name, v) in [
            ("grad_tol", self.grad_tol),
            ("step_tol", self.step_tol),
            ("sigma0", self.sigma0),
            ("lambda_init", self.lambda_init),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(LAMBDA_MIN..=LAMBDA_MAX).contains(&self.lambda_init) {
            return Err(Error::Config(format!(
                "lambda_init must lie in [{LAMBDA_MIN:e}, {LAMBDA_MAX:e}]"
            )));
        }
        Ok(())
    }
}

/// State handed to a monitor after each accepted cycle.
pub struct CycleInfo<'a, T> {
    pub cycle: usize,
    pub error: T,
    pub grad_norm: T,
    pub lambda: T,
    pub theta: &'a [T],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

fn finite<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// Minimizes `obj` from `theta0`. Returns the final parameters and the trace
/// of accepted cycles. A non-finite error or gradient aborts with
/// [`Error::NumericFailure`] carrying the last accepted parameters.
pub fn minimize_scg<T: Scalar, O: Objective<T>>(
    obj: &O,
    theta0: Vec<T>,
    opts: &ScgOptions,
    monitor: &mut dyn FnMut(&CycleInfo<'_, T>) -> Control,
) -> Result<(Vec<T>, TrainingTrace)> {
    opts.validate()?;
    if theta0.len() != obj.dim() {
        return Err(Error::Shape {
            expected: format!("{} parameters", obj.dim()),
            got: format!("{} parameters", theta0.len()),
        });
    }
    let n = theta0.len();
    let two = T::lit(2.0);
    let sigma0 = T::lit(opts.sigma0);
    let grad_tol = T::lit(opts.grad_tol);
    let step_tol = T::lit(opts.step_tol);
    let (lambda_min, lambda_max) = (T::lit(LAMBDA_MIN), T::lit(LAMBDA_MAX));

    let mut trace = TrainingTrace::default();
    let mut x = theta0;
    let fail = |cycle: usize, reason: &str, x: &[T], trace: &TrainingTrace| Error::NumericFailure {
        cycle,
        reason: reason.to_string(),
        last_good: to_f64(x),
        trace: trace.clone(),
    };

    let (mut fold, mut gnew) = obj.value_and_gradient(&x)?;
    if !fold.is_finite() || !finite(&gnew) {
        return Err(fail(0, "non-finite error at the starting point", &x, &trace));
    }
    trace.push(0, fold.as_f64(), norm(&gnew).as_f64());
    if norm(&gnew) < grad_tol {
        trace.stop_reason = Some(StopReason::GradientTolerance);
        return Ok((x, trace));
    }

    let mut d: Vec<T> = gnew.iter().map(|&g| -g).collect();
    let mut gold = gnew.clone();
    let mut lambda = T::lit(opts.lambda_init);
    let mut need_curvature = true;
    let mut steepest = true;
    let mut nsuccess = 0usize;
    let (mut mu, mut kappa, mut curvature) = (T::zero(), T::zero(), T::zero());
    let mut xtrial = vec![T::zero(); n];

    for cycle in 1..=opts.max_cycles {
        trace.cycles_run = cycle;
        if need_curvature {
            mu = dot(&d, &gnew);
            if mu >= T::zero() {
                d.iter_mut().zip(&gnew).for_each(|(di, &g)| *di = -g);
                mu = dot(&d, &gnew);
                steepest = true;
            }
            kappa = dot(&d, &d);
            if !(kappa > T::zero()) {
                trace.stop_reason = Some(StopReason::ZeroDirection);
                return Ok((x, trace));
            }
            let sigma = sigma0 / kappa.sqrt();
            for ((xt, &xi), &di) in xtrial.iter_mut().zip(&x).zip(&d) {
                *xt = xi + sigma * di;
            }
            let gplus = obj.gradient(&xtrial)?;
            if !finite(&gplus) {
                return Err(fail(cycle, "non-finite gradient in curvature probe", &x, &trace));
            }
            curvature = d
                .iter()
                .zip(gplus.iter().zip(&gnew))
                .map(|(&di, (&gp, &g))| di * (gp - g))
                .sum::<T>()
                / sigma;
            need_curvature = false;
        }

        // Shift the curvature by the trust-region term until it is positive.
        let mut delta = curvature + lambda * kappa;
        if delta <= T::zero() {
            delta = lambda * kappa;
            lambda = lambda - curvature / kappa;
            if !(lambda <= lambda_max) {
                return Err(fail(cycle, "trust-region scale exceeded 1e100", &x, &trace));
            }
        }
        let step = -mu / delta;
        for ((xt, &xi), &di) in xtrial.iter_mut().zip(&x).zip(&d) {
            *xt = xi + step * di;
        }
        let fnew = obj.value(&xtrial)?;
        if !fnew.is_finite() {
            return Err(fail(cycle, "non-finite error during line evaluation", &x, &trace));
        }
        let ratio = two * (fnew - fold) / (step * mu);
        let success = ratio >= T::zero();

        if success {
            let step_size = d
                .iter()
                .map(|&di| (step * di).abs())
                .fold(T::zero(), T::max);
            std::mem::swap(&mut x, &mut xtrial);
            nsuccess += 1;
            std::mem::swap(&mut gold, &mut gnew);
            gnew = obj.gradient(&x)?;
            if !finite(&gnew) {
                return Err(fail(cycle, "non-finite gradient after accepted step", &x, &trace));
            }
            fold = fnew;
            let gnorm = norm(&gnew);
            trace.push(cycle, fnew.as_f64(), gnorm.as_f64());
            if opts.display {
                log::info!(
                    "Cycle {cycle:6}  Error {:14.8}  Scale {:e}",
                    fnew.as_f64(),
                    lambda.as_f64()
                );
            }
            let info = CycleInfo {
                cycle,
                error: fnew,
                grad_norm: gnorm,
                lambda,
                theta: &x,
            };
            if monitor(&info) == Control::Stop {
                trace.stop_reason = Some(StopReason::Monitor);
                return Ok((x, trace));
            }
            if gnorm < grad_tol {
                trace.stop_reason = Some(StopReason::GradientTolerance);
                return Ok((x, trace));
            }
            if step_size < step_tol {
                trace.stop_reason = Some(StopReason::StepTolerance);
                return Ok((x, trace));
            }
        } else {
            trace.rejected_steps += 1;
        }

        if ratio < T::lit(0.25) {
            lambda = lambda * T::lit(4.0);
            if !(lambda <= lambda_max) {
                return Err(fail(cycle, "trust-region scale exceeded 1e100", &x, &trace));
            }
        }
        if ratio > T::lit(0.75) {
            lambda = lambda * T::lit(0.5);
            if lambda < lambda_min {
                lambda = lambda_min;
                trace.lambda_floor_hits += 1;
            }
        }

        if success {
            if nsuccess == n {
                d.iter_mut().zip(&gnew).for_each(|(di, &g)| *di = -g);
                nsuccess = 0;
                steepest = true;
            } else {
                let gamma = gold
                    .iter()
                    .zip(&gnew)
                    .map(|(&go, &g)| (go - g) * g)
                    .sum::<T>()
                    / mu;
                d.iter_mut().zip(&gnew).for_each(|(di, &g)| *di = gamma * *di - g);
                steepest = false;
            }
            need_curvature = true;
        } else if !steepest {
            // Rejected: parameters stay put and the search restarts downhill.
            d.iter_mut().zip(&gnew).for_each(|(di, &g)| *di = -g);
            nsuccess = 0;
            steepest = true;
            need_curvature = true;
        }
    }
    trace.stop_reason = Some(StopReason::MaxCycles);
    Ok((x, trace))
}

/// Full-batch SCG training of `model` on `batch`.
pub fn train_scg<T: Scalar>(
    model: &MlpModel<T>,
    batch: &TrainingBatch<T>,
    opts: &ScgOptions,
) -> Result<(MlpModel<T>, TrainingTrace)> {
    train_scg_with_monitor(model, batch, opts, &mut |_| Control::Continue)
}

pub fn train_scg_with_monitor<T: Scalar>(
    model: &MlpModel<T>,
    batch: &TrainingBatch<T>,
    opts: &ScgOptions,
    monitor: &mut dyn FnMut(&CycleInfo<'_, T>) -> Control,
) -> Result<(MlpModel<T>, TrainingTrace)> {
    let obj = MlpObjective { model, batch };
    let (theta, trace) = minimize_scg(&obj, model.params().to_vec(), opts, monitor)?;
    Ok((model.with_params(theta)?, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// E = 1/2 |theta - target|^2
    struct Bowl {
        target: Vec<f64>,
    }

    impl Objective<f64> for Bowl {
        fn dim(&self) -> usize {
            self.target.len()
        }
        fn value(&self, t: &[f64]) -> Result<f64> {
            Ok(0.5 * t.iter().zip(&self.target).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        }
        fn value_and_gradient(&self, t: &[f64]) -> Result<(f64, Vec<f64>)> {
            let g = t.iter().zip(&self.target).map(|(a, b)| a - b).collect();
            Ok((self.value(t)?, g))
        }
    }

    struct Poison;

    impl Objective<f64> for Poison {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, t: &[f64]) -> Result<f64> {
            Ok(if t[0] > 0.5 { f64::NAN } else { (t[0] - 1.0).powi(2) + t[1] * t[1] })
        }
        fn value_and_gradient(&self, t: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((self.value(t)?, vec![2.0 * (t[0] - 1.0), 2.0 * t[1]]))
        }
    }

    #[test]
    fn bowl_converges_within_dim_plus_five() {
        let target: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let bowl = Bowl { target: target.clone() };
        let opts = ScgOptions {
            grad_tol: 1e-300,
            step_tol: 1e-300,
            ..ScgOptions::with_cycles(8 + 5)
        };
        let (theta, trace) = minimize_scg(&bowl, vec![0.0; 8], &opts, &mut |_| Control::Continue).unwrap();
        assert!(bowl.value(&theta).unwrap() < 1e-16, "{:?}", trace.errors());
        assert_eq!(trace.monotonicity_violations(), 0);
    }

    #[test]
    fn non_finite_line_evaluation_reports_last_good() {
        let opts = ScgOptions::with_cycles(50);
        match minimize_scg(&Poison, vec![0.0, 0.3], &opts, &mut |_| Control::Continue) {
            Err(Error::NumericFailure { last_good, .. }) => {
                assert_eq!(last_good.len(), 2);
                assert!(last_good.iter().all(|v| v.is_finite()));
            }
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }

    #[test]
    fn monitor_can_stop() {
        let bowl = Bowl { target: vec![1.0, 2.0, 3.0] };
        let (_, trace) = minimize_scg(&bowl, vec![0.0; 3], &ScgOptions::default(), &mut |c| {
            if c.cycle >= 1 { Control::Stop } else { Control::Continue }
        })
        .unwrap();
        assert_eq!(trace.stop_reason, Some(StopReason::Monitor));
        assert_eq!(trace.records.len(), 2);
    }

    #[test]
    fn options_are_validated() {
        let bowl = Bowl { target: vec![1.0] };
        let bad = ScgOptions { max_cycles: 0, ..ScgOptions::default() };
        assert!(minimize_scg(&bowl, vec![0.0], &bad, &mut |_| Control::Continue).is_err());
        let bad = ScgOptions { grad_tol: 0.0, ..ScgOptions::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn start_at_minimum_stops_immediately() {
        let bowl = Bowl { target: vec![1.0, 1.0] };
        let (theta, trace) =
            minimize_scg(&bowl, vec![1.0, 1.0], &ScgOptions::default(), &mut |_| Control::Continue).unwrap();
        assert_eq!(theta, vec![1.0, 1.0]);
        assert_eq!(trace.stop_reason, Some(StopReason::GradientTolerance));
    }
}
