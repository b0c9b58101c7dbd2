//! Shuffled mini-batch gradient descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{norm, TrainingTrace};
use crate::mlp::{MlpModel, TrainingBatch};
use crate::{Error, Result, Scalar};

/// Error above which training is declared divergent.
const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdOptions {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 200,
            seed: 0,
        }
    }
}

impl SgdOptions {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it leaves the parameters untouched.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Each epoch visits the rows in a fresh seeded permutation and steps
/// `theta <- theta - lr * grad` per mini-batch. The mini-batch gradient covers
/// the batch's rows plus the matching fraction of the weight-decay term, so
/// one epoch sums to the full-batch gradient.
pub fn train_sgd<T: Scalar>(
    model: &MlpModel<T>,
    batch: &TrainingBatch<T>,
    opts: &SgdOptions,
) -> Result<(MlpModel<T>, TrainingTrace)> {
    opts.validate()?;
    let lr = T::lit(opts.learning_rate);
    let n = batch.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut theta = model.params().to_vec();
    let mut trace = TrainingTrace::default();

    let (e0, g0) = model.error_and_gradient_at(&theta, batch)?;
    trace.push(0, e0.as_f64(), norm(&g0).as_f64());

    for epoch in 1..=opts.epochs {
        trace.cycles_run = epoch;
        order.shuffle(&mut rng);
        for chunk in order.chunks(opts.batch_size) {
            let share = T::lit(chunk.len() as f64 / n as f64);
            let g = model.partial_gradient_at(&theta, batch, chunk, share)?;
            for (p, gk) in theta.iter_mut().zip(g) {
                *p -= lr * gk;
            }
        }
        let (e, g) = model.error_and_gradient_at(&theta, batch)?;
        let e = e.as_f64();
        trace.push(epoch, e, norm(&g).as_f64());
        if !e.is_finite() || e > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                epoch,
                error: e,
                trace,
            });
        }
    }
    trace.stop_reason = Some(super::StopReason::MaxCycles);
    Ok((model.with_params(theta)?, trace))
}
