//! Single-hidden-layer feed-forward network with a linear output layer.
//!
//! Parameters live in one flat vector in canonical order:
//!
//! ```text
//! W1 (n_in x n_hidden, row-major) | b1 (n_hidden) | W2 (n_hidden x n_out, row-major) | b2 (n_out)
//! ```
//!
//! The trainers, the gradient and the model file all use this order.
//!
//! The error minimized during training is the sum-of-squares error plus a
//! weight-decay prior on the weights (biases are not penalized):
//!
//! ```text
//! E = 1/2 * sum_n ||y(x_n) - t_n||^2 + alpha/2 * sum(W1^2) + alpha/2 * sum(W2^2)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Hidden-layer squashing function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `1 / (1 + exp(-a))`
    #[default]
    Logistic,
    /// `tanh(a)`
    Tanh,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Logistic => T::one() / (T::one() + (-a).exp()),
            Activation::Tanh => a.tanh(),
        }
    }

    /// Derivative expressed through the activation value `z`.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Logistic => z * (T::one() - z),
            Activation::Tanh => T::one() - z * z,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Logistic => "logistic",
            Activation::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(Activation::Logistic),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                expected: format!("{rows}x{cols} = {} values", rows * cols),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape {
                    expected: format!("{cols} columns"),
                    got: format!("{} columns in row {i}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Inputs and targets, one row per training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch<T> {
    inputs: Matrix<T>,
    targets: Matrix<T>,
}

impl<T: Scalar> TrainingBatch<T> {
    pub fn new(inputs: Matrix<T>, targets: Matrix<T>) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::Shape {
                expected: format!("{} target rows", inputs.rows()),
                got: format!("{} target rows", targets.rows()),
            });
        }
        if inputs.rows() == 0 {
            return Err(Error::EmptyInput("training batch has no rows".into()));
        }
        if !inputs.is_finite() || !targets.is_finite() {
            return Err(Error::NonFinite("training batch contains non-finite entries".into()));
        }
        Ok(Self { inputs, targets })
    }

    pub fn inputs(&self) -> &Matrix<T> {
        &self.inputs
    }

    pub fn targets(&self) -> &Matrix<T> {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// Weights and biases of an `n_in`-`n_hidden`-`n_out` network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    n_in: usize,
    n_hidden: usize,
    n_out: usize,
    activation: Activation,
    alpha: T,
    params: Vec<T>,
}

impl<T: Scalar> MlpModel<T> {
    /// Network with every parameter set to zero.
    pub fn zeros(
        n_in: usize,
        n_hidden: usize,
        n_out: usize,
        activation: Activation,
        alpha: T,
    ) -> Result<Self> {
        if n_in == 0 || n_hidden == 0 || n_out == 0 {
            return Err(Error::Config(format!(
                "layer sizes must be positive, got {n_in}-{n_hidden}-{n_out}"
            )));
        }
        if !(alpha >= T::zero() && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
        }
        let n = Self::param_count(n_in, n_hidden, n_out);
        Ok(Self {
            n_in,
            n_hidden,
            n_out,
            activation,
            alpha,
            params: vec![T::zero(); n],
        })
    }

    /// Network with zero-mean Gaussian parameters, std `1/sqrt(fan_in)` per layer.
    pub fn init(
        n_in: usize,
        n_hidden: usize,
        n_out: usize,
        activation: Activation,
        alpha: T,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeros(n_in, n_hidden, n_out, activation, alpha)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = Normal::new(0.0, 1.0 / (n_in as f64).sqrt()).expect("valid std");
        let second = Normal::new(0.0, 1.0 / (n_hidden as f64).sqrt()).expect("valid std");
        let split = n_in * n_hidden + n_hidden;
        for (k, p) in model.params.iter_mut().enumerate() {
            let dist = if k < split { &first } else { &second };
            *p = T::lit(dist.sample(&mut rng));
        }
        Ok(model)
    }

    pub fn param_count(n_in: usize, n_hidden: usize, n_out: usize) -> usize {
        n_in * n_hidden + n_hidden + n_hidden * n_out + n_out
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// All parameters in canonical order.
    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Copy of this network with different parameters.
    pub fn with_params(&self, params: Vec<T>) -> Result<Self> {
        self.check_params(&params)?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("parameters must be finite".into()));
        }
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    pub fn with_alpha(&self, alpha: T) -> Result<Self> {
        if !(alpha >= T::zero() && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
        }
        Ok(Self {
            alpha,
            ..self.clone()
        })
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.n_in * self.n_hidden;
        let w2 = b1 + self.n_hidden;
        let b2 = w2 + self.n_hidden * self.n_out;
        (b1, w2, b2)
    }

    pub fn w1(&self) -> &[T] {
        let (b1, _, _) = self.offsets();
        &self.params[..b1]
    }

    pub fn b1(&self) -> &[T] {
        let (b1, w2, _) = self.offsets();
        &self.params[b1..w2]
    }

    pub fn w2(&self) -> &[T] {
        let (_, w2, b2) = self.offsets();
        &self.params[w2..b2]
    }

    pub fn b2(&self) -> &[T] {
        let (_, _, b2) = self.offsets();
        &self.params[b2..]
    }

    /// `true` at canonical indices that hold a weight (penalized), `false` for biases.
    pub fn weight_mask(&self) -> Vec<bool> {
        let (b1, w2, b2) = self.offsets();
        (0..self.params.len())
            .map(|k| k < b1 || (w2..b2).contains(&k))
            .collect()
    }

    fn check_params(&self, params: &[T]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape {
                expected: format!("{} parameters", self.params.len()),
                got: format!("{} parameters", params.len()),
            });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &TrainingBatch<T>) -> Result<()> {
        if batch.inputs().cols() != self.n_in || batch.targets().cols() != self.n_out {
            return Err(Error::Shape {
                expected: format!("{} inputs / {} targets", self.n_in, self.n_out),
                got: format!(
                    "{} inputs / {} targets",
                    batch.inputs().cols(),
                    batch.targets().cols()
                ),
            });
        }
        Ok(())
    }

    /// Network outputs, one row per input row.
    pub fn forward(&self, inputs: &Matrix<T>) -> Result<Matrix<T>> {
        if inputs.cols() != self.n_in {
            return Err(Error::Shape {
                expected: format!("{} input columns", self.n_in),
                got: format!("{} input columns", inputs.cols()),
            });
        }
        if !inputs.is_finite() {
            return Err(Error::NonFinite("network input".into()));
        }
        let mut out = Matrix::zeros(inputs.rows(), self.n_out);
        let mut hidden = vec![T::zero(); self.n_hidden];
        for i in 0..inputs.rows() {
            self.forward_row(&self.params, inputs.row(i), &mut hidden, out.row_mut(i));
        }
        Ok(out)
    }

    #[inline]
    fn forward_row(&self, theta: &[T], x: &[T], hidden: &mut [T], y: &mut [T]) {
        let (ob1, ow2, ob2) = self.offsets();
        let h = self.n_hidden;
        hidden.copy_from_slice(&theta[ob1..ow2]);
        for (i, &xi) in x.iter().enumerate() {
            let w = &theta[i * h..(i + 1) * h];
            for (a, &wij) in hidden.iter_mut().zip(w) {
                *a += xi * wij;
            }
        }
        for a in hidden.iter_mut() {
            *a = self.activation.apply(*a);
        }
        y.copy_from_slice(&theta[ob2..]);
        let w2 = &theta[ow2..ob2];
        for (j, &z) in hidden.iter().enumerate() {
            let w = &w2[j * self.n_out..(j + 1) * self.n_out];
            for (yk, &wjk) in y.iter_mut().zip(w) {
                *yk += z * wjk;
            }
        }
    }

    /// `alpha/2 * sum(w^2)` over the weights at `theta`.
    fn penalty_at(&self, theta: &[T]) -> T {
        let (b1, w2, b2) = self.offsets();
        let sq: T = theta[..b1]
            .iter()
            .chain(&theta[w2..b2])
            .map(|&w| w * w)
            .sum();
        self.alpha * sq / T::lit(2.0)
    }

    /// Data term `1/2 sum ||y - t||^2` over `rows` (all rows when `None`),
    /// accumulating its gradient into `grad` when given.
    fn data_term_at(
        &self,
        theta: &[T],
        batch: &TrainingBatch<T>,
        rows: Option<&[usize]>,
        mut grad: Option<&mut [T]>,
    ) -> T {
        let (ob1, ow2, ob2) = self.offsets();
        let (h, n_out) = (self.n_hidden, self.n_out);
        let mut hidden = vec![T::zero(); h];
        let mut dhidden = vec![T::zero(); h];
        let mut y = vec![T::zero(); n_out];
        let half = T::lit(0.5);
        let mut total = T::zero();

        let mut visit = |n: usize| {
            let x = batch.inputs().row(n);
            let t = batch.targets().row(n);
            self.forward_row(theta, x, &mut hidden, &mut y);
            for (yk, &tk) in y.iter_mut().zip(t) {
                *yk -= tk;
                total += half * *yk * *yk;
            }
            let Some(g) = grad.as_deref_mut() else {
                return;
            };
            let delta = &y;
            for k in 0..n_out {
                g[ob2 + k] += delta[k];
            }
            let w2 = &theta[ow2..ob2];
            for j in 0..h {
                let mut back = T::zero();
                let gw = &mut g[ow2 + j * n_out..ow2 + (j + 1) * n_out];
                for k in 0..n_out {
                    gw[k] += hidden[j] * delta[k];
                    back += w2[j * n_out + k] * delta[k];
                }
                dhidden[j] = back * self.activation.derivative_from_output(hidden[j]);
            }
            for (gb, &d) in g[ob1..ow2].iter_mut().zip(&dhidden) {
                *gb += d;
            }
            for (i, &xi) in x.iter().enumerate() {
                for (gw, &d) in g[i * h..(i + 1) * h].iter_mut().zip(&dhidden) {
                    *gw += xi * d;
                }
            }
        };

        match rows {
            Some(rows) => rows.iter().for_each(|&n| visit(n)),
            None => (0..batch.len()).for_each(&mut visit),
        }
        total
    }

    /// Adds `scale * alpha * w` to the weight coordinates of `grad`.
    fn add_penalty_gradient(&self, theta: &[T], grad: &mut [T], scale: T) {
        let (b1, w2, b2) = self.offsets();
        let a = self.alpha * scale;
        for k in (0..b1).chain(w2..b2) {
            grad[k] += a * theta[k];
        }
    }

    /// Regularized error at parameters `theta` (same shape as this model).
    pub fn error_at(&self, theta: &[T], batch: &TrainingBatch<T>) -> Result<T> {
        self.check_params(theta)?;
        self.check_batch(batch)?;
        Ok(self.data_term_at(theta, batch, None, None) + self.penalty_at(theta))
    }

    /// Regularized error and its gradient at `theta`.
    pub fn error_and_gradient_at(
        &self,
        theta: &[T],
        batch: &TrainingBatch<T>,
    ) -> Result<(T, Vec<T>)> {
        self.check_params(theta)?;
        self.check_batch(batch)?;
        let mut grad = vec![T::zero(); theta.len()];
        let data = self.data_term_at(theta, batch, None, Some(&mut grad));
        self.add_penalty_gradient(theta, &mut grad, T::one());
        Ok((data + self.penalty_at(theta), grad))
    }

    /// Gradient of the error restricted to `rows`, with the weight-decay term
    /// scaled by `penalty_scale` (the fraction of the batch the rows cover).
    pub fn partial_gradient_at(
        &self,
        theta: &[T],
        batch: &TrainingBatch<T>,
        rows: &[usize],
        penalty_scale: T,
    ) -> Result<Vec<T>> {
        self.check_params(theta)?;
        self.check_batch(batch)?;
        if let Some(&bad) = rows.iter().find(|&&n| n >= batch.len()) {
            return Err(Error::Shape {
                expected: format!("row index < {}", batch.len()),
                got: bad.to_string(),
            });
        }
        let mut grad = vec![T::zero(); theta.len()];
        self.data_term_at(theta, batch, Some(rows), Some(&mut grad));
        self.add_penalty_gradient(theta, &mut grad, penalty_scale);
        Ok(grad)
    }

    /// Sum-of-squares error plus the weight-decay prior.
    pub fn error(&self, batch: &TrainingBatch<T>) -> Result<T> {
        self.error_at(&self.params, batch)
    }

    /// Exact gradient of [`error`](Self::error) in canonical parameter order.
    pub fn gradient(&self, batch: &TrainingBatch<T>) -> Result<Vec<T>> {
        Ok(self.error_and_gradient_at(&self.params, batch)?.1)
    }
}
