//! Minimal feedforward network with hand-written reverse-mode gradients,
//! Glorot (Xavier) initialization, and the two losses used by the benchmark
//! experiments. Parameters live in a flat [`ParamVector`], layer-major with
//! weights before biases per layer, so the optimizers can treat the model as
//! a plain vector.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::state::{LossOracle, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Silu,
    Relu,
}

impl Activation {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "silu" => Ok(Activation::Silu),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Silu => x * sigmoid(x),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Final layer semantics: raw linear outputs for regression, raw logits
/// (softmax applied inside the cross-entropy loss) for classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    Linear,
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

/// Dense row-major matrix; rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Mat { rows: n, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Regression targets are a matrix, classification targets class indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Values(Mat),
    Classes(Vec<usize>),
}

/// Input-target pairs; row counts always agree.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Mat,
    pub targets: Targets,
}

impl Batch {
    pub fn new(inputs: Mat, targets: Targets) -> Result<Self> {
        let target_rows = match &targets {
            Targets::Values(m) => m.rows,
            Targets::Classes(c) => c.len(),
        };
        if inputs.rows != target_rows {
            return Err(Error::Dimension(format!(
                "{} input rows vs {target_rows} target rows",
                inputs.rows
            )));
        }
        Ok(Batch { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fully connected network. `layer_sizes` runs input, hidden..., output;
/// hidden layers use `activation`, the output layer is always affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activation: Activation,
    output_mode: OutputMode,
    params: ParamVector,
}

impl Mlp {
    /// Glorot-uniform weights U(-sqrt(6/(fan_in+fan_out)), +...), zero biases,
    /// drawn deterministically from `seed`.
    pub fn new(
        layer_sizes: &[usize],
        activation: Activation,
        output_mode: OutputMode,
        seed: u64,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Dimension(format!(
                "need at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Dimension(format!("zero-width layer in {layer_sizes:?}")));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::param_count(layer_sizes));
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for _ in 0..fan_in * fan_out {
                params.push(dist.sample(&mut rng));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }

        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            output_mode,
            params: ParamVector::from_vec(params),
        })
    }

    /// Total parameter count: sum of n_in*n_out + n_out over layers.
    pub fn param_count(layer_sizes: &[usize]) -> usize {
        layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_mode(&self) -> OutputMode {
        self.output_mode
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "{} parameters given, model has {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Batch forward pass at the stored parameters.
    pub fn forward(&self, inputs: &Mat) -> Result<Mat> {
        self.forward_at(&self.params, inputs)
    }

    /// Batch forward pass at explicit parameters (the optimizers carry theta
    /// outside the model).
    pub fn forward_at(&self, params: &ParamVector, inputs: &Mat) -> Result<Mat> {
        self.check_params(params)?;
        if inputs.cols != self.layer_sizes[0] {
            return Err(Error::Dimension(format!(
                "input width {} != first layer size {}",
                inputs.cols, self.layer_sizes[0]
            )));
        }
        let out_dim = *self.layer_sizes.last().unwrap();
        let mut outputs = Mat::zeros(inputs.rows, out_dim);
        let mut buf_a = Vec::new();
        let mut buf_z = Vec::new();
        for s in 0..inputs.rows {
            let out = self.forward_sample(params, inputs.row(s), &mut buf_a, &mut buf_z);
            outputs.row_mut(s).copy_from_slice(&out);
        }
        Ok(outputs)
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        let expected = Self::param_count(&self.layer_sizes);
        if params.len() != expected {
            return Err(Error::Dimension(format!(
                "{} parameters given, architecture needs {expected}",
                params.len()
            )));
        }
        Ok(())
    }

    /// Forward for one sample, caching activations (buf_a) and
    /// pre-activations (buf_z) per layer for the backward pass.
    /// buf_a[0] is the input; buf_a[l+1] the activation after layer l.
    fn forward_sample(
        &self,
        params: &ParamVector,
        x: &[f64],
        buf_a: &mut Vec<Vec<f64>>,
        buf_z: &mut Vec<Vec<f64>>,
    ) -> Vec<f64> {
        buf_a.clear();
        buf_z.clear();
        buf_a.push(x.to_vec());
        let mut offset = 0;
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let weights = &params[offset..offset + n_in * n_out];
            let biases = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;

            let a_prev = buf_a.last().unwrap().clone();
            let mut z = vec![0.0; n_out];
            for j in 0..n_out {
                let row = &weights[j * n_in..(j + 1) * n_in];
                let mut acc = biases[j];
                for i in 0..n_in {
                    acc += row[i] * a_prev[i];
                }
                z[j] = acc;
            }
            let a = if l + 1 < self.n_layers() {
                z.iter().map(|&zi| self.activation.apply(zi)).collect()
            } else {
                z.clone()
            };
            buf_z.push(z);
            buf_a.push(a);
        }
        buf_a.last().unwrap().clone()
    }

    /// Mean loss over the batch and its gradient with respect to the flat
    /// parameters, via reverse-mode accumulation. Counts as a single gradient
    /// evaluation regardless of batch size.
    pub fn loss_and_gradient(&self, batch: &Batch, kind: LossKind) -> Result<(f64, ParamVector)> {
        self.loss_and_grad_at(&self.params, batch, kind)
    }

    pub fn loss_and_grad_at(
        &self,
        params: &ParamVector,
        batch: &Batch,
        kind: LossKind,
    ) -> Result<(f64, ParamVector)> {
        self.check_params(params)?;
        self.check_batch(batch, kind)?;
        let n = batch.len() as f64;
        let out_dim = *self.layer_sizes.last().unwrap();
        let n_layers = self.n_layers();

        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        let mut buf_a = Vec::new();
        let mut buf_z = Vec::new();

        for s in 0..batch.len() {
            let out = self.forward_sample(params, batch.inputs.row(s), &mut buf_a, &mut buf_z);

            // dL/dz at the output layer.
            let mut delta = vec![0.0; out_dim];
            match (&batch.targets, kind) {
                (Targets::Values(y), LossKind::Mse) => {
                    let target = y.row(s);
                    for j in 0..out_dim {
                        let diff = out[j] - target[j];
                        loss += diff * diff / (n * out_dim as f64);
                        delta[j] = 2.0 * diff / (n * out_dim as f64);
                    }
                }
                (Targets::Classes(classes), LossKind::CrossEntropy) => {
                    let class = classes[s];
                    // Max-subtraction keeps the exponentials bounded.
                    let zmax = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum_exp: f64 = out.iter().map(|&z| (z - zmax).exp()).sum();
                    loss += -(out[class] - zmax - sum_exp.ln()) / n;
                    for j in 0..out_dim {
                        let p = (out[j] - zmax).exp() / sum_exp;
                        delta[j] = (p - if j == class { 1.0 } else { 0.0 }) / n;
                    }
                }
                _ => unreachable!("check_batch enforces the pairing"),
            }

            // Walk layers backwards, accumulating weight/bias gradients.
            let mut offset = params.len();
            for l in (0..n_layers).rev() {
                let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
                offset -= n_in * n_out + n_out;
                let a_prev = &buf_a[l];
                for j in 0..n_out {
                    let dj = delta[j];
                    let wrow = &mut grad[offset + j * n_in..offset + (j + 1) * n_in];
                    for i in 0..n_in {
                        wrow[i] += dj * a_prev[i];
                    }
                    grad[offset + n_in * n_out + j] += dj;
                }
                if l > 0 {
                    let weights = &params[offset..offset + n_in * n_out];
                    let z_prev = &buf_z[l - 1];
                    let mut next = vec![0.0; n_in];
                    for i in 0..n_in {
                        let mut acc = 0.0;
                        for j in 0..n_out {
                            acc += weights[j * n_in + i] * delta[j];
                        }
                        next[i] = acc * self.activation.derivative(z_prev[i]);
                    }
                    delta = next;
                }
            }
        }

        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(
                "loss or gradient overflowed during the backward pass".into(),
            ));
        }
        Ok((loss, ParamVector::from_vec(grad)))
    }

    /// Mean loss only (no gradient); used for per-epoch recording so the
    /// gradient counter is untouched.
    pub fn loss_at(&self, params: &ParamVector, batch: &Batch, kind: LossKind) -> Result<f64> {
        self.check_params(params)?;
        self.check_batch(batch, kind)?;
        let n = batch.len() as f64;
        let out_dim = *self.layer_sizes.last().unwrap();
        let mut loss = 0.0;
        let mut buf_a = Vec::new();
        let mut buf_z = Vec::new();
        for s in 0..batch.len() {
            let out = self.forward_sample(params, batch.inputs.row(s), &mut buf_a, &mut buf_z);
            match (&batch.targets, kind) {
                (Targets::Values(y), LossKind::Mse) => {
                    let target = y.row(s);
                    for j in 0..out_dim {
                        let diff = out[j] - target[j];
                        loss += diff * diff / (n * out_dim as f64);
                    }
                }
                (Targets::Classes(classes), LossKind::CrossEntropy) => {
                    let zmax = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum_exp: f64 = out.iter().map(|&z| (z - zmax).exp()).sum();
                    loss += -(out[classes[s]] - zmax - sum_exp.ln()) / n;
                }
                _ => unreachable!("check_batch enforces the pairing"),
            }
        }
        Ok(loss)
    }

    fn check_batch(&self, batch: &Batch, kind: LossKind) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Dimension("empty batch".into()));
        }
        if batch.inputs.cols != self.layer_sizes[0] {
            return Err(Error::Dimension(format!(
                "input width {} != first layer size {}",
                batch.inputs.cols, self.layer_sizes[0]
            )));
        }
        let out_dim = *self.layer_sizes.last().unwrap();
        match (&batch.targets, kind) {
            (Targets::Values(y), LossKind::Mse) => {
                if y.cols != out_dim {
                    return Err(Error::Dimension(format!(
                        "target width {} != output size {out_dim}",
                        y.cols
                    )));
                }
            }
            (Targets::Classes(classes), LossKind::CrossEntropy) => {
                if self.output_mode != OutputMode::Logits {
                    return Err(Error::Dimension(
                        "cross-entropy needs a logits output layer".into(),
                    ));
                }
                if let Some(&bad) = classes.iter().find(|&&c| c >= out_dim) {
                    return Err(Error::Dimension(format!(
                        "class index {bad} out of range for {out_dim} outputs"
                    )));
                }
            }
            (Targets::Values(_), LossKind::CrossEntropy) => {
                return Err(Error::Dimension(
                    "cross-entropy needs class-index targets".into(),
                ));
            }
            (Targets::Classes(_), LossKind::Mse) => {
                return Err(Error::Dimension("mse needs value targets".into()));
            }
        }
        Ok(())
    }

    /// Central-difference gradient (L(p+d) - L(p-d)) / (2 d) per coordinate
    /// at the stored parameters; the independent check for the reverse mode.
    pub fn finite_difference_gradient(
        &self,
        batch: &Batch,
        kind: LossKind,
        step: f64,
    ) -> Result<ParamVector> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::Domain(format!("fd step must be positive, got {step}")));
        }
        let mut work = self.params.clone();
        let mut grad = Vec::with_capacity(work.len());
        for i in 0..work.len() {
            let saved = work[i];
            work[i] = saved + step;
            let plus = self.loss_at(&work, batch, kind)?;
            work[i] = saved - step;
            let minus = self.loss_at(&work, batch, kind)?;
            work[i] = saved;
            grad.push((plus - minus) / (2.0 * step));
        }
        Ok(ParamVector::from_vec(grad))
    }
}

/// Loss oracle bound to one batch of one model. Each `loss_and_grad` call is
/// one backward pass and bumps the counter by exactly 1.
pub struct BatchOracle<'a> {
    mlp: &'a Mlp,
    batch: &'a Batch,
    kind: LossKind,
    evals: u64,
}

impl<'a> BatchOracle<'a> {
    pub fn new(mlp: &'a Mlp, batch: &'a Batch, kind: LossKind) -> Self {
        Self { mlp, batch, kind, evals: 0 }
    }
}

impl LossOracle for BatchOracle<'_> {
    fn loss_and_grad(&mut self, _t: f64, theta: &ParamVector) -> Result<(f64, ParamVector)> {
        self.evals += 1;
        self.mlp.loss_and_grad_at(theta, self.batch, self.kind)
    }

    fn grad_evals(&self) -> u64 {
        self.evals
    }
}
