//! Flat parameter vectors, the discrete optimizer state, and the loss oracle
//! interface every step rule consumes.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Flattened model parameters (or momenta/velocities) in 64-bit precision.
///
/// Elementwise operations preserve length; steppers index it like a slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        ParamVector(v)
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// Discrete trajectory point: parameters, momentum, velocity, continuous time t,
/// step index n, and the cumulative gradient-evaluation counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub theta: ParamVector,
    pub m: ParamVector,
    pub v: ParamVector,
    pub t: f64,
    pub step: u64,
    pub grad_evals: u64,
}

impl OptimizerState {
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Raises Divergence if any component of theta/m/v is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        if self.theta.all_finite() && self.m.all_finite() && self.v.all_finite() {
            Ok(())
        } else {
            Err(Error::Divergence {
                step: self.step,
                detail: "state contains non-finite entries".into(),
            })
        }
    }
}

/// Source of loss and gradient values for an optimizer step.
///
/// `t` is the continuous time of the evaluation. Batch-bound oracles ignore it
/// (the batch is fixed per oracle); analytic oracles may use it. Implementations
/// bump their own gradient counter once per `loss_and_grad` call and must be
/// deterministic given (t, theta).
pub trait LossOracle {
    fn loss_and_grad(&mut self, t: f64, theta: &ParamVector) -> Result<(f64, ParamVector)>;

    /// Cumulative number of `loss_and_grad` calls served by this oracle.
    fn grad_evals(&self) -> u64;
}

/// Loss with gradient `lambda * theta` (elementwise), i.e. L = lambda/2 * |theta|^2.
/// The linear test problem used for stability and convergence studies.
#[derive(Debug, Clone)]
pub struct LinearGradientLoss {
    pub lambda: f64,
    evals: u64,
}

impl LinearGradientLoss {
    pub fn new(lambda: f64) -> Self {
        Self { lambda, evals: 0 }
    }
}

impl LossOracle for LinearGradientLoss {
    fn loss_and_grad(&mut self, _t: f64, theta: &ParamVector) -> Result<(f64, ParamVector)> {
        self.evals += 1;
        let loss = 0.5 * self.lambda * theta.iter().map(|x| x * x).sum::<f64>();
        let grad = ParamVector(theta.iter().map(|x| self.lambda * x).collect());
        Ok((loss, grad))
    }

    fn grad_evals(&self) -> u64 {
        self.evals
    }
}

/// Diagonal quadratic loss L = 1/2 sum curv_i theta_i^2 + sum lin_i theta_i,
/// so grad_i = curv_i theta_i + lin_i.
#[derive(Debug, Clone)]
pub struct DiagQuadraticLoss {
    pub curv: Vec<f64>,
    pub lin: Vec<f64>,
    evals: u64,
}

impl DiagQuadraticLoss {
    pub fn new(curv: Vec<f64>, lin: Vec<f64>) -> Result<Self> {
        if curv.len() != lin.len() {
            return Err(Error::Dimension(format!(
                "curvature length {} != linear-term length {}",
                curv.len(),
                lin.len()
            )));
        }
        Ok(Self { curv, lin, evals: 0 })
    }

    /// Pure quadratic L = 1/2 sum curv_i theta_i^2.
    pub fn homogeneous(curv: Vec<f64>) -> Self {
        let lin = vec![0.0; curv.len()];
        Self { curv, lin, evals: 0 }
    }
}

impl LossOracle for DiagQuadraticLoss {
    fn loss_and_grad(&mut self, _t: f64, theta: &ParamVector) -> Result<(f64, ParamVector)> {
        if theta.len() != self.curv.len() {
            return Err(Error::Dimension(format!(
                "oracle dimension {} != parameter dimension {}",
                self.curv.len(),
                theta.len()
            )));
        }
        self.evals += 1;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(theta.len());
        for i in 0..theta.len() {
            loss += 0.5 * self.curv[i] * theta[i] * theta[i] + self.lin[i] * theta[i];
            grad.push(self.curv[i] * theta[i] + self.lin[i]);
        }
        Ok((loss, ParamVector(grad)))
    }

    fn grad_evals(&self) -> u64 {
        self.evals
    }
}
