//! Stochastic optimizers as time discretizations of the Adam ODE.
//!
//! The continuous system
//!
//! ```text
//! dtheta/dt = -m / sqrt(v + eps)
//! dm/dt     = d * grad L(t, theta) - r * m
//! dv/dt     = p * grad L(t, theta)^2 - q * v
//! ```
//!
//! admits the classical Adam update as its one-step IMEX Euler discretization,
//! and any two-way partitioned GARK tableau yields a new optimizer of the same
//! family. This crate provides:
//!
//! * [`params`] — hyperparameters and the beta <-> rate maps.
//! * [`state`] — flat parameter vectors, optimizer state, loss oracles.
//! * [`gark`] — GARK tableaus: validation, order conditions, builtins, file I/O.
//! * [`optim`] — the step rules (SGD, FE, Adam, IMEX trapezoidal, generic GARK,
//!   explicit RK), learning-rate schedules, and the training loop.
//! * [`stability`] — linearized stability matrices, closed-form eigenvalues,
//!   spectral radii, and region scans.
//! * [`nn`] — a small feedforward network with reverse-mode gradients.
//! * [`datasets`] — Lorenz '63, Gauss3, and two-spiral generators plus batching.
//! * [`cli`] — the command-line front end (`train`, `stability`,
//!   `tableau-check`).

pub mod cli;
pub mod datasets;
pub mod error;
pub mod gark;
pub mod nn;
pub mod optim;
pub mod params;
pub mod stability;
pub mod state;

pub use error::{Error, Result};
pub use gark::GarkTableau;
pub use params::{HyperParams, OdeRates, DEFAULT_EPSILON};
pub use state::{LossOracle, OptimizerState, ParamVector};
