//! Optimizer hyperparameters and the maps between discrete (h, beta1, beta2)
//! and the continuous-time rate coefficients (d, r, p, q) of the Adam ODE.
//!
//! Two maps coexist and callers must pick one explicitly:
//!
//! * [`rates_from_betas`] / [`betas_from_rates`] — the exact exponential pair
//!   `rate = -ln(beta)/h`, `beta = exp(-h * rate)`. ODE-derived methods use this.
//! * [`first_order_beta_map`] / [`first_order_rates`] — the truncation
//!   `beta = 1 - h * rate`. Under this map the IMEX Euler discretization
//!   reproduces discrete Adam exactly.
//!
//! The two agree to second order in h.

use crate::error::{Error, Result};

/// Library-wide default for the numerical-stability floor under square roots.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Discrete optimizer hyperparameters: step size h, moment decays beta1/beta2,
/// stability floor epsilon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub h: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl HyperParams {
    /// Requires 0 < h, 0 <= beta_i < 1, epsilon > 0, all finite.
    pub fn new(h: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Domain(format!("step size h must be positive, got {h}")));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(b.is_finite() && (0.0..1.0).contains(&b)) {
                return Err(Error::Domain(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { h, beta1, beta2, epsilon })
    }

    /// Same betas and epsilon with a different step size (used by lr schedules).
    pub fn with_h(&self, h: f64) -> Result<Self> {
        Self::new(h, self.beta1, self.beta2, self.epsilon)
    }
}

/// Continuous-time coefficients of the Adam ODE
///
/// ```text
/// dm/dt = d * grad L - r * m
/// dv/dt = p * (grad L)^2 - q * v
/// dtheta/dt = -m / sqrt(v + epsilon)
/// ```
///
/// Adam-derived rates always satisfy d = r and p = q.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeRates {
    pub d: f64,
    pub r: f64,
    pub p: f64,
    pub q: f64,
    pub epsilon: f64,
}

impl OdeRates {
    /// Requires finite nonnegative rates and epsilon > 0.
    pub fn new(d: f64, r: f64, p: f64, q: f64, epsilon: f64) -> Result<Self> {
        for (name, x) in [("d", d), ("r", r), ("p", p), ("q", q)] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::Domain(format!(
                    "rate {name} must be finite and nonnegative, got {x}"
                )));
            }
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { d, r, p, q, epsilon })
    }
}

/// Exact exponential map: d = r = -ln(beta1)/h, p = q = -ln(beta2)/h.
///
/// Rejects beta = 0 (the rate would be infinite).
pub fn rates_from_betas(hp: &HyperParams) -> Result<OdeRates> {
    for (name, b) in [("beta1", hp.beta1), ("beta2", hp.beta2)] {
        if b <= 0.0 || b >= 1.0 {
            return Err(Error::Domain(format!(
                "{name} must lie in (0, 1) for the exponential rate map, got {b}"
            )));
        }
    }
    let r = -hp.beta1.ln() / hp.h;
    let q = -hp.beta2.ln() / hp.h;
    OdeRates::new(r, r, q, q, hp.epsilon)
}

/// Inverse of [`rates_from_betas`]: beta1 = exp(-h r), beta2 = exp(-h q).
///
/// A zero rate maps to beta = 1, which `HyperParams::new` rejects downstream.
pub fn betas_from_rates(h: f64, rates: &OdeRates) -> Result<(f64, f64)> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Domain(format!("step size h must be positive, got {h}")));
    }
    Ok(((-h * rates.r).exp(), (-h * rates.q).exp()))
}

/// First-order truncation of the exponential map: beta1 = 1 - h r, beta2 = 1 - h q.
///
/// This is the identification under which IMEX Euler reproduces discrete Adam
/// exactly. Requires h r < 1 and h q < 1 so the betas stay inside [0, 1).
pub fn first_order_beta_map(h: f64, rates: &OdeRates) -> Result<(f64, f64)> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Domain(format!("step size h must be positive, got {h}")));
    }
    if h * rates.r >= 1.0 || h * rates.q >= 1.0 {
        return Err(Error::Domain(format!(
            "first-order map needs h*r < 1 and h*q < 1, got h*r = {}, h*q = {}",
            h * rates.r,
            h * rates.q
        )));
    }
    Ok((1.0 - h * rates.r, 1.0 - h * rates.q))
}

/// Inverse of [`first_order_beta_map`]: d = r = (1 - beta1)/h, p = q = (1 - beta2)/h.
pub fn first_order_rates(hp: &HyperParams) -> Result<OdeRates> {
    let r = (1.0 - hp.beta1) / hp.h;
    let q = (1.0 - hp.beta2) / hp.h;
    OdeRates::new(r, r, q, q, hp.epsilon)
}
