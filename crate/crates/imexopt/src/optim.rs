//! Discrete step rules and the training loop.
//!
//! Every optimizer here is a time discretization of the Adam ODE
//!
//! ```text
//! dtheta/dt = -m / sqrt(v + eps)
//! dm/dt     = d * g(t, theta) - r * m
//! dv/dt     = p * g(t, theta)^2 - q * v
//! ```
//!
//! * [`fe_step`] — forward Euler on the full ODE.
//! * [`adam_step`] — the classical discrete update (no bias correction).
//! * [`imex_trapezoidal_step`] — the two-stage implicit/explicit trapezoidal
//!   scheme written out as explicit slope updates.
//! * [`gark_step`] — the generic partitioned engine driven by a
//!   [`GarkTableau`]; with the IMEX Euler tableau and the first-order beta map
//!   it reproduces [`adam_step`] and with the trapezoidal tableau it
//!   reproduces [`imex_trapezoidal_step`].
//! * [`explicit_rk_step`] — classical explicit Runge-Kutta applied to the
//!   coupled (theta, m, v) system.
//! * [`sgd_step`] — plain gradient descent baseline.
//!
//! Division and square root are elementwise, and the denominator is always
//! `sqrt(v + eps)`: the form the ODE itself uses. A nonpositive radicand is a
//! `Divergence` error, never clamped -- instability must stay observable.
//!
//! Step functions take the state by reference and return the successor state;
//! they mutate nothing else. The gradient counter increases by exactly the
//! number of oracle calls the scheme makes: 1 for sgd/fe/adam, 2 for the
//! trapezoidal scheme, `s_explicit` for a GARK tableau, and the stage count
//! for explicit RK.

use crate::error::{Error, Result};
use crate::gark::{imex_euler, validate_tableau, GarkTableau};
use crate::nn::{Batch, BatchOracle, LossKind, Mlp};
use crate::params::{rates_from_betas, HyperParams, OdeRates};
use crate::state::{LossOracle, OptimizerState, ParamVector};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Initializes the discrete state at (t0, theta0): zero momentum, velocity set
/// to the square of the initial gradient. Costs one gradient evaluation.
pub fn init_state(
    theta0: ParamVector,
    oracle: &mut dyn LossOracle,
    t0: f64,
) -> Result<OptimizerState> {
    let (_, g0) = fetch_grad(oracle, t0, &theta0, 0)?;
    let v: Vec<f64> = g0.iter().map(|g| g * g).collect();
    let dim = theta0.len();
    Ok(OptimizerState {
        theta: theta0,
        m: ParamVector::zeros(dim),
        v: ParamVector::from_vec(v),
        t: t0,
        step: 0,
        grad_evals: 1,
    })
}

fn fetch_grad(
    oracle: &mut dyn LossOracle,
    t: f64,
    theta: &ParamVector,
    step: u64,
) -> Result<(f64, ParamVector)> {
    let (loss, grad) = oracle.loss_and_grad(t, theta)?;
    if grad.len() != theta.len() {
        return Err(Error::Dimension(format!(
            "gradient length {} != parameter length {}",
            grad.len(),
            theta.len()
        )));
    }
    if !grad.all_finite() {
        return Err(Error::NonFiniteGradient(format!("at step {step}")));
    }
    Ok((loss, grad))
}

/// Elementwise -m / sqrt(v + eps); a radicand <= 0 raises Divergence.
fn theta_slope(m: &[f64], v: &[f64], eps: f64, step: u64) -> Result<Vec<f64>> {
    m.iter()
        .zip(v)
        .map(|(&mi, &vi)| {
            let radicand = vi + eps;
            if radicand <= 0.0 {
                Err(Error::Divergence {
                    step,
                    detail: format!("radicand v + eps = {radicand} under square root"),
                })
            } else {
                Ok(-mi / radicand.sqrt())
            }
        })
        .collect()
}

fn finished(mut next: OptimizerState, evals: u64) -> Result<OptimizerState> {
    next.step += 1;
    next.grad_evals += evals;
    next.check_finite()?;
    Ok(next)
}

/// Plain stochastic gradient descent: theta' = theta - h g(t_{n+1}, theta_n).
/// Momentum and velocity pass through untouched.
pub fn sgd_step(
    state: &OptimizerState,
    oracle: &mut dyn LossOracle,
    h: f64,
) -> Result<OptimizerState> {
    let (_, g) = fetch_grad(oracle, state.t + h, &state.theta, state.step)?;
    let theta: Vec<f64> = state.theta.iter().zip(g.iter()).map(|(t, gi)| t - h * gi).collect();
    finished(
        OptimizerState {
            theta: ParamVector::from_vec(theta),
            m: state.m.clone(),
            v: state.v.clone(),
            t: state.t + h,
            step: state.step,
            grad_evals: state.grad_evals,
        },
        1,
    )
}

/// Forward Euler discretization of the full Adam ODE, slopes evaluated at
/// (t_n, theta_n):
///
/// ```text
/// theta' = theta - h m / sqrt(v + eps)
/// m'     = m (1 - h r) + h d g
/// v'     = v (1 - h q) + h p g^2
/// ```
pub fn fe_step(
    state: &OptimizerState,
    oracle: &mut dyn LossOracle,
    h: f64,
    rates: &OdeRates,
) -> Result<OptimizerState> {
    let (_, g) = fetch_grad(oracle, state.t, &state.theta, state.step)?;
    let k_theta = theta_slope(&state.m, &state.v, rates.epsilon, state.step)?;
    let n = state.dim();
    let mut theta = Vec::with_capacity(n);
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        theta.push(state.theta[i] + h * k_theta[i]);
        m.push(state.m[i] + h * (rates.d * g[i] - rates.r * state.m[i]));
        v.push(state.v[i] + h * (rates.p * g[i] * g[i] - rates.q * state.v[i]));
    }
    finished(
        OptimizerState {
            theta: ParamVector::from_vec(theta),
            m: ParamVector::from_vec(m),
            v: ParamVector::from_vec(v),
            t: state.t + h,
            step: state.step,
            grad_evals: state.grad_evals,
        },
        1,
    )
}

/// The classical discrete update, gradient at (t_{n+1}, theta_n), without bias
/// correction:
///
/// ```text
/// m' = beta1 m + (1 - beta1) g
/// v' = beta2 v + (1 - beta2) g^2
/// theta' = theta - h m' / sqrt(v' + eps)
/// ```
pub fn adam_step(
    state: &OptimizerState,
    oracle: &mut dyn LossOracle,
    hp: &HyperParams,
) -> Result<OptimizerState> {
    let (_, g) = fetch_grad(oracle, state.t + hp.h, &state.theta, state.step)?;
    let n = state.dim();
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        m.push(hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g[i]);
        v.push(hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g[i] * g[i]);
    }
    let k_theta = theta_slope(&m, &v, hp.epsilon, state.step)?;
    let theta: Vec<f64> =
        state.theta.iter().zip(&k_theta).map(|(t, k)| t + hp.h * k).collect();
    finished(
        OptimizerState {
            theta: ParamVector::from_vec(theta),
            m: ParamVector::from_vec(m),
            v: ParamVector::from_vec(v),
            t: state.t + hp.h,
            step: state.step,
            grad_evals: state.grad_evals,
        },
        1,
    )
}

/// Two-stage IMEX trapezoidal scheme with rates taken from the exponential
/// map 1/alpha_i = -ln(beta_i)/h. Both stage gradients are evaluated at
/// t_{n+1} (the step's batch); costs exactly two gradient evaluations.
pub fn imex_trapezoidal_step(
    state: &OptimizerState,
    oracle: &mut dyn LossOracle,
    hp: &HyperParams,
) -> Result<OptimizerState> {
    let rates = rates_from_betas(hp)?;
    let inv_a1 = rates.r;
    let inv_a2 = rates.q;
    let (h, eps) = (hp.h, hp.epsilon);
    let n = state.dim();
    let t_next = state.t + h;

    let (_, g1) = fetch_grad(oracle, t_next, &state.theta, state.step)?;
    let k1_m: Vec<f64> =
        g1.iter().zip(state.m.iter()).map(|(g, m)| inv_a1 * (g - m)).collect();
    let k1_v: Vec<f64> =
        g1.iter().zip(state.v.iter()).map(|(g, v)| inv_a2 * (g * g - v)).collect();
    let k1_theta = theta_slope(&state.m, &state.v, eps, state.step)?;

    let theta_stage: Vec<f64> =
        state.theta.iter().zip(&k1_theta).map(|(t, k)| t + h * k).collect();
    let (_, g2) =
        fetch_grad(oracle, t_next, &ParamVector::from_vec(theta_stage), state.step)?;

    let mut k2_m = Vec::with_capacity(n);
    let mut k2_v = Vec::with_capacity(n);
    for i in 0..n {
        k2_m.push(inv_a1 * (g2[i] - (state.m[i] + h * k1_m[i])));
        k2_v.push(inv_a2 * (g2[i] * g2[i] - (state.v[i] + h * k1_v[i])));
    }
    let m_mid: Vec<f64> =
        (0..n).map(|i| state.m[i] + 0.5 * h * k1_m[i] + 0.5 * h * k2_m[i]).collect();
    let v_mid: Vec<f64> =
        (0..n).map(|i| state.v[i] + 0.5 * h * k1_v[i] + 0.5 * h * k2_v[i]).collect();
    let k2_theta = theta_slope(&m_mid, &v_mid, eps, state.step)?;

    let mut theta = Vec::with_capacity(n);
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        theta.push(state.theta[i] + 0.5 * h * k1_theta[i] + 0.5 * h * k2_theta[i]);
        m.push(state.m[i] + 0.5 * h * k1_m[i] + 0.5 * h * k2_m[i]);
        v.push(state.v[i] + 0.5 * h * k1_v[i] + 0.5 * h * k2_v[i]);
    }
    finished(
        OptimizerState {
            theta: ParamVector::from_vec(theta),
            m: ParamVector::from_vec(m),
            v: ParamVector::from_vec(v),
            t: t_next,
            step: state.step,
            grad_evals: state.grad_evals,
        },
        2,
    )
}

/// Per-stage slopes and stage values of one GARK step. Contents are only
/// meaningful within the step that filled them.
#[derive(Debug, Clone, Default)]
pub struct StageWorkspace {
    /// Momentum slopes d g - r m at the explicit stages.
    pub k_m: Vec<ParamVector>,
    /// Velocity slopes p g^2 - q v at the explicit stages.
    pub k_v: Vec<ParamVector>,
    /// Parameter slopes -m_I / sqrt(v_I + eps) at the implicit stages.
    pub k_theta: Vec<ParamVector>,
    pub m_explicit: Vec<ParamVector>,
    pub v_explicit: Vec<ParamVector>,
    pub theta_explicit: Vec<ParamVector>,
    pub m_implicit: Vec<ParamVector>,
    pub v_implicit: Vec<ParamVector>,
}

/// One step of the generic partitioned GARK engine.
///
/// The stiff right-hand side (the theta equation) never depends on theta
/// itself, so each stage resolves by substitution and no algebraic solve
/// happens. Gradients are evaluated only at the explicit stage values
/// (T_E_j, theta_E_j), so the counter advances by `s_explicit`.
pub fn gark_step(
    state: &OptimizerState,
    oracle: &mut dyn LossOracle,
    h: f64,
    rates: &OdeRates,
    tableau: &GarkTableau,
) -> Result<OptimizerState> {
    let violations = validate_tableau(tableau);
    if !violations.is_empty() {
        return Err(Error::InvalidTableau(violations));
    }
    state.check_finite()?;

    let s_e = tableau.s_explicit();
    let s_i = tableau.s_implicit();
    let n = state.dim();
    let c_e = tableau.c_explicit();
    let mut ws = StageWorkspace::default();

    for stage in 0..s_e.max(s_i) {
        if stage < s_e {
            // Explicit stage values from the slopes of earlier explicit
            // stages (A_EE) and earlier implicit theta-slopes (A_EI).
            let mut m_e = state.m.0.clone();
            let mut v_e = state.v.0.clone();
            for j in 0..stage.min(ws.k_m.len()) {
                let a = tableau.a_ee()[stage][j];
                if a != 0.0 {
                    for i in 0..n {
                        m_e[i] += h * a * ws.k_m[j][i];
                        v_e[i] += h * a * ws.k_v[j][i];
                    }
                }
            }
            let mut theta_e = state.theta.0.clone();
            for j in 0..stage.min(ws.k_theta.len()) {
                let a = tableau.a_ei()[stage][j];
                if a != 0.0 {
                    for i in 0..n {
                        theta_e[i] += h * a * ws.k_theta[j][i];
                    }
                }
            }
            let theta_e = ParamVector::from_vec(theta_e);
            let t_stage = state.t + c_e[stage] * h;
            let (_, g) = fetch_grad(oracle, t_stage, &theta_e, state.step)?;
            let mut k_m = Vec::with_capacity(n);
            let mut k_v = Vec::with_capacity(n);
            for i in 0..n {
                k_m.push(rates.d * g[i] - rates.r * m_e[i]);
                k_v.push(rates.p * g[i] * g[i] - rates.q * v_e[i]);
            }
            ws.m_explicit.push(ParamVector::from_vec(m_e));
            ws.v_explicit.push(ParamVector::from_vec(v_e));
            ws.theta_explicit.push(theta_e);
            ws.k_m.push(ParamVector::from_vec(k_m));
            ws.k_v.push(ParamVector::from_vec(k_v));
        }

        if stage < s_i {
            // Implicit stage values of (m, v) from the explicit slopes via
            // A_IE (diagonal entry included; the slope for the current stage
            // was just produced above).
            let mut m_i = state.m.0.clone();
            let mut v_i = state.v.0.clone();
            for j in 0..(stage + 1).min(ws.k_m.len()) {
                let a = tableau.a_ie()[stage][j];
                if a != 0.0 {
                    for i in 0..n {
                        m_i[i] += h * a * ws.k_m[j][i];
                        v_i[i] += h * a * ws.k_v[j][i];
                    }
                }
            }
            let k_theta = theta_slope(&m_i, &v_i, rates.epsilon, state.step)?;
            ws.m_implicit.push(ParamVector::from_vec(m_i));
            ws.v_implicit.push(ParamVector::from_vec(v_i));
            ws.k_theta.push(ParamVector::from_vec(k_theta));
        }
    }

    let mut theta = state.theta.0.clone();
    let mut m = state.m.0.clone();
    let mut v = state.v.0.clone();
    for (j, b) in tableau.b_e().iter().enumerate() {
        if *b != 0.0 {
            for i in 0..n {
                m[i] += h * b * ws.k_m[j][i];
                v[i] += h * b * ws.k_v[j][i];
            }
        }
    }
    for (j, b) in tableau.b_i().iter().enumerate() {
        if *b != 0.0 {
            for i in 0..n {
                theta[i] += h * b * ws.k_theta[j][i];
            }
        }
    }

    finished(
        OptimizerState {
            theta: ParamVector::from_vec(theta),
            m: ParamVector::from_vec(m),
            v: ParamVector::from_vec(v),
            t: state.t + h,
            step: state.step,
            grad_evals: state.grad_evals,
        },
        s_e as u64,
    )
}

/// Classical explicit Runge-Kutta tableau (strictly lower triangular A).
#[derive(Debug, Clone, PartialEq)]
pub struct RkTableau {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl RkTableau {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let s = b.len();
        if a.len() != s || a.iter().any(|row| row.len() != s) {
            return Err(Error::Dimension(format!("A must be {s}x{s} to match b")));
        }
        let mut violations = Vec::new();
        for (i, row) in a.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                if j >= i && x != 0.0 {
                    violations.push(format!("A[{i}][{j}] = {x} must be 0 (explicit method)"));
                }
            }
        }
        if !violations.is_empty() {
            return Err(Error::InvalidTableau(violations));
        }
        Ok(Self { a, b })
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn c(&self) -> Vec<f64> {
        self.a.iter().map(|row| row.iter().sum()).collect()
    }

    /// Forward Euler as a one-stage tableau.
    pub fn fe() -> Self {
        Self::new(vec![vec![0.0]], vec![1.0]).unwrap()
    }

    /// Heun's second-order method.
    pub fn heun() -> Self {
        Self::new(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![0.5, 0.5]).unwrap()
    }

    /// Shu-Osher third-order strong-stability-preserving method.
    pub fn ssprk3() -> Self {
        Self::new(
            vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.25, 0.25, 0.0]],
            vec![1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
        )
        .unwrap()
    }

    /// The classical fourth-order method.
    pub fn rk4() -> Self {
        Self::new(
            vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0, 0.0],
                vec![0.0, 0.5, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
            ],
            vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        )
        .unwrap()
    }
}

/// Classical explicit RK applied to the coupled (theta, m, v) system. The
/// gradient is evaluated at every stage's theta value, so the counter
/// advances by the stage count.
pub fn explicit_rk_step(
    state: &OptimizerState,
    oracle: &mut dyn LossOracle,
    h: f64,
    rates: &OdeRates,
    rk: &RkTableau,
) -> Result<OptimizerState> {
    state.check_finite()?;
    let s = rk.stages();
    let n = state.dim();
    let c = rk.c();

    // Slopes per stage for each of the three state blocks.
    let mut k_theta: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut k_m: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut k_v: Vec<Vec<f64>> = Vec::with_capacity(s);

    for stage in 0..s {
        let mut theta_s = state.theta.0.clone();
        let mut m_s = state.m.0.clone();
        let mut v_s = state.v.0.clone();
        for j in 0..stage {
            let a = rk.a[stage][j];
            if a != 0.0 {
                for i in 0..n {
                    theta_s[i] += h * a * k_theta[j][i];
                    m_s[i] += h * a * k_m[j][i];
                    v_s[i] += h * a * k_v[j][i];
                }
            }
        }
        let theta_s = ParamVector::from_vec(theta_s);
        let (_, g) = fetch_grad(oracle, state.t + c[stage] * h, &theta_s, state.step)?;
        k_theta.push(theta_slope(&m_s, &v_s, rates.epsilon, state.step)?);
        let mut km = Vec::with_capacity(n);
        let mut kv = Vec::with_capacity(n);
        for i in 0..n {
            km.push(rates.d * g[i] - rates.r * m_s[i]);
            kv.push(rates.p * g[i] * g[i] - rates.q * v_s[i]);
        }
        k_m.push(km);
        k_v.push(kv);
    }

    let mut theta = state.theta.0.clone();
    let mut m = state.m.0.clone();
    let mut v = state.v.0.clone();
    for (j, b) in rk.b.iter().enumerate() {
        if *b != 0.0 {
            for i in 0..n {
                theta[i] += h * (b * k_theta[j][i]);
                m[i] += h * (b * k_m[j][i]);
                v[i] += h * (b * k_v[j][i]);
            }
        }
    }

    finished(
        OptimizerState {
            theta: ParamVector::from_vec(theta),
            m: ParamVector::from_vec(m),
            v: ParamVector::from_vec(v),
            t: state.t + h,
            step: state.step,
            grad_evals: state.grad_evals,
        },
        s as u64,
    )
}

/// Learning-rate schedule over epochs.
#[derive(Debug, Clone, PartialEq)]
pub enum LrSchedule {
    Constant { base_lr: f64 },
    /// Linear ramp base -> max over the first half of each period, then
    /// max -> base over the second half.
    CyclicTriangular { base_lr: f64, max_lr: f64, period: u64 },
}

impl LrSchedule {
    pub fn constant(base_lr: f64) -> Result<Self> {
        if !(base_lr.is_finite() && base_lr > 0.0) {
            return Err(Error::Domain(format!("base_lr must be positive, got {base_lr}")));
        }
        Ok(LrSchedule::Constant { base_lr })
    }

    pub fn cyclic(base_lr: f64, max_lr: f64, period: u64) -> Result<Self> {
        if !(base_lr.is_finite() && base_lr > 0.0 && max_lr.is_finite()) {
            return Err(Error::Domain("cyclic schedule needs positive finite rates".into()));
        }
        if base_lr > max_lr {
            return Err(Error::Domain(format!("base_lr {base_lr} exceeds max_lr {max_lr}")));
        }
        if period < 2 {
            return Err(Error::Domain(format!("period must be at least 2, got {period}")));
        }
        Ok(LrSchedule::CyclicTriangular { base_lr, max_lr, period })
    }
}

/// Learning rate for the given (0-based) epoch.
pub fn schedule_lr(schedule: &LrSchedule, epoch: u64) -> f64 {
    match *schedule {
        LrSchedule::Constant { base_lr } => base_lr,
        LrSchedule::CyclicTriangular { base_lr, max_lr, period } => {
            let phase = (epoch % period) as f64;
            let half = period as f64 / 2.0;
            if phase <= half {
                let frac = phase / half;
                base_lr * (1.0 - frac) + max_lr * frac
            } else {
                let frac = (phase - half) / half;
                max_lr * (1.0 - frac) + base_lr * frac
            }
        }
    }
}

/// A training method selectable by the harness.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Sgd,
    Fe,
    Adam,
    ImexEuler,
    ImexTrapezoidal,
    Heun,
    Ssprk3,
    Rk4,
    /// Any custom GARK tableau.
    Gark(GarkTableau),
}

impl Method {
    /// Gradient evaluations consumed by a single step of this method.
    pub fn grad_evals_per_step(&self) -> u64 {
        match self {
            Method::Sgd | Method::Fe | Method::Adam | Method::ImexEuler => 1,
            Method::ImexTrapezoidal | Method::Heun => 2,
            Method::Ssprk3 => 3,
            Method::Rk4 => 4,
            Method::Gark(t) => t.s_explicit() as u64,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Method::Sgd => "sgd".into(),
            Method::Fe => "fe".into(),
            Method::Adam => "adam".into(),
            Method::ImexEuler => "imex-euler".into(),
            Method::ImexTrapezoidal => "imex-trapezoidal".into(),
            Method::Heun => "heun".into(),
            Method::Ssprk3 => "ssprk3".into(),
            Method::Rk4 => "rk4".into(),
            Method::Gark(t) => format!("gark({}x{})", t.s_explicit(), t.s_implicit()),
        }
    }
}

/// Applies one step of `method` with the epoch's hyperparameters.
/// ODE-derived methods take their rates from the exponential beta map.
pub fn method_step(
    method: &Method,
    state: &OptimizerState,
    oracle: &mut dyn LossOracle,
    hp: &HyperParams,
) -> Result<OptimizerState> {
    match method {
        Method::Sgd => sgd_step(state, oracle, hp.h),
        Method::Adam => adam_step(state, oracle, hp),
        Method::ImexTrapezoidal => imex_trapezoidal_step(state, oracle, hp),
        Method::Fe => fe_step(state, oracle, hp.h, &rates_from_betas(hp)?),
        Method::ImexEuler => {
            gark_step(state, oracle, hp.h, &rates_from_betas(hp)?, &imex_euler())
        }
        Method::Heun => explicit_rk_step(state, oracle, hp.h, &rates_from_betas(hp)?, &RkTableau::heun()),
        Method::Ssprk3 => {
            explicit_rk_step(state, oracle, hp.h, &rates_from_betas(hp)?, &RkTableau::ssprk3())
        }
        Method::Rk4 => explicit_rk_step(state, oracle, hp.h, &rates_from_betas(hp)?, &RkTableau::rk4()),
        Method::Gark(t) => gark_step(state, oracle, hp.h, &rates_from_betas(hp)?, t),
    }
}

/// Training configuration for [`train_loop`].
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub method: Method,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: u64,
    pub batches: usize,
    pub loss_kind: LossKind,
    /// Seed for the per-epoch batch shuffles (model init is seeded separately).
    pub shuffle_seed: u64,
}

/// One trajectory sample: losses after `epoch` epochs together with the
/// cumulative gradient-evaluation budget spent to get there.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub grad_evals: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceInfo {
    pub step: u64,
    pub epoch: u64,
    pub grad_evals: u64,
    pub detail: String,
}

/// Outcome of a training run. Divergence is data, not failure: the records up
/// to the failing epoch are kept and the divergence is reported alongside,
/// with the step index at which it occurred.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub records: Vec<EpochRecord>,
    pub diverged: Option<DivergenceInfo>,
}

/// Runs `epochs` x `batches` optimizer steps. Each step consumes one batch
/// oracle; the loss is recorded once per epoch on the full training set (and
/// on `test` when given) without touching the gradient counter. Batches are
/// reshuffled every epoch from an epoch-derived seed; identical settings and
/// seeds give bit-identical trajectories.
pub fn train_loop(
    settings: &TrainSettings,
    mlp: &Mlp,
    train: &Batch,
    test: Option<&Batch>,
) -> Result<TrainRun> {
    if settings.batches == 0 || settings.batches > train.len() {
        return Err(Error::Dimension(format!(
            "batch count {} invalid for {} samples",
            settings.batches,
            train.len()
        )));
    }
    let hp0 = HyperParams::new(
        schedule_lr(&settings.schedule, 0),
        settings.beta1,
        settings.beta2,
        settings.epsilon,
    )?;

    let mut full_oracle = BatchOracle::new(mlp, train, settings.loss_kind);
    let mut state = init_state(mlp.params().clone(), &mut full_oracle, 0.0)?;

    let mut records = Vec::with_capacity(settings.epochs as usize + 1);
    let record_losses = |state: &OptimizerState| -> Result<(f64, Option<f64>)> {
        let train_loss = mlp.loss_at(&state.theta, train, settings.loss_kind)?;
        let test_loss = match test {
            Some(batch) => Some(mlp.loss_at(&state.theta, batch, settings.loss_kind)?),
            None => None,
        };
        Ok((train_loss, test_loss))
    };

    let (train_loss, test_loss) = record_losses(&state)?;
    records.push(EpochRecord {
        epoch: 0,
        grad_evals: state.grad_evals,
        lr: hp0.h,
        train_loss,
        test_loss,
    });

    for epoch in 0..settings.epochs {
        let lr = schedule_lr(&settings.schedule, epoch);
        let hp = hp0.with_h(lr)?;

        let mut rng = ChaCha8Rng::seed_from_u64(settings.shuffle_seed);
        rng.set_stream(epoch + 1);
        let batches = crate::datasets::make_batches_with_rng(train, settings.batches, &mut rng, true)?;

        let mut diverged: Option<DivergenceInfo> = None;
        for batch in &batches {
            let mut oracle = BatchOracle::new(mlp, batch, settings.loss_kind);
            match method_step(&settings.method, &state, &mut oracle, &hp) {
                Ok(next) => state = next,
                Err(Error::Divergence { step, detail }) => {
                    diverged = Some(DivergenceInfo {
                        step,
                        epoch: epoch + 1,
                        grad_evals: state.grad_evals,
                        detail,
                    });
                    break;
                }
                Err(Error::NonFiniteGradient(detail)) => {
                    diverged = Some(DivergenceInfo {
                        step: state.step,
                        epoch: epoch + 1,
                        grad_evals: state.grad_evals,
                        detail,
                    });
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(info) = diverged {
            return Ok(TrainRun { records, diverged: Some(info) });
        }

        let (train_loss, test_loss) = record_losses(&state)?;
        if !train_loss.is_finite() {
            return Ok(TrainRun {
                records,
                diverged: Some(DivergenceInfo {
                    step: state.step,
                    epoch: epoch + 1,
                    grad_evals: state.grad_evals,
                    detail: "non-finite training loss".into(),
                }),
            });
        }
        records.push(EpochRecord {
            epoch: epoch + 1,
            grad_evals: state.grad_evals,
            lr,
            train_loss,
            test_loss,
        });
    }

    Ok(TrainRun { records, diverged: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::DEFAULT_EPSILON;
    use crate::state::{DiagQuadraticLoss, LinearGradientLoss};

    fn hp(h: f64, b1: f64, b2: f64) -> HyperParams {
        HyperParams::new(h, b1, b2, DEFAULT_EPSILON).unwrap()
    }

    fn scalar_state(theta: f64, m: f64, v: f64) -> OptimizerState {
        OptimizerState {
            theta: ParamVector::from_vec(vec![theta]),
            m: ParamVector::from_vec(vec![m]),
            v: ParamVector::from_vec(vec![v]),
            t: 0.0,
            step: 0,
            grad_evals: 0,
        }
    }

    /// grad ≡ 0 regardless of theta.
    fn zero_loss(dim: usize) -> DiagQuadraticLoss {
        DiagQuadraticLoss::homogeneous(vec![0.0; dim])
    }

    fn assert_close_rel(a: &[f64], b: &[f64], rtol: f64) {
        assert_eq!(a.len(), b.len());
        for i in 0..a.len() {
            let diff = (a[i] - b[i]).abs();
            let scale = a[i].abs().max(b[i].abs());
            assert!(diff <= 1e-15 + rtol * scale, "index {i}: {} vs {}", a[i], b[i]);
        }
    }

    #[test]
    fn init_squares_the_initial_gradient() {
        // grad at theta0 = 0 is the linear term (2, -3).
        let mut oracle = DiagQuadraticLoss::new(vec![0.0, 0.0], vec![2.0, -3.0]).unwrap();
        let state = init_state(ParamVector::zeros(2), &mut oracle, 0.0).unwrap();
        assert_eq!(state.m.0, vec![0.0, 0.0]);
        assert_eq!(state.v.0, vec![4.0, 9.0]);
        assert_eq!(state.grad_evals, 1);
        assert_eq!(state.step, 0);
        assert_eq!(oracle.grad_evals(), 1);
    }

    #[test]
    fn init_with_zero_gradient_keeps_sqrt_positive() {
        let mut oracle = zero_loss(2);
        let state = init_state(ParamVector::zeros(2), &mut oracle, 0.0).unwrap();
        assert_eq!(state.v.0, vec![0.0, 0.0]);
        assert!((state.v[0] + DEFAULT_EPSILON).sqrt() > 0.0);
    }

    #[test]
    fn sgd_on_scalar_quadratic() {
        // L = theta^2/2 so grad = theta: one step 1 -> 0.9, two steps -> 0.81.
        let mut oracle = DiagQuadraticLoss::homogeneous(vec![1.0]);
        let s0 = scalar_state(1.0, 0.0, 0.0);
        let s1 = sgd_step(&s0, &mut oracle, 0.1).unwrap();
        assert!((s1.theta[0] - 0.9).abs() < 1e-15);
        assert_eq!(s1.m.0, s0.m.0);
        assert_eq!(s1.v.0, s0.v.0);
        assert_eq!(s1.grad_evals, 1);
        let s2 = sgd_step(&s1, &mut oracle, 0.1).unwrap();
        assert!((s2.theta[0] - 0.81).abs() < 1e-15);
        assert_eq!(s2.grad_evals, 2);
    }

    #[test]
    fn sgd_zero_gradient_is_a_fixed_point() {
        let mut oracle = zero_loss(1);
        let s0 = scalar_state(0.7, 0.0, 0.0);
        let s1 = sgd_step(&s0, &mut oracle, 0.1).unwrap();
        assert_eq!(s1.theta[0], 0.7);
    }

    #[test]
    fn fe_hand_trace_at_nominal_betas() {
        // h = 0.1, beta1 = 0.9 via the exponential map: d = r = 1.0536051...;
        // from theta = 1, m = 0, v = 1 on L = theta^2/2 the slopes are
        // k_theta = 0, k_m = r * 1, so theta' = 1, m' = h * r.
        let rates = rates_from_betas(&hp(0.1, 0.9, 0.999)).unwrap();
        let mut oracle = DiagQuadraticLoss::homogeneous(vec![1.0]);
        let s0 = scalar_state(1.0, 0.0, 1.0);
        let s1 = fe_step(&s0, &mut oracle, 0.1, &rates).unwrap();
        assert!((s1.theta[0] - 1.0).abs() < 1e-15);
        assert!((s1.m[0] - 0.10536051565782628).abs() < 1e-14, "m = {}", s1.m[0]);
        assert!((s1.t - 0.1).abs() < 1e-15);
        assert_eq!(s1.grad_evals, 1);
        assert_eq!(s1.step, 1);
    }

    #[test]
    fn fe_origin_is_an_equilibrium() {
        let rates = OdeRates::new(1.0, 1.0, 1.0, 1.0, DEFAULT_EPSILON).unwrap();
        let mut oracle = zero_loss(2);
        let s0 = OptimizerState {
            theta: ParamVector::from_vec(vec![0.3, -0.4]),
            m: ParamVector::zeros(2),
            v: ParamVector::zeros(2),
            t: 0.0,
            step: 0,
            grad_evals: 0,
        };
        let s1 = fe_step(&s0, &mut oracle, 0.05, &rates).unwrap();
        assert_eq!(s1.theta.0, s0.theta.0);
        assert_eq!(s1.m.0, vec![0.0, 0.0]);
        assert_eq!(s1.v.0, vec![0.0, 0.0]);
        assert!((s1.t - 0.05).abs() < 1e-15);
    }

    #[test]
    fn fe_overshoot_in_v_raises_divergence_on_next_step() {
        // h q = 2 drives v from 1 to -1 in one step; the following step then
        // finds the radicand v + eps <= 0.
        let rates = OdeRates::new(0.0, 0.0, 0.0, 20.0, DEFAULT_EPSILON).unwrap();
        let mut oracle = zero_loss(1);
        let s0 = scalar_state(1.0, 0.0, 1.0);
        let s1 = fe_step(&s0, &mut oracle, 0.1, &rates).unwrap();
        assert!((s1.v[0] + 1.0).abs() < 1e-15, "v = {}", s1.v[0]);
        match fe_step(&s1, &mut oracle, 0.1, &rates) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn adam_hand_trace() {
        // theta = 1, m = 0, v = 1, h = 0.1, beta1 = 0.9, beta2 = 0.999 on
        // L = theta^2/2: m' = 0.1, v' = 1.0, theta' = 1 - 0.01/sqrt(1 + 1e-8).
        let mut oracle = DiagQuadraticLoss::homogeneous(vec![1.0]);
        let s0 = scalar_state(1.0, 0.0, 1.0);
        let s1 = adam_step(&s0, &mut oracle, &hp(0.1, 0.9, 0.999)).unwrap();
        assert!((s1.m[0] - 0.1).abs() < 1e-15);
        assert_eq!(s1.v[0], 1.0);
        let expected = 1.0 - 0.01 / (1.0f64 + 1e-8).sqrt();
        assert!((s1.theta[0] - expected).abs() < 1e-15);
        assert!((s1.theta[0] - 0.99).abs() < 1e-8);
        assert_eq!(s1.grad_evals, 1);
    }

    #[test]
    fn adam_zero_gradient_decays_velocity_only() {
        let mut oracle = zero_loss(1);
        let s0 = scalar_state(0.5, 0.0, 0.8);
        let s1 = adam_step(&s0, &mut oracle, &hp(0.1, 0.9, 0.999)).unwrap();
        assert_eq!(s1.theta[0], 0.5);
        assert!((s1.v[0] - 0.999 * 0.8).abs() < 1e-15);
        assert_eq!(s1.m[0], 0.0);
    }

    /// Logs every gradient an inner oracle serves.
    struct Recording<'a> {
        inner: &'a mut dyn LossOracle,
        gradients: Vec<Vec<f64>>,
    }

    impl LossOracle for Recording<'_> {
        fn loss_and_grad(&mut self, t: f64, theta: &ParamVector) -> Result<(f64, ParamVector)> {
            let (loss, grad) = self.inner.loss_and_grad(t, theta)?;
            self.gradients.push(grad.0.clone());
            Ok((loss, grad))
        }

        fn grad_evals(&self) -> u64 {
            self.inner.grad_evals()
        }
    }

    #[test]
    fn adam_momentum_is_the_exponential_gradient_sum() {
        // After n steps from m0 = 0 the momentum equals
        // (1 - beta1) * sum_{i=0}^{n-1} beta1^i g_{n-i}, accumulated
        // independently from the recorded gradients.
        let beta1 = 0.9;
        let hp = hp(0.05, beta1, 0.999);
        let mut inner = DiagQuadraticLoss::new(vec![2.0, 0.5], vec![0.3, -1.1]).unwrap();
        let mut oracle = Recording { inner: &mut inner, gradients: Vec::new() };
        let mut state = scalar_state(0.0, 0.0, 0.0);
        state.theta = ParamVector::from_vec(vec![1.0, -2.0]);
        state.m = ParamVector::zeros(2);
        state.v = ParamVector::zeros(2);

        let n = 40;
        for _ in 0..n {
            state = adam_step(&state, &mut oracle, &hp).unwrap();
        }

        for dim in 0..2 {
            let mut expected = 0.0;
            for i in 0..n {
                // g_{n-i} is the gradient served at step n-i, i.e. log index n-1-i.
                expected += beta1.powi(i as i32) * oracle.gradients[n - 1 - i][dim];
            }
            expected *= 1.0 - beta1;
            let rel = (state.m[dim] - expected).abs() / expected.abs().max(1e-30);
            assert!(rel < 1e-10, "dim {dim}: {} vs {expected}", state.m[dim]);
        }
    }

    #[test]
    fn trapezoidal_zero_gradient_keeps_theta_and_relaxes_v() {
        let mut oracle = zero_loss(1);
        let s0 = scalar_state(0.4, 0.0, 1.0);
        let s1 = imex_trapezoidal_step(&s0, &mut oracle, &hp(0.1, 0.9, 0.999)).unwrap();
        assert_eq!(s1.theta[0], 0.4);
        assert_eq!(s1.m[0], 0.0);
        assert!(s1.v[0] < 1.0 && s1.v[0] > 0.0, "v = {}", s1.v[0]);
        assert_eq!(s1.grad_evals, 2);
    }

    #[test]
    fn trapezoidal_matches_gark_with_its_tableau() {
        let hp = hp(0.1, 0.9, 0.999);
        let rates = rates_from_betas(&hp).unwrap();
        let tableau = crate::gark::imex_trapezoidal();
        let s0 = scalar_state(1.0, 0.0, 1.0);

        let mut o1 = DiagQuadraticLoss::homogeneous(vec![1.0]);
        let direct = imex_trapezoidal_step(&s0, &mut o1, &hp).unwrap();
        let mut o2 = DiagQuadraticLoss::homogeneous(vec![1.0]);
        let generic = gark_step(&s0, &mut o2, hp.h, &rates, &tableau).unwrap();

        assert_close_rel(&direct.theta, &generic.theta, 1e-12);
        assert_close_rel(&direct.m, &generic.m, 1e-12);
        assert_close_rel(&direct.v, &generic.v, 1e-12);
        assert_eq!(direct.grad_evals, generic.grad_evals);
    }

    #[test]
    fn gark_euler_reproduces_the_one_step_update() {
        // One IMEX Euler step written out by hand:
        //   m1 = m + h d g - h r m, v1 = v + h p g^2 - h q v,
        //   theta1 = theta - h m1 / sqrt(v1 + eps).
        let hp = hp(0.1, 0.9, 0.999);
        let rates = rates_from_betas(&hp).unwrap();
        let (theta0, m0, v0) = (1.0, 0.2, 0.5);
        let g = theta0; // L = theta^2/2

        let m1 = m0 + hp.h * rates.d * g - hp.h * rates.r * m0;
        let v1 = v0 + hp.h * rates.p * g * g - hp.h * rates.q * v0;
        let theta1 = theta0 - hp.h * m1 / (v1 + hp.epsilon).sqrt();

        let mut oracle = DiagQuadraticLoss::homogeneous(vec![1.0]);
        let s1 = gark_step(
            &scalar_state(theta0, m0, v0),
            &mut oracle,
            hp.h,
            &rates,
            &imex_euler(),
        )
        .unwrap();
        assert_close_rel(&s1.m, &[m1], 1e-13);
        assert_close_rel(&s1.v, &[v1], 1e-13);
        assert_close_rel(&s1.theta, &[theta1], 1e-13);
        assert_eq!(s1.grad_evals, 1);
    }

    #[test]
    fn gark_global_fixed_point() {
        let rates = OdeRates::new(1.0, 1.0, 1.0, 1.0, DEFAULT_EPSILON).unwrap();
        let mut oracle = zero_loss(1);
        let s0 = scalar_state(0.9, 0.0, 0.0);
        for tableau in [imex_euler(), crate::gark::imex_trapezoidal()] {
            let s1 = gark_step(&s0, &mut oracle, 0.1, &rates, &tableau).unwrap();
            assert_eq!(s1.theta[0], 0.9);
            assert_eq!(s1.m[0], 0.0);
            assert_eq!(s1.v[0], 0.0);
        }
    }

    #[test]
    fn gark_rejects_invalid_tableau() {
        let bad = GarkTableau::new(
            vec![vec![0.5]],
            vec![vec![0.0]],
            vec![vec![1.0]],
            vec![vec![1.0]],
            vec![1.0],
            vec![1.0],
        )
        .unwrap();
        let rates = OdeRates::new(1.0, 1.0, 1.0, 1.0, DEFAULT_EPSILON).unwrap();
        let mut oracle = zero_loss(1);
        let s0 = scalar_state(1.0, 0.0, 0.0);
        assert!(matches!(
            gark_step(&s0, &mut oracle, 0.1, &rates, &bad),
            Err(Error::InvalidTableau(_))
        ));
    }

    #[test]
    fn one_stage_rk_is_bitwise_forward_euler() {
        let rates = rates_from_betas(&hp(0.05, 0.9, 0.99)).unwrap();
        let s0 = OptimizerState {
            theta: ParamVector::from_vec(vec![1.0, -0.5]),
            m: ParamVector::from_vec(vec![0.2, 0.1]),
            v: ParamVector::from_vec(vec![0.5, 0.25]),
            t: 0.3,
            step: 4,
            grad_evals: 9,
        };
        let mut o1 = DiagQuadraticLoss::homogeneous(vec![1.0, 2.0]);
        let mut o2 = DiagQuadraticLoss::homogeneous(vec![1.0, 2.0]);
        let via_fe = fe_step(&s0, &mut o1, 0.05, &rates).unwrap();
        let via_rk = explicit_rk_step(&s0, &mut o2, 0.05, &rates, &RkTableau::fe()).unwrap();
        assert_eq!(via_fe, via_rk);
    }

    #[test]
    fn explicit_rk_fixed_point() {
        let rates = OdeRates::new(1.0, 1.0, 1.0, 1.0, DEFAULT_EPSILON).unwrap();
        for rk in [RkTableau::heun(), RkTableau::ssprk3(), RkTableau::rk4()] {
            let mut oracle = zero_loss(1);
            let s1 =
                explicit_rk_step(&scalar_state(1.5, 0.0, 0.0), &mut oracle, 0.1, &rates, &rk)
                    .unwrap();
            assert_eq!(s1.theta[0], 1.5);
            assert_eq!(s1.m[0], 0.0);
            assert_eq!(s1.v[0], 0.0);
            assert_eq!(s1.grad_evals, rk.stages() as u64);
        }
    }

    #[test]
    fn rk_tableau_must_be_strictly_lower() {
        assert!(matches!(
            RkTableau::new(vec![vec![0.1]], vec![1.0]),
            Err(Error::InvalidTableau(_))
        ));
        assert!(matches!(
            RkTableau::new(vec![vec![0.0, 0.5], vec![1.0, 0.0]], vec![0.5, 0.5]),
            Err(Error::InvalidTableau(_))
        ));
    }

    #[test]
    fn constant_schedule() {
        let s = LrSchedule::constant(0.01).unwrap();
        for epoch in [0, 1, 7, 1000] {
            assert_eq!(schedule_lr(&s, epoch), 0.01);
        }
    }

    #[test]
    fn cyclic_schedule_peaks_at_half_period_and_repeats() {
        let s = LrSchedule::cyclic(0.001, 0.01, 10).unwrap();
        assert_eq!(schedule_lr(&s, 0), 0.001);
        assert_eq!(schedule_lr(&s, 5), 0.01);
        assert_eq!(schedule_lr(&s, 10), 0.001);
        assert!((schedule_lr(&s, 2) - (0.001 + (0.01 - 0.001) * 2.0 / 5.0)).abs() < 1e-15);
        assert!((schedule_lr(&s, 8) - schedule_lr(&s, 2)).abs() < 1e-15);
    }

    #[test]
    fn schedule_validation() {
        assert!(LrSchedule::cyclic(0.01, 0.001, 10).is_err());
        assert!(LrSchedule::cyclic(0.001, 0.01, 1).is_err());
        assert!(LrSchedule::constant(0.0).is_err());
    }

    #[test]
    fn per_step_gradient_accounting() {
        let cases: Vec<(Method, u64)> = vec![
            (Method::Sgd, 1),
            (Method::Fe, 1),
            (Method::Adam, 1),
            (Method::ImexEuler, 1),
            (Method::ImexTrapezoidal, 2),
            (Method::Heun, 2),
            (Method::Ssprk3, 3),
            (Method::Rk4, 4),
            (Method::Gark(crate::gark::ssprk3_lobatto_iiic(0.2, 0.1)), 3),
        ];
        for (method, expected) in cases {
            assert_eq!(method.grad_evals_per_step(), expected, "{}", method.label());
            let mut oracle = DiagQuadraticLoss::homogeneous(vec![1.0]);
            let s0 = scalar_state(1.0, 0.0, 1.0);
            let s1 = method_step(&method, &s0, &mut oracle, &hp(0.01, 0.9, 0.999)).unwrap();
            assert_eq!(s1.grad_evals - s0.grad_evals, expected, "{}", method.label());
            assert_eq!(oracle.grad_evals(), expected, "{}", method.label());
        }
    }

    #[test]
    fn adam_equals_gark_euler_under_first_order_map() {
        // Short smoke version of the full equivalence criterion.
        let hp = hp(0.01, 0.9, 0.999);
        let rates = crate::params::first_order_rates(&hp).unwrap();
        let tableau = imex_euler();

        let mut s_adam = OptimizerState {
            theta: ParamVector::from_vec(vec![1.0, -0.7, 0.3]),
            m: ParamVector::zeros(3),
            v: ParamVector::from_vec(vec![1.0, 0.49, 0.09]),
            t: 0.0,
            step: 0,
            grad_evals: 0,
        };
        let mut s_gark = s_adam.clone();
        let mut o1 = DiagQuadraticLoss::homogeneous(vec![1.0, 2.0, 0.5]);
        let mut o2 = DiagQuadraticLoss::homogeneous(vec![1.0, 2.0, 0.5]);

        for _ in 0..25 {
            s_adam = adam_step(&s_adam, &mut o1, &hp).unwrap();
            s_gark = gark_step(&s_gark, &mut o2, hp.h, &rates, &tableau).unwrap();
            assert_close_rel(&s_adam.theta, &s_gark.theta, 1e-12);
            assert_close_rel(&s_adam.m, &s_gark.m, 1e-12);
            assert_close_rel(&s_adam.v, &s_gark.v, 1e-12);
        }
    }
}
