//! Generators for the three desk-scale benchmark problems and the batching
//! machinery. All generators are pure functions of their parameters and seed.

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::nn::{Batch, Mat, Targets};

// --- Lorenz '63 --------------------------------------------------------------

/// Parameters for the Lorenz '63 one-step-ahead regression set.
///
/// The conventional chaotic assignment is (sigma, rho, beta) = (10, 28, 8/3);
/// all three are configurable. Data is generated with fixed-step classical RK4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub dt: f64,
    pub x0: [f64; 3],
    pub n_points: usize,
    pub transient_skip: usize,
}

impl Default for LorenzParams {
    fn default() -> Self {
        LorenzParams {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            dt: 0.01,
            x0: [1.0, 1.0, 1.0],
            n_points: 10_000,
            transient_skip: 1000,
        }
    }
}

/// Right-hand side of the Lorenz '63 system:
/// (sigma (y - x), x (rho - z) - y, x y - beta z).
pub fn lorenz63_rhs(state: [f64; 3], lp: &LorenzParams) -> [f64; 3] {
    let [x, y, z] = state;
    [lp.sigma * (y - x), x * (lp.rho - z) - y, x * y - lp.beta * z]
}

fn lorenz_rk4_step(state: [f64; 3], dt: f64, lp: &LorenzParams) -> [f64; 3] {
    let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    let k1 = lorenz63_rhs(state, lp);
    let k2 = lorenz63_rhs(add(state, k1, dt / 2.0), lp);
    let k3 = lorenz63_rhs(add(state, k2, dt / 2.0), lp);
    let k4 = lorenz63_rhs(add(state, k3, dt), lp);
    let mut out = state;
    for i in 0..3 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Per-component mean and standard deviation of a generated trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats3 {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Integrates the system at step `dt`, discards `transient_skip` initial
/// steps, and emits `n_points` consecutive (S_n, S_{n+1}) pairs together with
/// the per-component statistics of the sampled states.
pub fn lorenz63_generate(lp: &LorenzParams) -> Result<(Vec<([f64; 3], [f64; 3])>, Stats3)> {
    if !(lp.dt.is_finite() && lp.dt > 0.0) {
        return Err(Error::Domain(format!("dt must be positive, got {}", lp.dt)));
    }
    if lp.n_points < 2 {
        return Err(Error::Domain(format!("n_points must be at least 2, got {}", lp.n_points)));
    }

    let mut state = lp.x0;
    for step in 0..lp.transient_skip {
        state = lorenz_rk4_step(state, lp.dt, lp);
        if !state.iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence {
                step: step as u64,
                detail: "Lorenz trajectory became non-finite during transient".into(),
            });
        }
    }

    // n_points pairs need n_points + 1 consecutive states.
    let mut states = Vec::with_capacity(lp.n_points + 1);
    states.push(state);
    for step in 0..lp.n_points {
        state = lorenz_rk4_step(state, lp.dt, lp);
        if !state.iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence {
                step: (lp.transient_skip + step) as u64,
                detail: "Lorenz trajectory became non-finite".into(),
            });
        }
        states.push(state);
    }

    let mut mean = [0.0; 3];
    for s in &states {
        for i in 0..3 {
            mean[i] += s[i];
        }
    }
    for m in &mut mean {
        *m /= states.len() as f64;
    }
    let mut var = [0.0; 3];
    for s in &states {
        for i in 0..3 {
            var[i] += (s[i] - mean[i]).powi(2);
        }
    }
    let mut std = [0.0; 3];
    for i in 0..3 {
        std[i] = (var[i] / states.len() as f64).sqrt();
        if std[i] == 0.0 {
            std[i] = 1.0;
        }
    }

    let pairs = states.windows(2).map(|w| (w[0], w[1])).collect();
    Ok((pairs, Stats3 { mean, std }))
}

/// Lorenz pairs as a standardized regression batch (inputs and targets share
/// the trajectory statistics).
pub fn lorenz63_batch(lp: &LorenzParams) -> Result<(Batch, Stats3)> {
    let (pairs, stats) = lorenz63_generate(lp)?;
    let n = pairs.len();
    let mut inputs = Mat::zeros(n, 3);
    let mut targets = Mat::zeros(n, 3);
    for (row, (s_now, s_next)) in pairs.iter().enumerate() {
        for i in 0..3 {
            inputs.row_mut(row)[i] = (s_now[i] - stats.mean[i]) / stats.std[i];
            targets.row_mut(row)[i] = (s_next[i] - stats.mean[i]) / stats.std[i];
        }
    }
    Ok((Batch::new(inputs, Targets::Values(targets))?, stats))
}

// --- NIST Gauss3 -------------------------------------------------------------

/// Coefficients of the Gauss3 target
/// f(x) = b1 e^{-b2 x} + b3 e^{-(x-b4)^2/b5^2} + b6 e^{-(x-b7)^2/b8^2}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gauss3Params {
    pub b: [f64; 8],
}

impl Default for Gauss3Params {
    fn default() -> Self {
        Gauss3Params { b: [94.9, 0.009, 90.1, 113.0, 20.0, 73.8, 140.0, 20.0] }
    }
}

impl Gauss3Params {
    pub fn eval(&self, x: f64) -> f64 {
        let [b1, b2, b3, b4, b5, b6, b7, b8] = self.b;
        b1 * (-b2 * x).exp()
            + b3 * (-((x - b4) / b5).powi(2)).exp()
            + b6 * (-((x - b7) / b8).powi(2)).exp()
    }
}

/// The Gauss3 function at the fixed NIST coefficients.
pub fn gauss3_eval(x: f64) -> f64 {
    Gauss3Params::default().eval(x)
}

pub const GAUSS3_X_MAX: f64 = 250.0;

/// Target normalization statistics for de-normalizing predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

/// `n` equispaced samples of the Gauss3 function on [0, 250]; inputs scaled
/// to [0, 1], targets standardized to zero mean and unit standard deviation.
pub fn gauss3_dataset(n: usize) -> Result<(Batch, TargetStats)> {
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {n}")));
    }
    let xs: Vec<f64> =
        (0..n).map(|i| GAUSS3_X_MAX * i as f64 / (n - 1) as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| gauss3_eval(x)).collect();

    let mean = ys.iter().sum::<f64>() / n as f64;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(f64::MIN_POSITIVE);

    let mut inputs = Mat::zeros(n, 1);
    let mut targets = Mat::zeros(n, 1);
    for i in 0..n {
        inputs.row_mut(i)[0] = xs[i] / GAUSS3_X_MAX;
        targets.row_mut(i)[0] = (ys[i] - mean) / std;
    }
    Ok((Batch::new(inputs, Targets::Values(targets))?, TargetStats { mean, std }))
}

// --- two-spiral classification ----------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpiralParams {
    pub n_points: usize,
    pub noise_std: f64,
    pub turns: f64,
    pub seed: u64,
}

impl Default for SpiralParams {
    fn default() -> Self {
        SpiralParams { n_points: 1000, noise_std: 0.05, turns: 1.5, seed: 0 }
    }
}

/// Noise-free spiral point for class k in {0, 1} at radial coordinate
/// u in (0, 1]: angle phi = k pi + u * turns * 2 pi, radius u. Opposite
/// classes at the same u are antipodal.
pub fn spiral_point(class: usize, u: f64, turns: f64) -> (f64, f64) {
    let phi = class as f64 * std::f64::consts::PI + u * turns * 2.0 * std::f64::consts::PI;
    (u * phi.cos(), u * phi.sin())
}

/// Balanced two-class spiral set: n_points/2 radial draws, each emitted once
/// per class, plus isotropic Gaussian noise of the given standard deviation.
pub fn spiral_dataset(sp: &SpiralParams) -> Result<Batch> {
    if sp.n_points == 0 || sp.n_points % 2 != 0 {
        return Err(Error::Domain(format!(
            "n_points must be positive and even for balanced classes, got {}",
            sp.n_points
        )));
    }
    if sp.noise_std < 0.0 {
        return Err(Error::Domain(format!("noise_std must be nonnegative, got {}", sp.noise_std)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(sp.seed);
    let uniform = Uniform::new(0.0f64, 1.0);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let n = sp.n_points;
    let mut inputs = Mat::zeros(n, 2);
    let mut classes = Vec::with_capacity(n);
    for pair in 0..n / 2 {
        // Uniform on (0, 1]: flip the half-open sample.
        let u = 1.0 - uniform.sample(&mut rng);
        for class in 0..2 {
            let (x, y) = spiral_point(class, u, sp.turns);
            let row = inputs.row_mut(2 * pair + class);
            row[0] = x + sp.noise_std * noise.sample(&mut rng);
            row[1] = y + sp.noise_std * noise.sample(&mut rng);
            classes.push(class);
        }
    }
    Batch::new(inputs, Targets::Classes(classes))
}

// --- batching -----------------------------------------------------------------

/// Splits `batch` into `k` near-equal contiguous parts of a (possibly
/// shuffled) permutation; sizes differ by at most one. The union of the parts
/// is always a permutation of the input rows.
pub fn make_batches(batch: &Batch, k: usize, seed: u64, shuffle: bool) -> Result<Vec<Batch>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    make_batches_with_rng(batch, k, &mut rng, shuffle)
}

pub fn make_batches_with_rng(
    batch: &Batch,
    k: usize,
    rng: &mut impl Rng,
    shuffle: bool,
) -> Result<Vec<Batch>> {
    let n = batch.len();
    if k == 0 || k > n {
        return Err(Error::Dimension(format!("cannot split {n} samples into {k} batches")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(rng);
    }

    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut cursor = 0;
    for part in 0..k {
        let size = base + usize::from(part < extra);
        let idx = &order[cursor..cursor + size];
        cursor += size;

        let mut inputs = Mat::zeros(size, batch.inputs.cols);
        for (row, &src) in idx.iter().enumerate() {
            inputs.row_mut(row).copy_from_slice(batch.inputs.row(src));
        }
        let targets = match &batch.targets {
            Targets::Values(y) => {
                let mut t = Mat::zeros(size, y.cols);
                for (row, &src) in idx.iter().enumerate() {
                    t.row_mut(row).copy_from_slice(y.row(src));
                }
                Targets::Values(t)
            }
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&src| c[src]).collect()),
        };
        out.push(Batch::new(inputs, targets)?);
    }
    Ok(out)
}

/// Head/tail split (first `fraction` of rows for training). Lorenz runs use
/// this with fraction 0.8 when a test loss is requested.
pub fn split_batch(batch: &Batch, fraction: f64) -> Result<(Batch, Batch)> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::Domain(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    let n = batch.len();
    let n_train = ((n as f64) * fraction).round() as usize;
    let n_train = n_train.clamp(1, n - 1);

    let take = |lo: usize, hi: usize| -> Result<Batch> {
        let size = hi - lo;
        let mut inputs = Mat::zeros(size, batch.inputs.cols);
        for row in 0..size {
            inputs.row_mut(row).copy_from_slice(batch.inputs.row(lo + row));
        }
        let targets = match &batch.targets {
            Targets::Values(y) => {
                let mut t = Mat::zeros(size, y.cols);
                for row in 0..size {
                    t.row_mut(row).copy_from_slice(y.row(lo + row));
                }
                Targets::Values(t)
            }
            Targets::Classes(c) => Targets::Classes(c[lo..hi].to_vec()),
        };
        Batch::new(inputs, targets)
    };
    Ok((take(0, n_train)?, take(n_train, n)?))
}

/// Writes a batch as CSV: header, then one sample per row, inputs before
/// targets.
pub fn batch_csv(batch: &Batch) -> String {
    let d = batch.inputs.cols;
    let mut out = String::new();
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    match &batch.targets {
        Targets::Values(y) => header.extend((0..y.cols).map(|i| format!("y{i}"))),
        Targets::Classes(_) => header.push("class".into()),
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for row in 0..batch.len() {
        let mut cells: Vec<String> =
            batch.inputs.row(row).iter().map(|x| format!("{x:.16e}")).collect();
        match &batch.targets {
            Targets::Values(y) => {
                cells.extend(y.row(row).iter().map(|x| format!("{x:.16e}")));
            }
            Targets::Classes(c) => cells.push(c[row].to_string()),
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_batch_csv(batch: &Batch, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, batch_csv(batch))?;
    Ok(())
}
