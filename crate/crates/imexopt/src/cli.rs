//! Command-line front end: multi-seed training experiments, stability-region
//! scans, and tableau checking. Functions here back the `imexopt` binary but
//! stay library-callable for tests.
//!
//! Configuration is layered: `key=value` lines in an optional config file
//! ('#' comments, later keys override earlier ones), then command-line flags
//! override the file. Unknown keys are errors.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::datasets::{gauss3_dataset, lorenz63_batch, split_batch, spiral_dataset, LorenzParams, SpiralParams};
use crate::error::{Error, Result};
use crate::gark::{check_order_conditions, parse_tableau_file, validate_tableau};
use crate::nn::{Activation, Batch, LossKind, Mlp, OutputMode};
use crate::optim::{train_loop, LrSchedule, Method, TrainRun, TrainSettings};
use crate::stability::{format_scan_csv, stability_region_scan, stable_fraction, Axis, AxisParam, Scheme, StabilityParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Lorenz63,
    Gauss3,
    Spiral,
}

impl DatasetKind {
    fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "lorenz63" => Ok(DatasetKind::Lorenz63),
            "gauss3" => Ok(DatasetKind::Gauss3),
            "spiral" => Ok(DatasetKind::Spiral),
            other => Err(Error::Config(format!(
                "unknown dataset '{other}' (lorenz63 | gauss3 | spiral)"
            ))),
        }
    }

    fn loss_kind(self) -> LossKind {
        match self {
            DatasetKind::Spiral => LossKind::CrossEntropy,
            _ => LossKind::Mse,
        }
    }

    fn output_mode(self) -> OutputMode {
        match self {
            DatasetKind::Spiral => OutputMode::Logits,
            _ => OutputMode::Linear,
        }
    }

    fn default_layers(self) -> Vec<usize> {
        match self {
            DatasetKind::Lorenz63 => vec![3, 100, 3],
            DatasetKind::Gauss3 => vec![1, 100, 1],
            DatasetKind::Spiral => vec![2, 8, 8, 8, 8, 8, 8, 8, 8, 2],
        }
    }

    fn default_activation(self) -> Activation {
        match self {
            DatasetKind::Spiral => Activation::Silu,
            _ => Activation::Tanh,
        }
    }
}

/// Fully resolved training experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub method: String,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: u64,
    pub batches: usize,
    pub seeds: u64,
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub out: PathBuf,
}

const CONFIG_KEYS: [&str; 13] = [
    "dataset", "method", "lr", "schedule", "beta1", "beta2", "epsilon", "epochs", "batches",
    "seeds", "layers", "activation", "out",
];

fn parse_kv_file(path: &Path) -> Result<Vec<(String, String, usize)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {line}: expected key=value, got '{content}'"))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string(), line));
    }
    Ok(pairs)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_layers(value: &str) -> Result<Vec<usize>> {
    let layers: Vec<usize> = value
        .split(',')
        .map(|tok| parse_num::<usize>("layers", tok.trim()))
        .collect::<Result<_>>()?;
    if layers.len() < 2 {
        return Err(Error::Config(format!("layers needs at least two sizes, got '{value}'")));
    }
    Ok(layers)
}

fn parse_schedule(value: &str) -> Result<LrSchedule> {
    if let Some(rest) = value.strip_prefix("cyclic:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!(
                "schedule must be 'cyclic:base,max,period', got '{value}'"
            )));
        }
        let base = parse_num::<f64>("schedule", parts[0].trim())?;
        let max = parse_num::<f64>("schedule", parts[1].trim())?;
        let period = parse_num::<u64>("schedule", parts[2].trim())?;
        LrSchedule::cyclic(base, max, period).map_err(|e| Error::Config(e.to_string()))
    } else if let Some(rest) = value.strip_prefix("constant:") {
        LrSchedule::constant(parse_num::<f64>("schedule", rest.trim())?)
            .map_err(|e| Error::Config(e.to_string()))
    } else {
        Err(Error::Config(format!(
            "schedule must be 'cyclic:base,max,period' or 'constant:lr', got '{value}'"
        )))
    }
}

/// Merges config-file assignments with flag assignments (flags win; within
/// each source, later keys override earlier ones) and resolves defaults.
pub fn parse_config(file: Option<&Path>, flags: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut merged: BTreeMap<String, String> = BTreeMap::new();

    if let Some(path) = file {
        for (key, value, line) in parse_kv_file(path)? {
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("line {line}: unknown key '{key}'")));
            }
            merged.insert(key, value);
        }
    }
    for (key, value) in flags {
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown key '{key}'")));
        }
        merged.insert(key.clone(), value.clone());
    }

    let require = |key: &str| -> Result<&String> {
        merged.get(key).ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    };

    let dataset = DatasetKind::from_name(require("dataset")?)?;
    let method = require("method")?.clone();
    let out = PathBuf::from(require("out")?);
    let epochs: u64 = parse_num("epochs", require("epochs")?)?;
    let batches: usize = parse_num("batches", require("batches")?)?;

    let lr = match merged.get("lr") {
        Some(v) => parse_num::<f64>("lr", v)?,
        None => 0.001,
    };
    let schedule = match merged.get("schedule") {
        Some(v) => parse_schedule(v)?,
        None => LrSchedule::constant(lr).map_err(|e| Error::Config(e.to_string()))?,
    };

    let beta1 = merged.get("beta1").map(|v| parse_num("beta1", v)).transpose()?.unwrap_or(0.9);
    let beta2 = merged.get("beta2").map(|v| parse_num("beta2", v)).transpose()?.unwrap_or(0.999);
    let epsilon =
        merged.get("epsilon").map(|v| parse_num("epsilon", v)).transpose()?.unwrap_or(1e-8);
    let seeds = merged.get("seeds").map(|v| parse_num("seeds", v)).transpose()?.unwrap_or(20);
    let layers = match merged.get("layers") {
        Some(v) => parse_layers(v)?,
        None => dataset.default_layers(),
    };
    let activation = match merged.get("activation") {
        Some(v) => Activation::from_name(v).map_err(|e| Error::Config(e.to_string()))?,
        None => dataset.default_activation(),
    };

    Ok(ExperimentConfig {
        dataset,
        method,
        schedule,
        beta1,
        beta2,
        epsilon,
        epochs,
        batches,
        seeds,
        layers,
        activation,
        out,
    })
}

/// Resolves a method name; `gark:<path>` loads a tableau file.
pub fn parse_method(name: &str) -> Result<Method> {
    match name.to_ascii_lowercase().as_str() {
        "sgd" => Ok(Method::Sgd),
        "fe" => Ok(Method::Fe),
        "adam" => Ok(Method::Adam),
        "imex-euler" => Ok(Method::ImexEuler),
        "imex-trapezoidal" => Ok(Method::ImexTrapezoidal),
        "heun" => Ok(Method::Heun),
        "ssprk3" => Ok(Method::Ssprk3),
        "rk4" => Ok(Method::Rk4),
        _ => {
            if let Some(path) = name.strip_prefix("gark:") {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Io(format!("{path}: {e}")))?;
                Ok(Method::Gark(parse_tableau_file(&text)?))
            } else {
                Err(Error::Config(format!(
                    "unknown method '{name}' (sgd | fe | adam | imex-euler | imex-trapezoidal \
                     | heun | ssprk3 | rk4 | gark:<path>)"
                )))
            }
        }
    }
}

fn build_dataset(kind: DatasetKind) -> Result<(Batch, Option<Batch>)> {
    match kind {
        DatasetKind::Lorenz63 => {
            let (batch, _) = lorenz63_batch(&LorenzParams::default())?;
            let (train, test) = split_batch(&batch, 0.8)?;
            Ok((train, Some(test)))
        }
        DatasetKind::Gauss3 => {
            let (batch, _) = gauss3_dataset(1000)?;
            Ok((batch, None))
        }
        DatasetKind::Spiral => Ok((spiral_dataset(&SpiralParams::default())?, None)),
    }
}

fn check_architecture(cfg: &ExperimentConfig, train: &Batch) -> Result<()> {
    let in_dim = *cfg.layers.first().unwrap();
    let out_dim = *cfg.layers.last().unwrap();
    if in_dim != train.inputs.cols {
        return Err(Error::Config(format!(
            "first layer size {in_dim} does not match dataset input width {}",
            train.inputs.cols
        )));
    }
    let expected_out = match &train.targets {
        crate::nn::Targets::Values(y) => y.cols,
        crate::nn::Targets::Classes(_) => 2,
    };
    if out_dim != expected_out {
        return Err(Error::Config(format!(
            "last layer size {out_dim} does not match dataset output width {expected_out}"
        )));
    }
    Ok(())
}

fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders the results CSV: per-seed series followed by the mean-over-seeds
/// series (seed column `mean`; diverged seeds are skipped in the mean).
pub fn format_results_csv(runs: &[(u64, TrainRun)]) -> String {
    let mut out = String::from("seed,epoch,grad_evals,lr,train_loss,test_loss\n");
    for (seed, run) in runs {
        for rec in &run.records {
            let test = rec.test_loss.map(|t| fmt_g17(t)).unwrap_or_default();
            out.push_str(&format!(
                "{seed},{},{},{},{},{test}\n",
                rec.epoch,
                rec.grad_evals,
                fmt_g17(rec.lr),
                fmt_g17(rec.train_loss)
            ));
        }
        if let Some(info) = &run.diverged {
            out.push_str(&format!(
                "{seed},{},{},,diverged,\n",
                info.epoch, info.grad_evals
            ));
        }
    }

    let max_epochs = runs.iter().map(|(_, run)| run.records.len()).max().unwrap_or(0);
    for idx in 0..max_epochs {
        let live: Vec<_> = runs.iter().filter_map(|(_, run)| run.records.get(idx)).collect();
        if live.is_empty() {
            continue;
        }
        let mean_train = live.iter().map(|r| r.train_loss).sum::<f64>() / live.len() as f64;
        let mean_test = if live.iter().all(|r| r.test_loss.is_some()) {
            fmt_g17(live.iter().map(|r| r.test_loss.unwrap()).sum::<f64>() / live.len() as f64)
        } else {
            String::new()
        };
        let first = live[0];
        out.push_str(&format!(
            "mean,{},{},{},{},{mean_test}\n",
            first.epoch,
            first.grad_evals,
            fmt_g17(first.lr),
            fmt_g17(mean_train)
        ));
    }
    out
}

/// Runs the experiment for seeds 0..seeds-1 (fanned out across workers,
/// gathered in seed order) and rewrites the results CSV. A diverged seed is
/// data, not failure: it gets a `diverged` row and the sweep continues.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let method = parse_method(&cfg.method)?;
    let (train, test) = build_dataset(cfg.dataset)?;
    check_architecture(cfg, &train)?;
    if cfg.batches == 0 || cfg.batches > train.len() {
        return Err(Error::Config(format!(
            "batches = {} invalid for {} training samples",
            cfg.batches,
            train.len()
        )));
    }
    if cfg.seeds == 0 {
        return Err(Error::Config("seeds must be at least 1".into()));
    }

    let runs: Vec<(u64, TrainRun)> = (0..cfg.seeds)
        .into_par_iter()
        .map(|seed| {
            let mlp = Mlp::new(&cfg.layers, cfg.activation, cfg.dataset.output_mode(), seed)?;
            let settings = TrainSettings {
                method: method.clone(),
                schedule: cfg.schedule.clone(),
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                epsilon: cfg.epsilon,
                epochs: cfg.epochs,
                batches: cfg.batches,
                loss_kind: cfg.dataset.loss_kind(),
                shuffle_seed: seed,
            };
            let run = train_loop(&settings, &mlp, &train, test.as_ref())?;
            Ok((seed, run))
        })
        .collect::<Result<_>>()?;

    let csv = format_results_csv(&runs);
    let mut file = std::fs::File::create(&cfg.out)
        .map_err(|e| Error::Io(format!("{}: {e}", cfg.out.display())))?;
    file.write_all(csv.as_bytes()).map_err(|e| Error::Io(e.to_string()))?;

    let diverged = runs.iter().filter(|(_, r)| r.diverged.is_some()).count();
    println!(
        "wrote {} ({} seeds, {} diverged, method {})",
        cfg.out.display(),
        cfg.seeds,
        diverged,
        method.label()
    );
    Ok(())
}

/// Arguments of the `stability` subcommand.
#[derive(Debug, Clone)]
pub struct StabilityArgs {
    pub scheme: Scheme,
    pub base: StabilityParams,
    pub axis1: Axis,
    pub axis2: Axis,
    pub out: PathBuf,
}

fn parse_axis(key: &str, value: &str) -> Result<Axis> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() != 4 {
        return Err(Error::Config(format!(
            "key '{key}': expected name:min:max:count, got '{value}'"
        )));
    }
    Ok(Axis {
        param: AxisParam::from_name(parts[0])?,
        min: parse_num(key, parts[1])?,
        max: parse_num(key, parts[2])?,
        count: parse_num(key, parts[3])?,
    })
}

pub fn parse_stability_args(flags: &[(String, String)]) -> Result<StabilityArgs> {
    let mut base = StabilityParams::nominal();
    let mut scheme = None;
    let mut axis1 = None;
    let mut axis2 = None;
    let mut out = None;
    for (key, value) in flags {
        match key.as_str() {
            "scheme" => scheme = Some(Scheme::from_name(value)?),
            "h" => base.h = parse_num(key, value)?,
            "d" => base.d = parse_num(key, value)?,
            "r" => base.r = parse_num(key, value)?,
            "p" => base.p = parse_num(key, value)?,
            "q" => base.q = parse_num(key, value)?,
            "lambda" => base.lambda = parse_num(key, value)?,
            "epsilon" => base.epsilon = parse_num(key, value)?,
            "axis1" => axis1 = Some(parse_axis(key, value)?),
            "axis2" => axis2 = Some(parse_axis(key, value)?),
            "out" => out = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
    }
    Ok(StabilityArgs {
        scheme: scheme.ok_or_else(|| Error::Config("missing required key 'scheme'".into()))?,
        base,
        axis1: axis1.ok_or_else(|| Error::Config("missing required key 'axis1'".into()))?,
        axis2: axis2.ok_or_else(|| Error::Config("missing required key 'axis2'".into()))?,
        out: out.ok_or_else(|| Error::Config("missing required key 'out'".into()))?,
    })
}

/// Writes the stability grid CSV and prints the fraction of stable cells.
pub fn cmd_stability(args: &StabilityArgs) -> Result<()> {
    let cells = stability_region_scan(args.scheme, &args.base, &args.axis1, &args.axis2)?;
    let csv = format_scan_csv(&cells);
    let mut file = std::fs::File::create(&args.out)
        .map_err(|e| Error::Io(format!("{}: {e}", args.out.display())))?;
    file.write_all(csv.as_bytes()).map_err(|e| Error::Io(e.to_string()))?;
    println!(
        "wrote {} ({} cells, stable fraction {:.4})",
        args.out.display(),
        cells.len(),
        stable_fraction(&cells)
    );
    Ok(())
}

/// Validates a tableau file and prints the order report. Violations exit
/// with the config-error code.
pub fn cmd_tableau_check(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let tableau = parse_tableau_file(&text)?;
    // parse_tableau_file already validated; re-run for the printed summary.
    let violations = validate_tableau(&tableau);
    if violations.is_empty() {
        println!("tableau ok: {} explicit, {} implicit stages", tableau.s_explicit(), tableau.s_implicit());
    }
    let report = check_order_conditions(&tableau)?;
    println!("order 1: {}", if report.order1_satisfied { "satisfied" } else { "NOT satisfied" });
    println!("order 2: {}", if report.order2_satisfied { "satisfied" } else { "NOT satisfied" });
    for (name, residual) in &report.residuals {
        println!("  residual {name}: {residual:.3e}");
    }
    Ok(())
}

fn parse_flags(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut flags = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected --flag, got '{arg}'")))?;
        if let Some((k, v)) = key.split_once('=') {
            flags.push((k.to_string(), v.to_string()));
            i += 1;
        } else {
            let value = args
                .get(i + 1)
                .ok_or_else(|| Error::Config(format!("flag --{key} needs a value")))?;
            flags.push((key.to_string(), value.clone()));
            i += 2;
        }
    }
    Ok(flags)
}

pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 3,
        Error::Config(_)
        | Error::Parse { .. }
        | Error::InvalidTableau(_)
        | Error::UnknownTableau(_)
        | Error::Axis(_)
        | Error::Domain(_) => 2,
        _ => 1,
    }
}

const USAGE: &str = "usage: imexopt <train|stability|tableau-check> [flags]
  train         --dataset lorenz63|gauss3|spiral --method <name> --epochs N --batches K --out FILE
                [--config FILE] [--lr X | --schedule cyclic:base,max,period] [--beta1 X] [--beta2 X]
                [--epsilon X] [--seeds N] [--layers 3,100,3] [--activation tanh|silu|relu]
  stability     --scheme fe|imex-euler --axis1 name:min:max:count --axis2 name:min:max:count --out FILE
                [--h X] [--d X] [--r X] [--p X] [--q X] [--lambda X] [--epsilon X]
  tableau-check <path>";

/// Entry point shared by the binary and the CLI tests. Returns the process
/// exit code: 0 success, 2 configuration error, 3 I/O error.
pub fn run(args: &[String]) -> i32 {
    let result = (|| -> Result<()> {
        let (sub, rest) = match args.split_first() {
            Some(split) => split,
            None => return Err(Error::Config(format!("missing subcommand\n{USAGE}"))),
        };
        match sub.as_str() {
            "train" => {
                let mut flags = parse_flags(rest)?;
                let mut config_file = None;
                flags.retain(|(k, v)| {
                    if k == "config" {
                        config_file = Some(PathBuf::from(v));
                        false
                    } else {
                        true
                    }
                });
                let cfg = parse_config(config_file.as_deref(), &flags)?;
                cmd_train(&cfg)
            }
            "stability" => cmd_stability(&parse_stability_args(&parse_flags(rest)?)?),
            "tableau-check" => match rest {
                [path] => cmd_tableau_check(Path::new(path)),
                _ => Err(Error::Config("tableau-check takes exactly one path".into())),
            },
            other => Err(Error::Config(format!("unknown subcommand '{other}'\n{USAGE}"))),
        }
    })();

    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

