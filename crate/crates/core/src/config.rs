//! Flat `key = value` experiment files.
//!
//! ```text
//! # MTRegression defaults
//! epochs = 300
//! batch_size = 304
//! learning_rate = 7e-4
//! gradient_clipping = 0.5
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Keys are the
//! [`ExperimentConfig`] field names; a few descriptive aliases are accepted
//! (`learning_rate`, `gradient_clipping`, `hidden_size`, `asymmetry`,
//! `loss_weight_lr`, `loss_weight_temperature`). Unknown keys are errors.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::ExperimentConfig;

/// Splits a config file into `(key, value)` pairs, keeping their order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Parses `key=value` given on the command line.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("override `{arg}` is not of the form key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("invalid value `{value}` for `{key}`")))
}

/// Seeds are either a count (`10` means 0..10) or an explicit list (`3,5,8`).
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    if value.contains(',') {
        value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse("seeds", s))
            .collect()
    } else {
        let k: u64 = parse("seeds", value)?;
        if k == 0 {
            return Err(Error::Parse("seeds must be at least 1".into()));
        }
        Ok((0..k).collect())
    }
}

/// Sets one field by name.
pub fn apply(config: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "method" => config.method = value.parse()?,
        "epochs" => config.epochs = parse(key, value)?,
        "batch_size" => config.batch_size = parse(key, value)?,
        "lr" | "learning_rate" => config.lr = parse(key, value)?,
        "clip" | "gradient_clipping" => config.clip = parse(key, value)?,
        "slaw_beta" | "beta" => config.slaw_beta = parse(key, value)?,
        "dwa_temperature" | "loss_weight_temperature" => config.dwa_temperature = parse(key, value)?,
        "dwa_smoothing" => config.dwa_smoothing = parse(key, value)?,
        "gradnorm_alpha" | "alpha" | "asymmetry" => config.gradnorm_alpha = parse(key, value)?,
        "gradnorm_lr" | "loss_weight_lr" => config.gradnorm_lr = parse(key, value)?,
        "n_tasks" => config.n_tasks = parse(key, value)?,
        "input_dim" => config.input_dim = parse(key, value)?,
        "output_dim" => config.output_dim = parse(key, value)?,
        "hidden" | "hidden_size" => config.hidden = parse(key, value)?,
        "depth" => config.depth = parse(key, value)?,
        "activation" => config.activation = value.parse()?,
        "input_std" => config.input_std = parse(key, value)?,
        "train_size" => config.train_size = parse(key, value)?,
        "test_size" => config.test_size = parse(key, value)?,
        "data_seed" => config.data_seed = parse(key, value)?,
        "seeds" => config.seeds = parse_seeds(value)?,
        "max_steps" => {
            config.max_steps = match value {
                "" | "none" => None,
                v => Some(parse(key, v)?),
            }
        }
        "jobs" => config.jobs = parse(key, value)?,
        other => return Err(Error::Parse(format!("unknown config key `{other}`"))),
    }
    Ok(())
}

pub fn apply_all(config: &mut ExperimentConfig, pairs: &[(String, String)]) -> Result<()> {
    for (k, v) in pairs {
        apply(config, k, v)?;
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut config = ExperimentConfig::default();
    apply_all(&mut config, &parse_pairs(&text)?)?;
    config.validate()?;
    Ok(config)
}

/// Renders every field in the file format; `load` of the output gives back
/// the same config.
pub fn render(config: &ExperimentConfig) -> String {
    let seeds: Vec<String> = config.seeds.iter().map(u64::to_string).collect();
    let mut seeds = seeds.join(",");
    if config.seeds.len() == 1 {
        seeds.push(',');
    }
    let lines = [
        ("method", config.method.key().to_string()),
        ("epochs", config.epochs.to_string()),
        ("batch_size", config.batch_size.to_string()),
        ("learning_rate", format!("{:?}", config.lr)),
        ("gradient_clipping", format!("{:?}", config.clip)),
        ("slaw_beta", format!("{:?}", config.slaw_beta)),
        ("dwa_smoothing", format!("{:?}", config.dwa_smoothing)),
        ("dwa_temperature", format!("{:?}", config.dwa_temperature)),
        ("gradnorm_alpha", format!("{:?}", config.gradnorm_alpha)),
        ("gradnorm_lr", format!("{:?}", config.gradnorm_lr)),
        ("n_tasks", config.n_tasks.to_string()),
        ("input_dim", config.input_dim.to_string()),
        ("output_dim", config.output_dim.to_string()),
        ("hidden_size", config.hidden.to_string()),
        ("depth", config.depth.to_string()),
        ("activation", config.activation.to_string()),
        ("input_std", format!("{:?}", config.input_std)),
        ("train_size", config.train_size.to_string()),
        ("test_size", config.test_size.to_string()),
        ("data_seed", config.data_seed.to_string()),
        ("seeds", seeds),
        ("max_steps", config.max_steps.map_or("none".to_string(), |m| m.to_string())),
        ("jobs", config.jobs.to_string()),
    ];
    lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
