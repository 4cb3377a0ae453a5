//! Flat `key = value` training configuration files.
//!
//! One assignment per line; `#` starts a comment; values may be quoted.
//! `d_phi` takes two widths written as `32,16` or `[32, 16]`.

use std::path::Path;
use std::str::FromStr;

use gwib::trainer::TrainConfig;

use crate::error::{CliError, CliResult};

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::input(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_widths(value: &str) -> CliResult<[usize; 2]> {
    let inner = value.trim_start_matches('[').trim_end_matches(']');
    let parts: Vec<usize> = inner
        .split(',')
        .map(|p| parse("d_phi", p.trim()))
        .collect::<CliResult<_>>()?;
    match parts[..] {
        [a, b] => Ok([a, b]),
        _ => Err(CliError::input(format!("d_phi needs two widths, got `{value}`"))),
    }
}

/// Set one field of `cfg` from its textual value.
pub fn set_field(cfg: &mut TrainConfig, key: &str, value: &str) -> CliResult<()> {
    let v = value.trim().trim_matches('"').trim_matches('\'');
    match key {
        "lr" => cfg.lr = parse(key, v)?,
        "batch_size" => cfg.batch_size = parse(key, v)?,
        "lambda" => cfg.lambda = parse(key, v)?,
        "beta" => cfg.beta = parse(key, v)?,
        "d_phi" => cfg.d_phi = parse_widths(v)?,
        "d_h" => cfg.d_h = parse(key, v)?,
        "epochs" => cfg.epochs = parse(key, v)?,
        "patience" => cfg.patience = parse(key, v)?,
        "cg_max_iter" => cfg.cg_max_iter = parse(key, v)?,
        "cg_tol" => cfg.cg_tol = parse(key, v)?,
        "seed" => cfg.seed = parse(key, v)?,
        "variant" => cfg.variant = v.parse()?,
        "squared_gw_costs" => cfg.squared_gw_costs = parse(key, v)?,
        "plan_scope" => cfg.plan_scope = v.parse()?,
        "max_reg_samples" => cfg.max_reg_samples = parse(key, v)?,
        "dropout" => cfg.dropout = parse(key, v)?,
        "bounded_latent" => cfg.bounded_latent = parse(key, v)?,
        "optimizer" => cfg.optimizer = v.parse()?,
        _ => return Err(CliError::input(format!("unknown config key `{key}`"))),
    }
    Ok(())
}

/// Parse configuration text on top of the defaults.
pub fn parse_config(text: &str) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("config line {}: expected `key = value`", i + 1)))?;
        set_field(&mut cfg, key.trim(), value)
            .map_err(|e| CliError::input(format!("config line {}: {e}", i + 1)))?;
    }
    Ok(cfg)
}

/// Read a configuration file, or the defaults when no path is given.
pub fn load_config(path: Option<&Path>) -> CliResult<TrainConfig> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::input(format!("cannot read config {}: {e}", p.display())))?;
            parse_config(&text)
        }
    }
}

/// Render a configuration in the same format [`parse_config`] reads.
pub fn render_config(cfg: &TrainConfig) -> String {
    format!(
        "lr = {}\nbatch_size = {}\nlambda = {}\nbeta = {}\nd_phi = {},{}\nd_h = {}\nepochs = {}\npatience = {}\n\
         cg_max_iter = {}\ncg_tol = {}\nseed = {}\nvariant = {}\nsquared_gw_costs = {}\nplan_scope = full_epoch\n\
         max_reg_samples = {}\ndropout = {}\nbounded_latent = {}\noptimizer = {}\n",
        cfg.lr,
        cfg.batch_size,
        cfg.lambda,
        cfg.beta,
        cfg.d_phi[0],
        cfg.d_phi[1],
        cfg.d_h,
        cfg.epochs,
        cfg.patience,
        cfg.cg_max_iter,
        cfg.cg_tol,
        cfg.seed,
        cfg.variant,
        cfg.squared_gw_costs,
        cfg.max_reg_samples,
        cfg.dropout,
        cfg.bounded_latent,
        cfg.optimizer,
    )
}
