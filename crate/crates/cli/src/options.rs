//! Command-line options and their layering with a config file.
//!
//! Every option is optional on the command line. The effective value comes
//! from the first layer that sets it: flag, then config file, then the
//! built-in default. The config file holds `key = value` lines using the
//! long flag names.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use pce_core::prelude::*;
use pce_core::simulation::{CoverageConfig, Design, NuisanceMode};

use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "pce", version, about = "Principal causal effects over continuous principal strata")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "PCE_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate the effect at one or more strata and write a JSON report.
    Fit(FitArgs),
    /// Estimate over a rectangular grid of strata and write a CSV.
    Surface(SurfaceArgs),
    /// Draw a dataset from a simulation design and write it as CSV.
    Simulate(SimulateArgs),
    /// Run a Monte-Carlo study and write a JSON summary.
    Study(StudyArgs),
    /// Report the quadrature workload of grid estimation across sample sizes.
    Bench(BenchArgs),
}

/// Options shared by every command that runs the estimator.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EstimatorOpts {
    /// Copula family: gaussian, fgm or independence.
    #[arg(long)]
    pub copula: Option<String>,
    /// Copula correlation parameter.
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    /// Fixed bandwidth in analysis units; overrides the rule.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Bandwidth rule when no fixed value is given: optimal or undersmooth.
    #[arg(long)]
    pub bandwidth_rule: Option<String>,
    /// Multiplier of the bandwidth rule.
    #[arg(long)]
    pub bandwidth_scale: Option<f64>,
    /// Quadrature engine: grid or adaptive.
    #[arg(long)]
    pub quad_mode: Option<String>,
    #[arg(long)]
    pub quad_c1: Option<f64>,
    #[arg(long)]
    pub quad_epsilon: Option<f64>,
    /// Grid nodes per axis, replacing the sample-size rule.
    #[arg(long)]
    pub quad_n_override: Option<usize>,
    /// Absolute tolerance of the adaptive engine.
    #[arg(long)]
    pub quad_tol: Option<f64>,
    /// What to do with principal-score densities below the floor: error or clamp.
    #[arg(long)]
    pub density_policy: Option<String>,
    /// Standardize covariates and mediator before fitting.
    #[arg(long, value_name = "BOOL")]
    pub standardize: Option<bool>,
}

/// Bootstrap options.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct BootstrapOpts {
    /// Bootstrap replicates; 0 skips the bootstrap.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Interval type: percentile or normal.
    #[arg(long)]
    pub ci: Option<String>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct FitOpts {
    /// Input CSV with columns x1..xp, z, m, y.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Strata as `m1,m0;m1,m0;...` in original units.
    #[arg(long, allow_hyphen_values = true)]
    pub points: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reuse nuisance fits from a JSON file instead of fitting.
    #[arg(long)]
    pub nuisances: Option<PathBuf>,
    /// Write the fitted nuisances to a JSON file.
    #[arg(long)]
    pub save_nuisances: Option<PathBuf>,
    /// Output path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub bootstrap: BootstrapOpts,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SurfaceOpts {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `lo,hi` for m1.
    #[arg(long, allow_hyphen_values = true)]
    pub m1_range: Option<String>,
    /// `lo,hi` for m0.
    #[arg(long, allow_hyphen_values = true)]
    pub m0_range: Option<String>,
    /// Nodes per axis.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub bootstrap: BootstrapOpts,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SimulateOpts {
    /// `p1`, `p2` or a benchmark setting such as `111`.
    #[arg(long)]
    pub setting: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct StudyOpts {
    #[arg(long)]
    pub setting: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub points: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Nuisances used in each round: parametric or oracle.
    #[arg(long)]
    pub nuisance: Option<String>,
    /// Compute bootstrap intervals in every round and report coverage.
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    pub coverage: Option<bool>,
    /// Draws for the Monte-Carlo truth.
    #[arg(long)]
    pub oracle_n_mc: Option<usize>,
    /// Write per-round records to this CSV.
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub bootstrap: BootstrapOpts,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct BenchOpts {
    #[arg(long)]
    pub setting: Option<String>,
    /// Comma-separated sample sizes.
    #[arg(long)]
    pub sizes: Option<String>,
    /// A single stratum `m1,m0`.
    #[arg(long, allow_hyphen_values = true)]
    pub point: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorOpts,
}

macro_rules! with_config {
    ($name:ident, $opts:ty) => {
        #[derive(Args, Debug)]
        pub struct $name {
            /// Config file of `key = value` lines; flags win on conflict.
            #[arg(long)]
            pub config: Option<PathBuf>,
            #[command(flatten)]
            pub opts: $opts,
        }
    };
}

with_config!(FitArgs, FitOpts);
with_config!(SurfaceArgs, SurfaceOpts);
with_config!(SimulateArgs, SimulateOpts);
with_config!(StudyArgs, StudyOpts);
with_config!(BenchArgs, BenchOpts);

fn overlay(base: &mut Map<String, Value>, top: Map<String, Value>) {
    for (k, v) in top {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
}

/// Layers defaults, the config file and the flags, in increasing priority.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: Value, file: Option<&Path>, flags: &T) -> Result<T, CliError> {
    let Value::Object(mut merged) = defaults else {
        unreachable!("defaults are an object")
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
        let as_json = serde_json::to_value(table).map_err(|e| CliError::Config(e.to_string()))?;
        let Value::Object(obj) = as_json else { unreachable!() };
        let known = serde_json::to_value(flags).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(unknown) = obj.keys().find(|k| known.get(k.as_str()).is_none()) {
            return Err(CliError::Config(format!("config file {}: unknown key {unknown:?}", path.display())));
        }
        overlay(&mut merged, obj);
    }
    let Value::Object(cli) = serde_json::to_value(flags).map_err(|e| CliError::Config(e.to_string()))? else {
        unreachable!()
    };
    overlay(&mut merged, cli);
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(e.to_string()))
}

pub fn estimator_defaults(standardize: bool) -> Value {
    serde_json::json!({
        "copula": "gaussian",
        "rho": 0.0,
        "bandwidth-rule": "optimal",
        "quad-mode": "grid",
        "quad-c1": QuadratureConfig::default().c1,
        "quad-epsilon": QuadratureConfig::default().epsilon,
        "quad-tol": QuadratureConfig::default().tol,
        "density-policy": "error",
        "standardize": standardize,
    })
}

pub fn bootstrap_defaults() -> Value {
    serde_json::json!({ "bootstrap": 0, "alpha": 0.05, "ci": "percentile" })
}

pub fn merge_defaults(parts: &[Value]) -> Value {
    let mut out = Map::new();
    for p in parts {
        if let Value::Object(m) = p {
            overlay(&mut out, m.clone());
        }
    }
    Value::Object(out)
}

pub fn need<T: Clone>(v: &Option<T>, name: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Config(format!("missing required option --{name}")))
}

impl EstimatorOpts {
    pub fn copula(&self) -> Result<CopulaSpec, CliError> {
        let family: pce_core::copula::CopulaFamily = need(&self.copula, "copula")?.parse()?;
        Ok(CopulaSpec::new(family, need(&self.rho, "rho")?)?)
    }

    pub fn bandwidth(&self) -> Result<Bandwidth, CliError> {
        if let Some(h) = self.bandwidth {
            KernelConfig::new(h)?;
            return Ok(Bandwidth::Fixed { h });
        }
        let rule = need(&self.bandwidth_rule, "bandwidth-rule")?;
        let bw = match rule.as_str() {
            "optimal" => Bandwidth::Optimal {
                scale: self.bandwidth_scale.unwrap_or(0.15),
            },
            "undersmooth" => Bandwidth::Undersmooth {
                scale: self.bandwidth_scale.unwrap_or(0.1),
            },
            other => {
                return Err(CliError::Config(format!(
                    "unknown bandwidth rule {other:?}; expected optimal or undersmooth"
                )))
            }
        };
        Ok(bw)
    }

    pub fn quadrature(&self) -> Result<QuadratureConfig, CliError> {
        let q = QuadratureConfig {
            c1: need(&self.quad_c1, "quad-c1")?,
            epsilon: need(&self.quad_epsilon, "quad-epsilon")?,
            n_override: self.quad_n_override,
            mode: need(&self.quad_mode, "quad-mode")?.parse()?,
            tol: need(&self.quad_tol, "quad-tol")?,
            ..QuadratureConfig::default()
        };
        q.validate()?;
        Ok(q)
    }

    pub fn density_policy(&self) -> Result<DensityPolicy, CliError> {
        match need(&self.density_policy, "density-policy")?.as_str() {
            "error" => Ok(DensityPolicy::Error),
            "clamp" => Ok(DensityPolicy::ClampAndCount),
            other => Err(CliError::Config(format!(
                "unknown density policy {other:?}; expected error or clamp"
            ))),
        }
    }

    pub fn standardize(&self) -> StandardizeColumns {
        if self.standardize.unwrap_or(false) {
            StandardizeColumns {
                x: true,
                m: true,
                y: false,
            }
        } else {
            StandardizeColumns::NONE
        }
    }

    pub fn pipeline(&self, strategy: std::sync::Arc<dyn NuisanceStrategy>) -> Result<Pipeline, CliError> {
        Ok(Pipeline {
            strategy,
            copula: self.copula()?,
            bandwidth: self.bandwidth()?,
            quad: self.quadrature()?,
            density_policy: self.density_policy()?,
            standardize: self.standardize(),
        })
    }
}

impl BootstrapOpts {
    pub fn method(&self) -> Result<CiMethod, CliError> {
        match need(&self.ci, "ci")?.as_str() {
            "percentile" => Ok(CiMethod::Percentile),
            "normal" => Ok(CiMethod::Normal),
            other => Err(CliError::Config(format!(
                "unknown interval type {other:?}; expected percentile or normal"
            ))),
        }
    }

    /// `None` when no replicates are requested.
    pub fn config(&self, seed: u64) -> Result<Option<BootstrapConfig>, CliError> {
        let replicates = need(&self.bootstrap, "bootstrap")?;
        if replicates == 0 {
            return Ok(None);
        }
        let cfg = BootstrapConfig {
            replicates,
            alpha: need(&self.alpha, "alpha")?,
            seed,
            method: self.method()?,
        };
        cfg.validate()?;
        Ok(Some(cfg))
    }

    pub fn coverage(&self) -> Result<CoverageConfig, CliError> {
        let replicates = need(&self.bootstrap, "bootstrap")?;
        if replicates < 2 {
            return Err(CliError::Config("coverage needs --bootstrap of at least 2".into()));
        }
        Ok(CoverageConfig {
            replicates,
            alpha: need(&self.alpha, "alpha")?,
            method: self.method()?,
        })
    }
}

pub fn parse_pair(s: &str, what: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Config(format!("{what}: expected two numbers `a,b`, got {s:?}"));
    let mut it = s.split(',').map(|t| t.trim().parse::<f64>());
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(a)), Some(Ok(b)), None) if a.is_finite() && b.is_finite() => Ok((a, b)),
        _ => Err(bad()),
    }
}

/// `m1,m0;m1,m0;...`
pub fn parse_points(s: &str) -> Result<Vec<PrincipalPoint>, CliError> {
    let points = s
        .split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| parse_pair(t, "points").map(|(a, b)| PrincipalPoint::new(a, b)))
        .collect::<Result<Vec<_>, _>>()?;
    if points.is_empty() {
        return Err(CliError::Config("no strata given in --points".into()));
    }
    Ok(points)
}

pub fn parse_sizes(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("sizes: {t:?} is not a positive integer")))
        })
        .collect()
}

pub fn parse_design(s: &str) -> Result<Design, CliError> {
    Ok(s.parse()?)
}

pub fn parse_nuisance_mode(s: &str) -> Result<NuisanceMode, CliError> {
    match s {
        "parametric" => Ok(NuisanceMode::Parametric),
        "oracle" => Ok(NuisanceMode::Oracle),
        other => Err(CliError::Config(format!(
            "unknown nuisance mode {other:?}; expected parametric or oracle"
        ))),
    }
}
