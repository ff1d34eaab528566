use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hfu_core::sim::ModelSpec;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "hfu", version, about = "U-statistics of high-frequency observations: simulate, analyze, replicate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a path of a named model; optionally write it as CSV.
    #[command(allow_negative_numbers = true)]
    Simulate(RunArgs),
    /// Compute a statistic on an ingested CSV path or a simulated one.
    #[command(allow_negative_numbers = true)]
    Analyze(RunArgs),
    /// Run a replicated Monte Carlo experiment described in TOML.
    Mc(McArgs),
    /// Print theoretical limits for a named model.
    #[command(allow_negative_numbers = true)]
    Limits(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    #[value(alias = "u_stat")]
    #[serde(alias = "u_stat")]
    U,
    Gini,
    #[value(alias = "lp_test")]
    #[serde(alias = "lp_test")]
    Lp,
    Wilcoxon,
    Variance,
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// TOML file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// constant, piecewise_constant, gbm_vol or ou_vol.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub breaks: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[arg(long)]
    pub sigma0: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub drift: Option<f64>,
    /// Sampling frequency: observations at i/n.
    #[arg(long)]
    pub n: Option<usize>,
    /// Horizon T of the simulated path.
    #[arg(long = "horizon", alias = "T")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub substeps: Option<usize>,
    /// CSV of `time,value` rows.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub stat: Option<Stat>,
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub x: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Permutations for the heuristic Wilcoxon p-value.
    #[arg(long)]
    pub permutations: Option<usize>,
    /// Include full paths (samples, WL path) in the JSON.
    #[arg(long)]
    pub full: bool,
    #[arg(long)]
    pub emit_csv: Option<PathBuf>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed_base: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Per-replication values as CSV.
    #[arg(long)]
    pub samples_csv: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    mode: Option<String>,
    model: Option<Value>,
    n: Option<usize>,
    #[serde(alias = "T")]
    horizon: Option<f64>,
    seed: Option<u64>,
    substeps: Option<usize>,
    input: Option<PathBuf>,
    stat: Option<Stat>,
    kernel: Option<String>,
    p: Option<f64>,
    r: Option<f64>,
    t: Option<f64>,
    x: Option<f64>,
    gamma: Option<f64>,
    delta: Option<f64>,
    permutations: Option<usize>,
    full: Option<bool>,
    emit_csv: Option<PathBuf>,
    output: Option<PathBuf>,
}

/// Flags merged over the optional TOML file.
#[derive(Debug, Default)]
pub struct RunConfig {
    pub model: Option<ModelSpec>,
    pub n: Option<usize>,
    pub horizon: f64,
    pub seed: u64,
    pub substeps: usize,
    pub input: Option<PathBuf>,
    pub stat: Option<Stat>,
    pub kernel: Option<String>,
    pub p: Option<f64>,
    pub r: Option<f64>,
    pub t: f64,
    pub x: f64,
    pub gamma: f64,
    pub delta: f64,
    pub permutations: Option<usize>,
    pub full: bool,
    pub emit_csv: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("Io", format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config("Config", format!("{}: {e}", path.display())))
}

fn model_from(base: Option<Value>, args: &RunArgs) -> Result<Option<ModelSpec>, CliError> {
    let mut obj = match base {
        Some(Value::Object(m)) => m,
        Some(_) => return Err(CliError::config("Config", "model must be a table".into())),
        None => Map::new(),
    };
    if let Some(kind) = &args.model {
        if obj.get("kind").and_then(Value::as_str) != Some(kind.as_str()) {
            obj = Map::new();
        }
        obj.insert("kind".into(), Value::from(kind.as_str()));
    }
    let overrides: [(&str, Option<Value>); 9] = [
        ("sigma", args.sigma.map(Value::from)),
        ("breaks", args.breaks.clone().map(Value::from)),
        ("sigmas", args.sigmas.clone().map(Value::from)),
        ("sigma0", args.sigma0.map(Value::from)),
        ("xi", args.xi.map(Value::from)),
        ("rho", args.rho.map(Value::from)),
        ("kappa", args.kappa.map(Value::from)),
        ("theta", args.theta.map(Value::from)),
        ("drift", args.drift.map(Value::from)),
    ];
    let mut touched = false;
    for (key, v) in overrides {
        if let Some(v) = v {
            obj.insert(key.into(), v);
            touched = true;
        }
    }
    if obj.is_empty() {
        return Ok(None);
    }
    let Some(kind) = obj.get("kind").and_then(Value::as_str).map(str::to_string) else {
        let msg = if touched { "model parameters given without --model" } else { "model needs a `kind`" };
        return Err(CliError::config("Config", msg.into()));
    };
    serde_json::from_value(Value::Object(obj)).map(Some).map_err(|e| {
        let known = ["constant", "piecewise_constant", "gbm_vol", "ou_vol"];
        if known.contains(&kind.as_str()) {
            CliError::config("BadParam", format!("model `{kind}`: {e}"))
        } else {
            CliError::config("UnknownModel", format!("unknown model `{kind}`"))
        }
    })
}

impl RunConfig {
    /// `mode` is the subcommand; a config file naming another mode is rejected.
    pub fn resolve(args: &RunArgs, mode: &str) -> Result<Self, CliError> {
        let file: FileConfig = match &args.config {
            Some(p) => read_toml(p)?,
            None => FileConfig::default(),
        };
        if let Some(m) = &file.mode {
            if m != mode {
                return Err(CliError::config("Config", format!("config is for `{m}`, not `{mode}`")));
            }
        }
        Ok(Self {
            model: model_from(file.model, args)?,
            n: args.n.or(file.n),
            horizon: args.horizon.or(file.horizon).unwrap_or(1.0),
            seed: args.seed.or(file.seed).unwrap_or(0),
            substeps: args.substeps.or(file.substeps).unwrap_or(1),
            input: args.input.clone().or(file.input),
            stat: args.stat.or(file.stat),
            kernel: args.kernel.clone().or(file.kernel),
            p: args.p.or(file.p),
            r: args.r.or(file.r),
            t: args.t.or(file.t).unwrap_or(1.0),
            x: args.x.or(file.x).unwrap_or(0.0),
            gamma: args.gamma.or(file.gamma).unwrap_or(hfu_core::apps::DEFAULT_GAMMA),
            delta: args.delta.or(file.delta).unwrap_or(hfu_core::apps::DEFAULT_DELTA),
            permutations: args.permutations.or(file.permutations),
            full: args.full || file.full.unwrap_or(false),
            emit_csv: args.emit_csv.clone().or(file.emit_csv),
            output: args.output.clone().or(file.output),
        })
    }
}
