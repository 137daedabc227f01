use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "renege-ldp", version, about = "Large deviations of queues with reneging")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    DecayRate,
    Fluid,
    Minimizer,
    Oracle,
    Simulate,
    Estimate,
    Sweep,
    ParadoxCheck,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decay rate C(gamma) and the root z_gamma.
    DecayRate(Options),
    /// Fluid (LLN) path by RK4 integration.
    Fluid(Options),
    /// Closed-form Euler-Lagrange minimizer with optimality checks.
    Minimizer(Options),
    /// Discretized variational oracle refinement study.
    Oracle(Options),
    /// One sample path, untilted or (with --gamma) under minimizer controls.
    Simulate(Options),
    /// Tail probability of the reneging count.
    Estimate(Options),
    /// Importance-sampled decay sweep over n.
    Sweep(Options),
    /// Minimizer costs across a theta grid.
    ParadoxCheck(Options),
}

impl Command {
    pub fn split(self) -> (CommandKind, Options) {
        match self {
            Command::DecayRate(o) => (CommandKind::DecayRate, o),
            Command::Fluid(o) => (CommandKind::Fluid, o),
            Command::Minimizer(o) => (CommandKind::Minimizer, o),
            Command::Oracle(o) => (CommandKind::Oracle, o),
            Command::Simulate(o) => (CommandKind::Simulate, o),
            Command::Estimate(o) => (CommandKind::Estimate, o),
            Command::Sweep(o) => (CommandKind::Sweep, o),
            Command::ParadoxCheck(o) => (CommandKind::ParadoxCheck, o),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Single,
    Many,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionArg {
    AtLeast,
    AtMost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Naive,
    Is,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Csv,
    Json,
}

/// Every option is both a flag (`--grid-size`) and a config key
/// (`grid_size`); `--T` maps to `T`.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[command(allow_negative_numbers = true)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<ModeArg>,
    #[arg(long = "T")]
    #[serde(skip_serializing_if = "Option::is_none")]
    #[serde(rename = "T")]
    pub t: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thetas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<u64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_list: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<DirectionArg>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodArg>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<FormatArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

macro_rules! with_fields {
    ($mac:ident) => {
        $mac!(
            lambda: "lambda",
            mu: "mu",
            theta: "theta",
            x0: "x0",
            mode: "mode",
            t: "T",
            gamma: "gamma",
            thetas: "thetas",
            horizons: "horizons",
            grid_size: "grid_size",
            tol: "tol",
            n: "n",
            n_list: "n_list",
            seed: "seed",
            replications: "replications",
            m_list: "m_list",
            max_iters: "max_iters",
            direction: "direction",
            method: "method",
            format: "format",
            out_dir: "out_dir"
        )
    };
}

impl Options {
    /// Keys that are set.
    pub fn present(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        macro_rules! collect {
            ($($f:ident: $k:literal),*) => { $( if self.$f.is_some() { keys.push($k); } )* };
        }
        with_fields!(collect);
        keys
    }

    /// Field-wise `self.or(file)`.
    pub fn over(self, file: Options) -> Options {
        macro_rules! merge {
            ($($f:ident: $k:literal),*) => {
                Options { config: self.config.clone(), $( $f: self.$f.clone().or(file.$f.clone()), )* }
            };
        }
        with_fields!(merge)
    }
}

/// Required and optional keys per command; `format` and `out_dir` apply
/// everywhere.
pub fn keys(kind: CommandKind) -> (&'static [&'static str], &'static [&'static str]) {
    let (req, opt): (&[&str], &[&str]) = match kind {
        CommandKind::DecayRate => (&["lambda", "mu", "gamma"], &["theta", "x0", "mode"]),
        CommandKind::Fluid => (&["lambda", "mu", "T"], &["theta", "x0", "mode", "grid_size"]),
        CommandKind::Minimizer => (&["lambda", "mu", "gamma", "T"], &["theta", "x0", "mode", "grid_size", "tol"]),
        CommandKind::Oracle => (&["lambda", "mu", "gamma", "T"], &["theta", "x0", "m_list", "max_iters", "tol"]),
        CommandKind::Simulate => (&["lambda", "mu", "T", "n"], &["theta", "x0", "mode", "seed", "gamma", "grid_size"]),
        CommandKind::Estimate => (
            &["lambda", "mu", "T", "gamma", "n"],
            &["theta", "x0", "mode", "seed", "replications", "direction", "method", "grid_size"],
        ),
        CommandKind::Sweep => (
            &["lambda", "mu", "T", "gamma", "n_list"],
            &["theta", "x0", "mode", "seed", "replications", "direction", "grid_size"],
        ),
        CommandKind::ParadoxCheck => (
            &["lambda", "mu", "gamma", "T", "thetas"],
            &["x0", "horizons", "grid_size", "tol"],
        ),
    };
    (req, opt)
}

fn allowed(kind: CommandKind, key: &str) -> bool {
    let (req, opt) = keys(kind);
    req.contains(&key) || opt.contains(&key) || key == "format" || key == "out_dir"
}

/// Merges the config file under the flags and checks which keys are set.
/// Flags irrelevant to the command are rejected; irrelevant keys in a shared
/// config file are dropped.
pub fn resolve(kind: CommandKind, flags: Options) -> Result<Options, CliError> {
    for key in flags.present() {
        if !allowed(kind, key) {
            return Err(CliError::config(format!("option `{key}` does not apply to this command")));
        }
    }
    let file = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<Options>(&text)
                .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?
        }
        None => Options::default(),
    };
    let mut merged = flags.over(file);
    macro_rules! drop_unused {
        ($($f:ident: $k:literal),*) => { $( if !allowed(kind, $k) { merged.$f = None; } )* };
    }
    with_fields!(drop_unused);
    let (req, _) = keys(kind);
    let present = merged.present();
    let missing: Vec<&str> = req.iter().copied().filter(|k| !present.contains(k)).collect();
    if !missing.is_empty() {
        return Err(CliError::config(format!("missing required option(s): {}", missing.join(", "))));
    }
    Ok(merged)
}
