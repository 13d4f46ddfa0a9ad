//! Command-line front end for the `waterline` solvers.
//!
//! Exit codes: 0 on success, 1 on unreadable or invalid input, 2 when a
//! solver fails or a verification does not pass.

pub mod compare;
pub mod io;
pub mod solve;
pub mod sweep;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use waterline::{BoxStrategy, ScenarioObjective, ScenarioSpec};

#[derive(Debug)]
pub enum Failure {
    Input(String),
    Solver(String),
    Check(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 1,
            Failure::Solver(_) | Failure::Check(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) => write!(f, "input error: {m}"),
            Failure::Solver(m) => write!(f, "solver error: {m}"),
            Failure::Check(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for Failure {}

#[derive(Debug, Parser)]
#[command(name = "waterline", version, about = "Water-filling power allocation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve an instance file and write the result.
    Solve(solve::SolveArgs),
    /// Check a result against the optimality conditions of its instance.
    Verify(solve::VerifyArgs),
    /// Write random MIMO-OFDM instances.
    Generate(sweep::GenerateArgs),
    /// Run every box strategy (and the oracle when in range) on one instance.
    Compare(compare::CompareArgs),
    /// Mean objective against SNR over random realizations.
    Sweep(sweep::SweepArgs),
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve(a) => solve::cmd_solve(&a),
        Command::Verify(a) => solve::cmd_verify(&a),
        Command::Generate(a) => sweep::cmd_generate(&a),
        Command::Compare(a) => compare::cmd_compare(&a),
        Command::Sweep(a) => sweep::cmd_sweep(&a),
    }
}

pub fn parse_strategy(name: &str) -> Result<BoxStrategy, String> {
    BoxStrategy::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| {
            let names: Vec<_> = BoxStrategy::ALL.iter().map(|s| s.name()).collect();
            format!("unknown strategy `{name}`, expected one of {}", names.join(", "))
        })
}

/// Scenario parameters: a spec file, overridden field by field by flags.
#[derive(Debug, Clone, Default, Args)]
pub struct ScenarioArgs {
    /// JSON scenario spec; flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub antennas: Option<usize>,
    #[arg(long)]
    pub taps: Option<usize>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub subcarriers: Option<usize>,
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub box_denominator: Option<f64>,
    #[arg(long)]
    pub realizations: Option<usize>,
    /// Overridden by the WATERLINE_SEED environment variable.
    #[arg(long)]
    pub seed: Option<u64>,
    /// inverse_mse or log_capacity.
    #[arg(long, value_parser = parse_objective)]
    pub objective: Option<ScenarioObjective>,
}

fn parse_objective(name: &str) -> Result<ScenarioObjective, String> {
    match name {
        "inverse_mse" => Ok(ScenarioObjective::InverseMse),
        "log_capacity" => Ok(ScenarioObjective::LogCapacity),
        _ => Err(format!("unknown objective `{name}`, expected inverse_mse or log_capacity")),
    }
}

impl ScenarioArgs {
    pub fn resolve(&self) -> Result<ScenarioSpec, Failure> {
        let mut spec = match &self.spec {
            Some(p) => io::read_json(p)?,
            None => ScenarioSpec::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { spec.$f = v; })* };
        }
        take!(antennas, taps, decay, subcarriers, snr_db, realizations, seed, objective);
        if self.gamma.is_some() {
            spec.gamma = self.gamma;
        }
        if self.tau.is_some() {
            spec.tau = self.tau;
        }
        if self.box_denominator.is_some() {
            spec.box_denominator = self.box_denominator;
        }
        if let Ok(seed) = std::env::var("WATERLINE_SEED") {
            spec.seed = seed
                .trim()
                .parse()
                .map_err(|e| Failure::Input(format!("WATERLINE_SEED `{seed}`: {e}")))?;
        }
        spec.validate().map_err(|e| Failure::Input(e.to_string()))?;
        Ok(spec)
    }
}
