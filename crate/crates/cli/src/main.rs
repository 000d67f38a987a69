//! `hiddenmm` command-line front end.
//!
//! Exit codes: 0 success, 1 experiment or check failure, 2 usage or config error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Failure(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Failure(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<hiddenmm::Error> for CliError {
    fn from(e: hiddenmm::Error) -> Self {
        Self::Failure(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Failure(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "hiddenmm", version, about = "AltGDA experiments, audits and pre-flight checks for hidden min-max games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rock-Paper-Scissors hidden game, one run per seed.
    Rps(RpsArgs),
    /// Evaluate the initialization conditions from a config file.
    CheckInit(CheckInitArgs),
    /// Compare sampled input-Jacobian spectra with the closed-form bounds.
    AuditSpectrum(AuditArgs),
    /// Contraction, path-length and step-size constants.
    Constants(ConstantsArgs),
}

#[derive(Args, Debug, Default)]
pub struct RpsArgs {
    /// Hidden width of both players.
    #[arg(long)]
    pub d1: Option<usize>,
    /// Number of seeds.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub first_seed: Option<u64>,
    /// Horizon of each run.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Output directory; `HIDDENMM_OUT` overrides the config file and default.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Required success fraction.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub audit_every: Option<u64>,
    /// Constant multiplying the initialization scale rule.
    #[arg(long)]
    pub slack: Option<f64>,
    /// `warn` or `abort`.
    #[arg(long)]
    pub monitor: Option<String>,
    /// Also write the simplex trajectory SVG.
    #[arg(long)]
    pub svg: Option<bool>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CheckInitArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Also write the reports as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct AuditArgs {
    #[arg(long)]
    pub d0: Option<usize>,
    #[arg(long)]
    pub d1: Option<usize>,
    #[arg(long)]
    pub d2: Option<usize>,
    /// Defaults to the experiment scale rule for `d1`.
    #[arg(long)]
    pub sigma1: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub first_seed: Option<u64>,
    /// Constant of the variance condition.
    #[arg(long)]
    pub c: Option<f64>,
    /// Norm of the evaluation point.
    #[arg(long)]
    pub x_norm: Option<f64>,
    #[arg(long)]
    pub activation: Option<String>,
    /// Required frequency of non-violated certificates.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct ConstantsArgs {
    #[arg(long)]
    pub mu_theta: Option<f64>,
    #[arg(long)]
    pub mu_phi: Option<f64>,
    #[arg(long)]
    pub l_grad: Option<f64>,
    /// Defaults to `mu_phi^2 / (18 L^3)`.
    #[arg(long)]
    pub eta_theta: Option<f64>,
    /// Defaults to `1 / L`.
    #[arg(long)]
    pub eta_phi: Option<f64>,
    #[arg(long)]
    pub p0: Option<f64>,
    /// Certified radius, for the active Lipschitz constant.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Largest Jacobian singular value bound, for the active Lipschitz constant.
    #[arg(long)]
    pub nu_max: Option<f64>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Rps(a) => commands::rps(&a),
        Command::CheckInit(a) => commands::check_init(&a),
        Command::AuditSpectrum(a) => commands::audit_spectrum(&a),
        Command::Constants(a) => commands::constants(&a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                CliError::Config(_) => 2,
                CliError::Failure(_) => 1,
            })
        }
    }
}
