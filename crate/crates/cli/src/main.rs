//! `scos` command-line front end.
//!
//! Exit status: 0 on success, 2 on bad flags (usage printed), 1 when a
//! command fails at run time (error name and message on stderr).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use scos::select::Criterion;
use scos::solver::Formulation;

#[derive(Parser, Debug)]
#[command(name = "scos", version, about = "Subspace clustering of subspaces")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML file with `[solver]`, `[scenario]`, `[select]` and `[hsi]` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,
    /// Master seed; overrides the configuration file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Add wall-clock columns to CSV output (makes it non-reproducible).
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Paper,
    Desk,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormulationArg {
    Penalty,
    Auglag,
    AuglagPsi,
}

impl From<FormulationArg> for Formulation {
    fn from(f: FormulationArg) -> Self {
        match f {
            FormulationArg::Penalty => Formulation::Penalty,
            FormulationArg::Auglag => Formulation::AugLag,
            FormulationArg::AuglagPsi => Formulation::AugLagPsi,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Aic,
    Mdl,
    Eigengap,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Aic => Criterion::Aic,
            CriterionArg::Mdl => Criterion::Mdl,
            CriterionArg::Eigengap => Criterion::EigenGap,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Monte Carlo benchmark over an INR × SINR grid.
    SynthBench(SynthBenchArgs),
    /// Cluster a directory of views.
    Fit(FitArgs),
    /// Sweep the number of clusters and pick the elbow of the fit-score curve.
    SelectOrder(SelectOrderArgs),
    /// Check the identifiability conditions of a saved scenario.
    IdentCheck(IdentCheckArgs),
    /// Cluster the pixels of a hyperspectral cube.
    Hsi(HsiArgs),
    /// Generate and save one synthetic scenario.
    GenScenario(GenScenarioArgs),
    /// Generate and save a synthetic hyperspectral cube with stripe classes.
    GenCube(GenCubeArgs),
}

#[derive(Args, Debug)]
pub struct SynthBenchArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated INR values.
    #[arg(long, default_value = "0.5", value_delimiter = ',')]
    pub inr_list: Vec<f64>,
    /// `start:stop:step` in dB (inclusive) or a comma-separated list.
    #[arg(long, default_value = "0:-15:-5", allow_hyphen_values = true)]
    pub sinr_db_range: String,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub runs: u64,
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    pub scale: Scale,
    #[arg(long, value_enum)]
    pub formulation: Option<FormulationArg>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Directory with `view_0000.mat`, `view_0001.mat`, ...
    #[arg(long)]
    pub views: PathBuf,
    #[arg(long)]
    pub clusters: usize,
    /// One dimension for all clusters, or a comma-separated list.
    #[arg(long, value_delimiter = ',', required_unless_present = "dims_auto")]
    pub dims: Vec<usize>,
    /// Estimate dimensions from an initial fit, then refit.
    #[arg(long)]
    pub dims_auto: bool,
    #[arg(long, value_enum, default_value_t = CriterionArg::Eigengap)]
    pub criterion: CriterionArg,
    #[arg(long, value_enum)]
    pub formulation: Option<FormulationArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SelectOrderArgs {
    #[arg(long)]
    pub views: PathBuf,
    #[arg(long)]
    pub r_max: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Subspace dimension used for every cluster.
    #[arg(long)]
    pub dims: usize,
    #[arg(long, value_enum)]
    pub formulation: Option<FormulationArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IdentCheckArgs {
    /// Scenario directory written by `gen-scenario`.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Directory for `ident.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct HsiArgs {
    /// Cube header file.
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long)]
    pub clusters: usize,
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<usize>,
    #[arg(long)]
    pub s_r: Option<usize>,
    #[arg(long)]
    pub s_a: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenScenarioArgs {
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    pub scale: Scale,
    /// `inf` for no interference or noise.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub sinr_db: f64,
    #[arg(long, default_value_t = 0.5)]
    pub inr: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenCubeArgs {
    #[arg(long, default_value_t = 40)]
    pub height: usize,
    #[arg(long, default_value_t = 40)]
    pub width: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 2)]
    pub endmembers: usize,
    #[arg(long, default_value_t = 50)]
    pub bands: usize,
    /// `inf` for a noiseless cube.
    #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
    pub snr_db: f64,
    /// Header path; the raw and label files are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.into())
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(1)
        }
    }
}
