mod io;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use fgam::FgamError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Pace,
    Mcmc,
    Vb,
    VbMcmc,
    Simulate,
    Predict,
}

/// Fit a functional generalized additive model to sparse, noisy functional
/// covariates with MCMC, variational Bayes, or both.
#[derive(Debug, Clone, Parser)]
#[command(name = "fgam", version)]
pub struct Args {
    #[arg(long, value_enum, default_value = "vb-mcmc")]
    pub mode: Mode,
    /// Observations, `subject_id,t,value`.
    #[arg(long)]
    pub obs: Option<PathBuf>,
    /// Responses, `subject_id,y[,u1,...]`; a blank y marks a subject to predict.
    #[arg(long)]
    pub resp: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    #[arg(long, default_value_t = 10)]
    pub kx: usize,
    #[arg(long, default_value_t = 10)]
    pub kt: usize,
    #[arg(long, default_value_t = 2)]
    pub dx: usize,
    #[arg(long, default_value_t = 2)]
    pub dt: usize,
    #[arg(long = "grid-size", default_value_t = 50)]
    pub grid_size: usize,
    #[arg(long, default_value_t = 0.99)]
    pub pve: f64,
    /// Cap on the number of components; 0 removes the cap.
    #[arg(long = "max-pcs", default_value_t = 4)]
    pub max_pcs: usize,

    /// Total MCMC iterations including burn-in [default: 11000, or 1500 after VB]
    #[arg(long)]
    pub iters: Option<usize>,
    /// [default: 1000, or 500 after VB]
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,

    #[arg(long, default_value_t = 0.01)]
    pub al: f64,
    #[arg(long, default_value_t = 0.01)]
    pub bl: f64,
    #[arg(long, default_value_t = 0.01)]
    pub ax: f64,
    #[arg(long, default_value_t = 0.01)]
    pub bx: f64,
    #[arg(long = "as", default_value_t = 0.01)]
    pub a_s: f64,
    #[arg(long = "bs", default_value_t = 0.01)]
    pub b_s: f64,
    #[arg(long = "sigma-beta2", default_value_t = 1e6)]
    pub sigma_beta2: f64,
    #[arg(long = "sigma-eta2", default_value_t = 1e6)]
    pub sigma_eta2: f64,

    #[arg(long = "vb-tol", default_value_t = 1e-6)]
    pub vb_tol: f64,
    #[arg(long = "vb-max-iter", default_value_t = 200)]
    pub vb_max_iter: usize,
    #[arg(long = "laguerre-points", default_value_t = 25)]
    pub laguerre_points: usize,

    /// Simulation surface (simulate mode).
    #[arg(long, default_value = "f1", help_heading = "Simulation")]
    pub surface: String,
    /// Observations per subject (simulate mode).
    #[arg(
        long = "obs-per-subject",
        default_value_t = 10,
        help_heading = "Simulation"
    )]
    pub obs_per_subject: usize,
    /// Measurement-error variance (simulate mode).
    #[arg(long = "sigma-x2", default_value_t = 1.0, help_heading = "Simulation")]
    pub sigma_x2: f64,
    /// Seeded replications to fit and score; 0 only writes the dataset.
    #[arg(long, default_value_t = 0, help_heading = "Simulation")]
    pub replications: usize,
    /// Comma-separated methods: mcmc, vb, vb-mcmc, pace, truex, flm-pace.
    #[arg(
        long,
        default_value = "mcmc,vb,pace,truex",
        help_heading = "Simulation"
    )]
    pub methods: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("cannot write output: {0}")]
    Output(String),
    #[error("{0}")]
    Numerical(String),
}

impl From<FgamError> for CliError {
    fn from(e: FgamError) -> Self {
        match e {
            FgamError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            FgamError::Data(_) => CliError::Data(e.to_string()),
            FgamError::DimensionMismatch { .. } | FgamError::Numerical { .. } => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Output(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run::dispatch(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fgam: {e}");
            ExitCode::from(e.code())
        }
    }
}
