//! `rfavar` — batch front end for the regularized FAVAR pipeline.
//!
//! Subcommands: `simulate` (synthetic panels), `estimate` (full pipeline to
//! artifacts), `irf` (structural impulse responses with bootstrap bands),
//! `montecarlo` (consistency ladder). Exit codes: 0 success, 2 config,
//! 3 estimation, 4 analysis, 5 failed acceptance assertion.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod artifacts;
mod commands;
mod config;

use config::RunConfig;

#[derive(Debug)]
pub enum AppError {
    Config(String),
    Estimation(String),
    Analysis(String),
    Acceptance(String),
}

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Estimation(_) => 3,
            AppError::Analysis(_) => 4,
            AppError::Acceptance(_) => 5,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "config error: {m}"),
            AppError::Estimation(m) => write!(f, "estimation error: {m}"),
            AppError::Analysis(m) => write!(f, "analysis error: {m}"),
            AppError::Acceptance(m) => write!(f, "acceptance failure: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "rfavar", version, about = "Regularized factor-augmented VAR pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON configuration document; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed for anything stochastic in the command.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores); RFAVAR_THREADS is the fallback.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel and its truth sidecar.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit the full model on a CSV panel and write the artifacts.
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
        /// Panel CSV (header of series ids, period labels in column one).
        #[arg(long)]
        panel: Option<PathBuf>,
        /// Two-column id,transform_code CSV; absent means no transforms.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Observed-factor series ids (repeatable).
        #[arg(long = "observed")]
        observed: Vec<String>,
        /// Latent factor count; omit to select by information criterion.
        #[arg(long)]
        r1: Option<usize>,
        /// Cap for the factor-number criterion.
        #[arg(long)]
        r_max: Option<usize>,
        /// VAR lag order.
        #[arg(long)]
        p: Option<usize>,
        /// Fixed latent-block penalty (with --mu2 skips the grid search).
        #[arg(long)]
        mu1: Option<f64>,
        /// Fixed observed-block penalty.
        #[arg(long)]
        mu2: Option<f64>,
        /// Identification scheme.
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<rfavar::identify::Scheme>,
        /// Convergence tolerance of the sweeps.
        #[arg(long)]
        tol: Option<f64>,
        /// Sweep limit.
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Impulse responses from an estimate run (or inline estimation).
    Irf {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory with estimate artifacts.
        #[arg(long)]
        model_dir: Option<PathBuf>,
        /// Observed series to shock.
        #[arg(long)]
        shock: Option<String>,
        /// Shock magnitude in the shocked series' original units.
        #[arg(long = "bp")]
        magnitude: Option<f64>,
        /// Bootstrap replications (0 = point estimates only).
        #[arg(long)]
        boot: Option<usize>,
        /// Largest horizon.
        #[arg(long = "hmax")]
        h_max: Option<usize>,
        /// Confidence level of the percentile bands.
        #[arg(long = "ci")]
        ci_level: Option<f64>,
    },
    /// Monte Carlo consistency ladder with decay assertions.
    Montecarlo {
        #[command(flatten)]
        common: CommonArgs,
        /// Replications per ladder size.
        #[arg(long)]
        reps: Option<usize>,
    },
}

fn parse_scheme(s: &str) -> Result<rfavar::identify::Scheme, String> {
    match s.to_ascii_lowercase().as_str() {
        "ira" => Ok(rfavar::identify::Scheme::Ira),
        "irb" => Ok(rfavar::identify::Scheme::Irb),
        other => Err(format!("unknown scheme '{other}', expected ira or irb")),
    }
}

fn init_threads(requested: Option<usize>) {
    let n = requested.or_else(|| {
        std::env::var("RFAVAR_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n.filter(|&n| n > 0) {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run() -> Result<(), AppError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { common } => {
            init_threads(common.threads);
            let config = RunConfig::load(common.config.as_deref())?;
            let out = resolve_out(&common, &config)?;
            let seed = resolve_seed(&common, &config);
            commands::cmd_simulate(&config, &out, seed)
        }
        Command::Estimate {
            common,
            panel,
            spec,
            observed,
            r1,
            r_max,
            p,
            mu1,
            mu2,
            scheme,
            tol,
            max_iter,
        } => {
            init_threads(common.threads);
            let mut config = RunConfig::load(common.config.as_deref())?;
            let est = config.estimate.get_or_insert_with(Default::default);
            if panel.is_some() {
                est.panel = panel;
            }
            if spec.is_some() {
                est.spec = spec;
            }
            if !observed.is_empty() {
                est.observed_ids = observed;
            }
            if r1.is_some() {
                est.r1 = r1;
            }
            if let Some(v) = r_max {
                est.r_max = v;
            }
            if let Some(v) = p {
                est.p = v;
            }
            if mu1.is_some() {
                est.mu1 = mu1;
            }
            if mu2.is_some() {
                est.mu2 = mu2;
            }
            if let Some(v) = scheme {
                est.scheme = v;
            }
            if let Some(v) = tol {
                est.tol = v;
            }
            if let Some(v) = max_iter {
                est.max_iter = v;
            }
            let out = resolve_out(&common, &config)?;
            let seed = resolve_seed(&common, &config);
            commands::cmd_estimate(&config, &out, seed)
        }
        Command::Irf {
            common,
            model_dir,
            shock,
            magnitude,
            boot,
            h_max,
            ci_level,
        } => {
            init_threads(common.threads);
            let mut config = RunConfig::load(common.config.as_deref())?;
            let irf = config.irf.get_or_insert_with(Default::default);
            if model_dir.is_some() {
                irf.model_dir = model_dir;
            }
            if shock.is_some() {
                irf.shock = shock;
            }
            if let Some(v) = magnitude {
                irf.magnitude = v;
            }
            if let Some(v) = boot {
                irf.boot = v;
            }
            if let Some(v) = h_max {
                irf.h_max = v;
            }
            if let Some(v) = ci_level {
                irf.ci_level = v;
            }
            let out = resolve_out(&common, &config)?;
            let seed = resolve_seed(&common, &config);
            commands::cmd_irf(&config, &out, seed)
        }
        Command::Montecarlo { common, reps } => {
            init_threads(common.threads);
            let config = RunConfig::load(common.config.as_deref())?;
            let out = resolve_out(&common, &config)?;
            let seed = resolve_seed(&common, &config);
            commands::cmd_montecarlo(&config, &out, seed, reps)
        }
    }
}

fn resolve_out(common: &CommonArgs, config: &RunConfig) -> Result<PathBuf, AppError> {
    common
        .out
        .clone()
        .or_else(|| config.out.clone())
        .ok_or_else(|| AppError::Config("output directory required (--out or config.out)".into()))
}

fn resolve_seed(common: &CommonArgs, config: &RunConfig) -> u64 {
    common.seed.or(config.seed).unwrap_or(0)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code())
        }
    }
}
