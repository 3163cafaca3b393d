//! Command-line runner for the localization and waist experiments.
//!
//! Every output file carries the SHA-256 of the effective config and the seed.
//! Exit codes: 0 success, 1 usage or config error, 2 numerical failure,
//! 3 invariant or verdict violation.

mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

pub use config::{Experiment, ExperimentConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "stochloc", version, about = "Stochastic localization on polynomial fibers and Gaussian waist checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate paths and write per-path diagnostics plus an invariant summary.
    Localize(CommonArgs),
    /// Estimate tube measures and compare with the affine baseline.
    Tube(CommonArgs),
    /// Tabulate the affine (or circled-hyperplane) baseline.
    Baseline(CommonArgs),
    /// Check the mixture identity and the pointwise density martingale.
    Mixture(CommonArgs),
    /// Sample terminal centers and their moments.
    Centerlaw(CommonArgs),
    /// Random sweep of the tilt inequality in one complex dimension.
    Tilt(CommonArgs),
    /// Fast end-to-end checks of the core invariants.
    Selftest(CommonArgs),
}

/// Worker threads: a positive count or `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threads {
    Auto,
    Count(usize),
}

impl FromStr for Threads {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Threads::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Threads::Count(n)),
            _ => Err(format!("expected a positive integer or `auto`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Args)]
struct CommonArgs {
    /// Experiment config (JSON). Optional for `tilt` and `selftest`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value = "auto")]
    threads: Threads,
    /// Time step.
    #[arg(long)]
    h: Option<f64>,
    /// Horizon.
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
}

impl CommonArgs {
    fn load(&self, required: bool) -> Result<Experiment, CliError> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
                ExperimentConfig::from_json_str(&text)?
            }
            None if required => return Err(CliError::Usage("--config is required for this command".into())),
            None => commands::default_config(),
        };
        if self.seed.is_some() {
            config.seed = self.seed;
        }
        if self.h.is_some() {
            config.h = self.h;
        }
        if self.horizon.is_some() {
            config.horizon = self.horizon;
        }
        if self.paths.is_some() {
            config.n_paths = self.paths;
        }
        if self.samples.is_some() {
            config.n_samples = self.samples;
        }
        config.validate()
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let (args, required, command): (&CommonArgs, bool, fn(&Experiment, &commands::Output) -> Result<(), CliError>) =
        match &cli.command {
            Command::Localize(a) => (a, true, commands::localize),
            Command::Tube(a) => (a, true, commands::tube),
            Command::Baseline(a) => (a, true, commands::baseline),
            Command::Mixture(a) => (a, true, commands::mixture),
            Command::Centerlaw(a) => (a, true, commands::centerlaw),
            Command::Tilt(a) => (a, false, commands::tilt),
            Command::Selftest(a) => (a, false, commands::selftest),
        };
    let experiment = args.load(required)?;
    let output = commands::Output::new(&args.out, &experiment)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Threads::Count(n) = args.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| command(&experiment, &output))
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::Usage(e.to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
