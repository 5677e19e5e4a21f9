//! Experiment harness: data generation, teacher training, distillation runs,
//! scheduler comparisons, temperature-range sweeps and gradient checks.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure,
//! 3 verification failure.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "dts", version, about = "Temperature-scheduled knowledge distillation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Overrides `seeds` from the config, e.g. `--seeds 0,1,2`.
    #[arg(long, alias = "seed", value_delimiter = ',', num_args = 1..)]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured dataset to `<output_dir>/data.csv`.
    GenerateData {
        #[command(flatten)]
        common: Common,
        /// Emit noiseless samples (every row equals its class mean).
        #[arg(long)]
        zero_spread: bool,
    },
    /// Train the teacher and write `runs/teacher/`.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
    },
    /// Distil one student per seed with the `[distill]` scheduler.
    Distill {
        #[command(flatten)]
        common: Common,
    },
    /// Run every `[[compare]]` entry across all seeds and rank them.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Run the dynamic scheduler over each `[sweep]` temperature range.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every analytic gradient.
    GradCheck {
        /// Optional; its `output_dir` receives a copy of the report.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the report to `<dir>/grad_check.txt` as well.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long, alias = "seeds", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = dts_core::verify::gradcheck::DEFAULT_INSTANCES)]
        instances: usize,
        /// Scale analytic gradients by 1 + EPS before comparing (negative control).
        #[arg(long, hide = true, value_name = "EPS")]
        perturb: Option<f64>,
    },
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Executes a parsed command, writing human-readable output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::GenerateData { common, zero_spread } => commands::generate_data(&common.load()?, zero_spread, out),
        Command::TrainTeacher { common } => commands::train_teacher(&common.load()?, out),
        Command::Distill { common } => commands::distill_cmd(&common.load()?, out),
        Command::Compare { common } => commands::compare(&common.load()?, out),
        Command::Sweep { common } => commands::sweep(&common.load()?, out),
        Command::GradCheck {
            config,
            output_dir,
            seed,
            instances,
            perturb,
        } => {
            let dir = match (output_dir, config) {
                (Some(dir), _) => Some(dir),
                (None, Some(path)) => Some(ExperimentConfig::load(&path)?.output_dir),
                (None, None) => None,
            };
            if instances == 0 {
                return Err(CliError::Usage("--instances must be at least 1".into()));
            }
            commands::grad_check(seed, instances, perturb, dir.as_deref(), out)
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
