//! Command-line front end: training, oracle solves, comparison, property
//! verification and fine-tuning, each writing a hashed manifest.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{load_config, parse_config, Profile, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("{0}")]
    Input(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("property check failed: {0}")]
    Property(String),
}

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl fmt::Display) -> Self {
        CliError::Config {
            field: field.into(),
            reason: reason.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Input(_) => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Property(_) => EXIT_PROPERTY,
        }
    }
}

impl From<hjreach::Error> for CliError {
    fn from(e: hjreach::Error) -> Self {
        match e {
            hjreach::Error::Numeric { .. } => CliError::Numeric(e.to_string()),
            hjreach::Error::Schema { field, reason } => CliError::Config { field, reason },
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "hjreach", version, about = "Neural and grid reachability experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads. With 1, every output is bitwise reproducible.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides the training and fine-tuning seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a value network and write checkpoints and the loss log.
    Train(Common),
    /// Solve the grid oracle at the configured times.
    Solve(Common),
    /// Compare a checkpoint against an exported oracle.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/train/final.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<out>/oracle`.
        #[arg(long)]
        oracle: Option<PathBuf>,
    },
    /// Run the property suite.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Continue training a checkpoint with the max reduction.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/train/final.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides `finetune.steps`.
        #[arg(long)]
        steps: Option<usize>,
    },
}

/// Deliberate defects for checking that the suite catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    HamiltonianSign,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train(c) | Command::Solve(c) => c,
            Command::Compare { common, .. } | Command::Verify { common, .. } | Command::Finetune { common, .. } => {
                common
            }
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command inside its own thread pool and returns the
/// summary lines it would print.
pub fn execute(command: &Command) -> Result<Vec<String>, CliError> {
    let common = command.common();
    let mut config = load_config(&common.config)?;
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        config.train.seed = seed;
        config.finetune.seed = seed;
    }
    let threads = common.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::config("--threads", e))?;
    let deterministic = threads == 1;
    pool.install(|| match command {
        Command::Train(_) => commands::cmd_train(&config, deterministic),
        Command::Solve(_) => commands::cmd_solve(&config),
        Command::Compare { checkpoint, oracle, .. } => {
            commands::cmd_compare(&config, checkpoint.as_deref(), oracle.as_deref())
        }
        Command::Verify { inject_fault, .. } => commands::cmd_verify(&config, *inject_fault),
        Command::Finetune { checkpoint, steps, .. } => {
            if let Some(s) = steps {
                config.finetune.steps = *s;
            }
            commands::cmd_finetune(&config, checkpoint.as_deref(), deterministic)
        }
    })
}
