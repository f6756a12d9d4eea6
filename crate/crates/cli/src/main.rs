//! `textar`: the pipeline stages as subcommands.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input files. Exit code 1.
    Validation(String),
    /// Failure while running a stage. Exit code 2.
    Runtime(String),
}

impl From<textar_core::error::Error> for CliError {
    fn from(e: textar_core::error::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "textar", about = "Context-aware textual attribute recognition", disable_version_flag = true)]
struct Cli {
    /// Upper bound on worker threads. The pipeline runs single-threaded.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic labeled dataset.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        docs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build sequential context windows for an annotation file.
    SelectWindows {
        #[arg(long)]
        input: PathBuf,
        #[arg(long = "S")]
        s: usize,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long, default_value_t = 2.0)]
        m: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train one stage and write a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_parser = ["1", "2", "e2e"])]
        stage: String,
        #[arg(long)]
        data: PathBuf,
        /// Held-out dataset directory scored after every epoch.
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Stage-1 checkpoint to start stage 2 from.
        #[arg(long)]
        init_from: Option<PathBuf>,
        /// Per-epoch metrics CSV; defaults to `<out>.metrics.csv`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Score a checkpoint on a labeled dataset.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Window size; defaults to the checkpoint's.
        #[arg(long = "S")]
        s: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
    },
    /// Label every word of an annotation file.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        image_annotations: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        /// Model preset name or a JSON run configuration.
        #[arg(long, default_value = "toy")]
        config: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Coordinates sampled per parameter tensor; 0 checks all.
        #[arg(long, default_value_t = 6)]
        samples: usize,
    },
    /// Print the version.
    Version,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads == 0 {
        return Err(CliError::Validation("--threads must be at least 1".into()));
    }
    match cli.command {
        Command::Synth { cfg, out_dir, docs, seed } => commands::synth(&cfg.load()?, &out_dir, docs, seed),
        Command::SelectWindows { input, s, k, m, seed, output } => commands::select_windows(&input, s, k, m, seed, &output),
        Command::Train { cfg, stage, data, validation, seed, out, init_from, metrics } => commands::train(
            cfg.load()?,
            commands::TrainArgs { stage: &stage, data: &data, validation: validation.as_deref(), seed, out: &out, init_from: init_from.as_deref(), metrics: metrics.as_deref() },
        ),
        Command::Eval { cfg, ckpt, data, s, seed, report } => commands::eval(&cfg.load()?, &ckpt, &data, s, seed, &report),
        Command::Predict { cfg, image_annotations, ckpt, seed, out } => commands::predict(&cfg.load()?, &image_annotations, &ckpt, seed, &out),
        Command::Gradcheck { config, seed, samples } => commands::gradcheck(&config, seed, samples),
        Command::Version => {
            println!("textar {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

impl ConfigArgs {
    fn load(&self) -> Result<config::RunConfig, CliError> {
        config::RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TEXTAR_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Validation(_) => 1,
                CliError::Runtime(_) => 2,
            })
        }
    }
}
