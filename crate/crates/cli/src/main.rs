//! `rcsynth`: sound a synthetic reverberation chamber, derive its equalizer
//! and run the closed loop that synthesizes a tapped-delay-line model.

mod commands;
mod config;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rcsynth_core::ErrorClass;

use config::{Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] rcsynth_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Numerical => 3,
                ErrorClass::Io => 4,
            },
            CliError::Io { .. } => 4,
        }
    }
}

#[derive(Parser)]
#[command(name = "rcsynth", version, about = "Channel-model synthesis inside a reverberation chamber")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sound chamber snapshots; write raw and windowed CIRs and equalizers.
    Sound(Common),
    /// Equalizer + emulator + chamber loop, sounded over fading realizations.
    ClosedLoop(Common),
    /// Artificial-path baseline: residual and self-correlation versus spacing.
    Baseline(Common),
    /// Coerce the model to the emulator grid and generate its fading; with
    /// --input, pass an IQ file through the emulator.
    Emulate(Common),
    /// Compare a PDP file (--input) with the target model.
    Report(Common),
    /// Print the documented default configuration.
    DefaultConfig,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML); a previous run's manifest.toml also works.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// pedestrian_b, tdl_b or a model file.
    #[arg(long)]
    model: Option<String>,
    /// Target delay spread for normalized models, ns.
    #[arg(long)]
    ds_ns: Option<f64>,
    /// Relative regularization of the equalizer.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    snapshots: Option<usize>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Replace the model with one static tap.
    #[arg(long)]
    bypass_ce: bool,
    /// Evaluate the loop on the next stirrer position.
    #[arg(long)]
    stir_between: bool,
    /// Also write SVG plots.
    #[arg(long)]
    plots: bool,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Input file: IQ CSV for emulate, PDP CSV for report.
    #[arg(long)]
    input: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            model: self.model.clone(),
            ds_ns: self.ds_ns,
            epsilon: self.epsilon,
            snapshots: self.snapshots,
            realizations: self.realizations,
            bypass_ce: self.bypass_ce,
            stir_between: self.stir_between,
            plots: self.plots,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, args) = match &cli.command {
        Command::Sound(a) => ("sound", a),
        Command::ClosedLoop(a) => ("closed-loop", a),
        Command::Baseline(a) => ("baseline", a),
        Command::Emulate(a) => ("emulate", a),
        Command::Report(a) => ("report", a),
        Command::DefaultConfig => {
            print!("{}", config::DEFAULT_CONFIG);
            return Ok(());
        }
    };
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.apply(&args.overrides(), name == "baseline");
    let input = args.input.as_deref();
    let run = match &cli.command {
        Command::Sound(_) => commands::sound(&cfg)?,
        Command::ClosedLoop(_) => commands::closed_loop(&cfg)?,
        Command::Baseline(_) => commands::baseline(&cfg)?,
        Command::Emulate(_) => commands::emulate(&cfg, input)?,
        Command::Report(_) => commands::report(&cfg, input)?,
        Command::DefaultConfig => unreachable!(),
    };
    let mut files = run.files;
    files.add("manifest.toml", config::manifest(&cfg, name, input, &run.seeds)?);
    files.commit(&args.out)?;
    print!("{}", run.summary);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rcsynth: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
