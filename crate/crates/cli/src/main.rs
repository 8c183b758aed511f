//! `clothfit`: simulate swatches, generate targets, and estimate materials
//! from a TOML run configuration.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Run;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{resolve_dir, OutputDir};

#[derive(Parser)]
#[command(name = "clothfit", version, about = "XPBD cloth swatches and inverse material estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Suppress progress messages.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Relax every scenario to equilibrium and write the shapes.
    Simulate { config: PathBuf },
    /// Write equilibrium targets for every scenario.
    MakeTargets { config: PathBuf },
    /// Fit material parameters to targets.
    Estimate { config: PathBuf },
    /// Compare descriptors across materials and initial conditions.
    Descriptors { config: PathBuf },
    /// Check residual Jacobians against finite differences.
    Gradcheck { config: PathBuf },
}

impl Command {
    fn parts(&self) -> (&'static str, &PathBuf) {
        match self {
            Self::Simulate { config } => ("simulate", config),
            Self::MakeTargets { config } => ("make-targets", config),
            Self::Estimate { config } => ("estimate", config),
            Self::Descriptors { config } => ("descriptors", config),
            Self::Gradcheck { config } => ("gradcheck", config),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let (name, path) = cli.command.parts();
    let mut config = RunConfig::load(path)?;
    let base = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let base = std::path::absolute(&base).map_err(|e| CliError::Io(format!("{}: {e}", base.display())))?;
    // the echoed config must still find the targets from the output directory
    if let Some(est) = config.estimate.as_mut() {
        for t in &mut est.targets {
            *t = base.join(&*t);
        }
    }
    let dir = resolve_dir(cli.output.as_deref(), config.output_dir.as_deref(), path, name);
    let out = OutputDir::create(dir, cli.quiet)?;
    let run = Run { config, base, out };
    match cli.command {
        Command::Simulate { .. } => commands::simulate(&run),
        Command::MakeTargets { .. } => commands::make_targets_cmd(&run),
        Command::Estimate { .. } => commands::estimate(&run),
        Command::Descriptors { .. } => commands::descriptors(&run),
        Command::Gradcheck { .. } => commands::gradcheck_cmd(&run),
    }?;
    run.out.note(format!("wrote {}", run.out.root.display()));
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
