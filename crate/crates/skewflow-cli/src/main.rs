//! skewflow: run one experiment task against a TOML configuration and
//! write its artifacts plus a digest manifest.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use skewflow_cli::config::{load_config, ExperimentConfig};
use skewflow_cli::runner::{self, Task, EXIT_CONFIG};

#[derive(Parser)]
#[command(
    name = "skewflow",
    version,
    about = "Numerical experiments for scalar ODEs driven by torus rotations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify the dynamical regime from section, spectrum, and primitive evidence.
    Regime(TaskArgs),
    /// Compute the attractor cover section over a uniform grid.
    Attractor(TaskArgs),
    /// Estimate the continuous spectrum and test for an exponential dichotomy.
    Spectrum(TaskArgs),
    /// Classify proxy-point pairs and measure occupation densities.
    ChaosLy(TaskArgs),
    /// Sample support clouds, check cover-family transport, probe sensitivity.
    ChaosAy(TaskArgs),
    /// Build the bounded-mean bump coefficient and survey its primitive.
    RmBuild(TaskArgs),
}

#[derive(Args)]
struct TaskArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides out_dir from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker-thread count (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn split(self) -> (Task, TaskArgs) {
        match self {
            Command::Regime(a) => (Task::Regime, a),
            Command::Attractor(a) => (Task::Attractor, a),
            Command::Spectrum(a) => (Task::Spectrum, a),
            Command::ChaosLy(a) => (Task::ChaosLy, a),
            Command::ChaosAy(a) => (Task::ChaosAy, a),
            Command::RmBuild(a) => (Task::RmBuild, a),
        }
    }
}

fn main() -> ExitCode {
    let (task, args) = Cli::parse().command.split();

    let mut config: ExperimentConfig = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    // A relative model path in the file is relative to the file, not to
    // wherever the binary happens to run.
    if let (Some(path), Some(dir)) = (&config.model.path, args.config.parent()) {
        if path.is_relative() {
            config.model.path = Some(dir.join(path));
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out_dir = match args.out.or_else(|| config.out_dir.clone()) {
        Some(d) => d,
        None => {
            eprintln!("config error: no output directory (set out_dir or pass --out)");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };

    runner::configure_threads(args.threads);
    match runner::run(task, &config, &out_dir) {
        Ok(report) => {
            for w in &report.soft_warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{}: {} files in {} ({:.1}s)",
                task.name(),
                report.files.len(),
                report.out_dir.display(),
                report.wall_time_s
            );
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
