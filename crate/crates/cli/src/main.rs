//! `tangency` command-line driver.
//!
//! Every command reads one TOML config, writes JSON and CSV files into the
//! output directory and exits with 0 (ok), 1 (config error), 2 (validation
//! failure) or 3 (runtime error).

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tangency::config::ExperimentConfig;

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "tangency", version, about = "Random perturbations near a homoclinic tangency")]
struct Cli {
    /// TOML config; the built-in default when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `noise.seed`.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads, 0 = one per core. Never changes the results.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Check the model conditions and the noise window.
    Validate,
    /// Dump one random orbit.
    Orbit,
    /// Return times to Q along one random orbit.
    Returns,
    /// Recurrence screen of the start point over many sequences.
    Recurrence,
    /// Ulam components at each configured resolution.
    Measures,
    /// Basin weights of the start point.
    Basin,
    /// Cone propagation and return-disk checks.
    Geometry,
    /// Inner-ball radii at the configured regular points.
    Ball,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Orbit => "orbit",
            Command::Returns => "returns",
            Command::Recurrence => "recurrence",
            Command::Measures => "measures",
            Command::Basin => "basin",
            Command::Geometry => "geometry",
            Command::Ball => "ball",
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.noise.seed = s;
    }
    if let Some(d) = &cli.out {
        config.output.dir = d.clone();
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let config = load(cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let name = cli.command.name();
    let mut sink = io::Sink::new(&config, name).map_err(|e| CliError::Runtime(e.to_string()))?;
    let f = match cli.command {
        Command::Validate => commands::validate,
        Command::Orbit => commands::orbit,
        Command::Returns => commands::returns,
        Command::Recurrence => commands::recurrence,
        Command::Measures => commands::measures,
        Command::Basin => commands::basin,
        Command::Geometry => commands::geometry,
        Command::Ball => commands::ball,
    };
    let result = f(&config, &mut sink);
    if !sink.written().is_empty() {
        eprintln!("wrote {}", io::display_paths(sink.written(), &config.output.dir));
    }
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{}", summary.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}: {}", cli.command.name(), e.to_string().trim_end());
            ExitCode::from(e.exit_code())
        }
    }
}
