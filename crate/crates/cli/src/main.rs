use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use jointspace::planner::Space;
use jointspace_cli::{cmd_calibrate, cmd_compare, cmd_map, cmd_plan, CliError, RunConfig};
use log::error;

#[derive(Parser)]
#[command(
    name = "jointspace",
    version,
    about = "Roadmap planning for a port-constrained surgical holder arm"
)]
struct Cli {
    /// JSON run configuration; the built-in experiment defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for `plan`; restricts `compare` to this one seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map the forbidden boundary into joint space.
    Map,
    /// Plan one path in the chosen space.
    Plan {
        #[arg(long, value_enum)]
        space: SpaceArg,
    },
    /// Run both planners over the seed list.
    Compare,
    /// Calibrate the joint-space buffer from the position-space one.
    Calibrate,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    Joint,
    Position,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    let written = match cli.command {
        Command::Map => cmd_map(&cfg)?,
        Command::Plan { space } => {
            let space = match space {
                SpaceArg::Joint => Space::Joint,
                SpaceArg::Position => Space::Position,
            };
            cmd_plan(&cfg, space, cli.seed)?
        }
        Command::Compare => cmd_compare(&cfg, cli.seed)?,
        Command::Calibrate => cmd_calibrate(&cfg)?,
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with code 2 on usage errors, matching config errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
