use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use materna::registry;
use materna::service::{api, Config};
use materna::sim::{self, ScenarioOptions};

#[derive(Parser)]
#[command(name = "materna", version, about = "Maternal-care SMS gateway and device simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a facility file (CSV or GeoJSON) and report its row count.
    Seed { file: PathBuf },
    /// Run a scenario in-process and write the message report.
    Scenario {
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Config file supplying settings and, unless overridden, facilities.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Facility file; defaults to the built-in three-facility dataset.
        #[arg(long)]
        facilities: Option<PathBuf>,
        /// Write the event log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Restore state from an event log and print a summary.
    Replay { log: PathBuf },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scheduler interval in wall-clock mode, in seconds.
        #[arg(long, default_value_t = 3600)]
        tick_secs: u64,
    },
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Seed { file } => println!("{}", sim::cmd_seed(file)?),
        Command::Scenario { file, seed, out, config, facilities, log } => {
            let mut options = ScenarioOptions::table3(seed);
            if let Some(path) = config {
                let cfg = Config::load(path)?;
                options.settings = cfg.settings()?;
                options.start = cfg.virtual_start;
                if let Some(p) = &cfg.facilities_path {
                    options.facilities = registry::load_facilities_file(p)?;
                }
            }
            if let Some(path) = facilities {
                options.facilities = registry::load_facilities_file(path)?;
            }
            let run = sim::cmd_scenario(file, &options)?;
            let report = run.report.to_string();
            match out {
                Some(path) => std::fs::write(path, &report)?,
                None => print!("{report}"),
            }
            if let Some(path) = log {
                std::fs::write(path, run.service.log().to_text())?;
            }
        }
        Command::Replay { log } => print!("{}", sim::cmd_replay(log)?),
        Command::Serve { config, tick_secs } => {
            let config = match config {
                Some(path) => Config::load(path)?,
                None => Config::default(),
            };
            tokio::runtime::Runtime::new()?.block_on(api::serve(config, Duration::from_secs(tick_secs.max(1))))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("materna: {e}");
            ExitCode::FAILURE
        }
    }
}
