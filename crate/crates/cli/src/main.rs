use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use tunnel_fusion_cli::{
    cmd_fuse, cmd_report, cmd_run, cmd_simulate, load_config, report_dir, summary_line, CliResult, Overrides,
    LOG_FILE,
};

#[derive(Parser)]
#[command(name = "tunnelfuse", version, about = "LiDAR and thermal odometry fusion in simulated tunnels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// LiDAR ray grid as HxV, e.g. 256x16.
    #[arg(long)]
    rays: Option<String>,
}

impl ScenarioArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            rays: self.rays.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the scenario and write ground truth, events and scans.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
        /// Do not write the PLY scan archive.
        #[arg(long)]
        no_scan_archive: bool,
    },
    /// Run the filter over an event file.
    Fuse {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a filter log with ground truth.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Report subdirectory name.
        #[arg(long, default_value = "report")]
        name: String,
    },
    /// simulate, fuse and report.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_scan_archive: bool,
    },
}

fn execute(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Simulate {
            scenario,
            out,
            no_scan_archive,
        } => {
            let cfg = load_config(&scenario.config, &scenario.overrides())?;
            let s = cmd_simulate(&cfg, &out, !no_scan_archive)?;
            Ok(format!(
                "{}: {} events, {} lidar frames, {} degenerate, {} failed registrations",
                cfg.name, s.events, s.lidar_frames, s.degenerate_frames, s.failed_registrations
            ))
        }
        Command::Fuse { scenario, events, out } => {
            let cfg = load_config(&scenario.config, &scenario.overrides())?;
            let log = cmd_fuse(&cfg, &events, &out)?;
            Ok(format!(
                "{}: {} records, {} corrections, {} skipped -> {}",
                cfg.name,
                log.len(),
                log.corrections().count(),
                log.skipped_updates,
                out.join(LOG_FILE).display()
            ))
        }
        Command::Report { log, truth, out, name } => {
            let report = cmd_report(&log, &truth, &report_dir(&out, &name))?;
            Ok(summary_line(&name, &report))
        }
        Command::Run {
            scenario,
            out,
            no_scan_archive,
        } => {
            let cfg = load_config(&scenario.config, &scenario.overrides())?;
            let report = cmd_run(&cfg, &out, !no_scan_archive)?;
            Ok(summary_line(&cfg.name, &report))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.code as u8)
        }
    }
}
