//! Scenario pipeline behind the `tunnelfuse` binary: simulate, fuse, report.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use tunnel_fusion::ekf::{run_filter, PseudoMeasurement};
use tunnel_fusion::eval::{
    compute_errors, export_csv, read_events, read_log, read_truth, render_plots, write_events, write_log,
    write_truth, ErrorReport, TrajectoryLog,
};
use tunnel_fusion::par::Execution;
use tunnel_fusion::sim::{initial_estimate, run_scenario, scenario_map, ScenarioConfig, ScenarioOptions};
use tunnel_fusion::Error;

pub const TRUTH_FILE: &str = "truth.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const LOG_FILE: &str = "log.csv";
pub const SCANS_DIR: &str = "scans";

/// Process exit status of a failed command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCode {
    Config = 2,
    Data = 3,
    Evaluation = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub error: Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

trait Classify<T> {
    fn code(self, code: ExitCode) -> CliResult<T>;
}

impl<T> Classify<T> for tunnel_fusion::Result<T> {
    fn code(self, code: ExitCode) -> CliResult<T> {
        self.map_err(|error| CliError { code, error })
    }
}

/// Config-file overrides shared by the scenario commands.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub rays: Option<String>,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> CliResult<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path).code(ExitCode::Config)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(rays) = &overrides.rays {
        cfg.set_rays(rays).code(ExitCode::Config)?;
    }
    cfg.validate().code(ExitCode::Config)?;
    Ok(cfg)
}

pub struct SimulateSummary {
    pub events: usize,
    pub lidar_frames: usize,
    pub degenerate_frames: usize,
    pub failed_registrations: usize,
}

/// Writes `truth.csv`, `events.csv` and optionally `scans/` under `out`.
pub fn cmd_simulate(cfg: &ScenarioConfig, out: &Path, scan_archive: bool) -> CliResult<SimulateSummary> {
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    }).code(ExitCode::Data)?;
    let opts = ScenarioOptions {
        scan_archive: scan_archive.then(|| out.join(SCANS_DIR)),
        execution: Execution::default(),
    };
    let run = run_scenario(cfg, &opts).code(ExitCode::Config)?;
    write_truth(&out.join(TRUTH_FILE), &run.truth).code(ExitCode::Data)?;
    write_events(&out.join(EVENTS_FILE), &run.events).code(ExitCode::Data)?;
    Ok(SimulateSummary {
        events: run.events.len(),
        lidar_frames: run.lidar_frames.len(),
        degenerate_frames: run.lidar_frames.iter().filter(|f| f.degenerate).count(),
        failed_registrations: run.failed_registrations,
    })
}

/// Filters an event list over the scenario's duration.
pub fn fuse_events(cfg: &ScenarioConfig, events: &[PseudoMeasurement]) -> CliResult<TrajectoryLog> {
    let map = scenario_map(cfg).code(ExitCode::Config)?;
    let initial = initial_estimate(cfg, &map).code(ExitCode::Config)?;
    let filter_cfg = cfg.filter_config().code(ExitCode::Config)?;
    run_filter(events, initial, &filter_cfg).code(ExitCode::Data)
}

/// Reads `events`, runs the filter and writes `out/log.csv`.
pub fn cmd_fuse(cfg: &ScenarioConfig, events: &Path, out: &Path) -> CliResult<TrajectoryLog> {
    let events = read_events(events).code(ExitCode::Data)?;
    let log = fuse_events(cfg, &events)?;
    write_log(&out.join(LOG_FILE), &log).code(ExitCode::Data)?;
    Ok(log)
}

pub fn report_dir(out: &Path, name: &str) -> PathBuf {
    out.join("reports").join(name)
}

/// Writes `report.json`, `errors.csv` and the plots into `dir`.
pub fn cmd_report(log: &Path, truth: &Path, dir: &Path) -> CliResult<ErrorReport> {
    let log = read_log(log).code(ExitCode::Data)?;
    let truth = read_truth(truth).code(ExitCode::Data)?;
    write_report(&log, &truth, dir)
}

pub fn write_report(
    log: &TrajectoryLog,
    truth: &[tunnel_fusion::sim::GroundTruthSample],
    dir: &Path,
) -> CliResult<ErrorReport> {
    let report = compute_errors(log, truth).code(ExitCode::Evaluation)?;
    fs::create_dir_all(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
        .code(ExitCode::Data)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    let path = dir.join("report.json");
    fs::write(&path, json + "\n")
        .map_err(|e| Error::Io { path, source: e })
        .code(ExitCode::Data)?;
    export_csv(log, truth, &dir.join("errors.csv")).code(ExitCode::Data)?;
    render_plots(&report, log, truth, dir).code(ExitCode::Data)?;
    Ok(report)
}

/// simulate, fuse and report in one go.
pub fn cmd_run(cfg: &ScenarioConfig, out: &Path, scan_archive: bool) -> CliResult<ErrorReport> {
    let sim = cmd_simulate(cfg, out, scan_archive)?;
    info!(
        "{}: {} events, {} lidar frames ({} degenerate, {} failed)",
        cfg.name, sim.events, sim.lidar_frames, sim.degenerate_frames, sim.failed_registrations
    );
    cmd_fuse(cfg, &out.join(EVENTS_FILE), out)?;
    cmd_report(&out.join(LOG_FILE), &out.join(TRUTH_FILE), &report_dir(out, &cfg.name))
}

pub fn summary_line(name: &str, report: &ErrorReport) -> String {
    format!(
        "{name}: position RMSE {:.3} m, max error {:.3} m, heading RMSE {:.2} deg, NEES in bounds {:.1}%",
        report.position_rmse,
        report.max_position_error,
        report.heading_rmse.to_degrees(),
        100.0 * report.nees_fraction_in_bounds
    )
}
