//! End-to-end scenario: trajectory, sensor streams and outage gating.

use std::path::{Path, PathBuf};

use log::{debug, warn};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::config::ScenarioConfig;
use super::map::{build_map, TunnelMap};
use super::raycast::render_scan;
use super::trajectory::{GroundTruthSample, Trajectory};
use crate::ekf::{sort_events, OnlineFilter, PseudoMeasurement, Sensor};
use crate::error::{Error, Result};
use crate::lidar::{write_ply, LidarOdometry};
use crate::par::Execution;
use crate::state::{diagonal_covariance, CovarianceMatrix, Pose2, StateVector, Timestamp};
use crate::thermal::{degraded_params, thermal_step, ThermalOdomState};

/// Independent random streams derived from the scenario seed.
const STREAM_THERMAL: u64 = 1;
const STREAM_SCAN_BASE: u64 = 1 << 32;

#[derive(Clone, Debug, Default)]
pub struct ScenarioOptions {
    /// Where to write `scan_NNNNNN.ply` files; `None` skips the archive.
    pub scan_archive: Option<PathBuf>,
    pub execution: Execution,
}

/// Diagnostics of one LiDAR frame pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarFrame {
    pub timestamp: Timestamp,
    pub degenerate: bool,
    pub alpha: f64,
    pub iterations: usize,
    pub final_cost: f64,
}

#[derive(Clone, Debug)]
pub struct ScenarioOutput {
    pub truth: Vec<GroundTruthSample>,
    pub events: Vec<PseudoMeasurement>,
    pub lidar_frames: Vec<LidarFrame>,
    /// Frames whose registration failed and produced no event.
    pub failed_registrations: usize,
}

/// Filter prior: the true initial state with the configured covariance.
pub fn initial_estimate(config: &ScenarioConfig, map: &TunnelMap) -> Result<(StateVector, CovarianceMatrix)> {
    let traj = Trajectory::new(&config.trajectory, map)?;
    let x0 = traj.sample(map, 0.0)?.state;
    Ok((x0, diagonal_covariance(&config.filter.initial_covariance_diag)))
}

pub fn scenario_map(config: &ScenarioConfig) -> Result<TunnelMap> {
    build_map(&config.map, config.seed)
}

enum Tick {
    Lidar(u64),
    Thermal,
}

/// Frame times `k / rate` strictly before `duration`.
fn frame_count(rate: f64, duration: f64) -> u64 {
    let n = (duration * rate - 1e-9).ceil();
    n.max(0.0) as u64
}

pub fn run_scenario(config: &ScenarioConfig, opts: &ScenarioOptions) -> Result<ScenarioOutput> {
    config.validate()?;
    let map = scenario_map(config)?;
    let traj = Trajectory::new(&config.trajectory, &map)?;
    let truth = traj.samples(&map)?;
    let duration = config.trajectory.duration_s;

    let lidar_cfg = &config.sensors.lidar;
    let model = lidar_cfg.model();
    let mut odom = LidarOdometry::new(lidar_cfg.registration(opts.execution), lidar_cfg.noise());
    let thermal_params = degraded_params(config.sensors.thermal_degradation, &config.sensors.thermal)?;
    let start_pose = traj.sample(&map, 0.0)?.state.pose();
    let mut thermal = ThermalOdomState::with_rng(start_pose, &thermal_params, stream_rng(config.seed, STREAM_THERMAL))?;
    let mut filter = OnlineFilter::new(initial_estimate(config, &map)?, &config.filter_config()?)?;

    if let Some(dir) = &opts.scan_archive {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let n_lidar = frame_count(lidar_cfg.rate_hz, duration);
    let n_thermal = frame_count(thermal_params.frame_rate, duration);
    let mut ticks: Vec<(f64, Tick)> = (0..n_lidar)
        .map(|k| (k as f64 / lidar_cfg.rate_hz, Tick::Lidar(k)))
        .chain((1..n_thermal).map(|k| (k as f64 / thermal_params.frame_rate, Tick::Thermal)))
        .collect();
    // LiDAR before thermal on equal timestamps, as in the filter.
    ticks.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then_with(|| matches!(a.1, Tick::Thermal).cmp(&matches!(b.1, Tick::Thermal)))
    });

    let in_outage = |s: Sensor, t: f64| config.outages.iter().any(|o| o.covers(s, t));
    let mut events = Vec::new();
    let mut lidar_frames = Vec::new();
    let mut failed = 0;
    let mut last_scan_estimate: Option<Pose2> = None;
    let thermal_dt = 1.0 / thermal_params.frame_rate;

    for (t, tick) in ticks {
        let ts = Timestamp::new(t)?;
        match tick {
            Tick::Lidar(k) => {
                if in_outage(Sensor::Lidar, t) {
                    odom.reset();
                    last_scan_estimate = None;
                    continue;
                }
                let pose = traj.sample(&map, t)?.state.pose();
                let mut rng = stream_rng(config.seed, STREAM_SCAN_BASE + k);
                let scan = render_scan(
                    &map,
                    &pose,
                    lidar_cfg.mount_height,
                    &model,
                    lidar_cfg.range_noise_sigma,
                    &mut rng,
                    ts,
                    opts.execution,
                )?;
                if let Some(dir) = &opts.scan_archive {
                    write_ply(&scan_path(dir, k), &scan)?;
                }
                let predicted = filter.peek(t)?.pose();
                let guess = last_scan_estimate.map_or(Pose2::IDENTITY, |prev| prev.between(&predicted));
                match odom.process(&scan, &guess.embed()) {
                    Ok(Some(out)) => {
                        let r = &out.registration;
                        lidar_frames.push(LidarFrame {
                            timestamp: ts,
                            degenerate: r.degenerate,
                            alpha: r.alpha,
                            iterations: r.iterations,
                            final_cost: r.final_cost,
                        });
                        filter.update(&out.measurement)?;
                        events.push(out.measurement);
                    }
                    Ok(None) => filter.advance_to(t)?,
                    Err(e @ Error::RegistrationFailed { .. }) => {
                        warn!("lidar frame {k} at {ts}: {e}");
                        failed += 1;
                        filter.advance_to(t)?;
                    }
                    Err(e) => return Err(e),
                }
                last_scan_estimate = Some(filter.state().pose());
            }
            Tick::Thermal => {
                let pose = traj.sample(&map, t)?.state.pose();
                let meas = thermal_step(&mut thermal, &pose, thermal_dt, ts, &thermal_params)?;
                if let Some(m) = meas.filter(|_| !in_outage(Sensor::Thermal, t)) {
                    filter.update(&m)?;
                    events.push(m);
                }
            }
        }
    }
    sort_events(&mut events);
    debug!(
        "scenario {}: {} events, {} lidar frames, {} failed registrations",
        config.name,
        events.len(),
        lidar_frames.len(),
        failed
    );
    Ok(ScenarioOutput {
        truth,
        events,
        lidar_frames,
        failed_registrations: failed,
    })
}

pub fn scan_path(dir: &Path, frame: u64) -> PathBuf {
    dir.join(format!("scan_{frame:06}.ply"))
}

/// Independent ChaCha stream `stream` of the scenario seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
