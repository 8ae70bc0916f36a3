//! Synthetic tunnel: geometry, ground truth, LiDAR rendering and scenarios.

mod config;
mod map;
mod raycast;
mod scenario;
mod trajectory;

pub use config::{FilterSettings, LidarSensorConfig, Outage, ScenarioConfig, SensorsConfig};
pub use map::{build_map, rounded_rectangle, MapConfig, Segment, SegmentSpec, TunnelMap, CENTERLINE_STEP};
pub use raycast::{cast_rays, render_scan, render_scene, LidarModel, OrientedBox, Scene, Wall};
pub use scenario::{
    initial_estimate, run_scenario, scan_path, scenario_map, stream_rng, LidarFrame, ScenarioOptions,
    ScenarioOutput,
};
pub use trajectory::{generate_trajectory, GroundTruthSample, SpeedTarget, Trajectory, TrajectoryConfig};
