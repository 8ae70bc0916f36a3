//! JSON scenario description.

use std::path::Path;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use super::map::MapConfig;
use super::raycast::LidarModel;
use super::trajectory::TrajectoryConfig;
use crate::ekf::{FilterConfig, ProcessNoiseParams, Sensor, DEFAULT_INITIAL_COV_DIAG, DEFAULT_TS_MAX};
use crate::error::{Error, Result};
use crate::lidar::{OdometryNoise, RegistrationParams};
use crate::par::Execution;
use crate::state::Timestamp;
use crate::thermal::ThermalOdomParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub map: MapConfig,
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub sensors: SensorsConfig,
    #[serde(default)]
    pub outages: Vec<Outage>,
    #[serde(default)]
    pub filter: FilterSettings,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorsConfig {
    pub lidar: LidarSensorConfig,
    pub thermal: ThermalOdomParams,
    /// Smoke / darkness level in `[0, 1]` degrading the thermal source.
    pub thermal_degradation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarSensorConfig {
    pub rate_hz: f64,
    pub horizontal: usize,
    pub vertical: usize,
    pub vertical_fov_deg: f64,
    pub max_range: f64,
    pub mount_height: f64,
    pub range_noise_sigma: f64,
    pub voxel_size: f64,
    pub normal_neighbors: usize,
    pub planarity_threshold: f64,
    pub linearity_threshold: f64,
    pub max_correspondence_dist: f64,
    pub max_iterations: usize,
    pub degeneracy_ratio: f64,
    /// Declared 1-sigma of a non-degenerate velocity measurement.
    pub v_sigma: f64,
    pub psi_dot_sigma: f64,
    pub cost_scale: f64,
}

impl Default for LidarSensorConfig {
    fn default() -> Self {
        let reg = RegistrationParams::default();
        let model = LidarModel::default();
        let noise = OdometryNoise::default();
        LidarSensorConfig {
            rate_hz: 10.0,
            horizontal: model.horizontal,
            vertical: model.vertical,
            vertical_fov_deg: model.vertical_fov_deg,
            max_range: model.max_range,
            mount_height: 1.5,
            range_noise_sigma: 0.01,
            voxel_size: reg.voxel_size,
            normal_neighbors: reg.normal_neighbors,
            planarity_threshold: reg.planarity_threshold,
            linearity_threshold: reg.linearity_threshold,
            max_correspondence_dist: reg.max_dist,
            max_iterations: reg.max_iterations,
            degeneracy_ratio: reg.degeneracy_ratio,
            v_sigma: noise.base[(0, 0)].sqrt(),
            psi_dot_sigma: noise.base[(1, 1)].sqrt(),
            cost_scale: noise.cost_scale,
        }
    }
}

impl LidarSensorConfig {
    pub fn model(&self) -> LidarModel {
        LidarModel {
            horizontal: self.horizontal,
            vertical: self.vertical,
            vertical_fov_deg: self.vertical_fov_deg,
            max_range: self.max_range,
        }
    }

    pub fn registration(&self, execution: Execution) -> RegistrationParams {
        RegistrationParams {
            voxel_size: self.voxel_size,
            normal_neighbors: self.normal_neighbors,
            planarity_threshold: self.planarity_threshold,
            linearity_threshold: self.linearity_threshold,
            max_dist: self.max_correspondence_dist,
            max_iterations: self.max_iterations,
            degeneracy_ratio: self.degeneracy_ratio,
            execution,
            ..RegistrationParams::default()
        }
    }

    pub fn noise(&self) -> OdometryNoise {
        OdometryNoise {
            base: Matrix2::new(self.v_sigma.powi(2), 0.0, 0.0, self.psi_dot_sigma.powi(2)),
            cost_scale: self.cost_scale,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outage {
    pub sensor: Sensor,
    pub start_s: f64,
    pub end_s: f64,
}

impl Outage {
    /// Half-open window `[start, end)`.
    pub fn covers(&self, sensor: Sensor, t: f64) -> bool {
        self.sensor == sensor && t >= self.start_s && t < self.end_s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSettings {
    pub jerk_spectral_density: f64,
    pub yaw_jerk_spectral_density: f64,
    pub initial_covariance_diag: [f64; 7],
    pub ts_max: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        let q = ProcessNoiseParams::default();
        FilterSettings {
            jerk_spectral_density: q.jerk_spectral_density,
            yaw_jerk_spectral_density: q.yaw_jerk_spectral_density,
            initial_covariance_diag: DEFAULT_INITIAL_COV_DIAG,
            ts_max: DEFAULT_TS_MAX,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {} column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() {
            return bad("name must not be empty".into());
        }
        for (i, o) in self.outages.iter().enumerate() {
            if !(o.start_s >= 0.0 && o.start_s < o.end_s && o.end_s.is_finite()) {
                return bad(format!("outages[{i}]: need 0 <= start_s < end_s, got [{}, {}]", o.start_s, o.end_s));
            }
        }
        for (i, a) in self.outages.iter().enumerate() {
            for (j, b) in self.outages.iter().enumerate().skip(i + 1) {
                if a.sensor == b.sensor && a.start_s < b.end_s && b.start_s < a.end_s {
                    return bad(format!("outages[{i}] and outages[{j}] overlap for sensor {}", a.sensor));
                }
            }
        }
        let l = &self.sensors.lidar;
        if !(l.rate_hz > 0.0 && l.rate_hz.is_finite()) {
            return bad(format!("sensors.lidar.rate_hz must be positive, got {}", l.rate_hz));
        }
        if !(l.mount_height > 0.0) {
            return bad(format!("sensors.lidar.mount_height must be positive, got {}", l.mount_height));
        }
        if !(l.v_sigma > 0.0 && l.psi_dot_sigma > 0.0 && l.cost_scale > 0.0) {
            return bad("sensors.lidar noise sigmas and cost_scale must be positive".into());
        }
        if !(l.voxel_size >= 0.0 && l.voxel_size.is_finite()) {
            return bad(format!("sensors.lidar.voxel_size must be non-negative, got {}", l.voxel_size));
        }
        if l.normal_neighbors < crate::lidar::MIN_NEIGHBORS {
            return bad(format!(
                "sensors.lidar.normal_neighbors must be at least {}, got {}",
                crate::lidar::MIN_NEIGHBORS,
                l.normal_neighbors
            ));
        }
        if !(0.0..=1.0).contains(&l.planarity_threshold) {
            return bad(format!(
                "sensors.lidar.planarity_threshold must lie in [0, 1], got {}",
                l.planarity_threshold
            ));
        }
        if !(l.linearity_threshold >= 0.0) {
            return bad(format!(
                "sensors.lidar.linearity_threshold must be non-negative, got {}",
                l.linearity_threshold
            ));
        }
        if !(l.max_correspondence_dist > 0.0 && l.max_correspondence_dist.is_finite()) || l.max_iterations == 0 {
            return bad("sensors.lidar.max_correspondence_dist and max_iterations must be positive".into());
        }
        if !(l.degeneracy_ratio > 0.0 && l.degeneracy_ratio < 1.0) {
            return bad(format!(
                "sensors.lidar.degeneracy_ratio must lie in (0, 1), got {}",
                l.degeneracy_ratio
            ));
        }
        l.model().validate().map_err(|e| Error::Config(format!("sensors.lidar: {e}")))?;
        self.sensors
            .thermal
            .validate()
            .map_err(|e| Error::Config(format!("sensors.thermal: {e}")))?;
        if !(0.0..=1.0).contains(&self.sensors.thermal_degradation) {
            return bad(format!(
                "sensors.thermal_degradation must lie in [0, 1], got {}",
                self.sensors.thermal_degradation
            ));
        }
        let f = &self.filter;
        if !(f.ts_max > 0.0 && f.ts_max.is_finite()) {
            return bad(format!("filter.ts_max must be positive, got {}", f.ts_max));
        }
        if f.initial_covariance_diag.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return bad("filter.initial_covariance_diag entries must be positive".into());
        }
        ProcessNoiseParams::new(f.jerk_spectral_density, f.yaw_jerk_spectral_density)
            .map_err(|e| Error::Config(format!("filter: {e}")))?;
        Ok(())
    }

    pub fn filter_config(&self) -> Result<FilterConfig> {
        Ok(FilterConfig {
            ts_max: self.filter.ts_max,
            process_noise: ProcessNoiseParams::new(
                self.filter.jerk_spectral_density,
                self.filter.yaw_jerk_spectral_density,
            )?,
            end_time: Some(Timestamp::new(self.trajectory.duration_s)?),
        })
    }

    /// Applies a `HxV` ray grid override.
    pub fn set_rays(&mut self, spec: &str) -> Result<()> {
        let parse = || -> Option<(usize, usize)> {
            let (h, v) = spec.split_once(['x', 'X'])?;
            Some((h.trim().parse().ok()?, v.trim().parse().ok()?))
        };
        match parse() {
            Some((h, v)) if h > 0 && v > 0 => {
                self.sensors.lidar.horizontal = h;
                self.sensors.lidar.vertical = v;
                Ok(())
            }
            _ => Err(Error::Config(format!("--rays expects HxV with positive integers, got '{spec}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "mini",
        "map": {"segments": [{"type": "straight", "length": 50}]},
        "trajectory": {"duration_s": 5, "initial_speed": 2},
        "seed": 7
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.sensors.lidar.horizontal, 1024);
        assert_eq!(c.sensors.lidar.vertical, 128);
        assert_eq!(c.sensors.thermal.frame_rate, 9.0);
        assert_eq!(c.filter.ts_max, 0.01);
        let back = ScenarioConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = MINIMAL.replace("\"seed\": 7", "\"seed\": 7, \"sede\": 8");
        let err = ScenarioConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("sede"), "{err}");
        let nested = MINIMAL.replace("\"initial_speed\": 2", "\"initial_speed\": 2, \"jerk\": 1");
        assert!(ScenarioConfig::from_json(&nested).unwrap_err().to_string().contains("jerk"));
    }

    #[test]
    fn missing_seed_rejected() {
        let text = MINIMAL.replace(",\n        \"seed\": 7", "");
        assert!(ScenarioConfig::from_json(&text).is_err());
    }

    #[test]
    fn outage_validation() {
        let with = |o: &str| MINIMAL.replace("\"seed\": 7", &format!("\"seed\": 7, \"outages\": {o}"));
        assert!(ScenarioConfig::from_json(&with(r#"[{"sensor":"lidar","start_s":1,"end_s":2}]"#)).is_ok());
        assert!(ScenarioConfig::from_json(&with(r#"[{"sensor":"lidar","start_s":2,"end_s":1}]"#)).is_err());
        let overlap = r#"[{"sensor":"lidar","start_s":1,"end_s":3},{"sensor":"lidar","start_s":2,"end_s":4}]"#;
        assert!(ScenarioConfig::from_json(&with(overlap)).is_err());
        let across = r#"[{"sensor":"lidar","start_s":1,"end_s":3},{"sensor":"thermal","start_s":2,"end_s":4}]"#;
        assert!(ScenarioConfig::from_json(&with(across)).is_ok());
    }

    #[test]
    fn ray_override() {
        let mut c = ScenarioConfig::from_json(MINIMAL).unwrap();
        c.set_rays("256x16").unwrap();
        assert_eq!((c.sensors.lidar.horizontal, c.sensors.lidar.vertical), (256, 16));
        assert!(c.set_rays("256").is_err());
        assert!(c.set_rays("0x16").is_err());
    }
}
