use serde::{Deserialize, Serialize};

use super::map::TunnelMap;
use crate::error::{Error, Result};
use crate::state::{StateVector, Timestamp};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedTarget {
    /// Time at which the vehicle starts heading for `speed`.
    pub t_s: f64,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub duration_s: f64,
    #[serde(default)]
    pub initial_speed: f64,
    #[serde(default)]
    pub speed_profile: Vec<SpeedTarget>,
    #[serde(default = "default_accel")]
    pub accel_limit: f64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
}

fn default_accel() -> f64 {
    0.5
}
fn default_rate() -> f64 {
    100.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthSample {
    pub timestamp: Timestamp,
    pub state: StateVector,
}

/// Constant-acceleration piece of the speed profile.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Phase {
    t0: f64,
    v0: f64,
    s0: f64,
    accel: f64,
}

/// Motion along the tunnel centerline, evaluable at any time.
#[derive(Clone, Debug)]
pub struct Trajectory {
    phases: Vec<Phase>,
    pub duration: f64,
    pub sample_rate: f64,
}

impl Trajectory {
    pub fn new(config: &TrajectoryConfig, map: &TunnelMap) -> Result<Self> {
        let a = config.accel_limit;
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::invalid(format!("accel_limit must be positive, got {a}")));
        }
        if !(config.sample_rate_hz > 0.0 && config.sample_rate_hz.is_finite()) {
            return Err(Error::invalid(format!(
                "sample_rate_hz must be positive, got {}",
                config.sample_rate_hz
            )));
        }
        if !(config.duration_s > 0.0 && config.duration_s.is_finite()) {
            return Err(Error::invalid(format!("duration_s must be positive, got {}", config.duration_s)));
        }
        let speeds = std::iter::once(config.initial_speed).chain(config.speed_profile.iter().map(|s| s.speed));
        for v in speeds {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("speeds must be >= 0, got {v}")));
            }
        }
        for w in config.speed_profile.windows(2) {
            if !(w[0].t_s < w[1].t_s) {
                return Err(Error::invalid("speed_profile times must be strictly increasing"));
            }
        }
        if config.speed_profile.first().is_some_and(|s| !(s.t_s >= 0.0)) {
            return Err(Error::invalid("speed_profile times must be >= 0"));
        }

        let end = config.duration_s;
        let mut phases = Vec::new();
        let (mut t, mut v, mut s) = (0.0, config.initial_speed, 0.0);
        let mut push = |t0: f64, t1: f64, v0: f64, s0: f64, accel: f64| {
            if t1 > t0 {
                phases.push(Phase { t0, v0, s0, accel });
            }
            let dt = t1 - t0;
            (v0 + accel * dt, s0 + v0 * dt + 0.5 * accel * dt * dt)
        };
        let first = config.speed_profile.first().map_or(end, |p| p.t_s.min(end));
        (v, s) = push(t, first, v, s, 0.0);
        t = first;
        for (i, target) in config.speed_profile.iter().enumerate() {
            if target.t_s >= end {
                break;
            }
            let next = config.speed_profile.get(i + 1).map_or(end, |p| p.t_s.min(end));
            let dv = target.speed - v;
            let ramp = dv.abs() / a;
            if t + ramp <= next {
                let t_ramp = t + ramp;
                let (_, s1) = push(t, t_ramp, v, s, a.copysign(dv));
                (v, s) = push(t_ramp, next, target.speed, s1, 0.0);
            } else {
                (v, s) = push(t, next, v, s, a.copysign(dv));
            }
            t = next;
        }
        let traj = Trajectory {
            phases,
            duration: end,
            sample_rate: config.sample_rate_hz,
        };
        if !map.closed_loop && s > map.total_length + 1e-9 {
            return Err(Error::invalid(format!(
                "trajectory covers {s:.1} m but the open tunnel is only {:.1} m long",
                map.total_length
            )));
        }
        Ok(traj)
    }

    fn phase(&self, t: f64) -> &Phase {
        let i = self.phases.partition_point(|p| p.t0 <= t).saturating_sub(1);
        &self.phases[i]
    }

    /// Arclength, speed and acceleration at time `t`.
    pub fn motion(&self, t: f64) -> (f64, f64, f64) {
        let p = self.phase(t);
        let dt = t - p.t0;
        (p.s0 + p.v0 * dt + 0.5 * p.accel * dt * dt, p.v0 + p.accel * dt, p.accel)
    }

    pub fn sample(&self, map: &TunnelMap, t: f64) -> Result<GroundTruthSample> {
        let (s, v, a) = self.motion(t);
        let pose = map.pose_at(s);
        let k = map.curvature_at(s);
        Ok(GroundTruthSample {
            timestamp: Timestamp::new(t)?,
            state: StateVector {
                x: pose.x,
                y: pose.y,
                v,
                v_dot: a,
                psi: pose.psi,
                psi_dot: v * k,
                psi_ddot: a * k,
            },
        })
    }

    /// Samples at the configured rate from 0 to the duration inclusive.
    pub fn samples(&self, map: &TunnelMap) -> Result<Vec<GroundTruthSample>> {
        let n = (self.duration * self.sample_rate + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| self.sample(map, i as f64 / self.sample_rate))
            .collect()
    }
}

pub fn generate_trajectory(map: &TunnelMap, config: &TrajectoryConfig) -> Result<Vec<GroundTruthSample>> {
    Trajectory::new(config, map)?.samples(map)
}
