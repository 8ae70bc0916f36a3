use nalgebra::Matrix2;

use super::cloud::PointCloud;
use super::registration::{register_prepared, PreparedCloud, RegistrationParams, RegistrationResult};
use crate::ekf::{PseudoMeasurement, Sensor};
use crate::error::{Error, Result};
use crate::state::{transform_to_planar, Timestamp, Transform3};

/// Velocity variance multiplier applied to degenerate registrations.
pub const DEGENERATE_V_INFLATION: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometryNoise {
    pub base: Matrix2<f64>,
    /// Objective value at which the noise doubles.
    pub cost_scale: f64,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        OdometryNoise {
            base: Matrix2::new(0.4f64.powi(2), 0.0, 0.0, 0.03f64.powi(2)),
            cost_scale: 0.01,
        }
    }
}

/// Converts a scan-to-scan registration (current scan into the previous
/// scan's frame) into a `(v, psi_dot)` observation.
pub fn odometry_to_pseudo(
    result: &RegistrationResult,
    dt: f64,
    noise: &OdometryNoise,
    timestamp: Timestamp,
) -> Result<PseudoMeasurement> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if !(noise.cost_scale > 0.0) {
        return Err(Error::invalid(format!("cost_scale must be positive, got {}", noise.cost_scale)));
    }
    let (planar, _) = transform_to_planar(&result.transform)?;
    let sign = if planar.x < 0.0 { -1.0 } else { 1.0 };
    let v = sign * planar.translation_norm() / dt;
    let psi_dot = planar.psi / dt;

    let mut q = noise.base * (1.0 + result.final_cost / noise.cost_scale);
    if result.degenerate {
        q[(0, 0)] *= DEGENERATE_V_INFLATION;
    }
    PseudoMeasurement::new(v, psi_dot, q, Sensor::Lidar, timestamp)
}

/// Scan-to-scan front-end that keeps the previous prepared scan.
#[derive(Debug)]
pub struct LidarOdometry {
    params: RegistrationParams,
    noise: OdometryNoise,
    previous: Option<PreparedCloud>,
}

#[derive(Clone, Debug)]
pub struct OdometryOutput {
    pub registration: RegistrationResult,
    pub measurement: PseudoMeasurement,
}

impl LidarOdometry {
    pub fn new(params: RegistrationParams, noise: OdometryNoise) -> Self {
        LidarOdometry {
            params,
            noise,
            previous: None,
        }
    }

    pub fn params(&self) -> &RegistrationParams {
        &self.params
    }

    /// Feeds the next scan. The first scan only primes the front-end.
    ///
    /// `guess` is the predicted motion of the sensor between the two scans.
    pub fn process(&mut self, scan: &PointCloud, guess: &Transform3) -> Result<Option<OdometryOutput>> {
        let current = PreparedCloud::new(scan, &self.params)?;
        let out = match self.previous.take() {
            None => None,
            Some(prev) => {
                let dt = current.timestamp.secs() - prev.timestamp.secs();
                let registration = register_prepared(&current, &prev, guess, &self.params)?;
                let measurement = odometry_to_pseudo(&registration, dt, &self.noise, current.timestamp)?;
                Some(OdometryOutput {
                    registration,
                    measurement,
                })
            }
        };
        self.previous = Some(current);
        Ok(out)
    }

    /// Drops the stored scan so the next one starts a fresh pair.
    pub fn reset(&mut self) {
        self.previous = None;
    }
}
