//! Pseudo-measurement model and the Kalman correction.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, SMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{idx, symmetrize, CovarianceMatrix, Matrix7, StateVector, Timestamp};

pub type MeasurementMatrix = SMatrix<f64, 2, 7>;
pub type Gain = SMatrix<f64, 7, 2>;

/// Innovation covariances with a 2-norm condition number above this are not
/// inverted.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensor {
    Lidar,
    Thermal,
}

impl Sensor {
    pub fn as_str(self) -> &'static str {
        match self {
            Sensor::Lidar => "lidar",
            Sensor::Thermal => "thermal",
        }
    }
}

impl fmt::Display for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sensor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lidar" => Ok(Sensor::Lidar),
            "thermal" => Ok(Sensor::Thermal),
            other => Err(Error::invalid(format!("unknown sensor '{other}'"))),
        }
    }
}

/// Velocity and yaw-rate observation from one odometry front-end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoMeasurement {
    pub v_meas: f64,
    pub psi_dot_meas: f64,
    pub noise: Matrix2<f64>,
    pub source: Sensor,
    pub timestamp: Timestamp,
}

impl PseudoMeasurement {
    pub fn new(
        v_meas: f64,
        psi_dot_meas: f64,
        noise: Matrix2<f64>,
        source: Sensor,
        timestamp: Timestamp,
    ) -> Result<Self> {
        if !(v_meas.is_finite() && psi_dot_meas.is_finite()) {
            return Err(Error::invalid("measurement values must be finite"));
        }
        if !is_noise_valid(&noise) {
            return Err(Error::invalid(format!(
                "measurement noise must be symmetric positive definite, got {noise:?}"
            )));
        }
        Ok(PseudoMeasurement {
            v_meas,
            psi_dot_meas,
            noise,
            source,
            timestamp,
        })
    }

    pub fn value(&self) -> Vector2<f64> {
        Vector2::new(self.v_meas, self.psi_dot_meas)
    }
}

fn is_noise_valid(q: &Matrix2<f64>) -> bool {
    q.iter().all(|c| c.is_finite())
        && q[(0, 1)] == q[(1, 0)]
        && q[(0, 0)] > 0.0
        && q[(0, 0)] * q[(1, 1)] - q[(0, 1)] * q[(1, 0)] > 0.0
}

/// Where a filter step got its information from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StepSource {
    Initial,
    Prediction,
    Measurement(Sensor),
}

impl StepSource {
    pub fn as_str(self) -> &'static str {
        match self {
            StepSource::Initial => "init",
            StepSource::Prediction => "predict",
            StepSource::Measurement(s) => s.as_str(),
        }
    }
}

impl FromStr for StepSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "init" => Ok(StepSource::Initial),
            "predict" => Ok(StepSource::Prediction),
            other => other.parse().map(StepSource::Measurement),
        }
    }
}

/// One predict/correct record.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterStep {
    pub prior_state: StateVector,
    pub prior_cov: CovarianceMatrix,
    pub posterior_state: StateVector,
    pub posterior_cov: CovarianceMatrix,
    /// Zero for prediction-only steps.
    pub gain: Gain,
    pub innovation: Option<Vector2<f64>>,
    pub source: StepSource,
    pub timestamp: Timestamp,
}

impl FilterStep {
    pub(crate) fn prediction(
        state: StateVector,
        cov: CovarianceMatrix,
        source: StepSource,
        timestamp: Timestamp,
    ) -> Self {
        FilterStep {
            prior_state: state,
            prior_cov: cov,
            posterior_state: state,
            posterior_cov: cov,
            gain: Gain::zeros(),
            innovation: None,
            source,
            timestamp,
        }
    }
}

/// Selector of `(v, psi_dot)`. Both front-ends observe the same channels.
pub fn measurement_matrix(source: Sensor) -> MeasurementMatrix {
    let mut h = MeasurementMatrix::zeros();
    match source {
        Sensor::Lidar | Sensor::Thermal => {
            h[(0, idx::V)] = 1.0;
            h[(1, idx::PSI_DOT)] = 1.0;
        }
    }
    h
}

fn condition_number(s: &Matrix2<f64>) -> f64 {
    let sv = s.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if lo <= 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Kalman correction with a pseudo-measurement.
pub fn correct(
    state: &StateVector,
    cov: &CovarianceMatrix,
    meas: &PseudoMeasurement,
) -> Result<FilterStep> {
    let h = measurement_matrix(meas.source);
    let s = symmetrize2(&(h * cov * h.transpose() + meas.noise));
    let condition = condition_number(&s);
    if !(condition <= MAX_INNOVATION_CONDITION) {
        return Err(Error::SingularUpdate { condition });
    }
    let s_inv = s
        .try_inverse()
        .ok_or(Error::SingularUpdate { condition })?;
    let k: Gain = cov * h.transpose() * s_inv;

    let prior = state.to_vector();
    let innovation = meas.value() - h * prior;
    let posterior = StateVector::from_vector(&(prior + k * innovation));
    let posterior_cov = symmetrize(&((Matrix7::identity() - k * h) * cov));

    Ok(FilterStep {
        prior_state: *state,
        prior_cov: *cov,
        posterior_state: posterior,
        posterior_cov,
        gain: k,
        innovation: Some(innovation),
        source: StepSource::Measurement(meas.source),
        timestamp: meas.timestamp,
    })
}

fn symmetrize2(m: &Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}
