use nalgebra::Vector2;

use crate::ekf::{FilterStep, StepSource};
use crate::state::{idx, StateVector, Timestamp};

/// One row of a [`TrajectoryLog`].
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub timestamp: Timestamp,
    pub state: StateVector,
    pub cov_diag: [f64; 7],
    /// Off-diagonal of the position block, kept so NEES can use the full 2x2.
    pub cov_xy: f64,
    pub source: StepSource,
    pub innovation: Option<Vector2<f64>>,
}

impl LogRecord {
    pub fn from_step(step: &FilterStep) -> Self {
        let p = &step.posterior_cov;
        let mut cov_diag = [0.0; 7];
        for (i, d) in cov_diag.iter_mut().enumerate() {
            *d = p[(i, i)];
        }
        LogRecord {
            timestamp: step.timestamp,
            state: step.posterior_state,
            cov_diag,
            cov_xy: p[(idx::X, idx::Y)],
            source: step.source,
            innovation: step.innovation,
        }
    }

    pub fn position_trace(&self) -> f64 {
        self.cov_diag[idx::X] + self.cov_diag[idx::Y]
    }

    pub fn is_correction(&self) -> bool {
        matches!(self.source, StepSource::Measurement(_))
    }
}

/// Time-ordered filter output.
///
/// Timestamps are non-decreasing; equal timestamps only occur when two
/// sensors report at the same instant.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryLog {
    pub records: Vec<LogRecord>,
    /// Measurements rejected for a singular innovation covariance.
    pub skipped_updates: usize,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn corrections(&self) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(|r| r.is_correction() && r.innovation.is_some())
    }

    pub fn start(&self) -> Option<Timestamp> {
        self.records.first().map(|r| r.timestamp)
    }

    pub fn end(&self) -> Option<Timestamp> {
        self.records.last().map(|r| r.timestamp)
    }
}
