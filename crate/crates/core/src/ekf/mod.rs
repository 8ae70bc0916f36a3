//! Loosely-coupled extended Kalman filter over `(x, y, v, v_dot, psi, psi_dot, psi_ddot)`.
//!
//! Both odometry front-ends are folded in as linear pseudo-measurements of
//! `(v, psi_dot)`; the filter predicts with a constant-acceleration model
//! between measurements and corrects whenever one arrives.

mod filter;
mod model;
mod update;

pub use filter::{
    run_filter, run_filter_steps, sort_events, validate_event_order, FilterConfig, OnlineFilter,
    DEFAULT_INITIAL_COV_DIAG, DEFAULT_TS_MAX,
};
pub use model::{
    discretize, dynamics, jacobian_discrete, predict, process_noise, ProcessNoiseParams,
    POSITION_NOISE_FLOOR,
};
pub use update::{
    correct, measurement_matrix, FilterStep, Gain, MeasurementMatrix, PseudoMeasurement, Sensor,
    StepSource, MAX_INNOVATION_CONDITION,
};
