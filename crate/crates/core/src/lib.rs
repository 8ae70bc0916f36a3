//! Thermal/LiDAR odometry fusion for GNSS-denied tunnels.
//!
//! * [`state`]: shared state and pose types.
//! * [`ekf`]: the multi-rate extended Kalman filter.
//! * [`lidar`]: hybrid point-to-point / point-to-plane scan registration.
//! * [`thermal`]: behavioral model of a keyframe-based monocular thermal odometry.
//! * [`sim`]: parametric tunnel, ground truth, ray-cast LiDAR and scenario runner.
//! * [`eval`]: error metrics, CSV export and SVG plots.

pub mod ekf;
pub mod error;
pub mod eval;
pub mod lidar;
pub mod par;
pub mod sim;
pub mod state;
pub mod thermal;

pub use error::{Error, Result};
