//! Scan-to-scan LiDAR odometry.

mod cloud;
mod kdtree;
mod normals;
mod odometry;
mod registration;

pub use cloud::{read_ply, voxel_downsample, write_ply, Point3, PointCloud};
pub use kdtree::{brute_force_nearest, KdTree, Neighbor};
pub use normals::{estimate_normals, estimate_normals_with, NormalEstimate, MIN_NEIGHBORS};
pub use odometry::{odometry_to_pseudo, LidarOdometry, OdometryNoise, OdometryOutput, DEGENERATE_V_INFLATION};
pub use registration::{
    associate, associate_with, compute_alpha, register, register_prepared, solve_step,
    Correspondence, PreparedCloud, RegistrationParams, RegistrationResult, Residual, StepOptions,
    StepOutcome, MAX_NORMAL_CONDITION, MIN_CORRESPONDENCES,
};
