//! Shared estimation-state types and planar/spatial pose algebra.
//!
//! Angles are radians everywhere in this crate. Degrees only appear at the
//! configuration boundary.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;

use nalgebra::{Matrix3, Rotation3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector7 = SVector<f64, 7>;
pub type Matrix7 = SMatrix<f64, 7, 7>;
/// 7x7 covariance ordered like [`StateVector`].
pub type CovarianceMatrix = Matrix7;

/// Indices of the state channels inside [`Vector7`] / [`CovarianceMatrix`].
pub mod idx {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const V: usize = 2;
    pub const V_DOT: usize = 3;
    pub const PSI: usize = 4;
    pub const PSI_DOT: usize = 5;
    pub const PSI_DDOT: usize = 6;
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(psi: f64) -> Result<f64> {
    if !psi.is_finite() {
        return Err(Error::invalid(format!("cannot wrap non-finite angle {psi}")));
    }
    Ok(wrap(psi))
}

/// Infallible variant for call sites that already guarantee finiteness.
/// Non-finite input passes through unchanged.
pub(crate) fn wrap(psi: f64) -> f64 {
    if (-PI < psi) && (psi <= PI) {
        return psi;
    }
    let r = psi.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Seconds since scenario start.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(f64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0.0);

    pub fn new(seconds: f64) -> Result<Self> {
        if !seconds.is_finite() || seconds < 0.0 {
            return Err(Error::invalid(format!(
                "timestamp must be finite and non-negative, got {seconds}"
            )));
        }
        Ok(Timestamp(seconds))
    }

    pub fn secs(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.0)
    }
}

/// Planar vehicle state driven by the constant-acceleration model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub v_dot: f64,
    pub psi: f64,
    pub psi_dot: f64,
    pub psi_ddot: f64,
}

impl StateVector {
    pub fn to_vector(&self) -> Vector7 {
        Vector7::from([
            self.x,
            self.y,
            self.v,
            self.v_dot,
            self.psi,
            self.psi_dot,
            self.psi_ddot,
        ])
    }

    /// Builds a state from a raw vector, wrapping the yaw channel.
    pub fn from_vector(v: &Vector7) -> Self {
        StateVector {
            x: v[idx::X],
            y: v[idx::Y],
            v: v[idx::V],
            v_dot: v[idx::V_DOT],
            psi: wrap(v[idx::PSI]),
            psi_dot: v[idx::PSI_DOT],
            psi_ddot: v[idx::PSI_DDOT],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }

    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.psi)
    }
}

/// `(P + P^T) / 2`.
pub fn symmetrize(p: &CovarianceMatrix) -> CovarianceMatrix {
    (p + p.transpose()) * 0.5
}

/// Cholesky succeeds and the diagonal is strictly positive.
pub fn is_spd<const N: usize>(p: &SMatrix<f64, N, N>) -> bool {
    p.diagonal().iter().all(|d| *d > 0.0) && p.cholesky().is_some()
}

pub fn diagonal_covariance(diag: &[f64; 7]) -> CovarianceMatrix {
    CovarianceMatrix::from_diagonal(&Vector7::from(*diag))
}

/// SE(2) pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        x: 0.0,
        y: 0.0,
        psi: 0.0,
    };

    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Pose2 {
            x,
            y,
            psi: wrap(psi),
        }
    }

    /// `self ⊕ other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.psi.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.psi + other.psi,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.psi.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.psi,
        )
    }

    /// Pose of `other` relative to `self`, i.e. `self⁻¹ ⊕ other`.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Lifts the pose into 3D as a yaw rotation about +z with zero height.
    pub fn embed(&self) -> Transform3 {
        Transform3 {
            rotation: Rotation3::from_axis_angle(&Vector3::z_axis(), self.psi),
            translation: Vector3::new(self.x, self.y, 0.0),
        }
    }
}

pub fn pose_compose(a: &Pose2, b: &Pose2) -> Pose2 {
    a.compose(b)
}

/// Rigid transform `p ↦ R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform3 {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Transform3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform3 {
    pub fn identity() -> Self {
        Transform3 {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Transform3 {
            rotation,
            translation,
        }
    }

    /// Re-orthonormalizes `rotation`; fails if it is far from a rotation.
    pub fn from_matrix(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let rtr = rotation.transpose() * rotation;
        if (rtr - Matrix3::identity()).amax() > 1e-6 || (rotation.determinant() - 1.0).abs() > 1e-6
        {
            return Err(Error::invalid("matrix is not a proper rotation"));
        }
        Ok(Transform3 {
            rotation: Rotation3::from_matrix(&rotation),
            translation,
        })
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Transform3) -> Transform3 {
        Transform3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Transform3 {
        let r_inv = self.rotation.inverse();
        Transform3 {
            rotation: r_inv,
            translation: -(r_inv * self.translation),
        }
    }

    /// Rotation angle in `[0, π]`, stable near identity.
    pub fn rotation_angle(&self) -> f64 {
        let m = self.rotation.matrix();
        let s = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
        (0.5 * s).atan2(0.5 * (m.trace() - 1.0))
    }

    /// ZYX Euler angles `(roll, pitch, yaw)`.
    pub fn euler_zyx(&self) -> (f64, f64, f64) {
        let m = self.rotation.matrix();
        let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        (roll, pitch, yaw)
    }
}

/// Projects a 3D transform onto the ground plane.
///
/// The returned residual is `|t_z| + |roll| + |pitch|`, i.e. the part of the
/// motion the planar state cannot represent.
pub fn transform_to_planar(t: &Transform3) -> Result<(Pose2, f64)> {
    let (roll, pitch, yaw) = t.euler_zyx();
    if (pitch.abs() - FRAC_PI_2).abs() < 1e-6 {
        return Err(Error::DegenerateOrientation { pitch });
    }
    let pose = Pose2::new(t.translation.x, t.translation.y, yaw);
    let residual = t.translation.z.abs() + roll.abs() + pitch.abs();
    Ok((pose, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI).unwrap(), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-1.5 * PI).unwrap(), FRAC_PI_2, epsilon = 1e-12);
        assert_eq!(wrap_angle(-PI).unwrap(), PI);
        assert_eq!(wrap_angle(PI).unwrap(), PI);
    }

    #[test]
    fn wrap_rejects_non_finite() {
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn wrap_is_idempotent_on_many_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let a: f64 = rng.random_range(-100.0..100.0);
            let w = wrap_angle(a).unwrap();
            assert!(w > -PI && w <= PI);
            assert_eq!(wrap_angle(w).unwrap(), w);
            let k = ((a - w) / TAU).round();
            assert_abs_diff_eq!(a - w, k * TAU, epsilon = 1e-9);
        }
    }

    #[test]
    fn compose_examples() {
        let p = Pose2::new(1.5, -2.0, 0.7);
        assert_eq!(Pose2::IDENTITY.compose(&p), p);

        let q = Pose2::new(1.0, 0.0, FRAC_PI_2).compose(&Pose2::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(q.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.y, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.psi, FRAC_PI_2, epsilon = 1e-12);

        let id = p.compose(&p.inverse());
        assert_abs_diff_eq!(id.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(id.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(id.psi, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn planar_projection_examples() {
        let (p, r) = transform_to_planar(&Transform3::identity()).unwrap();
        assert_eq!(p, Pose2::IDENTITY);
        assert_eq!(r, 0.0);

        let yaw = Transform3::new(
            Rotation3::from_axis_angle(&Vector3::z_axis(), 0.3),
            Vector3::zeros(),
        );
        let (p, r) = transform_to_planar(&yaw).unwrap();
        assert_abs_diff_eq!(p.psi, 0.3, epsilon = 1e-15);
        assert_eq!((p.x, p.y), (0.0, 0.0));
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-15);

        let lifted = Transform3::new(Rotation3::identity(), Vector3::new(1.0, 2.0, 0.05));
        let (p, r) = transform_to_planar(&lifted).unwrap();
        assert_eq!(p, Pose2::new(1.0, 2.0, 0.0));
        assert_abs_diff_eq!(r, 0.05, epsilon = 1e-15);
    }

    #[test]
    fn planar_projection_rejects_gimbal_lock() {
        let t = Transform3::new(
            Rotation3::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2),
            Vector3::zeros(),
        );
        assert!(matches!(
            transform_to_planar(&t),
            Err(Error::DegenerateOrientation { .. })
        ));
    }

    #[test]
    fn residual_picks_up_roll_and_pitch() {
        let r = Rotation3::from_euler_angles(0.01, -0.02, 0.4);
        let t = Transform3::new(r, Vector3::new(0.0, 0.0, 0.1));
        let (p, res) = transform_to_planar(&t).unwrap();
        assert_abs_diff_eq!(p.psi, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(res, 0.13, epsilon = 1e-12);
    }

    #[test]
    fn transform_inverse_and_orthonormality() {
        let t = Transform3::new(
            Rotation3::from_euler_angles(0.1, 0.2, -0.3),
            Vector3::new(1.0, -2.0, 0.5),
        );
        let id = t.compose(&t.inverse());
        assert!(id.translation.norm() < 1e-12);
        assert!(id.rotation_angle() < 1e-12);
        let m = t.rotation.matrix();
        assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-9);
        assert!((m.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn state_vector_round_trip_wraps_yaw() {
        let mut v = Vector7::zeros();
        v[idx::PSI] = 3.0 * PI;
        let s = StateVector::from_vector(&v);
        assert_abs_diff_eq!(s.psi, PI, epsilon = 1e-12);
        assert_eq!(s.to_vector()[idx::V], 0.0);
    }

    fn pose() -> impl Strategy<Value = Pose2> {
        (-50.0..50.0f64, -50.0..50.0f64, -PI..PI).prop_map(|(x, y, p)| Pose2::new(x, y, p))
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in pose(), b in pose(), c in pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!((l.x - r.x).abs() < 1e-12);
            prop_assert!((l.y - r.y).abs() < 1e-12);
            prop_assert!(wrap(l.psi - r.psi).abs() < 1e-12);
        }

        #[test]
        fn inverse_laws(a in pose()) {
            for id in [a.compose(&a.inverse()), a.inverse().compose(&a)] {
                prop_assert!(id.x.abs() < 1e-12 && id.y.abs() < 1e-12);
                prop_assert!(wrap(id.psi).abs() < 1e-12);
            }
        }

        #[test]
        fn embed_then_project_is_lossless(a in pose()) {
            let (p, residual) = transform_to_planar(&a.embed()).unwrap();
            prop_assert_eq!(p.x, a.x);
            prop_assert_eq!(p.y, a.y);
            prop_assert!(wrap(p.psi - a.psi).abs() <= 4.0 * f64::EPSILON);
            prop_assert_eq!(residual, 0.0);
        }
    }
}
