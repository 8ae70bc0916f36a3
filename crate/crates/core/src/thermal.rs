//! Behavioral model of a keyframe-based monocular thermal odometry.
//!
//! The model only reproduces how such a front-end fails: translation is
//! observed up to an unknown, slowly wandering scale; rotation is
//! scale-free; frames are occasionally lost when features run out.

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ekf::{PseudoMeasurement, Sensor};
use crate::error::{Error, Result};
use crate::state::{Pose2, Timestamp};

/// Smallest declared standard deviations, keeping the emitted noise SPD
/// when the simulated noise is switched off.
const MIN_DECLARED_V_SIGMA: f64 = 1e-3;
const MIN_DECLARED_PSI_DOT_SIGMA: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermalOdomParams {
    pub frame_rate: f64,
    pub keyframe_interval: u32,
    /// Log-scale random-walk intensity, per sqrt(second).
    pub scale_bias_walk_sigma: f64,
    pub initial_scale_bias: f64,
    pub v_noise_sigma: f64,
    pub psi_dot_noise_sigma: f64,
    pub dropout_probability: f64,
    /// 1-sigma relative scale uncertainty the front-end reports with each
    /// velocity. It does not change the simulated error.
    pub declared_scale_sigma: f64,
}

impl Default for ThermalOdomParams {
    fn default() -> Self {
        ThermalOdomParams {
            frame_rate: 9.0,
            keyframe_interval: 5,
            scale_bias_walk_sigma: 0.02,
            initial_scale_bias: 1.0,
            v_noise_sigma: 0.15,
            psi_dot_noise_sigma: 0.02,
            dropout_probability: 0.02,
            declared_scale_sigma: 0.2,
        }
    }
}

impl ThermalOdomParams {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            ("scale_bias_walk_sigma", self.scale_bias_walk_sigma),
            ("v_noise_sigma", self.v_noise_sigma),
            ("psi_dot_noise_sigma", self.psi_dot_noise_sigma),
            ("declared_scale_sigma", self.declared_scale_sigma),
        ];
        for (name, s) in sigmas {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("{name} must be >= 0, got {s}")));
            }
        }
        if !(0.0..=1.0).contains(&self.dropout_probability) {
            return Err(Error::invalid(format!(
                "dropout_probability must lie in [0, 1], got {}",
                self.dropout_probability
            )));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::invalid(format!("frame_rate must be positive, got {}", self.frame_rate)));
        }
        if self.keyframe_interval == 0 {
            return Err(Error::invalid("keyframe_interval must be at least 1"));
        }
        if !(self.initial_scale_bias > 0.0 && self.initial_scale_bias.is_finite()) {
            return Err(Error::invalid(format!(
                "initial_scale_bias must be positive, got {}",
                self.initial_scale_bias
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ThermalOdomState {
    pub current_scale_bias: f64,
    pub last_keyframe_pose: Pose2,
    pub last_frame_pose: Pose2,
    pub frames_since_keyframe: u32,
    rng: ChaCha8Rng,
}

impl ThermalOdomState {
    /// Starts at `pose`, which becomes the first keyframe.
    pub fn new(pose: Pose2, params: &ThermalOdomParams, seed: u64) -> Result<Self> {
        Self::with_rng(pose, params, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(pose: Pose2, params: &ThermalOdomParams, rng: ChaCha8Rng) -> Result<Self> {
        params.validate()?;
        Ok(ThermalOdomState {
            current_scale_bias: params.initial_scale_bias,
            last_keyframe_pose: pose,
            last_frame_pose: pose,
            frames_since_keyframe: 0,
            rng,
        })
    }
}

/// Advances the source by one frame ending at `true_pose`.
///
/// Every frame draws the same random numbers in the same order (scale walk,
/// velocity noise, yaw-rate noise, dropout), so the stream stays aligned
/// across parameter changes that only switch effects on or off.
pub fn thermal_step(
    state: &mut ThermalOdomState,
    true_pose: &Pose2,
    dt: f64,
    timestamp: Timestamp,
    params: &ThermalOdomParams,
) -> Result<Option<PseudoMeasurement>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let walk: f64 = StandardNormal.sample(&mut state.rng);
    let nv: f64 = StandardNormal.sample(&mut state.rng);
    let npsi: f64 = StandardNormal.sample(&mut state.rng);
    let drop: f64 = state.rng.random();

    if params.scale_bias_walk_sigma > 0.0 {
        state.current_scale_bias *= (params.scale_bias_walk_sigma * dt.sqrt() * walk).exp();
    }

    let delta = state.last_frame_pose.between(true_pose);
    let sign = if delta.x < 0.0 { -1.0 } else { 1.0 };
    let v_true = sign * delta.translation_norm() / dt;
    let psi_dot_true = delta.psi / dt;

    state.last_frame_pose = *true_pose;
    state.frames_since_keyframe += 1;
    if state.frames_since_keyframe >= params.keyframe_interval {
        state.last_keyframe_pose = *true_pose;
        state.frames_since_keyframe = 0;
    }

    if drop < params.dropout_probability {
        return Ok(None);
    }
    let v_meas = state.current_scale_bias * v_true + params.v_noise_sigma * nv;
    let psi_dot_meas = psi_dot_true + params.psi_dot_noise_sigma * npsi;

    let sv = params.v_noise_sigma.max(MIN_DECLARED_V_SIGMA);
    let sp = params.psi_dot_noise_sigma.max(MIN_DECLARED_PSI_DOT_SIGMA);
    let var_v = sv * sv + (params.declared_scale_sigma * v_meas).powi(2);
    let noise = Matrix2::new(var_v, 0.0, 0.0, sp * sp);
    PseudoMeasurement::new(v_meas, psi_dot_meas, noise, Sensor::Thermal, timestamp).map(Some)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThermalQuality {
    pub dropout_probability: f64,
    /// Multiplier on the velocity noise.
    pub noise_inflation: f64,
}

/// Degradation for a smoke / darkness `level` in `[0, 1]`: dropout and
/// velocity noise rise linearly to twice nominal.
pub fn thermal_quality(level: f64, params: &ThermalOdomParams) -> Result<ThermalQuality> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::invalid(format!("degradation level must lie in [0, 1], got {level}")));
    }
    let f = 1.0 + level;
    Ok(ThermalQuality {
        dropout_probability: (params.dropout_probability * f).min(1.0),
        noise_inflation: f,
    })
}

/// `params` with the degradation for `level` applied.
pub fn degraded_params(level: f64, params: &ThermalOdomParams) -> Result<ThermalOdomParams> {
    let q = thermal_quality(level, params)?;
    Ok(ThermalOdomParams {
        dropout_probability: q.dropout_probability,
        v_noise_sigma: params.v_noise_sigma * q.noise_inflation,
        ..params.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> ThermalOdomParams {
        ThermalOdomParams {
            scale_bias_walk_sigma: 0.0,
            v_noise_sigma: 0.0,
            psi_dot_noise_sigma: 0.0,
            dropout_probability: 0.0,
            ..ThermalOdomParams::default()
        }
    }

    /// Circle of radius 20 driven at 2 m/s.
    fn circle(t: f64) -> Pose2 {
        let w = 0.1;
        Pose2::new(20.0 * (w * t).sin(), 20.0 * (1.0 - (w * t).cos()), w * t)
    }

    fn run(params: &ThermalOdomParams, frames: usize, seed: u64) -> Vec<Option<PseudoMeasurement>> {
        let dt = 1.0 / params.frame_rate;
        let mut st = ThermalOdomState::new(circle(0.0), params, seed).unwrap();
        (1..=frames)
            .map(|k| {
                let t = k as f64 * dt;
                thermal_step(&mut st, &circle(t), dt, Timestamp::new(t).unwrap(), params).unwrap()
            })
            .collect()
    }

    #[test]
    fn noiseless_source_is_an_oracle() {
        let p = quiet();
        let dt = 1.0 / p.frame_rate;
        let mut st = ThermalOdomState::new(circle(0.0), &p, 3).unwrap();
        let mut prev = circle(0.0);
        for k in 1..40 {
            let t = k as f64 * dt;
            let now = circle(t);
            let m = thermal_step(&mut st, &now, dt, Timestamp::new(t).unwrap(), &p).unwrap().unwrap();
            let d = prev.between(&now);
            assert_eq!(m.v_meas, d.translation_norm() / dt);
            assert_eq!(m.psi_dot_meas, d.psi / dt);
            assert!((m.v_meas - 2.0).abs() < 1e-3);
            assert!((m.psi_dot_meas - 0.1).abs() < 1e-9);
            prev = now;
            assert!(st.frames_since_keyframe < p.keyframe_interval);
        }
    }

    #[test]
    fn scale_acts_on_translation_only() {
        let p = ThermalOdomParams {
            initial_scale_bias: 1.2,
            ..quiet()
        };
        let truth = run(&quiet(), 20, 1);
        let biased = run(&p, 20, 1);
        for (a, b) in truth.iter().zip(&biased) {
            let (a, b) = (a.unwrap(), b.unwrap());
            assert!((b.v_meas - 1.2 * a.v_meas).abs() < 1e-12);
            assert_eq!(a.psi_dot_meas, b.psi_dot_meas);
        }
    }

    #[test]
    fn total_dropout() {
        let p = ThermalOdomParams {
            dropout_probability: 1.0,
            ..ThermalOdomParams::default()
        };
        assert!(run(&p, 200, 5).iter().all(Option::is_none));
    }

    #[test]
    fn yaw_rate_is_unbiased_under_scale_drift() {
        let p = ThermalOdomParams {
            scale_bias_walk_sigma: 0.2,
            dropout_probability: 0.0,
            ..ThermalOdomParams::default()
        };
        let n = 10_000;
        let ms: Vec<f64> = run(&p, n, 11).into_iter().map(|m| m.unwrap().psi_dot_meas).collect();
        let mean = ms.iter().sum::<f64>() / n as f64;
        let se = p.psi_dot_noise_sigma / (n as f64).sqrt();
        assert!((mean - 0.1).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn velocity_tracks_bias_path() {
        let p = ThermalOdomParams {
            scale_bias_walk_sigma: 0.1,
            dropout_probability: 0.0,
            v_noise_sigma: 0.05,
            ..ThermalOdomParams::default()
        };
        let dt = 1.0 / p.frame_rate;
        let mut st = ThermalOdomState::new(circle(0.0), &p, 21).unwrap();
        let (mut ratio_err, mut n) = (0.0, 0.0f64);
        for k in 1..5000 {
            let t = k as f64 * dt;
            let m = thermal_step(&mut st, &circle(t), dt, Timestamp::new(t).unwrap(), &p).unwrap().unwrap();
            ratio_err += m.v_meas / 2.0 - st.current_scale_bias;
            n += 1.0;
        }
        let se = p.v_noise_sigma / 2.0 / n.sqrt();
        assert!((ratio_err / n).abs() < 3.0 * se + 1e-4);
    }

    #[test]
    fn identical_seeds_identical_streams() {
        let p = ThermalOdomParams::default();
        assert_eq!(run(&p, 300, 9), run(&p, 300, 9));
        assert_ne!(run(&p, 300, 9), run(&p, 300, 10));
    }

    #[test]
    fn quality_interpolation() {
        let p = ThermalOdomParams::default();
        for (level, f) in [(0.0, 1.0), (0.5, 1.5), (1.0, 2.0)] {
            let q = thermal_quality(level, &p).unwrap();
            assert_eq!(q.noise_inflation, f);
            assert_eq!(q.dropout_probability, p.dropout_probability * f);
        }
        assert_eq!(degraded_params(0.0, &p).unwrap(), p);
        assert!(thermal_quality(1.5, &p).is_err());
        assert!(thermal_quality(-0.1, &p).is_err());
    }

    #[test]
    fn rejects_bad_params() {
        let bad = ThermalOdomParams {
            dropout_probability: 1.5,
            ..ThermalOdomParams::default()
        };
        assert!(ThermalOdomState::new(Pose2::IDENTITY, &bad, 0).is_err());
        let mut st = ThermalOdomState::new(Pose2::IDENTITY, &ThermalOdomParams::default(), 0).unwrap();
        assert!(thermal_step(&mut st, &Pose2::IDENTITY, 0.0, Timestamp::ZERO, &ThermalOdomParams::default()).is_err());
    }
}
