use std::f64::consts::PI;

use nalgebra::{Matrix2, Rotation3, SMatrix, Vector3};
use proptest::prelude::*;
use tunnel_fusion::ekf::{
    correct, discretize, predict, run_filter_steps, FilterConfig, ProcessNoiseParams, PseudoMeasurement, Sensor,
    StepSource,
};
use tunnel_fusion::eval::{compute_errors, LogRecord, TrajectoryLog};
use tunnel_fusion::sim::{build_map, rounded_rectangle, GroundTruthSample, MapConfig, SegmentSpec};
use tunnel_fusion::state::{idx, is_spd, wrap_angle, CovarianceMatrix, Pose2, StateVector, Timestamp, Transform3};
use tunnel_fusion::thermal::{thermal_step, ThermalOdomParams, ThermalOdomState};

fn wrapped(psi: f64) -> bool {
    psi > -PI && psi <= PI
}

fn state() -> impl Strategy<Value = StateVector> {
    (
        (-200.0..200.0f64, -200.0..200.0f64, -2.0..15.0f64, -2.0..2.0f64),
        (-PI..PI, -1.0..1.0f64, -0.5..0.5f64),
    )
        .prop_map(|((x, y, v, v_dot), (psi, psi_dot, psi_ddot))| StateVector {
            x,
            y,
            v,
            v_dot,
            psi,
            psi_dot,
            psi_ddot,
        })
}

/// `A Aᵀ + εI` with entries of `A` in [-1, 1].
fn spd() -> impl Strategy<Value = CovarianceMatrix> {
    (prop::collection::vec(-1.0..1.0f64, 49), 1e-4..1.0f64).prop_map(|(a, eps)| {
        let a = SMatrix::<f64, 7, 7>::from_vec(a);
        a * a.transpose() + CovarianceMatrix::identity() * eps
    })
}

fn noise() -> impl Strategy<Value = Matrix2<f64>> {
    (1e-4..4.0f64, 1e-6..0.1f64).prop_map(|(a, b)| Matrix2::new(a, 0.0, 0.0, b))
}

fn symmetric(p: &CovarianceMatrix) -> bool {
    (p - p.transpose()).norm() <= 1e-9 * p.norm()
}

fn min_eigenvalue(p: &CovarianceMatrix) -> f64 {
    p.symmetric_eigenvalues().min()
}

proptest! {
    #[test]
    fn wrap_is_idempotent_and_in_range(x in -100.0..100.0f64) {
        let w = wrap_angle(x).unwrap();
        prop_assert!(wrapped(w));
        prop_assert_eq!(wrap_angle(w).unwrap(), w);
    }

    #[test]
    fn composed_rotations_stay_orthonormal(
        axes in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -PI..PI), 1..40),
    ) {
        let mut t = Transform3::identity();
        for (x, y, z, angle) in axes {
            let axis = Vector3::new(x, y, z);
            prop_assume!(axis.norm() > 1e-3);
            let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
            t = t.compose(&Transform3::new(r, Vector3::new(x, y, z)));
            let m = t.rotation.matrix();
            prop_assert!((m.transpose() * m - nalgebra::Matrix3::identity()).norm() < 1e-9);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pose_compose_wraps(a in (-50.0..50.0f64, -50.0..50.0f64, -PI..PI), b in (-50.0..50.0f64, -50.0..50.0f64, -PI..PI)) {
        let p = Pose2::new(a.0, a.1, a.2).compose(&Pose2::new(b.0, b.1, b.2));
        prop_assert!(wrapped(p.psi));
    }

    #[test]
    fn discretize_keeps_yaw_wrapped_and_finite(x in state(), ts in 1e-4..0.5f64) {
        let n = discretize(&x, ts).unwrap();
        prop_assert!(n.is_finite());
        prop_assert!(wrapped(n.psi));
    }

    #[test]
    fn predict_keeps_covariance_spd(x in state(), p in spd(), ts in 1e-3..0.1f64) {
        let (n, q) = predict(&x, &p, ts, &ProcessNoiseParams::default()).unwrap();
        prop_assert!(n.is_finite() && wrapped(n.psi));
        prop_assert!(symmetric(&q));
        prop_assert!(min_eigenvalue(&q) > 0.0);
    }

    #[test]
    fn correct_never_inflates_observed_channels(
        x in state(),
        p in spd(),
        r in noise(),
        z in (-5.0..15.0f64, -1.0..1.0f64),
        thermal in any::<bool>(),
    ) {
        let source = if thermal { Sensor::Thermal } else { Sensor::Lidar };
        let m = PseudoMeasurement::new(z.0, z.1, r, source, Timestamp::new(1.0).unwrap()).unwrap();
        let step = correct(&x, &p, &m).unwrap();
        let q = &step.posterior_cov;
        prop_assert!(q[(idx::V, idx::V)] <= p[(idx::V, idx::V)] * (1.0 + 1e-12));
        prop_assert!(q[(idx::PSI_DOT, idx::PSI_DOT)] <= p[(idx::PSI_DOT, idx::PSI_DOT)] * (1.0 + 1e-12));
        prop_assert!(symmetric(q));
        prop_assert!(is_spd(q));
        prop_assert!(step.innovation.unwrap().iter().all(|v| v.is_finite()));
        prop_assert!(wrapped(step.posterior_state.psi));
    }
}

fn events() -> impl Strategy<Value = Vec<PseudoMeasurement>> {
    prop::collection::vec((0.0..20.0f64, -1.0..12.0f64, -0.8..0.8f64, noise(), any::<bool>()), 0..60).prop_map(|mut raw| {
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        raw.into_iter()
            .map(|(t, v, w, r, thermal)| {
                let s = if thermal { Sensor::Thermal } else { Sensor::Lidar };
                PseudoMeasurement::new(v, w, r, s, Timestamp::new(t).unwrap()).unwrap()
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn filter_output_is_finite_wrapped_spd_and_ordered(x in state(), evs in events()) {
        let p0 = CovarianceMatrix::from_diagonal(&nalgebra::SVector::<f64, 7>::from([1.0, 1.0, 0.25, 0.25, 0.05, 0.01, 0.01]));
        let cfg = FilterConfig { end_time: Some(Timestamp::new(20.0).unwrap()), ..FilterConfig::default() };
        let (steps, skipped) = run_filter_steps(&evs, (x, p0), &cfg).unwrap();
        for w in steps.windows(2) {
            prop_assert!(w[1].timestamp >= w[0].timestamp);
        }
        for s in &steps {
            prop_assert!(s.posterior_state.is_finite());
            prop_assert!(wrapped(s.posterior_state.psi));
            prop_assert!(symmetric(&s.posterior_cov));
            prop_assert!(min_eigenvalue(&s.posterior_cov) > 0.0);
        }
        let corrections = steps.iter().filter(|s| matches!(s.source, StepSource::Measurement(_))).count();
        prop_assert_eq!(corrections + skipped, evs.len());
    }

    /// Straight-line dead reckoning from a diagonal prior: every error
    /// source only accumulates, so the position trace cannot shrink.
    #[test]
    fn straight_outage_position_trace_is_non_decreasing(
        v in 0.5..10.0f64,
        v_dot in 0.0..1.0f64,
        psi in -PI..PI,
        diag in prop::array::uniform7(1e-4..1.0f64),
    ) {
        let x = StateVector { x: 0.0, y: 0.0, v, v_dot, psi, psi_dot: 0.0, psi_ddot: 0.0 };
        let p0 = CovarianceMatrix::from_diagonal(&nalgebra::SVector::<f64, 7>::from(diag));
        let cfg = FilterConfig { end_time: Some(Timestamp::new(30.0).unwrap()), ..FilterConfig::default() };
        let (steps, _) = run_filter_steps(&[], (x, p0), &cfg).unwrap();
        let trace = |p: &CovarianceMatrix| p[(idx::X, idx::X)] + p[(idx::Y, idx::Y)];
        for w in steps.windows(2) {
            prop_assert!(trace(&w[1].posterior_cov) >= trace(&w[0].posterior_cov));
        }
    }
}

fn straight_truth(v: f64, psi: f64, n: usize, dt: f64, t0: f64) -> Vec<GroundTruthSample> {
    (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            GroundTruthSample {
                timestamp: Timestamp::new(t0 + t).unwrap(),
                state: StateVector { x: v * t * psi.cos(), y: v * t * psi.sin(), v, psi, ..StateVector::default() },
            }
        })
        .collect()
}

fn log_from(truth: &[GroundTruthSample], offsets: &[(f64, f64, f64)], var: f64) -> TrajectoryLog {
    let records = truth
        .iter()
        .zip(offsets.iter().cycle())
        .map(|(g, (dx, dy, dpsi))| {
            let mut s = g.state;
            s.x += dx;
            s.y += dy;
            s.psi = wrap_angle(s.psi + dpsi).unwrap();
            let mut cov_diag = [var; 7];
            cov_diag[idx::Y] = 2.0 * var;
            LogRecord { timestamp: g.timestamp, state: s, cov_diag, cov_xy: 0.0, source: StepSource::Prediction, innovation: None }
        })
        .collect();
    TrajectoryLog { records, skipped_updates: 0 }
}

proptest! {
    #[test]
    fn error_aggregates_are_consistent(
        v in 0.0..5.0f64,
        psi in -PI..PI,
        offsets in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64, -0.3..0.3f64), 1..20),
        var in 1e-3..4.0f64,
        shift in 0.0..500.0f64,
    ) {
        let truth = straight_truth(v, psi, 50, 0.1, 0.0);
        let report = compute_errors(&log_from(&truth, &offsets, var), &truth).unwrap();
        prop_assert!(report.position_rmse <= report.max_position_error + 1e-12);
        prop_assert!((0.0..=1.0).contains(&report.nees_fraction_in_bounds));

        let shifted = straight_truth(v, psi, 50, 0.1, shift);
        let moved = compute_errors(&log_from(&shifted, &offsets, var), &shifted).unwrap();
        prop_assert!((moved.position_rmse - report.position_rmse).abs() <= 1e-9);
        prop_assert!((moved.heading_rmse - report.heading_rmse).abs() <= 1e-9);
        prop_assert!((moved.nees_mean - report.nees_mean).abs() <= 1e-9 * (1.0 + report.nees_mean));
    }

    #[test]
    fn closed_loops_close(straight in 5.0..200.0f64, radius in 5.0..60.0f64) {
        let cfg = MapConfig { segments: rounded_rectangle(straight, radius), closed_loop: true, ..MapConfig::straight(1.0) };
        let map = build_map(&cfg, 0).unwrap();
        let (a, b) = (map.pose_at(0.0), map.pose_at(map.total_length));
        prop_assert!((a.x - b.x).abs() < 1e-6 && (a.y - b.y).abs() < 1e-6);
        prop_assert!(wrap_angle(a.psi - b.psi).unwrap().abs() < 1e-6);
    }

    #[test]
    fn thermal_state_stays_valid(seed in any::<u64>(), v in 0.0..8.0f64, w in -0.5..0.5f64) {
        let params = ThermalOdomParams { scale_bias_walk_sigma: 0.2, ..ThermalOdomParams::default() };
        let mut st = ThermalOdomState::new(Pose2::IDENTITY, &params, seed).unwrap();
        let dt = 1.0 / params.frame_rate;
        let mut pose = Pose2::IDENTITY;
        for k in 1..200 {
            pose = pose.compose(&Pose2::new(v * dt, 0.0, w * dt));
            thermal_step(&mut st, &pose, dt, Timestamp::new(k as f64 * dt).unwrap(), &params).unwrap();
            prop_assert!(st.current_scale_bias > 0.0);
            prop_assert!(st.frames_since_keyframe < params.keyframe_interval);
        }
    }
}

#[test]
fn arc_segments_are_accepted_in_open_maps() {
    let cfg = MapConfig {
        segments: vec![SegmentSpec::Straight { length: 20.0 }, SegmentSpec::Arc { radius: 30.0, angle_deg: -45.0 }],
        ..MapConfig::straight(1.0)
    };
    let map = build_map(&cfg, 3).unwrap();
    assert!((map.total_length - (20.0 + 30.0 * PI / 4.0)).abs() < 1e-9);
    assert!(wrapped(map.pose_at(map.total_length).psi));
}
