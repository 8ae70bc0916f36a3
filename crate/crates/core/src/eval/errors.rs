use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::log::TrajectoryLog;
use crate::error::{Error, Result};
use crate::sim::GroundTruthSample;
use crate::state::wrap;

/// Two-sided 95% interval of a chi-square variable with 2 degrees of
/// freedom: `-2 ln(0.975)` and `-2 ln(0.025)`.
pub const NEES_BOUNDS_2DOF: (f64, f64) = (0.050_635_615_968_579_8, 7.377_758_908_227_871);

/// Slack allowed when checking that truth covers the log.
const SPAN_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub t: f64,
    pub x_true: f64,
    pub y_true: f64,
    pub psi_true: f64,
    pub err_pos: f64,
    pub err_psi: f64,
    pub nees: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub position_rmse: f64,
    pub max_position_error: f64,
    pub final_position_error: f64,
    pub heading_rmse: f64,
    pub nees_mean: f64,
    pub nees_fraction_in_bounds: f64,
    pub samples: Vec<ErrorSample>,
}

/// Pose of the ground truth at `t`, linear in position and along the
/// shorter arc in heading.
pub fn interpolate_truth(truth: &[GroundTruthSample], t: f64) -> Result<(f64, f64, f64)> {
    let (first, last) = match (truth.first(), truth.last()) {
        (Some(f), Some(l)) => (f.timestamp.secs(), l.timestamp.secs()),
        _ => return Err(Error::invalid("ground truth is empty")),
    };
    if t < first - SPAN_TOLERANCE || t > last + SPAN_TOLERANCE {
        return Err(Error::invalid(format!("time {t} outside ground truth span [{first}, {last}]")));
    }
    let i = truth.partition_point(|g| g.timestamp.secs() <= t);
    if i == 0 {
        let s = &truth[0].state;
        return Ok((s.x, s.y, s.psi));
    }
    let a = &truth[i - 1];
    if i == truth.len() || a.timestamp.secs() == t {
        let s = &a.state;
        return Ok((s.x, s.y, s.psi));
    }
    let b = &truth[i];
    let (ta, tb) = (a.timestamp.secs(), b.timestamp.secs());
    let f = (t - ta) / (tb - ta);
    let (sa, sb) = (&a.state, &b.state);
    Ok((
        sa.x + f * (sb.x - sa.x),
        sa.y + f * (sb.y - sa.y),
        wrap(sa.psi + f * wrap(sb.psi - sa.psi)),
    ))
}

/// `eᵀ P⁻¹ e`; zero error gives zero even for a singular `P`.
pub fn nees(e: &Vector2<f64>, p: &Matrix2<f64>) -> f64 {
    if e.iter().all(|c| *c == 0.0) {
        return 0.0;
    }
    match p.try_inverse() {
        Some(inv) => (e.transpose() * inv * e)[(0, 0)],
        None => f64::INFINITY,
    }
}

pub fn in_nees_bounds(v: f64) -> bool {
    v >= NEES_BOUNDS_2DOF.0 && v <= NEES_BOUNDS_2DOF.1
}

pub fn compute_errors(log: &TrajectoryLog, truth: &[GroundTruthSample]) -> Result<ErrorReport> {
    if log.is_empty() {
        return Err(Error::invalid("trajectory log is empty"));
    }
    let (first, last) = match (truth.first(), truth.last()) {
        (Some(f), Some(l)) => (f.timestamp.secs(), l.timestamp.secs()),
        _ => return Err(Error::invalid("ground truth is empty")),
    };
    let (ls, le) = (log.start().expect("non-empty").secs(), log.end().expect("non-empty").secs());
    if ls < first - SPAN_TOLERANCE || le > last + SPAN_TOLERANCE {
        return Err(Error::invalid(format!(
            "ground truth [{first}, {last}] does not cover the log [{ls}, {le}]"
        )));
    }

    let mut samples = Vec::with_capacity(log.len());
    for r in &log.records {
        let t = r.timestamp.secs();
        let (x, y, psi) = interpolate_truth(truth, t)?;
        let e = Vector2::new(r.state.x - x, r.state.y - y);
        let p = Matrix2::new(r.cov_diag[0], r.cov_xy, r.cov_xy, r.cov_diag[1]);
        samples.push(ErrorSample {
            t,
            x_true: x,
            y_true: y,
            psi_true: psi,
            err_pos: e.norm(),
            err_psi: wrap(r.state.psi - psi),
            nees: nees(&e, &p),
        });
    }
    let n = samples.len() as f64;
    let mean = |f: &dyn Fn(&ErrorSample) -> f64| samples.iter().map(f).sum::<f64>() / n;
    Ok(ErrorReport {
        position_rmse: mean(&|s| s.err_pos * s.err_pos).sqrt(),
        max_position_error: samples.iter().map(|s| s.err_pos).fold(0.0, f64::max),
        final_position_error: samples.last().expect("non-empty").err_pos,
        heading_rmse: mean(&|s| s.err_psi * s.err_psi).sqrt(),
        nees_mean: mean(&|s| s.nees),
        nees_fraction_in_bounds: samples.iter().filter(|s| in_nees_bounds(s.nees)).count() as f64 / n,
        samples,
    })
}
