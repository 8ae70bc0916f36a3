//! Constant-acceleration unicycle model: continuous dynamics, third-order
//! Taylor discretization, its Jacobian and the white-jerk process noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{idx, symmetrize, CovarianceMatrix, Matrix7, StateVector, Vector7};

/// Spectral densities of the white jerk driving `v` and `psi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoiseParams {
    /// (m/s³)²/Hz
    pub jerk_spectral_density: f64,
    /// (rad/s³)²/Hz
    pub yaw_jerk_spectral_density: f64,
}

impl Default for ProcessNoiseParams {
    fn default() -> Self {
        ProcessNoiseParams {
            jerk_spectral_density: 0.5,
            yaw_jerk_spectral_density: 0.2,
        }
    }
}

impl ProcessNoiseParams {
    pub fn new(jerk_spectral_density: f64, yaw_jerk_spectral_density: f64) -> Result<Self> {
        let p = ProcessNoiseParams {
            jerk_spectral_density,
            yaw_jerk_spectral_density,
        };
        if !(jerk_spectral_density > 0.0 && yaw_jerk_spectral_density > 0.0) {
            return Err(Error::invalid(format!(
                "process noise densities must be strictly positive, got {p:?}"
            )));
        }
        Ok(p)
    }
}

/// Floor added to the position diagonal of `R_k`, per second of step.
pub const POSITION_NOISE_FLOOR: f64 = 1e-9;

/// `(v cos psi, v sin psi, v_dot, 0, psi_dot, psi_ddot, 0)`.
pub fn dynamics(x: &StateVector) -> Vector7 {
    let (s, c) = x.psi.sin_cos();
    Vector7::from([
        x.v * c,
        x.v * s,
        x.v_dot,
        0.0,
        x.psi_dot,
        x.psi_ddot,
        0.0,
    ])
}

fn check_step(ts: f64) -> Result<()> {
    if ts > 0.0 && ts.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("step must be positive and finite, got {ts}")))
    }
}

/// One Taylor step to third order.
///
/// With `v_dot` and `psi_ddot` held constant the time derivatives of the
/// velocity vector are
///
/// ```text
/// d/dt  (v c, v s)   = (a c - v w s,            a s + v w c)
/// d²/dt²(v c, v s)   = (-2 a w s - v α s - v w² c, 2 a w c + v α c - v w² s)
/// ```
///
/// where `a = v_dot`, `w = psi_dot`, `α = psi_ddot`. The remaining channels
/// are polynomial in time and therefore exact.
pub fn discretize(x: &StateVector, ts: f64) -> Result<StateVector> {
    check_step(ts)?;
    Ok(discretize_unchecked(x, ts))
}

pub(crate) fn discretize_unchecked(x: &StateVector, ts: f64) -> StateVector {
    let (s, c) = x.psi.sin_cos();
    let (v, a, w, al) = (x.v, x.v_dot, x.psi_dot, x.psi_ddot);
    let t1 = ts;
    let t2 = ts * ts / 2.0;
    let t3 = ts * ts * ts / 6.0;

    let dx = t1 * v * c + t2 * (a * c - v * w * s) + t3 * (-2.0 * a * w * s - v * al * s - v * w * w * c);
    let dy = t1 * v * s + t2 * (a * s + v * w * c) + t3 * (2.0 * a * w * c + v * al * c - v * w * w * s);

    StateVector {
        x: x.x + dx,
        y: x.y + dy,
        v: v + t1 * a,
        v_dot: a,
        psi: crate::state::wrap(x.psi + t1 * w + t2 * al),
        psi_dot: w + t1 * al,
        psi_ddot: al,
    }
}

/// Analytic `∂ discretize / ∂ x`.
pub fn jacobian_discrete(x: &StateVector, ts: f64) -> Matrix7 {
    use idx::*;
    let (s, c) = x.psi.sin_cos();
    let (v, a, w, al) = (x.v, x.v_dot, x.psi_dot, x.psi_ddot);
    let t1 = ts;
    let t2 = ts * ts / 2.0;
    let t3 = ts * ts * ts / 6.0;

    let mut g = Matrix7::identity();

    g[(X, V)] = t1 * c - t2 * w * s + t3 * (-al * s - w * w * c);
    g[(X, V_DOT)] = t2 * c - t3 * 2.0 * w * s;
    g[(X, PSI)] = -t1 * v * s + t2 * (-a * s - v * w * c) + t3 * (-2.0 * a * w * c - v * al * c + v * w * w * s);
    g[(X, PSI_DOT)] = -t2 * v * s + t3 * (-2.0 * a * s - 2.0 * v * w * c);
    g[(X, PSI_DDOT)] = -t3 * v * s;

    g[(Y, V)] = t1 * s + t2 * w * c + t3 * (al * c - w * w * s);
    g[(Y, V_DOT)] = t2 * s + t3 * 2.0 * w * c;
    g[(Y, PSI)] = t1 * v * c + t2 * (a * c - v * w * s) + t3 * (-2.0 * a * w * s - v * al * s - v * w * w * c);
    g[(Y, PSI_DOT)] = t2 * v * c + t3 * (2.0 * a * c - 2.0 * v * w * s);
    g[(Y, PSI_DDOT)] = t3 * v * c;

    g[(V, V_DOT)] = t1;

    g[(PSI, PSI_DOT)] = t1;
    g[(PSI, PSI_DDOT)] = t2;
    g[(PSI_DOT, PSI_DDOT)] = t1;

    g
}

/// Discretized white-jerk covariance `R_k`.
///
/// Densities of zero are accepted here (the result is then the position
/// floor only); [`ProcessNoiseParams::new`] is where strict positivity is
/// enforced for filter configuration.
pub fn process_noise(ts: f64, params: &ProcessNoiseParams) -> Result<CovarianceMatrix> {
    check_step(ts)?;
    let (qv, qp) = (params.jerk_spectral_density, params.yaw_jerk_spectral_density);
    if !(qv >= 0.0 && qp >= 0.0 && qv.is_finite() && qp.is_finite()) {
        return Err(Error::invalid(format!(
            "process noise densities must be finite and non-negative, got {params:?}"
        )));
    }
    Ok(process_noise_unchecked(ts, params))
}

pub(crate) fn process_noise_unchecked(ts: f64, params: &ProcessNoiseParams) -> CovarianceMatrix {
    use idx::*;
    let (qv, qp) = (params.jerk_spectral_density, params.yaw_jerk_spectral_density);
    let t2 = ts * ts;
    let t3 = t2 * ts;
    let t4 = t3 * ts;
    let t5 = t4 * ts;

    let mut r = Matrix7::zeros();
    r[(X, X)] = POSITION_NOISE_FLOOR * ts;
    r[(Y, Y)] = POSITION_NOISE_FLOOR * ts;

    r[(V, V)] = qv * t3 / 3.0;
    r[(V, V_DOT)] = qv * t2 / 2.0;
    r[(V_DOT, V)] = qv * t2 / 2.0;
    r[(V_DOT, V_DOT)] = qv * ts;

    let yaw = [
        [t5 / 20.0, t4 / 8.0, t3 / 6.0],
        [t4 / 8.0, t3 / 3.0, t2 / 2.0],
        [t3 / 6.0, t2 / 2.0, ts],
    ];
    let ids = [PSI, PSI_DOT, PSI_DDOT];
    for (i, ri) in ids.iter().enumerate() {
        for (j, rj) in ids.iter().enumerate() {
            r[(*ri, *rj)] = qp * yaw[i][j];
        }
    }
    r
}

/// `x⁻ = discretize(x⁺)`, `P⁻ = G P Gᵀ + R`.
pub fn predict(
    state: &StateVector,
    cov: &CovarianceMatrix,
    ts: f64,
    params: &ProcessNoiseParams,
) -> Result<(StateVector, CovarianceMatrix)> {
    check_step(ts)?;
    let noise = process_noise(ts, params)?;
    let g = jacobian_discrete(state, ts);
    let next = discretize_unchecked(state, ts);
    let p = symmetrize(&(g * cov * g.transpose() + noise));
    Ok((next, p))
}
