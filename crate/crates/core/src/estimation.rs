//! Constant-gain (steady-state) Kalman filtering.
//!
//! Only the steady-state filter exists here. The initial state covariance is
//! taken equal to the steady-state error covariance, so the time-varying
//! recursion would coincide with it from the first step. The observer is the
//! linear specialization `x̂+ = A x̂ + B u + L (y - C x̂)`.

use crate::error::{dim_err, Error, Result};
use crate::linalg::{solve_filter_dare, Mat, SymPsd, Vector};
use crate::model::LinearSystemSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec {
    /// Steady-state Kalman gain (n x p).
    pub l: Mat,
    /// Steady-state estimation error covariance.
    pub sigma_e: SymPsd,
}

/// Steady-state filter for `sys`.
///
/// A system with no process and no measurement noise is estimated exactly
/// (`Σe = 0`); its gain is then free and is taken from the unit-noise filter
/// so that `A - L C` is still stable.
pub fn build_estimator(sys: &LinearSystemSpec) -> Result<EstimatorSpec> {
    let noiseless = sys.sigma_w.iter().all(|v| *v == 0.0) && sys.sigma_v.iter().all(|v| *v == 0.0);
    let solved = if noiseless {
        solve_filter_dare(&sys.a, &sys.c, &SymPsd::identity(sys.n()), &SymPsd::identity(sys.p()))
            .map(|(_, l)| (SymPsd::zeros(sys.n()), l))
    } else {
        solve_filter_dare(&sys.a, &sys.c, &sys.sigma_w, &sys.sigma_v)
    };
    let (sigma_e, l) = solved.map_err(|e| match e {
        Error::NoConvergence { .. } | Error::NotSchurStable(_) | Error::Singular(_) => Error::NotDetectable(e.to_string()),
        other => other,
    })?;
    Ok(EstimatorSpec { l, sigma_e })
}

/// `y - C x̂`.
pub fn innovation(sys: &LinearSystemSpec, xhat: &Vector, y: &Vector) -> Result<Vector> {
    if xhat.len() != sys.n() {
        return Err(dim_err("x̂", sys.n(), xhat.len()));
    }
    if y.len() != sys.p() {
        return Err(dim_err("y", sys.p(), y.len()));
    }
    Ok(y - &sys.c * xhat)
}

/// `A x̂ + B u + L (y - C x̂)`.
pub fn estimate_step(sys: &LinearSystemSpec, est: &EstimatorSpec, xhat: &Vector, u: &Vector, y: &Vector) -> Result<Vector> {
    if u.len() != sys.m() {
        return Err(dim_err("u", sys.m(), u.len()));
    }
    let nu = innovation(sys, xhat, y)?;
    Ok(&sys.a * xhat + &sys.b * u + &est.l * nu)
}
