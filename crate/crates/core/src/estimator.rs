//! Kalman filter driven by a supplied disturbance distribution.
//!
//! The covariance update uses the Joseph form
//! `(I - K C) G (I - K C)' + K M K'` with `K = G C' (C G C' + M)^{-1}`,
//! which is algebraically equal to `G - G C' (C G C' + M)^{-1} C G` and
//! stays PSD under round-off.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::cholesky;
use crate::model::{Distribution, LinearSystem};
use crate::psd::SymMatrix;

/// Conditional mean and covariance of the state given the information so far.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
}

/// Kalman gain at prior covariance `g`.
pub fn kalman_gain(g: &SymMatrix, sys: &LinearSystem) -> Result<DMatrix<f64>> {
    check_dim("prior covariance", sys.nx(), g.dim())?;
    let c = &sys.c;
    let innovation = c * g.as_matrix() * c.transpose() + sys.m.as_matrix();
    let chol = cholesky(&innovation).ok_or(Error::SingularInnovation)?;
    // K' = S^{-1} C G
    Ok(chol.solve(&(c * g.as_matrix())).transpose())
}

/// Posterior covariance (Joseph form) and the gain used to obtain it.
pub fn posterior_cov(g: &SymMatrix, sys: &LinearSystem) -> Result<(SymMatrix, DMatrix<f64>)> {
    let k = kalman_gain(g, sys)?;
    let n = sys.nx();
    let i_kc = DMatrix::identity(n, n) - &k * &sys.c;
    let v = &i_kc * g.as_matrix() * i_kc.transpose() + &k * sys.m.as_matrix() * k.transpose();
    Ok((SymMatrix::new(v)?, k))
}

/// Prior `(A x + B u + w_mean, A P A' + w_cov)`.
pub fn predict(b: &BeliefState, u: &DVector<f64>, w_mean: &DVector<f64>, w_cov: &SymMatrix, sys: &LinearSystem) -> Result<BeliefState> {
    check_dim("belief mean", sys.nx(), b.mean.len())?;
    check_dim("belief covariance", sys.nx(), b.cov.dim())?;
    check_dim("input", sys.nu(), u.len())?;
    check_dim("disturbance mean", sys.nx(), w_mean.len())?;
    check_dim("disturbance covariance", sys.nx(), w_cov.dim())?;
    let mean = &sys.a * &b.mean + &sys.b * u + w_mean;
    let cov = SymMatrix::new(&sys.a * b.cov.as_matrix() * sys.a.transpose() + w_cov.as_matrix())?;
    Ok(BeliefState { mean, cov })
}

/// Measurement update with observation `y`.
pub fn update(prior: &BeliefState, y: &DVector<f64>, sys: &LinearSystem) -> Result<BeliefState> {
    check_dim("observation", sys.ny(), y.len())?;
    check_dim("prior mean", sys.nx(), prior.mean.len())?;
    let (cov, k) = posterior_cov(&prior.cov, sys)?;
    let innovation = y - &sys.c * &prior.mean;
    Ok(BeliefState {
        mean: &prior.mean + k * innovation,
        cov,
    })
}

/// Initial belief: the moments of the initial-state law updated with `y0`.
pub fn init_belief(x0: &Distribution, y0: &DVector<f64>, sys: &LinearSystem) -> Result<BeliefState> {
    let m = x0.moments();
    update(&BeliefState { mean: m.mean, cov: m.cov }, y0, sys)
}
