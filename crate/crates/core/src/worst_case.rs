//! The adversary's side of the penalized game.
//!
//! The worst-case mean has the closed form
//! `w* = (lambda I - P_{t+1})^{-1} (r_{t+1} + P_{t+1} (A x + B u) + lambda w_hat)`.
//!
//! The worst-case covariance maximizes
//!
//! ```text
//! f(Sigma) = Tr[S_{t+1} V(G)] + Tr[(P_{t+1} - lambda I) Sigma] + 2 lambda Tr[(Sigma^{1/2} Sigma_hat Sigma^{1/2})^{1/2}]
//! G = A Pbar_t A' + Sigma,   V(G) = G - G C' (C G C' + M)^{-1} C G
//! ```
//!
//! over the PSD cone. All three terms are concave on the PD interior (the
//! first two given `S_{t+1} >= 0`), so a projected gradient ascent with an
//! Armijo line search reaches the global maximum. The optimal value is the
//! constant `z~_t` of the value function.
//!
//! The equivalent LMI form introduces `U >= 0` bounding the fidelity term and
//! `V` bounding the posterior covariance through a Schur complement; that
//! form is not needed here, so `U` and `V` have no runtime representation.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::estimator::{kalman_gain, posterior_cov};
use crate::linalg::{frobenius_dot, solve_vec};
use crate::model::{LinearSystem, NominalDistribution};
use crate::psd::{fidelity_trace, floor_eigenvalues, SymMatrix};
use crate::riccati::RiccatiSolution;

/// Worst-case mean of the stage disturbance given the predicted drift
/// `A x + B u`.
pub fn worst_case_mean(
    p_next: &SymMatrix,
    r_next: &DVector<f64>,
    drift: &DVector<f64>,
    w_hat: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    let n = p_next.dim();
    check_dim("r_{t+1}", n, r_next.len())?;
    check_dim("drift", n, drift.len())?;
    check_dim("nominal mean", n, w_hat.len())?;
    let lhs = DMatrix::identity(n, n) * lambda - p_next.as_matrix();
    let rhs = r_next + p_next.as_matrix() * drift + w_hat * lambda;
    solve_vec(&lhs, &rhs, "lambda I - P")
}

/// Data defining the covariance maximization at one stage.
#[derive(Debug, Clone, Copy)]
pub struct CovObjectiveContext<'a> {
    pub s_next: &'a SymMatrix,
    pub p_next: &'a SymMatrix,
    pub lambda: f64,
    pub sigma_hat: &'a SymMatrix,
    /// Current posterior state covariance.
    pub p_bar: &'a SymMatrix,
    pub sys: &'a LinearSystem,
}

impl<'a> CovObjectiveContext<'a> {
    pub fn new(
        s_next: &'a SymMatrix,
        p_next: &'a SymMatrix,
        lambda: f64,
        sigma_hat: &'a SymMatrix,
        p_bar: &'a SymMatrix,
        sys: &'a LinearSystem,
    ) -> Result<Self> {
        let n = sys.nx();
        for (ctx, m) in [
            ("S_{t+1}", s_next),
            ("P_{t+1}", p_next),
            ("nominal covariance", sigma_hat),
            ("posterior covariance", p_bar),
        ] {
            check_dim(ctx, n, m.dim())?;
        }
        sigma_hat.check_psd()?;
        p_bar.check_psd()?;
        let margin = lambda - p_next.max_eigenvalue();
        if !(margin > 0.0) {
            return Err(Error::NotPd { min_eigenvalue: margin });
        }
        Ok(CovObjectiveContext {
            s_next,
            p_next,
            lambda,
            sigma_hat,
            p_bar,
            sys,
        })
    }

    /// Kalman prior `A Pbar A' + Sigma`.
    pub fn prior(&self, sigma: &SymMatrix) -> Result<SymMatrix> {
        SymMatrix::new(&self.sys.a * self.p_bar.as_matrix() * self.sys.a.transpose() + sigma.as_matrix())
    }

    fn linear_coefficient(&self) -> DMatrix<f64> {
        let n = self.sys.nx();
        self.p_next.as_matrix() - DMatrix::identity(n, n) * self.lambda
    }
}

/// Objective of the covariance maximization.
pub fn cov_objective(sigma: &SymMatrix, ctx: &CovObjectiveContext<'_>) -> Result<f64> {
    check_dim("Sigma", ctx.sys.nx(), sigma.dim())?;
    sigma.check_psd()?;
    let (v, _) = posterior_cov(&ctx.prior(sigma)?, ctx.sys)?;
    let filter_term = frobenius_dot(ctx.s_next.as_matrix(), v.as_matrix());
    let linear_term = frobenius_dot(&ctx.linear_coefficient(), sigma.as_matrix());
    let fidelity = fidelity_trace(sigma, ctx.sigma_hat)?;
    Ok(filter_term + linear_term + 2.0 * ctx.lambda * fidelity)
}

/// Gradient of [`cov_objective`] with respect to a symmetric `Sigma`:
///
/// ```text
/// (P_{t+1} - lambda I) + lambda Sigma^{-1/2} (Sigma^{1/2} Sigma_hat Sigma^{1/2})^{1/2} Sigma^{-1/2}
///     + (I - K C)' S_{t+1} (I - K C)
/// ```
///
/// Requires `Sigma` positive definite.
pub fn cov_gradient(sigma: &SymMatrix, ctx: &CovObjectiveContext<'_>) -> Result<SymMatrix> {
    check_dim("Sigma", ctx.sys.nx(), sigma.dim())?;
    let n = ctx.sys.nx();
    let eig = sigma.eigen();
    let min_eigenvalue = eig.eigenvalues.min();
    if !(min_eigenvalue > 0.0) {
        return Err(Error::NotPd { min_eigenvalue });
    }
    let vecs = &eig.eigenvectors;
    let root = vecs * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * vecs.transpose();
    let inv_root = vecs * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * vecs.transpose();
    let inner = SymMatrix::new(&root * ctx.sigma_hat.as_matrix() * &root)?;
    let inner_root = inner.map_eigenvalues(|l| l.max(0.0).sqrt());
    let fidelity_grad = &inv_root * inner_root.as_matrix() * &inv_root * ctx.lambda;

    let k = kalman_gain(&ctx.prior(sigma)?, ctx.sys)?;
    let i_kc = DMatrix::identity(n, n) - k * &ctx.sys.c;
    let filter_grad = i_kc.transpose() * ctx.s_next.as_matrix() * &i_kc;

    SymMatrix::new(ctx.linear_coefficient() + fidelity_grad + filter_grad)
}

/// Projected-gradient ascent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Stop when the projected-gradient norm drops below `tol_rel * (1 + |f|)`.
    pub tol_rel: f64,
    /// Trial step of the first iteration; later iterations start from the
    /// Barzilai-Borwein step.
    pub initial_step: f64,
    pub backtrack: f64,
    pub armijo: f64,
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 5000,
            tol_rel: 1e-7,
            initial_step: 1.0,
            backtrack: 0.5,
            armijo: 1e-4,
            record_trace: false,
        }
    }
}

/// One accepted ascent iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverIterate {
    pub iteration: usize,
    pub objective: f64,
    pub residual: f64,
    pub step: f64,
}

/// Worst-case disturbance moments at one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseStage {
    /// Worst-case mean; filled per run by the controller (empty in a schedule).
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
    /// Optimal value of the covariance maximization.
    pub z_tilde: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final projected-gradient norm.
    pub residual: f64,
    pub trace: Vec<SolverIterate>,
}

// objective values this close are indistinguishable in double precision
const ROUNDOFF_REL: f64 = 1e-14;
const STEP_MIN: f64 = 1e-30;
const STEP_MAX: f64 = 1e30;
const DIVERGENCE_SCALE: f64 = 1e12;

struct Iterate {
    sigma: SymMatrix,
    f: f64,
    grad: SymMatrix,
    residual: f64,
}

/// Maximizes [`cov_objective`] over the PSD cone starting from `x0`.
pub fn solve_worst_case_cov(ctx: &CovObjectiveContext<'_>, x0: &SymMatrix, opts: &SolverOptions) -> Result<WorstCaseStage> {
    check_dim("initial Sigma", ctx.sys.nx(), x0.dim())?;
    // iterates are kept PD so the fidelity gradient exists
    let floor = 1e-10 * (1.0 + ctx.sigma_hat.trace());
    let project = |m: &DMatrix<f64>| -> Result<SymMatrix> { Ok(floor_eigenvalues(&SymMatrix::new(m.clone())?, floor)) };
    let scale = DIVERGENCE_SCALE * (1.0 + ctx.sigma_hat.norm() + ctx.p_bar.norm() + x0.norm());

    let evaluate = |sigma: SymMatrix| -> Result<Iterate> {
        let f = cov_objective(&sigma, ctx)?;
        let grad = cov_gradient(&sigma, ctx)?;
        let residual = (project(&(sigma.as_matrix() + grad.as_matrix()))?.as_matrix() - sigma.as_matrix()).norm();
        Ok(Iterate { sigma, f, grad, residual })
    };

    let mut cur = evaluate(project(x0.as_matrix())?)?;
    let mut trace = Vec::new();
    let mut step = opts.initial_step;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if cur.residual < opts.tol_rel * (1.0 + cur.f.abs()) {
            converged = true;
            break;
        }
        let mut alpha = step;
        let next = loop {
            let candidate = project(&(cur.sigma.as_matrix() + cur.grad.as_matrix() * alpha))?;
            let d = candidate.as_matrix() - cur.sigma.as_matrix();
            let f_new = cov_objective(&candidate, ctx)?;
            if !f_new.is_finite() {
                return Err(Error::Diverged { iterations });
            }
            let predicted = opts.armijo * frobenius_dot(cur.grad.as_matrix(), &d);
            if f_new >= cur.f + predicted {
                break Some(evaluate(candidate)?);
            }
            if (f_new - cur.f).abs() <= ROUNDOFF_REL * (1.0 + cur.f.abs()) {
                // objective flat to round-off: accept only if stationarity improves
                let it = evaluate(candidate)?;
                if it.residual < cur.residual {
                    break Some(it);
                }
            }
            alpha *= opts.backtrack;
            if alpha < STEP_MIN {
                break None;
            }
        };
        let Some(next) = next else {
            // line search stalled at round-off level
            break;
        };
        iterations += 1;
        if next.sigma.norm() > scale {
            return Err(Error::Diverged { iterations });
        }

        // Barzilai-Borwein step for the next trial
        let s = next.sigma.as_matrix() - cur.sigma.as_matrix();
        let y = next.grad.as_matrix() - cur.grad.as_matrix();
        let sy = frobenius_dot(&s, &y);
        step = if sy < 0.0 {
            (frobenius_dot(&s, &s) / -sy).clamp(STEP_MIN, STEP_MAX)
        } else {
            (alpha * 2.0).min(STEP_MAX)
        };

        if opts.record_trace {
            trace.push(SolverIterate {
                iteration: iterations,
                objective: next.f,
                residual: next.residual,
                step: alpha,
            });
        }
        cur = next;
    }
    if !converged && cur.residual < opts.tol_rel * (1.0 + cur.f.abs()) {
        converged = true;
    }
    if !converged {
        log::debug!(
            "worst-case covariance ascent stopped after {iterations} iterations, residual {:e}",
            cur.residual
        );
    }

    Ok(WorstCaseStage {
        mean: DVector::zeros(0),
        cov: cur.sigma,
        z_tilde: cur.f,
        iterations,
        converged,
        residual: cur.residual,
        trace,
    })
}

/// Writes the solver trace as CSV: `iteration,objective,residual,step`.
pub fn write_solver_trace_csv<W: Write>(stage: &WorstCaseStage, mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,objective,residual,step")?;
    for it in &stage.trace {
        writeln!(out, "{},{},{},{}", it.iteration, it.objective, it.residual, it.step)?;
    }
    Ok(())
}

/// Worst-case covariances along the forward filter path. The path depends
/// only on the initial posterior covariance, never on realized data.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseSchedule {
    /// One entry per stage `t = 0..T-1`.
    pub stages: Vec<WorstCaseStage>,
    /// Posterior covariances `Pbar_0..Pbar_T` under the worst-case covariances.
    pub posterior_covs: Vec<SymMatrix>,
}

impl WorstCaseSchedule {
    pub fn z_tilde(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.z_tilde).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.stages.iter().all(|s| s.converged)
    }
}

/// Solves the covariance maximization forward in time from `p_bar0`, each
/// stage warm-started at the nominal covariance.
pub fn worst_case_schedule(
    sol: &RiccatiSolution,
    nominal: &NominalDistribution,
    sys: &LinearSystem,
    p_bar0: &SymMatrix,
    opts: &SolverOptions,
) -> Result<WorstCaseSchedule> {
    if !sol.is_penalized() {
        return Err(Error::InvalidParameter("worst-case schedule needs a finite penalty".into()));
    }
    check_dim("nominal horizon", sol.horizon(), nominal.horizon())?;
    let mut posterior_covs = Vec::with_capacity(sol.horizon() + 1);
    posterior_covs.push(p_bar0.clone());
    let mut stages = Vec::with_capacity(sol.horizon());
    for t in 0..sol.horizon() {
        let sigma_hat = &nominal.stage(t).cov;
        let stage = (|| {
            let ctx = CovObjectiveContext::new(&sol.s[t + 1], &sol.p[t + 1], sol.lambda, sigma_hat, &posterior_covs[t], sys)?;
            let stage = solve_worst_case_cov(&ctx, sigma_hat, opts)?;
            let (next, _) = posterior_cov(&ctx.prior(&stage.cov)?, sys)?;
            Ok((stage, next))
        })()
        .map_err(|e: Error| e.at_stage(t))?;
        stages.push(stage.0);
        posterior_covs.push(stage.1);
    }
    Ok(WorstCaseSchedule { stages, posterior_covs })
}
