//! Value of the penalized game, the cost guarantee, and penalty calibration.
//!
//! At the initial belief `(xbar_0, Pbar_0)` the penalized value is
//!
//! ```text
//! J_lambda = xbar_0' P_0 xbar_0 + Tr[(P_0 + S_0) Pbar_0] + 2 r_0' xbar_0 + z_0 + sum_t z~_t
//! ```
//!
//! and any disturbance law within Gelbrich distance `theta` of the nominal at
//! every stage incurs an expected cost of at most `lambda T theta^2 + J_lambda`.
//!
//! `xbar_0` depends on the initial observation. Three protocols are
//! provided: the reference belief obtained from `y_0 = C E[x_0]` (so
//! `xbar_0 = E[x_0]`), the exact expectation over `y_0`, and a Monte Carlo
//! average over sampled `y_0`. The expectation is closed form because the
//! filter mean is affine in `y_0` with covariance `Sigma_0 - Pbar_0`.

use nalgebra::DVector;
use serde::Serialize;

use crate::controller::initial_posterior_cov;
use crate::error::{check_dim, Error, Result};
use crate::estimator::init_belief;
use crate::linalg::frobenius_dot;
use crate::model::{stream_rng, CostSpec, Distribution, Gaussian, LinearSystem, NominalDistribution, INITIAL_OBSERVATION_STREAM};
use crate::parallel::{try_map_indexed, Execution};
use crate::psd::SymMatrix;
use crate::riccati::{backward_pass, find_min_feasible_lambda, lqg_riccati, RiccatiSolution};
use crate::worst_case::{worst_case_schedule, SolverOptions, WorstCaseSchedule};

/// Everything the synthesis needs: plant, cost, nominal disturbance, and the
/// initial-state law.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub sys: LinearSystem,
    pub cost: CostSpec,
    pub nominal: NominalDistribution,
    pub initial_state: Distribution,
}

impl Problem {
    pub fn new(sys: LinearSystem, cost: CostSpec, nominal: NominalDistribution, initial_state: Distribution) -> Result<Self> {
        cost.check_against(&sys)?;
        check_dim("nominal horizon", cost.horizon, nominal.horizon())?;
        check_dim("nominal dimension", sys.nx(), nominal.dim())?;
        check_dim("initial state dimension", sys.nx(), initial_state.dim())?;
        Ok(Problem {
            sys,
            cost,
            nominal,
            initial_state,
        })
    }

    /// Posterior covariance after the initial measurement.
    pub fn p_bar0(&self) -> Result<SymMatrix> {
        initial_posterior_cov(&self.initial_state.moments().cov, &self.sys)
    }

    /// Filter mean under the reference observation `y_0 = C E[x_0]`.
    pub fn reference_mean(&self) -> DVector<f64> {
        self.initial_state.moments().mean
    }
}

/// Value at belief `(x_bar0, p_bar0)` given the Riccati solution and the
/// per-stage constants `z~_t`.
pub fn evaluate_value(sol: &RiccatiSolution, z_tilde: &[f64], x_bar0: &DVector<f64>, p_bar0: &SymMatrix) -> Result<f64> {
    check_dim("z~ length", sol.horizon(), z_tilde.len())?;
    check_dim("initial mean", sol.p[0].dim(), x_bar0.len())?;
    check_dim("initial covariance", sol.p[0].dim(), p_bar0.dim())?;
    let p0 = sol.p[0].as_matrix();
    let quad = x_bar0.dot(&(p0 * x_bar0));
    let cov_term = frobenius_dot(&(p0 + sol.s[0].as_matrix()), p_bar0.as_matrix());
    Ok(quad + cov_term + 2.0 * sol.r[0].dot(x_bar0) + sol.z[0] + z_tilde.iter().sum::<f64>())
}

/// Exact expectation of [`evaluate_value`] over the initial observation:
/// the filter mean has mean `mu` and covariance `Sigma_0 - Pbar_0`.
pub fn expected_value(sol: &RiccatiSolution, z_tilde: &[f64], x0: &Distribution, p_bar0: &SymMatrix) -> Result<f64> {
    let m = x0.moments();
    let at_mean = evaluate_value(sol, z_tilde, &m.mean, p_bar0)?;
    let spread = m.cov.as_matrix() - p_bar0.as_matrix();
    Ok(at_mean + frobenius_dot(sol.p[0].as_matrix(), &spread))
}

/// Monte Carlo average of [`evaluate_value`] over `samples` draws of
/// `y_0 = C x_0 + v_0`.
pub fn sampled_value(
    sol: &RiccatiSolution,
    z_tilde: &[f64],
    x0: &Distribution,
    sys: &LinearSystem,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::EmptySamples);
    }
    let noise = Gaussian::new(DVector::zeros(sys.ny()), sys.m.clone())?;
    let mut rng = stream_rng(seed, INITIAL_OBSERVATION_STREAM, 0);
    let mut total = 0.0;
    for _ in 0..samples {
        let x = x0.sample(&mut rng);
        let y0 = &sys.c * x + noise.sample(&mut rng);
        let belief = init_belief(x0, &y0, sys)?;
        total += evaluate_value(sol, z_tilde, &belief.mean, &belief.cov)?;
    }
    Ok(total / samples as f64)
}

/// `lambda T theta^2 + J_lambda`.
pub fn guaranteed_cost(j_lambda: f64, lambda: f64, theta: f64, horizon: usize) -> f64 {
    lambda * horizon as f64 * theta * theta + j_lambda
}

/// Nominal-case constants of the LQG policy:
/// `z~_t = Tr[S_{t+1} Pbar_{t+1}] + Tr[P_{t+1} Sigma_hat_t]` along the
/// filter path driven by the nominal covariances.
pub fn lq_z_tilde(sol: &RiccatiSolution, nominal: &NominalDistribution, sys: &LinearSystem, p_bar0: &SymMatrix) -> Result<Vec<f64>> {
    let mut p_bar = p_bar0.clone();
    let mut out = Vec::with_capacity(sol.horizon());
    for t in 0..sol.horizon() {
        let sigma = &nominal.stage(t).cov;
        let prior = SymMatrix::new(&sys.a * p_bar.as_matrix() * sys.a.transpose() + sigma.as_matrix())?;
        p_bar = crate::estimator::posterior_cov(&prior, sys)?.0;
        out.push(frobenius_dot(sol.s[t + 1].as_matrix(), p_bar.as_matrix()) + frobenius_dot(sol.p[t + 1].as_matrix(), sigma.as_matrix()));
    }
    Ok(out)
}

/// Penalized value at one `lambda`, with the data needed to reuse it.
#[derive(Debug, Clone)]
pub struct PenalizedValue {
    pub lambda: f64,
    /// Value at the reference belief.
    pub j_reference: f64,
    /// Value averaged exactly over the initial observation.
    pub j_expected: f64,
    pub riccati: RiccatiSolution,
    pub schedule: WorstCaseSchedule,
}

pub fn penalized_value(problem: &Problem, lambda: f64, opts: &SolverOptions) -> Result<PenalizedValue> {
    let p_bar0 = problem.p_bar0()?;
    let riccati = backward_pass(&problem.sys, &problem.cost, &problem.nominal, lambda)?;
    let schedule = worst_case_schedule(&riccati, &problem.nominal, &problem.sys, &p_bar0, opts)?;
    let z_tilde = schedule.z_tilde();
    Ok(PenalizedValue {
        lambda,
        j_reference: evaluate_value(&riccati, &z_tilde, &problem.reference_mean(), &p_bar0)?,
        j_expected: expected_value(&riccati, &z_tilde, &problem.initial_state, &p_bar0)?,
        riccati,
        schedule,
    })
}

/// LQG cost under the nominal law: `(reference, expected over y_0)`.
pub fn lq_value(problem: &Problem) -> Result<(f64, f64)> {
    let p_bar0 = problem.p_bar0()?;
    let sol = lqg_riccati(&problem.sys, &problem.cost, &problem.nominal)?;
    let z_tilde = lq_z_tilde(&sol, &problem.nominal, &problem.sys, &p_bar0)?;
    Ok((
        evaluate_value(&sol, &z_tilde, &problem.reference_mean(), &p_bar0)?,
        expected_value(&sol, &z_tilde, &problem.initial_state, &p_bar0)?,
    ))
}

/// Cost guarantee at a given penalty and radius, with the LQG comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostCertificate {
    pub lambda: f64,
    pub theta: f64,
    pub horizon: usize,
    /// Penalized value at the reference belief.
    pub j_lambda_reference: f64,
    /// Penalized value averaged exactly over `y_0`; the guarantee uses this one.
    pub j_lambda: f64,
    pub guaranteed_cost: f64,
    pub j_lq_reference: f64,
    pub j_lq: f64,
    /// `guaranteed_cost / j_lq`.
    pub performance_ratio: f64,
    pub solver_converged: bool,
}

/// `guaranteed / j_lq`, defined only for a positive LQG cost.
pub fn performance_ratio(guaranteed: f64, j_lq: f64) -> Result<f64> {
    if !(j_lq > 0.0 && j_lq.is_finite()) {
        return Err(Error::DegenerateLq { j_lq });
    }
    Ok(guaranteed / j_lq)
}

pub fn certify(problem: &Problem, lambda: f64, theta: f64, opts: &SolverOptions) -> Result<CostCertificate> {
    let value = penalized_value(problem, lambda, opts)?;
    let (j_lq_reference, j_lq) = lq_value(problem)?;
    let horizon = problem.cost.horizon;
    let guaranteed = guaranteed_cost(value.j_expected, lambda, theta, horizon);
    Ok(CostCertificate {
        lambda,
        theta,
        horizon,
        j_lambda_reference: value.j_reference,
        j_lambda: value.j_expected,
        guaranteed_cost: guaranteed,
        j_lq_reference,
        j_lq,
        performance_ratio: performance_ratio(guaranteed, j_lq)?,
        solver_converged: value.schedule.all_converged(),
    })
}

/// Default ratio between the upper and lower end of the calibration range.
pub const DEFAULT_LAMBDA_SPAN: f64 = 1e4;
const GRID_POINTS: usize = 41;
const GOLDEN_TOL: f64 = 1e-12;

/// Result of [`calibrate_lambda`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaCalibration {
    pub lambda: f64,
    /// `lambda T theta^2 + J_lambda` at the returned penalty.
    pub objective: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub at_lower_bound: bool,
    pub at_upper_bound: bool,
    pub evaluations: usize,
}

/// Objective of the calibration at one penalty.
pub fn calibration_objective(problem: &Problem, lambda: f64, theta: f64, opts: &SolverOptions) -> Result<f64> {
    let value = penalized_value(problem, lambda, opts)?;
    Ok(guaranteed_cost(value.j_expected, lambda, theta, problem.cost.horizon))
}

/// Minimizes the guaranteed cost over `lambda` in `[lambda_min, lambda_max]`,
/// where `lambda_min` is the smallest feasible penalty. A log-spaced grid
/// locates the basin, golden-section search on `log lambda` refines it, and
/// the best evaluated point is returned.
pub fn calibrate_lambda(problem: &Problem, theta: f64, lambda_max: Option<f64>, opts: &SolverOptions) -> Result<LambdaCalibration> {
    calibrate_lambda_with(problem, theta, lambda_max, opts, Execution::Parallel)
}

/// [`calibrate_lambda`] with the grid evaluations dispatched per `execution`.
pub fn calibrate_lambda_with(
    problem: &Problem,
    theta: f64,
    lambda_max: Option<f64>,
    opts: &SolverOptions,
    execution: Execution,
) -> Result<LambdaCalibration> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::InvalidParameter(format!("theta must be > 0, got {theta}")));
    }
    let lo = find_min_feasible_lambda(&problem.sys, &problem.cost)?;
    let hi = lambda_max.unwrap_or(lo * DEFAULT_LAMBDA_SPAN);
    if !(hi > lo) {
        return Err(Error::NoFeasibleLambda { lo, hi });
    }
    let (a, b) = (lo.ln(), hi.ln());
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| a + (b - a) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let values = try_map_indexed(GRID_POINTS, execution, |i| {
        calibration_objective(problem, grid[i].exp(), theta, opts)
    })?;
    let mut evaluations = GRID_POINTS;
    let mut eval = |log_lambda: f64| -> Result<f64> {
        evaluations += 1;
        calibration_objective(problem, log_lambda.exp(), theta, opts)
    };
    let (mut best_i, mut best) = (0, values[0]);
    for (i, &v) in values.iter().enumerate() {
        if v < best {
            best = v;
            best_i = i;
        }
    }
    let mut best_x = grid[best_i];

    let mut left = grid[best_i.saturating_sub(1)];
    let mut right = grid[(best_i + 1).min(GRID_POINTS - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = right - inv_phi * (right - left);
    let mut x2 = left + inv_phi * (right - left);
    let mut f1 = eval(x1)?;
    let mut f2 = eval(x2)?;
    while right - left > GOLDEN_TOL * (1.0 + left.abs()) {
        if f1 < f2 {
            right = x2;
            x2 = x1;
            f2 = f1;
            x1 = right - inv_phi * (right - left);
            f1 = eval(x1)?;
        } else {
            left = x1;
            x1 = x2;
            f1 = f2;
            x2 = left + inv_phi * (right - left);
            f2 = eval(x2)?;
        }
        for (x, f) in [(x1, f1), (x2, f2)] {
            if f < best {
                best = f;
                best_x = x;
            }
        }
    }

    let lambda = best_x.exp();
    let span = b - a;
    Ok(LambdaCalibration {
        lambda,
        objective: best,
        lambda_min: lo,
        lambda_max: hi,
        at_lower_bound: best_x - a <= span / (GRID_POINTS - 1) as f64 * 1e-6,
        at_upper_bound: b - best_x <= span / (GRID_POINTS - 1) as f64 * 1e-6,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostSpec, ScenarioSpec};
    use crate::psd::MomentPair;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn gaussian_problem(horizon: usize) -> Problem {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.518, 0.266, 0.405, 0.806]),
            DMatrix::from_row_slice(2, 1, &[-2.972, -2.271]),
            DMatrix::from_row_slice(1, 2, &[1.023, 1.955]),
            SymMatrix::scaled_identity(1, 0.2),
        )
        .unwrap();
        let cost = CostSpec::new(SymMatrix::identity(2), SymMatrix::identity(2), SymMatrix::identity(1), horizon).unwrap();
        let scenario = ScenarioSpec {
            true_disturbance: Distribution::gaussian(
                v(&[0.01, 0.02]),
                SymMatrix::from_rows(&[vec![0.01, 0.005], vec![0.005, 0.01]]).unwrap(),
            )
            .unwrap(),
            initial_state: Distribution::gaussian(v(&[-1.0, -1.0]), SymMatrix::scaled_identity(2, 0.001)).unwrap(),
            noise_cov: SymMatrix::scaled_identity(1, 0.2),
            sample_count: 5,
            seed: 3,
            nominal_mode: Default::default(),
        };
        let nominal = scenario.estimate_nominal(horizon).unwrap();
        Problem::new(sys, cost, nominal, scenario.initial_state).unwrap()
    }

    #[test]
    fn terminal_only_value() {
        // T = 1 with A = 0, B = 0: J = E[x0'Q x0] + E[w'Qf w]
        let sys = LinearSystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            SymMatrix::identity(1),
        )
        .unwrap();
        let cost = CostSpec::new(SymMatrix::identity(1), SymMatrix::from_diagonal(&[2.0]), SymMatrix::identity(1), 1).unwrap();
        let nominal = NominalDistribution::stage_invariant(MomentPair::new(v(&[0.5]), SymMatrix::from_diagonal(&[0.1])).unwrap(), 1);
        let x0 = Distribution::gaussian(v(&[1.0]), SymMatrix::from_diagonal(&[0.3])).unwrap();
        let problem = Problem::new(sys, cost, nominal, x0).unwrap();
        let (_, j_lq) = lq_value(&problem).unwrap();
        assert_relative_eq!(j_lq, 1.0 + 0.3 + 2.0 * (0.25 + 0.1), epsilon = 1e-12);
    }

    #[test]
    fn expected_matches_sampled() {
        let problem = gaussian_problem(5);
        let value = penalized_value(&problem, 30.0, &SolverOptions::default()).unwrap();
        let z = value.schedule.z_tilde();
        let mc = sampled_value(&value.riccati, &z, &problem.initial_state, &problem.sys, 20000, 1).unwrap();
        assert_relative_eq!(mc, value.j_expected, max_relative = 1e-3);
        assert!(value.j_expected >= value.j_reference);
    }

    #[test]
    fn guarantee_dominates_lq() {
        let problem = gaussian_problem(10);
        let cert = certify(&problem, 40.0, 0.1, &SolverOptions::default()).unwrap();
        assert!(cert.solver_converged);
        assert!(cert.j_lq <= cert.guaranteed_cost);
        assert!(cert.performance_ratio > 1.0);
        assert_relative_eq!(cert.guaranteed_cost, 40.0 * 10.0 * 0.01 + cert.j_lambda, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_lq_is_rejected() {
        assert_eq!(performance_ratio(1.0, 0.0), Err(Error::DegenerateLq { j_lq: 0.0 }));
    }

    #[test]
    fn calibration_beats_its_grid() {
        let problem = gaussian_problem(5);
        let opts = SolverOptions::default();
        let cal = calibrate_lambda(&problem, 0.1, None, &opts).unwrap();
        assert!(cal.lambda >= cal.lambda_min && cal.lambda <= cal.lambda_max);
        for i in 0..15 {
            let l = cal.lambda_min * (cal.lambda_max / cal.lambda_min).powf(i as f64 / 14.0);
            let f = calibration_objective(&problem, l, 0.1, &opts).unwrap();
            assert!(cal.objective <= f * (1.0 + 1e-9), "grid point {l} gives {f} < {}", cal.objective);
        }
    }
}
