//! Closed-loop simulation of the output-feedback policies.
//!
//! Both policies apply `u_t = K_t xbar_t + L_t` to the filter mean. They
//! differ in the gains and in the disturbance moments fed to the filter
//! prediction: the nominal `(w_hat_t, Sigma_hat_t)` for LQG, the worst-case
//! `(w*_t, Sigma*_t)` for WDRC.
//!
//! Per run, the random numbers come from a single stream: slot 0 yields
//! `x_0` then `v_0`, slot `t + 1` yields `w_t` then `v_{t+1}`. Two policies
//! simulated on the same stream see identical realizations.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::estimator::{posterior_cov, predict, update, BeliefState};
use crate::model::{stream_rng, CostSpec, Gaussian, LinearSystem, NominalDistribution, ScenarioSpec};
use crate::psd::SymMatrix;
use crate::riccati::{backward_pass, lqg_riccati, RiccatiSolution};
use crate::worst_case::{
    solve_worst_case_cov, worst_case_mean, worst_case_schedule, CovObjectiveContext, SolverOptions, WorstCaseSchedule, WorstCaseStage,
};

/// Covariance mismatch above which a cached worst-case stage is recomputed.
const SCHEDULE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerMode {
    Wdrc,
    Lqg,
}

impl ControllerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerMode::Wdrc => "wdrc",
            ControllerMode::Lqg => "lqg",
        }
    }
}

/// Posterior covariance after the initial measurement update. It depends on
/// the initial-state covariance only, so it is the same for every run.
pub fn initial_posterior_cov(x0_cov: &SymMatrix, sys: &LinearSystem) -> Result<SymMatrix> {
    Ok(posterior_cov(x0_cov, sys)?.0)
}

/// A synthesized policy: gains plus the disturbance model of its filter.
#[derive(Debug, Clone)]
pub struct Policy {
    pub mode: ControllerMode,
    pub riccati: RiccatiSolution,
    pub nominal: NominalDistribution,
    /// Worst-case covariances along the filter path (WDRC only).
    pub schedule: Option<WorstCaseSchedule>,
    pub solver: SolverOptions,
}

impl Policy {
    /// WDRC policy at penalty `lambda`; `p_bar0` is the initial posterior covariance.
    pub fn wdrc(
        sys: &LinearSystem,
        cost: &CostSpec,
        nominal: &NominalDistribution,
        lambda: f64,
        p_bar0: &SymMatrix,
        solver: &SolverOptions,
    ) -> Result<Policy> {
        let riccati = backward_pass(sys, cost, nominal, lambda)?;
        let schedule = worst_case_schedule(&riccati, nominal, sys, p_bar0, solver)?;
        Ok(Policy {
            mode: ControllerMode::Wdrc,
            riccati,
            nominal: nominal.clone(),
            schedule: Some(schedule),
            solver: *solver,
        })
    }

    pub fn lqg(sys: &LinearSystem, cost: &CostSpec, nominal: &NominalDistribution) -> Result<Policy> {
        Ok(Policy {
            mode: ControllerMode::Lqg,
            riccati: lqg_gains(sys, cost, nominal)?,
            nominal: nominal.clone(),
            schedule: None,
            solver: SolverOptions::default(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.riccati.horizon()
    }

    /// `K_t xbar + L_t`.
    pub fn control_input(&self, t: usize, x_bar: &DVector<f64>) -> DVector<f64> {
        control_input(&self.riccati, t, x_bar)
    }

    /// Disturbance moments fed to the filter prediction at stage `t`. For
    /// WDRC the covariance comes from the schedule unless the filter
    /// covariance has drifted from the scheduled path.
    fn filter_moments(&self, t: usize, belief: &BeliefState, u: &DVector<f64>, sys: &LinearSystem) -> Result<(DVector<f64>, SymMatrix)> {
        let nominal = self.nominal.stage(t);
        let Some(schedule) = &self.schedule else {
            return Ok((nominal.mean.clone(), nominal.cov.clone()));
        };
        let sol = &self.riccati;
        let drift = &sys.a * &belief.mean + &sys.b * u;
        let mean = worst_case_mean(&sol.p[t + 1], &sol.r[t + 1], &drift, &nominal.mean, sol.lambda)?;
        let scheduled = &schedule.posterior_covs[t];
        let cov = if (scheduled.as_matrix() - belief.cov.as_matrix()).amax() <= SCHEDULE_TOL {
            schedule.stages[t].cov.clone()
        } else {
            let ctx = CovObjectiveContext::new(&sol.s[t + 1], &sol.p[t + 1], sol.lambda, &nominal.cov, &belief.cov, sys)?;
            solve_worst_case_cov(&ctx, &nominal.cov, &self.solver)?.cov
        };
        Ok((mean, cov))
    }

    /// Worst-case stage data for stage `t`, including the mean at `(x_bar, u)`.
    pub fn worst_case_stage(&self, t: usize, x_bar: &DVector<f64>, sys: &LinearSystem) -> Result<Option<WorstCaseStage>> {
        let Some(schedule) = &self.schedule else {
            return Ok(None);
        };
        let sol = &self.riccati;
        let u = self.control_input(t, x_bar);
        let drift = &sys.a * x_bar + &sys.b * &u;
        let mut stage = schedule.stages[t].clone();
        stage.mean = worst_case_mean(&sol.p[t + 1], &sol.r[t + 1], &drift, &self.nominal.stage(t).mean, sol.lambda)?;
        Ok(Some(stage))
    }
}

/// LQG gains: the recursion without penalty, which reduces to the textbook
/// `K_t = -(R + B' P_{t+1} B)^{-1} B' P_{t+1} A`.
pub fn lqg_gains(sys: &LinearSystem, cost: &CostSpec, nominal: &NominalDistribution) -> Result<RiccatiSolution> {
    lqg_riccati(sys, cost, nominal)
}

pub fn control_input(sol: &RiccatiSolution, t: usize, x_bar: &DVector<f64>) -> DVector<f64> {
    &sol.k[t] * x_bar + &sol.l[t]
}

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    /// `x_0..x_T`.
    pub states: Vec<DVector<f64>>,
    /// `u_0..u_{T-1}`.
    pub inputs: Vec<DVector<f64>>,
    /// `y_0..y_T`.
    pub observations: Vec<DVector<f64>>,
    /// Filter means `xbar_0..xbar_T`.
    pub estimates: Vec<DVector<f64>>,
    /// Disturbance means fed to the filter at `t = 0..T-1`.
    pub filter_means: Vec<DVector<f64>>,
    pub cost: f64,
}

impl SimulationTrace {
    /// Realized quadratic cost recomputed from the stored trajectory.
    pub fn recompute_cost(&self, cost: &CostSpec) -> f64 {
        let stage: f64 = self
            .inputs
            .iter()
            .zip(&self.states)
            .map(|(u, x)| quad(cost.q.as_matrix(), x) + quad(cost.r.as_matrix(), u))
            .sum();
        let terminal = self.states.last().map_or(0.0, |x| quad(cost.qf.as_matrix(), x));
        stage + terminal
    }

    /// CSV with one row per stage: `t,x...,u...,y...,xbar...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let nx = self.states.first().map_or(0, |x| x.len());
        let nu = self.inputs.first().map_or(0, |u| u.len());
        let ny = self.observations.first().map_or(0, |y| y.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..nx).map(|i| format!("x{i}")));
        header.extend((0..nu).map(|i| format!("u{i}")));
        header.extend((0..ny).map(|i| format!("y{i}")));
        header.extend((0..nx).map(|i| format!("xbar{i}")));
        writeln!(out, "{}", header.join(","))?;
        for t in 0..self.states.len() {
            let mut row = vec![t.to_string()];
            row.extend(self.states[t].iter().map(f64::to_string));
            match self.inputs.get(t) {
                Some(u) => row.extend(u.iter().map(f64::to_string)),
                None => row.extend((0..nu).map(|_| String::new())),
            }
            row.extend(self.observations[t].iter().map(f64::to_string));
            row.extend(self.estimates[t].iter().map(f64::to_string));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn quad(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Simulates one run of `policy` on random stream `stream`.
pub fn run_closed_loop(
    policy: &Policy,
    sys: &LinearSystem,
    cost: &CostSpec,
    scenario: &ScenarioSpec,
    stream: u64,
) -> Result<SimulationTrace> {
    let horizon = policy.horizon();
    check_dim("policy horizon", cost.horizon, horizon)?;
    scenario.validate(sys)?;
    let noise = Gaussian::new(DVector::zeros(sys.ny()), scenario.noise_cov.clone())?;

    let mut rng = stream_rng(scenario.seed, stream, 0);
    let mut x = scenario.initial_state.sample(&mut rng);
    let y0 = &sys.c * &x + noise.sample(&mut rng);
    let x0_moments = scenario.initial_state.moments();
    let mut belief = update(
        &BeliefState {
            mean: x0_moments.mean,
            cov: x0_moments.cov,
        },
        &y0,
        sys,
    )?;

    let mut trace = SimulationTrace {
        states: Vec::with_capacity(horizon + 1),
        inputs: Vec::with_capacity(horizon),
        observations: Vec::with_capacity(horizon + 1),
        estimates: Vec::with_capacity(horizon + 1),
        filter_means: Vec::with_capacity(horizon),
        cost: 0.0,
    };
    trace.observations.push(y0);
    trace.estimates.push(belief.mean.clone());

    for t in 0..horizon {
        let u = policy.control_input(t, &belief.mean);
        trace.cost += quad(cost.q.as_matrix(), &x) + quad(cost.r.as_matrix(), &u);

        let mut rng = stream_rng(scenario.seed, stream, t as u64 + 1);
        let w = scenario.true_disturbance.sample(&mut rng);
        let v = noise.sample(&mut rng);
        let x_next = &sys.a * &x + &sys.b * &u + w;
        let y = &sys.c * &x_next + v;

        let (w_mean, w_cov) = policy.filter_moments(t, &belief, &u, sys).map_err(|e| e.at_stage(t))?;
        let prior = predict(&belief, &u, &w_mean, &w_cov, sys)?;
        belief = update(&prior, &y, sys).map_err(|e| e.at_stage(t))?;

        trace.states.push(std::mem::replace(&mut x, x_next));
        trace.inputs.push(u);
        trace.observations.push(y);
        trace.estimates.push(belief.mean.clone());
        trace.filter_means.push(w_mean);
    }
    trace.cost += quad(cost.qf.as_matrix(), &x);
    trace.states.push(x);
    if !trace.cost.is_finite() {
        return Err(Error::Diverged { iterations: horizon });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Distribution;
    use crate::psd::MomentPair;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn plant() -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.518, 0.266, 0.405, 0.806]),
            DMatrix::from_row_slice(2, 1, &[-2.972, -2.271]),
            DMatrix::from_row_slice(1, 2, &[1.023, 1.955]),
            SymMatrix::scaled_identity(1, 0.2),
        )
        .unwrap()
    }

    fn setup(horizon: usize) -> (LinearSystem, CostSpec, ScenarioSpec, NominalDistribution) {
        let sys = plant();
        let cost = CostSpec::new(SymMatrix::identity(2), SymMatrix::identity(2), SymMatrix::identity(1), horizon).unwrap();
        let sigma = SymMatrix::from_rows(&[vec![0.01, 0.005], vec![0.005, 0.01]]).unwrap();
        let scenario = ScenarioSpec {
            true_disturbance: Distribution::gaussian(v(&[0.01, 0.02]), sigma).unwrap(),
            initial_state: Distribution::gaussian(v(&[-1.0, -1.0]), SymMatrix::scaled_identity(2, 0.001)).unwrap(),
            noise_cov: SymMatrix::scaled_identity(1, 0.2),
            sample_count: 5,
            seed: 7,
            nominal_mode: Default::default(),
        };
        let nominal = scenario.estimate_nominal(horizon).unwrap();
        (sys, cost, scenario, nominal)
    }

    #[test]
    fn control_is_affine_in_estimate() {
        let (sys, cost, _, nominal) = setup(3);
        let pol = Policy::lqg(&sys, &cost, &nominal).unwrap();
        let u = pol.control_input(0, &v(&[0.0, 0.0]));
        assert_eq!(u, pol.riccati.l[0]);
        let u = pol.control_input(1, &v(&[1.0, 2.0]));
        assert_relative_eq!(u, &pol.riccati.k[1] * v(&[1.0, 2.0]) + &pol.riccati.l[1], epsilon = 1e-15);
    }

    #[test]
    fn lqg_gain_matches_textbook() {
        let (sys, cost, _, nominal) = setup(4);
        let sol = lqg_gains(&sys, &cost, &nominal).unwrap();
        for t in 0..4 {
            let p = sol.p[t + 1].as_matrix();
            let h = cost.r.as_matrix() + sys.b.transpose() * p * &sys.b;
            let k = -h.clone().try_inverse().unwrap() * sys.b.transpose() * p * &sys.a;
            assert_relative_eq!(sol.k[t], k, max_relative = 1e-10);
        }
    }

    #[test]
    fn stored_cost_matches_recomputation() {
        let (sys, cost, scenario, nominal) = setup(10);
        let pbar0 = initial_posterior_cov(&scenario.initial_state.moments().cov, &sys).unwrap();
        for pol in [
            Policy::lqg(&sys, &cost, &nominal).unwrap(),
            Policy::wdrc(&sys, &cost, &nominal, 50.0, &pbar0, &SolverOptions::default()).unwrap(),
        ] {
            let tr = run_closed_loop(&pol, &sys, &cost, &scenario, 3).unwrap();
            assert_eq!(tr.states.len(), 11);
            assert_eq!(tr.inputs.len(), 10);
            assert_relative_eq!(tr.cost, tr.recompute_cost(&cost), max_relative = 1e-12);
            let mut csv = Vec::new();
            tr.write_csv(&mut csv).unwrap();
            assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 12);
        }
    }

    #[test]
    fn same_stream_same_realizations() {
        let (sys, cost, scenario, nominal) = setup(5);
        let pbar0 = initial_posterior_cov(&scenario.initial_state.moments().cov, &sys).unwrap();
        let lqg = run_closed_loop(&Policy::lqg(&sys, &cost, &nominal).unwrap(), &sys, &cost, &scenario, 11).unwrap();
        let wdrc_pol = Policy::wdrc(&sys, &cost, &nominal, 50.0, &pbar0, &SolverOptions::default()).unwrap();
        let wdrc = run_closed_loop(&wdrc_pol, &sys, &cost, &scenario, 11).unwrap();
        assert_eq!(lqg.states[0], wdrc.states[0]);
        assert_eq!(lqg.observations[0], wdrc.observations[0]);
        // w_t = x_{t+1} - A x_t - B u_t is shared
        for t in 0..5 {
            let wl = &lqg.states[t + 1] - &sys.a * &lqg.states[t] - &sys.b * &lqg.inputs[t];
            let ww = &wdrc.states[t + 1] - &sys.a * &wdrc.states[t] - &sys.b * &wdrc.inputs[t];
            assert_relative_eq!(wl, ww, epsilon = 1e-12);
        }
        let again = run_closed_loop(&wdrc_pol, &sys, &cost, &scenario, 11).unwrap();
        assert_eq!(again, wdrc);
    }

    #[test]
    fn zero_noise_degenerate_run_is_deterministic() {
        let sys = LinearSystem::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            SymMatrix::from_diagonal(&[1e-9]),
        )
        .unwrap();
        let cost = CostSpec::new(SymMatrix::identity(1), SymMatrix::identity(1), SymMatrix::identity(1), 3).unwrap();
        let scenario = ScenarioSpec {
            true_disturbance: Distribution::uniform(v(&[0.0]), v(&[0.0])).unwrap(),
            initial_state: Distribution::uniform(v(&[1.0]), v(&[1.0])).unwrap(),
            noise_cov: SymMatrix::from_diagonal(&[1e-9]),
            sample_count: 1,
            seed: 1,
            nominal_mode: Default::default(),
        };
        let nominal = NominalDistribution::stage_invariant(MomentPair::new(v(&[0.0]), SymMatrix::zeros(1)).unwrap(), 3);
        let tr = run_closed_loop(&Policy::lqg(&sys, &cost, &nominal).unwrap(), &sys, &cost, &scenario, 0).unwrap();
        // x1 = 0.5 x0 + K0 x0 with the deterministic LQR gains
        let sol = &Policy::lqg(&sys, &cost, &nominal).unwrap().riccati;
        let mut x = 1.0;
        let mut j = 0.0;
        for t in 0..3 {
            let u = sol.k[t][(0, 0)] * x;
            j += x * x + u * u;
            x = 0.5 * x + u;
        }
        j += x * x;
        assert_relative_eq!(tr.cost, j, max_relative = 1e-6);
        assert_relative_eq!(tr.cost, sol.p[0][(0, 0)], max_relative = 1e-6);
    }
}
