//! Synthesis and Monte Carlo campaigns.

use serde::Serialize;

use crate::bounds::{calibrate_lambda_with, certify, sampled_value, CostCertificate, LambdaCalibration, Problem};
use crate::controller::{run_closed_loop, Policy};
use crate::harness::config::{Experiment, ExperimentConfig, LambdaSetting};
use crate::harness::stats::{cost_statistics, histogram, paired_comparison, CostStatistics, Histogram, PairedComparison};
use crate::harness::HarnessError;
use crate::parallel::{try_map_indexed, Execution};
use crate::worst_case::SolverOptions;

/// Stream offset for LQG runs when runs are not paired.
const UNPAIRED_OFFSET: u64 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Wdrc,
    Lqg,
    #[default]
    Both,
}

impl ModeSelection {
    pub fn includes_wdrc(self) -> bool {
        self != ModeSelection::Lqg
    }

    pub fn includes_lqg(self) -> bool {
        self != ModeSelection::Wdrc
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CampaignOptions {
    pub mode: ModeSelection,
    pub execution: Execution,
    pub solver: SolverOptions,
}

/// Both controllers plus the certificate at the chosen penalty.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub problem: Problem,
    pub lambda: f64,
    pub calibration: Option<LambdaCalibration>,
    pub certificate: CostCertificate,
    /// Penalized value averaged over sampled initial observations.
    pub j_lambda_sampled: f64,
    pub wdrc: Policy,
    pub lqg: Policy,
}

/// Estimates the nominal, picks the penalty (fixed or calibrated) and
/// synthesizes both policies.
pub fn synthesize(exp: &Experiment, solver: &SolverOptions, execution: Execution) -> Result<Synthesis, HarnessError> {
    let horizon = exp.cost.horizon;
    let nominal = exp
        .scenario
        .estimate_nominal(horizon)
        .map_err(HarnessError::solver("nominal estimation"))?;
    let problem = Problem::new(exp.sys.clone(), exp.cost.clone(), nominal, exp.scenario.initial_state.clone())
        .map_err(HarnessError::solver("problem setup"))?;
    let (lambda, calibration) = match exp.lambda {
        LambdaSetting::Fixed(l) => (l, None),
        LambdaSetting::Auto => {
            let cal = calibrate_lambda_with(&problem, exp.theta, exp.lambda_max, solver, execution)
                .map_err(HarnessError::solver("lambda calibration"))?;
            (cal.lambda, Some(cal))
        }
    };
    let certificate = certify(&problem, lambda, exp.theta, solver).map_err(HarnessError::solver("certificate"))?;
    let p_bar0 = problem.p_bar0().map_err(HarnessError::solver("initial belief"))?;
    let wdrc = Policy::wdrc(&problem.sys, &problem.cost, &problem.nominal, lambda, &p_bar0, solver)
        .map_err(HarnessError::solver("WDRC synthesis"))?;
    let lqg = Policy::lqg(&problem.sys, &problem.cost, &problem.nominal).map_err(HarnessError::solver("LQG synthesis"))?;
    let j_lambda_sampled = sampled_value(
        &wdrc.riccati,
        &wdrc.schedule.as_ref().expect("WDRC policy has a schedule").z_tilde(),
        &problem.initial_state,
        &problem.sys,
        exp.initial_value_samples,
        exp.scenario.seed,
    )
    .map_err(HarnessError::solver("initial-observation average"))?;
    Ok(Synthesis {
        problem,
        lambda,
        calibration,
        certificate,
        j_lambda_sampled,
        wdrc,
        lqg,
    })
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    /// Effective configuration; re-running it reproduces the campaign.
    pub config: ExperimentConfig,
    pub mode: ModeSelection,
    pub paired: bool,
    pub synthesis: Synthesis,
    pub wdrc: Option<CostStatistics>,
    pub lqg: Option<CostStatistics>,
    pub comparison: Option<PairedComparison>,
    pub histogram: Histogram,
}

/// Synthesizes both controllers and simulates `runs` closed-loop rollouts.
/// Run `r` draws from random stream `r`; with pairing, both controllers see
/// the same stream.
pub fn run_campaign(cfg: &ExperimentConfig, opts: &CampaignOptions) -> Result<CampaignResult, HarnessError> {
    let exp = cfg.build()?;
    let synthesis = synthesize(&exp, &opts.solver, opts.execution)?;
    let (sys, cost, scenario) = (&exp.sys, &exp.cost, &exp.scenario);
    let lqg_offset = if exp.paired { 0 } else { UNPAIRED_OFFSET };

    let per_run = try_map_indexed(exp.runs, opts.execution, |r| {
        let stream = r as u64;
        let wdrc = if opts.mode.includes_wdrc() {
            let tr =
                run_closed_loop(&synthesis.wdrc, sys, cost, scenario, stream).map_err(HarnessError::solver(format!("WDRC run {r}")))?;
            Some(tr.cost)
        } else {
            None
        };
        let lqg = if opts.mode.includes_lqg() {
            let tr = run_closed_loop(&synthesis.lqg, sys, cost, scenario, stream | lqg_offset)
                .map_err(HarnessError::solver(format!("LQG run {r}")))?;
            Some(tr.cost)
        } else {
            None
        };
        Ok::<_, HarnessError>((wdrc, lqg))
    })?;

    let wdrc_costs: Vec<f64> = per_run.iter().filter_map(|p| p.0).collect();
    let lqg_costs: Vec<f64> = per_run.iter().filter_map(|p| p.1).collect();
    let stats = |c: &[f64]| -> Result<Option<CostStatistics>, HarnessError> {
        if c.is_empty() {
            Ok(None)
        } else {
            cost_statistics(c).map(Some).map_err(HarnessError::solver("statistics"))
        }
    };
    let wdrc = stats(&wdrc_costs)?;
    let lqg = stats(&lqg_costs)?;
    // z-scores of per-run differences only make sense on shared realizations
    let comparison = if exp.paired && wdrc.is_some() && lqg.is_some() {
        Some(paired_comparison(&wdrc_costs, &lqg_costs).map_err(HarnessError::solver("comparison"))?)
    } else {
        None
    };
    let series: Vec<&[f64]> = [&wdrc_costs, &lqg_costs]
        .into_iter()
        .filter(|c| !c.is_empty())
        .map(|c| c.as_slice())
        .collect();
    let histogram = histogram(&series, exp.histogram_bins).map_err(HarnessError::solver("histogram"))?;

    Ok(CampaignResult {
        config: cfg.clone(),
        mode: opts.mode,
        paired: exp.paired,
        synthesis,
        wdrc,
        lqg,
        comparison,
        histogram,
    })
}
