//! Report files of a campaign.
//!
//! - `costs.csv`: `run,wdrc_cost,lqg_cost`, one row per run; a controller
//!   that was not simulated leaves its column empty.
//! - `histogram.csv`: `bin_lo,bin_hi,wdrc_count,lqg_count` on shared edges.
//! - `summary.json`: statistics, comparison, certificate and the effective
//!   config (loadable again with `--config summary.json`).
//!
//! Floats are written in shortest round-trip form, so identical results give
//! identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bounds::{CostCertificate, LambdaCalibration};
use crate::harness::campaign::{CampaignResult, ModeSelection};
use crate::harness::config::ExperimentConfig;
use crate::harness::stats::{CostStatistics, PairedComparison};
use crate::harness::HarnessError;

pub const INITIAL_OBSERVATION_PROTOCOL: &str = "each run samples y0 = C x0 + v0 with x0 from the initial-state law; \
     j_lambda averages the value exactly over y0, j_lambda_reference uses y0 = C E[x0], \
     j_lambda_sampled averages over initial_value_samples draws of y0";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub costs: PathBuf,
    pub histogram: PathBuf,
    pub summary: PathBuf,
}

impl ReportPaths {
    pub fn in_dir(dir: &Path) -> Self {
        ReportPaths {
            costs: dir.join("costs.csv"),
            histogram: dir.join("histogram.csv"),
            summary: dir.join("summary.json"),
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    mode: ModeSelection,
    paired: bool,
    initial_observation: &'static str,
    lambda: f64,
    calibration: Option<&'a LambdaCalibration>,
    certificate: &'a CostCertificate,
    j_lambda_sampled: f64,
    initial_value_samples: usize,
    riccati_psd_violations: usize,
    worst_case_solver_converged: bool,
    wdrc: Option<&'a CostStatistics>,
    lqg: Option<&'a CostStatistics>,
    comparison: Option<&'a PairedComparison>,
    config: &'a ExperimentConfig,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn costs_csv(result: &CampaignResult) -> String {
    let mut out = String::from("run,wdrc_cost,lqg_cost\n");
    let runs = result.wdrc.as_ref().or(result.lqg.as_ref()).map_or(0, |s| s.runs);
    for r in 0..runs {
        let w = result.wdrc.as_ref().map(|s| s.costs[r]);
        let l = result.lqg.as_ref().map(|s| s.costs[r]);
        writeln!(out, "{r},{},{}", opt(w), opt(l)).expect("write to string");
    }
    out
}

pub fn histogram_csv(result: &CampaignResult) -> String {
    let h = &result.histogram;
    let mut series = h.counts.iter();
    let wdrc = result.wdrc.as_ref().and_then(|_| series.next());
    let lqg = result.lqg.as_ref().and_then(|_| series.next());
    let mut out = String::from("bin_lo,bin_hi,wdrc_count,lqg_count\n");
    for i in 0..h.edges.len() - 1 {
        let w = wdrc.map(|c| c[i].to_string()).unwrap_or_default();
        let l = lqg.map(|c| c[i].to_string()).unwrap_or_default();
        writeln!(out, "{},{},{w},{l}", h.edges[i], h.edges[i + 1]).expect("write to string");
    }
    out
}

pub fn summary_json(result: &CampaignResult) -> String {
    let syn = &result.synthesis;
    let summary = Summary {
        mode: result.mode,
        paired: result.paired,
        initial_observation: INITIAL_OBSERVATION_PROTOCOL,
        lambda: syn.lambda,
        calibration: syn.calibration.as_ref(),
        certificate: &syn.certificate,
        j_lambda_sampled: syn.j_lambda_sampled,
        initial_value_samples: result.config.run.initial_value_samples,
        riccati_psd_violations: syn.wdrc.riccati.psd_violations.len(),
        worst_case_solver_converged: syn.wdrc.schedule.as_ref().is_some_and(|s| s.all_converged()),
        wdrc: result.wdrc.as_ref(),
        lqg: result.lqg.as_ref(),
        comparison: result.comparison.as_ref(),
        config: &result.config,
    };
    let mut s = serde_json::to_string_pretty(&summary).expect("summary serializes");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut s = serde_json::to_string_pretty(value).expect("report value serializes");
    s.push('\n');
    write_file(path, &s)
}

/// Writes the three report files into `dir`, creating it if needed.
pub fn emit_reports(result: &CampaignResult, dir: &Path) -> Result<ReportPaths, HarnessError> {
    ensure_dir(dir)?;
    let paths = ReportPaths::in_dir(dir);
    write_file(&paths.costs, &costs_csv(result))?;
    write_file(&paths.histogram, &histogram_csv(result))?;
    write_file(&paths.summary, &summary_json(result))?;
    Ok(paths)
}
