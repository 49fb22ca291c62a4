use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use wdrc::harness::report::{ensure_dir, write_json};
use wdrc::harness::{emit_reports, run_campaign, synthesize, CampaignOptions, ExperimentConfig, HarnessError, ModeSelection};
use wdrc::oracle::run_suites;
use wdrc::parallel::{with_jobs, Execution};
use wdrc::worst_case::SolverOptions;

/// Wasserstein distributionally robust control: synthesis, Monte Carlo
/// campaigns and verification suites.
#[derive(Parser)]
#[command(name = "wdrc", version)]
struct Cli {
    /// Worker threads for parallel work (default: all cores; 1 runs sequentially).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Backward pass and cost certificate only.
    Synthesize(Common),
    /// Full Monte Carlo campaign with reports.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of closed-loop runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Controllers to simulate.
        #[arg(long, value_enum, default_value_t = Mode::Both)]
        mode: Mode,
    },
    /// Penalty calibration only.
    Calibrate(Common),
    /// Brute-force verification suites.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for `oracle.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML, or JSON config / summary report).
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Wdrc,
    Lqg,
    Both,
}

impl From<Mode> for ModeSelection {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Wdrc => ModeSelection::Wdrc,
            Mode::Lqg => ModeSelection::Lqg,
            Mode::Both => ModeSelection::Both,
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn execution(jobs: Option<usize>) -> Execution {
    if jobs == Some(1) {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    let exec = execution(cli.jobs);
    let solver = SolverOptions::default();
    match cli.command {
        Command::Synthesize(common) => {
            let cfg = load(&common)?;
            let exp = cfg.build()?;
            let syn = synthesize(&exp, &solver, exec)?;
            ensure_dir(&cfg.output.dir)?;
            write_json(&cfg.output.dir.join("riccati_wdrc.json"), &syn.wdrc.riccati.to_dump())?;
            write_json(&cfg.output.dir.join("riccati_lqg.json"), &syn.lqg.riccati.to_dump())?;
            write_json(&cfg.output.dir.join("certificate.json"), &syn.certificate)?;
            let c = &syn.certificate;
            println!("lambda            {}", c.lambda);
            println!("J_lambda          {}", c.j_lambda);
            println!("guaranteed cost   {}", c.guaranteed_cost);
            println!("J_LQ              {}", c.j_lq);
            println!("rho               {}", c.performance_ratio);
            println!("wrote {}", cfg.output.dir.display());
            Ok(true)
        }
        Command::Simulate { common, runs, mode } => {
            let mut cfg = load(&common)?;
            if let Some(r) = runs {
                cfg.run.runs = r;
            }
            let opts = CampaignOptions {
                mode: mode.into(),
                execution: exec,
                solver,
            };
            let result = run_campaign(&cfg, &opts)?;
            let paths = emit_reports(&result, &cfg.output.dir)?;
            println!(
                "lambda {}  guaranteed cost {}",
                result.synthesis.lambda, result.synthesis.certificate.guaranteed_cost
            );
            for (name, s) in [("WDRC", &result.wdrc), ("LQG", &result.lqg)] {
                if let Some(s) = s {
                    println!(
                        "{name:<5} mean {:.6}  std {:.6}  min {:.6}  max {:.6}",
                        s.mean, s.std_dev, s.min, s.max
                    );
                }
            }
            if let Some(c) = &result.comparison {
                println!("paired z: mean {:.3}  variance {:.3}", c.mean_z, c.variance_z);
            }
            println!("wrote {}", paths.summary.parent().unwrap_or(Path::new(".")).display());
            Ok(true)
        }
        Command::Calibrate(common) => {
            let cfg = load(&common)?;
            let mut exp = cfg.build()?;
            exp.lambda = wdrc::harness::LambdaSetting::Auto;
            if exp.theta.is_nan() || exp.theta <= 0.0 {
                return Err(HarnessError::Config {
                    path: "robustness.theta".into(),
                    message: "calibration needs theta > 0".into(),
                });
            }
            let syn = synthesize(&exp, &solver, exec)?;
            let cal = syn.calibration.expect("calibration requested");
            ensure_dir(&cfg.output.dir)?;
            write_json(&cfg.output.dir.join("calibration.json"), &cal)?;
            println!("lambda     {}", cal.lambda);
            println!("objective  {}", cal.objective);
            println!("range      [{}, {}]", cal.lambda_min, cal.lambda_max);
            if cal.at_lower_bound || cal.at_upper_bound {
                println!(
                    "warning: optimum at the {} end of the range",
                    if cal.at_lower_bound { "lower" } else { "upper" }
                );
            }
            Ok(true)
        }
        Command::Oracle { seed, out } => {
            let checks = run_suites(seed).map_err(|source| HarnessError::Solver {
                context: "oracle suites".into(),
                source,
            })?;
            for c in &checks {
                println!(
                    "{} {} ({} cases): max error {:e} <= {:e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.cases,
                    c.max_error,
                    c.tolerance
                );
            }
            if let Some(dir) = out {
                ensure_dir(&dir)?;
                write_json(&dir.join("oracle.json"), &checks)?;
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let jobs = cli.jobs;
    info!("starting with jobs = {jobs:?}");
    match with_jobs(jobs, || run(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
