//! Experiment configuration.
//!
//! TOML, matrices row-major as nested arrays:
//!
//! ```toml
//! [plant]
//! a = [[0.518, 0.266], [0.405, 0.806]]
//! b = [[-2.972], [-2.271]]
//! c = [[1.023, 1.955]]
//!
//! [cost]
//! q = [[1.0, 0.0], [0.0, 1.0]]
//! qf = [[1.0, 0.0], [0.0, 1.0]]
//! r = [[1.0]]
//! horizon = 50
//!
//! [scenario]
//! noise_cov = [[0.2]]
//! nominal_samples = 5
//! seed = 0
//! per_stage_nominal = false        # optional
//!
//! [scenario.disturbance]
//! kind = "gaussian"                # or "uniform" with lo/hi
//! mean = [0.01, 0.02]
//! cov = [[0.01, 0.005], [0.005, 0.01]]
//!
//! [scenario.initial_state]
//! kind = "gaussian"
//! mean = [-1.0, -1.0]
//! cov = [[0.001, 0.0], [0.0, 0.001]]
//!
//! [robustness]
//! theta = 0.1
//! lambda = "auto"                  # or a number
//! lambda_max = 1e4                 # optional, upper end for "auto"
//!
//! [run]                            # optional section
//! runs = 1000
//! histogram_bins = 30
//! paired = true
//! initial_value_samples = 10000
//!
//! [output]                         # optional section
//! dir = "out"
//! ```
//!
//! A JSON file is accepted too: either a config object, or a summary report
//! whose `config` field echoes the config that produced it.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::harness::HarnessError;
use crate::model::{CostSpec, Distribution, LinearSystem, NominalMode, ScenarioSpec};
use crate::psd::{matrix_from_rows, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    pub cost: CostConfig,
    pub scenario: ScenarioConfig,
    pub robustness: RobustnessConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub q: Vec<Vec<f64>>,
    pub qf: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub noise_cov: Vec<Vec<f64>>,
    pub nominal_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub per_stage_nominal: bool,
    pub disturbance: DistributionConfig,
    pub initial_state: DistributionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistributionConfig {
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

/// Penalty: a fixed value or `"auto"` for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LambdaSetting {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for LambdaSetting {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LambdaSetting::Auto => s.serialize_str("auto"),
            LambdaSetting::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for LambdaSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(LambdaSetting::Fixed(v)),
            Raw::Text(t) if t == "auto" => Ok(LambdaSetting::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"auto\", got \"{t}\""))),
        }
    }
}

impl fmt::Display for LambdaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaSetting::Auto => f.write_str("auto"),
            LambdaSetting::Fixed(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessConfig {
    pub theta: f64,
    #[serde(default)]
    pub lambda: LambdaSetting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub runs: usize,
    pub histogram_bins: usize,
    pub paired: bool,
    pub initial_value_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            runs: 1000,
            histogram_bins: 30,
            paired: true,
            initial_value_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

/// Validated experiment, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub sys: LinearSystem,
    pub cost: CostSpec,
    pub scenario: ScenarioSpec,
    pub theta: f64,
    pub lambda: LambdaSetting,
    pub lambda_max: Option<f64>,
    pub runs: usize,
    pub histogram_bins: usize,
    pub paired: bool,
    pub initial_value_samples: usize,
}

fn config_err(path: &str, message: impl fmt::Display) -> HarnessError {
    HarnessError::Config {
        path: path.to_string(),
        message: message.to_string(),
    }
}

fn matrix(path: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, HarnessError> {
    let m = matrix_from_rows(rows).map_err(|e| config_err(path, e))?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(config_err(path, "entries must be finite"));
    }
    Ok(m)
}

fn sym(path: &str, rows: &[Vec<f64>]) -> Result<SymMatrix, HarnessError> {
    let m = matrix(path, rows)?;
    if m.nrows() != m.ncols() {
        return Err(config_err(path, format!("must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    if (&m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(config_err(path, "must be symmetric"));
    }
    SymMatrix::new(m).map_err(|e| config_err(path, e))
}

fn vector(path: &str, v: &[f64], n: usize) -> Result<DVector<f64>, HarnessError> {
    if v.len() != n {
        return Err(config_err(path, format!("expected length {n}, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(config_err(path, "entries must be finite"));
    }
    Ok(DVector::from_column_slice(v))
}

impl DistributionConfig {
    fn build(&self, path: &str, n: usize) -> Result<Distribution, HarnessError> {
        match self {
            DistributionConfig::Gaussian { mean, cov } => {
                let mean = vector(&format!("{path}.mean"), mean, n)?;
                let cov_path = format!("{path}.cov");
                let cov = sym(&cov_path, cov)?;
                if cov.dim() != n {
                    return Err(config_err(&cov_path, format!("expected {n}x{n}")));
                }
                Distribution::gaussian(mean, cov).map_err(|e| config_err(&cov_path, e))
            }
            DistributionConfig::Uniform { lo, hi } => {
                let lo = vector(&format!("{path}.lo"), lo, n)?;
                let hi = vector(&format!("{path}.hi"), hi, n)?;
                Distribution::uniform(lo, hi).map_err(|e| config_err(path, e))
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        toml::from_str(s).map_err(|e| HarnessError::Parse {
            source_name: "<toml>".into(),
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Reads a TOML config, or a JSON config / summary report.
    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |message: String| HarnessError::Parse {
            source_name: path.display().to_string(),
            message,
        };
        if path.extension().is_some_and(|e| e == "json") {
            let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
            serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))
        }
    }

    /// Checks every field and builds the domain objects. Errors name the
    /// offending field, e.g. `scenario.disturbance.cov`.
    pub fn build(&self) -> Result<Experiment, HarnessError> {
        let a = matrix("plant.a", &self.plant.a)?;
        let n = a.nrows();
        if a.ncols() != n {
            return Err(config_err("plant.a", format!("must be square, got {}x{}", n, a.ncols())));
        }
        let b = matrix("plant.b", &self.plant.b)?;
        if b.nrows() != n {
            return Err(config_err("plant.b", format!("expected {n} rows, got {}", b.nrows())));
        }
        let c = matrix("plant.c", &self.plant.c)?;
        if c.ncols() != n {
            return Err(config_err("plant.c", format!("expected {n} columns, got {}", c.ncols())));
        }
        let noise_cov = sym("scenario.noise_cov", &self.scenario.noise_cov)?;
        if noise_cov.dim() != c.nrows() {
            return Err(config_err("scenario.noise_cov", format!("expected {0}x{0}", c.nrows())));
        }
        noise_cov.check_pd().map_err(|e| config_err("scenario.noise_cov", e))?;
        let sys = LinearSystem::new(a, b, c, noise_cov.clone()).map_err(|e| config_err("plant", e))?;

        let q = sym("cost.q", &self.cost.q)?;
        let qf = sym("cost.qf", &self.cost.qf)?;
        let r = sym("cost.r", &self.cost.r)?;
        for (path, m, dim) in [("cost.q", &q, n), ("cost.qf", &qf, n), ("cost.r", &r, sys.nu())] {
            if m.dim() != dim {
                return Err(config_err(path, format!("expected {dim}x{dim}, got {0}x{0}", m.dim())));
            }
        }
        q.check_psd().map_err(|e| config_err("cost.q", e))?;
        qf.check_psd().map_err(|e| config_err("cost.qf", e))?;
        r.check_pd().map_err(|e| config_err("cost.r", e))?;
        if self.cost.horizon == 0 {
            return Err(config_err("cost.horizon", "must be >= 1"));
        }
        let cost = CostSpec::new(q, qf, r, self.cost.horizon).map_err(|e| config_err("cost", e))?;

        if self.scenario.nominal_samples == 0 {
            return Err(config_err("scenario.nominal_samples", "must be >= 1"));
        }
        let scenario = ScenarioSpec {
            true_disturbance: self.scenario.disturbance.build("scenario.disturbance", n)?,
            initial_state: self.scenario.initial_state.build("scenario.initial_state", n)?,
            noise_cov,
            sample_count: self.scenario.nominal_samples,
            seed: self.scenario.seed,
            nominal_mode: if self.scenario.per_stage_nominal {
                NominalMode::PerStage
            } else {
                NominalMode::StageInvariant
            },
        };

        let theta = self.robustness.theta;
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(config_err("robustness.theta", format!("must be finite and >= 0, got {theta}")));
        }
        if let LambdaSetting::Fixed(l) = self.robustness.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(config_err("robustness.lambda", format!("must be > 0, got {l}")));
            }
        } else if !(theta > 0.0) {
            return Err(config_err("robustness.lambda", "\"auto\" needs theta > 0"));
        }
        if let Some(m) = self.robustness.lambda_max {
            if !(m > 0.0 && m.is_finite()) {
                return Err(config_err("robustness.lambda_max", format!("must be > 0, got {m}")));
            }
        }
        if self.run.runs == 0 {
            return Err(config_err("run.runs", "must be >= 1"));
        }
        if self.run.histogram_bins == 0 {
            return Err(config_err("run.histogram_bins", "must be >= 1"));
        }
        if self.run.initial_value_samples == 0 {
            return Err(config_err("run.initial_value_samples", "must be >= 1"));
        }

        Ok(Experiment {
            sys,
            cost,
            scenario,
            theta,
            lambda: self.robustness.lambda,
            lambda_max: self.robustness.lambda_max,
            runs: self.run.runs,
            histogram_bins: self.run.histogram_bins,
            paired: self.run.paired,
            initial_value_samples: self.run.initial_value_samples,
        })
    }

    fn experiment_plant(m: f64) -> (PlantConfig, CostConfig, Vec<Vec<f64>>) {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        (
            PlantConfig {
                a: vec![vec![0.518, 0.266], vec![0.405, 0.806]],
                b: vec![vec![-2.972], vec![-2.271]],
                c: vec![vec![1.023, 1.955]],
            },
            CostConfig {
                q: eye.clone(),
                qf: eye,
                r: vec![vec![1.0]],
                horizon: 50,
            },
            vec![vec![m]],
        )
    }

    /// Gaussian disturbance experiment (`configs/gaussian.toml`).
    pub fn gaussian_preset() -> Self {
        let (plant, cost, noise_cov) = Self::experiment_plant(0.2);
        ExperimentConfig {
            plant,
            cost,
            scenario: ScenarioConfig {
                noise_cov,
                nominal_samples: 5,
                seed: 0,
                per_stage_nominal: false,
                disturbance: DistributionConfig::Gaussian {
                    mean: vec![0.01, 0.02],
                    cov: vec![vec![0.01, 0.005], vec![0.005, 0.01]],
                },
                initial_state: DistributionConfig::Gaussian {
                    mean: vec![-1.0, -1.0],
                    cov: vec![vec![0.001, 0.0], vec![0.0, 0.001]],
                },
            },
            robustness: RobustnessConfig {
                theta: 0.1,
                lambda: LambdaSetting::Auto,
                lambda_max: None,
            },
            run: RunConfig::default(),
            output: OutputConfig {
                dir: PathBuf::from("out/gaussian"),
            },
        }
    }

    /// Uniform disturbance experiment (`configs/uniform.toml`).
    pub fn uniform_preset() -> Self {
        let (plant, cost, noise_cov) = Self::experiment_plant(0.1);
        ExperimentConfig {
            plant,
            cost,
            scenario: ScenarioConfig {
                noise_cov,
                nominal_samples: 5,
                seed: 0,
                per_stage_nominal: false,
                disturbance: DistributionConfig::Uniform {
                    lo: vec![-0.05, -0.05],
                    hi: vec![0.05, 0.05],
                },
                initial_state: DistributionConfig::Uniform {
                    lo: vec![0.1, 0.2],
                    hi: vec![0.3, 0.5],
                },
            },
            robustness: RobustnessConfig {
                theta: 0.03,
                lambda: LambdaSetting::Auto,
                lambda_max: None,
            },
            run: RunConfig::default(),
            output: OutputConfig {
                dir: PathBuf::from("out/uniform"),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for cfg in [ExperimentConfig::gaussian_preset(), ExperimentConfig::uniform_preset()] {
            let text = cfg.to_toml_string();
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
            cfg.build().unwrap();
        }
    }

    #[test]
    fn lambda_setting_forms() {
        let mut cfg = ExperimentConfig::gaussian_preset();
        cfg.robustness.lambda = LambdaSetting::Fixed(3.5);
        let text = cfg.to_toml_string();
        assert!(text.contains("lambda = 3.5"));
        assert_eq!(
            ExperimentConfig::from_toml_str(&text).unwrap().robustness.lambda,
            LambdaSetting::Fixed(3.5)
        );
        let bad = text.replace("lambda = 3.5", "lambda = \"sometimes\"");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(HarnessError::Parse { .. })));
    }

    fn field_of(cfg: &ExperimentConfig) -> String {
        match cfg.build() {
            Err(HarnessError::Config { path, .. }) => path,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        let mut cfg = ExperimentConfig::gaussian_preset();
        cfg.plant.b = vec![vec![1.0]];
        assert_eq!(field_of(&cfg), "plant.b");

        let mut cfg = ExperimentConfig::gaussian_preset();
        cfg.scenario.disturbance = DistributionConfig::Gaussian {
            mean: vec![0.0, 0.0],
            cov: vec![vec![1.0, 0.0], vec![0.0, -1.0]],
        };
        assert_eq!(field_of(&cfg), "scenario.disturbance.cov");

        let mut cfg = ExperimentConfig::gaussian_preset();
        cfg.scenario.initial_state = DistributionConfig::Uniform {
            lo: vec![1.0, 0.0],
            hi: vec![0.0, 1.0],
        };
        assert_eq!(field_of(&cfg), "scenario.initial_state");

        let mut cfg = ExperimentConfig::gaussian_preset();
        cfg.run.runs = 0;
        assert_eq!(field_of(&cfg), "run.runs");

        let mut cfg = ExperimentConfig::gaussian_preset();
        cfg.cost.r = vec![vec![0.0]];
        assert_eq!(field_of(&cfg), "cost.r");

        let mut cfg = ExperimentConfig::gaussian_preset();
        cfg.robustness.lambda = LambdaSetting::Fixed(-1.0);
        assert_eq!(field_of(&cfg), "robustness.lambda");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = ExperimentConfig::gaussian_preset()
            .to_toml_string()
            .replace("[robustness]", "[robustness]\nthetta = 1.0");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(HarnessError::Parse { .. })));
    }

    #[test]
    fn optional_sections_default() {
        let mut text = ExperimentConfig::gaussian_preset().to_toml_string();
        let cut = text.find("[run]").unwrap();
        text.truncate(cut);
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.run, RunConfig::default());
        assert_eq!(cfg.output, OutputConfig::default());
    }
}
