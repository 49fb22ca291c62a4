//! Problem instances: plant, cost, robustness parameters, the nominal
//! disturbance distribution and the true laws used for simulation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::psd::{psd_sqrt, symmetrize, MomentPair, SymMatrix};

/// `x' = A x + B u + w`, `y = C x + v` with `v ~ N(0, M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub m: SymMatrix,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, m: SymMatrix) -> Result<Self> {
        let nx = a.nrows();
        check_dim("A columns", nx, a.ncols())?;
        check_dim("B rows", nx, b.nrows())?;
        check_dim("C columns", nx, c.ncols())?;
        check_dim("M dimension", c.nrows(), m.dim())?;
        if b.ncols() == 0 {
            return Err(Error::InvalidParameter("B must have at least one column".into()));
        }
        m.check_psd()?;
        Ok(LinearSystem { a, b, c, m })
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    pub fn ny(&self) -> usize {
        self.c.nrows()
    }

    /// Same plant with a different observation-noise covariance.
    pub fn with_noise_cov(&self, m: SymMatrix) -> Result<Self> {
        LinearSystem::new(self.a.clone(), self.b.clone(), self.c.clone(), m)
    }
}

/// Quadratic stage/terminal weights and the horizon length.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub q: SymMatrix,
    pub qf: SymMatrix,
    pub r: SymMatrix,
    pub horizon: usize,
}

impl CostSpec {
    pub fn new(q: SymMatrix, qf: SymMatrix, r: SymMatrix, horizon: usize) -> Result<Self> {
        check_dim("Qf dimension", q.dim(), qf.dim())?;
        q.check_psd()?;
        qf.check_psd()?;
        r.check_pd()?;
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        Ok(CostSpec { q, qf, r, horizon })
    }

    pub fn check_against(&self, sys: &LinearSystem) -> Result<()> {
        check_dim("Q dimension", sys.nx(), self.q.dim())?;
        check_dim("R dimension", sys.nu(), self.r.dim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessParams {
    pub lambda: f64,
    pub theta: f64,
}

impl RobustnessParams {
    pub fn new(lambda: f64, theta: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
        }
        if !(theta >= 0.0) || !theta.is_finite() {
            return Err(Error::InvalidParameter(format!("theta must be >= 0, got {theta}")));
        }
        Ok(RobustnessParams { lambda, theta })
    }
}

/// Per-stage nominal mean and covariance of the disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalDistribution {
    pub stages: Vec<MomentPair>,
}

impl NominalDistribution {
    pub fn new(stages: Vec<MomentPair>) -> Result<Self> {
        let Some(first) = stages.first() else {
            return Err(Error::EmptySamples);
        };
        let n = first.dim();
        for s in &stages {
            check_dim("nominal stage dimension", n, s.dim())?;
        }
        Ok(NominalDistribution { stages })
    }

    /// The same moments at every stage.
    pub fn stage_invariant(moments: MomentPair, horizon: usize) -> Self {
        NominalDistribution {
            stages: vec![moments; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn dim(&self) -> usize {
        self.stages[0].dim()
    }

    pub fn stage(&self, t: usize) -> &MomentPair {
        &self.stages[t]
    }
}

/// Empirical moments of one stage's samples with 1/N normalization.
pub fn empirical_moments(samples: &[DVector<f64>]) -> Result<MomentPair> {
    let Some(first) = samples.first() else {
        return Err(Error::EmptySamples);
    };
    let n = first.len();
    let mut mean = DVector::zeros(n);
    for s in samples {
        check_dim("sample length", n, s.len())?;
        mean += s;
    }
    mean /= samples.len() as f64;
    let mut cov = DMatrix::zeros(n, n);
    for s in samples {
        let d = s - &mean;
        cov += &d * d.transpose();
    }
    cov /= samples.len() as f64;
    MomentPair::new(mean, SymMatrix::new(symmetrize(&cov))?)
}

/// Nominal distribution from `T` stage-sample sets of `N` vectors each.
pub fn estimate_nominal(samples: &[Vec<DVector<f64>>]) -> Result<NominalDistribution> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let stages = samples.iter().map(|s| empirical_moments(s)).collect::<Result<Vec<_>>>()?;
    NominalDistribution::new(stages)
}

/// Gaussian law with a precomputed PSD square-root factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: SymMatrix,
    factor: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: SymMatrix) -> Result<Self> {
        check_dim("gaussian covariance", mean.len(), cov.dim())?;
        let factor = psd_sqrt(&cov)?.into_matrix();
        Ok(Gaussian { mean, cov, factor })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }
}

/// Independent uniform coordinates on `[lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Uniform {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl Uniform {
    /// Requires `lo <= hi` componentwise; `lo == hi` gives a point mass.
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        check_dim("uniform bounds", lo.len(), hi.len())?;
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidParameter("uniform bounds require lo <= hi".into()));
        }
        Ok(Uniform { lo, hi })
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.lo.len(), |i, _| {
            let u: f64 = rng.random();
            self.lo[i] + u * (self.hi[i] - self.lo[i])
        })
    }
}

/// Distribution descriptor for true disturbances and initial states.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Gaussian(Gaussian),
    Uniform(Uniform),
}

impl Distribution {
    pub fn gaussian(mean: DVector<f64>, cov: SymMatrix) -> Result<Self> {
        Gaussian::new(mean, cov).map(Distribution::Gaussian)
    }

    pub fn uniform(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        Uniform::new(lo, hi).map(Distribution::Uniform)
    }

    pub fn dim(&self) -> usize {
        match self {
            Distribution::Gaussian(g) => g.mean.len(),
            Distribution::Uniform(u) => u.lo.len(),
        }
    }

    /// Exact first two moments. Uniform: `(lo+hi)/2` and `diag((hi-lo)^2/12)`.
    pub fn moments(&self) -> MomentPair {
        match self {
            Distribution::Gaussian(g) => MomentPair {
                mean: g.mean.clone(),
                cov: g.cov.clone(),
            },
            Distribution::Uniform(u) => {
                let mean = (&u.lo + &u.hi) * 0.5;
                let var: Vec<f64> = u.lo.iter().zip(u.hi.iter()).map(|(l, h)| (h - l).powi(2) / 12.0).collect();
                MomentPair {
                    mean,
                    cov: SymMatrix::from_diagonal(&var),
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            Distribution::Gaussian(g) => g.sample(rng),
            Distribution::Uniform(u) => u.sample(rng),
        }
    }
}

/// How the nominal sample set is laid out over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NominalMode {
    /// One sample set defines the nominal for every stage.
    #[default]
    StageInvariant,
    /// An independent sample set per stage.
    PerStage,
}

/// True laws and sampling configuration of a simulation scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub true_disturbance: Distribution,
    pub initial_state: Distribution,
    pub noise_cov: SymMatrix,
    pub sample_count: usize,
    pub seed: u64,
    pub nominal_mode: NominalMode,
}

impl ScenarioSpec {
    pub fn validate(&self, sys: &LinearSystem) -> Result<()> {
        check_dim("true disturbance dimension", sys.nx(), self.true_disturbance.dim())?;
        check_dim("initial state dimension", sys.nx(), self.initial_state.dim())?;
        check_dim("noise covariance dimension", sys.ny(), self.noise_cov.dim())?;
        if self.sample_count == 0 {
            return Err(Error::EmptySamples);
        }
        self.noise_cov.check_psd()
    }

    /// Draws the nominal-estimation samples, `horizon` stage sets of
    /// `sample_count` vectors.
    pub fn nominal_samples(&self, horizon: usize) -> Vec<Vec<DVector<f64>>> {
        match self.nominal_mode {
            NominalMode::StageInvariant => {
                let mut rng = stream_rng(self.seed, NOMINAL_STREAM, 0);
                let set: Vec<_> = (0..self.sample_count).map(|_| self.true_disturbance.sample(&mut rng)).collect();
                vec![set; horizon]
            }
            NominalMode::PerStage => (0..horizon)
                .map(|t| {
                    let mut rng = stream_rng(self.seed, NOMINAL_STREAM, t as u64);
                    (0..self.sample_count).map(|_| self.true_disturbance.sample(&mut rng)).collect()
                })
                .collect(),
        }
    }

    /// Nominal distribution estimated from [`Self::nominal_samples`].
    pub fn estimate_nominal(&self, horizon: usize) -> Result<NominalDistribution> {
        estimate_nominal(&self.nominal_samples(horizon))
    }

    /// True disturbance `w_t` of run `stream`; a pure function of `(seed, stream, t)`.
    pub fn sample_disturbance(&self, stream: u64, t: usize) -> DVector<f64> {
        let mut rng = stream_rng(self.seed, stream, t as u64 + 1);
        self.true_disturbance.sample(&mut rng)
    }
}

/// Stream reserved for nominal-estimation samples.
pub const NOMINAL_STREAM: u64 = u64::MAX;
/// Stream reserved for Monte-Carlo averaging over the initial observation.
pub const INITIAL_OBSERVATION_STREAM: u64 = u64::MAX - 1;

/// Counter-based stream: ChaCha8 keyed by `seed`, stream id `stream`, and a
/// word offset of `slot * 2^32` so that each slot has its own disjoint block.
pub fn stream_rng(seed: u64, stream: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(slot) << 32);
    rng
}
