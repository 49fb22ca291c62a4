//! Brute-force reference computations.
//!
//! Nothing here shares code paths with the synthesis: LQR gains use the
//! textbook `(R + B'PB)^{-1}` recursion, gradients are central finite
//! differences, and scalar optima are found by refined grid search over
//! explicitly written scalar formulas.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds::evaluate_value;
use crate::controller::Policy;
use crate::error::Result;
use crate::model::{CostSpec, Distribution, LinearSystem, NominalDistribution};
use crate::psd::{MomentPair, SymMatrix};
use crate::worst_case::{cov_gradient, cov_objective, solve_worst_case_cov, worst_case_mean, CovObjectiveContext, SolverOptions};

/// Finite-horizon LQR gains `K_t = -(R + B' P_{t+1} B)^{-1} B' P_{t+1} A`.
pub fn lqr_gains(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    qf: &DMatrix<f64>,
    r: &DMatrix<f64>,
    horizon: usize,
) -> Vec<DMatrix<f64>> {
    let mut p = qf.clone();
    let mut gains = vec![DMatrix::zeros(b.ncols(), a.nrows()); horizon];
    for t in (0..horizon).rev() {
        let h = r + b.transpose() * &p * b;
        let k = -h.try_inverse().expect("R + B'PB invertible") * b.transpose() * &p * a;
        let acl = a + b * &k;
        p = q + k.transpose() * r * &k + acl.transpose() * &p * &acl;
        p = (&p + p.transpose()) * 0.5;
        gains[t] = k;
    }
    gains
}

/// Central-difference gradient of `f` over symmetric matrices: the entry
/// `(i, j)` is the derivative along `E_ij + E_ji`, halved off the diagonal.
pub fn fd_gradient(f: impl Fn(&SymMatrix) -> f64, x: &SymMatrix, h: f64) -> DMatrix<f64> {
    let n = x.dim();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut e = DMatrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            let plus = SymMatrix::new(x.as_matrix() + &e * h).expect("square");
            let minus = SymMatrix::new(x.as_matrix() - &e * h).expect("square");
            let d = (f(&plus) - f(&minus)) / (2.0 * h);
            let v = if i == j { d } else { d / 2.0 };
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Maximizes `f` on `[lo, hi]` with a `points` grid, then re-grids
/// `refinements` times on the two cells around the incumbent.
pub fn grid_max_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize, refinements: usize) -> (f64, f64) {
    let (mut lo, mut hi) = (lo, hi);
    let mut best = (lo, f64::NEG_INFINITY);
    for _ in 0..=refinements {
        let step = (hi - lo) / (points - 1) as f64;
        for i in 0..points {
            let x = lo + step * i as f64;
            let v = f(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        let (l, h) = (lo, hi);
        lo = (best.0 - step).max(l);
        hi = (best.0 + step).min(h);
    }
    best
}

/// `min_u max_w f(u, w)` by nested refined grids.
pub fn grid_min_max_2d(
    f: impl Fn(f64, f64) -> f64,
    u_range: (f64, f64),
    w_range: (f64, f64),
    points: usize,
    refinements: usize,
) -> (f64, f64, f64) {
    let inner = |u: f64| grid_max_1d(|w| f(u, w), w_range.0, w_range.1, points, refinements);
    let (u, v) = grid_max_1d(|u| -inner(u).1, u_range.0, u_range.1, points, refinements);
    (u, inner(u).0, -v)
}

/// Scalar covariance objective written out explicitly:
/// `s V(g) + (p - lambda) sigma + 2 lambda sqrt(sigma sigma_hat)` with
/// `g = a^2 pbar + sigma` and `V(g) = g m / (c^2 g + m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarCovInstance {
    pub a: f64,
    pub c: f64,
    pub m: f64,
    pub s: f64,
    pub p: f64,
    pub lambda: f64,
    pub sigma_hat: f64,
    pub p_bar: f64,
}

impl ScalarCovInstance {
    pub fn objective(&self, sigma: f64) -> f64 {
        let g = self.a * self.a * self.p_bar + sigma;
        let v = g * self.m / (self.c * self.c * g + self.m);
        self.s * v + (self.p - self.lambda) * sigma + 2.0 * self.lambda * (sigma * self.sigma_hat).sqrt()
    }

    /// Upper end of a bracket containing the maximizer: beyond it the
    /// derivative is negative because `V' <= 1`.
    pub fn bracket(&self) -> f64 {
        let slack = self.lambda - self.p - self.s;
        self.sigma_hat * (self.lambda / slack).powi(2) * 1.5 + 1e-3
    }

    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let s = rng.random_range(0.0..2.0);
        let p = rng.random_range(0.5..3.0);
        ScalarCovInstance {
            a: rng.random_range(-1.5..1.5),
            c: rng.random_range(0.2..2.0),
            m: rng.random_range(0.05..1.0),
            s,
            p,
            lambda: p + s + rng.random_range(0.5..5.0),
            sigma_hat: rng.random_range(0.005..0.5),
            p_bar: rng.random_range(0.0..0.5),
        }
    }

    fn system(&self) -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_element(1, 1, self.a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, self.c),
            SymMatrix::from_diagonal(&[self.m]),
        )
        .expect("valid scalar system")
    }
}

/// One-stage scalar game at belief `(x_bar, p_bar)`:
/// `q (x^2 + pbar) + r u^2 + qf [(a x + b u + w)^2 + a^2 pbar + sigma] - lambda [(w - w_hat)^2 + (sqrt sigma - sqrt sigma_hat)^2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarGameInstance {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub qf: f64,
    pub r: f64,
    pub lambda: f64,
    pub w_hat: f64,
    pub sigma_hat: f64,
    pub x_bar: f64,
    pub p_bar: f64,
}

impl ScalarGameInstance {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let qf = rng.random_range(0.5..2.0);
        ScalarGameInstance {
            a: rng.random_range(-1.5..1.5),
            b: rng.random_range(0.3..2.0),
            q: rng.random_range(0.5..2.0),
            qf,
            r: rng.random_range(0.5..2.0),
            lambda: qf + rng.random_range(1.0..10.0),
            w_hat: rng.random_range(-0.5..0.5),
            sigma_hat: rng.random_range(0.01..0.5),
            x_bar: rng.random_range(-2.0..2.0),
            p_bar: rng.random_range(0.0..0.5),
        }
    }

    fn mean_part(&self, u: f64, w: f64) -> f64 {
        let x1 = self.a * self.x_bar + self.b * u + w;
        self.q * self.x_bar * self.x_bar + self.r * u * u + self.qf * x1 * x1 - self.lambda * (w - self.w_hat).powi(2)
    }

    fn cov_part(&self, sigma: f64) -> f64 {
        let bures = (sigma.sqrt() - self.sigma_hat.sqrt()).powi(2);
        self.q * self.p_bar + self.qf * (self.a * self.a * self.p_bar + sigma) - self.lambda * bures
    }

    /// Saddle value by grid search: a 2-D min-max over `(u, w)` and a 1-D
    /// max over `sigma` (the covariance part does not depend on `u`).
    pub fn grid_value(&self, points: usize, refinements: usize) -> f64 {
        // generous boxes: both parts are strongly convex/concave quadratics
        let (u_span, w_span) = (50.0, 50.0);
        let (_, _, mean_value) = grid_min_max_2d(
            |u, w| self.mean_part(u, w),
            (-u_span, u_span),
            (-w_span, w_span),
            points,
            refinements,
        );
        let slack = self.lambda - self.qf;
        let hi = self.sigma_hat * (self.lambda / slack).powi(2) * 1.5 + 1e-3;
        let (_, cov_value) = grid_max_1d(|s| self.cov_part(s), 0.0, hi, points, refinements);
        mean_value + cov_value
    }

    /// [`evaluate_value`] on the same instance (`T = 1`, `C = 1`).
    pub fn library_value(&self, opts: &SolverOptions) -> Result<f64> {
        let sys = LinearSystem::new(
            DMatrix::from_element(1, 1, self.a),
            DMatrix::from_element(1, 1, self.b),
            DMatrix::from_element(1, 1, 1.0),
            SymMatrix::identity(1),
        )?;
        let cost = CostSpec::new(
            SymMatrix::from_diagonal(&[self.q]),
            SymMatrix::from_diagonal(&[self.qf]),
            SymMatrix::from_diagonal(&[self.r]),
            1,
        )?;
        let nominal = NominalDistribution::stage_invariant(
            MomentPair::new(DVector::from_element(1, self.w_hat), SymMatrix::from_diagonal(&[self.sigma_hat]))?,
            1,
        );
        let p_bar = SymMatrix::from_diagonal(&[self.p_bar]);
        let policy = Policy::wdrc(&sys, &cost, &nominal, self.lambda, &p_bar, opts)?;
        let z = policy.schedule.as_ref().expect("WDRC schedule").z_tilde();
        evaluate_value(&policy.riccati, &z, &DVector::from_element(1, self.x_bar), &p_bar)
    }
}

/// Gaussian law `N(w_hat + delta, s Sigma_hat)` at Gelbrich distance at most
/// `theta` from `N(w_hat, Sigma_hat)`: `|delta|^2 + (sqrt s - 1)^2 Tr Sigma_hat <= theta^2`.
pub fn admissible_gaussian<R: Rng>(nominal: &MomentPair, theta: f64, rng: &mut R) -> Result<(Distribution, f64)> {
    let n = nominal.dim();
    let budget = theta * theta * rng.random_range(0.5..1.0);
    let split: f64 = rng.random_range(0.0..1.0);
    let trace = nominal.cov.trace();
    let dir = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let delta = if dir.norm() > 0.0 {
        dir.normalize() * (split * budget).sqrt()
    } else {
        DVector::zeros(n)
    };
    let root_shift = if trace > 0.0 {
        ((1.0 - split) * budget / trace).sqrt()
    } else {
        0.0
    };
    let root = if rng.random_bool(0.5) {
        1.0 + root_shift
    } else {
        (1.0 - root_shift).max(0.0)
    };
    let scale = root * root;
    let dist_sq = delta.norm_squared() + (root - 1.0).powi(2) * trace;
    let law = Distribution::gaussian(&nominal.mean + delta, SymMatrix::new(nominal.cov.as_matrix() * scale)?)?;
    Ok((law, dist_sq))
}

/// Outcome of one verification suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleCheck {
    fn new(name: &'static str, cases: usize, max_error: f64, tolerance: f64) -> Self {
        OracleCheck {
            name,
            cases,
            max_error,
            tolerance,
            passed: max_error <= tolerance,
        }
    }
}

/// Plant and cost of the two experiments.
pub fn experiment_plant(noise: f64, horizon: usize) -> (LinearSystem, CostSpec) {
    let sys = LinearSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.518, 0.266, 0.405, 0.806]),
        DMatrix::from_row_slice(2, 1, &[-2.972, -2.271]),
        DMatrix::from_row_slice(1, 2, &[1.023, 1.955]),
        SymMatrix::scaled_identity(1, noise),
    )
    .expect("valid plant");
    let cost = CostSpec::new(SymMatrix::identity(2), SymMatrix::identity(2), SymMatrix::identity(1), horizon).expect("valid cost");
    (sys, cost)
}

/// Large-penalty limit on the experiment plant with a zero nominal mean:
/// gain error against LQR, worst-case mean against the nominal mean, and
/// worst-case covariance against the nominal covariance.
pub fn large_penalty_checks(lambda: f64) -> Result<[OracleCheck; 3]> {
    let (sys, cost) = experiment_plant(0.2, 50);
    let sigma_hat = SymMatrix::from_rows(&[vec![0.01, 0.005], vec![0.005, 0.01]])?;
    let nominal = NominalDistribution::stage_invariant(MomentPair::new(DVector::zeros(2), sigma_hat.clone())?, 50);
    let p_bar0 = crate::controller::initial_posterior_cov(&SymMatrix::scaled_identity(2, 0.001), &sys)?;
    let policy = Policy::wdrc(&sys, &cost, &nominal, lambda, &p_bar0, &SolverOptions::default())?;
    let lqr = lqr_gains(&sys.a, &sys.b, cost.q.as_matrix(), cost.qf.as_matrix(), cost.r.as_matrix(), 50);

    let gain_err = (0..50)
        .map(|t| (&policy.riccati.k[t] - &lqr[t]).norm() / lqr[t].norm())
        .fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sol = &policy.riccati;
    let mut mean_err: f64 = 0.0;
    for t in 0..50 {
        let x_bar = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let u = policy.control_input(t, &x_bar);
        let drift = &sys.a * &x_bar + &sys.b * u;
        let w = worst_case_mean(&sol.p[t + 1], &sol.r[t + 1], &drift, &nominal.stage(t).mean, lambda)?;
        mean_err = mean_err.max((w - &nominal.stage(t).mean).amax());
    }

    let schedule = policy.schedule.as_ref().expect("WDRC schedule");
    let cov_err = schedule
        .stages
        .iter()
        .map(|s| (s.cov.as_matrix() - sigma_hat.as_matrix()).norm())
        .fold(0.0, f64::max);

    Ok([
        OracleCheck::new("large-penalty gain vs LQR (rel. Frobenius)", 50, gain_err, 1e-5),
        OracleCheck::new("large-penalty worst-case mean vs nominal", 50, mean_err, 1e-6),
        OracleCheck::new("large-penalty worst-case covariance vs nominal", 50, cov_err, 1e-4),
    ])
}

fn random_spd<R: Rng>(n: usize, shift: f64, scale: f64, rng: &mut R) -> SymMatrix {
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    SymMatrix::new((&l * l.transpose()) * scale + DMatrix::identity(n, n) * shift).expect("square")
}

/// Analytic gradient against central differences on random instances with
/// `n` cycling through 1, 2, 3.
pub fn gradient_check(instances: usize, h: f64, seed: u64) -> Result<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let n = 1 + i % 3;
        let ny = 1 + rng.random_range(0..n);
        let sys = LinearSystem::new(
            DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(ny, n, |_, _| rng.random_range(-1.0..1.0)),
            random_spd(ny, 0.1, 0.3, &mut rng),
        )?;
        let s = random_spd(n, 0.0, 0.5, &mut rng);
        let p = random_spd(n, 0.2, 0.5, &mut rng);
        let lambda = p.max_eigenvalue() + rng.random_range(0.5..5.0);
        let sigma_hat = random_spd(n, 0.05, 0.2, &mut rng);
        let p_bar = random_spd(n, 0.0, 0.2, &mut rng);
        let sigma = random_spd(n, 0.1, 0.3, &mut rng);
        let ctx = CovObjectiveContext::new(&s, &p, lambda, &sigma_hat, &p_bar, &sys)?;
        let analytic = cov_gradient(&sigma, &ctx)?;
        let fd = fd_gradient(|x| cov_objective(x, &ctx).expect("objective at perturbed point"), &sigma, h);
        worst = worst.max((analytic.as_matrix() - &fd).norm() / fd.norm().max(1e-12));
    }
    Ok(OracleCheck::new(
        "covariance gradient vs central differences (rel.)",
        instances,
        worst,
        1e-5,
    ))
}

/// Scalar worst-case covariance against a refined 1-D grid: returns the
/// argument check and the value check.
pub fn scalar_solver_checks(instances: usize, seed: u64) -> Result<[OracleCheck; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut arg_err, mut val_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..instances {
        let inst = ScalarCovInstance::random(&mut rng);
        let (x_grid, f_grid) = grid_max_1d(|x| inst.objective(x), 0.0, inst.bracket(), 10_000, 2);
        let sys = inst.system();
        let (s, p, sh, pb) = (
            SymMatrix::from_diagonal(&[inst.s]),
            SymMatrix::from_diagonal(&[inst.p]),
            SymMatrix::from_diagonal(&[inst.sigma_hat]),
            SymMatrix::from_diagonal(&[inst.p_bar]),
        );
        let ctx = CovObjectiveContext::new(&s, &p, inst.lambda, &sh, &pb, &sys)?;
        let out = solve_worst_case_cov(&ctx, &sh, &SolverOptions::default())?;
        arg_err = arg_err.max((out.cov[(0, 0)] - x_grid).abs() / (1.0 + x_grid.abs()));
        val_err = val_err.max((out.z_tilde - f_grid).abs() / (1.0 + f_grid.abs()));
    }
    Ok([
        OracleCheck::new("scalar worst-case covariance argument vs grid", instances, arg_err, 1e-3),
        OracleCheck::new("scalar worst-case covariance value vs grid", instances, val_err, 1e-4),
    ])
}

/// One-stage scalar value against a grid saddle evaluation (relative error).
pub fn scalar_value_check(instances: usize, seed: u64) -> Result<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inst = ScalarGameInstance::random(&mut rng);
        let lib = inst.library_value(&SolverOptions::default())?;
        let grid = inst.grid_value(401, 4);
        worst = worst.max((lib - grid).abs() / (1.0 + grid.abs()));
    }
    Ok(OracleCheck::new("one-stage scalar value vs grid saddle", instances, worst, 1e-3))
}

/// Large-penalty limit, gradient and scalar suites with the default sizes.
pub fn run_suites(seed: u64) -> Result<Vec<OracleCheck>> {
    let mut out = Vec::new();
    out.extend(large_penalty_checks(1e8)?);
    out.push(gradient_check(50, 1e-6, seed)?);
    out.extend(scalar_solver_checks(20, seed.wrapping_add(1))?);
    out.push(scalar_value_check(20, seed.wrapping_add(2))?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_finds_parabola_peak() {
        let (x, v) = grid_max_1d(|x| -(x - 0.3217).powi(2) + 2.0, -1.0, 1.0, 101, 3);
        assert_relative_eq!(x, 0.3217, epsilon = 1e-6);
        assert_relative_eq!(v, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn min_max_of_separable_saddle() {
        // min_u max_w (u - 1)^2 - (w + 0.5)^2 + u w
        let f = |u: f64, w: f64| (u - 1.0).powi(2) - (w + 0.5).powi(2) + u * w;
        let (u, w, v) = grid_min_max_2d(f, (-3.0, 3.0), (-3.0, 3.0), 201, 3);
        // grad: 2(u-1) + w = 0, -2(w+0.5) + u = 0  =>  u = 1, w = 0
        assert_relative_eq!(u, 1.0, epsilon = 1e-4);
        assert_relative_eq!(w, 0.0, epsilon = 1e-4);
        assert_relative_eq!(v, -0.25, epsilon = 1e-8);
    }

    #[test]
    fn fd_gradient_of_trace_quadratic() {
        // f(X) = Tr[A X] + Tr[X X] has gradient sym(A) + 2X
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        let x = SymMatrix::from_rows(&[vec![0.5, 0.1], vec![0.1, 0.2]]).unwrap();
        let g = fd_gradient(|m| (&a * m.as_matrix()).trace() + (m.as_matrix() * m.as_matrix()).trace(), &x, 1e-5);
        let expected = (&a + a.transpose()) * 0.5 + x.as_matrix() * 2.0;
        assert_relative_eq!(g, expected, epsilon = 1e-8);
    }

    #[test]
    fn textbook_lqr_scalar() {
        // A = B = Q = Qf = R = 1, T = 1: K = -P/(1 + P) = -1/2
        let one = DMatrix::from_element(1, 1, 1.0);
        let k = lqr_gains(&one, &one, &one, &one, &one, 1);
        assert_relative_eq!(k[0][(0, 0)], -0.5);
    }

    #[test]
    fn admissible_laws_stay_in_ball() {
        let nominal = MomentPair::new(
            DVector::from_vec(vec![0.01, 0.02]),
            SymMatrix::from_rows(&[vec![0.01, 0.005], vec![0.005, 0.01]]).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (law, d2) = admissible_gaussian(&nominal, 0.1, &mut rng).unwrap();
            let exact = crate::psd::gelbrich_dist_sq(&law.moments(), &nominal).unwrap();
            assert_relative_eq!(exact, d2, epsilon = 1e-12);
            assert!(d2 <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn scalar_suites_small() {
        for c in scalar_solver_checks(3, 9).unwrap() {
            assert!(c.passed, "{c:?}");
        }
        assert!(gradient_check(6, 1e-6, 2).unwrap().passed);
    }
}
