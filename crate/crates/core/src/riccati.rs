//! Backward Riccati synthesis of the penalized minimax problem.
//!
//! With `Phi = B R^{-1} B' - I / lambda` and `X = I + P_{t+1} Phi`:
//!
//! ```text
//! P_t = Q + A' X^{-1} P_{t+1} A
//! S_t = Q + A' P_{t+1} A - P_t
//! r_t = A' X^{-1} (r_{t+1} + P_{t+1} w_t)
//! z_t = z_{t+1} + (2 w_t - Phi r_{t+1})' X^{-1} r_{t+1} + w_t' X^{-1} P_{t+1} w_t - lambda Tr[Sigma_t]
//! K_t = -R^{-1} B' X^{-1} P_{t+1} A
//! L_t = -R^{-1} B' X^{-1} (P_{t+1} w_t + r_{t+1})
//! ```
//!
//! where `(w_t, Sigma_t)` are the nominal disturbance moments. Terminal
//! conditions are `P_T = Q_f`, `S_T = 0`, `r_T = 0`, `z_T = 0`. The
//! recursion is well posed while `lambda I - P_t` stays positive definite
//! for `t = 1..T`.
//!
//! The certainty-equivalent LQG recursion is the same map with
//! `lambda = inf`, i.e. `Phi = B R^{-1} B'` and no penalty term in `z_t`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linalg::solve;
use crate::model::{CostSpec, LinearSystem, NominalDistribution};
use crate::psd::{matrix_to_rows, SymMatrix};

/// Relative safety factor applied to the smallest feasible penalty.
pub const LAMBDA_SAFETY: f64 = 1e-3;

/// Per-stage coefficients of the quadratic value function and the policy gains.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    /// `P_0..P_T`.
    pub p: Vec<SymMatrix>,
    /// `S_0..S_T`.
    pub s: Vec<SymMatrix>,
    /// `r_0..r_T`.
    pub r: Vec<DVector<f64>>,
    /// `z_0..z_T`.
    pub z: Vec<f64>,
    /// `K_0..K_{T-1}`.
    pub k: Vec<DMatrix<f64>>,
    /// `L_0..L_{T-1}`.
    pub l: Vec<DVector<f64>>,
    pub phi: SymMatrix,
    /// Penalty parameter; `f64::INFINITY` for the LQG recursion.
    pub lambda: f64,
    /// Stages where `P_t` or `S_t` left the PSD cone beyond tolerance.
    pub psd_violations: Vec<PsdViolation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsdViolation {
    pub stage: usize,
    pub matrix: char,
    pub min_eigenvalue: f64,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.k.len()
    }

    pub fn is_penalized(&self) -> bool {
        self.lambda.is_finite()
    }

    /// Minimum over `t = 1..T` of the smallest eigenvalue of `lambda I - P_t`.
    pub fn feasibility(&self) -> PenaltyFeasibility {
        feasibility_of(self.lambda, &self.p[1..], 1)
    }

    /// Plain nested-array dump of every coefficient, for golden-file checks.
    pub fn to_dump(&self) -> RiccatiDump {
        RiccatiDump {
            lambda: self.lambda.is_finite().then_some(self.lambda),
            phi: self.phi.to_rows(),
            p: self.p.iter().map(SymMatrix::to_rows).collect(),
            s: self.s.iter().map(SymMatrix::to_rows).collect(),
            r: self.r.iter().map(|v| v.iter().copied().collect()).collect(),
            z: self.z.clone(),
            k: self.k.iter().map(matrix_to_rows).collect(),
            l: self.l.iter().map(|v| v.iter().copied().collect()).collect(),
            psd_violations: self.psd_violations.clone(),
        }
    }
}

/// Serializable form of [`RiccatiSolution`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiDump {
    pub lambda: Option<f64>,
    pub phi: Vec<Vec<f64>>,
    pub p: Vec<Vec<Vec<f64>>>,
    pub s: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub k: Vec<Vec<Vec<f64>>>,
    pub l: Vec<Vec<f64>>,
    pub psd_violations: Vec<PsdViolation>,
}

/// Outcome of the penalty-feasibility check `lambda I > P_t, t = 1..T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenaltyFeasibility {
    pub feasible: bool,
    /// Smallest eigenvalue of `lambda I - P_t` over the checked stages.
    pub margin: f64,
    /// Stage attaining the margin.
    pub stage: usize,
}

fn feasibility_of(lambda: f64, ps: &[SymMatrix], first_stage: usize) -> PenaltyFeasibility {
    let mut out = PenaltyFeasibility {
        feasible: true,
        margin: f64::INFINITY,
        stage: first_stage,
    };
    if !lambda.is_finite() {
        return out;
    }
    for (i, p) in ps.iter().enumerate() {
        let m = lambda - p.max_eigenvalue();
        if m < out.margin {
            out.margin = m;
            out.stage = first_stage + i;
        }
    }
    out.feasible = out.margin > 0.0;
    out
}

/// `B R^{-1} B' - I / lambda`.
pub fn phi_matrix(sys: &LinearSystem, cost: &CostSpec, lambda: f64) -> Result<SymMatrix> {
    let r_inv_bt = solve(cost.r.as_matrix(), &sys.b.transpose(), "R")?;
    let mut phi = &sys.b * r_inv_bt;
    if lambda.is_finite() {
        phi -= DMatrix::identity(sys.nx(), sys.nx()) / lambda;
    }
    SymMatrix::new(phi)
}

struct Recursion<'a> {
    sys: &'a LinearSystem,
    cost: &'a CostSpec,
    phi: SymMatrix,
    r_inv_bt: DMatrix<f64>,
    lambda: f64,
}

struct StageCoefficients {
    p: SymMatrix,
    s: SymMatrix,
    r: DVector<f64>,
    z: f64,
    k: DMatrix<f64>,
    l: DVector<f64>,
}

impl<'a> Recursion<'a> {
    fn new(sys: &'a LinearSystem, cost: &'a CostSpec, lambda: f64) -> Result<Self> {
        cost.check_against(sys)?;
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
        }
        let r_inv_bt = solve(cost.r.as_matrix(), &sys.b.transpose(), "R")?;
        let phi = phi_matrix(sys, cost, lambda)?;
        Ok(Recursion {
            sys,
            cost,
            phi,
            r_inv_bt,
            lambda,
        })
    }

    /// `P_t` only.
    fn step_p(&self, p_next: &SymMatrix) -> Result<SymMatrix> {
        let n = self.sys.nx();
        let x = DMatrix::identity(n, n) + p_next.as_matrix() * self.phi.as_matrix();
        let y = solve(&x, &(p_next.as_matrix() * &self.sys.a), "I + P Phi")?;
        SymMatrix::new(self.cost.q.as_matrix() + self.sys.a.transpose() * y)
    }

    fn step(
        &self,
        p_next: &SymMatrix,
        r_next: &DVector<f64>,
        z_next: f64,
        w_hat: &DVector<f64>,
        sigma_hat: &SymMatrix,
    ) -> Result<StageCoefficients> {
        let n = self.sys.nx();
        let a = &self.sys.a;
        let pm = p_next.as_matrix();
        let x = DMatrix::identity(n, n) + pm * self.phi.as_matrix();

        // one factorization for X^{-1} [P A | r | P w]
        let pw = pm * w_hat;
        let mut rhs = DMatrix::zeros(n, n + 2);
        rhs.columns_mut(0, n).copy_from(&(pm * a));
        rhs.column_mut(n).copy_from(r_next);
        rhs.column_mut(n + 1).copy_from(&pw);
        let y = solve(&x, &rhs, "I + P Phi")?;
        let xi_pa = y.columns(0, n).into_owned();
        let xi_r = y.column(n).into_owned();
        let xi_pw = y.column(n + 1).into_owned();

        let q = self.cost.q.as_matrix();
        let p = SymMatrix::new(q + a.transpose() * &xi_pa)?;
        let s = SymMatrix::new(q + a.transpose() * pm * a - p.as_matrix())?;
        let r = a.transpose() * (&xi_r + &xi_pw);
        let drive = w_hat * 2.0 - self.phi.as_matrix() * r_next;
        let mut z = z_next + drive.dot(&xi_r) + w_hat.dot(&xi_pw);
        if self.lambda.is_finite() {
            z -= self.lambda * sigma_hat.trace();
        }
        let k = -(&self.r_inv_bt * &xi_pa);
        let l = -(&self.r_inv_bt * (&xi_pw + &xi_r));
        Ok(StageCoefficients { p, s, r, z, k, l })
    }
}

fn check_nominal(sys: &LinearSystem, cost: &CostSpec, nominal: &NominalDistribution) -> Result<()> {
    check_dim("nominal horizon", cost.horizon, nominal.horizon())?;
    check_dim("nominal dimension", sys.nx(), nominal.dim())
}

fn run(sys: &LinearSystem, cost: &CostSpec, nominal: &NominalDistribution, lambda: f64) -> Result<RiccatiSolution> {
    check_nominal(sys, cost, nominal)?;
    let rec = Recursion::new(sys, cost, lambda)?;
    let horizon = cost.horizon;
    let n = sys.nx();

    let mut p = vec![cost.qf.clone(); horizon + 1];
    let mut s = vec![SymMatrix::zeros(n); horizon + 1];
    let mut r = vec![DVector::zeros(n); horizon + 1];
    let mut z = vec![0.0; horizon + 1];
    let mut k = vec![DMatrix::zeros(sys.nu(), n); horizon];
    let mut l = vec![DVector::zeros(sys.nu()); horizon];
    let mut psd_violations = Vec::new();

    for t in (0..horizon).rev() {
        if lambda.is_finite() {
            let margin = lambda - p[t + 1].max_eigenvalue();
            if !(margin > 0.0) {
                return Err(Error::PenaltyTooSmall { stage: t + 1, margin });
            }
        }
        let nominal_t = nominal.stage(t);
        let c = rec
            .step(&p[t + 1], &r[t + 1], z[t + 1], &nominal_t.mean, &nominal_t.cov)
            .map_err(|e| e.at_stage(t))?;
        for (name, m) in [('P', &c.p), ('S', &c.s)] {
            let min_eigenvalue = m.min_eigenvalue();
            if min_eigenvalue < -m.psd_tolerance() {
                warn!("{name}_{t} is not PSD (min eigenvalue {min_eigenvalue:e})");
                psd_violations.push(PsdViolation {
                    stage: t,
                    matrix: name,
                    min_eigenvalue,
                });
            }
        }
        p[t] = c.p;
        s[t] = c.s;
        r[t] = c.r;
        z[t] = c.z;
        k[t] = c.k;
        l[t] = c.l;
    }

    Ok(RiccatiSolution {
        p,
        s,
        r,
        z,
        k,
        l,
        phi: rec.phi,
        lambda,
        psd_violations,
    })
}

/// Backward pass of the penalized problem. Fails with
/// [`Error::PenaltyTooSmall`] at the first stage where `lambda I - P_t` is
/// not positive definite.
pub fn backward_pass(sys: &LinearSystem, cost: &CostSpec, nominal: &NominalDistribution, lambda: f64) -> Result<RiccatiSolution> {
    if !lambda.is_finite() {
        return Err(Error::InvalidParameter("lambda must be finite".into()));
    }
    run(sys, cost, nominal, lambda)
}

/// Certainty-equivalent LQG recursion driven by the nominal mean.
pub fn lqg_riccati(sys: &LinearSystem, cost: &CostSpec, nominal: &NominalDistribution) -> Result<RiccatiSolution> {
    run(sys, cost, nominal, f64::INFINITY)
}

/// Runs the `P` recursion only and reports the smallest margin of
/// `lambda I - P_t`. Stops at the first infeasible stage, since later
/// iterates are meaningless. Infeasibility is reported, never raised.
pub fn check_penalty(sys: &LinearSystem, cost: &CostSpec, lambda: f64) -> Result<PenaltyFeasibility> {
    let rec = Recursion::new(sys, cost, lambda)?;
    let mut p = cost.qf.clone();
    let mut out = feasibility_of(lambda, std::slice::from_ref(&p), cost.horizon);
    for t in (1..cost.horizon).rev() {
        if !out.feasible {
            break;
        }
        p = rec.step_p(&p)?;
        let f = feasibility_of(lambda, std::slice::from_ref(&p), t);
        if f.margin < out.margin {
            out = f;
        }
    }
    Ok(out)
}

/// Bisection for the smallest feasible penalty in `[lo, hi]`, returned
/// with the `1 + LAMBDA_SAFETY` factor applied. A feasible `lo` is returned
/// as-is (times the safety factor).
pub fn min_feasible_lambda(sys: &LinearSystem, cost: &CostSpec, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    if !(lo > 0.0 && hi >= lo && tol > 0.0) {
        return Err(Error::InvalidParameter(format!("bad bracket [{lo}, {hi}] / tol {tol}")));
    }
    if !check_penalty(sys, cost, hi)?.feasible {
        return Err(Error::NoFeasibleLambda { lo, hi });
    }
    if check_penalty(sys, cost, lo)?.feasible {
        return Ok(lo * (1.0 + LAMBDA_SAFETY));
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        if check_penalty(sys, cost, mid)?.feasible {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi * (1.0 + LAMBDA_SAFETY))
}

/// Brackets and bisects the smallest feasible penalty starting from the
/// terminal bound `lambda > max eig(Q_f)`.
pub fn find_min_feasible_lambda(sys: &LinearSystem, cost: &CostSpec) -> Result<f64> {
    let lo = cost.qf.max_eigenvalue().max(1e-8);
    let mut hi = 2.0 * lo;
    let mut doublings = 0;
    while !check_penalty(sys, cost, hi)?.feasible {
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::NoFeasibleLambda { lo, hi });
        }
    }
    min_feasible_lambda(sys, cost, lo, hi, 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psd::MomentPair;
    use approx::assert_relative_eq;

    fn scalar_system() -> (LinearSystem, CostSpec) {
        let one = DMatrix::from_element(1, 1, 1.0);
        let sys = LinearSystem::new(one.clone(), one.clone(), one, SymMatrix::identity(1)).unwrap();
        let cost = CostSpec::new(SymMatrix::identity(1), SymMatrix::identity(1), SymMatrix::identity(1), 2).unwrap();
        (sys, cost)
    }

    fn zero_nominal(n: usize, horizon: usize) -> NominalDistribution {
        NominalDistribution::stage_invariant(MomentPair::new(DVector::zeros(n), SymMatrix::zeros(n)).unwrap(), horizon)
    }

    #[test]
    fn terminal_conditions() {
        let (sys, cost) = scalar_system();
        let sol = backward_pass(&sys, &cost, &zero_nominal(1, 2), 10.0).unwrap();
        assert_eq!(sol.p[2], cost.qf);
        assert_eq!(sol.s[2], SymMatrix::zeros(1));
        assert_eq!(sol.r[2][0], 0.0);
        assert_eq!(sol.z[2], 0.0);
    }

    #[test]
    fn scalar_two_step_by_hand() {
        // A=B=C=Q=Qf=R=1, lambda=10: phi = 1 - 0.1 = 0.9
        // P_1 = 1 + 1/(1 + 0.9) = 1 + 1/1.9
        // K_1 = -1/(1.9)
        // P_0 = 1 + P_1/(1 + 0.9 P_1), K_0 = -P_1/(1 + 0.9 P_1)
        let (sys, cost) = scalar_system();
        let sol = backward_pass(&sys, &cost, &zero_nominal(1, 2), 10.0).unwrap();
        let p1 = 1.0 + 1.0 / 1.9;
        let p0 = 1.0 + p1 / (1.0 + 0.9 * p1);
        assert_relative_eq!(sol.p[1][(0, 0)], p1, epsilon = 1e-14);
        assert_relative_eq!(sol.p[0][(0, 0)], p0, epsilon = 1e-14);
        assert_relative_eq!(sol.k[1][(0, 0)], -1.0 / 1.9, epsilon = 1e-14);
        assert_relative_eq!(sol.k[0][(0, 0)], -p1 / (1.0 + 0.9 * p1), epsilon = 1e-14);
        // S_1 = Q + A'P_2A - P_1 = 2 - p1
        assert_relative_eq!(sol.s[1][(0, 0)], 2.0 - p1, epsilon = 1e-14);
    }

    #[test]
    fn zero_cost_gives_zero_coefficients() {
        let a = DMatrix::from_row_slice(2, 2, &[0.518, 0.266, 0.405, 0.806]);
        let b = DMatrix::from_row_slice(2, 1, &[-2.972, -2.271]);
        let c = DMatrix::from_row_slice(1, 2, &[1.023, 1.955]);
        let sys = LinearSystem::new(a, b, c, SymMatrix::scaled_identity(1, 0.2)).unwrap();
        let cost = CostSpec::new(SymMatrix::zeros(2), SymMatrix::zeros(2), SymMatrix::identity(1), 5).unwrap();
        let nominal = NominalDistribution::stage_invariant(
            MomentPair::new(DVector::from_vec(vec![0.3, -0.2]), SymMatrix::identity(2)).unwrap(),
            5,
        );
        let sol = backward_pass(&sys, &cost, &nominal, 3.0).unwrap();
        for t in 0..5 {
            assert!(sol.p[t].iter().all(|v| *v == 0.0));
            assert!(sol.s[t].iter().all(|v| *v == 0.0));
            assert!(sol.k[t].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn penalty_too_small_detected_at_terminal_stage() {
        let (sys, cost) = scalar_system();
        let err = backward_pass(&sys, &cost, &zero_nominal(1, 2), 0.5).unwrap_err();
        assert!(matches!(err, Error::PenaltyTooSmall { stage: 2, .. }));
        let f = check_penalty(&sys, &cost, 0.5).unwrap();
        assert!(!f.feasible);
        assert_eq!(f.stage, 2);
        assert_relative_eq!(f.margin, -0.5);
    }

    #[test]
    fn huge_lambda_is_feasible() {
        let (sys, cost) = scalar_system();
        let f = check_penalty(&sys, &cost, 1e12).unwrap();
        assert!(f.feasible);
        let sol = backward_pass(&sys, &cost, &zero_nominal(1, 2), 1e12).unwrap();
        let max_p = sol.p[1..].iter().map(|p| p.max_eigenvalue()).fold(0.0, f64::max);
        assert_relative_eq!(f.margin, 1e12 - max_p, max_relative = 1e-12);
    }

    #[test]
    fn identity_terminal_threshold() {
        // A = 0: P_t = Q = I for t < T and P_T = Qf = I, so the threshold is 1.
        let sys = LinearSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            SymMatrix::identity(1),
        )
        .unwrap();
        let cost = CostSpec::new(SymMatrix::identity(2), SymMatrix::identity(2), SymMatrix::identity(1), 4).unwrap();
        let lam = min_feasible_lambda(&sys, &cost, 0.5, 4.0, 1e-10).unwrap();
        assert_relative_eq!(lam, 1.0 + LAMBDA_SAFETY, max_relative = 1e-8);
        // feasible lower end is returned as-is
        let lam = min_feasible_lambda(&sys, &cost, 2.0, 4.0, 1e-10).unwrap();
        assert_relative_eq!(lam, 2.0 * (1.0 + LAMBDA_SAFETY));
        assert!(matches!(
            min_feasible_lambda(&sys, &cost, 0.1, 0.5, 1e-6),
            Err(Error::NoFeasibleLambda { .. })
        ));
    }

    #[test]
    fn zero_drivers_give_zero_affine_terms() {
        let (sys, cost) = scalar_system();
        let sol = backward_pass(&sys, &cost, &zero_nominal(1, 2), 4.0).unwrap();
        assert!(sol.r.iter().all(|r| r[0] == 0.0));
        assert!(sol.l.iter().all(|l| l[0] == 0.0));
    }

    #[test]
    fn dump_has_all_stages() {
        let (sys, cost) = scalar_system();
        let sol = lqg_riccati(&sys, &cost, &zero_nominal(1, 2)).unwrap();
        let d = sol.to_dump();
        assert_eq!(d.lambda, None);
        assert_eq!(d.p.len(), 3);
        assert_eq!(d.k.len(), 2);
        assert!(serde_json::to_string(&d).is_ok());
    }
}
