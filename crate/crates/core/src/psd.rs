//! Symmetric-matrix calculus: PSD square roots, the Bures distance between
//! covariance matrices and the Gelbrich bound on the 2-Wasserstein distance.
//!
//! Every symmetric quantity in the crate (cost weights, noise covariances,
//! Riccati coefficients, filter covariances) is stored as a [`SymMatrix`],
//! which is symmetrized on construction so that `m[(i, j)] == m[(j, i)]`
//! holds exactly.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

/// Relative PSD tolerance; eigenvalues above `-PSD_REL_TOL * (1 + max|diag|)`
/// count as zero.
pub const PSD_REL_TOL: f64 = 1e-9;

/// Dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes `(m + m') / 2`. Fails on non-square or empty input.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 {
            return Err(Error::InvalidParameter("symmetric matrix must have dim >= 1".into()));
        }
        check_dim("symmetric matrix (columns)", m.nrows(), m.ncols())?;
        Ok(SymMatrix(symmetrize(&m)))
    }

    /// Builds from row-major nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        SymMatrix::new(matrix_from_rows(rows)?)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        SymMatrix(DMatrix::identity(n, n) * s)
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn eigen(&self) -> SymmetricEigen<f64, nalgebra::Dyn> {
        self.0.clone().symmetric_eigen()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().eigenvalues.min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigen().eigenvalues.max()
    }

    /// `PSD_REL_TOL * (1 + max|diag|)`.
    pub fn psd_tolerance(&self) -> f64 {
        let diag_max = self.0.diagonal().iter().fold(0.0_f64, |m, d| m.max(d.abs()));
        PSD_REL_TOL * (1.0 + diag_max)
    }

    pub fn check_psd(&self) -> Result<()> {
        let min_eigenvalue = self.min_eigenvalue();
        let tolerance = self.psd_tolerance();
        if min_eigenvalue >= -tolerance {
            Ok(())
        } else {
            Err(Error::NotPsd { min_eigenvalue, tolerance })
        }
    }

    pub fn is_psd(&self) -> bool {
        self.check_psd().is_ok()
    }

    /// Strict positive definiteness: min eigenvalue above the PSD tolerance.
    pub fn check_pd(&self) -> Result<()> {
        let min_eigenvalue = self.min_eigenvalue();
        if min_eigenvalue > self.psd_tolerance() {
            Ok(())
        } else {
            Err(Error::NotPd { min_eigenvalue })
        }
    }

    /// Applies `f` to the eigenvalues: `V diag(f(l)) V'`.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let eig = self.eigen();
        let mapped = eig.eigenvalues.map(f);
        let m = &eig.eigenvectors * DMatrix::from_diagonal(&mapped) * eig.eigenvectors.transpose();
        SymMatrix(symmetrize(&m))
    }

    /// Rows as nested vectors, for serialization.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.0)
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl From<SymMatrix> for DMatrix<f64> {
    fn from(m: SymMatrix) -> Self {
        m.0
    }
}

/// Mean and covariance of a random vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPair {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
}

impl MomentPair {
    pub fn new(mean: DVector<f64>, cov: SymMatrix) -> Result<Self> {
        check_dim("moment pair covariance", mean.len(), cov.dim())?;
        cov.check_psd()?;
        Ok(MomentPair { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::InvalidParameter("matrix must be non-empty".into()));
    }
    for row in rows {
        check_dim("matrix row length", ncols, row.len())?;
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Unique PSD square root. Eigenvalues within the PSD tolerance of zero are
/// clamped before rooting.
pub fn psd_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    m.check_psd()?;
    Ok(m.map_eigenvalues(|l| l.max(0.0).sqrt()))
}

/// `Tr[(a^{1/2} b a^{1/2})^{1/2}]`, the fidelity term of the Bures distance.
pub fn fidelity_trace(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    check_dim("fidelity arguments", a.dim(), b.dim())?;
    b.check_psd()?;
    let ra = psd_sqrt(a)?;
    let inner = SymMatrix::new(ra.as_matrix() * b.as_matrix() * ra.as_matrix())?;
    // inner is PSD up to round-off inherited from a and b
    Ok(inner.eigen().eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum())
}

/// Squared Bures distance `Tr[a + b - 2 (a^{1/2} b a^{1/2})^{1/2}]`, clamped at zero.
pub fn bures_sq(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    let fid = fidelity_trace(a, b)?;
    Ok((a.trace() + b.trace() - 2.0 * fid).max(0.0))
}

/// Squared Gelbrich distance: squared mean gap plus the squared Bures
/// distance of the covariances. Lower bound on the squared 2-Wasserstein
/// distance, exact for Gaussians.
pub fn gelbrich_dist_sq(p: &MomentPair, q: &MomentPair) -> Result<f64> {
    check_dim("gelbrich mean", p.dim(), q.dim())?;
    Ok((&p.mean - &q.mean).norm_squared() + bures_sq(&p.cov, &q.cov)?)
}

/// Projects onto `{X : X >= floor * I}` by flooring eigenvalues.
pub fn floor_eigenvalues(m: &SymMatrix, floor: f64) -> SymMatrix {
    m.map_eigenvalues(|l| l.max(floor))
}
