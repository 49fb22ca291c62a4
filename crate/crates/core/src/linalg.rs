use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Reciprocal pivot-ratio threshold below which an LU factorization is
/// treated as numerically singular.
const SINGULAR_RCOND: f64 = 1e-13;

/// Solves `a x = b` by partial-pivot LU.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let lu = a.clone().lu();
    let diag = lu.u().diagonal();
    let max = diag.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    let min = diag.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
    if !(max > 0.0) || min / max < SINGULAR_RCOND {
        return Err(Error::SingularMatrix { context });
    }
    lu.solve(b).ok_or(Error::SingularMatrix { context })
}

pub fn solve_vec(a: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    let x = solve(a, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()), context)?;
    Ok(x.column(0).into_owned())
}

/// Cholesky factor of a symmetric PD matrix; `None` when not PD.
pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

/// Frobenius inner product `Tr[a' b]`.
pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_detects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            solve(&a, &DMatrix::identity(2, 2), "test"),
            Err(Error::SingularMatrix { context: "test" })
        ));
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let x = solve_vec(&a, &DVector::from_vec(vec![3.0, 4.0]), "test").unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }
}
