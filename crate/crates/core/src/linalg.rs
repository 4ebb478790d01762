//! Small dense linear-algebra helpers.

use crate::error::{MsraError, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const EIGEN_TOL: f64 = 1e-10;

/// Lower-triangular factor `L` with `L Lᵀ = cov` for a positive
/// semi-definite covariance.
///
/// Eigenvalues in `(-1e-10, 0)` are clipped to zero (reported in the
/// returned diagnostics); anything more negative is rejected. Zero pivots
/// produce zero columns, so singular covariances are fine.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<String>)> {
    let d = cov.nrows();
    if d == 0 || cov.ncols() != d {
        return Err(MsraError::invalid(format!(
            "covariance must be square and non-empty, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(MsraError::invalid("covariance has non-finite entries"));
    }
    for i in 0..d {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(MsraError::invalid(format!(
                    "covariance is not symmetric at ({i}, {j}): {} vs {}",
                    cov[(i, j)],
                    cov[(j, i)]
                )));
            }
        }
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let mut diagnostics = Vec::new();
    let (index, min_eig) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    if min_eig < -EIGEN_TOL {
        return Err(MsraError::NotPositiveSemidefinite {
            eigenvalue: min_eig,
            index,
        });
    }
    let work = if min_eig < 0.0 {
        diagnostics.push(format!(
            "clipped eigenvalue {min_eig:.3e} (index {index}) to zero"
        ));
        let clipped = eig.eigenvalues.map(|v| v.max(0.0));
        &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
    } else {
        sym
    };
    Ok((semidefinite_cholesky(&work), diagnostics))
}

fn semidefinite_cholesky(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    let scale = (0..d).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let tiny = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot <= tiny {
            continue;
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..d {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    l
}

/// Orthonormal basis of the zero-sum subspace `{u : Σu = 0}` (Helmert
/// contrasts), returned as the columns of a `d × (d-1)` matrix.
pub fn zero_sum_basis(d: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(d, d.saturating_sub(1));
    for k in 1..d {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            z[(i, k - 1)] = 1.0 / norm;
        }
        z[(k, k - 1)] = -(k as f64) / norm;
    }
    z
}

/// Reciprocal condition number estimate in the 2-norm via singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
