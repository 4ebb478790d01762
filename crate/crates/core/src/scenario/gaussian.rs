use super::{fill_blocks, ScenarioSet};
use crate::error::{MsraError, Result};
use crate::linalg::psd_factor;
use crate::rng::{block_rng, standard_normal};
use nalgebra::{DMatrix, DVector};

/// Multivariate normal loss model `N(mean, covariance)`.
#[derive(Clone, Debug)]
pub struct GaussianModel {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
    diagnostics: Vec<String>,
}

impl GaussianModel {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() {
            return Err(MsraError::DimensionMismatch {
                expected: mean.len(),
                got: covariance.nrows(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(MsraError::invalid("mean has non-finite entries"));
        }
        let (factor, diagnostics) = psd_factor(&covariance)?;
        for msg in &diagnostics {
            log::warn!("{msg}");
        }
        Ok(GaussianModel {
            mean,
            covariance,
            factor,
            diagnostics,
        })
    }

    pub fn from_rows(mean: &[f64], covariance: &[Vec<f64>]) -> Result<Self> {
        let d = mean.len();
        if covariance.len() != d || covariance.iter().any(|r| r.len() != d) {
            return Err(MsraError::invalid(format!("covariance must be {d}x{d}")));
        }
        GaussianModel::new(
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(d, d, &covariance.concat()),
        )
    }

    /// Zero-mean model with unit-free standard deviations and correlation.
    pub fn from_correlation(sigma: &[f64], corr: &[Vec<f64>]) -> Result<Self> {
        let d = sigma.len();
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| sigma[i] * sigma[j] * corr[i][j]).collect())
            .collect();
        GaussianModel::from_rows(&vec![0.0; d], &cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower-triangular `L` with `L Lᵀ` equal to the (clipped) covariance.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    pub fn tag(&self) -> String {
        format!("gaussian(d={})", self.dim())
    }
}

/// Draws `n` i.i.d. rows from the model: `x = mean + L z` with `z` standard
/// normal by inversion.
pub fn simulate_gaussian(model: &GaussianModel, n: usize, seed: u64) -> Result<ScenarioSet> {
    if n == 0 {
        return Err(MsraError::invalid("n must be at least 1"));
    }
    let d = model.dim();
    let l = &model.factor;
    let mu = &model.mean;
    let data = fill_blocks(n, d, |block, rows| {
        let mut rng = block_rng(seed, block);
        let mut z = vec![0.0; d];
        for row in rows.chunks_mut(d) {
            for v in z.iter_mut() {
                *v = standard_normal(&mut rng);
            }
            for i in 0..d {
                let mut x = mu[i];
                for j in 0..=i {
                    x += l[(i, j)] * z[j];
                }
                row[i] = x;
            }
        }
    });
    ScenarioSet::new(data, n, d, seed, model.tag())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_covariance_gives_mean() {
        let m = GaussianModel::from_rows(&[0.0, 0.0], &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let s = simulate_gaussian(&m, 5, 3).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn moments_match() {
        let m = GaussianModel::from_rows(&[1.0, 2.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let n = 1_000_000;
        let s = simulate_gaussian(&m, n, 11).unwrap();
        let stats = s.column_summary();
        assert!((stats[0].mean - 1.0).abs() < 0.004);
        assert!((stats[1].mean - 2.0).abs() < 0.004);
    }

    #[test]
    fn deterministic_given_seed() {
        let m = GaussianModel::from_correlation(&[1.0, 2.0], &[vec![1.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let a = simulate_gaussian(&m, 10_000, 5).unwrap();
        let b = simulate_gaussian(&m, 10_000, 5).unwrap();
        let c = simulate_gaussian(&m, 10_000, 6).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn non_psd_rejected() {
        let err = GaussianModel::from_rows(&[0.0, 0.0], &[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap_err();
        assert!(err.to_string().contains("eigenvalue"));
    }
}
