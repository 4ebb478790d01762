//! Estimators of `E[ℓ(X - m)]` and its derivatives in `m`.

mod chebyshev;
mod monte_carlo;
mod quadrature;

pub use chebyshev::{halton_points, ChebyshevEstimator, ChebyshevSurrogate, SurrogateOptions};
pub use monte_carlo::{CachePolicy, MonteCarloEstimator};
pub use quadrature::QuadratureOracle;

use crate::error::{MsraError, Result};
use crate::loss::LossSpec;
use crate::rng::BLOCK_ROWS;
use nalgebra::DMatrix;
use rayon::prelude::*;
use std::ops::Range;

/// Constraint value and derivatives at an allocation `m`.
///
/// `grad` is the derivative of `E[ℓ(X - m)]` with respect to `m`, that is
/// `-E[∇ℓ(X - m)]`; `hess` is `E[∇²ℓ(X - m)]`, which is also the second
/// derivative in `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub value_se: f64,
    pub grad: Vec<f64>,
    pub hess: Option<DMatrix<f64>>,
}

impl Estimate {
    /// `E[∇ℓ(X - m)]`.
    pub fn mean_loss_gradient(&self) -> Vec<f64> {
        self.grad.iter().map(|g| -g).collect()
    }
}

/// Anything the allocation solver can query for the constraint.
pub trait ConstraintModel: Send + Sync {
    fn dim(&self) -> usize;

    fn loss(&self) -> &LossSpec;

    fn estimate(&self, m: &[f64], want_hess: bool) -> Result<Estimate>;

    /// Weight of a single sample in the estimate (`1/n`), or zero for
    /// smooth deterministic estimators. Sample averages of kinked losses
    /// have gradient jumps of this order, which bounds the attainable
    /// first-order residual.
    fn granularity(&self) -> f64 {
        0.0
    }

    /// Quantile of the `k`-th loss component.
    fn marginal_quantile(&self, k: usize, level: f64) -> f64;

    /// Standard deviation of the `k`-th loss component.
    fn marginal_scale(&self, k: usize) -> f64;

    /// Covariance of the sample mean of `(λ∇ℓ(X - m) - 1, ℓ(X - m))`, or
    /// `None` for deterministic estimators.
    fn kkt_covariance(&self, _m: &[f64], _lambda: f64) -> Result<Option<DMatrix<f64>>> {
        Ok(None)
    }

    /// Curvature model for losses without a Hessian. Defaults to the
    /// Hessian itself.
    fn smoothed_hessian(&self, m: &[f64]) -> Result<DMatrix<f64>> {
        self.estimate(m, true)?
            .hess
            .ok_or_else(|| MsraError::Unsupported("no curvature model for this estimator".into()))
    }
}

/// Sums per-row contributions over `0..n` in fixed blocks, then combines
/// the block sums with a pairwise tree. The result does not depend on the
/// number of threads.
pub(crate) fn block_sums<F>(n: usize, width: usize, f: F) -> Vec<f64>
where
    F: Fn(Range<usize>, &mut [f64]) + Sync,
{
    let blocks = n.div_ceil(BLOCK_ROWS);
    let partials: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; width];
            f(b * BLOCK_ROWS..((b + 1) * BLOCK_ROWS).min(n), &mut acc);
            acc
        })
        .collect();
    pairwise(&partials, width)
}

fn pairwise(parts: &[Vec<f64>], width: usize) -> Vec<f64> {
    match parts.len() {
        0 => vec![0.0; width],
        1 => parts[0].clone(),
        len => {
            let (a, b) = parts.split_at(len / 2);
            let mut left = pairwise(a, width);
            let right = pairwise(b, width);
            left.iter_mut().zip(right).for_each(|(l, r)| *l += r);
            left
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(MsraError::DimensionMismatch { expected, got });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_sums_are_thread_independent() {
        let n = 3 * BLOCK_ROWS + 17;
        let f = |r: Range<usize>, acc: &mut [f64]| {
            for s in r {
                acc[0] += (s as f64).sin();
                acc[1] += 1.0;
            }
        };
        let a = block_sums(n, 2, f);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = one.install(|| block_sums(n, 2, f));
        assert_eq!(a, b);
        assert_eq!(a[1], n as f64);
    }
}
