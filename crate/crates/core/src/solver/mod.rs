//! Minimal total allocation `R(X) = inf{Σm_k : E[ℓ(X - m)] <= 0}`.
//!
//! The default path is a damped Newton iteration on the first-order system
//! `λE[∇ℓ(X - m)] = 1`, `E[ℓ(X - m)] = 0`. Losses without a Hessian,
//! lower bounds on `m`, and Newton stalls go through a sequential quadratic
//! programming loop on the primal problem instead.

mod newton;
mod qp;
mod sqp;

use crate::estimators::ConstraintModel;
use crate::error::{MsraError, Result};
use crate::linalg::zero_sum_basis;
use crate::loss::{recession_probe, Uniqueness};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub use qp::{solve_qp, QpSolution};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Kkt,
    Sqp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub method: Method,
    /// Defaults to `max(1e-8, 0.1·SE)` with `SE` the standard error of the
    /// constraint estimate.
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub init: Option<Vec<f64>>,
    pub accept_nonunique: bool,
    pub lower_bounds: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            method: Method::Kkt,
            tol: None,
            max_iter: 200,
            init: None,
            accept_nonunique: false,
            lower_bounds: None,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions {
            tol: Some(tol),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub m_star: Vec<f64>,
    pub lambda_star: f64,
    /// `Σ m_star`.
    pub risk: f64,
    /// `‖(λE[∇ℓ] - 1, E[ℓ])‖_∞` at the solution.
    pub kkt_residual: f64,
    pub constraint_value: f64,
    pub iterations: usize,
    /// Standard error of the constraint estimate at `m_star`.
    #[serde(rename = "mc_se")]
    pub mc_standard_error: f64,
    /// Sandwich standard errors of `m_star` (absent for deterministic
    /// estimators).
    pub allocation_se: Option<Vec<f64>>,
    pub risk_se: Option<f64>,
    pub uniqueness_flag: Uniqueness,
    pub method: Method,
    pub tol: f64,
}

/// Stacked first-order residual `(λE[∇ℓ(X - m)] - 1, E[ℓ(X - m)])`.
pub fn kkt_residual(model: &dyn ConstraintModel, m: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(MsraError::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let est = model.estimate(m, false)?;
    let mut r: Vec<f64> = est.grad.iter().map(|g| -lambda * g - 1.0).collect();
    r.push(est.value);
    Ok(r)
}

pub fn risk_measure(model: &dyn ConstraintModel, opts: &SolverOptions) -> Result<f64> {
    solve_allocation(model, opts).map(|r| r.risk)
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

pub(crate) fn default_tol(value_se: f64) -> f64 {
    (0.1 * value_se).max(1e-8)
}

/// Tolerances for the residual `(λE[∇ℓ] - 1, E[ℓ])`. Unless fixed by the
/// caller each component gets a tenth of its own standard error, which
/// keeps the stationarity part independent of the scale of the losses.
pub(crate) fn residual_tolerances(
    model: &dyn ConstraintModel,
    m: &[f64],
    lambda: f64,
    value_se: f64,
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let d = model.dim();
    if let Some(t) = opts.tol {
        return Ok(vec![t; d + 1]);
    }
    let mut tols = vec![default_tol(value_se); d + 1];
    if let Some(cov) = model.kkt_covariance(m, lambda)? {
        for k in 0..d {
            tols[k] = default_tol(cov[(k, k)].max(0.0).sqrt());
        }
    }
    Ok(tols)
}

pub(crate) fn within(r: &[f64], tols: &[f64], floor: f64) -> bool {
    r.iter().zip(tols).all(|(r, t)| r.abs() <= t.max(floor))
}

/// Orthonormal zero-sum directions along which `A` has (numerically) no
/// curvature.
pub(crate) fn flat_directions(a: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let d = a.nrows();
    if d < 2 {
        return Vec::new();
    }
    let z = zero_sum_basis(d);
    let reduced = z.transpose() * a * &z;
    let eig = SymmetricEigen::new(reduced);
    let scale = a.amax().max(1e-300);
    (0..d - 1)
        .filter(|&i| eig.eigenvalues[i].abs() <= 1e-10 * scale)
        .map(|i| &z * eig.eigenvectors.column(i))
        .collect()
}

/// Jacobian of `(λE[∇ℓ] - 1, E[ℓ])` in `(m, λ)`.
pub(crate) fn kkt_jacobian(hess: &DMatrix<f64>, g: &[f64], lambda: f64) -> DMatrix<f64> {
    let d = g.len();
    let mut j = DMatrix::zeros(d + 1, d + 1);
    for r in 0..d {
        for c in 0..d {
            j[(r, c)] = -lambda * hess[(r, c)];
        }
        j[(r, d)] = g[r];
        j[(d, r)] = -g[r];
    }
    j
}

/// Solves `J x = b` through the SVD, dropping singular values below
/// `1e-12` of the largest.
pub(crate) fn pseudo_solve(j: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = j.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(b.len()))
}

fn initial_point(model: &dyn ConstraintModel, opts: &SolverOptions) -> Result<(Vec<f64>, f64)> {
    let d = model.dim();
    let mut m0 = match &opts.init {
        Some(init) => {
            if init.len() != d {
                return Err(MsraError::DimensionMismatch { expected: d, got: init.len() });
            }
            init.clone()
        }
        None => (0..d).map(|k| model.marginal_quantile(k, 0.8)).collect(),
    };
    if let Some(lb) = &opts.lower_bounds {
        for (m, l) in m0.iter_mut().zip(lb) {
            *m = m.max(*l);
        }
    }
    let g = model.estimate(&m0, false)?.mean_loss_gradient();
    let total: f64 = g.iter().sum();
    let lambda0 = if total > 0.0 { d as f64 / total } else { 1.0 };
    Ok((m0, lambda0.clamp(1e-6, 1e6)))
}

pub fn solve_allocation(model: &dyn ConstraintModel, opts: &SolverOptions) -> Result<AllocationResult> {
    let d = model.dim();
    if let Some(lb) = &opts.lower_bounds {
        if lb.len() != d {
            return Err(MsraError::DimensionMismatch { expected: d, got: lb.len() });
        }
    }
    if opts.max_iter == 0 {
        return Err(MsraError::invalid("max_iter must be positive"));
    }
    let probe = recession_probe(model.loss(), 64, 0);
    let mut flag = Uniqueness::Unique;
    if probe.bounded() {
        if !opts.accept_nonunique {
            return Err(MsraError::NonUnique(format!(
                "{} loss grows less than {:.0e} along zero-sum direction {:?}",
                model.loss().family_name(),
                probe.threshold,
                probe.bounded_directions[0]
            )));
        }
        flag = Uniqueness::SuspectNonunique;
    }
    let (m0, lambda0) = initial_point(model, opts)?;
    let smooth = model.loss().has_hessian();
    let use_sqp = opts.method == Method::Sqp || !smooth || opts.lower_bounds.is_some();
    let mut method = if use_sqp { Method::Sqp } else { Method::Kkt };
    let outcome = if use_sqp {
        sqp::solve(model, m0, lambda0, opts)?
    } else {
        match newton::solve(model, m0.clone(), lambda0, opts) {
            Ok(o) => o,
            Err(e @ (MsraError::NonConvergence { .. } | MsraError::SingularSystem { .. })) => {
                log::warn!("Newton iteration failed ({e}); switching to SQP");
                method = Method::Sqp;
                sqp::solve(model, m0, lambda0, opts)?
            }
            Err(e) => return Err(e),
        }
    };
    if outcome.flat {
        flag = Uniqueness::SuspectNonunique;
    }
    finish(model, outcome, flag, method)
}

pub(crate) struct Outcome {
    m: Vec<f64>,
    lambda: f64,
    iterations: usize,
    tol: f64,
    flat: bool,
}

fn finish(model: &dyn ConstraintModel, o: Outcome, flag: Uniqueness, method: Method) -> Result<AllocationResult> {
    let d = model.dim();
    let est = model.estimate(&o.m, false)?;
    let g = est.mean_loss_gradient();
    let mut residual: Vec<f64> = g.iter().map(|gk| o.lambda * gk - 1.0).collect();
    residual.push(est.value);
    let (allocation_se, risk_se) = match model.kkt_covariance(&o.m, o.lambda)? {
        Some(cov) => {
            let hess = model.smoothed_hessian(&o.m)?;
            let j = kkt_jacobian(&hess, &g, o.lambda);
            let jinv = match j.clone().try_inverse() {
                Some(inv) => inv,
                None => j.pseudo_inverse(1e-12).map_err(|e| MsraError::invalid(e.to_string()))?,
            };
            let s = &jinv * cov * jinv.transpose();
            let se: Vec<f64> = (0..d).map(|k| s[(k, k)].max(0.0).sqrt()).collect();
            let mut total = 0.0;
            for a in 0..d {
                for b in 0..d {
                    total += s[(a, b)];
                }
            }
            (Some(se), Some(total.max(0.0).sqrt()))
        }
        None => (None, None),
    };
    Ok(AllocationResult {
        risk: o.m.iter().sum(),
        m_star: o.m,
        lambda_star: o.lambda,
        kkt_residual: inf_norm(&residual),
        constraint_value: est.value,
        iterations: o.iterations,
        mc_standard_error: est.value_se,
        allocation_se,
        risk_se,
        uniqueness_flag: flag,
        method,
        tol: o.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{MonteCarloEstimator, QuadratureOracle};
    use crate::loss::{Family, Kernel, LossSpec};
    use crate::scenario::{simulate_gaussian, GaussianModel, ScenarioSet};
    use std::sync::Arc;

    fn zero_oracle() -> QuadratureOracle {
        let zero = GaussianModel::from_rows(&[0.0, 0.0], &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        QuadratureOracle::new(&zero, LossSpec::quadratic_systemic(1.0, 2).unwrap()).unwrap()
    }

    #[test]
    fn deterministic_zero_loss() {
        let res = solve_allocation(&zero_oracle(), &SolverOptions::default()).unwrap();
        let t = 0.5 * (3f64.sqrt() - 1.0);
        assert!((res.risk - (1.0 - 3f64.sqrt())).abs() < 1e-10);
        assert!((res.m_star[0] + t).abs() < 1e-10 && (res.m_star[1] + t).abs() < 1e-10);
        assert_eq!(res.uniqueness_flag, Uniqueness::SuspectNonunique);
        assert!(res.allocation_se.is_none());
    }

    #[test]
    fn residual_at_closed_form_and_small_lambda() {
        let q = zero_oracle();
        let t = 0.5 * (3f64.sqrt() - 1.0);
        // λ(1 + t + t) = 1
        let r = kkt_residual(&q, &[-t, -t], 1.0 / (1.0 + 2.0 * t)).unwrap();
        assert!(inf_norm(&r) < 1e-12);
        let r = kkt_residual(&q, &[1.0, 1.0], 1e-12).unwrap();
        assert!((r[0] + 1.0).abs() < 1e-10 && r[2] < 0.0);
        assert!(kkt_residual(&q, &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn newton_and_sqp_agree() {
        let model = GaussianModel::from_correlation(&[1.0, 1.0], &[vec![1.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let x = Arc::new(simulate_gaussian(&model, 50_000, 4).unwrap());
        let est = MonteCarloEstimator::new(x, LossSpec::quadratic_systemic(1.0, 2).unwrap()).unwrap();
        let a = solve_allocation(&est, &SolverOptions::with_tol(1e-12)).unwrap();
        let b = solve_allocation(&est, &SolverOptions { method: Method::Sqp, ..SolverOptions::with_tol(1e-12) }).unwrap();
        assert_eq!(a.method, Method::Kkt);
        assert_eq!(b.method, Method::Sqp);
        for k in 0..2 {
            assert!((a.m_star[k] - b.m_star[k]).abs() < 1e-8, "{:?} {:?}", a.m_star, b.m_star);
        }
        assert!((a.lambda_star - b.lambda_star).abs() < 1e-6);
        assert!(a.kkt_residual <= 1e-12);
        assert!(a.allocation_se.unwrap()[0] > 0.0);
    }

    #[test]
    fn positively_homogeneous_loss_uses_sqp() {
        let model = GaussianModel::from_correlation(&[1.0, 2.0], &[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let x = Arc::new(simulate_gaussian(&model, 20_000, 8).unwrap());
        let loss = LossSpec::new(Family::Ph1 { alpha: 0.5, beta: 1.0 }, 2).unwrap();
        let est = MonteCarloEstimator::new(x, loss).unwrap();
        let res = solve_allocation(&est, &SolverOptions::default()).unwrap();
        assert_eq!(res.method, Method::Sqp);
        assert!(res.constraint_value.abs() < 1e-8);
        // separable PH1: optimal allocations sit at a common quantile level
        let above = |k: usize| {
            let col = est.scenarios().column(k);
            col.iter().filter(|&&v| v >= res.m_star[k]).count() as f64 / col.len() as f64
        };
        assert!((above(0) - above(1)).abs() < 2e-3, "{} {}", above(0), above(1));
    }

    #[test]
    fn lower_bounds_bind() {
        let model = GaussianModel::from_correlation(&[1.0, 1.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let x = Arc::new(simulate_gaussian(&model, 20_000, 5).unwrap());
        let est = MonteCarloEstimator::new(x, LossSpec::quadratic_systemic(1.0, 2).unwrap()).unwrap();
        let opts = SolverOptions { lower_bounds: Some(vec![0.0, -10.0]), ..Default::default() };
        let res = solve_allocation(&est, &opts).unwrap();
        assert!(res.m_star[0].abs() < 1e-9, "{:?}", res.m_star);
        assert!(res.constraint_value.abs() < 1e-8);
        let free = solve_allocation(&est, &SolverOptions::default()).unwrap();
        assert!(res.risk >= free.risk - 1e-9);
    }

    #[test]
    fn sum_kernel_needs_override() {
        let x = Arc::new(ScenarioSet::from_rows(&[vec![0.1, -0.2], vec![0.3, 0.0]], 0, "rows").unwrap());
        let loss = LossSpec::new(Family::C1 { kernel: Kernel::Exponential }, 2).unwrap();
        let est = MonteCarloEstimator::new(x, loss).unwrap();
        assert!(matches!(solve_allocation(&est, &SolverOptions::default()), Err(MsraError::NonUnique(_))));
        let opts = SolverOptions { accept_nonunique: true, ..Default::default() };
        let res = solve_allocation(&est, &opts).unwrap();
        assert_eq!(res.uniqueness_flag, Uniqueness::SuspectNonunique);
        assert!((res.m_star[0] - res.m_star[1]).abs() < 1e-9);
    }
}
