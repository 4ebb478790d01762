//! Derivatives of the risk and its allocation: under a shock `X + tY` and
//! under the systemic weight `α`.
//!
//! Both come from differentiating the first-order system, which leads to
//! the saddle matrix
//!
//! ```text
//! M = | λA   -1/λ |      A = E[∇²ℓ(X - m)]
//!     | 1ᵀ    0   |
//! ```
//!
//! and a right-hand side that depends on the perturbation.

mod closed_form;

pub use closed_form::{
    alpha_closed_form, exogenous_shock_closed_form, exp_bivariate_allocation, src_closed_form, src_grid, AlphaMoments,
};

use crate::error::{MsraError, Result};
use crate::estimators::{ConstraintModel, MonteCarloEstimator};
use crate::linalg::condition_number;
use crate::scenario::ScenarioSet;
use crate::solver::{solve_allocation, AllocationResult, SolverOptions};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Condition estimate above which `M` is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMethod {
    LinearSystem,
    FiniteDifference,
    ClosedForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub marginal_risk: f64,
    pub marginal_alloc: Vec<f64>,
    pub lambda_dot: f64,
    pub method: SensitivityMethod,
    pub marginal_risk_se: Option<f64>,
    pub marginal_alloc_se: Option<Vec<f64>>,
    pub condition: Option<f64>,
}

/// `M z = V` with `z = (ṁ, λ̇)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaddleSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub condition: f64,
}

impl SaddleSystem {
    pub fn new(hess: &DMatrix<f64>, lambda: f64, top: DVector<f64>, bottom: f64) -> Self {
        let d = hess.nrows();
        let mut matrix = DMatrix::zeros(d + 1, d + 1);
        for i in 0..d {
            for j in 0..d {
                matrix[(i, j)] = lambda * hess[(i, j)];
            }
            matrix[(i, d)] = -1.0 / lambda;
            matrix[(d, i)] = 1.0;
        }
        let mut rhs = DVector::zeros(d + 1);
        rhs.rows_mut(0, d).copy_from(&top);
        rhs[d] = bottom;
        let condition = condition_number(&matrix);
        SaddleSystem { matrix, rhs, condition }
    }

    fn inverse(&self) -> Result<DMatrix<f64>> {
        if !(self.condition < SINGULAR_CONDITION) {
            return Err(MsraError::SingularSystem { condition: self.condition });
        }
        self.matrix
            .clone()
            .try_inverse()
            .ok_or(MsraError::SingularSystem { condition: self.condition })
    }
}

/// Solves the saddle system and unpacks `(RA(X;Y), λ(X;Y))`.
pub fn marginal_allocation(system: &SaddleSystem) -> Result<SensitivityResult> {
    let d = system.rhs.len() - 1;
    let z = system.inverse()? * &system.rhs;
    Ok(SensitivityResult {
        marginal_risk: system.rhs[d],
        marginal_alloc: z.rows(0, d).iter().copied().collect(),
        lambda_dot: z[d],
        method: SensitivityMethod::LinearSystem,
        marginal_risk_se: None,
        marginal_alloc_se: None,
        condition: Some(system.condition),
    })
}

/// `R(X;Y) = λ E[∇ℓ(X - m)·Y]`, with `Y` given scenario by scenario.
pub fn marginal_risk(est: &MonteCarloEstimator, alloc: &AllocationResult, y: &ScenarioSet) -> Result<f64> {
    let x = est.scenarios();
    x.check_aligned(y)?;
    let d = x.d();
    let loss = est.loss();
    let m = &alloc.m_star;
    let sums = crate::estimators::block_sums(x.n(), 1, |rows, acc| {
        let mut r = vec![0.0; d];
        let mut g = vec![0.0; d];
        for s in rows {
            let xs = x.row(s);
            for k in 0..d {
                r[k] = xs[k] - m[k];
            }
            loss.evaluate(&r, Some(&mut g), None);
            acc[0] += g.iter().zip(y.row(s)).map(|(a, b)| a * b).sum::<f64>();
        }
    });
    Ok(alloc.lambda_star * sums[0] / x.n() as f64)
}

/// Per-scenario right-hand side: `(top_s, bottom_s)` from the residual
/// `X_s - m`, the loss gradient and Hessian there, and the scenario index.
type Rhs<'a> = dyn Fn(usize, &[f64], &[f64], &[f64], &mut [f64]) -> f64 + Sync + 'a;

/// Builds the saddle system from sample means of the right-hand side and
/// returns it together with the influence-function covariance of `z`.
fn linear_sensitivity(est: &MonteCarloEstimator, alloc: &AllocationResult, rhs: &Rhs) -> Result<SensitivityResult> {
    let loss = est.loss();
    if !loss.has_hessian() {
        return Err(MsraError::Unsupported(format!(
            "{} has no Hessian; use finite differences of the solver",
            loss.family_name()
        )));
    }
    let x = est.scenarios();
    let d = x.d();
    let n = x.n() as f64;
    let m = &alloc.m_star;
    let lambda = alloc.lambda_star;
    let smoother = est.smoother();
    let scan = |f: &(dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Sync), width: usize| {
        crate::estimators::block_sums(x.n(), width, |rows, acc| {
            let mut r = vec![0.0; d];
            let mut g = vec![0.0; d];
            let mut h = vec![0.0; d * d];
            let mut top = vec![0.0; d];
            let mut jumps = smoother.scratch();
            for s in rows {
                let xs = x.row(s);
                for k in 0..d {
                    r[k] = xs[k] - m[k];
                }
                loss.evaluate(&r, Some(&mut g), Some(&mut h));
                smoother.add(loss, &r, &mut h, &mut jumps);
                let bottom = rhs(s, &r, &g, &h, &mut top);
                top.push(bottom);
                f(&h, &top, &r, acc);
                top.pop();
            }
        })
    };
    let w1 = d * d + d + 1;
    let first = scan(
        &|h, top, _, acc| {
            for (a, v) in acc[..d * d].iter_mut().zip(h) {
                *a += v;
            }
            for (a, v) in acc[d * d..].iter_mut().zip(top) {
                *a += v;
            }
        },
        w1,
    );
    let hess = DMatrix::from_row_slice(d, d, &first[..d * d]) / n;
    let top = DVector::from_iterator(d, first[d * d..d * d + d].iter().map(|v| v / n));
    let system = SaddleSystem::new(&hess, lambda, top, first[w1 - 1] / n);
    let mut result = marginal_allocation(&system)?;
    let inv = system.inverse()?;
    let zm = result.marginal_alloc.clone();
    let total: f64 = zm.iter().sum();
    let w = d + 1;
    let second = scan(
        &|h, top, _, acc| {
            let mut u = vec![0.0; w];
            for i in 0..d {
                let hz: f64 = (0..d).map(|j| h[i * d + j] * zm[j]).sum();
                u[i] = top[i] - lambda * hz;
            }
            u[d] = top[d] - total;
            for i in 0..w {
                acc[i] += u[i];
                for j in 0..w {
                    acc[w + i * w + j] += u[i] * u[j];
                }
            }
        },
        w + w * w,
    );
    let mean: Vec<f64> = second[..w].iter().map(|v| v / n).collect();
    let cov = DMatrix::from_fn(w, w, |i, j| second[w + i * w + j] / n - mean[i] * mean[j]);
    let cz = &inv * &cov * inv.transpose() / n;
    result.marginal_alloc_se = Some((0..d).map(|k| cz[(k, k)].max(0.0).sqrt()).collect());
    result.marginal_risk_se = Some((cov[(d, d)].max(0.0) / n).sqrt());
    Ok(result)
}

/// Saddle system for a shock `Y` aligned scenario by scenario with `X`.
pub fn saddle_system(est: &MonteCarloEstimator, alloc: &AllocationResult, y: &ScenarioSet) -> Result<SaddleSystem> {
    est.scenarios().check_aligned(y)?;
    let loss = est.loss();
    if !loss.has_hessian() {
        return Err(MsraError::Unsupported(format!("{} has no Hessian", loss.family_name())));
    }
    let hess = est.smoothed_hessian(&alloc.m_star)?;
    let x = est.scenarios();
    let d = x.d();
    let m = &alloc.m_star;
    let smoother = est.smoother();
    let sums = crate::estimators::block_sums(x.n(), d + 1, |rows, acc| {
        let mut r = vec![0.0; d];
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        let mut jumps = smoother.scratch();
        for s in rows {
            let xs = x.row(s);
            let ys = y.row(s);
            for k in 0..d {
                r[k] = xs[k] - m[k];
            }
            loss.evaluate(&r, Some(&mut g), Some(&mut h));
            smoother.add(loss, &r, &mut h, &mut jumps);
            for i in 0..d {
                acc[i] += (0..d).map(|j| h[i * d + j] * ys[j]).sum::<f64>();
            }
            acc[d] += g.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>();
        }
    });
    let n = x.n() as f64;
    let lambda = alloc.lambda_star;
    let top = DVector::from_iterator(d, sums[..d].iter().map(|v| lambda * v / n));
    Ok(SaddleSystem::new(&hess, lambda, top, lambda * sums[d] / n))
}

/// `R(X;Y)`, `RA(X;Y)` and `λ(X;Y)` from the saddle system, with
/// influence-function standard errors.
pub fn shock_sensitivity(est: &MonteCarloEstimator, alloc: &AllocationResult, y: &ScenarioSet) -> Result<SensitivityResult> {
    est.scenarios().check_aligned(y)?;
    let d = y.d();
    let lambda = alloc.lambda_star;
    linear_sensitivity(est, alloc, &|s, _, g, h, top| {
        let ys = y.row(s);
        for i in 0..d {
            top[i] = lambda * (0..d).map(|j| h[i * d + j] * ys[j]).sum::<f64>();
        }
        lambda * g.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>()
    })
}

/// Derivatives in the systemic weight of `ℓ = Σg(x_k) + αh(x)`:
/// `∂αR = λE[h(X - m)]` and `M ∂α(m, λ) = (λE[∇h(X - m)], ∂αR)`.
pub fn alpha_sensitivity(est: &MonteCarloEstimator, alloc: &AllocationResult) -> Result<SensitivityResult> {
    let loss = est.loss();
    let d = loss.dim();
    if loss.systemic_part(&vec![0.0; d], None).is_none() {
        return Err(MsraError::Unsupported(format!(
            "{} has no systemic weight to differentiate",
            loss.family_name()
        )));
    }
    let lambda = alloc.lambda_star;
    linear_sensitivity(est, alloc, &|_, r, _, _, top| {
        let h = loss.systemic_part(r, Some(top)).unwrap();
        for v in top.iter_mut() {
            *v *= lambda;
        }
        lambda * h
    })
}

/// Difference quotient `(f(hi) - f(lo)) / (hi - lo)` of solver outputs,
/// `f(s)` being the solution at perturbation `s`.
pub fn finite_difference<F>(solve: F, lo: f64, hi: f64) -> Result<SensitivityResult>
where
    F: Fn(f64) -> Result<AllocationResult>,
{
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(MsraError::invalid(format!("finite-difference interval [{lo}, {hi}] is empty")));
    }
    let up = solve(hi)?;
    let down = solve(lo)?;
    let width = hi - lo;
    Ok(SensitivityResult {
        marginal_risk: (up.risk - down.risk) / width,
        marginal_alloc: up.m_star.iter().zip(&down.m_star).map(|(a, b)| (a - b) / width).collect(),
        lambda_dot: (up.lambda_star - down.lambda_star) / width,
        method: SensitivityMethod::FiniteDifference,
        marginal_risk_se: None,
        marginal_alloc_se: None,
        condition: None,
    })
}

fn positive_step(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(MsraError::invalid("finite-difference step must be positive"))
    }
}

/// Central difference of the solver along the shock `X ± tY`, reusing
/// the same scenario rows.
pub fn shock_finite_difference(
    est: &MonteCarloEstimator,
    y: &ScenarioSet,
    opts: &SolverOptions,
    t: f64,
) -> Result<SensitivityResult> {
    positive_step(t)?;
    let x = est.scenarios();
    x.check_aligned(y)?;
    finite_difference(
        |s| {
            let moved = MonteCarloEstimator::new(Arc::new(x.add_scaled(s, y)?), est.loss().clone())?;
            solve_allocation(&moved, opts)
        },
        -t,
        t,
    )
}

/// Difference of the solver in the systemic weight over `alpha ± t`,
/// one-sided where that leaves the admissible range.
pub fn alpha_finite_difference(est: &MonteCarloEstimator, opts: &SolverOptions, t: f64) -> Result<SensitivityResult> {
    positive_step(t)?;
    let loss = est.loss();
    let (alpha, (min, max)) = loss
        .alpha()
        .zip(loss.alpha_range())
        .ok_or_else(|| MsraError::Unsupported(format!("{} has no systemic weight", loss.family_name())))?;
    finite_difference(
        |s| {
            let moved = est.with_loss(loss.with_alpha(alpha + s)?)?;
            solve_allocation(&moved, opts)
        },
        (-t).max(min - alpha),
        t.min(max - alpha),
    )
}
