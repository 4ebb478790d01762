use super::{marginal_risk, SensitivityMethod, SensitivityResult};
use crate::error::{MsraError, Result};
use crate::estimators::{block_sums, ConstraintModel, MonteCarloEstimator};
use crate::loss::Family;
use crate::scenario::ScenarioSet;
use crate::solver::AllocationResult;

/// Systemic risk contribution of the bivariate exponential loss under a
/// centered Gaussian with standard deviations `σ₁, σ₂` and correlation `ρ`.
pub fn src_closed_form(rho: f64, sigma1: f64, sigma2: f64, alpha: f64) -> f64 {
    (alpha * (rho * sigma1 * sigma2 - 0.5 * (sigma1 * sigma1 + sigma2 * sigma2)).exp()).ln_1p()
}

/// `(RA₁, RA₂)` and `R` for the same model: `RA_i = σ_i² + SRC/2`.
pub fn exp_bivariate_allocation(rho: f64, sigma1: f64, sigma2: f64, alpha: f64) -> ([f64; 2], f64) {
    let src = src_closed_form(rho, sigma1, sigma2, alpha);
    let ra = [sigma1 * sigma1 + 0.5 * src, sigma2 * sigma2 + 0.5 * src];
    (ra, ra[0] + ra[1])
}

/// SRC on a grid: one row per `σ₁`, one column per `ρ`.
pub fn src_grid(sigma1: &[f64], rhos: &[f64], sigma2: f64, alpha: f64) -> Vec<Vec<f64>> {
    sigma1
        .iter()
        .map(|&s| rhos.iter().map(|&r| src_closed_form(r, s, sigma2, alpha)).collect())
        .collect()
}

fn quadratic_alpha(est: &MonteCarloEstimator, d: usize) -> Result<f64> {
    match est.loss().family() {
        Family::QuadraticSystemic { alpha, linear: false } if est.dim() == d => Ok(alpha),
        _ => Err(MsraError::Unsupported(format!(
            "closed form needs the {d}-dimensional quadratic systemic loss without linear part"
        ))),
    }
}

/// Bivariate shock `Y = (Y₁, 0)` for `ℓ = ½Σ(x⁺)² + αx₁⁺x₂⁺ - 1` with
/// exchangeable components: `RA₁,₂ = R(X;Y)/2 ± ½(E[Y₁1{X₁≥m}] -
/// αE[Y₁1{X₁≥m, X₂≥m}]) / (p - αr)`, all moments taken on the scenarios.
pub fn exogenous_shock_closed_form(
    est: &MonteCarloEstimator,
    alloc: &AllocationResult,
    y: &ScenarioSet,
) -> Result<SensitivityResult> {
    let alpha = quadratic_alpha(est, 2)?;
    let x = est.scenarios();
    x.check_aligned(y)?;
    let m = &alloc.m_star;
    let s = block_sums(x.n(), 4, |rows, acc| {
        for i in rows {
            let xs = x.row(i);
            let first = xs[0] >= m[0];
            let both = first && xs[1] >= m[1];
            let y1 = y.row(i)[0];
            if first {
                acc[0] += 1.0;
                acc[1] += y1;
            }
            if both {
                acc[2] += 1.0;
                acc[3] += y1;
            }
        }
    });
    let n = x.n() as f64;
    let (p, r) = (s[0] / n, s[2] / n);
    let denom = p - alpha * r;
    if denom <= 0.0 {
        return Err(MsraError::DegenerateDenominator(format!("p - αr = {denom}")));
    }
    let total = marginal_risk(est, alloc, y)?;
    let tilt = 0.5 * (s[1] / n - alpha * s[3] / n) / denom;
    let ra = vec![0.5 * total + tilt, 0.5 * total - tilt];
    let lambda = alloc.lambda_star;
    // first row of the saddle system: λ(pṁ₁ + αrṁ₂) - λ̇/λ = λpE[Y₁|X₁≥m]
    let lambda_dot = lambda * (lambda * (p * ra[0] + alpha * r * ra[1]) - lambda * s[1] / n);
    Ok(SensitivityResult {
        marginal_risk: total,
        marginal_alloc: ra,
        lambda_dot,
        method: SensitivityMethod::ClosedForm,
        marginal_risk_se: None,
        marginal_alloc_se: None,
        condition: None,
    })
}

/// Plug-in moments behind the `α`-derivatives at `α = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaMoments {
    /// `E[Z]`, `Z = (X_k - m)⁺`, averaged over the three components.
    pub mean_excess: f64,
    /// `E[(X₁ - m)⁺(X₂ - m)⁺]`.
    pub cross: f64,
    /// `E[(X₂ - m)⁺ | X₁ ≥ m]`, symmetrized in `(1, 2)`.
    pub conditional: f64,
    /// `P[X₃ ≥ m]`.
    pub tail: f64,
}

/// `α`-derivatives at `α = 0` for the trivariate quadratic loss without
/// linear part, `X₁ ~ X₂ ~ X₃`, `(X₁, X₂)` exchangeable and `X₃`
/// independent:
///
/// ```text
/// ∂αR      = E[Z](2 + q/E[Z]²)
/// ∂αRA₁,₂  = E[Z]/3 · (1 + c/E[Z] + q/E[Z]²)
/// ∂αRA₃    = E[Z]/3 · (4 - 2c/E[Z] + q/E[Z]²)
/// ```
///
/// with `q = E[(X₁ - m)⁺(X₂ - m)⁺]` and `c = E[(X₂ - m)⁺ | X₁ ≥ m]`.
pub fn alpha_closed_form(est: &MonteCarloEstimator, alloc: &AllocationResult) -> Result<(AlphaMoments, SensitivityResult)> {
    let alpha = quadratic_alpha(est, 3)?;
    if alpha != 0.0 {
        return Err(MsraError::Unsupported("closed form holds at alpha = 0".into()));
    }
    let x = est.scenarios();
    let m = &alloc.m_star;
    let s = block_sums(x.n(), 8, |rows, acc| {
        for i in rows {
            let xs = x.row(i);
            let z: Vec<f64> = (0..3).map(|k| (xs[k] - m[k]).max(0.0)).collect();
            acc[0] += z[0] + z[1] + z[2];
            acc[1] += z[0] * z[1];
            if xs[0] >= m[0] {
                acc[2] += 1.0;
                acc[3] += z[1];
            }
            if xs[1] >= m[1] {
                acc[4] += 1.0;
                acc[5] += z[0];
            }
            if xs[2] >= m[2] {
                acc[6] += 1.0;
            }
        }
    });
    let n = x.n() as f64;
    let ez = s[0] / (3.0 * n);
    let q = s[1] / n;
    let c = (s[3] + s[5]) / (s[2] + s[4]);
    let tail = s[6] / n;
    let dr = ez * (2.0 + q / (ez * ez));
    let ra12 = ez / 3.0 * (1.0 + c / ez + q / (ez * ez));
    let ra3 = ez / 3.0 * (4.0 - 2.0 * c / ez + q / (ez * ez));
    let lambda = 1.0 / ez;
    // third row of the saddle system: λpṁ₃ - λ̇/λ = λ·2E[Z]p
    let lambda_dot = lambda * lambda * tail * (ra3 - 2.0 * ez);
    Ok((
        AlphaMoments {
            mean_excess: ez,
            cross: q,
            conditional: c,
            tail,
        },
        SensitivityResult {
            marginal_risk: dr,
            marginal_alloc: vec![ra12, ra12, ra3],
            lambda_dot,
            method: SensitivityMethod::ClosedForm,
            marginal_risk_se: None,
            marginal_alloc_se: None,
            condition: None,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossSpec;
    use crate::scenario::{simulate_gaussian, GaussianModel};
    use crate::sensitivity::{alpha_sensitivity, shock_sensitivity};
    use crate::solver::{solve_allocation, SolverOptions};
    use std::sync::Arc;

    #[test]
    fn src_values() {
        assert_eq!(src_closed_form(0.3, 1.2, 0.4, 0.0), 0.0);
        assert!((src_closed_form(0.0, 1.0, 1.0, 1.0) - 0.31326).abs() < 1e-5);
        let grid = src_grid(&[0.5, 1.0, 2.0], &[-0.9, -0.3, 0.0, 0.6, 0.9], 1.0, 1.0);
        for row in grid {
            assert!(row.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn shock_formula_matches_linear_system() {
        let model = GaussianModel::from_correlation(&[1.0, 1.0], &[vec![1.0, 0.4], vec![0.4, 1.0]]).unwrap();
        let x = Arc::new(simulate_gaussian(&model, 100_000, 3).unwrap());
        let loss = LossSpec::new(Family::QuadraticSystemic { alpha: 0.0, linear: false }, 2).unwrap();
        let est = MonteCarloEstimator::new(x.clone(), loss).unwrap();
        let alloc = solve_allocation(&est, &SolverOptions::with_tol(1e-10)).unwrap();
        // dependent shock on the first component only
        let y = x.map_rows(2, "shock", |r, out| {
            out[0] = 0.5 * r[0] + 0.2;
            out[1] = 0.0;
        }).unwrap();
        let closed = exogenous_shock_closed_form(&est, &alloc, &y).unwrap();
        let lin = shock_sensitivity(&est, &alloc, &y).unwrap();
        // the closed form assumes m₁ = m₂; the sample allocation is only close
        for k in 0..2 {
            assert!((closed.marginal_alloc[k] - lin.marginal_alloc[k]).abs() < 0.02, "{closed:?} {lin:?}");
        }
        assert!((closed.marginal_risk - lin.marginal_risk).abs() < 1e-12);
    }

    // With α > 0 the formula leaves out the kink density, which cancels
    // only when the shock is independent of X.
    #[test]
    fn independent_shock_moves_only_its_component() {
        let model = GaussianModel::from_correlation(&[1.0, 1.0], &[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let x = Arc::new(simulate_gaussian(&model, 100_000, 3).unwrap());
        let loss = LossSpec::new(Family::QuadraticSystemic { alpha: 1.0, linear: false }, 2).unwrap();
        let est = MonteCarloEstimator::new(x.clone(), loss).unwrap();
        let alloc = solve_allocation(&est, &SolverOptions::default()).unwrap();
        let noise = GaussianModel::from_rows(&[0.1, 0.0], &[vec![0.0025, 0.0], vec![0.0, 0.0]]).unwrap();
        let y = simulate_gaussian(&noise, 100_000, 99).unwrap();
        let closed = exogenous_shock_closed_form(&est, &alloc, &y).unwrap();
        let lin = shock_sensitivity(&est, &alloc, &y).unwrap();
        let se = lin.marginal_alloc_se.clone().unwrap();
        for k in 0..2 {
            assert!((closed.marginal_alloc[k] - lin.marginal_alloc[k]).abs() < 3.0 * se[k] + 1e-3, "{closed:?} {lin:?}");
        }
        assert!((lin.marginal_alloc[0] - 0.1).abs() < 3.0 * se[0]);
        assert!(lin.marginal_alloc[1].abs() < 3.0 * se[1]);
    }

    #[test]
    fn alpha_formula_matches_linear_system() {
        let corr = vec![vec![1.0, 0.5, 0.0], vec![0.5, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let model = GaussianModel::from_correlation(&[1.0; 3], &corr).unwrap();
        let x = Arc::new(simulate_gaussian(&model, 200_000, 6).unwrap());
        let loss = LossSpec::new(Family::QuadraticSystemic { alpha: 0.0, linear: false }, 3).unwrap();
        let est = MonteCarloEstimator::new(x, loss).unwrap();
        let alloc = solve_allocation(&est, &SolverOptions::with_tol(1e-10)).unwrap();
        let (_, closed) = alpha_closed_form(&est, &alloc).unwrap();
        let lin = alpha_sensitivity(&est, &alloc).unwrap();
        assert!((closed.marginal_risk - lin.marginal_risk).abs() < 0.01);
        for k in 0..3 {
            assert!((closed.marginal_alloc[k] - lin.marginal_alloc[k]).abs() < 0.01, "{closed:?} {lin:?}");
        }
        assert!(closed.marginal_alloc[0] > closed.marginal_alloc[2]);
    }
}
