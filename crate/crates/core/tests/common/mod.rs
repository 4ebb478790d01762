#![allow(dead_code)]

use msra::estimators::{halton_points, ChebyshevSurrogate, MonteCarloEstimator};
use msra::loss::{Family, Kernel, LossSpec};
use msra::scenario::{simulate_gaussian, GaussianModel, ScenarioSet};
use msra::sensitivity;
use msra::solver::{solve_allocation, AllocationResult, SolverOptions};
use rand::seq::SliceRandom;
use std::sync::Arc;

pub type Check = Result<(), String>;

pub fn bivariate(rho: f64, n: usize, seed: u64) -> Arc<ScenarioSet> {
    let model = GaussianModel::from_rows(&[0.0, 0.0], &[vec![1.0, rho], vec![rho, 1.0]]).unwrap();
    Arc::new(simulate_gaussian(&model, n, seed).unwrap())
}

pub fn trivariate(rho: f64, n: usize, seed: u64) -> Arc<ScenarioSet> {
    let model = GaussianModel::from_rows(
        &[0.0; 3],
        &[vec![1.0, rho, 0.0], vec![rho, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
    )
    .unwrap();
    Arc::new(simulate_gaussian(&model, n, seed).unwrap())
}

pub fn solve(x: &Arc<ScenarioSet>, loss: &LossSpec, opts: &SolverOptions) -> AllocationResult {
    let est = MonteCarloEstimator::new(x.clone(), loss.clone()).unwrap();
    solve_allocation(&est, opts).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn translation_covariance(x: &Arc<ScenarioSet>, loss: &LossSpec, r: &[f64]) -> Check {
    let base = solve(x, loss, &SolverOptions::default());
    let shifted = Arc::new(x.shifted(r).unwrap());
    let moved = solve(&shifted, loss, &SolverOptions::default());
    let expect: Vec<f64> = base.m_star.iter().zip(r).map(|(m, r)| m + r).collect();
    let err = max_abs_diff(&moved.m_star, &expect);
    let tol = 2.0 * base.tol.max(moved.tol);
    ensure(err <= tol, || format!("shift {r:?}: |m(X+r) - m(X) - r| = {err:.3e} > {tol:.3e}"))
}

pub fn ph_scaling(x: &Arc<ScenarioSet>, loss: &LossSpec, lambda: f64) -> Check {
    let base = solve(x, loss, &SolverOptions::default());
    let scaled = Arc::new(x.scaled(lambda).unwrap());
    let moved = solve(&scaled, loss, &SolverOptions::default());
    let expect: Vec<f64> = base.m_star.iter().map(|m| lambda * m).collect();
    let err = max_abs_diff(&moved.m_star, &expect);
    let tol = 2.0 * (lambda * base.tol).max(moved.tol);
    ensure(err <= tol, || {
        format!(
            "{} scaled by {lambda}: {:?} vs {:?}, error {err:.3e} > {tol:.3e}",
            loss.family_name(),
            moved.m_star,
            expect
        )
    })
}

pub fn permutation_equivariance(x: &Arc<ScenarioSet>, loss: &LossSpec, perm: &[usize]) -> Check {
    let base = solve(x, loss, &SolverOptions::default());
    let permuted = Arc::new(x.permute_columns(perm).unwrap());
    let moved = solve(&permuted, loss, &SolverOptions::default());
    let expect: Vec<f64> = perm.iter().map(|&p| base.m_star[p]).collect();
    let err = max_abs_diff(&moved.m_star, &expect);
    let tol = 2.0 * base.tol.max(moved.tol);
    ensure(err <= tol, || format!("permutation {perm:?}: error {err:.3e} > {tol:.3e}"))
}

/// Risk equals the allocated total, and the differentiated allocation sums
/// to the marginal risk.
pub fn full_allocation(x: &Arc<ScenarioSet>, loss: &LossSpec, y: &ScenarioSet) -> Check {
    let est = MonteCarloEstimator::new(x.clone(), loss.clone()).unwrap();
    let alloc = solve_allocation(&est, &SolverOptions::default()).unwrap();
    let total: f64 = alloc.m_star.iter().sum();
    ensure((alloc.risk - total).abs() <= 1e-12 * (1.0 + total.abs()), || {
        format!("risk {} != Σm {}", alloc.risk, total)
    })?;
    let sens = sensitivity::shock_sensitivity(&est, &alloc, y).unwrap();
    let dsum: f64 = sens.marginal_alloc.iter().sum();
    ensure((dsum - sens.marginal_risk).abs() <= 1e-10, || {
        format!("Σ marginal_alloc {dsum} != marginal_risk {}", sens.marginal_risk)
    })
}

/// Shuffling one column breaks the dependence but not the marginals; a
/// decoupled loss must not notice.
pub fn marginal_only_dependence(x: &Arc<ScenarioSet>, kernel: Kernel, column: usize, seed: u64) -> Check {
    let loss = LossSpec::new(Family::C2 { kernel }, x.d()).unwrap();
    let base = solve(x, &loss, &SolverOptions::default());
    let mut order: Vec<usize> = (0..x.n()).collect();
    order.shuffle(&mut msra::rng::block_rng(seed, 0));
    let shuffled = Arc::new(x.reorder_column(column, &order).unwrap());
    let moved = solve(&shuffled, &loss, &SolverOptions::default());
    let se = base.allocation_se.clone().unwrap_or_else(|| vec![0.0; x.d()]);
    for k in 0..x.d() {
        let diff = (moved.m_star[k] - base.m_star[k]).abs();
        let bound = 3.0 * se[k] + 2.0 * base.tol.max(moved.tol);
        ensure(diff <= bound, || {
            format!("{kernel:?}, column {column} shuffled: m[{k}] moved {diff:.3e} > {bound:.3e}")
        })?;
    }
    Ok(())
}

pub fn dependence_monotone(alpha: f64, n: usize, seed: u64) -> Check {
    let loss = LossSpec::quadratic_systemic(alpha, 2).unwrap();
    let risk = |rho: f64| solve(&bivariate(rho, n, seed), &loss, &SolverOptions::default()).risk;
    let (lo, mid, hi) = (risk(-0.9), risk(0.0), risk(0.9));
    ensure(hi > mid && mid > lo, || {
        format!("alpha {alpha}: R(-0.9)={lo:.5}, R(0)={mid:.5}, R(0.9)={hi:.5} not increasing")
    })
}

/// Interpolating a tensor polynomial of per-axis degree below the node
/// count reproduces it to rounding.
pub fn chebyshev_exactness(coeffs: &[f64], degree: usize, nodes: usize) -> Check {
    let d = 2;
    let poly = |m: &[f64]| {
        let mut v = 0.0;
        for i in 0..=degree {
            for j in 0..=degree {
                v += coeffs[i * (degree + 1) + j] * m[0].powi(i as i32) * m[1].powi(j as i32);
            }
        }
        v
    };
    let (lower, upper) = (vec![-1.5; d], vec![0.5; d]);
    let s = ChebyshevSurrogate::fit(|m| poly(m), &lower, &upper, nodes).unwrap();
    let scale: f64 = 1.0 + coeffs.iter().map(|c| c.abs()).sum::<f64>() * 1.5f64.powi(2 * degree as i32);
    for p in halton_points(&lower, &upper, 200) {
        let err = (s.eval(&p).unwrap() - poly(&p)).abs();
        ensure(err <= 1e-12 * scale, || format!("degree {degree}, {nodes} nodes: error {err:.3e} at {p:?}"))?;
    }
    Ok(())
}
