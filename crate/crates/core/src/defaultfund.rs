//! Clearing-house default fund: initial margins, Cover-2 sizing and the
//! split of the fund across members, either proportionally to initial
//! margin or by relative shortfall risk contributions `RA_k / R`.

use crate::error::{MsraError, Result};
use crate::estimators::MonteCarloEstimator;
use crate::loss::{Family, LossSpec};
use crate::rng::{block_rng, open_uniform};
use crate::scenario::{quantile_in_place, Positions, ScenarioSet, StudentCopulaModel};
use crate::solver::{solve_allocation, SolverOptions};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

/// Per-member empirical VaR at `level`, interpolating between order
/// statistics at `(n - 1)·level`.
pub fn initial_margin(x: &ScenarioSet, level: f64) -> Result<Vec<f64>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(MsraError::invalid(format!("margin level must lie in (0, 1), got {level}")));
    }
    if x.n() < 100 {
        return Err(MsraError::invalid(format!("initial margin needs at least 100 scenarios, got {}", x.n())));
    }
    Ok((0..x.d())
        .into_par_iter()
        .map(|k| quantile_in_place(&mut x.column(k), level))
        .collect())
}

/// Worst scenario of the two largest excess losses over initial margin.
pub fn cover2(x: &ScenarioSet, im: &[f64]) -> Result<f64> {
    if im.len() != x.d() {
        return Err(MsraError::DimensionMismatch { expected: x.d(), got: im.len() });
    }
    let worst = (0..x.n())
        .into_par_iter()
        .map(|s| {
            let (mut first, mut second) = (0.0f64, 0.0f64);
            for (v, m) in x.row(s).iter().zip(im) {
                let e = (v - m).max(0.0);
                if e > first {
                    second = first;
                    first = e;
                } else if e > second {
                    second = e;
                }
            }
            first + second
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

/// Componentwise piecewise-linear loss: gains count for half of losses.
pub fn ell1(d: usize) -> Result<LossSpec> {
    LossSpec::new(Family::Ph1 { alpha: 0.5, beta: 1.0 }, d)
}

/// `ell1` plus the same kernel on every pair sum `x_k + x_j`, `k < j`.
pub fn ell2(d: usize) -> Result<LossSpec> {
    LossSpec::new(Family::Ph2 { alpha: 0.5, beta: 1.0 }, d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum AllocationRule {
    ImProportional { level: f64 },
    Shortfall { loss: LossSpec },
}

/// Fund weights under `rule`; they sum to one.
pub fn allocation_weights(x: &Arc<ScenarioSet>, rule: &AllocationRule, opts: &SolverOptions) -> Result<Vec<f64>> {
    let parts = match rule {
        AllocationRule::ImProportional { level } => initial_margin(x, *level)?,
        AllocationRule::Shortfall { loss } => {
            let est = MonteCarloEstimator::new(x.clone(), loss.clone())?;
            solve_allocation(&est, opts)?.m_star
        }
    };
    normalize(&parts)
}

/// Member amounts `weight_k · df_total`.
pub fn allocate_default_fund(
    x: &Arc<ScenarioSet>,
    df_total: f64,
    rule: &AllocationRule,
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    Ok(allocation_weights(x, rule, opts)?.into_iter().map(|w| w * df_total).collect())
}

fn normalize(parts: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = parts.iter().sum();
    let scale = parts.iter().map(|v| v.abs()).sum::<f64>();
    if !(total.abs() > 1e-14 * scale) {
        return Err(MsraError::DegenerateDenominator(format!(
            "contributions {parts:?} sum to {total}"
        )));
    }
    Ok(parts.iter().map(|v| v / total).collect())
}

/// Relative difference `100·(a - b)/b` in percent, entry by entry.
pub fn pct_diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| 100.0 * (a - b) / b).collect()
}

/// Mean of `|a_k - b_k| / |b_k|`.
pub fn mean_abs_relative_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| ((a - b) / b).abs()).sum::<f64>() / a.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefaultFundConfig {
    #[serde(default = "default_level")]
    pub im_level: f64,
    /// Total fund; the Cover-2 size of the scenarios when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df_total: Option<f64>,
}

fn default_level() -> f64 {
    0.99
}

impl Default for DefaultFundConfig {
    fn default() -> Self {
        DefaultFundConfig { im_level: default_level(), df_total: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefaultFundReport {
    pub members: Vec<String>,
    pub im_level: f64,
    pub im: Vec<f64>,
    pub df_total: f64,
    pub weights_im: Vec<f64>,
    pub weights_l1: Vec<f64>,
    pub weights_l2: Vec<f64>,
    pub risk_l1: f64,
    pub risk_l2: f64,
    pub pct_diff_l1_im: Vec<f64>,
    pub pct_diff_l2_im: Vec<f64>,
    pub pct_diff_l1_l2: Vec<f64>,
    pub amounts_im: Vec<f64>,
    pub amounts_l1: Vec<f64>,
    pub amounts_l2: Vec<f64>,
}

/// IM-proportional and shortfall (`ell1`, `ell2`) splits of one fund.
pub fn default_fund_report(
    x: &Arc<ScenarioSet>,
    members: &[String],
    config: &DefaultFundConfig,
    opts: &SolverOptions,
) -> Result<DefaultFundReport> {
    let d = x.d();
    if members.len() != d {
        return Err(MsraError::DimensionMismatch { expected: d, got: members.len() });
    }
    let im = initial_margin(x, config.im_level)?;
    let df_total = match config.df_total {
        Some(v) if v.is_finite() && v >= 0.0 => v,
        Some(v) => return Err(MsraError::invalid(format!("df_total must be finite and non-negative, got {v}"))),
        None => cover2(x, &im)?,
    };
    let weights_im = normalize(&im)?;
    let solve = |loss: LossSpec| -> Result<(Vec<f64>, f64)> {
        let est = MonteCarloEstimator::new(x.clone(), loss)?;
        let a = solve_allocation(&est, opts)?;
        Ok((normalize(&a.m_star)?, a.risk))
    };
    let (weights_l1, risk_l1) = solve(ell1(d)?)?;
    let (weights_l2, risk_l2) = solve(ell2(d)?)?;
    let amounts = |w: &[f64]| w.iter().map(|v| v * df_total).collect();
    Ok(DefaultFundReport {
        members: members.to_vec(),
        im_level: config.im_level,
        pct_diff_l1_im: pct_diff(&weights_l1, &weights_im),
        pct_diff_l2_im: pct_diff(&weights_l2, &weights_im),
        pct_diff_l1_l2: pct_diff(&weights_l1, &weights_l2),
        amounts_im: amounts(&weights_im),
        amounts_l1: amounts(&weights_l1),
        amounts_l2: amounts(&weights_l2),
        im,
        df_total,
        weights_im,
        weights_l1,
        weights_l2,
        risk_l1,
        risk_l2,
    })
}

impl DefaultFundReport {
    /// Weights table with columns `member, im, weight_im, weight_l1,
    /// weight_l2, pct_diff_l1_im, pct_diff_l1_l2`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["member", "im", "weight_im", "weight_l1", "weight_l2", "pct_diff_l1_im", "pct_diff_l1_l2"])?;
        for k in 0..self.members.len() {
            w.write_record([
                self.members[k].clone(),
                self.im[k].to_string(),
                self.weights_im[k].to_string(),
                self.weights_l1[k].to_string(),
                self.weights_l2[k].to_string(),
                self.pct_diff_l1_im[k].to_string(),
                self.pct_diff_l1_l2[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// A small equity-derivatives book: `members × underlyings` positions
/// that net to zero per underlying, one-factor positive correlation
/// between underlyings and Student-t marginals, all derived from `seed`.
pub fn synthetic_book(members: usize, underlyings: usize, copula_dof: f64, seed: u64) -> Result<StudentCopulaModel> {
    if members < 2 || underlyings < 1 {
        return Err(MsraError::invalid("a book needs at least two members and one underlying"));
    }
    let mut rng = block_rng(seed, u64::MAX);
    let mut p = DMatrix::from_fn(members, underlyings, |_, _| (20.0 * open_uniform(&mut rng) - 10.0).round());
    for j in 0..underlyings {
        let mean = p.column(j).sum() / members as f64;
        for k in 0..members {
            p[(k, j)] -= mean;
        }
    }
    let loadings: Vec<f64> = (0..underlyings).map(|_| 0.5 + 0.4 * open_uniform(&mut rng)).collect();
    let corr = DMatrix::from_fn(underlyings, underlyings, |i, j| {
        if i == j {
            1.0
        } else {
            loadings[i] * loadings[j]
        }
    });
    let marginal_dof = (0..underlyings).map(|_| 5.0 + 2.0 * open_uniform(&mut rng)).collect();
    let fudge = (0..underlyings).map(|_| 0.01 + 0.02 * open_uniform(&mut rng)).collect();
    let spot = (0..underlyings).map(|_| 50.0 + 100.0 * open_uniform(&mut rng)).collect();
    let positions = Positions::new(
        (1..=members).map(|k| format!("CM{k}")).collect(),
        (1..=underlyings).map(|i| format!("U{i}")).collect(),
        p,
    )?;
    StudentCopulaModel::new(corr, copula_dof, marginal_dof, fudge, spot, positions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{simulate_gaussian, simulate_student_copula, GaussianModel};

    #[test]
    fn constant_column_margin_is_the_constant() {
        let x = ScenarioSet::new(vec![3.5; 200], 200, 1, 0, "c").unwrap();
        assert_eq!(initial_margin(&x, 0.99).unwrap(), vec![3.5]);
        assert!(initial_margin(&x, 1.0).is_err());
        let small = ScenarioSet::new(vec![1.0; 50], 50, 1, 0, "c").unwrap();
        assert!(initial_margin(&small, 0.5).is_err());
    }

    #[test]
    fn margin_scales_with_losses() {
        let model = GaussianModel::from_correlation(&[1.0, 2.0], &[vec![1.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let x = simulate_gaussian(&model, 5000, 2).unwrap();
        let im = initial_margin(&x, 0.99).unwrap();
        let im3 = initial_margin(&x.scaled(3.0).unwrap(), 0.99).unwrap();
        for k in 0..2 {
            assert!((im3[k] - 3.0 * im[k]).abs() <= 1e-12 * im3[k].abs());
        }
    }

    #[test]
    fn cover2_sums_the_two_worst_excesses() {
        let x = ScenarioSet::from_rows(&[vec![6.0, 9.0, 0.0], vec![0.0, 0.0, 0.0]], 0, "t").unwrap();
        assert_eq!(cover2(&x, &[1.0, 2.0, 5.0]).unwrap(), 12.0);
        assert_eq!(cover2(&x, &[10.0, 10.0, 10.0]).unwrap(), 0.0);
        assert!(cover2(&x, &[1.0]).is_err());
    }

    #[test]
    fn exchangeable_members_split_evenly() {
        let model = GaussianModel::from_correlation(&[1.0, 1.0], &[vec![1.0, 0.2], vec![0.2, 1.0]]).unwrap();
        let x = simulate_gaussian(&model, 4000, 5).unwrap();
        // symmetrize so the two columns are exactly exchangeable
        let mut rows: Vec<Vec<f64>> = (0..x.n()).map(|s| x.row(s).to_vec()).collect();
        rows.extend((0..x.n()).map(|s| vec![x.row(s)[1], x.row(s)[0]]));
        let x = Arc::new(ScenarioSet::from_rows(&rows, 0, "sym").unwrap());
        let opts = SolverOptions::default();
        for rule in [
            AllocationRule::ImProportional { level: 0.99 },
            AllocationRule::Shortfall { loss: ell1(2).unwrap() },
            AllocationRule::Shortfall { loss: ell2(2).unwrap() },
        ] {
            let w = allocation_weights(&x, &rule, &opts).unwrap();
            assert!((w[0] - 0.5).abs() < 1e-6, "{rule:?} {w:?}");
            let amounts = allocate_default_fund(&x, 10.0, &rule, &opts).unwrap();
            assert!((amounts.iter().sum::<f64>() - 10.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_risk_is_degenerate() {
        let x = Arc::new(ScenarioSet::new(vec![0.0; 400], 200, 2, 0, "zero").unwrap());
        let err = allocation_weights(&x, &AllocationRule::ImProportional { level: 0.99 }, &SolverOptions::default());
        assert!(matches!(err, Err(MsraError::DegenerateDenominator(_))));
        let err = allocation_weights(&x, &AllocationRule::Shortfall { loss: ell1(2).unwrap() }, &SolverOptions::default());
        assert!(matches!(err, Err(MsraError::DegenerateDenominator(_))));
    }

    #[test]
    fn synthetic_book_report() {
        let model = synthetic_book(10, 5, 6.0, 11).unwrap();
        for j in 0..5 {
            assert!(model.positions.matrix.column(j).sum().abs() < 1e-9);
        }
        let x = Arc::new(simulate_student_copula(&model, 20_000, 3).unwrap());
        let report = default_fund_report(&x, &model.positions.members, &DefaultFundConfig::default(), &SolverOptions::default()).unwrap();
        for w in [&report.weights_im, &report.weights_l1, &report.weights_l2] {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(report.df_total > 0.0);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("member,im,weight_im,weight_l1,weight_l2,pct_diff_l1_im,pct_diff_l1_l2\n"));
        assert_eq!(text.lines().count(), 11);
    }
}
