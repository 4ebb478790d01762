//! Deterministic expectations under Gaussian models in up to three
//! dimensions.

use super::{check_dim, ConstraintModel, Estimate};
use crate::dist::{normal_cdf, normal_pdf, normal_quantile};
use crate::error::{MsraError, Result};
use crate::loss::{Family, LossSpec};
use crate::scenario::GaussianModel;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

const HERMITE_NODES: usize = 64;
const LEGENDRE_NODES: usize = 20;
const Z_RANGE: f64 = 9.0;
const PANEL_WIDTH: f64 = 3.0;

/// Gauss quadrature rule from the Jacobi matrix with zero diagonal and the
/// given off-diagonal; weights scaled to total `mass`.
fn golub_welsch(off: &[f64], mass: f64) -> Vec<(f64, f64)> {
    let n = off.len() + 1;
    let mut j = DMatrix::zeros(n, n);
    for (k, &b) in off.iter().enumerate() {
        j[(k, k + 1)] = b;
        j[(k + 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mass * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrize to remove eigensolver noise
    for i in 0..n / 2 {
        let x = 0.5 * (rule[n - 1 - i].0 - rule[i].0);
        let w = 0.5 * (rule[i].1 + rule[n - 1 - i].1);
        rule[i] = (-x, w);
        rule[n - 1 - i] = (x, w);
    }
    if n % 2 == 1 {
        rule[n / 2].0 = 0.0;
    }
    rule
}

/// Gauss–Hermite rule for the standard normal density.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    golub_welsch(&off, 1.0)
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&off, 2.0)
}

/// `E[ℓ(X - m)]` and derivatives for `X ~ N(μ, Σ)`, `d <= 3`.
///
/// The expectation is factored into nested one-dimensional normal
/// integrals along the Cholesky factor. Levels where a kink of the loss
/// crosses use piecewise Gauss–Legendre panels split at the kink; the
/// other levels use a Gauss–Hermite rule with 64 nodes.
pub struct QuadratureOracle {
    loss: LossSpec,
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    covariance: DMatrix<f64>,
    hermite: Vec<(f64, f64)>,
    legendre: Vec<(f64, f64)>,
    // kink normals expressed in z-coordinates, with their last active level
    kinks: Vec<(Vec<f64>, Vec<f64>, usize)>,
}

impl QuadratureOracle {
    pub fn new(model: &GaussianModel, loss: LossSpec) -> Result<Self> {
        let d = model.dim();
        check_dim(loss.dim(), d)?;
        if d > 3 {
            return Err(MsraError::Unsupported(format!(
                "quadrature oracle supports d <= 3, got d = {d}"
            )));
        }
        let factor = model.factor().clone();
        let scale = factor.amax().max(1.0);
        let kinks = loss
            .kinks()
            .into_iter()
            .filter_map(|k| {
                let az: Vec<f64> = (0..d)
                    .map(|j| (0..d).map(|i| k.normal[i] * factor[(i, j)]).sum())
                    .collect();
                let last = (0..d).rev().find(|&j| az[j].abs() > 1e-14 * scale)?;
                Some((k.normal, az, last))
            })
            .collect();
        Ok(QuadratureOracle {
            loss,
            mean: model.mean().clone(),
            factor,
            covariance: model.covariance().clone(),
            hermite: gauss_hermite(HERMITE_NODES),
            legendre: gauss_legendre(LEGENDRE_NODES),
            kinks,
        })
    }

    fn column_is_zero(&self, j: usize) -> bool {
        self.factor.column(j).iter().all(|&v| v == 0.0)
    }

    /// Nodes and weights for level `k` given the outer coordinates.
    fn rule(&self, k: usize, z: &[f64], shift: &[f64]) -> Vec<(f64, f64)> {
        if self.column_is_zero(k) {
            return vec![(0.0, 1.0)];
        }
        let mut breaks: Vec<f64> = self
            .kinks
            .iter()
            .filter(|(_, _, last)| *last == k)
            .map(|(a, az, _)| {
                let offset: f64 = a.iter().zip(shift).map(|(ai, s)| ai * s).sum::<f64>()
                    + (0..k).map(|j| az[j] * z[j]).sum::<f64>();
                -offset / az[k]
            })
            .filter(|b| b.abs() < Z_RANGE)
            .collect();
        if breaks.is_empty() && self.loss.has_hessian() && self.kinks.is_empty() {
            return self.hermite.clone();
        }
        breaks.push(-Z_RANGE);
        breaks.push(Z_RANGE);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut rule = Vec::new();
        for w in breaks.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi - lo <= 0.0 {
                continue;
            }
            let panels = ((hi - lo) / PANEL_WIDTH).ceil().max(1.0) as usize;
            let h = (hi - lo) / panels as f64;
            for p in 0..panels {
                let c = lo + (p as f64 + 0.5) * h;
                for &(t, wt) in &self.legendre {
                    let x = c + 0.5 * h * t;
                    rule.push((x, 0.5 * h * wt * normal_pdf(x)));
                }
            }
        }
        rule
    }

    fn integrate(&self, k: usize, z: &mut Vec<f64>, shift: &[f64], weight: f64, want_hess: bool, acc: &mut [f64]) {
        let d = shift.len();
        if k == d {
            let y: Vec<f64> = (0..d)
                .map(|i| shift[i] + (0..=i).map(|j| self.factor[(i, j)] * z[j]).sum::<f64>())
                .collect();
            let mut g = vec![0.0; d];
            let mut h = vec![0.0; if want_hess { d * d } else { 0 }];
            let v = self
                .loss
                .evaluate(&y, Some(&mut g), if want_hess { Some(&mut h) } else { None });
            acc[0] += weight * v;
            for i in 0..d {
                acc[1 + i] += weight * g[i];
            }
            for (a, hv) in acc[1 + d..].iter_mut().zip(&h) {
                *a += weight * hv;
            }
            return;
        }
        for (x, w) in self.rule(k, z, shift) {
            z.push(x);
            self.integrate(k + 1, z, shift, weight * w, want_hess, acc);
            z.pop();
        }
    }
}

impl ConstraintModel for QuadratureOracle {
    fn dim(&self) -> usize {
        self.loss.dim()
    }

    fn loss(&self) -> &LossSpec {
        &self.loss
    }

    fn estimate(&self, m: &[f64], want_hess: bool) -> Result<Estimate> {
        let d = self.dim();
        check_dim(d, m.len())?;
        if want_hess && !self.loss.has_hessian() {
            return Err(MsraError::Unsupported(format!("{} has no Hessian", self.loss.family_name())));
        }
        let shift: Vec<f64> = (0..d).map(|i| self.mean[i] - m[i]).collect();
        let width = 1 + d + if want_hess { d * d } else { 0 };
        let outer = self.rule(0, &[], &shift);
        let parts: Vec<Vec<f64>> = outer
            .par_iter()
            .map(|&(x, w)| {
                let mut acc = vec![0.0; width];
                let mut z = vec![x];
                self.integrate(1, &mut z, &shift, w, want_hess, &mut acc);
                acc
            })
            .collect();
        let mut sums = vec![0.0; width];
        for p in &parts {
            for (s, v) in sums.iter_mut().zip(p) {
                *s += v;
            }
        }
        Ok(Estimate {
            value: sums[0],
            value_se: 0.0,
            grad: sums[1..1 + d].iter().map(|g| -g).collect(),
            hess: want_hess.then(|| DMatrix::from_row_slice(d, d, &sums[1 + d..])),
        })
    }

    fn marginal_quantile(&self, k: usize, level: f64) -> f64 {
        self.mean[k] + self.marginal_scale(k) * normal_quantile(level)
    }

    fn marginal_scale(&self, k: usize) -> f64 {
        self.covariance[(k, k)].max(0.0).sqrt()
    }

    /// Exact kink densities: `a·(X - m)` is normal, so each kink contributes
    /// its slope jump times that density at zero.
    fn smoothed_hessian(&self, m: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.dim();
        check_dim(d, m.len())?;
        let mut hess = if self.loss.has_hessian() {
            self.estimate(m, true)?.hess.unwrap()
        } else {
            DMatrix::zeros(d, d)
        };
        for kink in self.loss.kinks().into_iter().filter(|k| k.slope_jump > 0.0) {
            let a = DVector::from_vec(kink.normal);
            let var = (a.transpose() * &self.covariance * &a)[(0, 0)];
            if var <= 0.0 {
                continue;
            }
            let sd = var.sqrt();
            let center = a.dot(&(&self.mean - DVector::from_column_slice(m)));
            let dens = normal_pdf(center / sd) / sd;
            hess += &a * a.transpose() * (kink.slope_jump * dens);
        }
        if let Family::QuadraticSystemic { alpha, .. } = self.loss.family() {
            // crossing x_k = m_k switches on α Σ_{j≠k} (X_j - m_j)⁺
            let cov = &self.covariance;
            for k in 0..d {
                let vk = cov[(k, k)];
                if alpha == 0.0 || vk <= 0.0 {
                    continue;
                }
                let dk = (m[k] - self.mean[k]) / vk.sqrt();
                let dens = normal_pdf(dk) / vk.sqrt();
                let mut excess = 0.0;
                for j in (0..d).filter(|&j| j != k) {
                    let mu = self.mean[j] + cov[(j, k)] / vk * (m[k] - self.mean[k]) - m[j];
                    let sd = (cov[(j, j)] - cov[(j, k)].powi(2) / vk).max(0.0).sqrt();
                    excess += if sd > 0.0 {
                        mu * normal_cdf(mu / sd) + sd * normal_pdf(mu / sd)
                    } else {
                        mu.max(0.0)
                    };
                }
                hess[(k, k)] += alpha * excess * dens;
            }
        }
        Ok(hess)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::Kernel;

    fn standard(d: usize, rho: f64) -> GaussianModel {
        let corr: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { rho }).collect())
            .collect();
        GaussianModel::from_correlation(&vec![1.0; d], &corr).unwrap()
    }

    #[test]
    fn rules_integrate_moments() {
        let gh = gauss_hermite(64);
        let m4: f64 = gh.iter().map(|(x, w)| w * x.powi(4)).sum();
        assert!((m4 - 3.0).abs() < 1e-12);
        let gl = gauss_legendre(20);
        let s: f64 = gl.iter().map(|(x, w)| w * x.powi(6)).sum();
        assert!((s - 2.0 / 7.0).abs() < 1e-14);
    }

    #[test]
    fn partial_expectation_at_one() {
        // ½(x⁺)² has gradient x⁺
        let loss = LossSpec::new(Family::QuadraticSystemic { alpha: 0.0, linear: false }, 1).unwrap();
        let q = QuadratureOracle::new(&standard(1, 0.0), loss).unwrap();
        let e = q.estimate(&[1.0], true).unwrap();
        let exact = normal_pdf(1.0) - (1.0 - normal_cdf(1.0));
        assert!((-e.grad[0] - exact).abs() < 1e-12);
        assert!((-e.grad[0] - 0.08332).abs() < 1e-5);
        assert!((e.hess.unwrap()[(0, 0)] - (1.0 - normal_cdf(1.0))).abs() < 1e-12);
    }

    #[test]
    fn symmetric_gradient() {
        let q = QuadratureOracle::new(&standard(2, 0.0), LossSpec::quadratic_systemic(1.0, 2).unwrap()).unwrap();
        let e = q.estimate(&[-0.1, -0.1], false).unwrap();
        assert!((e.grad[0] - e.grad[1]).abs() < 1e-10);
    }

    #[test]
    fn exponential_loss_closed_form() {
        // E[e^{2(X1-m)}] = e^{2σ²-2m} for X1 ~ N(0, σ²)
        let model = GaussianModel::from_correlation(&[0.7, 1.2], &[vec![1.0, 0.4], vec![0.4, 1.0]]).unwrap();
        let q = QuadratureOracle::new(&model, LossSpec::exp_bivariate(1.0).unwrap()).unwrap();
        let m = [0.3, 0.5];
        let e = q.estimate(&m, false).unwrap();
        let (s1, s2, r) = (0.7f64, 1.2f64, 0.4);
        let a = (2.0 * s1 * s1 - 2.0 * m[0]).exp();
        let b = (2.0 * s2 * s2 - 2.0 * m[1]).exp();
        let c = (0.5 * (s1 * s1 + s2 * s2 + 2.0 * r * s1 * s2) - m[0] - m[1]).exp();
        let exact = (0.5 * a + 0.5 * b + c - 1.0) / 2.0;
        assert!((e.value - exact).abs() < 1e-10 * exact.abs().max(1.0), "{} {}", e.value, exact);
    }

    #[test]
    fn degenerate_and_kinked_cases() {
        let zero = GaussianModel::from_rows(&[0.0, 0.0], &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let q = QuadratureOracle::new(&zero, LossSpec::quadratic_systemic(1.0, 2).unwrap()).unwrap();
        let t = 0.5 * (3f64.sqrt() - 1.0);
        assert!(q.estimate(&[-t, -t], false).unwrap().value.abs() < 1e-14);

        // E[|X1 + X2|] for perfectly correlated normals = 2·√(2/π)
        let loss = LossSpec::new(Family::C1 { kernel: Kernel::PiecewiseLinear { beta: 0.0 } }, 2).unwrap();
        let q = QuadratureOracle::new(&standard(2, 1.0), loss).unwrap();
        let e = q.estimate(&[0.0, 0.0], false).unwrap();
        assert!((e.value - 2.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10, "{}", e.value);
    }

    #[test]
    fn smoothed_hessian_is_gradient_derivative() {
        let q = QuadratureOracle::new(&standard(2, 0.3), LossSpec::quadratic_systemic(1.0, 2).unwrap()).unwrap();
        let m = [-0.1, 0.05];
        let h = q.smoothed_hessian(&m).unwrap();
        let eps = 1e-5;
        for j in 0..2 {
            let mut up = m;
            let mut down = m;
            up[j] += eps;
            down[j] -= eps;
            let gu = q.estimate(&up, false).unwrap().grad;
            let gd = q.estimate(&down, false).unwrap().grad;
            for i in 0..2 {
                // grad is -E[∇ℓ], whose m-derivative is +E[∇²ℓ]
                let fd = (gu[i] - gd[i]) / (2.0 * eps);
                assert!((fd - h[(i, j)]).abs() < 1e-6, "{i}{j}: {fd} {}", h[(i, j)]);
            }
        }
    }

    #[test]
    fn rejects_high_dimension() {
        let err = QuadratureOracle::new(&standard(4, 0.0), LossSpec::quadratic_systemic(1.0, 4).unwrap());
        assert!(matches!(err, Err(MsraError::Unsupported(_))));
    }
}
