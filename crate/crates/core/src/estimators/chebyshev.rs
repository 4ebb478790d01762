//! Tensor Chebyshev interpolation on Chebyshev–Gauss–Lobatto nodes.

use super::{check_dim, ConstraintModel, Estimate, MonteCarloEstimator};
use crate::error::{MsraError, Result};
use crate::loss::LossSpec;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Polynomial interpolant of a scalar field on an axis-aligned box.
///
/// `coefficients` is the tensor `c[i_1, …, i_d]` of the expansion
/// `Σ c T_{i_1}(t_1)⋯T_{i_d}(t_d)` in box-normalized coordinates, stored
/// with the first axis varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevSurrogate {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes_per_axis: usize,
    pub coefficients: Vec<f64>,
    pub error_estimate: f64,
}

/// Chebyshev–Gauss–Lobatto points `cos(πj/(N-1))` on `[-1, 1]`.
pub fn lobatto_nodes(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            if 2 * j + 1 == n {
                0.0
            } else {
                (PI * j as f64 / (n - 1) as f64).cos()
            }
        })
        .collect()
}

fn halton(index: usize, base: usize) -> f64 {
    let (mut f, mut r, mut i) = (1.0, 0.0, index);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [usize; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

/// Quasi-random points in the box (Halton sequence).
pub fn halton_points(lower: &[f64], upper: &[f64], count: usize) -> Vec<Vec<f64>> {
    (1..=count)
        .map(|i| {
            (0..lower.len())
                .map(|k| lower[k] + (upper[k] - lower[k]) * halton(i, PRIMES[k % PRIMES.len()]))
                .collect()
        })
        .collect()
}

/// DCT-I along one axis of the tensor, in place.
fn transform_axis(data: &mut [f64], n: usize, d: usize, axis: usize) {
    let stride = n.pow(axis as u32);
    let total = n.pow(d as u32);
    let cos: Vec<f64> = (0..n * n)
        .map(|jk| (PI * ((jk / n) * (jk % n)) as f64 / (n - 1) as f64).cos())
        .collect();
    let mut fiber = vec![0.0; n];
    for start in 0..total {
        if (start / stride) % n != 0 {
            continue;
        }
        for j in 0..n {
            fiber[j] = data[start + j * stride];
        }
        for k in 0..n {
            let mut c = 0.5 * (fiber[0] + fiber[n - 1] * cos[(n - 1) * n + k]);
            for j in 1..n - 1 {
                c += fiber[j] * cos[j * n + k];
            }
            c *= 2.0 / (n - 1) as f64;
            if k == 0 || k == n - 1 {
                c *= 0.5;
            }
            data[start + k * stride] = c;
        }
    }
}

/// `T_k(t)`, `T_k'(t)`, `T_k''(t)` for `k < n`.
fn basis(t: f64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n];
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    v[0] = 1.0;
    if n > 1 {
        v[1] = t;
        d1[1] = 1.0;
    }
    for k in 1..n.saturating_sub(1) {
        v[k + 1] = 2.0 * t * v[k] - v[k - 1];
        d1[k + 1] = 2.0 * v[k] + 2.0 * t * d1[k] - d1[k - 1];
        d2[k + 1] = 4.0 * d1[k] + 2.0 * t * d2[k] - d2[k - 1];
    }
    (v, d1, d2)
}

impl ChebyshevSurrogate {
    /// Interpolates `f` on the `N^d` tensor nodes of the box. Node
    /// evaluations run in parallel.
    pub fn fit<F>(f: F, lower: &[f64], upper: &[f64], nodes_per_axis: usize) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let mut out = Self::fit_many(|m| Ok(vec![f(m)]), lower, upper, nodes_per_axis, 1, 64)?;
        Ok(out.remove(0))
    }

    /// Fits several fields that share node evaluations; `f` returns
    /// `outputs` values per point.
    pub fn fit_many<F>(
        f: F,
        lower: &[f64],
        upper: &[f64],
        nodes_per_axis: usize,
        outputs: usize,
        validation_points: usize,
    ) -> Result<Vec<Self>>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    {
        let d = lower.len();
        let n = nodes_per_axis;
        if n < 2 {
            return Err(MsraError::invalid("Chebyshev interpolation needs at least 2 nodes per axis"));
        }
        check_dim(d, upper.len())?;
        if d == 0 || lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
            return Err(MsraError::invalid("surrogate box needs lower < upper on every axis"));
        }
        let nodes = lobatto_nodes(n);
        let total = n.pow(d as u32);
        let point = |idx: usize| -> Vec<f64> {
            let mut rem = idx;
            (0..d)
                .map(|k| {
                    let t = nodes[rem % n];
                    rem /= n;
                    0.5 * (lower[k] + upper[k]) + 0.5 * (upper[k] - lower[k]) * t
                })
                .collect()
        };
        let values: Vec<Vec<f64>> = (0..total)
            .into_par_iter()
            .map(|idx| {
                let v = f(&point(idx))?;
                if v.len() != outputs || v.iter().any(|x| !x.is_finite()) {
                    return Err(MsraError::invalid("surrogate target is not finite at a node"));
                }
                Ok(v)
            })
            .collect::<Result<_>>()?;
        let mut out: Vec<ChebyshevSurrogate> = (0..outputs)
            .map(|o| {
                let mut coefficients: Vec<f64> = values.iter().map(|v| v[o]).collect();
                for axis in 0..d {
                    transform_axis(&mut coefficients, n, d, axis);
                }
                ChebyshevSurrogate {
                    lower: lower.to_vec(),
                    upper: upper.to_vec(),
                    nodes_per_axis: n,
                    coefficients,
                    error_estimate: 0.0,
                }
            })
            .collect();
        let checks = halton_points(lower, upper, validation_points);
        let truth: Vec<Vec<f64>> = checks.par_iter().map(|m| f(m)).collect::<Result<_>>()?;
        for (o, s) in out.iter_mut().enumerate() {
            let mut worst: f64 = 0.0;
            for (m, t) in checks.iter().zip(&truth) {
                worst = worst.max((s.eval(m)? - t[o]).abs());
            }
            s.error_estimate = (2.0 * worst).max(s.tail_size());
        }
        Ok(out)
    }

    /// Sum of magnitudes of the coefficients of highest degree on any axis.
    fn tail_size(&self) -> f64 {
        let n = self.nodes_per_axis;
        let d = self.lower.len();
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(idx, _)| {
                let mut rem = *idx;
                (0..d).any(|_| {
                    let last = rem % n == n - 1;
                    rem /= n;
                    last
                })
            })
            .map(|(_, c)| c.abs())
            .sum()
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, m: &[f64]) -> bool {
        m.len() == self.dim()
            && m.iter().enumerate().all(|(k, &v)| {
                let slack = 1e-12 * (self.upper[k] - self.lower[k]);
                v >= self.lower[k] - slack && v <= self.upper[k] + slack
            })
    }

    fn normalized(&self, m: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), m.len())?;
        if !self.contains(m) {
            return Err(MsraError::OutsideDomain { point: m.to_vec() });
        }
        Ok((0..self.dim())
            .map(|k| {
                let t = (2.0 * m[k] - self.lower[k] - self.upper[k]) / (self.upper[k] - self.lower[k]);
                t.clamp(-1.0, 1.0)
            })
            .collect())
    }

    pub fn eval(&self, m: &[f64]) -> Result<f64> {
        let t = self.normalized(m)?;
        let n = self.nodes_per_axis;
        let bases: Vec<Vec<f64>> = t.iter().map(|&tk| basis(tk, n).0).collect();
        Ok(self
            .coefficients
            .iter()
            .enumerate()
            .map(|(idx, c)| {
                let mut rem = idx;
                let mut prod = *c;
                for b in &bases {
                    prod *= b[rem % n];
                    rem /= n;
                }
                prod
            })
            .sum())
    }

    /// Value, gradient and Hessian of the interpolant.
    pub fn eval_with_derivatives(&self, m: &[f64]) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
        let t = self.normalized(m)?;
        let n = self.nodes_per_axis;
        let d = self.dim();
        let scale: Vec<f64> = (0..d).map(|k| 2.0 / (self.upper[k] - self.lower[k])).collect();
        let bases: Vec<_> = t.iter().map(|&tk| basis(tk, n)).collect();
        let mut value = 0.0;
        let mut grad = vec![0.0; d];
        let mut hess = DMatrix::zeros(d, d);
        let mut idx_axes = vec![0usize; d];
        for (idx, &c) in self.coefficients.iter().enumerate() {
            let mut rem = idx;
            for slot in idx_axes.iter_mut() {
                *slot = rem % n;
                rem /= n;
            }
            let term = |order: &dyn Fn(usize) -> u8| -> f64 {
                let mut p = c;
                for k in 0..d {
                    let (v, d1, d2) = &bases[k];
                    p *= match order(k) {
                        0 => v[idx_axes[k]],
                        1 => d1[idx_axes[k]] * scale[k],
                        _ => d2[idx_axes[k]] * scale[k] * scale[k],
                    };
                }
                p
            };
            value += term(&|_| 0);
            for a in 0..d {
                grad[a] += term(&|k| u8::from(k == a));
                for b in a..d {
                    let h = if a == b {
                        term(&|k| if k == a { 2 } else { 0 })
                    } else {
                        term(&|k| u8::from(k == a || k == b))
                    };
                    hess[(a, b)] += h;
                    if a != b {
                        hess[(b, a)] += h;
                    }
                }
            }
        }
        Ok((value, grad, hess))
    }
}

/// Options for [`ChebyshevEstimator`]. The box defaults to per-component
/// loss quantiles at `lower_level` and `upper_level`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateOptions {
    pub nodes_per_axis: Option<usize>,
    pub lower_level: f64,
    pub upper_level: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub validation_points: usize,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        SurrogateOptions {
            nodes_per_axis: None,
            lower_level: 0.05,
            upper_level: 0.95,
            lower: None,
            upper: None,
            validation_points: 64,
        }
    }
}

impl SurrogateOptions {
    pub fn with_nodes(nodes: usize) -> Self {
        SurrogateOptions {
            nodes_per_axis: Some(nodes),
            ..Default::default()
        }
    }
}

/// Monte Carlo constraint replaced by Chebyshev interpolants of its value
/// and gradient. Queries outside the box are rejected.
pub struct ChebyshevEstimator {
    inner: MonteCarloEstimator,
    value: ChebyshevSurrogate,
    grads: Vec<ChebyshevSurrogate>,
    value_se: f64,
}

impl ChebyshevEstimator {
    pub fn fit(inner: MonteCarloEstimator, opts: &SurrogateOptions) -> Result<Self> {
        let d = inner.dim();
        let n = opts.nodes_per_axis.unwrap_or(if d <= 2 { 15 } else { 10 });
        if d > 3 {
            log::warn!("Chebyshev surrogate in dimension {d} needs {} node evaluations", n.pow(d as u32));
        }
        let lower = match &opts.lower {
            Some(l) => l.clone(),
            None => (0..d).map(|k| inner.marginal_quantile(k, opts.lower_level)).collect(),
        };
        let upper = match &opts.upper {
            Some(u) => u.clone(),
            None => (0..d).map(|k| inner.marginal_quantile(k, opts.upper_level)).collect(),
        };
        let mut fits = ChebyshevSurrogate::fit_many(
            |m| {
                let e = inner.compute(m, false);
                let mut v = Vec::with_capacity(d + 1);
                v.push(e.value);
                v.extend(e.grad);
                Ok(v)
            },
            &lower,
            &upper,
            n,
            d + 1,
            opts.validation_points,
        )?;
        let center: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| 0.5 * (l + u)).collect();
        let value_se = inner.compute(&center, false).value_se;
        let value = fits.remove(0);
        Ok(ChebyshevEstimator {
            inner,
            value,
            grads: fits,
            value_se,
        })
    }

    pub fn value_surrogate(&self) -> &ChebyshevSurrogate {
        &self.value
    }

    pub fn gradient_surrogates(&self) -> &[ChebyshevSurrogate] {
        &self.grads
    }

    pub fn inner(&self) -> &MonteCarloEstimator {
        &self.inner
    }

    /// Gradient surrogates and their symmetrized Jacobian.
    fn jacobian(&self, m: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let d = self.grads.len();
        let mut grad = Vec::with_capacity(d);
        let mut jac = DMatrix::zeros(d, d);
        for (j, s) in self.grads.iter().enumerate() {
            let (v, g, _) = s.eval_with_derivatives(m)?;
            grad.push(v);
            for k in 0..d {
                jac[(j, k)] = g[k];
            }
        }
        Ok((grad, (&jac + jac.transpose()) * 0.5))
    }
}

impl ConstraintModel for ChebyshevEstimator {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn loss(&self) -> &LossSpec {
        self.inner.loss()
    }

    fn estimate(&self, m: &[f64], want_hess: bool) -> Result<Estimate> {
        if want_hess && !self.loss().has_hessian() {
            return Err(MsraError::Unsupported(format!("{} has no Hessian", self.loss().family_name())));
        }
        let (grad, hess) = if want_hess {
            let (g, h) = self.jacobian(m)?;
            (g, Some(h))
        } else {
            (self.grads.iter().map(|s| s.eval(m)).collect::<Result<_>>()?, None)
        };
        Ok(Estimate {
            value: self.value.eval(m)?,
            value_se: self.value_se,
            grad,
            hess,
        })
    }

    fn marginal_quantile(&self, k: usize, level: f64) -> f64 {
        let q = self.inner.marginal_quantile(k, level);
        q.clamp(self.value.lower[k], self.value.upper[k])
    }

    fn marginal_scale(&self, k: usize) -> f64 {
        self.inner.marginal_scale(k)
    }

    fn smoothed_hessian(&self, m: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.jacobian(m)?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_low_degree_polynomials() {
        let s = ChebyshevSurrogate::fit(|m| m[0] * m[0] + m[1], &[-1.0, -1.0], &[1.0, 1.0], 3).unwrap();
        for p in halton_points(&[-1.0, -1.0], &[1.0, 1.0], 100) {
            assert!((s.eval(&p).unwrap() - (p[0] * p[0] + p[1])).abs() <= 1e-12);
        }
    }

    #[test]
    fn exponential_converges() {
        let s = ChebyshevSurrogate::fit(|m| m[0].exp(), &[-1.0], &[1.0], 15).unwrap();
        let worst = (0..1000)
            .map(|i| {
                let x = -1.0 + 2.0 * i as f64 / 999.0;
                (s.eval(&[x]).unwrap() - x.exp()).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst <= 1e-10, "{worst}");
    }

    #[test]
    fn derivatives_and_box() {
        let f = |m: &[f64]| m[0].powi(3) * m[1] + 2.0 * m[1] * m[1];
        let s = ChebyshevSurrogate::fit(f, &[0.0, -2.0], &[1.0, 3.0], 6).unwrap();
        let (v, g, h) = s.eval_with_derivatives(&[0.3, 1.1]).unwrap();
        assert!((v - f(&[0.3, 1.1])).abs() < 1e-12);
        assert!((g[0] - 3.0 * 0.09 * 1.1).abs() < 1e-11);
        assert!((g[1] - (0.027 + 4.0 * 1.1)).abs() < 1e-11);
        assert!((h[(0, 0)] - 6.0 * 0.3 * 1.1).abs() < 1e-10);
        assert!((h[(0, 1)] - 0.27).abs() < 1e-10);
        assert!((h[(1, 1)] - 4.0).abs() < 1e-10);
        assert!(matches!(s.eval(&[1.5, 0.0]), Err(MsraError::OutsideDomain { .. })));
    }

    #[test]
    fn interpolates_at_nodes_and_serializes() {
        let f = |m: &[f64]| (m[0] * 3.0).sin();
        let s = ChebyshevSurrogate::fit(f, &[-1.0], &[2.0], 7).unwrap();
        for t in lobatto_nodes(7) {
            let x = 0.5 + 1.5 * t;
            assert!((s.eval(&[x]).unwrap() - f(&[x])).abs() < 1e-12);
        }
        let json = serde_json::to_string(&s).unwrap();
        let back: ChebyshevSurrogate = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
