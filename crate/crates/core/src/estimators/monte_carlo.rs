use super::{block_sums, check_dim, ConstraintModel, Estimate};
use crate::dist::normal_pdf;
use crate::error::{MsraError, Result};
use crate::loss::{Kink, LossSpec};
use crate::scenario::{quantile_in_place, ScenarioSet};
use nalgebra::DMatrix;
use std::sync::{Arc, Mutex, OnceLock};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CachePolicy {
    #[default]
    Off,
    /// Reuse the previous estimate when queried at the same `m` again.
    LastPoint,
}

type CacheEntry = (Vec<f64>, Estimate);

/// Sample averages over a stored scenario set. Every query at every `m`
/// uses the same rows (common random numbers), so `m ↦ estimate(m)` is a
/// deterministic function.
pub struct MonteCarloEstimator {
    scenarios: Arc<ScenarioSet>,
    loss: LossSpec,
    cache: CachePolicy,
    last: Mutex<Option<CacheEntry>>,
    smoother: OnceLock<KinkSmoother>,
}

impl MonteCarloEstimator {
    pub fn new(scenarios: Arc<ScenarioSet>, loss: LossSpec) -> Result<Self> {
        check_dim(loss.dim(), scenarios.d())?;
        Ok(MonteCarloEstimator {
            scenarios,
            loss,
            cache: CachePolicy::Off,
            last: Mutex::new(None),
            smoother: OnceLock::new(),
        })
    }

    pub fn with_cache(mut self, cache: CachePolicy) -> Self {
        self.cache = cache;
        self
    }

    pub fn scenarios(&self) -> &Arc<ScenarioSet> {
        &self.scenarios
    }

    pub(crate) fn smoother(&self) -> &KinkSmoother {
        self.smoother.get_or_init(|| KinkSmoother::new(&self.scenarios, &self.loss))
    }

    /// Same scenarios, different loss.
    pub fn with_loss(&self, loss: LossSpec) -> Result<Self> {
        MonteCarloEstimator::new(self.scenarios.clone(), loss).map(|e| e.with_cache(self.cache))
    }

    pub(super) fn compute(&self, m: &[f64], want_hess: bool) -> Estimate {
        let d = self.loss.dim();
        let x = &*self.scenarios;
        let width = 2 + d + if want_hess { d * d } else { 0 };
        let sums = block_sums(x.n(), width, |rows, acc| {
            let mut y = vec![0.0; d];
            let mut g = vec![0.0; d];
            let mut h = vec![0.0; if want_hess { d * d } else { 0 }];
            for s in rows {
                let row = x.row(s);
                for k in 0..d {
                    y[k] = row[k] - m[k];
                }
                let v = self
                    .loss
                    .evaluate(&y, Some(&mut g), if want_hess { Some(&mut h) } else { None });
                acc[0] += v;
                acc[1] += v * v;
                for k in 0..d {
                    acc[2 + k] += g[k];
                }
                if want_hess {
                    for (a, hv) in acc[2 + d..].iter_mut().zip(&h) {
                        *a += hv;
                    }
                }
            }
        });
        let n = x.n() as f64;
        let value = sums[0] / n;
        let var = (sums[1] / n - value * value).max(0.0);
        Estimate {
            value,
            value_se: (var / n).sqrt(),
            grad: sums[2..2 + d].iter().map(|g| -g / n).collect(),
            hess: want_hess.then(|| DMatrix::from_row_slice(d, d, &sums[2 + d..]) / n),
        }
    }
}

impl ConstraintModel for MonteCarloEstimator {
    fn dim(&self) -> usize {
        self.loss.dim()
    }

    fn loss(&self) -> &LossSpec {
        &self.loss
    }

    fn estimate(&self, m: &[f64], want_hess: bool) -> Result<Estimate> {
        check_dim(self.loss.dim(), m.len())?;
        if want_hess && !self.loss.has_hessian() {
            return Err(MsraError::Unsupported(format!(
                "{} has no Hessian",
                self.loss.family_name()
            )));
        }
        if self.cache == CachePolicy::LastPoint {
            let guard = self.last.lock().unwrap();
            if let Some((cached_m, est)) = guard.as_ref() {
                if cached_m.as_slice() == m && (est.hess.is_some() || !want_hess) {
                    return Ok(est.clone());
                }
            }
        }
        let est = self.compute(m, want_hess);
        if self.cache == CachePolicy::LastPoint {
            *self.last.lock().unwrap() = Some((m.to_vec(), est.clone()));
        }
        Ok(est)
    }

    fn granularity(&self) -> f64 {
        1.0 / self.scenarios.n() as f64
    }

    fn marginal_quantile(&self, k: usize, level: f64) -> f64 {
        self.scenarios.quantile(k, level)
    }

    fn marginal_scale(&self, k: usize) -> f64 {
        let x = &*self.scenarios;
        let n = x.n() as f64;
        let s = block_sums(x.n(), 2, |rows, acc| {
            for r in rows {
                let v = x.row(r)[k];
                acc[0] += v;
                acc[1] += v * v;
            }
        });
        let mean = s[0] / n;
        (s[1] / n - mean * mean).max(0.0).sqrt()
    }

    fn kkt_covariance(&self, m: &[f64], lambda: f64) -> Result<Option<DMatrix<f64>>> {
        check_dim(self.loss.dim(), m.len())?;
        let d = self.loss.dim();
        let w = d + 1;
        let x = &*self.scenarios;
        let sums = block_sums(x.n(), w + w * w, |rows, acc| {
            let mut y = vec![0.0; d];
            let mut g = vec![0.0; d];
            let mut f = vec![0.0; w];
            for s in rows {
                let row = x.row(s);
                for k in 0..d {
                    y[k] = row[k] - m[k];
                }
                let v = self.loss.evaluate(&y, Some(&mut g), None);
                for k in 0..d {
                    f[k] = lambda * g[k] - 1.0;
                }
                f[d] = v;
                for i in 0..w {
                    acc[i] += f[i];
                    for j in 0..w {
                        acc[w + i * w + j] += f[i] * f[j];
                    }
                }
            }
        });
        let n = x.n() as f64;
        let mean: Vec<f64> = sums[..w].iter().map(|s| s / n).collect();
        let cov = DMatrix::from_fn(w, w, |i, j| (sums[w + i * w + j] / n - mean[i] * mean[j]) / n);
        Ok(Some(cov))
    }

    /// The a.e. Hessian plus every gradient kink `a·y = 0` with jump `J`
    /// contributing `J·K_h(a·y)·aaᵀ`, `K_h` a Gaussian kernel with Silverman
    /// bandwidth for the law of `a·X`.
    fn smoothed_hessian(&self, m: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.loss.dim(), m.len())?;
        let d = self.loss.dim();
        let x = &*self.scenarios;
        let smoother = self.smoother();
        let sums = block_sums(x.n(), d * d, |rows, acc| {
            let mut y = vec![0.0; d];
            let mut h = vec![0.0; d * d];
            let mut jumps = smoother.scratch();
            for s in rows {
                let row = x.row(s);
                for k in 0..d {
                    y[k] = row[k] - m[k];
                }
                self.loss.evaluate(&y, None, Some(&mut h));
                smoother.add(&self.loss, &y, &mut h, &mut jumps);
                for (a, hv) in acc.iter_mut().zip(&h) {
                    *a += hv;
                }
            }
        });
        Ok(DMatrix::from_row_slice(d, d, &sums) / x.n() as f64)
    }
}

/// Gaussian-kernel replacement of the delta terms that gradient kinks add
/// to the expected Hessian.
pub(crate) struct KinkSmoother {
    kinks: Vec<Kink>,
    bandwidth: Vec<f64>,
}

impl KinkSmoother {
    fn new(x: &ScenarioSet, loss: &LossSpec) -> Self {
        if !loss.has_gradient_kinks() {
            return KinkSmoother { kinks: Vec::new(), bandwidth: Vec::new() };
        }
        let n = x.n();
        let kinks = loss.kinks();
        let bandwidth = kinks
            .iter()
            .map(|kink| {
                let a = &kink.normal;
                let mut proj: Vec<f64> = (0..n)
                    .map(|s| x.row(s).iter().zip(a).map(|(v, w)| v * w).sum())
                    .collect();
                let mean = proj.iter().sum::<f64>() / n as f64;
                let sd = (proj.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
                let iqr = quantile_in_place(&mut proj, 0.75) - quantile_in_place(&mut proj, 0.25);
                let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
                0.9 * spread * (n as f64).powf(-0.2)
            })
            .collect();
        KinkSmoother { kinks, bandwidth }
    }

    /// Scratch buffer for [`KinkSmoother::add`].
    pub(crate) fn scratch(&self) -> Vec<f64> {
        vec![0.0; self.kinks.len()]
    }

    /// Adds the kernel terms at residual `y` to the row-major `h`.
    pub(crate) fn add(&self, loss: &LossSpec, y: &[f64], h: &mut [f64], jumps: &mut [f64]) {
        if self.kinks.is_empty() {
            return;
        }
        let d = y.len();
        loss.kink_jumps(&self.kinks, y, jumps);
        for ((kink, &bw), &jump) in self.kinks.iter().zip(&self.bandwidth).zip(jumps.iter()) {
            if jump == 0.0 || !(bw > 0.0) {
                continue;
            }
            let a = &kink.normal;
            let u: f64 = y.iter().zip(a).map(|(v, w)| v * w).sum();
            let w = jump * normal_pdf(u / bw) / bw;
            if w == 0.0 {
                continue;
            }
            for i in 0..d {
                for j in 0..d {
                    h[i * d + j] += w * a[i] * a[j];
                }
            }
        }
    }
}
