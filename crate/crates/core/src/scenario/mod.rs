//! Loss scenarios: storage, generators and file formats.

mod copula;
mod gaussian;
mod io;
mod positions;

pub use copula::{simulate_copula_returns, simulate_student_copula, StudentCopulaModel};
pub use gaussian::{simulate_gaussian, GaussianModel};
pub use positions::{load_positions, parse_positions, Positions};

use crate::error::{MsraError, Result};
use crate::rng::BLOCK_ROWS;
use rayon::prelude::*;

/// An `n × d` matrix of simulated losses stored row-major, one row per
/// scenario. Positive entries are losses, negative entries profits.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSet {
    data: Vec<f64>,
    n: usize,
    d: usize,
    seed: u64,
    model_tag: String,
}

impl ScenarioSet {
    pub fn new(data: Vec<f64>, n: usize, d: usize, seed: u64, model_tag: impl Into<String>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(MsraError::invalid("scenario set needs n >= 1 and d >= 1"));
        }
        if data.len() != n * d {
            return Err(MsraError::DimensionMismatch {
                expected: n * d,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(MsraError::invalid(format!(
                "non-finite entry at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(ScenarioSet {
            data,
            n,
            d,
            seed,
            model_tag: model_tag.into(),
        })
    }

    /// Builds a set from rows; mostly for tests and small inputs.
    pub fn from_rows(rows: &[Vec<f64>], seed: u64, model_tag: impl Into<String>) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(MsraError::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        ScenarioSet::new(rows.concat(), rows.len(), d, seed, model_tag)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.d..(s + 1) * self.d]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.data.iter().skip(k).step_by(self.d).copied().collect()
    }

    /// Applies `f(row_in, row_out)` to every scenario, producing a set of
    /// width `d_out`. Runs block-parallel.
    pub fn map_rows<F>(&self, d_out: usize, tag: impl Into<String>, f: F) -> Result<ScenarioSet>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let mut out = vec![0.0; self.n * d_out];
        let d = self.d;
        out.par_chunks_mut(BLOCK_ROWS * d_out)
            .enumerate()
            .for_each(|(b, chunk)| {
                let start = b * BLOCK_ROWS;
                for (i, row_out) in chunk.chunks_mut(d_out).enumerate() {
                    let s = start + i;
                    f(&self.data[s * d..(s + 1) * d], row_out);
                }
            });
        ScenarioSet::new(out, self.n, d_out, self.seed, tag)
    }

    /// `X + r`, the same constant added to every scenario.
    pub fn shifted(&self, r: &[f64]) -> Result<ScenarioSet> {
        self.check_width(r.len())?;
        self.map_rows(self.d, format!("{}+shift", self.model_tag), |x, out| {
            for k in 0..x.len() {
                out[k] = x[k] + r[k];
            }
        })
    }

    pub fn scaled(&self, factor: f64) -> Result<ScenarioSet> {
        self.map_rows(self.d, format!("{}*{}", self.model_tag, factor), |x, out| {
            for k in 0..x.len() {
                out[k] = factor * x[k];
            }
        })
    }

    /// `X + t·Y`, scenario by scenario.
    pub fn add_scaled(&self, t: f64, other: &ScenarioSet) -> Result<ScenarioSet> {
        self.check_aligned(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| x + t * y)
            .collect();
        ScenarioSet::new(data, self.n, self.d, self.seed, format!("{}+{}*shock", self.model_tag, t))
    }

    /// Column `k` of the output is column `perm[k]` of the input.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<ScenarioSet> {
        self.check_width(perm.len())?;
        let mut seen = vec![false; self.d];
        for &p in perm {
            if p >= self.d || seen[p] {
                return Err(MsraError::invalid(format!("{perm:?} is not a permutation")));
            }
            seen[p] = true;
        }
        self.map_rows(self.d, format!("{}|perm", self.model_tag), |x, out| {
            for k in 0..perm.len() {
                out[k] = x[perm[k]];
            }
        })
    }

    /// Replaces column `k` by a reordering of its own values, which keeps
    /// the marginal distribution and breaks the dependence with the other
    /// columns. `order[s]` is the source row for row `s`.
    pub fn reorder_column(&self, k: usize, order: &[usize]) -> Result<ScenarioSet> {
        if k >= self.d {
            return Err(MsraError::invalid(format!("column {k} out of range")));
        }
        if order.len() != self.n {
            return Err(MsraError::DimensionMismatch {
                expected: self.n,
                got: order.len(),
            });
        }
        let mut data = self.data.clone();
        for (s, &src) in order.iter().enumerate() {
            data[s * self.d + k] = self.data[src * self.d + k];
        }
        ScenarioSet::new(data, self.n, self.d, self.seed, format!("{}|reorder{}", self.model_tag, k))
    }

    /// Keeps the first `n` scenarios.
    pub fn truncated(&self, n: usize) -> Result<ScenarioSet> {
        let n = n.min(self.n);
        ScenarioSet::new(self.data[..n * self.d].to_vec(), n, self.d, self.seed, self.model_tag.clone())
    }

    /// Empirical `level`-quantile of column `k`, interpolating linearly
    /// between order statistics at position `(n - 1)·level`.
    pub fn quantile(&self, k: usize, level: f64) -> f64 {
        quantile_in_place(&mut self.column(k), level)
    }

    pub fn column_summary(&self) -> Vec<ColumnSummary> {
        (0..self.d)
            .map(|k| {
                let col = self.column(k);
                let n = col.len() as f64;
                let mean = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                ColumnSummary {
                    mean,
                    std: var.sqrt(),
                    min: col.iter().copied().fold(f64::INFINITY, f64::min),
                    max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect()
    }

    pub(crate) fn check_width(&self, got: usize) -> Result<()> {
        if got != self.d {
            return Err(MsraError::DimensionMismatch {
                expected: self.d,
                got,
            });
        }
        Ok(())
    }

    pub(crate) fn check_aligned(&self, other: &ScenarioSet) -> Result<()> {
        if other.n != self.n {
            return Err(MsraError::invalid(format!(
                "scenario sets are not aligned: {} vs {} rows",
                self.n, other.n
            )));
        }
        self.check_width(other.d)
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ColumnSummary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Linear-interpolation quantile at position `(n - 1)·level` (0-based).
/// Reorders `values`.
pub fn quantile_in_place(values: &mut [f64], level: f64) -> f64 {
    let n = values.len();
    assert!(n > 0, "quantile of an empty sample");
    let h = (n - 1) as f64 * level.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, &mut v_lo, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return v_lo;
    }
    let v_hi = upper.iter().copied().fold(f64::INFINITY, f64::min);
    v_lo + frac * (v_hi - v_lo)
}

/// Fills an `n × d` row-major buffer block by block; `fill(block, rows)`
/// receives the block index and its slice of rows.
pub(crate) fn fill_blocks<F>(n: usize, d: usize, fill: F) -> Vec<f64>
where
    F: Fn(u64, &mut [f64]) + Sync,
{
    let mut data = vec![0.0; n * d];
    data.par_chunks_mut(BLOCK_ROWS * d)
        .enumerate()
        .for_each(|(b, chunk)| fill(b as u64, chunk));
    data
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioSet {
        ScenarioSet::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]], 0, "t").unwrap()
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(ScenarioSet::new(vec![f64::NAN], 1, 1, 0, "").is_err());
        assert!(ScenarioSet::new(vec![], 0, 1, 0, "").is_err());
        assert!(ScenarioSet::new(vec![1.0; 3], 2, 2, 0, "").is_err());
    }

    #[test]
    fn quantile_interpolates() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile_in_place(&mut v, 0.5), 2.5);
        assert_eq!(quantile_in_place(&mut v, 1.0), 4.0);
        assert_eq!(quantile_in_place(&mut v, 0.0), 1.0);
        assert_eq!(quantile_in_place(&mut [7.0], 0.3), 7.0);
    }

    #[test]
    fn column_operations() {
        let s = small();
        assert_eq!(s.column(1), vec![2.0, 4.0, 6.0]);
        assert_eq!(s.shifted(&[1.0, -1.0]).unwrap().row(0), &[2.0, 1.0]);
        assert_eq!(s.permute_columns(&[1, 0]).unwrap().row(2), &[6.0, 5.0]);
        assert!(s.permute_columns(&[0, 0]).is_err());
        assert_eq!(s.reorder_column(0, &[2, 0, 1]).unwrap().column(0), vec![5.0, 1.0, 3.0]);
        assert_eq!(s.add_scaled(2.0, &s).unwrap().row(1), &[9.0, 12.0]);
    }
}
