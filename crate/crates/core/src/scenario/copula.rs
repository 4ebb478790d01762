use super::{fill_blocks, Positions, ScenarioSet};
use crate::dist::{chi_square_quantile, student_t_cdf, student_t_quantile};
use crate::error::{MsraError, Result};
use crate::linalg::psd_factor;
use crate::rng::{block_rng, open_uniform, standard_normal};
use nalgebra::DMatrix;

/// Student-t marginals for the underlyings' price moves, coupled by a
/// Student-t copula, and the clearing positions that turn them into member
/// losses.
#[derive(Clone, Debug)]
pub struct StudentCopulaModel {
    pub correlation: DMatrix<f64>,
    pub copula_dof: f64,
    pub marginal_dof: Vec<f64>,
    pub fudge: Vec<f64>,
    pub spot: Vec<f64>,
    pub positions: Positions,
    factor: DMatrix<f64>,
}

impl StudentCopulaModel {
    pub fn new(
        correlation: DMatrix<f64>,
        copula_dof: f64,
        marginal_dof: Vec<f64>,
        fudge: Vec<f64>,
        spot: Vec<f64>,
        positions: Positions,
    ) -> Result<Self> {
        let du = positions.n_underlyings();
        for (name, len) in [
            ("correlation", correlation.nrows()),
            ("marginal_dof", marginal_dof.len()),
            ("fudge", fudge.len()),
            ("spot", spot.len()),
        ] {
            if len != du {
                return Err(MsraError::invalid(format!(
                    "{name} has length {len}, expected {du} underlyings"
                )));
            }
        }
        for i in 0..du {
            if (correlation[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(MsraError::invalid(format!(
                    "correlation diagonal entry {i} is {}, expected 1",
                    correlation[(i, i)]
                )));
            }
        }
        let (factor, diagnostics) = psd_factor(&correlation)?;
        for msg in diagnostics {
            log::warn!("{msg}");
        }
        if !(copula_dof > 0.0) || marginal_dof.iter().any(|&v| !(v > 0.0)) {
            return Err(MsraError::invalid("degrees of freedom must be positive"));
        }
        if fudge.iter().any(|&v| !(v > 0.0)) {
            return Err(MsraError::invalid("fudge coefficients must be positive"));
        }
        if let Some(i) = spot.iter().position(|&v| !(v > 0.0)) {
            return Err(MsraError::invalid(format!(
                "spot price of {} must be positive, got {}",
                positions.tickers[i], spot[i]
            )));
        }
        let model = StudentCopulaModel {
            correlation,
            copula_dof,
            marginal_dof,
            fudge,
            spot,
            positions,
            factor,
        };
        for msg in model.diagnostics() {
            log::warn!("{msg}");
        }
        Ok(model)
    }

    /// Warnings that do not prevent simulation (infinite-variance marginals).
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.copula_dof <= 2.0 {
            out.push(format!(
                "copula degrees of freedom {} <= 2: infinite variance",
                self.copula_dof
            ));
        }
        for (t, &nu) in self.positions.tickers.iter().zip(&self.marginal_dof) {
            if nu <= 2.0 {
                out.push(format!("marginal of {t} has {nu} <= 2 degrees of freedom: infinite variance"));
            }
        }
        out
    }

    pub fn n_members(&self) -> usize {
        self.positions.n_members()
    }

    pub fn tag(&self) -> String {
        format!(
            "student_copula(members={},underlyings={},nu={})",
            self.n_members(),
            self.positions.n_underlyings(),
            self.copula_dof
        )
    }
}

fn draw_chi_square<R: rand_chacha::rand_core::RngCore>(rng: &mut R, nu: f64) -> f64 {
    if nu.fract() == 0.0 && nu <= 1000.0 {
        (0..nu as usize)
            .map(|_| {
                let z = standard_normal(rng);
                z * z
            })
            .sum()
    } else {
        chi_square_quantile(open_uniform(rng), nu)
    }
}

/// Maps a copula coordinate `r` (t-distributed with `nu` dof) to a
/// t-distributed variable with `nu_i` dof through the shared uniform,
/// working on the lower tail to keep precision far out.
fn remap_t(r: f64, nu: f64, nu_i: f64) -> f64 {
    if nu_i == nu {
        return r;
    }
    let lower = student_t_cdf(-r.abs(), nu).max(f64::MIN_POSITIVE);
    let t = student_t_quantile(lower, nu_i);
    if r > 0.0 {
        -t
    } else {
        t
    }
}

/// Standardized moves `T_i` (Student-t with `nu_i` dof) for each underlying.
pub fn simulate_copula_returns(model: &StudentCopulaModel, n: usize, seed: u64) -> Result<ScenarioSet> {
    if n == 0 {
        return Err(MsraError::invalid("n must be at least 1"));
    }
    let du = model.positions.n_underlyings();
    let l = &model.factor;
    let nu = model.copula_dof;
    let data = fill_blocks(n, du, |block, rows| {
        let mut rng = block_rng(seed, block);
        let mut z = vec![0.0; du];
        for row in rows.chunks_mut(du) {
            for v in z.iter_mut() {
                *v = standard_normal(&mut rng);
            }
            let xi = draw_chi_square(&mut rng, nu);
            let scale = (nu / xi).sqrt();
            for i in 0..du {
                let mut g = 0.0;
                for j in 0..=i {
                    g += l[(i, j)] * z[j];
                }
                row[i] = remap_t(scale * g, nu, model.marginal_dof[i]);
            }
        }
    });
    ScenarioSet::new(data, n, du, seed, format!("{}|returns", model.tag()))
}

/// Member losses `X = -P ΔS` with `ΔS_i = κ_i T_i S0_i`.
pub fn simulate_student_copula(model: &StudentCopulaModel, n: usize, seed: u64) -> Result<ScenarioSet> {
    let returns = simulate_copula_returns(model, n, seed)?;
    let p = &model.positions.matrix;
    let dm = model.n_members();
    let du = model.positions.n_underlyings();
    returns.map_rows(dm, model.tag(), |t, x| {
        for k in 0..dm {
            let mut acc = 0.0;
            for i in 0..du {
                acc += p[(k, i)] * (model.fudge[i] * t[i] * model.spot[i]);
            }
            x[k] = -acc;
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_underlying(p: Vec<f64>, nu: f64, nu_i: f64) -> StudentCopulaModel {
        let members = (0..p.len()).map(|i| format!("M{i}")).collect();
        let positions = Positions::new(members, vec!["U".into()], DMatrix::from_column_slice(p.len(), 1, &p)).unwrap();
        StudentCopulaModel::new(DMatrix::identity(1, 1), nu, vec![nu_i], vec![1.0], vec![100.0], positions).unwrap()
    }

    #[test]
    fn opposite_positions_mirror_each_other() {
        let m = one_underlying(vec![1.0, -1.0], 6.0, 4.5);
        let s = simulate_student_copula(&m, 5000, 1).unwrap();
        for r in 0..s.n() {
            assert_eq!(s.row(r)[0], -s.row(r)[1]);
        }
    }

    #[test]
    fn zero_positions_give_zero_losses() {
        let m = one_underlying(vec![0.0, 0.0], 6.0, 6.0);
        let s = simulate_student_copula(&m, 100, 1).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs_and_flags_heavy_tails() {
        let positions = Positions::new(vec!["A".into(), "B".into()], vec!["U".into()], DMatrix::from_column_slice(2, 1, &[1.0, -1.0])).unwrap();
        let bad_spot = StudentCopulaModel::new(DMatrix::identity(1, 1), 6.0, vec![6.0], vec![1.0], vec![0.0], positions.clone());
        assert!(bad_spot.is_err());
        let heavy = StudentCopulaModel::new(DMatrix::identity(1, 1), 2.0, vec![1.5], vec![1.0], vec![10.0], positions).unwrap();
        assert_eq!(heavy.diagnostics().len(), 2);
    }

    #[test]
    fn remap_preserves_sign_and_rank() {
        let a = remap_t(-2.0, 6.0, 3.0);
        let b = remap_t(-1.0, 6.0, 3.0);
        assert!(a < b && b < 0.0);
        assert!((remap_t(1.7, 6.0, 3.0) + remap_t(-1.7, 6.0, 3.0)).abs() < 1e-12);
        assert!((student_t_cdf(a, 3.0) - student_t_cdf(-2.0, 6.0)).abs() < 1e-13);
    }
}
