//! Multivariate loss functions `ℓ : ℝᵈ → ℝ`.
//!
//! The acceptability level is fixed at zero: an allocation `m` is
//! acceptable when `E[ℓ(X - m)] <= 0`, so constants such as the `-1` of the
//! quadratic systemic loss are part of the loss itself. Kinks of `x⁺` use
//! the right derivative (slope 1 at 0).

mod kernel;
mod validate;

pub use kernel::Kernel;
pub use validate::{recession_probe, validate_loss, RecessionProbe, Uniqueness, ValidationReport};

use crate::error::{MsraError, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    /// `[Σx] + ½Σ(x⁺)² + α Σ_{j<k} x_j⁺x_k⁺ - 1`; the linear sum is
    /// present when `linear` is set.
    QuadraticSystemic { alpha: f64, linear: bool },
    /// `(½e^{2x₁} + ½e^{2x₂} + α e^{x₁+x₂} - 1) / (1 + α)`.
    ExpBivariate { alpha: f64 },
    /// `Σ (β x⁺ - α x⁻)`.
    Ph1 { alpha: f64, beta: f64 },
    /// `Ph1` plus the same kernel applied to every pair sum `x_k + x_j`, `k < j`.
    Ph2 { alpha: f64, beta: f64 },
    /// `h(Σx)`.
    C1 { kernel: Kernel },
    /// `Σ h(x_k)`.
    C2 { kernel: Kernel },
    /// `α h(Σx) + β Σ h(x_k)`.
    C3 { alpha: f64, beta: f64, kernel: Kernel },
}

/// A loss family together with its dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLossSpec", into = "RawLossSpec")]
pub struct LossSpec {
    family: Family,
    d: usize,
}

/// Hyperplane `{y : a·y = 0}` across which the loss is not twice
/// differentiable. `slope_jump` is the jump of the directional derivative
/// along `a` where it does not depend on the point (zero when only the
/// second derivative jumps); see [`LossSpec::kink_jumps`].
#[derive(Clone, Debug, PartialEq)]
pub struct Kink {
    pub normal: Vec<f64>,
    pub slope_jump: f64,
}

#[inline]
fn ph(alpha: f64, beta: f64, y: f64) -> f64 {
    if y >= 0.0 {
        beta * y
    } else {
        alpha * y
    }
}

#[inline]
fn ph_slope(alpha: f64, beta: f64, y: f64) -> f64 {
    if y >= 0.0 {
        beta
    } else {
        alpha
    }
}

impl LossSpec {
    pub fn new(family: Family, d: usize) -> Result<Self> {
        let spec = LossSpec { family, d };
        spec.check().map_err(MsraError::InvalidInput)?;
        Ok(spec)
    }

    pub fn quadratic_systemic(alpha: f64, d: usize) -> Result<Self> {
        LossSpec::new(Family::QuadraticSystemic { alpha, linear: true }, d)
    }

    pub fn exp_bivariate(alpha: f64) -> Result<Self> {
        LossSpec::new(Family::ExpBivariate { alpha }, 2)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.d == 0 {
            return Err("loss dimension must be at least 1".into());
        }
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be finite and >= 0, got {v}"))
            }
        };
        match self.family {
            Family::QuadraticSystemic { alpha, .. } => {
                // the cross terms outweigh the squares beyond 1
                if (0.0..=1.0).contains(&alpha) {
                    Ok(())
                } else {
                    Err(format!("quadratic_systemic is convex only for 0 <= alpha <= 1, got {alpha}"))
                }
            }
            Family::ExpBivariate { alpha } => {
                if self.d != 2 {
                    return Err(format!("exp_bivariate is two-dimensional, got d = {}", self.d));
                }
                nonneg("alpha", alpha)
            }
            Family::Ph1 { alpha, beta } | Family::Ph2 { alpha, beta } => {
                if alpha > 0.0 && alpha < 1.0 && beta >= 1.0 && beta.is_finite() {
                    Ok(())
                } else {
                    Err(format!("positively homogeneous losses need 0 < alpha < 1 <= beta, got alpha = {alpha}, beta = {beta}"))
                }
            }
            Family::C1 { kernel } | Family::C2 { kernel } => kernel.validate(),
            Family::C3 { alpha, beta, kernel } => {
                nonneg("alpha", alpha)?;
                nonneg("beta", beta)?;
                if alpha == 0.0 && beta == 0.0 {
                    return Err("c3 needs alpha or beta positive".into());
                }
                kernel.validate()
            }
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::QuadraticSystemic { .. } => "quadratic_systemic",
            Family::ExpBivariate { .. } => "exp_bivariate",
            Family::Ph1 { .. } => "ph1",
            Family::Ph2 { .. } => "ph2",
            Family::C1 { .. } => "c1",
            Family::C2 { .. } => "c2",
            Family::C3 { .. } => "c3",
        }
    }

    /// Whether a (generalized) Hessian is available, i.e. the gradient is
    /// continuous.
    pub fn has_hessian(&self) -> bool {
        match self.family {
            Family::QuadraticSystemic { .. } | Family::ExpBivariate { .. } => true,
            Family::Ph1 { .. } | Family::Ph2 { .. } => false,
            Family::C1 { kernel } | Family::C2 { kernel } | Family::C3 { kernel, .. } => kernel.has_hessian(),
        }
    }

    pub fn is_positively_homogeneous(&self) -> bool {
        match self.family {
            Family::Ph1 { .. } | Family::Ph2 { .. } => true,
            Family::C1 { kernel } | Family::C2 { kernel } | Family::C3 { kernel, .. } => {
                matches!(kernel, Kernel::PiecewiseLinear { .. })
            }
            _ => false,
        }
    }

    /// Constant `c` with `ℓ(x) >= Σx - c` for all `x`, when one is known.
    pub fn lower_bound_constant(&self) -> Option<f64> {
        match self.family {
            Family::QuadraticSystemic { linear: true, .. } => Some(1.0),
            Family::QuadraticSystemic { linear: false, .. } => Some(1.0 + 0.5 * self.d as f64),
            Family::ExpBivariate { .. } => Some(0.0),
            Family::Ph1 { .. } | Family::Ph2 { .. } => Some(0.0),
            Family::C1 { .. } | Family::C2 { .. } => Some(0.0),
            Family::C3 { alpha, beta, kernel } => {
                if (alpha + beta - 1.0).abs() < 1e-15 {
                    Some(0.0)
                } else if kernel == Kernel::Exponential && alpha + beta >= 1.0 {
                    Some(alpha + beta * self.d as f64)
                } else {
                    None
                }
            }
        }
    }

    /// Systemic weight of the families that carry one.
    pub fn alpha(&self) -> Option<f64> {
        match self.family {
            Family::QuadraticSystemic { alpha, .. } | Family::ExpBivariate { alpha } | Family::C3 { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    /// Same family with a different systemic weight.
    /// Admissible range of the systemic weight.
    pub fn alpha_range(&self) -> Option<(f64, f64)> {
        match self.family {
            Family::QuadraticSystemic { .. } => Some((0.0, 1.0)),
            Family::ExpBivariate { .. } | Family::C3 { .. } => Some((0.0, f64::INFINITY)),
            _ => None,
        }
    }

    pub fn with_alpha(&self, new_alpha: f64) -> Result<LossSpec> {
        let family = match self.family {
            Family::QuadraticSystemic { linear, .. } => Family::QuadraticSystemic { alpha: new_alpha, linear },
            Family::ExpBivariate { .. } => Family::ExpBivariate { alpha: new_alpha },
            Family::C3 { beta, kernel, .. } => Family::C3 { alpha: new_alpha, beta, kernel },
            _ => {
                return Err(MsraError::Unsupported(format!(
                    "{} has no systemic weight",
                    self.family_name()
                )))
            }
        };
        LossSpec::new(family, self.d)
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.d {
            return Err(MsraError::DimensionMismatch {
                expected: self.d,
                got,
            });
        }
        Ok(())
    }

    /// `ℓ(x)` with a dimension check.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x.len())?;
        Ok(self.evaluate(x, None, None))
    }

    pub fn grad(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_len(x.len())?;
        let mut g = vec![0.0; self.d];
        self.evaluate(x, Some(&mut g), None);
        Ok(DVector::from_vec(g))
    }

    /// Hessian (almost-everywhere second derivative). Not available for the
    /// positively homogeneous families, whose allocations go through the
    /// SQP path instead.
    pub fn hess(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_len(x.len())?;
        if !self.has_hessian() {
            return Err(MsraError::Unsupported(format!(
                "{} is not twice differentiable; use the sqp method",
                self.family_name()
            )));
        }
        let mut h = vec![0.0; self.d * self.d];
        self.evaluate(x, None, Some(&mut h));
        Ok(DMatrix::from_row_slice(self.d, self.d, &h))
    }

    /// Value, and optionally gradient and row-major Hessian written into
    /// the provided buffers. No dimension checks; this is the hot path.
    pub fn evaluate(&self, x: &[f64], grad: Option<&mut [f64]>, hess: Option<&mut [f64]>) -> f64 {
        let d = self.d;
        match self.family {
            Family::QuadraticSystemic { alpha, linear } => {
                let lin = if linear { 1.0 } else { 0.0 };
                let (mut s, mut sq, mut sum) = (0.0, 0.0, 0.0);
                for &v in x {
                    let p = v.max(0.0);
                    s += p;
                    sq += p * p;
                    sum += v;
                }
                if let Some(g) = grad {
                    for k in 0..d {
                        let p = x[k].max(0.0);
                        let ind = if x[k] >= 0.0 { 1.0 } else { 0.0 };
                        g[k] = lin + p + alpha * ind * (s - p);
                    }
                }
                if let Some(h) = hess {
                    for j in 0..d {
                        let ij = if x[j] >= 0.0 { 1.0 } else { 0.0 };
                        for k in 0..d {
                            let ik = if x[k] >= 0.0 { 1.0 } else { 0.0 };
                            h[j * d + k] = if j == k { ij } else { alpha * ij * ik };
                        }
                    }
                }
                lin * sum + 0.5 * sq + 0.5 * alpha * (s * s - sq) - 1.0
            }
            Family::ExpBivariate { alpha } => {
                let c = 1.0 / (1.0 + alpha);
                let e1 = (2.0 * x[0]).exp();
                let e2 = (2.0 * x[1]).exp();
                let e12 = (x[0] + x[1]).exp();
                if let Some(g) = grad {
                    g[0] = c * (e1 + alpha * e12);
                    g[1] = c * (e2 + alpha * e12);
                }
                if let Some(h) = hess {
                    h[0] = c * (2.0 * e1 + alpha * e12);
                    h[1] = c * alpha * e12;
                    h[2] = h[1];
                    h[3] = c * (2.0 * e2 + alpha * e12);
                }
                c * (0.5 * e1 + 0.5 * e2 + alpha * e12 - 1.0)
            }
            Family::Ph1 { alpha, beta } => {
                if let Some(g) = grad {
                    for k in 0..d {
                        g[k] = ph_slope(alpha, beta, x[k]);
                    }
                }
                if let Some(h) = hess {
                    h.fill(0.0);
                }
                x.iter().map(|&v| ph(alpha, beta, v)).sum()
            }
            Family::Ph2 { alpha, beta } => {
                let mut v: f64 = x.iter().map(|&v| ph(alpha, beta, v)).sum();
                let mut g = grad;
                if let Some(g) = g.as_deref_mut() {
                    for k in 0..d {
                        g[k] = ph_slope(alpha, beta, x[k]);
                    }
                }
                for k in 0..d {
                    for j in k + 1..d {
                        let y = x[k] + x[j];
                        v += ph(alpha, beta, y);
                        if let Some(g) = g.as_deref_mut() {
                            let s = ph_slope(alpha, beta, y);
                            g[k] += s;
                            g[j] += s;
                        }
                    }
                }
                if let Some(h) = hess {
                    h.fill(0.0);
                }
                v
            }
            Family::C1 { kernel } => {
                let s: f64 = x.iter().sum();
                if let Some(g) = grad {
                    g.fill(kernel.d1(s));
                }
                if let Some(h) = hess {
                    h.fill(kernel.d2(s));
                }
                kernel.value(s)
            }
            Family::C2 { kernel } => {
                if let Some(g) = grad {
                    for k in 0..d {
                        g[k] = kernel.d1(x[k]);
                    }
                }
                if let Some(h) = hess {
                    h.fill(0.0);
                    for k in 0..d {
                        h[k * d + k] = kernel.d2(x[k]);
                    }
                }
                x.iter().map(|&v| kernel.value(v)).sum()
            }
            Family::C3 { alpha, beta, kernel } => {
                let s: f64 = x.iter().sum();
                if let Some(g) = grad {
                    let common = alpha * kernel.d1(s);
                    for k in 0..d {
                        g[k] = common + beta * kernel.d1(x[k]);
                    }
                }
                if let Some(h) = hess {
                    h.fill(alpha * kernel.d2(s));
                    for k in 0..d {
                        h[k * d + k] += beta * kernel.d2(x[k]);
                    }
                }
                alpha * kernel.value(s) + beta * x.iter().map(|&v| kernel.value(v)).sum::<f64>()
            }
        }
    }

    /// For losses of the form `Σg(x_k) + α h(x)`, evaluates the systemic
    /// part `h` (and its gradient). `None` for families without that split.
    pub fn systemic_part(&self, x: &[f64], grad: Option<&mut [f64]>) -> Option<f64> {
        match self.family {
            Family::QuadraticSystemic { .. } => {
                let (mut s, mut sq) = (0.0, 0.0);
                for &v in x {
                    let p = v.max(0.0);
                    s += p;
                    sq += p * p;
                }
                if let Some(g) = grad {
                    for k in 0..self.d {
                        g[k] = if x[k] >= 0.0 { s - x[k] } else { 0.0 };
                    }
                }
                Some(0.5 * (s * s - sq))
            }
            Family::C3 { kernel, .. } => {
                let s: f64 = x.iter().sum();
                if let Some(g) = grad {
                    g.fill(kernel.d1(s));
                }
                Some(kernel.value(s))
            }
            _ => None,
        }
    }

    /// Jump of the directional derivative across each kink of `kinks` at
    /// the point `x`. Constant except for the quadratic systemic loss,
    /// where crossing `x_k = 0` switches on `α Σ_{j≠k} x_j⁺`.
    pub fn kink_jumps(&self, kinks: &[Kink], x: &[f64], out: &mut [f64]) {
        for (o, k) in out.iter_mut().zip(kinks) {
            *o = k.slope_jump;
        }
        if let Family::QuadraticSystemic { alpha, .. } = self.family {
            if alpha > 0.0 {
                let s: f64 = x.iter().map(|v| v.max(0.0)).sum();
                for (k, o) in out.iter_mut().enumerate().take(self.d) {
                    *o += alpha * (s - x[k].max(0.0));
                }
            }
        }
    }

    /// Whether some kink carries a jump in the gradient, so that the
    /// expected Hessian picks up a density term.
    pub fn has_gradient_kinks(&self) -> bool {
        match self.family {
            Family::QuadraticSystemic { alpha, .. } => alpha > 0.0,
            _ => self.kinks().iter().any(|k| k.slope_jump != 0.0),
        }
    }

    /// Hyperplanes on which the loss is not twice differentiable.
    pub fn kinks(&self) -> Vec<Kink> {
        let d = self.d;
        let unit = |k: usize| {
            let mut a = vec![0.0; d];
            a[k] = 1.0;
            a
        };
        let mut out = Vec::new();
        match self.family {
            Family::QuadraticSystemic { .. } => {
                out.extend((0..d).map(|k| Kink { normal: unit(k), slope_jump: 0.0 }));
            }
            Family::ExpBivariate { .. } => {}
            Family::Ph1 { alpha, beta } | Family::Ph2 { alpha, beta } => {
                out.extend((0..d).map(|k| Kink { normal: unit(k), slope_jump: beta - alpha }));
                if matches!(self.family, Family::Ph2 { .. }) {
                    for k in 0..d {
                        for j in k + 1..d {
                            let mut a = unit(k);
                            a[j] = 1.0;
                            out.push(Kink { normal: a, slope_jump: beta - alpha });
                        }
                    }
                }
            }
            Family::C1 { kernel } | Family::C2 { kernel } | Family::C3 { kernel, .. } => {
                let Some(jump) = kernel.slope_jump() else {
                    return out;
                };
                let (w_sum, w_each) = match self.family {
                    Family::C1 { .. } => (1.0, 0.0),
                    Family::C2 { .. } => (0.0, 1.0),
                    Family::C3 { alpha, beta, .. } => (alpha, beta),
                    _ => unreachable!(),
                };
                if w_sum > 0.0 {
                    out.push(Kink { normal: vec![1.0; d], slope_jump: w_sum * jump });
                }
                if w_each > 0.0 {
                    out.extend((0..d).map(|k| Kink { normal: unit(k), slope_jump: w_each * jump }));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FamilyName {
    QuadraticSystemic,
    ExpBivariate,
    Ph1,
    Ph2,
    C1,
    C2,
    C3,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    linear: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<Kernel>,
}

/// JSON form `{"family": ..., "d": ..., "params": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLossSpec {
    family: FamilyName,
    d: usize,
    #[serde(default)]
    params: RawParams,
}

impl TryFrom<RawLossSpec> for LossSpec {
    type Error = String;

    fn try_from(raw: RawLossSpec) -> std::result::Result<Self, String> {
        let p = raw.params;
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| format!("missing parameter {name}"));
        let allow = |allowed: &[&str]| {
            let present = [
                ("alpha", p.alpha.is_some()),
                ("beta", p.beta.is_some()),
                ("linear", p.linear.is_some()),
                ("kernel", p.kernel.is_some()),
            ];
            for (name, set) in present {
                if set && !allowed.contains(&name) {
                    return Err(format!("parameter {name} does not apply to this family"));
                }
            }
            Ok(())
        };
        let kernel = || p.kernel.ok_or_else(|| "missing parameter kernel".to_string());
        let family = match raw.family {
            FamilyName::QuadraticSystemic => {
                allow(&["alpha", "linear"])?;
                Family::QuadraticSystemic {
                    alpha: need(p.alpha, "alpha")?,
                    linear: p.linear.unwrap_or(true),
                }
            }
            FamilyName::ExpBivariate => {
                allow(&["alpha"])?;
                Family::ExpBivariate { alpha: need(p.alpha, "alpha")? }
            }
            FamilyName::Ph1 | FamilyName::Ph2 => {
                allow(&["alpha", "beta"])?;
                let (alpha, beta) = (need(p.alpha, "alpha")?, need(p.beta, "beta")?);
                if raw.family == FamilyName::Ph1 {
                    Family::Ph1 { alpha, beta }
                } else {
                    Family::Ph2 { alpha, beta }
                }
            }
            FamilyName::C1 => {
                allow(&["kernel"])?;
                Family::C1 { kernel: kernel()? }
            }
            FamilyName::C2 => {
                allow(&["kernel"])?;
                Family::C2 { kernel: kernel()? }
            }
            FamilyName::C3 => {
                allow(&["alpha", "beta", "kernel"])?;
                Family::C3 {
                    alpha: need(p.alpha, "alpha")?,
                    beta: need(p.beta, "beta")?,
                    kernel: kernel()?,
                }
            }
        };
        let spec = LossSpec { family, d: raw.d };
        spec.check()?;
        Ok(spec)
    }
}

impl From<LossSpec> for RawLossSpec {
    fn from(spec: LossSpec) -> Self {
        let mut p = RawParams::default();
        let family = match spec.family {
            Family::QuadraticSystemic { alpha, linear } => {
                p.alpha = Some(alpha);
                p.linear = Some(linear);
                FamilyName::QuadraticSystemic
            }
            Family::ExpBivariate { alpha } => {
                p.alpha = Some(alpha);
                FamilyName::ExpBivariate
            }
            Family::Ph1 { alpha, beta } => {
                p.alpha = Some(alpha);
                p.beta = Some(beta);
                FamilyName::Ph1
            }
            Family::Ph2 { alpha, beta } => {
                p.alpha = Some(alpha);
                p.beta = Some(beta);
                FamilyName::Ph2
            }
            Family::C1 { kernel } => {
                p.kernel = Some(kernel);
                FamilyName::C1
            }
            Family::C2 { kernel } => {
                p.kernel = Some(kernel);
                FamilyName::C2
            }
            Family::C3 { alpha, beta, kernel } => {
                p.alpha = Some(alpha);
                p.beta = Some(beta);
                p.kernel = Some(kernel);
                FamilyName::C3
            }
        };
        RawLossSpec { family, d: spec.d, params: p }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_families(d: usize) -> Vec<LossSpec> {
        let mut v = vec![
            LossSpec::new(Family::QuadraticSystemic { alpha: 1.0, linear: true }, d).unwrap(),
            LossSpec::new(Family::QuadraticSystemic { alpha: 0.5, linear: false }, d).unwrap(),
            LossSpec::new(Family::Ph1 { alpha: 0.5, beta: 1.0 }, d).unwrap(),
            LossSpec::new(Family::Ph2 { alpha: 0.5, beta: 1.2 }, d).unwrap(),
        ];
        for kernel in [Kernel::PiecewiseLinear { beta: 0.4 }, Kernel::Quadratic, Kernel::Exponential] {
            v.push(LossSpec::new(Family::C1 { kernel }, d).unwrap());
            v.push(LossSpec::new(Family::C2 { kernel }, d).unwrap());
            v.push(LossSpec::new(Family::C3 { alpha: 0.3, beta: 0.7, kernel }, d).unwrap());
        }
        if d == 2 {
            v.push(LossSpec::exp_bivariate(1.0).unwrap());
        }
        v
    }

    #[test]
    fn documented_values() {
        let q = LossSpec::quadratic_systemic(1.0, 2).unwrap();
        assert_eq!(q.eval(&[0.0, 0.0]).unwrap(), -1.0);
        assert_eq!(q.eval(&[1.0, 1.0]).unwrap(), 3.0);
        let q0 = LossSpec::quadratic_systemic(0.0, 2).unwrap();
        assert_eq!(q0.grad(&[2.0, -3.0]).unwrap().as_slice(), &[3.0, 1.0]);
        assert_eq!(q.hess(&[1.0, 1.0]).unwrap(), DMatrix::from_element(2, 2, 1.0));
        let e = LossSpec::exp_bivariate(1.0).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let q = LossSpec::quadratic_systemic(1.0, 2).unwrap();
        assert!(matches!(q.eval(&[1.0]), Err(MsraError::DimensionMismatch { .. })));
    }

    #[test]
    fn hessian_unsupported_for_ph() {
        let p = LossSpec::new(Family::Ph1 { alpha: 0.5, beta: 1.0 }, 2).unwrap();
        assert!(matches!(p.hess(&[1.0, 1.0]), Err(MsraError::Unsupported(_))));
    }

    #[test]
    fn gradients_match_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for d in [1, 2, 3, 5] {
            for spec in all_families(d) {
                let mut worst: f64 = 0.0;
                let mut checked = 0;
                while checked < 100 {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let h = 1e-6;
                    let near_kink = spec.kinks().iter().any(|k| {
                        let a: f64 = k.normal.iter().zip(&x).map(|(a, b)| a * b).sum();
                        a.abs() < 10.0 * h * d as f64
                    });
                    if near_kink {
                        continue;
                    }
                    checked += 1;
                    let g = spec.grad(&x).unwrap();
                    for k in 0..d {
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[k] += h;
                        xm[k] -= h;
                        let fd = (spec.eval(&xp).unwrap() - spec.eval(&xm).unwrap()) / (2.0 * h);
                        worst = worst.max((fd - g[k]).abs());
                    }
                }
                assert!(worst < 1e-6, "{} d={d}: {worst}", spec.family_name());
            }
        }
    }

    #[test]
    fn hessians_match_gradient_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for spec in all_families(3).into_iter().filter(|s| s.has_hessian()) {
            for _ in 0..50 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                if x.iter().any(|v| v.abs() < 1e-4) || x.iter().sum::<f64>().abs() < 1e-4 {
                    continue;
                }
                let hm = spec.hess(&x).unwrap();
                for k in 0..3 {
                    let h = 1e-6;
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += h;
                    xm[k] -= h;
                    let fd = (spec.grad(&xp).unwrap() - spec.grad(&xm).unwrap()) / (2.0 * h);
                    for j in 0..3 {
                        assert!((fd[j] - hm[(j, k)]).abs() < 1e-5, "{}", spec.family_name());
                    }
                }
            }
        }
    }

    #[test]
    fn systemic_part_matches_alpha_derivative() {
        let x = [0.7, -0.2, 1.3];
        for spec in [
            LossSpec::new(Family::QuadraticSystemic { alpha: 0.4, linear: false }, 3).unwrap(),
            LossSpec::new(Family::C3 { alpha: 0.4, beta: 1.0, kernel: Kernel::Exponential }, 3).unwrap(),
        ] {
            let h = 1e-6;
            let up = spec.with_alpha(0.4 + h).unwrap().eval(&x).unwrap();
            let dn = spec.with_alpha(0.4 - h).unwrap().eval(&x).unwrap();
            let part = spec.systemic_part(&x, None).unwrap();
            assert!(((up - dn) / (2.0 * h) - part).abs() < 1e-8);
        }
    }

    #[test]
    fn json_round_trip_and_rejections() {
        let text = r#"{"family":"c3","d":3,"params":{"alpha":0.5,"beta":1.0,"kernel":{"type":"piecewise_linear","beta":0.25}}}"#;
        let spec: LossSpec = serde_json::from_str(text).unwrap();
        let back: LossSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, back);
        let q: LossSpec = serde_json::from_str(r#"{"family":"quadratic_systemic","d":2,"params":{"alpha":1}}"#).unwrap();
        assert_eq!(q, LossSpec::quadratic_systemic(1.0, 2).unwrap());
        for bad in [
            r#"{"family":"ph1","d":2,"params":{"alpha":0.5}}"#,
            r#"{"family":"ph1","d":2,"params":{"alpha":0.5,"beta":1,"kernel":{"type":"quadratic"}}}"#,
            r#"{"family":"ph1","d":2,"params":{"alpha":1.5,"beta":1}}"#,
            r#"{"family":"quadratic_systemic","d":2,"params":{"alpha":1.5}}"#,
            r#"{"family":"exp_bivariate","d":3,"params":{"alpha":1}}"#,
            r#"{"family":"c1","d":2,"params":{"kernel":{"type":"quadratic"}},"extra":1}"#,
            r#"{"family":"nope","d":2}"#,
        ] {
            assert!(serde_json::from_str::<LossSpec>(bad).is_err(), "{bad}");
        }
    }
}
