use serde::{Deserialize, Serialize};

/// One-dimensional building block `h` for the C1/C2/C3 families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    /// `h(x) = x⁺ - β x⁻` with `0 <= β < 1`.
    PiecewiseLinear { beta: f64 },
    /// `h(x) = x + (x⁺)²/2`.
    Quadratic,
    /// `h(x) = eˣ - 1`.
    Exponential,
}

impl Kernel {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Kernel::PiecewiseLinear { beta } => {
                if x >= 0.0 {
                    x
                } else {
                    beta * x
                }
            }
            Kernel::Quadratic => {
                let p = x.max(0.0);
                x + 0.5 * p * p
            }
            Kernel::Exponential => x.exp_m1(),
        }
    }

    /// Right derivative.
    pub fn d1(&self, x: f64) -> f64 {
        match *self {
            Kernel::PiecewiseLinear { beta } => {
                if x >= 0.0 {
                    1.0
                } else {
                    beta
                }
            }
            Kernel::Quadratic => 1.0 + x.max(0.0),
            Kernel::Exponential => x.exp(),
        }
    }

    /// Second derivative, almost everywhere.
    pub fn d2(&self, x: f64) -> f64 {
        match *self {
            Kernel::PiecewiseLinear { .. } => 0.0,
            Kernel::Quadratic => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Exponential => x.exp(),
        }
    }

    /// Jump of `h'` at 0, if `h` has a kink there.
    pub fn slope_jump(&self) -> Option<f64> {
        match *self {
            Kernel::PiecewiseLinear { beta } => Some(1.0 - beta),
            Kernel::Quadratic => Some(0.0),
            Kernel::Exponential => None,
        }
    }

    pub fn has_hessian(&self) -> bool {
        !matches!(self, Kernel::PiecewiseLinear { .. })
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Kernel::PiecewiseLinear { beta } if !(0.0..1.0).contains(&beta) => {
                Err(format!("piecewise_linear kernel needs 0 <= beta < 1, got {beta}"))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        let kernels = [
            Kernel::PiecewiseLinear { beta: 0.3 },
            Kernel::Quadratic,
            Kernel::Exponential,
        ];
        for k in kernels {
            for &x in &[-1.3, -0.2, 0.4, 2.0] {
                let h = 1e-6;
                let fd = (k.value(x + h) - k.value(x - h)) / (2.0 * h);
                assert!((fd - k.d1(x)).abs() < 1e-6);
                let fd2 = (k.d1(x + h) - k.d1(x - h)) / (2.0 * h);
                assert!((fd2 - k.d2(x)).abs() < 1e-5);
            }
            assert!(k.value(-5.0) < 0.0);
        }
    }
}
