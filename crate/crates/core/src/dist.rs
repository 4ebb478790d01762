//! Univariate distribution functions used by the scenario generators and
//! the quadrature oracle.
//!
//! `erfc` comes from `libm`; the inverse error function and the regularized
//! incomplete beta and gamma functions come from `statrs`. Inverses are polished with a bracketed Newton iteration so
//! that `cdf(quantile(p))` matches `p` to about 1e-15 in absolute terms.

use statrs::function::{beta, erf, gamma};
use std::f64::consts::{PI, SQRT_2};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal quantile, `p` in (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let mut x = -SQRT_2 * erf::erfc_inv(2.0 * p);
    // one Halley step on the tail that carries the relative precision
    let (err, dens) = if x <= 0.0 {
        (normal_cdf(x) - p, normal_pdf(x))
    } else {
        ((1.0 - p) - normal_cdf(-x), normal_pdf(x))
    };
    if dens > 0.0 && err.is_finite() {
        let u = err / dens;
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

fn ln_student_norm(nu: f64) -> f64 {
    gamma::ln_gamma(0.5 * (nu + 1.0)) - gamma::ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
}

pub fn student_t_pdf(t: f64, nu: f64) -> f64 {
    (ln_student_norm(nu) - 0.5 * (nu + 1.0) * (t * t / nu).ln_1p()).exp()
}

/// Student-t CDF through the regularized incomplete beta function.
pub fn student_t_cdf(t: f64, nu: f64) -> f64 {
    if t == 0.0 {
        return 0.5;
    }
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let t2 = t * t;
    // probability mass of (-|t|, |t|) complement on one side
    let tail = if t2 < nu {
        0.5 - 0.5 * beta::beta_reg(0.5, 0.5 * nu, t2 / (nu + t2))
    } else {
        0.5 * beta::beta_reg(0.5 * nu, 0.5, nu / (nu + t2))
    };
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Student-t quantile, `p` in (0, 1).
pub fn student_t_quantile(p: f64, nu: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    if p == 0.5 {
        return 0.0;
    }
    // work on the lower tail, where p carries full relative precision
    let (q, sign) = if p < 0.5 { (p, -1.0) } else { (1.0 - p, 1.0) };
    let lower_tail = |t: f64| student_t_cdf(-t, nu);
    // lower_tail is decreasing in t >= 0; find t with lower_tail(t) = q
    let mut hi = 1.0;
    while lower_tail(hi) > q {
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    let mut lo = 0.0;
    let mut t = 0.5 * hi;
    for _ in 0..200 {
        let f = lower_tail(t) - q;
        if f > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        // d/dt lower_tail = -pdf
        let dens = student_t_pdf(t, nu);
        let mut next = if dens > 0.0 { t + f / dens } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-15 * next.abs().max(1e-300) {
            t = next;
            break;
        }
        t = next;
    }
    sign * t
}

/// Chi-square quantile with `nu > 0` degrees of freedom (Gamma(nu/2, 2)).
pub fn chi_square_quantile(p: f64, nu: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let a = 0.5 * nu;
    let cdf = |x: f64| gamma::gamma_lr(a, 0.5 * x);
    let ln_norm = -gamma::ln_gamma(a) - a * 2f64.ln();
    let pdf = |x: f64| {
        if x <= 0.0 {
            0.0
        } else {
            (ln_norm + (a - 1.0) * x.ln() - 0.5 * x).exp()
        }
    };
    let mut hi = nu.max(1.0);
    while cdf(hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    let mut x = 0.5 * hi;
    for _ in 0..200 {
        let f = cdf(x) - p;
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = pdf(x);
        let mut next = if dens > 0.0 { x - f / dens } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * next.abs().max(1e-300) {
            x = next;
            break;
        }
        x = next;
    }
    x
}
