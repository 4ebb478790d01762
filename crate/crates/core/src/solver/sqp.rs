use super::{default_tol, inf_norm, qp::solve_qp, residual_tolerances, within, Outcome, SolverOptions};
use crate::estimators::ConstraintModel;
use crate::error::{MsraError, Result};
use nalgebra::DMatrix;

const PROXIMAL: f64 = 1e-10;

fn shifted(m: &[f64], t: f64) -> Vec<f64> {
    m.iter().map(|v| v + t).collect()
}

/// Moves `m` along `1` onto `{E[ℓ(X - m)] = 0}`, or onto the lower bounds
/// when the constraint is slack there.
fn restore(model: &dyn ConstraintModel, m: &[f64], lower: Option<&[f64]>, scale: f64) -> Result<Vec<f64>> {
    let t_min = lower.map_or(f64::NEG_INFINITY, |l| {
        l.iter().zip(m).map(|(l, v)| l - v).fold(f64::NEG_INFINITY, f64::max)
    });
    let start = if t_min > 0.0 { t_min } else { 0.0 };
    let h = |t: f64| -> Result<f64> { Ok(model.estimate(&shifted(m, t), false)?.value) };
    let h0 = h(start)?;
    if h0 == 0.0 {
        return Ok(shifted(m, start));
    }
    let limit = 1e6 * (1.0 + scale);
    let (mut a, mut fa, mut b, mut fb);
    if h0 > 0.0 {
        a = start;
        fa = h0;
        let mut step = scale;
        loop {
            let t = start + step;
            let ft = h(t)?;
            if ft <= 0.0 {
                b = t;
                fb = ft;
                break;
            }
            a = t;
            fa = ft;
            step *= 2.0;
            if step > limit {
                return Err(MsraError::Unbounded {
                    bound: limit,
                    message: "the expected loss stays positive under every probed uniform allocation".into(),
                });
            }
        }
    } else {
        b = start;
        fb = h0;
        let mut step = scale;
        loop {
            let t = (start - step).max(t_min);
            let ft = h(t)?;
            if ft >= 0.0 {
                a = t;
                fa = ft;
                break;
            }
            if t == t_min {
                return Ok(shifted(m, t));
            }
            b = t;
            fb = ft;
            step *= 2.0;
            if step > limit {
                return Err(MsraError::Unbounded {
                    bound: -limit,
                    message: "the expected loss stays negative for arbitrarily small allocations".into(),
                });
            }
        }
    }
    if fa == 0.0 {
        return Ok(shifted(m, a));
    }
    // Illinois false position; fa > 0 > fb
    let mut side = 0;
    for _ in 0..200 {
        let c = b - fb * (b - a) / (fb - fa);
        let c = if c > a.min(b) && c < a.max(b) { c } else { 0.5 * (a + b) };
        let fc = h(c)?;
        if fc == 0.0 || (b - a).abs() <= 4.0 * f64::EPSILON * (1.0 + c.abs()) {
            return Ok(shifted(m, c));
        }
        if fc > 0.0 {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        } else {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        }
    }
    Ok(shifted(m, if fa.abs() < fb.abs() { a } else { b }))
}

/// Feasible SQP: each quadratic model step is pulled back onto the
/// constraint along `1`, and accepted when the total allocation does not
/// increase. The curvature model is `λ·H + 1e-10·I`, with `H` the
/// (smoothed) Hessian of the constraint.
pub(super) fn solve(model: &dyn ConstraintModel, m0: Vec<f64>, lambda0: f64, opts: &SolverOptions) -> Result<Outcome> {
    let d = model.dim();
    let lower = opts.lower_bounds.as_deref();
    let scale = ((0..d).map(|k| model.marginal_scale(k)).sum::<f64>() / d as f64).max(1e-3);
    let mut m = restore(model, &m0, lower, scale)?;
    let mut lambda = lambda0;
    let floor = 10.0 * model.granularity();
    let mut last_res = f64::INFINITY;
    let mut slow = 0;
    for it in 0..opts.max_iter {
        let est = model.estimate(&m, false)?;
        let tol = opts.tol.unwrap_or_else(|| default_tol(est.value_se));
        let g = est.mean_loss_gradient();
        let gg: f64 = g.iter().map(|v| v * v).sum();
        let free_bounds = lower.map_or(true, |l| m.iter().zip(l).all(|(v, l)| v > l));
        if free_bounds && gg > 0.0 {
            let lam_ls = g.iter().sum::<f64>() / gg;
            let mut r: Vec<f64> = g.iter().map(|gk| lam_ls * gk - 1.0).collect();
            r.push(est.value);
            let tols = residual_tolerances(model, &m, lam_ls, est.value_se, opts)?;
            if within(&r, &tols, 0.0) {
                return Ok(Outcome { m, lambda: lam_ls, iterations: it, tol, flat: false });
            }
            // same stall rule as the Newton path
            let res = inf_norm(&r);
            slow = if res > 0.9 * last_res { slow + 1 } else { 0 };
            last_res = res;
            if slow >= 5 && within(&r, &tols, floor) {
                return Ok(Outcome { m, lambda: lam_ls, iterations: it, tol: tol.max(floor), flat: false });
            }
        }
        let h = model.smoothed_hessian(&m)?;
        let b_mat = h * lambda + DMatrix::identity(d, d) * PROXIMAL;
        let rel_lower: Option<Vec<f64>> = lower.map(|l| l.iter().zip(&m).map(|(l, v)| l - v).collect());
        let qp = solve_qp(&b_mat, &vec![1.0; d], &est.grad, -est.value, rel_lower.as_deref());
        if qp.mu > 0.0 {
            lambda = qp.mu;
        }
        let p: Vec<f64> = qp.p.iter().copied().collect();
        let size = 1.0 + inf_norm(&m);
        if inf_norm(&p) <= 1e-12 * size {
            return Ok(done(model, m, lambda, it, tol, lower)?);
        }
        let obj: f64 = m.iter().sum();
        let mut s = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let trial: Vec<f64> = m.iter().zip(&p).map(|(v, q)| v + s * q).collect();
            let trial = restore(model, &trial, lower, scale)?;
            if trial.iter().sum::<f64>() <= obj + 1e-14 * (1.0 + obj.abs()) {
                next = Some(trial);
                break;
            }
            s *= 0.5;
        }
        match next {
            Some(trial) => {
                let moved = trial.iter().zip(&m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                m = trial;
                if moved <= 1e-12 * size {
                    return Ok(done(model, m, lambda, it + 1, tol, lower)?);
                }
            }
            None => return Ok(done(model, m, lambda, it, tol, lower)?),
        }
    }
    let est = model.estimate(&m, false)?;
    Err(MsraError::NonConvergence {
        iterations: opts.max_iter,
        residual: est.value.abs(),
        last_iterate: m,
    })
}

fn done(model: &dyn ConstraintModel, m: Vec<f64>, lambda: f64, iterations: usize, tol: f64, lower: Option<&[f64]>) -> Result<Outcome> {
    let at_bound = lower.is_some_and(|l| m.iter().zip(l).any(|(v, l)| v <= l));
    let lambda = if at_bound {
        lambda
    } else {
        let g = model.estimate(&m, false)?.mean_loss_gradient();
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg > 0.0 {
            g.iter().sum::<f64>() / gg
        } else {
            lambda
        }
    };
    Ok(Outcome { m, lambda, iterations, tol, flat: false })
}
