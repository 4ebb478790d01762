use super::{flat_directions, inf_norm, kkt_jacobian, pseudo_solve, residual_tolerances, within, Outcome, SolverOptions};
use crate::estimators::ConstraintModel;
use crate::error::{MsraError, Result};
use nalgebra::DVector;

fn residual(model: &dyn ConstraintModel, m: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let est = model.estimate(m, false)?;
    let mut r: Vec<f64> = est.grad.iter().map(|g| -lambda * g - 1.0).collect();
    r.push(est.value);
    Ok((r, est.value_se))
}

fn merit(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Damped Newton on the first-order system with a backtracking line search
/// on `½‖F‖²`. Steps use the SVD pseudo-inverse, so zero-sum directions
/// without curvature receive no update; the final iterate is then moved
/// to the minimum-norm point along them.
///
/// Sample averages of kinked losses have no exact root; when progress
/// stalls at a residual within `10·granularity` the iterate is accepted.
pub(super) fn solve(model: &dyn ConstraintModel, mut m: Vec<f64>, mut lambda: f64, opts: &SolverOptions) -> Result<Outcome> {
    let d = model.dim();
    let floor = 10.0 * model.granularity();
    let mut last_res = f64::INFINITY;
    let mut extra = 0;
    let mut slow = 0;
    for it in 0..opts.max_iter {
        let est = model.estimate(&m, false)?;
        let hess = model.smoothed_hessian(&m)?;
        let g = est.mean_loss_gradient();
        let mut f: Vec<f64> = g.iter().map(|gk| lambda * gk - 1.0).collect();
        f.push(est.value);
        let res = inf_norm(&f);
        let tols = residual_tolerances(model, &m, lambda, est.value_se, opts)?;
        log::debug!("newton {it}: residual {res:.3e} lambda {lambda} m {m:?}");
        if within(&f, &tols, 0.0) {
            // a few more steps while they still pay off
            if extra >= 3 || res > 0.1 * last_res || res <= 1e-15 {
                return finalize(model, m, lambda, it, &tols, 0.0, &hess);
            }
            extra += 1;
        }
        slow = if res > 0.9 * last_res { slow + 1 } else { 0 };
        if slow >= 5 && within(&f, &tols, floor) {
            return finalize(model, m, lambda, it, &tols, floor, &hess);
        }
        last_res = res;
        let j = kkt_jacobian(&hess, &g, lambda);
        let step = pseudo_solve(&j, &-DVector::from_vec(f.clone()));
        if step.iter().any(|s| !s.is_finite()) {
            return Err(MsraError::SingularSystem { condition: f64::INFINITY });
        }
        let dl = step[d];
        let mut alpha = if dl < 0.0 { (0.95 * lambda / -dl).min(1.0) } else { 1.0 };
        let phi0 = merit(&f);
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = (0..d).map(|k| m[k] + alpha * step[k]).collect();
            let lt = lambda + alpha * dl;
            let (r, _) = residual(model, &trial, lt)?;
            if merit(&r) <= (1.0 - 1e-4 * alpha) * phi0 {
                m = trial;
                lambda = lt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            if within(&f, &tols, floor) {
                return finalize(model, m, lambda, it, &tols, floor, &hess);
            }
            return Err(MsraError::NonConvergence {
                iterations: it,
                residual: res,
                last_iterate: m,
            });
        }
    }
    let (r, _) = residual(model, &m, lambda)?;
    Err(MsraError::NonConvergence {
        iterations: opts.max_iter,
        residual: inf_norm(&r),
        last_iterate: m,
    })
}

fn finalize(
    model: &dyn ConstraintModel,
    m: Vec<f64>,
    lambda: f64,
    iterations: usize,
    tols: &[f64],
    floor: f64,
    hess: &nalgebra::DMatrix<f64>,
) -> Result<Outcome> {
    let tol = tols[tols.len() - 1].max(floor);
    let flat = flat_directions(hess);
    if flat.is_empty() {
        return Ok(Outcome { m, lambda, iterations, tol, flat: false });
    }
    let mut p = DVector::from_vec(m.clone());
    for u in &flat {
        p -= u * u.dot(&p);
    }
    let projected: Vec<f64> = p.iter().copied().collect();
    let (r, _) = residual(model, &projected, lambda)?;
    let m = if within(&r, tols, floor) { projected } else { m };
    Ok(Outcome { m, lambda, iterations, tol, flat: true })
}
