use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub p: DVector<f64>,
    /// Multiplier of the linear inequality (zero when inactive).
    pub mu: f64,
    pub active_bounds: Vec<usize>,
}

/// `min cᵀp + ½pᵀBp` subject to `aᵀp <= b` and `p >= lower`, for `B`
/// symmetric positive definite, by a small active-set iteration.
pub fn solve_qp(b_mat: &DMatrix<f64>, c: &[f64], a: &[f64], b: f64, lower: Option<&[f64]>) -> QpSolution {
    let d = c.len();
    let mut bound = vec![false; d];
    let mut active = false;
    let eps = 1e-12;
    let mut best = None;
    for _ in 0..(20 * (d + 1) + 50) {
        let (p, mu) = equality_qp(b_mat, c, a, b, &bound, active, lower);
        let sol = QpSolution {
            p: p.clone(),
            mu,
            active_bounds: (0..d).filter(|&i| bound[i]).collect(),
        };
        best = Some(sol.clone());
        if let Some(l) = lower {
            let worst = (0..d)
                .filter(|&i| !bound[i] && p[i] < l[i] - eps * (1.0 + l[i].abs()))
                .max_by(|&i, &j| (l[i] - p[i]).total_cmp(&(l[j] - p[j])));
            if let Some(i) = worst {
                bound[i] = true;
                continue;
            }
        }
        let ap: f64 = p.iter().zip(a).map(|(x, y)| x * y).sum();
        if !active && ap > b + eps * (1.0 + b.abs()) {
            active = true;
            continue;
        }
        if active && mu < 0.0 {
            active = false;
            continue;
        }
        let grad = b_mat * &p + DVector::from_column_slice(c) + DVector::from_column_slice(a) * mu;
        let drop = (0..d)
            .filter(|&i| bound[i] && grad[i] < -eps * (1.0 + grad.amax()))
            .min_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        if let Some(i) = drop {
            bound[i] = false;
            continue;
        }
        return sol;
    }
    best.expect("at least one iteration")
}

fn equality_qp(
    b_mat: &DMatrix<f64>,
    c: &[f64],
    a: &[f64],
    b: f64,
    bound: &[bool],
    active: bool,
    lower: Option<&[f64]>,
) -> (DVector<f64>, f64) {
    let d = c.len();
    let free: Vec<usize> = (0..d).filter(|&i| !bound[i]).collect();
    let mut p = DVector::zeros(d);
    if let Some(l) = lower {
        for i in 0..d {
            if bound[i] {
                p[i] = l[i];
            }
        }
    }
    let nf = free.len();
    let size = nf + usize::from(active);
    if size == 0 {
        return (p, 0.0);
    }
    let mut k = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    for (r, &i) in free.iter().enumerate() {
        for (s, &j) in free.iter().enumerate() {
            k[(r, s)] = b_mat[(i, j)];
        }
        let fixed: f64 = (0..d).filter(|&j| bound[j]).map(|j| b_mat[(i, j)] * p[j]).sum();
        rhs[r] = -c[i] - fixed;
    }
    if active {
        for (r, &i) in free.iter().enumerate() {
            k[(r, nf)] = a[i];
            k[(nf, r)] = a[i];
        }
        rhs[nf] = b - (0..d).filter(|&j| bound[j]).map(|j| a[j] * p[j]).sum::<f64>();
    }
    let x = match k.clone().lu().solve(&rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) => x,
        _ => super::pseudo_solve(&k, &rhs),
    };
    for (r, &i) in free.iter().enumerate() {
        p[i] = x[r];
    }
    (p, if active { x[nf] } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constraint_active() {
        // the unconstrained optimum (-1, -1) satisfies -p1 - p2 <= 3
        let b = DMatrix::identity(2, 2);
        let s = solve_qp(&b, &[1.0, 1.0], &[-1.0, -1.0], 3.0, None);
        assert!((s.p[0] + 1.0).abs() < 1e-14 && s.mu == 0.0);
        // with -p1 - p2 <= 0.5 the constraint binds at p = (-¼, -¼), μ = ¾
        let s = solve_qp(&b, &[1.0, 1.0], &[-1.0, -1.0], 0.5, None);
        assert!((s.p[0] + 0.25).abs() < 1e-14 && (s.mu - 0.75).abs() < 1e-14);
    }

    #[test]
    fn bounds_enter_and_leave() {
        let b = DMatrix::identity(2, 2);
        let s = solve_qp(&b, &[1.0, 1.0], &[-1.0, -1.0], 0.5, Some(&[-0.1, -10.0]));
        assert_eq!(s.active_bounds, vec![0]);
        assert!((s.p[0] + 0.1).abs() < 1e-14 && (s.p[1] + 0.4).abs() < 1e-14);
        assert!((s.mu - 0.6).abs() < 1e-14);
    }
}
