//! Numerical checks of the loss-function axioms: monotonicity, convexity
//! with a negative infimum, the linear lower bound, permutation invariance,
//! and a probe for zero-sum directions along which the loss stays bounded.

use super::LossSpec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const PROBE_RADIUS: f64 = 1e6;
pub const PROBE_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Uniqueness {
    Unique,
    SuspectNonunique,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecessionProbe {
    pub radius: f64,
    pub threshold: f64,
    pub directions_probed: usize,
    /// Zero-sum unit directions along which the growth slope stayed below
    /// the threshold.
    pub bounded_directions: Vec<Vec<f64>>,
    pub min_slope: f64,
}

impl RecessionProbe {
    pub fn bounded(&self) -> bool {
        !self.bounded_directions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub family: String,
    pub d: usize,
    pub samples: usize,
    pub seed: u64,
    pub monotone: bool,
    pub convex: bool,
    pub negative_infimum: bool,
    pub lower_bound_constant: Option<f64>,
    pub lower_bound: Option<bool>,
    pub permutation_invariant: bool,
    pub positively_homogeneous: Option<bool>,
    pub recession: RecessionProbe,
    pub uniqueness: Uniqueness,
    pub passed: bool,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

fn random_point(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_zero_sum_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let mut u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = u.iter().sum::<f64>() / d as f64;
        u.iter_mut().for_each(|v| *v -= mean);
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-3 {
            u.iter_mut().for_each(|v| *v /= norm);
            return u;
        }
    }
}

/// Growth slope `[ℓ(x + r u) - ℓ(x)] / r` along zero-sum unit directions
/// `±u`: all pairwise contrasts `(e_i - e_j)/√2` plus `random_directions`
/// random ones, from the origin and a few random base points.
pub fn recession_probe(spec: &LossSpec, random_directions: usize, seed: u64) -> RecessionProbe {
    let d = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_ec);
    let mut dirs = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            let mut u = vec![0.0; d];
            u[i] = std::f64::consts::FRAC_1_SQRT_2;
            u[j] = -std::f64::consts::FRAC_1_SQRT_2;
            dirs.push(u);
        }
    }
    if d > 1 {
        for _ in 0..random_directions {
            dirs.push(random_zero_sum_unit(&mut rng, d));
        }
    }
    let mut bases = vec![vec![0.0; d]];
    for _ in 0..3 {
        bases.push(random_point(&mut rng, d, 1.0));
    }
    let mut bounded = Vec::new();
    let mut min_slope = f64::INFINITY;
    let mut probed = 0;
    for u in &dirs {
        for sign in [1.0, -1.0] {
            probed += 1;
            let mut worst = f64::INFINITY;
            for x in &bases {
                let moved: Vec<f64> = x.iter().zip(u).map(|(a, b)| a + sign * PROBE_RADIUS * b).collect();
                let slope = (spec.evaluate(&moved, None, None) - spec.evaluate(x, None, None)) / PROBE_RADIUS;
                let slope = if slope.is_nan() { f64::INFINITY } else { slope };
                worst = worst.min(slope);
            }
            min_slope = min_slope.min(worst);
            if worst <= PROBE_THRESHOLD {
                bounded.push(u.iter().map(|v| sign * v).collect());
            }
        }
    }
    RecessionProbe {
        radius: PROBE_RADIUS,
        threshold: PROBE_THRESHOLD,
        directions_probed: probed,
        bounded_directions: bounded,
        min_slope,
    }
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    if d == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(d - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, d - 1);
            out.push(q);
        }
    }
    out
}

/// Checks the loss axioms on `sample_count` random points (and pairs).
/// Never fails; the report carries one flag per property.
pub fn validate_loss(spec: &LossSpec, sample_count: usize, seed: u64) -> ValidationReport {
    let d = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = |x: &[f64]| spec.evaluate(x, None, None);

    let mut monotone = true;
    let mut convex = true;
    let mut lower_ok = true;
    let mut perm_ok = true;
    let mut ph_ok = true;
    let c = spec.lower_bound_constant();
    let perms = if d <= 4 { Some(permutations(d)) } else { None };

    for _ in 0..sample_count {
        let x = random_point(&mut rng, d, 2.0);
        let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(0.0..1.0)).collect();
        let fx = f(&x);
        if fx > f(&y) + 1e-12 * (1.0 + fx.abs()) {
            monotone = false;
        }
        let z = random_point(&mut rng, d, 2.0);
        let fz = f(&z);
        for lam in [0.25, 0.5, 0.75] {
            let mid: Vec<f64> = x.iter().zip(&z).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
            let rhs = lam * fx + (1.0 - lam) * fz;
            if f(&mid) > rhs + 1e-12 * (1.0 + rhs.abs()) {
                convex = false;
            }
        }
        if let Some(c) = c {
            let wide = random_point(&mut rng, d, 50.0);
            let sum: f64 = wide.iter().sum();
            if f(&wide) < sum - c - 1e-12 * (1.0 + sum.abs()) {
                lower_ok = false;
            }
        }
        let permuted: Vec<Vec<usize>> = match &perms {
            Some(all) => all.clone(),
            None => {
                let mut p: Vec<usize> = (0..d).collect();
                p.shuffle(&mut rng);
                vec![p]
            }
        };
        for p in permuted {
            let xp: Vec<f64> = p.iter().map(|&i| x[i]).collect();
            if !close(f(&xp), fx) {
                perm_ok = false;
            }
        }
        if spec.is_positively_homogeneous() {
            let lam = rng.random_range(0.0..10.0) + 1e-9;
            let xs: Vec<f64> = x.iter().map(|v| lam * v).collect();
            if !close(f(&xs), lam * fx) {
                ph_ok = false;
            }
        }
    }
    let negative_infimum = f(&vec![-100.0; d]) < 0.0;
    let recession = recession_probe(spec, 16, seed);
    let uniqueness = if recession.bounded() {
        Uniqueness::SuspectNonunique
    } else {
        Uniqueness::Unique
    };
    let lower_bound = c.map(|_| lower_ok);
    let passed = monotone && convex && negative_infimum && lower_bound.unwrap_or(true) && perm_ok;
    ValidationReport {
        family: spec.family_name().to_string(),
        d,
        samples: sample_count,
        seed,
        monotone,
        convex,
        negative_infimum,
        lower_bound_constant: c,
        lower_bound,
        permutation_invariant: perm_ok,
        positively_homogeneous: spec.is_positively_homogeneous().then_some(ph_ok),
        recession,
        uniqueness,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{Family, Kernel};

    #[test]
    fn quadratic_systemic_passes() {
        let r = validate_loss(&LossSpec::quadratic_systemic(1.0, 2).unwrap(), 2000, 1);
        assert!(r.passed && r.monotone && r.convex && r.permutation_invariant);
        assert_eq!(r.lower_bound, Some(true));
        assert_eq!(r.uniqueness, Uniqueness::Unique);
    }

    #[test]
    fn sum_kernel_has_bounded_zero_sum_direction() {
        let spec = LossSpec::new(Family::C1 { kernel: Kernel::Exponential }, 2).unwrap();
        let r = validate_loss(&spec, 500, 2);
        assert_eq!(r.uniqueness, Uniqueness::SuspectNonunique);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!(r.recession.bounded_directions.iter().any(|u| (u[0] - s).abs() < 1e-15 && (u[1] + s).abs() < 1e-15));
    }

    #[test]
    fn separable_strictly_convex_is_unique() {
        for kernel in [Kernel::Exponential, Kernel::Quadratic] {
            let spec = LossSpec::new(Family::C2 { kernel }, 3).unwrap();
            let r = validate_loss(&spec, 500, 3);
            assert_eq!(r.uniqueness, Uniqueness::Unique);
            assert!(r.passed);
        }
    }

    #[test]
    fn positive_homogeneity_checked() {
        let spec = LossSpec::new(Family::Ph2 { alpha: 0.5, beta: 1.0 }, 3).unwrap();
        let r = validate_loss(&spec, 500, 4);
        assert_eq!(r.positively_homogeneous, Some(true));
        assert_eq!(r.uniqueness, Uniqueness::Unique);
    }

    #[test]
    fn permutations_enumerated() {
        assert_eq!(permutations(4).len(), 24);
    }
}
