//! Seeded randomized identity testing.
//!
//! Equality between expressions is decided by sampling a box in variable
//! space and comparing values; quotients and powers make canonical forms
//! expensive, and sampling is what the verification layers need anyway.

use super::{env_to_string, ChartSpec, ExprError, SymExpr};
use crate::scalar::{CNum, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_EQ_TOL: f64 = 1e-9;

/// Axis-aligned sampling box: one `(name, lo, hi)` range per variable. The
/// caller is responsible for keeping the box away from registered singular
/// sets (poles of quotients, zeta = 0, ...).
#[derive(Debug, Clone)]
pub struct SampleBox<T: Scalar> {
    pub ranges: Vec<(String, T, T)>,
}

impl<T: Scalar> SampleBox<T> {
    pub fn new(ranges: &[(&str, f64, f64)]) -> Self {
        Self {
            ranges: ranges
                .iter()
                .map(|(n, lo, hi)| (n.to_string(), T::from_f(*lo), T::from_f(*hi)))
                .collect(),
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.ranges.iter().map(|(n, _, _)| n.as_str()).collect()
    }
}

/// Base variables in [-1, 1], fiber variables in [0.5, 2] (kept off the zero
/// section so fiber quotients stay finite).
pub fn default_box_for<T: Scalar>(chart: &ChartSpec) -> SampleBox<T> {
    let mut ranges = Vec::new();
    for b in &chart.base {
        ranges.push((b.clone(), T::from_f(-1.0), T::from_f(1.0)));
    }
    for f in &chart.fiber {
        ranges.push((f.clone(), T::from_f(0.5), T::from_f(2.0)));
    }
    for (name, lo, _hi) in ranges.iter_mut() {
        if chart.positive.iter().any(|p| p == name) && *lo < T::zero() {
            *lo = T::from_f(0.25);
        }
    }
    SampleBox { ranges }
}

/// Deterministic sample points for a box under a fixed seed.
pub fn sample_points<T: Scalar>(bounds: &SampleBox<T>, n: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            bounds
                .ranges
                .iter()
                .map(|(_, lo, hi)| {
                    let t = T::from_f(rng.gen::<f64>());
                    *lo + (*hi - *lo) * t
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SampleReport<T: Scalar> {
    pub equal: bool,
    pub max_residual: T,
    pub tolerance: T,
    pub worst_point: String,
}

/// Compare two expressions on `n` seeded samples. The residual is
/// `|a - b| / (1 + max(|a|, |b|))`, so it reads as a relative error for large
/// values and an absolute one near zero.
pub fn equal_on_samples<T: Scalar>(
    a: &SymExpr<T>,
    b: &SymExpr<T>,
    bounds: &SampleBox<T>,
    n: usize,
    seed: u64,
) -> Result<SampleReport<T>, ExprError> {
    equal_on_samples_tol(a, b, bounds, n, seed, T::from_f(DEFAULT_EQ_TOL))
}

pub fn equal_on_samples_tol<T: Scalar>(
    a: &SymExpr<T>,
    b: &SymExpr<T>,
    bounds: &SampleBox<T>,
    n: usize,
    seed: u64,
    tolerance: T,
) -> Result<SampleReport<T>, ExprError> {
    let points = sample_points(bounds, n, seed);
    let names = bounds.names();
    let mut max_residual = T::zero();
    let mut worst_point = String::from("(none)");
    let mut env: Vec<(&str, CNum<T>)> = Vec::with_capacity(names.len());
    for point in &points {
        env.clear();
        for (name, v) in names.iter().zip(point) {
            env.push((name, CNum::new(*v, T::zero())));
        }
        let va = a.eval(&env)?;
        let vb = b.eval(&env)?;
        if !(va.re.is_finite() && va.im.is_finite() && vb.re.is_finite() && vb.im.is_finite()) {
            return Err(ExprError::EvalFailure {
                point: env_to_string(&env),
                reason: "non-finite value".into(),
            });
        }
        let resid = (va - vb).norm() / (T::one() + va.norm().max(vb.norm()));
        if resid > max_residual {
            max_residual = resid;
            worst_point = env_to_string(&env);
        }
    }
    Ok(SampleReport {
        equal: max_residual < tolerance,
        max_residual,
        tolerance,
        worst_point,
    })
}
