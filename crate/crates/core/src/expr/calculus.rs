//! Differentiation, substitution and the Hamilton/Poisson calculus.

use super::sample::{default_box_for, sample_points};
use super::{ChartSpec, ExprError, Node, SymExpr, VectorFieldSym};
use crate::scalar::{CNum, Scalar};
use std::sync::Arc;

/// Partial derivative with respect to the named variable. Standard rules;
/// special functions contribute their registered derivative expressions.
pub fn differentiate<T: Scalar>(e: &SymExpr<T>, var: &str) -> SymExpr<T> {
    match &*e.0 {
        Node::Const(_) => SymExpr::zero(),
        Node::Var(name) => {
            if &**name == var {
                SymExpr::one()
            } else {
                SymExpr::zero()
            }
        }
        Node::Sum(terms) => SymExpr::sum(terms.iter().map(|t| differentiate(t, var))),
        Node::Prod(factors) => SymExpr::sum(factors.iter().enumerate().map(|(i, f)| {
            let df = differentiate(f, var);
            if df.is_zero() {
                return SymExpr::zero();
            }
            let mut parts: Vec<SymExpr<T>> = Vec::with_capacity(factors.len());
            for (j, g) in factors.iter().enumerate() {
                parts.push(if i == j { df.clone() } else { g.clone() });
            }
            SymExpr::product(parts)
        })),
        Node::Quot(a, b) => {
            let da = differentiate(a, var);
            let db = differentiate(b, var);
            if db.is_zero() {
                return SymExpr::div(&da, b);
            }
            let num = &SymExpr::mul(&da, b) - &SymExpr::mul(a, &db);
            SymExpr::div(&num, &SymExpr::powi(b, 2))
        }
        Node::Pow(base, exponent) => {
            let db = differentiate(base, var);
            let de = differentiate(exponent, var);
            if de.is_zero() {
                // d(a^c) = c a^(c-1) a'
                let cm1 = &SymExpr::sub(exponent, &SymExpr::one());
                let term = SymExpr::product([
                    exponent.clone(),
                    SymExpr::pow(base, cm1),
                    db,
                ]);
                return term;
            }
            // General case via a^b (b' log a + b a'/a).
            let log_term = SymExpr::mul(&de, &super::special::log(base));
            let ratio = SymExpr::div(&SymExpr::mul(exponent, &db), base);
            SymExpr::mul(e, &SymExpr::add(&log_term, &ratio))
        }
        Node::Func(f, args) => SymExpr::sum(args.iter().enumerate().map(|(k, a)| {
            let da = differentiate(a, var);
            if da.is_zero() {
                SymExpr::zero()
            } else {
                SymExpr::mul(&f.partial(args, k), &da)
            }
        })),
    }
}

/// Replace variables by expressions (simultaneous substitution).
pub fn substitute<T: Scalar>(e: &SymExpr<T>, map: &[(&str, SymExpr<T>)]) -> SymExpr<T> {
    match &*e.0 {
        Node::Const(_) => e.clone(),
        Node::Var(name) => map
            .iter()
            .find(|(n, _)| *n == &**name)
            .map(|(_, r)| r.clone())
            .unwrap_or_else(|| e.clone()),
        Node::Sum(terms) => SymExpr::sum(terms.iter().map(|t| substitute(t, map))),
        Node::Prod(factors) => SymExpr::product(factors.iter().map(|f| substitute(f, map))),
        Node::Quot(a, b) => SymExpr::div(&substitute(a, map), &substitute(b, map)),
        Node::Pow(a, b) => SymExpr::pow(&substitute(a, map), &substitute(b, map)),
        Node::Func(f, args) => SymExpr::apply(
            Arc::clone(f),
            args.iter().map(|a| substitute(a, map)).collect(),
        ),
    }
}

/// Complex conjugate of the expression, as a function on real points. Special
/// functions are real-valued on real arguments, so conjugation passes through
/// them.
pub fn conjugate<T: Scalar>(e: &SymExpr<T>) -> SymExpr<T> {
    match &*e.0 {
        Node::Const(c) => SymExpr::cnum(c.conj()),
        Node::Var(_) => e.clone(),
        Node::Sum(terms) => SymExpr::sum(terms.iter().map(conjugate)),
        Node::Prod(factors) => SymExpr::product(factors.iter().map(conjugate)),
        Node::Quot(a, b) => SymExpr::div(&conjugate(a), &conjugate(b)),
        Node::Pow(a, b) => SymExpr::pow(&conjugate(a), &conjugate(b)),
        Node::Func(f, args) => {
            SymExpr::apply(Arc::clone(f), args.iter().map(conjugate).collect())
        }
    }
}

/// Imaginary part as an expression: `(e - conj e) / 2i`.
pub fn imaginary_part<T: Scalar>(e: &SymExpr<T>) -> SymExpr<T> {
    let two_i = SymExpr::cnum(CNum::new(T::zero(), T::from_f(2.0)));
    SymExpr::div(&SymExpr::sub(e, &conjugate(e)), &two_i)
}

/// Hamilton vector field of `p` in a canonical chart: `d_xi p` on base
/// directions, `-d_x p` on fiber directions.
pub fn hamilton_field<T: Scalar>(
    p: &SymExpr<T>,
    chart: &ChartSpec,
) -> Result<VectorFieldSym<T>, ExprError> {
    if !chart.is_canonical() {
        return Err(ExprError::NonCanonicalChart);
    }
    let mut vars = Vec::with_capacity(2 * chart.dim());
    let mut coeffs = Vec::with_capacity(2 * chart.dim());
    for (x, xi) in chart.base.iter().zip(&chart.fiber) {
        vars.push(x.clone());
        coeffs.push(differentiate(p, xi));
    }
    for (x, xi) in chart.base.iter().zip(&chart.fiber) {
        vars.push(xi.clone());
        coeffs.push(SymExpr::neg(&differentiate(p, x)));
    }
    Ok(VectorFieldSym::new(vars, coeffs))
}

/// Poisson bracket `{a, b} = sum_i d_xi a d_x b - d_x a d_xi b`.
pub fn poisson_bracket<T: Scalar>(
    a: &SymExpr<T>,
    b: &SymExpr<T>,
    chart: &ChartSpec,
) -> Result<SymExpr<T>, ExprError> {
    if !chart.is_canonical() {
        return Err(ExprError::NonCanonicalChart);
    }
    Ok(SymExpr::sum(chart.base.iter().zip(&chart.fiber).map(
        |(x, xi)| {
            let lhs = SymExpr::mul(&differentiate(a, xi), &differentiate(b, x));
            let rhs = SymExpr::mul(&differentiate(a, x), &differentiate(b, xi));
            SymExpr::sub(&lhs, &rhs)
        },
    )))
}

/// Fiber-homogeneity degree via the Euler identity
/// `sum_i xi_i d_xi_i e = k e`, tested on seeded sample points. Returns the
/// common ratio `k` when it is consistent across samples, `None` otherwise.
pub fn homogeneity_degree<T: Scalar>(e: &SymExpr<T>, chart: &ChartSpec) -> Option<T> {
    let euler = SymExpr::sum(
        chart
            .fiber
            .iter()
            .map(|xi| SymExpr::mul(&SymExpr::var(xi), &differentiate(e, xi))),
    );
    let sample_box = default_box_for(chart);
    let points = sample_points(&sample_box, 40, 0x00D1A7);
    let tol = T::from_f(1e-6);
    let mut ratios: Vec<T> = Vec::new();
    let mut env: Vec<(&str, CNum<T>)> = Vec::with_capacity(sample_box.ranges.len());
    for point in &points {
        env.clear();
        for ((name, _, _), v) in sample_box.ranges.iter().zip(point) {
            env.push((name.as_str(), CNum::new(*v, T::zero())));
        }
        let ev = match e.eval(&env) {
            Ok(v) => v,
            Err(_) => continue,
        };
        if ev.norm() < T::from_f(1e-8) {
            continue;
        }
        let eu = match euler.eval(&env) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let ratio = eu / ev;
        if ratio.im.abs() > tol * (T::one() + ratio.re.abs()) {
            return None;
        }
        ratios.push(ratio.re);
    }
    if ratios.len() < 10 {
        return None;
    }
    let mean = ratios.iter().copied().fold(T::zero(), |a, b| a + b)
        / T::from_f(ratios.len() as f64);
    let consistent = ratios
        .iter()
        .all(|r| (*r - mean).abs() <= tol * (T::one() + mean.abs()));
    consistent.then_some(mean)
}
