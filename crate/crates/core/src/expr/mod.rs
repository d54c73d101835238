//! Expression-tree symbolic engine.
//!
//! Immutable trees over named variables with complex constants, built for
//! Hamilton-calculus workloads: differentiation, Poisson brackets, Hamilton
//! vector fields, homogeneity detection and randomized identity testing.
//! There is deliberately no canonical-form simplifier; identity questions are
//! settled by seeded sampling ([`sample::equal_on_samples`]).

mod calculus;
mod display;
mod parse;
pub mod sample;
pub mod special;

pub use calculus::homogeneity_degree;
pub use parse::parse;
pub use sample::{equal_on_samples, equal_on_samples_tol, SampleBox, SampleReport};
pub use special::{FunctionRegistry, SpecialFn};

use crate::scalar::{cre, CNum, Scalar};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("variable `{0}` is not bound in the evaluation environment")]
    UnboundVariable(String),
    #[error("chart is not canonical (base and fiber variables must pair up)")]
    NonCanonicalChart,
    #[error("evaluation failed at {point}: {reason}")]
    EvalFailure { point: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

pub(crate) enum Node<T: Scalar> {
    Const(CNum<T>),
    Var(Arc<str>),
    Sum(Vec<SymExpr<T>>),
    Prod(Vec<SymExpr<T>>),
    Quot(SymExpr<T>, SymExpr<T>),
    Pow(SymExpr<T>, SymExpr<T>),
    Func(Arc<dyn SpecialFn<T>>, Vec<SymExpr<T>>),
}

/// Immutable symbolic expression. Cloning is cheap (`Arc` bump); all
/// constructors fold constants and drop additive/multiplicative identities so
/// derivative trees stay compact.
#[derive(Clone)]
pub struct SymExpr<T: Scalar>(pub(crate) Arc<Node<T>>);

impl<T: Scalar> SymExpr<T> {
    pub fn constant(re: T) -> Self {
        Self(Arc::new(Node::Const(cre(re))))
    }

    pub fn cnum(c: CNum<T>) -> Self {
        Self(Arc::new(Node::Const(c)))
    }

    pub fn int(k: i64) -> Self {
        Self::constant(T::from_f(k as f64))
    }

    pub fn zero() -> Self {
        Self::int(0)
    }

    pub fn one() -> Self {
        Self::int(1)
    }

    pub fn imaginary() -> Self {
        Self::cnum(CNum::new(T::zero(), T::one()))
    }

    pub fn var(name: &str) -> Self {
        Self(Arc::new(Node::Var(Arc::from(name))))
    }

    pub fn as_const(&self) -> Option<CNum<T>> {
        match &*self.0 {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.as_const(), Some(c) if c.re == T::zero() && c.im == T::zero())
    }

    pub fn is_one(&self) -> bool {
        matches!(self.as_const(), Some(c) if c.re == T::one() && c.im == T::zero())
    }

    pub fn add(a: &Self, b: &Self) -> Self {
        Self::sum([a.clone(), b.clone()])
    }

    pub fn sub(a: &Self, b: &Self) -> Self {
        Self::sum([a.clone(), Self::neg(b)])
    }

    pub fn neg(e: &Self) -> Self {
        Self::product([Self::int(-1), e.clone()])
    }

    pub fn mul(a: &Self, b: &Self) -> Self {
        Self::product([a.clone(), b.clone()])
    }

    pub fn div(a: &Self, b: &Self) -> Self {
        if a.is_zero() {
            return Self::zero();
        }
        if b.is_one() {
            return a.clone();
        }
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if !(y.re == T::zero() && y.im == T::zero()) {
                return Self::cnum(x / y);
            }
        }
        Self(Arc::new(Node::Quot(a.clone(), b.clone())))
    }

    /// n-ary sum with flattening and constant folding.
    pub fn sum<I: IntoIterator<Item = Self>>(terms: I) -> Self {
        let mut acc = CNum::new(T::zero(), T::zero());
        let mut out: Vec<Self> = Vec::new();
        for t in terms {
            match &*t.0 {
                Node::Const(c) => acc += *c,
                Node::Sum(inner) => {
                    for s in inner {
                        match &*s.0 {
                            Node::Const(c) => acc += *c,
                            _ => out.push(s.clone()),
                        }
                    }
                }
                _ => out.push(t),
            }
        }
        if acc != CNum::new(T::zero(), T::zero()) || out.is_empty() {
            out.push(Self::cnum(acc));
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            Self(Arc::new(Node::Sum(out)))
        }
    }

    /// n-ary product with flattening, constant folding and annihilation by 0.
    pub fn product<I: IntoIterator<Item = Self>>(factors: I) -> Self {
        let mut acc = CNum::new(T::one(), T::zero());
        let mut out: Vec<Self> = Vec::new();
        for f in factors {
            match &*f.0 {
                Node::Const(c) => acc *= *c,
                Node::Prod(inner) => {
                    for g in inner {
                        match &*g.0 {
                            Node::Const(c) => acc *= *c,
                            _ => out.push(g.clone()),
                        }
                    }
                }
                _ => out.push(f),
            }
        }
        if acc == CNum::new(T::zero(), T::zero()) {
            return Self::zero();
        }
        if acc != CNum::new(T::one(), T::zero()) || out.is_empty() {
            out.insert(0, Self::cnum(acc));
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            Self(Arc::new(Node::Prod(out)))
        }
    }

    pub fn pow(base: &Self, exponent: &Self) -> Self {
        if exponent.is_zero() {
            return Self::one();
        }
        if exponent.is_one() {
            return base.clone();
        }
        if let (Some(b), Some(e)) = (base.as_const(), exponent.as_const()) {
            // Fold only where the principal branch is unambiguous.
            if e.im == T::zero() && (b.im != T::zero() || b.re > T::zero()) {
                return Self::cnum(b.powf(e.re));
            }
            if e.im == T::zero() && e.re.fract() == T::zero() {
                return Self::cnum(b.powi(e.re.to_i32().unwrap_or(0)));
            }
        }
        // (x^a)^b with constant exponents collapses; keeps squared roots exact.
        if let Node::Pow(inner_base, inner_exp) = &*base.0 {
            if let (Some(a), Some(b)) = (inner_exp.as_const(), exponent.as_const()) {
                if a.im == T::zero() && b.im == T::zero() {
                    return Self::pow(inner_base, &Self::constant(a.re * b.re));
                }
            }
        }
        Self(Arc::new(Node::Pow(base.clone(), exponent.clone())))
    }

    pub fn powf(base: &Self, exponent: T) -> Self {
        Self::pow(base, &Self::constant(exponent))
    }

    pub fn powi(base: &Self, exponent: i64) -> Self {
        Self::pow(base, &Self::int(exponent))
    }

    pub fn sqrt(e: &Self) -> Self {
        Self::powf(e, T::from_f(0.5))
    }

    pub fn apply(f: Arc<dyn SpecialFn<T>>, args: Vec<Self>) -> Self {
        debug_assert_eq!(f.arity(), args.len());
        Self(Arc::new(Node::Func(f, args)))
    }

    pub fn apply1(f: Arc<dyn SpecialFn<T>>, arg: Self) -> Self {
        Self::apply(f, vec![arg])
    }

    /// Evaluate against name/value bindings. Variables are looked up by linear
    /// scan; environments in this crate have a handful of entries.
    pub fn eval(&self, env: &[(&str, CNum<T>)]) -> Result<CNum<T>, ExprError> {
        match &*self.0 {
            Node::Const(c) => Ok(*c),
            Node::Var(name) => env
                .iter()
                .find(|(n, _)| *n == &**name)
                .map(|(_, v)| *v)
                .ok_or_else(|| ExprError::UnboundVariable(name.to_string())),
            Node::Sum(terms) => {
                let mut acc = CNum::new(T::zero(), T::zero());
                for t in terms {
                    acc += t.eval(env)?;
                }
                Ok(acc)
            }
            Node::Prod(factors) => {
                let mut acc = CNum::new(T::one(), T::zero());
                for f in factors {
                    acc *= f.eval(env)?;
                }
                Ok(acc)
            }
            Node::Quot(a, b) => Ok(a.eval(env)? / b.eval(env)?),
            Node::Pow(b, e) => {
                let base = b.eval(env)?;
                let exp = e.eval(env)?;
                if exp.im == T::zero() {
                    if exp.re.fract() == T::zero() && exp.re.abs() < T::from_f(64.0) {
                        Ok(base.powi(exp.re.to_i32().unwrap()))
                    } else if base.im == T::zero() && base.re >= T::zero() {
                        Ok(cre(base.re.powf(exp.re)))
                    } else {
                        Ok(base.powf(exp.re))
                    }
                } else {
                    Ok(base.powc(exp))
                }
            }
            Node::Func(f, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(a.eval(env)?);
                }
                Ok(f.eval(&vals))
            }
        }
    }

    /// Evaluate at a real point, requiring the imaginary part to be numerical
    /// noise relative to the magnitude.
    pub fn eval_real(&self, env: &[(&str, CNum<T>)]) -> Result<T, ExprError> {
        let v = self.eval(env)?;
        let scale = T::one() + v.re.abs();
        if v.im.abs() > T::from_f(1e-9) * scale {
            return Err(ExprError::EvalFailure {
                point: env_to_string(env),
                reason: format!("expected a real value, got imaginary part {:e}", v.im),
            });
        }
        Ok(v.re)
    }

    /// Variables appearing in the expression, in first-occurrence order.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match &*self.0 {
            Node::Const(_) => {}
            Node::Var(name) => {
                if !out.iter().any(|n| n == &**name) {
                    out.push(name.to_string());
                }
            }
            Node::Sum(v) | Node::Prod(v) => v.iter().for_each(|e| e.collect_vars(out)),
            Node::Quot(a, b) | Node::Pow(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Node::Func(_, args) => args.iter().for_each(|e| e.collect_vars(out)),
        }
    }
}

/// Render an evaluation environment as a point string for diagnostics.
pub fn sample_point_string<T: Scalar>(env: &[(&str, CNum<T>)]) -> String {
    env_to_string(env)
}

pub(crate) fn env_to_string<T: Scalar>(env: &[(&str, CNum<T>)]) -> String {
    let parts: Vec<String> = env
        .iter()
        .map(|(n, v)| {
            if v.im == T::zero() {
                format!("{n}={}", v.re)
            } else {
                format!("{n}={}+{}i", v.re, v.im)
            }
        })
        .collect();
    format!("({})", parts.join(", "))
}

impl<T: Scalar> std::ops::Add for &SymExpr<T> {
    type Output = SymExpr<T>;
    fn add(self, rhs: Self) -> SymExpr<T> {
        SymExpr::add(self, rhs)
    }
}

impl<T: Scalar> std::ops::Sub for &SymExpr<T> {
    type Output = SymExpr<T>;
    fn sub(self, rhs: Self) -> SymExpr<T> {
        SymExpr::sub(self, rhs)
    }
}

impl<T: Scalar> std::ops::Mul for &SymExpr<T> {
    type Output = SymExpr<T>;
    fn mul(self, rhs: Self) -> SymExpr<T> {
        SymExpr::mul(self, rhs)
    }
}

impl<T: Scalar> std::ops::Div for &SymExpr<T> {
    type Output = SymExpr<T>;
    fn div(self, rhs: Self) -> SymExpr<T> {
        SymExpr::div(self, rhs)
    }
}

impl<T: Scalar> std::ops::Neg for &SymExpr<T> {
    type Output = SymExpr<T>;
    fn neg(self) -> SymExpr<T> {
        SymExpr::neg(self)
    }
}

impl<T: Scalar> std::fmt::Debug for SymExpr<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self}")
    }
}

/// Coordinate chart declaration: ordered base variables, ordered fiber
/// variables, optional positivity constraints on fiber variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChartSpec {
    pub base: Vec<String>,
    pub fiber: Vec<String>,
    /// Names of variables constrained to be positive on the working region.
    pub positive: Vec<String>,
}

impl ChartSpec {
    pub fn new(base: &[&str], fiber: &[&str]) -> Self {
        let spec = Self {
            base: base.iter().map(|s| s.to_string()).collect(),
            fiber: fiber.iter().map(|s| s.to_string()).collect(),
            positive: Vec::new(),
        };
        debug_assert!(spec.names_unique(), "chart variable names must be unique");
        spec
    }

    /// Canonical chart `(x_1..x_n, xi_1..xi_n)` in dimension `n`.
    pub fn canonical(n: usize) -> Self {
        let base: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let fiber: Vec<String> = (1..=n).map(|i| format!("xi{i}")).collect();
        Self {
            base,
            fiber,
            positive: Vec::new(),
        }
    }

    pub fn with_positive(mut self, names: &[&str]) -> Self {
        self.positive = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn is_canonical(&self) -> bool {
        !self.base.is_empty() && self.base.len() == self.fiber.len()
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn names_unique(&self) -> bool {
        let mut all: Vec<&String> = self.base.iter().chain(self.fiber.iter()).collect();
        all.sort();
        all.windows(2).all(|w| w[0] != w[1])
    }

    /// All variables, base first.
    pub fn all_vars(&self) -> Vec<String> {
        self.base.iter().chain(self.fiber.iter()).cloned().collect()
    }

    pub fn declares(&self, name: &str) -> bool {
        self.base.iter().any(|n| n == name) || self.fiber.iter().any(|n| n == name)
    }
}

/// Symbolic vector field: one coefficient per coordinate of `vars`.
#[derive(Debug, Clone)]
pub struct VectorFieldSym<T: Scalar> {
    pub vars: Vec<String>,
    pub coeffs: Vec<SymExpr<T>>,
}

impl<T: Scalar> VectorFieldSym<T> {
    pub fn new(vars: Vec<String>, coeffs: Vec<SymExpr<T>>) -> Self {
        assert_eq!(
            vars.len(),
            coeffs.len(),
            "coefficient count must equal coordinate count"
        );
        Self { vars, coeffs }
    }

    pub fn coeff(&self, var: &str) -> Option<&SymExpr<T>> {
        self.vars
            .iter()
            .position(|v| v == var)
            .map(|i| &self.coeffs[i])
    }

    /// Apply the field to a function: `V f = sum_i coeff_i * d f / d v_i`.
    pub fn apply(&self, f: &SymExpr<T>) -> SymExpr<T> {
        SymExpr::sum(
            self.vars
                .iter()
                .zip(&self.coeffs)
                .map(|(v, c)| SymExpr::mul(c, &calculus::differentiate(f, v))),
        )
    }

    pub fn scale(&self, factor: &SymExpr<T>) -> Self {
        Self {
            vars: self.vars.clone(),
            coeffs: self
                .coeffs
                .iter()
                .map(|c| SymExpr::mul(factor, c))
                .collect(),
        }
    }
}

pub use calculus::{
    conjugate, differentiate, hamilton_field, imaginary_part, poisson_bracket, substitute,
};

#[cfg(test)]
mod tests;
