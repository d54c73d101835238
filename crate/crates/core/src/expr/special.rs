//! Named special functions: opaque nodes with a registered numeric evaluator
//! and a registered derivative rule. Symbolic passes never expand them.
//!
//! Besides the standard transcendentals this hosts the cutoff profiles used
//! by the commutant construction: a smooth step `smoothstep` (0 below 0,
//! 1 above 1), the decreasing cutoff `chi_tilde` (flat 1 up to `eps`, exact
//! `exp(-1/(T-t))` tail after the splice point, 0 beyond `T`) and the
//! compactly supported `chi_hat` (1 on |t| <= 1, 0 on |t| >= 2).

use super::SymExpr;
use crate::scalar::{cre, CNum, Scalar};
use std::collections::HashMap;
use std::sync::Arc;

pub trait SpecialFn<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    fn arity(&self) -> usize {
        1
    }

    fn eval(&self, args: &[CNum<T>]) -> CNum<T>;

    /// Derivative with respect to the k-th argument, as an expression in the
    /// given argument expressions (chain-rule factors are applied by the
    /// caller).
    fn partial(&self, args: &[SymExpr<T>], k: usize) -> SymExpr<T>;
}

/// Name-keyed lookup used by the parser.
pub struct FunctionRegistry<T: Scalar> {
    map: HashMap<String, Arc<dyn SpecialFn<T>>>,
}

impl<T: Scalar> FunctionRegistry<T> {
    pub fn empty() -> Self {
        Self {
            map: HashMap::new(),
        }
    }

    pub fn register(&mut self, f: Arc<dyn SpecialFn<T>>) {
        self.map.insert(f.name().to_string(), f);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn SpecialFn<T>>> {
        self.map.get(name).cloned()
    }
}

impl<T: Scalar> Default for FunctionRegistry<T> {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(Exp));
        reg.register(Arc::new(Log));
        reg.register(Arc::new(Sin));
        reg.register(Arc::new(Cos));
        reg.register(Arc::new(SmoothStep { deriv: 0 }));
        reg
    }
}

pub struct Exp;

impl<T: Scalar> SpecialFn<T> for Exp {
    fn name(&self) -> &str {
        "exp"
    }
    fn eval(&self, args: &[CNum<T>]) -> CNum<T> {
        args[0].exp()
    }
    fn partial(&self, args: &[SymExpr<T>], _k: usize) -> SymExpr<T> {
        SymExpr::apply1(Arc::new(Exp), args[0].clone())
    }
}

pub struct Log;

impl<T: Scalar> SpecialFn<T> for Log {
    fn name(&self) -> &str {
        "log"
    }
    fn eval(&self, args: &[CNum<T>]) -> CNum<T> {
        args[0].ln()
    }
    fn partial(&self, args: &[SymExpr<T>], _k: usize) -> SymExpr<T> {
        SymExpr::div(&SymExpr::one(), &args[0])
    }
}

pub struct Sin;

impl<T: Scalar> SpecialFn<T> for Sin {
    fn name(&self) -> &str {
        "sin"
    }
    fn eval(&self, args: &[CNum<T>]) -> CNum<T> {
        args[0].sin()
    }
    fn partial(&self, args: &[SymExpr<T>], _k: usize) -> SymExpr<T> {
        SymExpr::apply1(Arc::new(Cos), args[0].clone())
    }
}

pub struct Cos;

impl<T: Scalar> SpecialFn<T> for Cos {
    fn name(&self) -> &str {
        "cos"
    }
    fn eval(&self, args: &[CNum<T>]) -> CNum<T> {
        args[0].cos()
    }
    fn partial(&self, args: &[SymExpr<T>], _k: usize) -> SymExpr<T> {
        SymExpr::neg(&SymExpr::apply1(Arc::new(Sin), args[0].clone()))
    }
}

/// `phi(v) = exp(-1/v)` for `v > 0`, else 0. All derivatives vanish at 0.
fn phi<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        (-v.recip()).exp()
    } else {
        T::zero()
    }
}

/// Smooth step on [0, 1]: value, first and second derivative.
pub(crate) fn smoothstep_val<T: Scalar>(u: T, deriv: u8) -> T {
    if u <= T::zero() {
        return T::zero();
    }
    if u >= T::one() {
        return if deriv == 0 { T::one() } else { T::zero() };
    }
    let one = T::one();
    let a = phi(u);
    let b = phi(one - u);
    let d = a + b;
    match deriv {
        0 => a / d,
        1 => {
            let s = u.powi(-2) + (one - u).powi(-2);
            a * b * s / (d * d)
        }
        2 => {
            let iu2 = u.powi(-2);
            let iv2 = (one - u).powi(-2);
            let s = iu2 + iv2;
            let s_prime = T::from_f(-2.0) * u.powi(-3) + T::from_f(2.0) * (one - u).powi(-3);
            let n = a * b * s;
            let n_prime = a * b * ((iu2 - iv2) * s + s_prime);
            let d_prime_over_d = iu2 * a - iv2 * b;
            n_prime / (d * d) - T::from_f(2.0) * n * d_prime_over_d / (d * d * d)
        }
        _ => central_difference(|x| smoothstep_val(x, deriv - 1), u),
    }
}

fn central_difference<T: Scalar>(f: impl Fn(T) -> T, x: T) -> T {
    let h = T::from_f(1e-5);
    (f(x + h) - f(x - h)) / (T::from_f(2.0) * h)
}

/// Smooth transition from 0 at u <= 0 to 1 at u >= 1; `deriv` selects the
/// derivative order.
pub struct SmoothStep {
    pub deriv: u8,
}

impl<T: Scalar> SpecialFn<T> for SmoothStep {
    fn name(&self) -> &str {
        match self.deriv {
            0 => "smoothstep",
            1 => "smoothstep_d1",
            2 => "smoothstep_d2",
            _ => "smoothstep_dk",
        }
    }
    fn eval(&self, args: &[CNum<T>]) -> CNum<T> {
        cre(smoothstep_val(args[0].re, self.deriv))
    }
    fn partial(&self, args: &[SymExpr<T>], _k: usize) -> SymExpr<T> {
        SymExpr::apply1(
            Arc::new(SmoothStep {
                deriv: self.deriv + 1,
            }),
            args[0].clone(),
        )
    }
}

/// Decreasing cutoff profile: 1 on `(-inf, eps]`, `exp(-1/(t_end - t))`
/// exactly on `[t_splice, t_end)`, 0 on `[t_end, inf)`; smooth and
/// nonincreasing throughout.
#[derive(Clone, Copy)]
pub struct ChiTilde<T: Scalar> {
    pub eps: T,
    pub t_splice: T,
    pub t_end: T,
    pub deriv: u8,
}

impl<T: Scalar> ChiTilde<T> {
    pub fn new(eps: T, t_splice: T, t_end: T) -> Self {
        assert!(T::zero() < eps && eps < t_splice && t_splice < t_end);
        Self {
            eps,
            t_splice,
            t_end,
            deriv: 0,
        }
    }

    fn value(&self, t: T, deriv: u8) -> T {
        let (eps, ts, te) = (self.eps, self.t_splice, self.t_end);
        if t <= eps {
            return if deriv == 0 { T::one() } else { T::zero() };
        }
        if t >= te {
            return T::zero();
        }
        let u = (t - eps) / (ts - eps);
        let du = (ts - eps).recip();
        let w = te - t;
        let psi = smoothstep_val(u, 0);
        let chi = (-psi / w).exp();
        match deriv {
            0 => chi,
            1 => {
                let g1 = smoothstep_val(u, 1) * du / w + psi / (w * w);
                -g1 * chi
            }
            2 => {
                let psi1 = smoothstep_val(u, 1);
                let g1 = psi1 * du / w + psi / (w * w);
                let g2 = smoothstep_val(u, 2) * du * du / w
                    + T::from_f(2.0) * psi1 * du / (w * w)
                    + T::from_f(2.0) * psi / (w * w * w);
                (g1 * g1 - g2) * chi
            }
            _ => central_difference(|x| self.value(x, deriv - 1), t),
        }
    }
}

impl<T: Scalar> SpecialFn<T> for ChiTilde<T> {
    fn name(&self) -> &str {
        match self.deriv {
            0 => "chi_tilde",
            1 => "chi_tilde_d1",
            2 => "chi_tilde_d2",
            _ => "chi_tilde_dk",
        }
    }
    fn eval(&self, args: &[CNum<T>]) -> CNum<T> {
        cre(self.value(args[0].re, self.deriv))
    }
    fn partial(&self, args: &[SymExpr<T>], _k: usize) -> SymExpr<T> {
        SymExpr::apply1(
            Arc::new(Self {
                deriv: self.deriv + 1,
                ..*self
            }),
            args[0].clone(),
        )
    }
}

/// Compactly supported plateau: 1 on |t| <= 1, 0 on |t| >= 2, smooth step in
/// between (even function).
#[derive(Clone, Copy, Default)]
pub struct ChiHat {
    pub deriv: u8,
}

impl ChiHat {
    fn value<T: Scalar>(&self, t: T, deriv: u8) -> T {
        let a = t.abs();
        let sgn = if t < T::zero() { -T::one() } else { T::one() };
        match deriv {
            0 => T::one() - smoothstep_val(a - T::one(), 0),
            1 => -sgn * smoothstep_val(a - T::one(), 1),
            2 => -smoothstep_val(a - T::one(), 2),
            _ => central_difference(|x| self.value(x, deriv - 1), t),
        }
    }
}

impl<T: Scalar> SpecialFn<T> for ChiHat {
    fn name(&self) -> &str {
        match self.deriv {
            0 => "chi_hat",
            1 => "chi_hat_d1",
            2 => "chi_hat_d2",
            _ => "chi_hat_dk",
        }
    }
    fn eval(&self, args: &[CNum<T>]) -> CNum<T> {
        cre(self.value(args[0].re, self.deriv))
    }
    fn partial(&self, args: &[SymExpr<T>], _k: usize) -> SymExpr<T> {
        SymExpr::apply1(
            Arc::new(Self {
                deriv: self.deriv + 1,
            }),
            args[0].clone(),
        )
    }
}

pub fn exp<T: Scalar>(e: &SymExpr<T>) -> SymExpr<T> {
    SymExpr::apply1(Arc::new(Exp), e.clone())
}

pub fn log<T: Scalar>(e: &SymExpr<T>) -> SymExpr<T> {
    SymExpr::apply1(Arc::new(Log), e.clone())
}

pub fn sin<T: Scalar>(e: &SymExpr<T>) -> SymExpr<T> {
    SymExpr::apply1(Arc::new(Sin), e.clone())
}

pub fn cos<T: Scalar>(e: &SymExpr<T>) -> SymExpr<T> {
    SymExpr::apply1(Arc::new(Cos), e.clone())
}

pub fn smoothstep<T: Scalar>(e: &SymExpr<T>) -> SymExpr<T> {
    SymExpr::apply1(Arc::new(SmoothStep { deriv: 0 }), e.clone())
}

pub fn chi_hat<T: Scalar>(e: &SymExpr<T>) -> SymExpr<T> {
    SymExpr::apply1(Arc::new(ChiHat::default()), e.clone())
}
