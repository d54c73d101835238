//! Infix printing with standard precedence. Output reparses to an equivalent
//! expression (same values; associativity of folded sums/products may differ
//! structurally).

use super::{Node, SymExpr};
use crate::scalar::Scalar;
use std::fmt;

fn prec<T: Scalar>(e: &SymExpr<T>) -> u8 {
    match &*e.0 {
        Node::Const(c) => {
            if c.im == T::zero() && c.re >= T::zero() {
                4
            } else {
                0 // negative or complex constants always get parentheses
            }
        }
        Node::Var(_) | Node::Func(..) => 4,
        Node::Sum(_) => 1,
        Node::Prod(_) | Node::Quot(..) => 2,
        Node::Pow(..) => 3,
    }
}

fn write_child<T: Scalar>(
    f: &mut fmt::Formatter<'_>,
    e: &SymExpr<T>,
    min_prec: u8,
) -> fmt::Result {
    if prec(e) < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl<T: Scalar> fmt::Display for SymExpr<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.0 {
            Node::Const(c) => {
                if c.im == T::zero() {
                    write!(f, "{}", c.re)
                } else if c.re == T::zero() {
                    if c.im == T::one() {
                        write!(f, "i")
                    } else {
                        write!(f, "{}*i", c.im)
                    }
                } else {
                    write!(f, "{} + {}*i", c.re, c.im)
                }
            }
            Node::Var(name) => write!(f, "{name}"),
            Node::Sum(terms) => {
                for (i, t) in terms.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    write_child(f, t, 2)?;
                }
                Ok(())
            }
            Node::Prod(factors) => {
                // A leading -1 renders as a unary minus.
                let (sign, skip) = match factors[0].as_const() {
                    Some(c) if c.im == T::zero() && c.re == -T::one() && factors.len() > 1 => {
                        ("-", 1)
                    }
                    _ => ("", 0),
                };
                write!(f, "{sign}")?;
                for (i, x) in factors.iter().skip(skip).enumerate() {
                    if i > 0 {
                        write!(f, "*")?;
                    }
                    write_child(f, x, 2)?;
                }
                Ok(())
            }
            Node::Quot(a, b) => {
                write_child(f, a, 2)?;
                write!(f, "/")?;
                write_child(f, b, 3)
            }
            Node::Pow(a, b) => {
                if prec(a) <= 3 {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, "^")?;
                write_child(f, b, 3)
            }
            Node::Func(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}
