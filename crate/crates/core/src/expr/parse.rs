//! Infix expression parser.
//!
//! Grammar: `+ - * / ^` with standard precedence (`^` right-associative,
//! unary minus), parentheses, function application `name(arg)` for registered
//! special functions, variables `[A-Za-z][A-Za-z0-9_]*` and decimal literals.
//! The identifier `i` denotes the imaginary unit unless the chart declares it
//! as a variable.

use super::special::FunctionRegistry;
use super::{ChartSpec, ExprError, SymExpr};
use crate::scalar::{CNum, Scalar};

/// Parse against a chart with the default function registry.
pub fn parse<T: Scalar>(text: &str, chart: &ChartSpec) -> Result<SymExpr<T>, ExprError> {
    parse_with(text, chart, &FunctionRegistry::default())
}

pub fn parse_with<T: Scalar>(
    text: &str,
    chart: &ChartSpec,
    registry: &FunctionRegistry<T>,
) -> Result<SymExpr<T>, ExprError> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
        chart,
        registry,
    };
    p.skip_ws();
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a, T: Scalar> {
    bytes: &'a [u8],
    pos: usize,
    chart: &'a ChartSpec,
    registry: &'a FunctionRegistry<T>,
}

impl<'a, T: Scalar> Parser<'a, T> {
    fn syntax(&self, message: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<SymExpr<T>, ExprError> {
        let mut acc = self.term()?;
        loop {
            if self.eat(b'+') {
                let rhs = self.term()?;
                acc = SymExpr::add(&acc, &rhs);
            } else if self.eat(b'-') {
                let rhs = self.term()?;
                acc = SymExpr::sub(&acc, &rhs);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<SymExpr<T>, ExprError> {
        let mut acc = self.unary()?;
        loop {
            if self.eat(b'*') {
                let rhs = self.unary()?;
                acc = SymExpr::mul(&acc, &rhs);
            } else if self.eat(b'/') {
                let rhs = self.unary()?;
                acc = SymExpr::div(&acc, &rhs);
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<SymExpr<T>, ExprError> {
        if self.eat(b'-') {
            let inner = self.unary()?;
            return Ok(SymExpr::neg(&inner));
        }
        self.power()
    }

    fn power(&mut self) -> Result<SymExpr<T>, ExprError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            return Ok(SymExpr::pow(&base, &exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<SymExpr<T>, ExprError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                self.skip_ws();
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.syntax("expected `)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(_) => Err(self.syntax("expected a value")),
        }
    }

    fn number(&mut self) -> Result<SymExpr<T>, ExprError> {
        let start = self.pos;
        while self
            .peek()
            .map(|c| c.is_ascii_digit() || c == b'.')
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                while self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                    self.pos += 1;
                }
            } else {
                self.pos = mark; // `e` belongs to an identifier, not this literal
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
            offset: start,
            message: format!("invalid numeric literal `{text}`"),
        })?;
        // `2.5i` is an imaginary literal when the `i` ends the token.
        if self.peek() == Some(b'i')
            && !self
                .bytes
                .get(self.pos + 1)
                .map(|c| c.is_ascii_alphanumeric() || *c == b'_')
                .unwrap_or(false)
        {
            self.pos += 1;
            self.skip_ws();
            return Ok(SymExpr::cnum(CNum::new(T::zero(), T::from_f(value))));
        }
        self.skip_ws();
        Ok(SymExpr::constant(T::from_f(value)))
    }

    fn identifier(&mut self) -> Result<SymExpr<T>, ExprError> {
        let start = self.pos;
        while self
            .peek()
            .map(|c| c.is_ascii_alphanumeric() || c == b'_')
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .to_string();
        self.skip_ws();
        if self.peek() == Some(b'(') {
            let func = self
                .registry
                .get(&name)
                .ok_or_else(|| ExprError::UnknownIdentifier {
                    name: name.clone(),
                    offset: start,
                })?;
            self.pos += 1;
            self.skip_ws();
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.syntax("expected `)`"));
            }
            if args.len() != func.arity() {
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!(
                        "`{name}` takes {} argument(s), got {}",
                        func.arity(),
                        args.len()
                    ),
                });
            }
            return Ok(SymExpr::apply(func, args));
        }
        if self.chart.declares(&name) {
            return Ok(SymExpr::var(&name));
        }
        if name == "i" {
            return Ok(SymExpr::cnum(CNum::new(T::zero(), T::one())));
        }
        Err(ExprError::UnknownIdentifier {
            name,
            offset: start,
        })
    }
}
