//! Coefficient expressions in one variable `x`.
//!
//! The grammar is intentionally small so that symbolic differentiation is
//! total:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := number | 'x' | 'pi' | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | tanh | exp
//! ```

mod parser;
mod profile;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use parser::parse;
pub use profile::{profile, CoefficientProfile, ScanRange};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("division by zero at x = {at}")]
    DivisionByZero { at: f64 },
    #[error("non-finite value at x = {at}")]
    NonFinite { at: f64 },
    #[error("invalid scan: {0}")]
    InvalidScan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tanh,
    Exp,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Exp => "exp",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "tanh" => Some(Func::Tanh),
            "exp" => Some(Func::Exp),
            _ => None,
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tanh => v.tanh(),
            Func::Exp => v.exp(),
        }
    }
}

/// Expression tree. Immutable once built; evaluation is reentrant.
#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Num(f64),
    Var,
    Neg(Box<Expression>),
    Add(Box<Expression>, Box<Expression>),
    Sub(Box<Expression>, Box<Expression>),
    Mul(Box<Expression>, Box<Expression>),
    Div(Box<Expression>, Box<Expression>),
    Call(Func, Box<Expression>),
}

impl Expression {
    pub fn constant(v: f64) -> Self {
        Expression::Num(v)
    }

    pub fn eval(&self, x: f64) -> Result<f64, ExprError> {
        let v = self.eval_raw(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::NonFinite { at: x })
        }
    }

    fn eval_raw(&self, x: f64) -> Result<f64, ExprError> {
        Ok(match self {
            Expression::Num(v) => *v,
            Expression::Var => x,
            Expression::Neg(a) => -a.eval_raw(x)?,
            Expression::Add(a, b) => a.eval_raw(x)? + b.eval_raw(x)?,
            Expression::Sub(a, b) => a.eval_raw(x)? - b.eval_raw(x)?,
            Expression::Mul(a, b) => a.eval_raw(x)? * b.eval_raw(x)?,
            Expression::Div(a, b) => {
                let den = b.eval_raw(x)?;
                if den == 0.0 {
                    return Err(ExprError::DivisionByZero { at: x });
                }
                a.eval_raw(x)? / den
            }
            Expression::Call(f, a) => f.apply(a.eval_raw(x)?),
        })
    }

    /// `Some(c)` when the tree does not depend on `x`.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Expression::Num(v) => Some(*v),
            _ if !self.depends_on_x() => self.eval(0.0).ok(),
            _ => None,
        }
    }

    pub fn depends_on_x(&self) -> bool {
        match self {
            Expression::Num(_) => false,
            Expression::Var => true,
            Expression::Neg(a) | Expression::Call(_, a) => a.depends_on_x(),
            Expression::Add(a, b) | Expression::Sub(a, b) | Expression::Mul(a, b) | Expression::Div(a, b) => {
                a.depends_on_x() || b.depends_on_x()
            }
        }
    }

    /// Exact symbolic derivative with respect to `x`.
    pub fn differentiate(&self) -> Expression {
        use Expression as E;
        match self {
            E::Num(_) => E::Num(0.0),
            E::Var => E::Num(1.0),
            E::Neg(a) => neg(a.differentiate()),
            E::Add(a, b) => add(a.differentiate(), b.differentiate()),
            E::Sub(a, b) => sub(a.differentiate(), b.differentiate()),
            E::Mul(a, b) => add(mul(a.differentiate(), (**b).clone()), mul((**a).clone(), b.differentiate())),
            E::Div(a, b) => {
                // (a'b - ab') / b^2
                let num = sub(mul(a.differentiate(), (**b).clone()), mul((**a).clone(), b.differentiate()));
                div(num, mul((**b).clone(), (**b).clone()))
            }
            E::Call(f, a) => {
                let inner = a.differentiate();
                let outer = match f {
                    Func::Sin => E::Call(Func::Cos, a.clone()),
                    Func::Cos => neg(E::Call(Func::Sin, a.clone())),
                    Func::Exp => E::Call(Func::Exp, a.clone()),
                    // 1 - tanh^2
                    Func::Tanh => {
                        let t = E::Call(Func::Tanh, a.clone());
                        sub(E::Num(1.0), mul(t.clone(), t))
                    }
                };
                mul(outer, inner)
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expression::Add(..) | Expression::Sub(..) => 1,
            Expression::Mul(..) | Expression::Div(..) => 2,
            Expression::Neg(_) => 3,
            Expression::Num(v) if v.is_sign_negative() => 3,
            _ => 4,
        }
    }
}

fn neg(a: Expression) -> Expression {
    match a {
        Expression::Num(v) => Expression::Num(-v),
        Expression::Neg(inner) => *inner,
        other => Expression::Neg(Box::new(other)),
    }
}

fn add(a: Expression, b: Expression) -> Expression {
    match (a.as_literal(), b.as_literal()) {
        (Some(x), Some(y)) => Expression::Num(x + y),
        (Some(z), _) if z == 0.0 => b,
        (_, Some(z)) if z == 0.0 => a,
        _ => Expression::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expression, b: Expression) -> Expression {
    match (a.as_literal(), b.as_literal()) {
        (Some(x), Some(y)) => Expression::Num(x - y),
        (Some(z), _) if z == 0.0 => neg(b),
        (_, Some(z)) if z == 0.0 => a,
        _ => Expression::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expression, b: Expression) -> Expression {
    match (a.as_literal(), b.as_literal()) {
        (Some(x), Some(y)) => Expression::Num(x * y),
        (Some(z), _) | (_, Some(z)) if z == 0.0 => Expression::Num(0.0),
        (Some(o), _) if o == 1.0 => b,
        (_, Some(o)) if o == 1.0 => a,
        _ => Expression::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expression, b: Expression) -> Expression {
    match (a.as_literal(), b.as_literal()) {
        (Some(z), _) if z == 0.0 => Expression::Num(0.0),
        (_, Some(o)) if o == 1.0 => a,
        _ => Expression::Div(Box::new(a), Box::new(b)),
    }
}

impl Expression {
    fn as_literal(&self) -> Option<f64> {
        match self {
            Expression::Num(v) => Some(*v),
            _ => None,
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

/// Prints with the minimum parentheses that reproduce the same tree when
/// parsed again. Negative literals print as `(-c)`.
impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Num(v) if v.is_sign_negative() => write!(f, "(-{})", -v),
            Expression::Num(v) => write!(f, "{v}"),
            Expression::Var => f.write_str("x"),
            Expression::Neg(a) => {
                f.write_str("-")?;
                a.fmt_child(f, 4)
            }
            Expression::Add(a, b) | Expression::Sub(a, b) => {
                a.fmt_child(f, 1)?;
                f.write_str(if matches!(self, Expression::Add(..)) { "+" } else { "-" })?;
                b.fmt_child(f, 2)
            }
            Expression::Mul(a, b) | Expression::Div(a, b) => {
                a.fmt_child(f, 2)?;
                f.write_str(if matches!(self, Expression::Mul(..)) { "*" } else { "/" })?;
                b.fmt_child(f, 3)
            }
            Expression::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

impl FromStr for Expression {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64) -> f64 {
        parse(s).unwrap().eval(x).unwrap()
    }

    fn dv(s: &str, x: f64) -> f64 {
        parse(s).unwrap().differentiate().eval(x).unwrap()
    }

    #[test]
    fn evaluates_basic_forms() {
        assert_eq!(ev("2*x", 3.0), 6.0);
        assert_eq!(ev("tanh(0)", 1.0), 0.0);
        assert_eq!(ev("1+2*3", 0.0), 7.0);
        assert_eq!(ev("-x*2", 3.0), -6.0);
        assert_eq!(ev("8/4/2", 0.0), 1.0);
        assert_eq!(ev("2-3-4", 0.0), -5.0);
    }

    #[test]
    fn pole_is_division_by_zero() {
        let e = parse("1/(x-1)").unwrap();
        assert_eq!(e.eval(1.0), Err(ExprError::DivisionByZero { at: 1.0 }));
    }

    #[test]
    fn overflow_is_reported() {
        let e = parse("exp(exp(x))").unwrap();
        assert!(matches!(e.eval(10.0), Err(ExprError::NonFinite { .. })));
    }

    #[test]
    fn derivatives_of_examples() {
        assert_eq!(dv("sin(x)", 0.0), 1.0);
        assert_eq!(dv("x*x", 2.0), 4.0);
        assert!((dv("0.5+0.25*tanh(x)", 0.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn tanh_derivative_matches_central_difference() {
        let e = parse("0.5+0.25*tanh(x)").unwrap();
        let h = 1e-6;
        let fd = (e.eval(h).unwrap() - e.eval(-h).unwrap()) / (2.0 * h);
        assert!((fd - dv("0.5+0.25*tanh(x)", 0.0)).abs() < 1e-8);
    }

    #[test]
    fn constants_fold_away_in_derivative() {
        assert_eq!(parse("3").unwrap().differentiate(), Expression::Num(0.0));
        assert_eq!(parse("x").unwrap().differentiate(), Expression::Num(1.0));
        assert_eq!(parse("2*x").unwrap().differentiate(), Expression::Num(2.0));
        assert_eq!(parse("0.1*x").unwrap().differentiate().as_constant(), Some(0.1));
    }

    #[test]
    fn display_keeps_structure() {
        for s in ["1-(2-x)", "x/(2*x)", "-(x+1)", "sin(-x)", "2*(x+1)", "(-2)*x", "x-(-2)"] {
            let e = parse(s).unwrap();
            assert_eq!(parse(&e.to_string()).unwrap(), e, "{s} -> {e}");
        }
        assert_eq!(parse("1-(2-x)").unwrap().to_string(), "1-(2-x)");
        assert_eq!(parse("(1-2)-x").unwrap().to_string(), "1-2-x");
    }
}
