use super::{ExprError, Expression, Func};

/// Parses an expression in `x`. Unary minus applied to a literal is folded
/// into a negative literal.
pub fn parse(source: &str) -> Result<Expression, ExprError> {
    let mut p = Parser { src: source, bytes: source.as_bytes(), pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.bytes.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ExprError {
        ExprError::Syntax { offset: self.pos, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expression, ExprError> {
        let mut lhs = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == b'+' {
                Expression::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expression::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expression, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == b'*' {
                Expression::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expression::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expression, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(match self.unary()? {
                Expression::Num(v) => Expression::Num(-v),
                other => Expression::Neg(Box::new(other)),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expression, ExprError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(c) => Err(self.error(&format!("unexpected character `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expression, ExprError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.bytes.len() && p.bytes[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.bytes.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.bytes.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(self);
            if self.pos == exp_start {
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expression::Num(v)),
            _ => Err(ExprError::Syntax { offset: start, message: format!("bad number `{text}`") }),
        }
    }

    fn identifier(&mut self) -> Result<Expression, ExprError> {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        match name {
            "x" => Ok(Expression::Var),
            "pi" => Ok(Expression::Num(std::f64::consts::PI)),
            _ => match Func::from_name(name) {
                Some(func) => {
                    self.expect(b'(')?;
                    let arg = self.expr()?;
                    self.expect(b')')?;
                    Ok(Expression::Call(func, Box::new(arg)))
                }
                None => Err(ExprError::UnknownIdentifier { name: name.to_string(), offset: start }),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_standard() {
        let e = parse("1+2*x").unwrap();
        assert!(matches!(e, Expression::Add(..)));
        let e = parse("-x*3").unwrap();
        assert!(matches!(e, Expression::Mul(ref a, _) if matches!(**a, Expression::Neg(_))));
    }

    #[test]
    fn literal_negation_folds() {
        assert_eq!(parse("-2").unwrap(), Expression::Num(-2.0));
        assert_eq!(parse("-(2)").unwrap(), Expression::Num(-2.0));
        assert_eq!(parse("--2").unwrap(), Expression::Num(2.0));
    }

    #[test]
    fn scientific_literals() {
        assert_eq!(parse("1.5e-3").unwrap(), Expression::Num(1.5e-3));
        assert_eq!(parse("2E2").unwrap(), Expression::Num(200.0));
    }

    #[test]
    fn reports_offsets() {
        assert_eq!(parse("1 + foo(x)"), Err(ExprError::UnknownIdentifier { name: "foo".into(), offset: 4 }));
        assert!(matches!(parse("2*"), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse("(x"), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse("x x"), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse("sin x"), Err(ExprError::Syntax { offset: 4, .. })));
        assert!(matches!(parse("x $ 1"), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse(""), Err(ExprError::Syntax { offset: 0, .. })));
    }

    #[test]
    fn pi_constant() {
        assert_eq!(parse("pi").unwrap().eval(0.0).unwrap(), std::f64::consts::PI);
    }
}
