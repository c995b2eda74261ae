//! Arithmetic formula evaluator.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/' | '%') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | '(' expr ')'
//! ```
//!
//! `^` binds tighter than unary minus and is right-associative, so `-2^2`
//! is `-4` and `2^3^2` is `512`. `%` keeps the sign of the dividend.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CalcError {
    #[error("syntax error at column {column}: {message}")]
    Syntax { column: usize, message: String },
    #[error("math error: {0}")]
    Math(String),
}

pub fn evaluate(formula: &str) -> Result<f64, CalcError> {
    let mut p = Parser {
        chars: formula.chars().collect(),
        pos: 0,
    };
    let v = p.expr()?;
    p.skip_ws();
    if p.pos < p.chars.len() {
        return Err(p.syntax(format!("unexpected `{}`", p.chars[p.pos])));
    }
    Ok(v)
}

/// Formats a result the way the actor sees it: integral values without a
/// fractional part.
pub fn format_value(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

fn checked(v: f64, what: &str) -> Result<f64, CalcError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CalcError::Math(format!("{what} is not finite")))
    }
}

impl Parser {
    fn syntax(&self, message: impl Into<String>) -> CalcError {
        CalcError::Syntax {
            column: self.pos + 1,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<f64, CalcError> {
        let mut acc = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = if op == '+' { acc + rhs } else { acc - rhs };
            acc = checked(acc, "result")?;
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<f64, CalcError> {
        let mut acc = self.unary()?;
        while let Some(op @ ('*' | '/' | '%')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            acc = match op {
                '*' => acc * rhs,
                _ if rhs == 0.0 => {
                    return Err(CalcError::Math(if op == '/' {
                        "division by zero".into()
                    } else {
                        "remainder by zero".into()
                    }))
                }
                '/' => acc / rhs,
                _ => acc % rhs,
            };
            acc = checked(acc, "result")?;
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<f64, CalcError> {
        if self.peek() == Some('-') {
            self.pos += 1;
            return Ok(-self.unary()?);
        }
        self.power()
    }

    fn power(&mut self) -> Result<f64, CalcError> {
        let base = self.primary()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return checked(base.powf(exp), "power");
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<f64, CalcError> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(')') {
                    return Err(self.syntax("expected `)`"));
                }
                self.pos += 1;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                self.digits();
                if self.chars.get(self.pos) == Some(&'.') {
                    self.pos += 1;
                    if !self.chars.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                        return Err(self.syntax("expected digits after decimal point"));
                    }
                    self.digits();
                }
                let lit: String = self.chars[start..self.pos].iter().collect();
                lit.parse::<f64>()
                    .map_err(|_| self.syntax(format!("bad number `{lit}`")))
                    .and_then(|v| checked(v, "literal"))
            }
            Some(c) => Err(self.syntax(format!("unexpected `{c}`"))),
            None => Err(self.syntax("unexpected end of formula")),
        }
    }

    fn digits(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        assert_eq!(evaluate("2+3*4"), Ok(14.0));
        assert_eq!(evaluate("(2+3)*4"), Ok(20.0));
        assert_eq!(evaluate("10-4-3"), Ok(3.0));
        assert_eq!(evaluate("64/4/2"), Ok(8.0));
    }

    #[test]
    fn power_and_unary() {
        assert_eq!(evaluate("-(2^3)^2"), Ok(-64.0));
        assert_eq!(evaluate("-2^2"), Ok(-4.0));
        assert_eq!(evaluate("2^3^2"), Ok(512.0));
        assert_eq!(evaluate("2^-1"), Ok(0.5));
        assert_eq!(evaluate("--3"), Ok(3.0));
    }

    #[test]
    fn remainder_sign_follows_dividend() {
        assert_eq!(evaluate("-7 % 3"), Ok(-1.0));
        assert_eq!(evaluate("7 % -3"), Ok(1.0));
        assert_eq!(evaluate("7.5 % 2"), Ok(1.5));
    }

    #[test]
    fn math_errors() {
        assert!(matches!(evaluate("1/0"), Err(CalcError::Math(_))));
        assert!(matches!(evaluate("1%0"), Err(CalcError::Math(_))));
        assert!(matches!(evaluate("10^400"), Err(CalcError::Math(_))));
        assert!(matches!(evaluate("(-8)^0.5"), Err(CalcError::Math(_))));
    }

    #[test]
    fn syntax_errors_carry_column() {
        assert_eq!(
            evaluate("2 + * 3"),
            Err(CalcError::Syntax {
                column: 5,
                message: "unexpected `*`".into()
            })
        );
        assert!(matches!(evaluate("(1+2"), Err(CalcError::Syntax { column: 5, .. })));
        assert!(matches!(evaluate("1."), Err(CalcError::Syntax { .. })));
        assert!(matches!(evaluate(""), Err(CalcError::Syntax { column: 1, .. })));
        assert!(matches!(evaluate("+1"), Err(CalcError::Syntax { column: 1, .. })));
        assert!(matches!(evaluate("1 2"), Err(CalcError::Syntax { column: 3, .. })));
    }

    #[test]
    fn formatting() {
        assert_eq!(format_value(4.0), "4");
        assert_eq!(format_value(-64.0), "-64");
        assert_eq!(format_value(0.5), "0.5");
    }
}
