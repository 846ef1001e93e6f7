//! A small arithmetic expression grammar for user-defined forcings and exact
//! solutions:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := unary ('^' factor)?
//! unary  := '-' unary | atom
//! atom   := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Variables: `x`, `y` (space) and `t` (time). Constants: `pi`, `e`.
//! Functions: sin, cos, tan, sinh, cosh, tanh, exp, log, sqrt, abs, sign,
//! min, max, step (step(a, b, t) = 1 for a <= t <= b, else 0).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Var(usize),
    Unary(UnaryFn, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call2(Binary2Fn, Box<Expr>, Box<Expr>),
    Step(Box<Expr>, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Neg,
    Sin,
    Cos,
    Tan,
    Sinh,
    Cosh,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Abs,
    Sign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary2Fn {
    Min,
    Max,
}

/// Variable order: x, y, t.
pub const VARIABLES: [&str; 3] = ["x", "y", "t"];

impl Expr {
    pub fn eval(&self, vars: &[f64; 3]) -> f64 {
        match self {
            Expr::Number(v) => *v,
            Expr::Var(i) => vars[*i],
            Expr::Unary(f, a) => {
                let v = a.eval(vars);
                match f {
                    UnaryFn::Neg => -v,
                    UnaryFn::Sin => v.sin(),
                    UnaryFn::Cos => v.cos(),
                    UnaryFn::Tan => v.tan(),
                    UnaryFn::Sinh => v.sinh(),
                    UnaryFn::Cosh => v.cosh(),
                    UnaryFn::Tanh => v.tanh(),
                    UnaryFn::Exp => v.exp(),
                    UnaryFn::Log => v.ln(),
                    UnaryFn::Sqrt => v.sqrt(),
                    UnaryFn::Abs => v.abs(),
                    UnaryFn::Sign => {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                let (x, y) = (a.eval(vars), b.eval(vars));
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => x.powf(y),
                }
            }
            Expr::Call2(f, a, b) => {
                let (x, y) = (a.eval(vars), b.eval(vars));
                match f {
                    Binary2Fn::Min => x.min(y),
                    Binary2Fn::Max => x.max(y),
                }
            }
            Expr::Step(a, b, v) => {
                let (lo, hi, t) = (a.eval(vars), b.eval(vars), v.eval(vars));
                if (lo..=hi).contains(&t) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn parse(input: &str) -> Result<Expr> {
    let mut parser = Parser {
        chars: input.chars().collect(),
        pos: 0,
        input,
    };
    let expr = parser.expr()?;
    parser.skip_ws();
    if parser.pos != parser.chars.len() {
        return Err(Error::Expression(format!(
            "unexpected trailing input at byte {} of '{}'",
            parser.pos, input
        )));
    }
    Ok(expr)
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    input: &'a str,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::Expression(format!(
                "expected '{c}' at position {} in '{}'",
                self.pos, self.input
            )))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Binary(BinOp::Add, Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Expr::Binary(BinOp::Sub, Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat('*') {
                lhs = Expr::Binary(BinOp::Mul, Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat('/') {
                lhs = Expr::Binary(BinOp::Div, Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        let base = self.unary()?;
        if self.eat('^') {
            // Right associative.
            let exp = self.factor()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Unary(UnaryFn::Neg, Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == '_' => self.name(),
            other => Err(Error::Expression(format!(
                "unexpected {:?} at position {} in '{}'",
                other, self.pos, self.input
            ))),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len() {
            let c = self.chars[self.pos];
            if c.is_ascii_digit() || c == '.' {
                self.pos += 1;
            } else if (c == 'e' || c == 'E')
                && self.pos > start
                && self
                    .chars
                    .get(self.pos + 1)
                    .is_some_and(|&n| n.is_ascii_digit() || n == '+' || n == '-')
            {
                self.pos += 2;
            } else {
                break;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse::<f64>()
            .map(Expr::Number)
            .map_err(|_| Error::Expression(format!("invalid number '{text}'")))
    }

    fn name(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len()
            && (self.chars[self.pos].is_ascii_alphanumeric() || self.chars[self.pos] == '_')
        {
            self.pos += 1;
        }
        let name: String = self.chars[start..self.pos].iter().collect();
        if let Some(idx) = VARIABLES.iter().position(|&v| v == name) {
            return Ok(Expr::Var(idx));
        }
        match name.as_str() {
            "pi" => return Ok(Expr::Number(std::f64::consts::PI)),
            "e" => return Ok(Expr::Number(std::f64::consts::E)),
            _ => {}
        }
        let unary = match name.as_str() {
            "sin" => Some(UnaryFn::Sin),
            "cos" => Some(UnaryFn::Cos),
            "tan" => Some(UnaryFn::Tan),
            "sinh" => Some(UnaryFn::Sinh),
            "cosh" => Some(UnaryFn::Cosh),
            "tanh" => Some(UnaryFn::Tanh),
            "exp" => Some(UnaryFn::Exp),
            "log" => Some(UnaryFn::Log),
            "sqrt" => Some(UnaryFn::Sqrt),
            "abs" => Some(UnaryFn::Abs),
            "sign" => Some(UnaryFn::Sign),
            _ => None,
        };
        if let Some(f) = unary {
            self.expect('(')?;
            let arg = self.expr()?;
            self.expect(')')?;
            return Ok(Expr::Unary(f, Box::new(arg)));
        }
        match name.as_str() {
            "min" | "max" => {
                self.expect('(')?;
                let a = self.expr()?;
                self.expect(',')?;
                let b = self.expr()?;
                self.expect(')')?;
                let f = if name == "min" {
                    Binary2Fn::Min
                } else {
                    Binary2Fn::Max
                };
                Ok(Expr::Call2(f, Box::new(a), Box::new(b)))
            }
            "step" => {
                self.expect('(')?;
                let a = self.expr()?;
                self.expect(',')?;
                let b = self.expr()?;
                self.expect(',')?;
                let v = self.expr()?;
                self.expect(')')?;
                Ok(Expr::Step(Box::new(a), Box::new(b), Box::new(v)))
            }
            other => Err(Error::Expression(format!(
                "unknown name '{other}' in '{}'",
                self.input
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eval(src: &str, x: f64, y: f64, t: f64) -> f64 {
        parse(src).unwrap().eval(&[x, y, t])
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_relative_eq!(eval("1 + 2 * 3", 0.0, 0.0, 0.0), 7.0);
        assert_relative_eq!(eval("(1 + 2) * 3", 0.0, 0.0, 0.0), 9.0);
        assert_relative_eq!(eval("2 ^ 3 ^ 2", 0.0, 0.0, 0.0), 512.0);
        assert_relative_eq!(eval("-2 ^ 2", 0.0, 0.0, 0.0), 4.0);
        assert_relative_eq!(eval("10 / 4", 0.0, 0.0, 0.0), 2.5);
    }

    #[test]
    fn variables_functions_and_constants() {
        assert_relative_eq!(
            eval("50 * cos(50 * t)", 0.0, 0.0, 0.2),
            50.0 * (10.0f64).cos()
        );
        assert_relative_eq!(eval("x + 2 * y", 1.5, 2.0, 0.0), 5.5);
        assert_relative_eq!(eval("sin(pi / 2)", 0.0, 0.0, 0.0), 1.0);
        assert_relative_eq!(eval("log(e)", 0.0, 0.0, 0.0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(eval("max(1, min(2, 3))", 0.0, 0.0, 0.0), 2.0);
        assert_relative_eq!(eval("1e-3 * 2E+1", 0.0, 0.0, 0.0), 0.02);
    }

    #[test]
    fn step_indicator() {
        assert_relative_eq!(eval("step(0.3, 0.6, t)", 0.0, 0.0, 0.5), 1.0);
        assert_relative_eq!(eval("step(0.3, 0.6, t)", 0.0, 0.0, 0.1), 0.0);
        assert_relative_eq!(eval("step(0.3, 0.6, t)", 0.0, 0.0, 0.6), 1.0);
    }

    #[test]
    fn layered_forcing_expression() {
        let src = "50*cos(50*t) + 10/(2*1e-3)/cosh((t-0.3)/1e-3)^2";
        let v = eval(src, 0.0, 0.0, 0.3);
        assert_relative_eq!(v, 50.0 * (15.0f64).cos() + 5000.0, epsilon = 1e-9);
    }

    #[test]
    fn errors_are_reported() {
        assert!(parse("1 +").is_err());
        assert!(parse("foo(2)").is_err());
        assert!(parse("(1 + 2").is_err());
        assert!(parse("1 2").is_err());
        assert!(parse("min(1)").is_err());
    }
}
