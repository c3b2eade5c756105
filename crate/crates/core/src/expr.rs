//! A small arithmetic-expression interpreter used for user-supplied rates,
//! coefficient matrices and perturbations.
//!
//! Grammar (usual precedence, `^` binds tighter than unary minus and is
//! right associative):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Identifiers resolve against a variable list fixed at compile time, so
//! evaluation is a plain tree walk over a slice of values.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Sqrt => x.sqrt(),
            Func::Abs => x.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Var(i) => vars[*i],
            Node::Neg(a) => -a.eval(vars),
            Node::Bin(op, a, b) => {
                let (x, y) = (a.eval(vars), b.eval(vars));
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => pow(x, y),
                }
            }
            Node::Call(f, a) => f.apply(a.eval(vars)),
        }
    }

    fn uses_var(&self, idx: usize) -> bool {
        match self {
            Node::Const(_) => false,
            Node::Var(i) => *i == idx,
            Node::Neg(a) | Node::Call(_, a) => a.uses_var(idx),
            Node::Bin(_, a, b) => a.uses_var(idx) || b.uses_var(idx),
        }
    }
}

// Small integer exponents go through powi so that odd powers of negative
// bases stay real.
fn pow(x: f64, y: f64) -> f64 {
    if y.fract() == 0.0 && y.abs() <= 64.0 {
        x.powi(y as i32)
    } else {
        x.powf(y)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Expr(format!("bad number `{text}`")))?;
            out.push(Token::Num(v));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else if c == '(' {
            out.push(Token::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Token::RParen);
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Node::Const(v)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                if let Some(Token::LParen) = self.peek() {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| Error::Expr(format!("unknown function `{name}`")))?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Node::Var(i));
                }
                match name.as_str() {
                    "pi" => Ok(Node::Const(std::f64::consts::PI)),
                    "e" => Ok(Node::Const(std::f64::consts::E)),
                    _ => Err(Error::Expr(format!("unknown identifier `{name}`"))),
                }
            }
            Some(tok) => Err(Error::Expr(format!("unexpected token {tok:?}"))),
            None => Err(Error::Expr("unexpected end of expression".into())),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        match self.next() {
            Some(Token::RParen) => Ok(()),
            _ => Err(Error::Expr("expected `)`".into())),
        }
    }
}

/// A compiled expression over a fixed list of variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
    arity: usize,
}

impl Expr {
    /// Parses `src`; identifiers other than `vars`, `pi` and `e` are errors.
    pub fn parse(src: &str, vars: &[&str]) -> Result<Self> {
        let tokens = tokenize(src)?;
        if tokens.is_empty() {
            return Err(Error::Expr("empty expression".into()));
        }
        let mut p = Parser {
            tokens,
            pos: 0,
            vars,
        };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expr(format!(
                "trailing input in `{src}` at token {}",
                p.pos
            )));
        }
        Ok(Self {
            source: src.to_string(),
            root,
            arity: vars.len(),
        })
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        debug_assert_eq!(vars.len(), self.arity);
        self.root.eval(vars)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn uses_var(&self, idx: usize) -> bool {
        self.root.uses_var(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, t: f64) -> f64 {
        Expr::parse(src, &["t"]).unwrap().eval(&[t])
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("1 + 2 * 3", 0.0), 7.0);
        assert_eq!(ev("-2^2", 0.0), -4.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("(1+t)/2", 3.0), 2.0);
        assert_eq!(ev("2*-t", 3.0), -6.0);
        assert_eq!(ev("1e-3*t", 2.0), 2e-3);
    }

    #[test]
    fn functions_and_constants() {
        assert!((ev("exp(t)", 1.0) - std::f64::consts::E).abs() < 1e-15);
        assert!((ev("1 + sin(t)", std::f64::consts::FRAC_PI_2) - 2.0).abs() < 1e-15);
        assert!((ev("log(e)", 0.0) - 1.0).abs() < 1e-15);
        assert!((ev("cos(pi)", 0.0) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn odd_power_of_negative() {
        let e = Expr::parse("x^3", &["x"]).unwrap();
        assert_eq!(e.eval(&[-2.0]), -8.0);
    }

    #[test]
    fn errors() {
        assert!(Expr::parse("1 +", &["t"]).is_err());
        assert!(Expr::parse("foo(t)", &["t"]).is_err());
        assert!(Expr::parse("s", &["t"]).is_err());
        assert!(Expr::parse("(t", &["t"]).is_err());
        assert!(Expr::parse("t t", &["t"]).is_err());
        assert!(Expr::parse("t # 2", &["t"]).is_err());
        assert!(Expr::parse("", &["t"]).is_err());
    }

    #[test]
    fn variable_usage() {
        let e = Expr::parse("t + x2^3", &["t", "x1", "x2"]).unwrap();
        assert!(e.uses_var(0) && !e.uses_var(1) && e.uses_var(2));
        assert_eq!(e.eval(&[1.0, 5.0, 2.0]), 9.0);
    }
}
