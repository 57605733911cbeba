//! Arithmetic parameter expressions in successor templates.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Index into the predecessor's parameter list.
    Param(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl Expr {
    pub fn eval(&self, params: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Param(i) => params[*i],
            Expr::Neg(e) => -e.eval(params),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(params), b.eval(params));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
        }
    }
}

/// Failure inside an expression: byte offset into the parsed text plus a
/// message. `unknown` is set when an identifier is not in scope.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprError {
    pub offset: usize,
    pub msg: String,
    pub unknown: Option<String>,
}

/// Recursive-descent parser. Precedence: `^` (right assoc) > unary `-` >
/// `* /` > `+ -`.
pub struct ExprParser<'a> {
    src: &'a [u8],
    pos: usize,
    params: &'a [String],
    constants: &'a BTreeMap<String, f64>,
}

impl<'a> ExprParser<'a> {
    pub fn new(src: &'a str, params: &'a [String], constants: &'a BTreeMap<String, f64>) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
            params,
            constants,
        }
    }

    /// Parses a complete expression; trailing input is an error.
    pub fn parse_all(mut self) -> Result<Expr, ExprError> {
        let e = self.expr()?;
        self.skip_ws();
        if self.pos != self.src.len() {
            return Err(self.err("unexpected trailing input"));
        }
        Ok(fold(e))
    }

    fn err(&self, msg: &str) -> ExprError {
        ExprError {
            offset: self.pos,
            msg: msg.to_string(),
            unknown: None,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == b'+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == b'*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
                {
                    self.pos += 1;
                }
                // exponent suffix
                if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
                    let save = self.pos;
                    self.pos += 1;
                    if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                        self.pos += 1;
                    }
                    if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                            self.pos += 1;
                        }
                    } else {
                        self.pos = save;
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
                text.parse::<f64>().map(Expr::Num).map_err(|_| ExprError {
                    offset: start,
                    msg: format!("bad number '{text}'"),
                    unknown: None,
                })
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
                if let Some(i) = self.params.iter().position(|p| p == name) {
                    Ok(Expr::Param(i))
                } else if let Some(&v) = self.constants.get(name) {
                    Ok(Expr::Num(v))
                } else {
                    Err(ExprError {
                        offset: start,
                        msg: format!("undeclared name '{name}'"),
                        unknown: Some(name.to_string()),
                    })
                }
            }
            Some(_) => Err(self.err("expected a number, name or '('")),
            None => Err(self.err("unexpected end of expression")),
        }
    }
}

/// Constant folding so parameter-free templates evaluate without recursion.
fn fold(e: Expr) -> Expr {
    match e {
        Expr::Neg(inner) => match fold(*inner) {
            Expr::Num(v) => Expr::Num(-v),
            other => Expr::Neg(Box::new(other)),
        },
        Expr::Bin(op, a, b) => match (fold(*a), fold(*b)) {
            (Expr::Num(x), Expr::Num(y)) => Expr::Num(Expr::Bin(op, Box::new(Expr::Num(x)), Box::new(Expr::Num(y))).eval(&[])),
            (a, b) => Expr::Bin(op, Box::new(a), Box::new(b)),
        },
        other => other,
    }
}
