//! Recursive-descent parser for expression text.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := base ('^' factor)?
//! base   := number | identifier | func '(' expr ')' | '(' expr ')' | '-' base
//! ```
//!
//! Unary minus applies to a base, so `-x^2` reads as `(-x)^2`. Exponents
//! must be constant; they are folded to a number. Negated numeric literals
//! fold to negative constants. Offsets in errors are byte offsets.

use std::fmt;

use kkt_sens_core::{Expr, Func, Leaf, Scalar, SymbolTable};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseError {
    Syntax { offset: usize, expected: Vec<&'static str> },
    UnknownSymbol { name: String, offset: usize },
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseError::Syntax { offset, expected } => {
                write!(f, "syntax error at byte {offset}: expected {}", expected.join(" or "))
            }
            ParseError::UnknownSymbol { name, offset } => {
                write!(f, "unknown symbol '{name}' at byte {offset}")
            }
        }
    }
}

impl std::error::Error for ParseError {}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownSymbol { offset, .. } => *offset,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token<'a> {
    Number(f64),
    Ident(&'a str),
    Op(char),
    End,
}

struct Parser<'a, 's, S: ?Sized> {
    text: &'a str,
    pos: usize,
    symbols: &'s S,
}

const OPERAND: &[&str] = &["number", "identifier", "'('", "'-'"];

impl<'a, S: SymbolTable + ?Sized> Parser<'a, '_, S> {
    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    /// Next token and its start offset, without consuming it.
    fn peek(&mut self) -> (Token<'a>, usize, usize) {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.text[start..];
        let Some(c) = rest.chars().next() else {
            return (Token::End, start, start);
        };
        if c.is_ascii_digit() || (c == '.' && rest[1..].starts_with(|d: char| d.is_ascii_digit())) {
            let len = number_len(rest);
            let value = rest[..len].parse().unwrap_or(f64::NAN);
            return (Token::Number(value), start, start + len);
        }
        if c.is_alphabetic() || c == '_' {
            let len = rest
                .char_indices()
                .find(|&(_, ch)| !(ch.is_alphanumeric() || ch == '_'))
                .map_or(rest.len(), |(i, _)| i);
            return (Token::Ident(&rest[..len]), start, start + len);
        }
        (Token::Op(c), start, start + c.len_utf8())
    }

    fn bump(&mut self, end: usize) {
        self.pos = end;
    }

    fn expect_op(&mut self, op: char, label: &'static str) -> Result<(), ParseError> {
        match self.peek() {
            (Token::Op(c), _, end) if c == op => {
                self.bump(end);
                Ok(())
            }
            (_, start, _) => Err(ParseError::Syntax { offset: start, expected: vec![label] }),
        }
    }

    fn expr<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                (Token::Op('+'), _, end) => {
                    self.bump(end);
                    lhs = lhs + self.term()?;
                }
                (Token::Op('-'), _, end) => {
                    self.bump(end);
                    lhs = lhs - self.term()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                (Token::Op('*'), _, end) => {
                    self.bump(end);
                    lhs = lhs * self.factor()?;
                }
                (Token::Op('/'), _, end) => {
                    self.bump(end);
                    lhs = lhs / self.factor()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        let base = self.base()?;
        match self.peek() {
            (Token::Op('^'), _, end) => {
                self.bump(end);
                let (_, at, _) = self.peek();
                let exponent = self.factor::<T>()?;
                match constant_value(&exponent) {
                    Some(e) if e.is_finite() => Ok(base.pow(e)),
                    _ => Err(ParseError::Syntax { offset: at, expected: vec!["constant exponent"] }),
                }
            }
            _ => Ok(base),
        }
    }

    fn base<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        let (tok, start, end) = self.peek();
        match tok {
            Token::Number(v) => {
                self.bump(end);
                Ok(Expr::constant(T::lit(v)))
            }
            Token::Op('-') => {
                self.bump(end);
                Ok(match self.base::<T>()? {
                    Expr::Const(c) => Expr::Const(-c),
                    e => -e,
                })
            }
            Token::Op('(') => {
                self.bump(end);
                let e = self.expr()?;
                self.expect_op(')', "')'")?;
                Ok(e)
            }
            Token::Ident(name) => {
                self.bump(end);
                if let Some(func) = Func::from_name(name) {
                    if let (Token::Op('('), _, paren_end) = self.peek() {
                        self.bump(paren_end);
                        let arg = self.expr()?;
                        self.expect_op(')', "')'")?;
                        return Ok(Expr::call(func, arg));
                    }
                }
                match self.symbols.lookup(name) {
                    Some(Leaf::Var(v)) => Ok(Expr::var(v)),
                    Some(Leaf::Param(p)) => Ok(Expr::param(p)),
                    None if Func::from_name(name).is_some() => {
                        Err(ParseError::Syntax { offset: self.pos, expected: vec!["'('"] })
                    }
                    None => Err(ParseError::UnknownSymbol { name: name.to_owned(), offset: start }),
                }
            }
            _ => Err(ParseError::Syntax { offset: start, expected: OPERAND.to_vec() }),
        }
    }
}

fn number_len(s: &str) -> usize {
    let b = s.as_bytes();
    let digits = |mut i: usize| {
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        i
    };
    let mut i = digits(0);
    if i < b.len() && b[i] == b'.' {
        i = digits(i + 1);
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        let mut j = i + 1;
        if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
            j += 1;
        }
        if j < b.len() && b[j].is_ascii_digit() {
            i = digits(j);
        }
    }
    i
}

/// Value of an expression made only of constants, if it is one.
fn constant_value<T: Scalar>(e: &Expr<T>) -> Option<T> {
    use kkt_sens_core::BinaryOp;
    Some(match e {
        Expr::Const(c) => *c,
        Expr::Var(_) | Expr::Param(_) => return None,
        Expr::Neg(a) => -constant_value(a)?,
        Expr::Binary(op, a, b) => {
            let (a, b) = (constant_value(a)?, constant_value(b)?);
            match op {
                BinaryOp::Add => a + b,
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
                BinaryOp::Div => a / b,
            }
        }
        Expr::Pow(a, k) => constant_value(a)?.powf(*k),
        Expr::Call(f, a) => {
            let a = constant_value(a)?;
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Tan => a.tan(),
                Func::Exp => a.exp(),
                Func::Log => a.ln(),
                Func::Sqrt => a.sqrt(),
            }
        }
    })
}

/// Parses `text`, resolving identifiers against `symbols`.
pub fn parse_expression<T: Scalar, S: SymbolTable + ?Sized>(
    text: &str,
    symbols: &S,
) -> Result<Expr<T>, ParseError> {
    let mut p = Parser { text, pos: 0, symbols };
    let e = p.expr()?;
    match p.peek() {
        (Token::End, _, _) => Ok(e),
        (_, start, _) => Err(ParseError::Syntax {
            offset: start,
            expected: vec!["operator", "end of input"],
        }),
    }
}
