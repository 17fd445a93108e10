//! Recursive-descent parser for the expression grammar.

use super::{BinOp, Expr, ExprKind, Func, Symbols};
use crate::Scalar;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    UnexpectedEnd,
    ExpectedOperand,
    ExpectedClosingParen,
    MalformedNumber,
    UnknownSymbol(String),
    UnknownFunction(String),
    ArityMismatch {
        function: String,
        expected: usize,
        got: usize,
    },
    NonConstantExponent,
    TrailingInput,
}

/// Syntax or symbol-resolution error, with the byte offset it occurred at.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "syntax error at offset {}: ", self.offset)?;
        match &self.kind {
            ParseErrorKind::UnexpectedChar(c) => write!(f, "unexpected character `{c}`"),
            ParseErrorKind::UnexpectedEnd => write!(f, "unexpected end of input"),
            ParseErrorKind::ExpectedOperand => write!(f, "expected an operand"),
            ParseErrorKind::ExpectedClosingParen => write!(f, "expected `)`"),
            ParseErrorKind::MalformedNumber => write!(f, "malformed number"),
            ParseErrorKind::UnknownSymbol(s) => write!(f, "unknown symbol `{s}`"),
            ParseErrorKind::UnknownFunction(s) => write!(f, "unknown function `{s}`"),
            ParseErrorKind::ArityMismatch {
                function,
                expected,
                got,
            } => {
                write!(f, "`{function}` takes {expected} argument(s), got {got}")
            }
            ParseErrorKind::NonConstantExponent => {
                write!(f, "exponent must be a numeric constant")
            }
            ParseErrorKind::TrailingInput => write!(f, "trailing input"),
        }
    }
}

/// Parse `source` against the allowed symbol set.
pub fn parse<T: Scalar>(source: &str, symbols: &Symbols) -> Result<Expr<T>, ParseError> {
    let mut p = Parser {
        src: source.as_bytes(),
        pos: 0,
        symbols,
    };
    p.skip_ws();
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.err(ParseErrorKind::TrailingInput));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    symbols: &'a Symbols,
}

impl<'a> Parser<'a> {
    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            offset: self.pos,
            kind,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && (self.src[self.pos] as char).is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
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

    fn expr<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let span = self.pos as u32;
            if self.eat(b'+') {
                let rhs = self.term()?;
                lhs = bin(BinOp::Add, lhs, rhs, span);
            } else if self.eat(b'-') {
                let rhs = self.term()?;
                lhs = bin(BinOp::Sub, lhs, rhs, span);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let span = self.pos as u32;
            if self.eat(b'*') {
                let rhs = self.unary()?;
                lhs = bin(BinOp::Mul, lhs, rhs, span);
            } else if self.eat(b'/') {
                let rhs = self.unary()?;
                lhs = bin(BinOp::Div, lhs, rhs, span);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        let span = self.pos as u32;
        if self.eat(b'-') {
            let inner: Expr<T> = self.unary()?;
            // Fold a negated literal so `-1` round-trips as a constant.
            if let ExprKind::Const(c) = inner.kind {
                return Ok(Expr {
                    kind: ExprKind::Const(-c),
                    span,
                });
            }
            return Ok(Expr {
                kind: ExprKind::Neg(Box::new(inner)),
                span,
            });
        }
        self.power()
    }

    fn power<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        let base = self.atom()?;
        let span = self.pos as u32;
        if self.eat(b'^') {
            let exp_offset = self.pos;
            let exponent: Expr<T> = self.unary()?;
            if !matches!(exponent.kind, ExprKind::Const(_)) {
                return Err(ParseError {
                    offset: exp_offset,
                    kind: ParseErrorKind::NonConstantExponent,
                });
            }
            return Ok(bin(BinOp::Pow, base, exponent, span));
        }
        Ok(base)
    }

    fn atom<T: Scalar>(&mut self) -> Result<Expr<T>, ParseError> {
        self.skip_ws();
        let span = self.pos as u32;
        match self.peek() {
            None => Err(self.err(ParseErrorKind::ExpectedOperand)),
            Some(b'(') => {
                self.pos += 1;
                self.skip_ws();
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err(ParseErrorKind::ExpectedClosingParen));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(span),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(span),
            Some(c) => Err(self.err(ParseErrorKind::UnexpectedChar(c as char))),
        }
    }

    fn number<T: Scalar>(&mut self, span: u32) -> Result<Expr<T>, ParseError> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                // `2e` followed by a non-digit: the `e` was not an exponent.
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let value: f64 = text.parse().map_err(|_| ParseError {
            offset: start,
            kind: ParseErrorKind::MalformedNumber,
        })?;
        let value = T::from_f64(value).ok_or(ParseError {
            offset: start,
            kind: ParseErrorKind::MalformedNumber,
        })?;
        self.skip_ws();
        Ok(Expr {
            kind: ExprKind::Const(value),
            span,
        })
    }

    fn ident<T: Scalar>(&mut self, span: u32) -> Result<Expr<T>, ParseError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .to_string();
        self.skip_ws();
        if self.peek() == Some(b'(') {
            let func = Func::from_name(&name).ok_or(ParseError {
                offset: start,
                kind: ParseErrorKind::UnknownFunction(name.clone()),
            })?;
            self.pos += 1;
            self.skip_ws();
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.err(ParseErrorKind::ExpectedClosingParen));
            }
            if args.len() != func.arity() {
                return Err(ParseError {
                    offset: start,
                    kind: ParseErrorKind::ArityMismatch {
                        function: name,
                        expected: func.arity(),
                        got: args.len(),
                    },
                });
            }
            return Ok(Expr {
                kind: ExprKind::Call(func, args),
                span,
            });
        }
        match self.symbols.slot(&name) {
            Some(slot) => Ok(Expr {
                kind: ExprKind::Var {
                    name: name.into(),
                    slot: slot as u32,
                },
                span,
            }),
            None => Err(ParseError {
                offset: start,
                kind: ParseErrorKind::UnknownSymbol(name),
            }),
        }
    }
}

fn bin<T: Scalar>(op: BinOp, a: Expr<T>, b: Expr<T>, span: u32) -> Expr<T> {
    Expr {
        kind: ExprKind::Bin(op, Box::new(a), Box::new(b)),
        span,
    }
}
