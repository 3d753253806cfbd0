//! Recursive-descent parser for the expression language.
//!
//! Grammar (conventional precedence, `^` binds tightest and is
//! right-associative with an integer-literal exponent):
//!
//! ```text
//! expr     := term (('+' | '-') term)*
//! term     := unary (('*' | '/') unary)*
//! unary    := '-' unary | power
//! power    := atom ('^' exponent)?
//! exponent := ['-'] integer | '(' ['-'] integer ')' | exponent '^' exponent
//! atom     := number | ident | ident '(' expr ')' | '(' expr ')'
//! number   := digits ('.' digits)? (('e'|'E') ['+'|'-'] digits)?
//! ident    := [A-Za-z_][A-Za-z0-9_]*
//! ```
//!
//! `sin`, `cos`, `exp` and `cbrt` are the only function names; any other
//! identifier is a variable. Exponents must be integer literals — write
//! `cbrt(x)^4` instead of `x^(4/3)`.

use std::sync::Arc;

use super::Expr;

/// A syntax error, carrying the byte offset into the input.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl ParseError {
    fn new(offset: usize, message: impl Into<String>) -> Self {
        ParseError {
            offset,
            message: message.into(),
        }
    }
}

/// Parse `text` into an expression tree.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
    };
    p.skip_ws();
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(ParseError::new(p.pos, "unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, b: u8) -> Result<(), ParseError> {
        if self.eat(b) {
            Ok(())
        } else {
            Err(ParseError::new(
                self.pos,
                format!("expected `{}`", b as char),
            ))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = Expr::Add(Arc::new(acc), Arc::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = Expr::Sub(Arc::new(acc), Arc::new(rhs));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = Expr::Mul(Arc::new(acc), Arc::new(rhs));
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = Expr::Div(Arc::new(acc), Arc::new(rhs));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        if self.eat(b'-') {
            let inner = self.unary()?;
            return Ok(Expr::Neg(Arc::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        self.skip_ws();
        if self.eat(b'^') {
            let k = self.exponent_chain()?;
            return Ok(Expr::IntPow(Arc::new(base), k));
        }
        Ok(base)
    }

    /// Parse a right-associative chain of integer exponents, collapsing
    /// `a^b^c` to `a^(b^c)` at parse time.
    fn exponent_chain(&mut self) -> Result<i32, ParseError> {
        let at = {
            self.skip_ws();
            self.pos
        };
        let first = self.exponent_literal()?;
        self.skip_ws();
        if self.eat(b'^') {
            let rest = self.exponent_chain()?;
            if rest < 0 {
                return Err(ParseError::new(at, "negative exponent in exponent chain"));
            }
            let folded = first
                .checked_pow(rest as u32)
                .ok_or_else(|| ParseError::new(at, "exponent overflow"))?;
            return Ok(folded);
        }
        Ok(first)
    }

    fn exponent_literal(&mut self) -> Result<i32, ParseError> {
        self.skip_ws();
        if self.eat(b'(') {
            let k = self.signed_integer()?;
            self.skip_ws();
            self.expect(b')')?;
            return Ok(k);
        }
        self.signed_integer()
    }

    fn signed_integer(&mut self) -> Result<i32, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let negative = self.eat(b'-');
        self.skip_ws();
        let digits_start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.pos == digits_start {
            return Err(ParseError::new(
                self.pos,
                "expected integer exponent after `^`",
            ));
        }
        // A fractional or exponent-part literal here is the classic mistake
        // the grammar forbids; report it explicitly.
        if matches!(self.peek(), Some(b'.' | b'e' | b'E')) {
            return Err(ParseError::new(
                start,
                "non-integer exponent (use cbrt for cube roots, e.g. cbrt(x)^4)",
            ));
        }
        let text = std::str::from_utf8(&self.bytes[digits_start..self.pos]).unwrap();
        let mag: i64 = text
            .parse()
            .map_err(|_| ParseError::new(start, "exponent out of range"))?;
        let value = if negative { -mag } else { mag };
        i32::try_from(value).map_err(|_| ParseError::new(start, "exponent out of range"))
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.skip_ws();
                self.expect(b')')?;
                Ok(e)
            }
            Some(b'0'..=b'9') => self.number(),
            Some(c) if c == b'_' || c.is_ascii_alphabetic() => self.ident_or_call(),
            Some(c) => Err(ParseError::new(
                self.pos,
                format!("unexpected character `{}`", c as char),
            )),
            None => Err(ParseError::new(self.pos, "unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            let frac_start = self.pos;
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
            if self.pos == frac_start {
                return Err(ParseError::new(self.pos, "expected digits after `.`"));
            }
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
            if self.pos == exp_start {
                return Err(ParseError::new(self.pos, "expected digits in exponent"));
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        let value: f64 = text
            .parse()
            .map_err(|_| ParseError::new(start, "invalid number literal"))?;
        Ok(Expr::Constant(value))
    }

    fn ident_or_call(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c == b'_' || c.is_ascii_alphanumeric()) {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .to_string();
        self.skip_ws();
        if self.peek() == Some(b'(') {
            let ctor = match name.as_str() {
                "sin" => Expr::Sin,
                "cos" => Expr::Cos,
                "exp" => Expr::Exp,
                "cbrt" => Expr::Cbrt,
                _ => {
                    return Err(ParseError::new(
                        start,
                        format!("unknown function `{name}` (expected sin, cos, exp or cbrt)"),
                    ))
                }
            };
            self.pos += 1;
            let arg = self.expr()?;
            self.skip_ws();
            self.expect(b')')?;
            return Ok(ctor(Arc::new(arg)));
        }
        Ok(Expr::Variable(name))
    }
}
