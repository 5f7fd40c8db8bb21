//! Byte-level reader and writer for the canonical text notation shared by
//! payloads, envelopes and run reports.
//!
//! The notation is a whitespace-free subset of JSON. Every parse error
//! carries the byte offset at which it was detected.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            offset: self.pos,
            message: message.into(),
        }
    }

    pub(crate) fn error_at(&self, offset: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn peek(&self) -> Option<u8> {
        self.buf.get(self.pos).copied()
    }

    pub(crate) fn expect(&mut self, byte: u8) -> Result<(), ParseError> {
        match self.peek() {
            Some(b) if b == byte => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => Err(self.error(format!(
                "expected '{}', found '{}'",
                byte as char,
                (b as char).escape_default()
            ))),
            None => Err(self.error(format!("expected '{}', found end of input", byte as char))),
        }
    }

    /// Consumes `byte` if it is next.
    pub(crate) fn eat(&mut self, byte: u8) -> bool {
        if self.peek() == Some(byte) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub(crate) fn expect_literal(&mut self, lit: &str) -> Result<(), ParseError> {
        if self.buf[self.pos..].starts_with(lit.as_bytes()) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(self.error(format!("expected `{lit}`")))
        }
    }

    pub(crate) fn finish(&self) -> Result<(), ParseError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(self.error("trailing bytes after value"))
        }
    }

    /// Reads `"key":` and checks the key name.
    pub(crate) fn key(&mut self, name: &str) -> Result<(), ParseError> {
        let at = self.pos;
        let found = self.string()?;
        if found != name {
            return Err(self.error_at(at, format!("expected key \"{name}\", found \"{found}\"")));
        }
        self.expect(b':')
    }

    /// A JSON number token, returned as finite `f64`.
    pub(crate) fn number(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        self.eat(b'-');
        match self.peek() {
            Some(b'0') => self.pos += 1,
            Some(b'1'..=b'9') => self.digits(),
            _ => return Err(self.error("expected digit")),
        }
        if self.eat(b'.') {
            if !matches!(self.peek(), Some(b'0'..=b'9')) {
                return Err(self.error("expected digit after '.'"));
            }
            self.digits();
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            self.pos += 1;
            if !self.eat(b'+') {
                self.eat(b'-');
            }
            if !matches!(self.peek(), Some(b'0'..=b'9')) {
                return Err(self.error("expected exponent digits"));
            }
            self.digits();
        }
        // The token is pure ASCII by construction.
        let token = std::str::from_utf8(&self.buf[start..self.pos]).expect("ascii number");
        let x: f64 = token
            .parse()
            .map_err(|_| self.error_at(start, format!("invalid number `{token}`")))?;
        if !x.is_finite() {
            return Err(self.error_at(start, format!("number `{token}` is not finite")));
        }
        Ok(x)
    }

    /// A non-negative integer without sign, fraction or exponent.
    pub(crate) fn uint(&mut self) -> Result<u64, ParseError> {
        let start = self.pos;
        match self.peek() {
            Some(b'0') => self.pos += 1,
            Some(b'1'..=b'9') => self.digits(),
            _ => return Err(self.error("expected unsigned integer")),
        }
        let token = std::str::from_utf8(&self.buf[start..self.pos]).expect("ascii digits");
        token
            .parse()
            .map_err(|_| self.error_at(start, format!("integer `{token}` out of range")))
    }

    pub(crate) fn boolean(&mut self) -> Result<bool, ParseError> {
        match self.peek() {
            Some(b't') => self.expect_literal("true").map(|_| true),
            Some(b'f') => self.expect_literal("false").map(|_| false),
            _ => Err(self.error("expected boolean")),
        }
    }

    /// A quoted string; escapes are resolved with standard JSON rules.
    pub(crate) fn string(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        self.expect(b'"')?;
        let mut escaped = false;
        loop {
            match self.peek() {
                None => return Err(self.error("unterminated string")),
                Some(b'\\') => {
                    escaped = true;
                    self.pos += 2;
                }
                Some(b'"') => {
                    self.pos += 1;
                    break;
                }
                Some(_) => self.pos += 1,
            }
        }
        if self.pos > self.buf.len() {
            return Err(self.error_at(start, "unterminated string"));
        }
        let raw = &self.buf[start..self.pos];
        if !escaped {
            return std::str::from_utf8(&raw[1..raw.len() - 1])
                .map(str::to_owned)
                .map_err(|_| self.error_at(start, "string is not valid UTF-8"));
        }
        serde_json::from_slice(raw).map_err(|e| self.error_at(start, format!("bad string: {e}")))
    }

    fn digits(&mut self) {
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
    }
}

/// Shortest text that parses back to exactly `x`.
pub(crate) fn write_number(out: &mut String, x: f64) {
    // `Display` for f64 emits the shortest round-trip digits without exponent.
    write!(out, "{x}").expect("write to String");
}

pub(crate) fn write_string(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("string serialization"));
}
