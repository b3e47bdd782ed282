//! Parser for the textual regularizer syntax.
//!
//! ```text
//! spec := shannon
//!       | tsallis:k=<f>,q=<f>
//!       | cos:theta=<f> | sin:theta=<f>
//!       | exp:k=<f>,q=<f>
//!       | sum(<w>*<spec>[+<w>*<spec>]...)
//!       | min(<spec>,<spec>)
//!       | tsallis | cos | exp | min | poly | mix      (named presets)
//! ```
//!
//! Whitespace is ignored everywhere.

use std::str::FromStr;

use thiserror::Error;

use super::{Regularizer, RegularizerError};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("cannot parse regularizer at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl FromStr for Regularizer {
    type Err = RegularizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let mut p = Parser {
            src: compact.as_bytes(),
            pos: 0,
        };
        let reg = p.spec()?;
        if p.pos != p.src.len() {
            return Err(p.error("trailing input").into());
        }
        Ok(reg)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.src[self.pos..].starts_with(lit.as_bytes()) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, lit: &str) -> Result<(), ParseError> {
        if self.eat(lit) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{lit}`")))
        }
    }

    fn ident(&mut self) -> &str {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphabetic()) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("")
    }

    /// A float literal. Signs are accepted only at the start or right after
    /// an exponent marker, so `+` can still separate sum terms.
    fn number(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        let mut prev: Option<u8> = None;
        while let Some(c) = self.peek() {
            let ok = c.is_ascii_digit()
                || c == b'.'
                || c == b'e'
                || c == b'E'
                || ((c == b'-' || c == b'+') && (prev.is_none() || matches!(prev, Some(b'e' | b'E'))));
            if !ok {
                break;
            }
            prev = Some(c);
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>().map_err(|_| ParseError {
            offset: start,
            message: format!("invalid number `{text}`"),
        })
    }

    fn param(&mut self, name: &str) -> Result<f64, ParseError> {
        self.expect(name)?;
        self.expect("=")?;
        self.number()
    }

    fn spec(&mut self) -> Result<Regularizer, RegularizerError> {
        let start = self.pos;
        let name = self.ident().to_string();
        let reg = match name.as_str() {
            "shannon" => Regularizer::shannon(),
            "tsallis" | "exp" | "cos" | "sin" if self.peek() == Some(b':') => {
                self.pos += 1;
                match name.as_str() {
                    "tsallis" | "exp" => {
                        let k = self.param("k")?;
                        self.expect(",")?;
                        let q = self.param("q")?;
                        if name == "tsallis" {
                            Regularizer::tsallis(k, q)?
                        } else {
                            Regularizer::exponential(k, q)?
                        }
                    }
                    _ => {
                        let theta = self.param("theta")?;
                        if name == "cos" {
                            Regularizer::cosine(theta)?
                        } else {
                            Regularizer::sine(theta)?
                        }
                    }
                }
            }
            "sum" if self.peek() == Some(b'(') => {
                self.pos += 1;
                let mut terms = Vec::new();
                loop {
                    let w = self.number()?;
                    self.expect("*")?;
                    terms.push((w, self.spec()?));
                    if !self.eat("+") {
                        break;
                    }
                }
                self.expect(")")?;
                Regularizer::combine_sum(terms)?
            }
            "min" if self.peek() == Some(b'(') => {
                self.pos += 1;
                let a = self.spec()?;
                self.expect(",")?;
                let b = self.spec()?;
                self.expect(")")?;
                Regularizer::combine_min(a, b)?
            }
            other => match Regularizer::preset(other) {
                Some(r) => r,
                None => {
                    return Err(ParseError {
                        offset: start,
                        message: format!("unknown regularizer `{other}`"),
                    }
                    .into())
                }
            },
        };
        Ok(reg)
    }
}
