//! Parser and renderer for the compact architecture notation, e.g.
//! `CONV(64)-Resblock(CONV(64)-CONV(64))*6-FC(1)`.
//!
//! Grammar (whitespace and keyword case are ignored):
//!
//! ```text
//! spec   := unit ("-" unit)*
//! unit   := KIND "(" int ["," int] ")"
//!         | BARE
//!         | "Resblock(" spec ")*" int
//!         | "(concatenate" spec ("," spec)* ")"
//! KIND   := FC | CONV | CNN | RNN | GRU | LSTM | AVGPOOL | MAXPOOL | DROPOUT
//! BARE   := FLATTEN | RELU | TANH | SIGMOID
//! ```
//!
//! Two unbalanced forms found in published tables are accepted: a
//! `Resblock(` whose closing parenthesis is missing before `*n`, and an
//! unclosed `(concatenate` at end of input, which closes after the first
//! unit of its last branch.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Activation;

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LayerSpec {
    Dense {
        width: usize,
    },
    Conv {
        filters: usize,
        kernel: Option<usize>,
    },
    Rnn {
        width: usize,
    },
    Gru {
        width: usize,
    },
    Lstm {
        width: usize,
    },
    ResBlock {
        inner: Vec<LayerSpec>,
        repeat: usize,
    },
    AvgPool {
        size: usize,
    },
    MaxPool {
        size: usize,
    },
    Flatten,
    Concat {
        branches: Vec<Vec<LayerSpec>>,
    },
    /// Rate in percent.
    Dropout {
        percent: usize,
    },
    Activation(Activation),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok {
    Ident,
    Int(usize),
    LParen,
    RParen,
    Dash,
    Comma,
    Star,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    /// Returns the next token, its start offset and (for identifiers) text.
    fn peek(&mut self) -> Result<(Tok, usize, &'a str)> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let Some(c) = rest.chars().next() else {
            return Ok((Tok::End, start, ""));
        };
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '-' => Tok::Dash,
            ',' => Tok::Comma,
            '*' => Tok::Star,
            c if c.is_ascii_digit() => {
                let len = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
                let v = rest[..len].parse().map_err(|_| Error::Syntax { offset: start, message: "integer out of range".into() })?;
                return Ok((Tok::Int(v), start, &rest[..len]));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let len = rest.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(rest.len());
                return Ok((Tok::Ident, start, &rest[..len]));
            }
            other => return Err(Error::Syntax { offset: start, message: format!("unexpected character `{other}`") }),
        };
        Ok((tok, start, &rest[..c.len_utf8()]))
    }

    fn next(&mut self) -> Result<(Tok, usize, &'a str)> {
        let t = self.peek()?;
        self.pos = t.1 + t.2.len();
        Ok(t)
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<usize> {
        let (tok, offset, _) = self.next()?;
        if tok == want {
            Ok(offset)
        } else {
            Err(Error::Syntax { offset, message: format!("expected {what}") })
        }
    }

    fn int(&mut self) -> Result<(usize, usize)> {
        match self.next()? {
            (Tok::Int(v), off, _) => Ok((v, off)),
            (_, offset, _) => Err(Error::Syntax { offset, message: "expected integer".into() }),
        }
    }

    fn positive(&mut self) -> Result<usize> {
        let (v, offset) = self.int()?;
        if v == 0 {
            return Err(Error::NonPositiveWidth { offset });
        }
        Ok(v)
    }
}

/// Parses architecture notation into layer specs.
pub fn parse_arch(text: &str) -> Result<Vec<LayerSpec>> {
    let mut lx = Lexer { src: text, pos: 0 };
    let spec = parse_spec(&mut lx)?;
    match lx.peek()? {
        (Tok::End, _, _) => Ok(spec),
        (_, offset, _) => Err(Error::Syntax { offset, message: "trailing input".into() }),
    }
}

fn parse_spec(lx: &mut Lexer<'_>) -> Result<Vec<LayerSpec>> {
    let mut units = parse_unit(lx)?;
    while let (Tok::Dash, _, _) = lx.peek()? {
        lx.next()?;
        units.extend(parse_unit(lx)?);
    }
    Ok(units)
}

fn parse_unit(lx: &mut Lexer<'_>) -> Result<Vec<LayerSpec>> {
    let (tok, offset, text) = lx.next()?;
    match tok {
        Tok::LParen => parse_concat(lx, offset),
        Tok::Ident => {
            let kind = text.to_ascii_uppercase();
            let bare = match kind.as_str() {
                "FLATTEN" => Some(LayerSpec::Flatten),
                "RELU" => Some(LayerSpec::Activation(Activation::Relu)),
                "TANH" => Some(LayerSpec::Activation(Activation::Tanh)),
                "SIGMOID" => Some(LayerSpec::Activation(Activation::Sigmoid)),
                _ => None,
            };
            if let Some(spec) = bare {
                return Ok(vec![spec]);
            }
            if kind == "RESBLOCK" {
                return parse_resblock(lx).map(|s| vec![s]);
            }
            let known = ["FC", "CONV", "CNN", "RNN", "GRU", "LSTM", "AVGPOOL", "MAXPOOL", "DROPOUT"];
            if !known.contains(&kind.as_str()) {
                return Err(Error::UnknownLayerKind { kind: text.to_string(), offset });
            }
            lx.expect(Tok::LParen, "`(`")?;
            let width = lx.positive()?;
            let mut kernel = None;
            if let (Tok::Comma, _, _) = lx.peek()? {
                if !matches!(kind.as_str(), "CONV" | "CNN") {
                    let (_, off, _) = lx.peek()?;
                    return Err(Error::Syntax { offset: off, message: format!("{kind} takes a single argument") });
                }
                lx.next()?;
                kernel = Some(lx.positive()?);
            }
            lx.expect(Tok::RParen, "`)`")?;
            Ok(vec![match kind.as_str() {
                "FC" => LayerSpec::Dense { width },
                "CONV" | "CNN" => LayerSpec::Conv { filters: width, kernel },
                "RNN" => LayerSpec::Rnn { width },
                "GRU" => LayerSpec::Gru { width },
                "LSTM" => LayerSpec::Lstm { width },
                "AVGPOOL" => LayerSpec::AvgPool { size: width },
                "MAXPOOL" => LayerSpec::MaxPool { size: width },
                "DROPOUT" => {
                    if width >= 100 {
                        return Err(Error::Syntax { offset, message: "dropout percent must be below 100".into() });
                    }
                    LayerSpec::Dropout { percent: width }
                }
                _ => unreachable!(),
            }])
        }
        _ => Err(Error::Syntax { offset, message: "expected a layer".into() }),
    }
}

fn parse_resblock(lx: &mut Lexer<'_>) -> Result<LayerSpec> {
    lx.expect(Tok::LParen, "`(` after Resblock")?;
    let inner = parse_spec(lx)?;
    match lx.next()? {
        (Tok::RParen, _, _) => {
            lx.expect(Tok::Star, "`*` after Resblock(...)")?;
        }
        // Unbalanced form: `Resblock(CONV(64)-CONV(64)*6`.
        (Tok::Star, _, _) => {}
        (_, offset, _) => return Err(Error::Syntax { offset, message: "expected `)*` closing Resblock".into() }),
    }
    let repeat = lx.positive()?;
    Ok(LayerSpec::ResBlock { inner, repeat })
}

fn parse_concat(lx: &mut Lexer<'_>, open: usize) -> Result<Vec<LayerSpec>> {
    match lx.next()? {
        (Tok::Ident, _, t) if t.eq_ignore_ascii_case("concatenate") => {}
        _ => return Err(Error::Syntax { offset: open, message: "expected `concatenate` after `(`".into() }),
    }
    let mut branches = vec![parse_spec(lx)?];
    loop {
        match lx.peek()? {
            (Tok::Comma, _, _) => {
                lx.next()?;
                branches.push(parse_spec(lx)?);
            }
            (Tok::RParen, _, _) => {
                lx.next()?;
                return Ok(vec![LayerSpec::Concat { branches }]);
            }
            (Tok::End, _, _) => {
                // Unclosed group: the last branch keeps its first unit and the
                // remainder continues the outer chain.
                let last = branches.last_mut().expect("at least one branch");
                let tail = last.split_off(1);
                let mut out = vec![LayerSpec::Concat { branches }];
                out.extend(tail);
                return Ok(out);
            }
            (_, offset, _) => return Err(Error::Syntax { offset, message: "expected `,` or `)` in concatenate".into() }),
        }
    }
}

/// Canonical notation for a layer list.
pub fn render(specs: &[LayerSpec]) -> String {
    specs.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("-")
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { width } => write!(f, "FC({width})"),
            LayerSpec::Conv { filters, kernel: None } => write!(f, "CONV({filters})"),
            LayerSpec::Conv { filters, kernel: Some(k) } => write!(f, "CONV({filters},{k})"),
            LayerSpec::Rnn { width } => write!(f, "RNN({width})"),
            LayerSpec::Gru { width } => write!(f, "GRU({width})"),
            LayerSpec::Lstm { width } => write!(f, "LSTM({width})"),
            LayerSpec::ResBlock { inner, repeat } => write!(f, "Resblock({})*{repeat}", render(inner)),
            LayerSpec::AvgPool { size } => write!(f, "AVGPOOL({size})"),
            LayerSpec::MaxPool { size } => write!(f, "MAXPOOL({size})"),
            LayerSpec::Flatten => write!(f, "FLATTEN"),
            LayerSpec::Concat { branches } => {
                let parts: Vec<String> = branches.iter().map(|b| render(b)).collect();
                write!(f, "(concatenate {})", parts.join(","))
            }
            LayerSpec::Dropout { percent } => write!(f, "DROPOUT({percent})"),
            LayerSpec::Activation(Activation::Relu) => write!(f, "RELU"),
            LayerSpec::Activation(Activation::Tanh) => write!(f, "TANH"),
            LayerSpec::Activation(Activation::Sigmoid) => write!(f, "SIGMOID"),
        }
    }
}
