//! Recursive-descent parser for the formula text grammar.
//!
//! Precedence, tightest first: `!`, the temporal prefixes `F[a,b]` and
//! `G[a,b]`, `&`, `|`, and finally the binary `U[a,b]` which associates to
//! the left. Parentheses group.

use std::fmt;

use thiserror::Error;

use super::{Formula, Interval};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Not,
    And,
    Or,
    Until,
    Eventually,
    Globally,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Int(i) => write!(f, "integer `{i}`"),
            Tok::Not => f.write_str("`!`"),
            Tok::And => f.write_str("`&`"),
            Tok::Or => f.write_str("`|`"),
            Tok::Until => f.write_str("`U`"),
            Tok::Eventually => f.write_str("`F`"),
            Tok::Globally => f.write_str("`G`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::LBracket => f.write_str("`[`"),
            Tok::RBracket => f.write_str("`]`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pos {
    line: usize,
    column: usize,
}

fn err(pos: Pos, message: impl Into<String>) -> ParseError {
    ParseError {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut column) = (1, 1);

    while let Some(&c) = chars.peek() {
        let pos = Pos { line, column };
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars<'_>>| {
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                column = 1;
            } else {
                column += 1;
            }
            c
        };
        match c {
            c if c.is_whitespace() => {
                bump(&mut chars);
            }
            '!' | '&' | '|' | '(' | ')' | '[' | ']' | ',' => {
                bump(&mut chars);
                out.push((
                    match c {
                        '!' => Tok::Not,
                        '&' => Tok::And,
                        '|' => Tok::Or,
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        '[' => Tok::LBracket,
                        ']' => Tok::RBracket,
                        _ => Tok::Comma,
                    },
                    pos,
                ));
            }
            '-' | '0'..='9' => {
                let mut s = String::new();
                if c == '-' {
                    s.push('-');
                    bump(&mut chars);
                }
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_digit() {
                        s.push(d);
                        bump(&mut chars);
                    } else {
                        break;
                    }
                }
                let v = s
                    .parse::<i64>()
                    .map_err(|_| err(pos, format!("malformed integer `{s}`")))?;
                out.push((Tok::Int(v), pos));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_alphanumeric() || d == '_' {
                        s.push(d);
                        bump(&mut chars);
                    } else {
                        break;
                    }
                }
                let tok = match s.as_str() {
                    "U" => Tok::Until,
                    "F" => Tok::Eventually,
                    "G" => Tok::Globally,
                    _ => Tok::Ident(s),
                };
                out.push((tok, pos));
            }
            other => return Err(err(pos, format!("unexpected character `{other}`"))),
        }
    }
    out.push((Tok::Eof, Pos { line, column }));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn next(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<Pos, ParseError> {
        let (tok, pos) = self.next();
        if tok == want {
            Ok(pos)
        } else {
            Err(err(pos, format!("expected {want}, found {tok}")))
        }
    }

    fn until(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.or()?;
        while *self.peek() == Tok::Until {
            self.next();
            let interval = self.interval()?;
            let rhs = self.or()?;
            lhs = Formula::Until {
                interval,
                left: Box::new(lhs),
                right: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula, ParseError> {
        let mut items = vec![self.and()?];
        while *self.peek() == Tok::Or {
            self.next();
            items.push(self.and()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Formula::Or(items)
        })
    }

    fn and(&mut self) -> Result<Formula, ParseError> {
        let mut items = vec![self.unary()?];
        while *self.peek() == Tok::And {
            self.next();
            items.push(self.unary()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Formula::And(items)
        })
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        match self.peek() {
            Tok::Not => {
                self.next();
                Ok(Formula::Not(Box::new(self.unary()?)))
            }
            Tok::Eventually => {
                self.next();
                let interval = self.interval()?;
                Ok(Formula::Eventually {
                    interval,
                    body: Box::new(self.unary()?),
                })
            }
            Tok::Globally => {
                self.next();
                let interval = self.interval()?;
                Ok(Formula::Globally {
                    interval,
                    body: Box::new(self.unary()?),
                })
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<Formula, ParseError> {
        let (tok, pos) = self.next();
        match tok {
            Tok::Ident(name) => Ok(Formula::Pred(name)),
            Tok::LParen => {
                let inner = self.until()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            other => Err(err(pos, format!("expected a predicate or `(`, found {other}"))),
        }
    }

    fn bound(&mut self) -> Result<(i64, Pos), ParseError> {
        let (tok, pos) = self.next();
        match tok {
            Tok::Int(v) => Ok((v, pos)),
            other => Err(err(pos, format!("expected an integer bound, found {other}"))),
        }
    }

    fn interval(&mut self) -> Result<Interval, ParseError> {
        self.expect(Tok::LBracket)?;
        let (lo, lo_pos) = self.bound()?;
        self.expect(Tok::Comma)?;
        let (hi, hi_pos) = self.bound()?;
        self.expect(Tok::RBracket)?;
        if lo < 0 {
            return Err(err(lo_pos, format!("negative interval bound {lo}")));
        }
        if hi < 0 {
            return Err(err(hi_pos, format!("negative interval bound {hi}")));
        }
        if hi < lo {
            return Err(err(lo_pos, format!("inverted interval [{lo},{hi}]")));
        }
        let cast = |v: i64, p: Pos| {
            u32::try_from(v).map_err(|_| err(p, format!("interval bound {v} is too large")))
        };
        Ok(Interval {
            lo: cast(lo, lo_pos)?,
            hi: cast(hi, hi_pos)?,
        })
    }
}

/// Parse formula text into a [`Formula`].
pub fn parse(text: &str) -> Result<Formula, ParseError> {
    let mut p = Parser {
        toks: lex(text)?,
        at: 0,
    };
    let f = p.until()?;
    let (tok, pos) = p.next();
    if tok != Tok::Eof {
        return Err(err(pos, format!("unexpected {tok} after complete formula")));
    }
    Ok(f)
}
