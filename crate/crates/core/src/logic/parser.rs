//! Recursive-descent parser for the rule language.
//!
//! ```text
//! formula := or
//! or      := and { "OR" and }
//! and     := unary { "AND" unary }
//! unary   := "NOT" unary | primary
//! primary := "(" formula ")" | atom
//! atom    := ident "(" binding { "," binding } ")" | ident "." ident "=" ident
//! binding := ident "=" ident
//! ```
//!
//! Keywords are case-insensitive. Identifiers are validated against a
//! taxonomy only later, at desugaring.

use thiserror::Error;

use super::Formula;
use crate::taxonomy::{normalize_identifier, AtomicFormula};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("syntax error at line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    And,
    Or,
    Not,
    LParen,
    RParen,
    Comma,
    Dot,
    Eq,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier {s:?}"),
            Tok::And => "AND".into(),
            Tok::Or => "OR".into(),
            Tok::Not => "NOT".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
            Tok::Dot => "'.'".into(),
            Tok::Eq => "'='".into(),
            Tok::End => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '-' || c == '_'
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let (mut line, mut column) = (1, 1);
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (tl, tc) = (line, column);
        let simple = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '.' => Some(Tok::Dot),
            '=' => Some(Tok::Eq),
            _ => None,
        };
        if let Some(tok) = simple {
            chars.next();
            column += 1;
            out.push(Spanned {
                tok,
                line: tl,
                column: tc,
            });
        } else if c == '\n' {
            chars.next();
            line += 1;
            column = 1;
        } else if c.is_whitespace() {
            chars.next();
            column += 1;
        } else if is_ident_char(c) {
            let mut word = String::new();
            while let Some(&c) = chars.peek() {
                if !is_ident_char(c) {
                    break;
                }
                word.push(c);
                chars.next();
                column += 1;
            }
            let tok = match word.to_ascii_uppercase().as_str() {
                "AND" => Tok::And,
                "OR" => Tok::Or,
                "NOT" => Tok::Not,
                _ => Tok::Ident(normalize_identifier(&word)),
            };
            out.push(Spanned {
                tok,
                line: tl,
                column: tc,
            });
        } else {
            return Err(ParseError {
                line,
                column,
                message: format!("unexpected character {c:?}"),
            });
        }
    }
    out.push(Spanned {
        tok: Tok::End,
        line,
        column,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> ParseError {
        let t = self.peek();
        ParseError {
            line: t.line,
            column: t.column,
            message: format!("expected {expected}, found {}", t.tok.describe()),
        }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), ParseError> {
        if self.peek().tok == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(expected))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match &self.peek().tok {
            Tok::Ident(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error("identifier")),
        }
    }

    fn or(&mut self) -> Result<Formula, ParseError> {
        let mut items = vec![self.and()?];
        while self.peek().tok == Tok::Or {
            self.bump();
            items.push(self.and()?);
        }
        Ok(Formula::or(items))
    }

    fn and(&mut self) -> Result<Formula, ParseError> {
        let mut items = vec![self.unary()?];
        while self.peek().tok == Tok::And {
            self.bump();
            items.push(self.unary()?);
        }
        Ok(Formula::and(items))
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        if self.peek().tok == Tok::Not {
            self.bump();
            return Ok(Formula::not(self.unary()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Formula, ParseError> {
        if self.peek().tok == Tok::LParen {
            self.bump();
            let inner = self.or()?;
            self.expect(Tok::RParen, "')'")?;
            return Ok(inner);
        }
        let head = self.ident().map_err(|_| self.error("'(', NOT or identifier"))?;
        match self.peek().tok {
            Tok::Dot => {
                self.bump();
                let attribute = self.ident()?;
                self.expect(Tok::Eq, "'='")?;
                let value = self.ident()?;
                Ok(Formula::Pred {
                    category: head,
                    attribute,
                    value,
                })
            }
            Tok::LParen => {
                let open = self.bump();
                let mut bindings: Vec<(String, String)> = Vec::new();
                loop {
                    let attr_tok = self.peek().clone();
                    let attr = self.ident()?;
                    self.expect(Tok::Eq, "'='")?;
                    let value = self.ident()?;
                    if bindings.iter().any(|(a, _)| *a == attr) {
                        return Err(ParseError {
                            line: attr_tok.line,
                            column: attr_tok.column,
                            message: format!("attribute {attr:?} bound twice"),
                        });
                    }
                    bindings.push((attr, value));
                    match self.peek().tok {
                        Tok::Comma => {
                            self.bump();
                        }
                        Tok::RParen => {
                            self.bump();
                            break;
                        }
                        _ => {
                            let mut e = self.error("',' or ')'");
                            if self.peek().tok == Tok::End {
                                e.message.push_str(&format!(
                                    " (unclosed '(' at line {}, column {})",
                                    open.line, open.column
                                ));
                            }
                            return Err(e);
                        }
                    }
                }
                Ok(Formula::Atom(AtomicFormula {
                    category: head,
                    bindings,
                }))
            }
            _ => Err(self.error("'.' or '('")),
        }
    }
}

pub fn parse_formula(text: &str) -> Result<Formula, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let f = p.or()?;
    if p.peek().tok != Tok::End {
        return Err(p.error("end of input"));
    }
    Ok(f)
}
