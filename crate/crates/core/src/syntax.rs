//! Tokenizer shared by the predicate and policy grammars.

use std::fmt;

use num_rational::BigRational;
use thiserror::Error;

use crate::value::parse_decimal;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(pos: Pos, message: impl Into<String>) -> Self {
        ParseError {
            line: pos.line,
            col: pos.col,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Var(String),
    Str(String),
    Num(BigRational),
    AndAnd,
    OrOr,
    Bang,
    Eq,
    Neq,
    Lt,
    Gt,
    Le,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Arrow,
    Newline,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Var(s) => write!(f, "`${s}`"),
            Tok::Str(s) => write!(f, "string {s:?}"),
            Tok::Num(n) => write!(f, "number {n}"),
            Tok::AndAnd => f.write_str("`&&`"),
            Tok::OrOr => f.write_str("`||`"),
            Tok::Bang => f.write_str("`!`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Neq => f.write_str("`!=`"),
            Tok::Lt => f.write_str("`<`"),
            Tok::Gt => f.write_str("`>`"),
            Tok::Le => f.write_str("`<=`"),
            Tok::Ge => f.write_str("`>=`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Newline => f.write_str("end of line"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Splits `src` into tokens. `#` starts a comment running to end of line.
pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        let next = chars.get(i + 1).copied();
        let mut advance = 1;
        let tok = match c {
            '\n' => {
                out.push(Token {
                    tok: Tok::Newline,
                    pos,
                });
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
                continue;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                    col += 1;
                }
                continue;
            }
            '&' if next == Some('&') => {
                advance = 2;
                Tok::AndAnd
            }
            '|' if next == Some('|') => {
                advance = 2;
                Tok::OrOr
            }
            '!' if next == Some('=') => {
                advance = 2;
                Tok::Neq
            }
            '!' => Tok::Bang,
            '=' if next == Some('=') => {
                return Err(ParseError::new(pos, "unknown operator `==` (use `=`)"));
            }
            '=' => Tok::Eq,
            '<' if next == Some('=') => {
                advance = 2;
                Tok::Le
            }
            '<' => Tok::Lt,
            '>' if next == Some('=') => {
                advance = 2;
                Tok::Ge
            }
            '>' => Tok::Gt,
            '-' if next == Some('>') => {
                advance = 2;
                Tok::Arrow
            }
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            ',' => Tok::Comma,
            ':' => Tok::Colon,
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match chars.get(j) {
                        None | Some('\n') => return Err(ParseError::new(pos, "unterminated string literal")),
                        Some('"') => break,
                        Some('\\') => {
                            let esc = chars.get(j + 1).copied();
                            s.push(match esc {
                                Some('n') => '\n',
                                Some('t') => '\t',
                                Some('"') => '"',
                                Some('\\') => '\\',
                                _ => {
                                    return Err(ParseError::new(
                                        Pos {
                                            line,
                                            col: col + (j - i),
                                        },
                                        "unknown escape sequence",
                                    ))
                                }
                            });
                            j += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            j += 1;
                        }
                    }
                }
                advance = j + 1 - i;
                Tok::Str(s)
            }
            '$' => {
                let mut j = i + 1;
                while j < chars.len() && is_ident_char(chars[j]) {
                    j += 1;
                }
                if j == i + 1 {
                    return Err(ParseError::new(pos, "`$` must be followed by a variable name"));
                }
                advance = j - i;
                Tok::Var(chars[i + 1..j].iter().collect())
            }
            c if c.is_ascii_digit() || (c == '.' && next.is_some_and(|d| d.is_ascii_digit())) => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                advance = j - i;
                let n = parse_decimal(&text)
                    .ok_or_else(|| ParseError::new(pos, format!("malformed number `{text}`")))?;
                Tok::Num(n)
            }
            c if is_ident_start(c) => {
                let mut j = i;
                while j < chars.len() && is_ident_char(chars[j]) {
                    j += 1;
                }
                advance = j - i;
                Tok::Ident(chars[i..j].iter().collect())
            }
            other => {
                return Err(ParseError::new(pos, format!("unknown operator token `{other}`")));
            }
        };
        out.push(Token { tok, pos });
        i += advance;
        col += advance;
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Pos { line, col },
    });
    Ok(out)
}

/// Cursor over a token stream.
///
/// While `nesting` is positive, newlines are invisible, so parenthesised or
/// braced expressions may span lines.
pub struct Cursor {
    tokens: Vec<Token>,
    idx: usize,
    pub nesting: usize,
}

impl Cursor {
    pub fn new(tokens: Vec<Token>) -> Self {
        Cursor {
            tokens,
            idx: 0,
            nesting: 0,
        }
    }

    fn skip_hidden(&mut self) {
        if self.nesting > 0 {
            while self.tokens[self.idx].tok == Tok::Newline {
                self.idx += 1;
            }
        }
    }

    pub fn peek(&mut self) -> &Token {
        self.skip_hidden();
        &self.tokens[self.idx]
    }

    /// Looks one token past `peek()` without consuming.
    pub fn peek2(&mut self) -> &Token {
        self.skip_hidden();
        let mut j = self.idx + 1;
        if self.nesting > 0 {
            while j < self.tokens.len() && self.tokens[j].tok == Tok::Newline {
                j += 1;
            }
        }
        &self.tokens[j.min(self.tokens.len() - 1)]
    }

    pub fn bump(&mut self) -> Token {
        self.skip_hidden();
        let t = self.tokens[self.idx].clone();
        if t.tok != Tok::Eof {
            self.idx += 1;
        }
        t
    }

    pub fn eat(&mut self, tok: &Tok) -> bool {
        if &self.peek().tok == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn expect(&mut self, tok: &Tok) -> Result<Token, ParseError> {
        let t = self.bump();
        if &t.tok == tok {
            Ok(t)
        } else {
            Err(ParseError::new(t.pos, format!("expected {tok}, found {}", t.tok)))
        }
    }

    pub fn skip_newlines(&mut self) {
        while self.tokens[self.idx].tok == Tok::Newline {
            self.idx += 1;
        }
    }
}
