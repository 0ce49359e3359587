//! Tokenizer for rule source text.
//!
//! `#` starts a line comment. Identifiers are `[A-Za-z_][A-Za-z0-9_]*`;
//! `forall`, `exists` and `in` are keywords.

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    Ident(String),
    Number(f64),
    Forall,
    Exists,
    In,
    LParen,
    RParen,
    Comma,
    Colon,
    Assign,
    Bang,
    Amp,
    Pipe,
    Arrow,
}

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Token::Ident(s) => write!(f, "identifier {s:?}"),
            Token::Number(n) => write!(f, "number {n}"),
            Token::Forall => f.write_str("`forall`"),
            Token::Exists => f.write_str("`exists`"),
            Token::In => f.write_str("`in`"),
            Token::LParen => f.write_str("`(`"),
            Token::RParen => f.write_str("`)`"),
            Token::Comma => f.write_str("`,`"),
            Token::Colon => f.write_str("`:`"),
            Token::Assign => f.write_str("`=`"),
            Token::Bang => f.write_str("`!`"),
            Token::Amp => f.write_str("`&`"),
            Token::Pipe => f.write_str("`|`"),
            Token::Arrow => f.write_str("`->`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpannedToken {
    pub token: Token,
    pub line: usize,
    pub col: usize,
}

pub fn lex(src: &str) -> Result<Vec<SpannedToken>, ParseError> {
    let mut tokens = Vec::new();
    let mut chars = src.chars().peekable();
    let mut line = 1usize;
    let mut col = 1usize;

    macro_rules! push {
        ($tok:expr, $start_col:expr) => {
            tokens.push(SpannedToken {
                token: $tok,
                line,
                col: $start_col,
            })
        };
    }

    while let Some(&c) = chars.peek() {
        let start_col = col;
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                    col += 1;
                }
            }
            '(' => {
                chars.next();
                col += 1;
                push!(Token::LParen, start_col);
            }
            ')' => {
                chars.next();
                col += 1;
                push!(Token::RParen, start_col);
            }
            ',' => {
                chars.next();
                col += 1;
                push!(Token::Comma, start_col);
            }
            ':' => {
                chars.next();
                col += 1;
                push!(Token::Colon, start_col);
            }
            '=' => {
                chars.next();
                col += 1;
                push!(Token::Assign, start_col);
            }
            '!' => {
                chars.next();
                col += 1;
                push!(Token::Bang, start_col);
            }
            '&' => {
                chars.next();
                col += 1;
                push!(Token::Amp, start_col);
            }
            '|' => {
                chars.next();
                col += 1;
                push!(Token::Pipe, start_col);
            }
            '-' => {
                chars.next();
                col += 1;
                match chars.peek() {
                    Some('>') => {
                        chars.next();
                        col += 1;
                        push!(Token::Arrow, start_col);
                    }
                    _ => {
                        return Err(ParseError::Lex {
                            line,
                            col: start_col,
                            message: "expected `>` after `-`".into(),
                        })
                    }
                }
            }
            c if c.is_ascii_digit() => {
                let mut text = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_digit() || c == '.' {
                        text.push(c);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                let value: f64 = text.parse().map_err(|_| ParseError::Lex {
                    line,
                    col: start_col,
                    message: format!("malformed number {text:?}"),
                })?;
                push!(Token::Number(value), start_col);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut text = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        text.push(c);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                let tok = match text.as_str() {
                    "forall" => Token::Forall,
                    "exists" => Token::Exists,
                    "in" => Token::In,
                    _ => Token::Ident(text),
                };
                push!(tok, start_col);
            }
            other => {
                return Err(ParseError::Lex {
                    line,
                    col: start_col,
                    message: format!("unexpected character {other:?}"),
                })
            }
        }
    }
    Ok(tokens)
}
