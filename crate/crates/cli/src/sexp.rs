//! Minimal S-expression reader with source positions.
//!
//! Two list flavors: `(...)` for forms and `[...]` for ranges. Atoms are any
//! run of characters outside whitespace, delimiters, and `;` comments.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Sexp {
    Sym(String, Pos),
    Paren(Vec<Sexp>, Pos),
    Bracket(Vec<Sexp>, Pos),
}

impl Sexp {
    pub fn pos(&self) -> Pos {
        match self {
            Sexp::Sym(_, p) | Sexp::Paren(_, p) | Sexp::Bracket(_, p) => *p,
        }
    }

    pub fn as_sym(&self) -> Option<&str> {
        match self {
            Sexp::Sym(s, _) => Some(s),
            _ => None,
        }
    }
}

/// A syntax problem with its position, before being wrapped into the CLI
/// error type.
#[derive(Debug)]
pub struct SyntaxError {
    pub pos: Pos,
    pub message: String,
}

impl SyntaxError {
    fn new(pos: Pos, message: impl Into<String>) -> SyntaxError {
        SyntaxError {
            pos,
            message: message.into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    i: usize,
    line: u32,
    col: u32,
}

#[derive(Debug)]
enum Token {
    Open(Pos),
    Close(Pos),
    OpenB(Pos),
    CloseB(Pos),
    Atom(String, Pos),
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Lexer<'a> {
        Lexer {
            src: src.as_bytes(),
            i: 0,
            line: 1,
            col: 1,
        }
    }

    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            col: self.col,
        }
    }

    fn bump(&mut self) -> u8 {
        let c = self.src[self.i];
        self.i += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        c
    }

    fn next_token(&mut self) -> Result<Option<Token>, SyntaxError> {
        loop {
            if self.i >= self.src.len() {
                return Ok(None);
            }
            let c = self.src[self.i];
            match c {
                b' ' | b'\t' | b'\r' | b'\n' => {
                    self.bump();
                }
                b';' => {
                    while self.i < self.src.len() && self.src[self.i] != b'\n' {
                        self.bump();
                    }
                }
                b'(' => {
                    let p = self.pos();
                    self.bump();
                    return Ok(Some(Token::Open(p)));
                }
                b')' => {
                    let p = self.pos();
                    self.bump();
                    return Ok(Some(Token::Close(p)));
                }
                b'[' => {
                    let p = self.pos();
                    self.bump();
                    return Ok(Some(Token::OpenB(p)));
                }
                b']' => {
                    let p = self.pos();
                    self.bump();
                    return Ok(Some(Token::CloseB(p)));
                }
                _ => {
                    let p = self.pos();
                    let start = self.i;
                    while self.i < self.src.len()
                        && !matches!(
                            self.src[self.i],
                            b' ' | b'\t' | b'\r' | b'\n' | b'(' | b')' | b'[' | b']' | b';'
                        )
                    {
                        self.bump();
                    }
                    let text = std::str::from_utf8(&self.src[start..self.i])
                        .map_err(|_| SyntaxError::new(p, "invalid UTF-8 in atom"))?
                        .to_string();
                    return Ok(Some(Token::Atom(text, p)));
                }
            }
        }
    }
}

/// Read every top-level form in the source text.
pub fn read_all(src: &str) -> Result<Vec<Sexp>, SyntaxError> {
    let mut lexer = Lexer::new(src);
    // Stack of open lists: (position, is_bracket, elements).
    let mut stack: Vec<(Pos, bool, Vec<Sexp>)> = Vec::new();
    let mut top: Vec<Sexp> = Vec::new();
    while let Some(tok) = lexer.next_token()? {
        match tok {
            Token::Open(p) => stack.push((p, false, Vec::new())),
            Token::OpenB(p) => stack.push((p, true, Vec::new())),
            Token::Close(p) | Token::CloseB(p) => {
                let want_bracket = matches!(tok, Token::CloseB(_));
                let (open_pos, is_bracket, elems) = stack.pop().ok_or_else(|| {
                    SyntaxError::new(p, format!("unmatched `{}`", if want_bracket { "]" } else { ")" }))
                })?;
                if is_bracket != want_bracket {
                    return Err(SyntaxError::new(
                        p,
                        format!(
                            "mismatched delimiter: `{}` opened at {open_pos} closed with `{}`",
                            if is_bracket { "[" } else { "(" },
                            if want_bracket { "]" } else { ")" }
                        ),
                    ));
                }
                let node = if is_bracket {
                    Sexp::Bracket(elems, open_pos)
                } else {
                    Sexp::Paren(elems, open_pos)
                };
                match stack.last_mut() {
                    Some((_, _, parent)) => parent.push(node),
                    None => top.push(node),
                }
            }
            Token::Atom(text, p) => {
                let node = Sexp::Sym(text, p);
                match stack.last_mut() {
                    Some((_, _, parent)) => parent.push(node),
                    None => top.push(node),
                }
            }
        }
    }
    if let Some((pos, is_bracket, _)) = stack.pop() {
        return Err(SyntaxError::new(
            pos,
            format!("unclosed `{}`", if is_bracket { "[" } else { "(" }),
        ));
    }
    Ok(top)
}
