//! Tokenizer and statement parser shared by the fact, example, mode,
//! population and model formats.
//!
//! ```text
//! % comment
//! population person = {ann, bob}.
//! predicate friends(person, person).
//! mode: friends(+person, -person).
//! friends(ann, bob).
//! ```

use crate::error::{Error, Result};
use crate::logic::{ArgMode, Atom, ModeDeclaration, PredicateSignature, Term};

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Quoted(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Dot,
    Colon,
    Neck,
    Eq,
    Plus,
    Minus,
    Hash,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Quoted(s) => format!("\"{s}\""),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::LBrace => "'{'".into(),
            Tok::RBrace => "'}'".into(),
            Tok::Comma => "','".into(),
            Tok::Dot => "'.'".into(),
            Tok::Colon => "':'".into(),
            Tok::Neck => "':-'".into(),
            Tok::Eq => "'='".into(),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Hash => "'#'".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Pos {
    pub line: usize,
    pub column: usize,
}

pub(crate) fn tokenize(text: &str, first_line: usize, first_column: usize) -> Result<Vec<(Tok, Pos)>> {
    let mut out = Vec::new();
    let mut line = first_line;
    let mut col = first_column;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let pos = Pos { line, column: col };
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
                continue;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
                continue;
            }
            '%' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
                continue;
            }
            '"' => {
                chars.next();
                col += 1;
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('"') => {
                            col += 1;
                            break;
                        }
                        Some('\n') | None => {
                            return Err(Error::parse(pos.line, pos.column, "unterminated quoted constant"))
                        }
                        Some(c) => {
                            col += 1;
                            s.push(c);
                        }
                    }
                }
                out.push((Tok::Quoted(s), pos));
                continue;
            }
            c if c.is_alphanumeric() || c == '_' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        s.push(c);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                out.push((Tok::Ident(s), pos));
                continue;
            }
            _ => {}
        }
        chars.next();
        col += 1;
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            ',' => Tok::Comma,
            '.' => Tok::Dot,
            '=' => Tok::Eq,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '#' => Tok::Hash,
            ':' => {
                if chars.peek() == Some(&'-') {
                    chars.next();
                    col += 1;
                    Tok::Neck
                } else {
                    Tok::Colon
                }
            }
            other => {
                return Err(Error::parse(
                    pos.line,
                    pos.column,
                    format!("unexpected character '{other}'"),
                ))
            }
        };
        out.push((tok, pos));
    }
    Ok(out)
}

/// How bare identifiers in argument position are read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum TermStyle {
    /// Everything is a constant (fact and example files).
    Ground,
    /// Identifiers starting with an uppercase letter or `_` are logvars.
    Clause,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Statement {
    Population { name: String, constants: Vec<String> },
    Predicate(PredicateSignature),
    Mode(ModeDeclaration),
    Atom(Atom),
}

pub(crate) struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    end: Pos,
    style: TermStyle,
}

impl Parser {
    pub(crate) fn new(text: &str, style: TermStyle) -> Result<Self> {
        Self::with_offset(text, style, 1, 1)
    }

    pub(crate) fn with_offset(text: &str, style: TermStyle, line: usize, column: usize) -> Result<Self> {
        let toks = tokenize(text, line, column)?;
        let last_line = line + text.matches('\n').count();
        let last_col =
            text.rsplit('\n').next().map_or(0, |l| l.chars().count()) + if text.contains('\n') { 1 } else { column };
        Ok(Parser {
            toks,
            at: 0,
            end: Pos {
                line: last_line,
                column: last_col,
            },
            style,
        })
    }

    pub(crate) fn at_end(&self) -> bool {
        self.at >= self.toks.len()
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.at + 1).map(|(t, _)| t)
    }

    pub(crate) fn pos(&self) -> Pos {
        self.toks.get(self.at).map_or(self.end, |(_, p)| *p)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        let p = self.pos();
        Err(Error::parse(p.line, p.column, message))
    }

    fn expect(&mut self, want: Tok) -> Result<()> {
        match self.peek() {
            Some(t) if *t == want => {
                self.at += 1;
                Ok(())
            }
            Some(t) => {
                let msg = format!("expected {}, found {}", want.describe(), t.describe());
                self.error(msg)
            }
            None => self.error(format!("expected {}, found end of input", want.describe())),
        }
    }

    pub(crate) fn eat(&mut self, want: &Tok) -> bool {
        if self.peek() == Some(want) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match self.peek().cloned() {
            Some(Tok::Ident(s)) => {
                self.at += 1;
                Ok(s)
            }
            Some(t) => self.error(format!("expected {what}, found {}", t.describe())),
            None => self.error(format!("expected {what}, found end of input")),
        }
    }

    fn constant(&mut self) -> Result<String> {
        match self.peek().cloned() {
            Some(Tok::Ident(s)) | Some(Tok::Quoted(s)) => {
                self.at += 1;
                Ok(s)
            }
            Some(t) => self.error(format!("expected a constant, found {}", t.describe())),
            None => self.error("expected a constant, found end of input"),
        }
    }

    fn term(&mut self) -> Result<Term> {
        match self.peek().cloned() {
            Some(Tok::Quoted(s)) => {
                self.at += 1;
                Ok(Term::Const(s))
            }
            Some(Tok::Ident(s)) => {
                self.at += 1;
                let first = s.chars().next().expect("identifiers are nonempty");
                if self.style == TermStyle::Clause && (first.is_uppercase() || first == '_') {
                    Ok(Term::Var(s))
                } else {
                    Ok(Term::Const(s))
                }
            }
            Some(t) => self.error(format!("expected a term, found {}", t.describe())),
            None => self.error("expected a term, found end of input"),
        }
    }

    fn comma_list<T>(&mut self, close: Tok, mut item: impl FnMut(&mut Self) -> Result<T>) -> Result<Vec<T>> {
        let mut items = Vec::new();
        if self.eat(&close) {
            return Ok(items);
        }
        loop {
            items.push(item(self)?);
            if self.eat(&Tok::Comma) {
                continue;
            }
            self.expect(close.clone())?;
            return Ok(items);
        }
    }

    /// `name(term, ...)`
    pub(crate) fn atom(&mut self) -> Result<Atom> {
        let name = self.ident("a predicate name")?;
        self.expect(Tok::LParen)?;
        let args = self.comma_list(Tok::RParen, Self::term)?;
        if args.is_empty() {
            return self.error(format!("predicate '{name}' needs at least one argument"));
        }
        Ok(Atom::new(name, args))
    }

    /// Comma-separated atoms, or the keyword `true` for the empty conjunction.
    pub(crate) fn body(&mut self) -> Result<Vec<Atom>> {
        if self.peek() == Some(&Tok::Ident("true".into())) && self.peek2() != Some(&Tok::LParen) {
            self.at += 1;
            return Ok(Vec::new());
        }
        let mut lits = vec![self.atom()?];
        while self.eat(&Tok::Comma) {
            lits.push(self.atom()?);
        }
        Ok(lits)
    }

    fn keyword_here(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw) && !matches!(self.peek2(), Some(Tok::LParen))
    }

    pub(crate) fn statement(&mut self) -> Result<(Statement, Pos)> {
        let pos = self.pos();
        let stmt = if self.keyword_here("population") {
            self.at += 1;
            let name = self.ident("a population name")?;
            self.expect(Tok::Eq)?;
            self.expect(Tok::LBrace)?;
            let constants = self.comma_list(Tok::RBrace, Self::constant)?;
            Statement::Population { name, constants }
        } else if self.keyword_here("predicate") {
            self.at += 1;
            let name = self.ident("a predicate name")?;
            self.expect(Tok::LParen)?;
            let types = self.comma_list(Tok::RParen, |p| p.ident("a type name"))?;
            Statement::Predicate(PredicateSignature::new(name, types))
        } else if self.keyword_here("mode") {
            self.at += 1;
            self.expect(Tok::Colon)?;
            let name = self.ident("a predicate name")?;
            self.expect(Tok::LParen)?;
            let args = self.comma_list(Tok::RParen, |p| {
                let mode = if p.eat(&Tok::Plus) {
                    ArgMode::Input
                } else if p.eat(&Tok::Minus) {
                    ArgMode::Output
                } else if p.eat(&Tok::Hash) {
                    ArgMode::Constant
                } else {
                    return p.error("expected '+', '-' or '#' before a mode argument type");
                };
                Ok((mode, p.ident("a type name")?))
            })?;
            Statement::Mode(ModeDeclaration::new(name, args))
        } else {
            Statement::Atom(self.atom()?)
        };
        self.expect(Tok::Dot)?;
        Ok((stmt, pos))
    }

    pub(crate) fn statements(mut self) -> Result<Vec<(Statement, Pos)>> {
        let mut out = Vec::new();
        while !self.at_end() {
            out.push(self.statement()?);
        }
        Ok(out)
    }
}
