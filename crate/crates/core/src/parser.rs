//! Tokenizer and operator-precedence parser for the supported Prolog subset.
//!
//! Accepted: facts, rules, integers, atoms (plain, symbolic and quoted),
//! variables, lists with `[H|T]` sugar, parenthesised terms, the infix
//! operators used by the benchmark corpus and the `:- parallel Name/Arity.`
//! directive. `%` starts a line comment.

use std::collections::HashMap;
use std::fmt;

use crate::program::{Clause, Program};
use crate::term::{infix_priority, is_symbol_char, Sym, Term};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Atom(String),
    Var(String),
    Int(i64),
    /// `(` immediately following a name, opening an argument list.
    OpenCall,
    Open,
    Close,
    OpenList,
    CloseList,
    Bar,
    Comma,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Atom(a) => write!(f, "atom `{a}`"),
            Tok::Var(v) => write!(f, "variable `{v}`"),
            Tok::Int(i) => write!(f, "integer `{i}`"),
            Tok::OpenCall | Tok::Open => f.write_str("`(`"),
            Tok::Close => f.write_str("`)`"),
            Tok::OpenList => f.write_str("`[`"),
            Tok::CloseList => f.write_str("`]`"),
            Tok::Bar => f.write_str("`|`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::End => f.write_str("`.`"),
        }
    }
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer {
            chars: text.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            column: self.column,
        }
    }

    fn error(&self, pos: Pos, message: impl Into<String>) -> ParseError {
        ParseError {
            line: pos.line,
            column: pos.column,
            message: message.into(),
        }
    }

    fn skip_layout(&mut self) -> Result<(), ParseError> {
        loop {
            match self.chars.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('%') => {
                    while let Some(c) = self.bump() {
                        if c == '\n' {
                            break;
                        }
                    }
                }
                Some('/') => {
                    let mut look = self.chars.clone();
                    look.next();
                    if look.peek() != Some(&'*') {
                        return Ok(());
                    }
                    let start = self.pos();
                    self.bump();
                    self.bump();
                    let mut prev = ' ';
                    loop {
                        match self.bump() {
                            Some('/') if prev == '*' => break,
                            Some(c) => prev = c,
                            None => return Err(self.error(start, "unterminated block comment")),
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Pos)>, ParseError> {
        let mut out = Vec::new();
        loop {
            self.skip_layout()?;
            let pos = self.pos();
            let Some(&c) = self.chars.peek() else {
                return Ok(out);
            };
            let tok = if c.is_ascii_digit() {
                let mut digits = String::new();
                while let Some(&d) = self.chars.peek() {
                    if !d.is_ascii_digit() {
                        break;
                    }
                    digits.push(d);
                    self.bump();
                }
                Tok::Int(
                    digits
                        .parse()
                        .map_err(|_| self.error(pos, "integer literal out of range"))?,
                )
            } else if c.is_alphabetic() || c == '_' {
                let mut name = String::new();
                while let Some(&d) = self.chars.peek() {
                    if !(d.is_alphanumeric() || d == '_') {
                        break;
                    }
                    name.push(d);
                    self.bump();
                }
                if c.is_uppercase() || c == '_' {
                    Tok::Var(name)
                } else {
                    Tok::Atom(name)
                }
            } else if c == '\'' {
                self.bump();
                let mut name = String::new();
                loop {
                    match self.bump() {
                        Some('\'') => {
                            if self.chars.peek() == Some(&'\'') {
                                self.bump();
                                name.push('\'');
                            } else {
                                break;
                            }
                        }
                        Some('\\') => match self.bump() {
                            Some('n') => name.push('\n'),
                            Some('t') => name.push('\t'),
                            Some(e) => name.push(e),
                            None => return Err(self.error(pos, "unterminated quoted atom")),
                        },
                        Some(ch) => name.push(ch),
                        None => return Err(self.error(pos, "unterminated quoted atom")),
                    }
                }
                Tok::Atom(name)
            } else {
                match c {
                    '(' => {
                        self.bump();
                        Tok::Open
                    }
                    ')' => {
                        self.bump();
                        Tok::Close
                    }
                    '[' => {
                        self.bump();
                        if self.chars.peek() == Some(&']') {
                            self.bump();
                            Tok::Atom("[]".into())
                        } else {
                            Tok::OpenList
                        }
                    }
                    ']' => {
                        self.bump();
                        Tok::CloseList
                    }
                    '|' => {
                        self.bump();
                        Tok::Bar
                    }
                    ',' => {
                        self.bump();
                        Tok::Comma
                    }
                    '!' | ';' => {
                        self.bump();
                        Tok::Atom(c.to_string())
                    }
                    c if is_symbol_char(c) => {
                        let mut name = String::new();
                        while let Some(&d) = self.chars.peek() {
                            if !is_symbol_char(d) {
                                break;
                            }
                            name.push(d);
                            self.bump();
                        }
                        // A lone `.` followed by layout or EOF ends a clause.
                        if name == "." {
                            match self.chars.peek() {
                                None => Tok::End,
                                Some(n) if n.is_whitespace() || *n == '%' => Tok::End,
                                _ => Tok::Atom(name),
                            }
                        } else {
                            Tok::Atom(name)
                        }
                    }
                    other => return Err(self.error(pos, format!("unexpected character `{other}`"))),
                }
            };
            // An opening parenthesis glued to a name opens an argument list.
            let tok = match tok {
                Tok::Atom(_) if self.chars.peek() == Some(&'(') => {
                    out.push((tok, pos));
                    let p = self.pos();
                    self.bump();
                    (Tok::OpenCall, p)
                }
                t => (t, pos),
            };
            out.push(tok);
        }
    }
}

/// Clause- or query-level variable naming: named variables map to dense
/// local indices, `_` is always fresh.
#[derive(Default)]
struct VarScope {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl VarScope {
    fn var(&mut self, name: &str) -> Term {
        if name == "_" {
            let id = self.names.len() as u32;
            self.names.push("_".into());
            return Term::Var(id);
        }
        if let Some(&id) = self.index.get(name) {
            return Term::Var(id);
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        Term::Var(id)
    }
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    eof: Pos,
    scope: VarScope,
}

enum Assoc {
    Xfx,
    Xfy,
    Yfx,
}

fn infix(name: &str) -> Option<(u32, Assoc)> {
    let p = infix_priority(name)?;
    let assoc = match name {
        "," => Assoc::Xfy,
        "+" | "-" | "*" | "//" | "mod" | "/" => Assoc::Yfx,
        _ => Assoc::Xfx,
    };
    Some((p, assoc))
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.at).map(|(_, p)| *p).unwrap_or(self.eof)
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        let pos = self.pos();
        ParseError {
            line: pos.line,
            column: pos.column,
            message: message.into(),
        }
    }

    fn unexpected(&self) -> ParseError {
        match self.peek() {
            Some(t) => self.error(format!("unexpected {t}")),
            None => self.error("unexpected end of input"),
        }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).map(|(t, _)| t.clone());
        self.at += 1;
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        if self.peek() == Some(&want) {
            self.at += 1;
            Ok(())
        } else {
            Err(match self.peek() {
                Some(t) => self.error(format!("expected {want}, found {t}")),
                None => self.error(format!("expected {want}, found end of input")),
            })
        }
    }

    fn starts_term(&self) -> bool {
        matches!(
            self.peek(),
            Some(Tok::Atom(_) | Tok::Var(_) | Tok::Int(_) | Tok::Open | Tok::OpenList)
        )
    }

    /// Parses a term of priority at most `max`; returns the term and its
    /// priority.
    fn term(&mut self, max: u32) -> Result<(Term, u32), ParseError> {
        let (mut left, mut left_p) = self.primary(max)?;
        loop {
            let name = match self.peek() {
                Some(Tok::Comma) => ",".to_owned(),
                Some(Tok::Atom(a)) => a.clone(),
                _ => break,
            };
            let Some((p, assoc)) = infix(&name) else {
                break;
            };
            if p > max {
                break;
            }
            let (left_max, right_max) = match assoc {
                Assoc::Xfx => (p - 1, p - 1),
                Assoc::Xfy => (p - 1, p),
                Assoc::Yfx => (p, p - 1),
            };
            if left_p > left_max {
                break;
            }
            self.at += 1;
            let (right, _) = self.term(right_max)?;
            left = Term::compound(Sym::intern(&name), vec![left, right]);
            left_p = p;
        }
        Ok((left, left_p))
    }

    fn arglist(&mut self) -> Result<Vec<Term>, ParseError> {
        let mut args = vec![self.term(999)?.0];
        loop {
            match self.next() {
                Some(Tok::Comma) => args.push(self.term(999)?.0),
                Some(Tok::Close) => return Ok(args),
                _ => {
                    self.at -= 1;
                    return Err(self.unexpected());
                }
            }
        }
    }

    fn primary(&mut self, max: u32) -> Result<(Term, u32), ParseError> {
        let Some(tok) = self.next() else {
            return Err(self.error("unexpected end of input"));
        };
        match tok {
            Tok::Int(i) => Ok((Term::Int(i), 0)),
            Tok::Var(v) => Ok((self.scope.var(&v), 0)),
            Tok::Open | Tok::OpenCall => {
                let (t, _) = self.term(1200)?;
                self.expect(Tok::Close)?;
                Ok((t, 0))
            }
            Tok::OpenList => {
                let mut items = vec![self.term(999)?.0];
                let mut tail = Term::nil();
                loop {
                    match self.next() {
                        Some(Tok::Comma) => items.push(self.term(999)?.0),
                        Some(Tok::Bar) => {
                            tail = self.term(999)?.0;
                            self.expect(Tok::CloseList)?;
                            break;
                        }
                        Some(Tok::CloseList) => break,
                        _ => {
                            self.at -= 1;
                            return Err(self.unexpected());
                        }
                    }
                }
                let list = items.into_iter().rev().fold(tail, |tail, head| Term::cons(head, tail));
                Ok((list, 0))
            }
            Tok::Atom(name) => {
                if self.peek() == Some(&Tok::OpenCall) {
                    self.at += 1;
                    let args = self.arglist()?;
                    return Ok((Term::compound(Sym::intern(&name), args), 0));
                }
                if name == "-" {
                    if let Some(Tok::Int(i)) = self.peek() {
                        let i = *i;
                        self.at += 1;
                        return Ok((Term::Int(-i), 0));
                    }
                }
                if name == "-" && max >= 200 && self.starts_term() {
                    let (arg, _) = self.term(200)?;
                    return Ok((Term::compound(Sym::MINUS, vec![arg]), 200));
                }
                if name == ":-" && self.starts_term() {
                    if max < 1200 {
                        self.at -= 1;
                        return Err(self.error("prefix `:-` is only allowed at clause level"));
                    }
                    let (arg, _) = self.term(1199)?;
                    return Ok((Term::compound(Sym::intern(":-"), vec![arg]), 1200));
                }
                if name == "parallel" && max >= 1150 && self.starts_term() {
                    let (arg, _) = self.term(1149)?;
                    return Ok((Term::compound(Sym::intern("parallel"), vec![arg]), 1150));
                }
                let p = infix_priority(&name).unwrap_or(0);
                Ok((Term::Atom(Sym::intern(&name)), if p > max { 0 } else { p }))
            }
            _ => {
                self.at -= 1;
                Err(self.unexpected())
            }
        }
    }

    fn at_end(&self) -> bool {
        self.at >= self.toks.len()
    }
}

fn tokenize(text: &str) -> Result<(Vec<(Tok, Pos)>, Pos), ParseError> {
    let mut probe = Lexer::new(text);
    while probe.bump().is_some() {}
    Ok((Lexer::new(text).tokens()?, probe.pos()))
}

fn flatten_conjunction(t: Term, out: &mut Vec<Term>) {
    match t {
        Term::Struct(s, args) if s == Sym::COMMA && args.len() == 2 => {
            flatten_conjunction(args[0].clone(), out);
            flatten_conjunction(args[1].clone(), out);
        }
        Term::Atom(s) if s == Sym::TRUE => {}
        other => out.push(other),
    }
}

fn body_goals(body: Term, pos: Pos) -> Result<Vec<Term>, ParseError> {
    let mut goals = Vec::new();
    flatten_conjunction(body, &mut goals);
    for g in &goals {
        if !g.is_callable() {
            return Err(ParseError {
                line: pos.line,
                column: pos.column,
                message: format!("goal `{}` is not callable", g.quoted()),
            });
        }
    }
    Ok(goals)
}

fn parallel_directive(arg: &Term, out: &mut Vec<(Sym, u32)>) -> Result<(), String> {
    match arg {
        Term::Struct(s, a) if *s == Sym::COMMA => {
            parallel_directive(&a[0], out)?;
            parallel_directive(&a[1], out)
        }
        Term::Struct(s, a) if s.name() == "/" => match (&a[0], &a[1]) {
            (Term::Atom(name), Term::Int(n)) if *n >= 0 => {
                out.push((*name, *n as u32));
                Ok(())
            }
            _ => Err(format!("malformed predicate indicator `{}`", arg.quoted())),
        },
        _ => Err(format!("malformed predicate indicator `{}`", arg.quoted())),
    }
}

/// Parses a program text into an ordered clause list plus the set of
/// predicates declared parallel.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let (toks, eof) = tokenize(text)?;
    let mut p = Parser {
        toks,
        at: 0,
        eof,
        scope: VarScope::default(),
    };
    let mut clauses = Vec::new();
    let mut parallel = Vec::new();
    while !p.at_end() {
        p.scope = VarScope::default();
        let start = p.pos();
        let (t, _) = p.term(1200)?;
        p.expect(Tok::End)?;
        let var_names = std::mem::take(&mut p.scope.names);
        let err = |message: String| ParseError {
            line: start.line,
            column: start.column,
            message,
        };
        match t {
            Term::Struct(s, args) if s.name() == ":-" && args.len() == 1 => match &args[0] {
                Term::Struct(d, dargs) if d.name() == "parallel" && dargs.len() == 1 => {
                    parallel_directive(&dargs[0], &mut parallel).map_err(err)?;
                }
                other => {
                    return Err(err(format!("unsupported directive `{}`", other.quoted())));
                }
            },
            Term::Struct(s, args) if s.name() == ":-" && args.len() == 2 => {
                let head = args[0].clone();
                if !head.is_callable() {
                    return Err(err(format!("clause head `{}` is not callable", head.quoted())));
                }
                let body = body_goals(args[1].clone(), start)?;
                clauses.push(Clause {
                    head,
                    body,
                    var_count: var_names.len() as u32,
                });
            }
            head if head.is_callable() => clauses.push(Clause {
                head,
                body: Vec::new(),
                var_count: var_names.len() as u32,
            }),
            other => return Err(err(format!("clause head `{}` is not callable", other.quoted()))),
        }
    }
    Ok(Program::new(clauses, parallel))
}

/// A parsed query: a goal conjunction plus the names of its variables
/// (index = variable id; `_` variables are named `_`).
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub goals: Vec<Term>,
    pub var_names: Vec<String>,
}

impl Query {
    pub fn var_count(&self) -> u32 {
        self.var_names.len() as u32
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = |t: &Term| rename_vars(t, &self.var_names);
        for (i, g) in self.goals.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}", names(g))?;
        }
        write!(f, ".")
    }
}

fn rename_vars(t: &Term, names: &[String]) -> String {
    crate::program::print_with_names(t, &|v| names.get(v as usize).cloned())
}

/// Parses a single goal conjunction, with or without the final period.
pub fn parse_query(text: &str) -> Result<Query, ParseError> {
    let (toks, eof) = tokenize(text)?;
    let mut p = Parser {
        toks,
        at: 0,
        eof,
        scope: VarScope::default(),
    };
    if p.at_end() {
        return Err(p.error("empty query"));
    }
    let start = p.pos();
    let (t, _) = p.term(1200)?;
    if !p.at_end() {
        p.expect(Tok::End)?;
    }
    if !p.at_end() {
        return Err(p.error("unexpected input after the query"));
    }
    let goals = body_goals(t, start)?;
    if goals.is_empty() {
        return Ok(Query {
            goals: vec![Term::Atom(Sym::TRUE)],
            var_names: p.scope.names,
        });
    }
    Ok(Query {
        goals,
        var_names: p.scope.names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_directive_is_recorded() {
        let p = parse_program(":- parallel queens/2.\nqueens(N, Qs) :- q(N, Qs).\nq(_, []).").unwrap();
        assert!(p.is_parallel(Sym::intern("queens"), 2));
        assert!(!p.is_parallel(Sym::intern("q"), 2));
        assert_eq!(p.clauses().len(), 2);
    }

    #[test]
    fn rule_body_length() {
        let p = parse_program("p(X) :- q(X), r(X).").unwrap();
        assert_eq!(p.clauses().len(), 1);
        assert_eq!(p.clauses()[0].body.len(), 2);
        assert_eq!(p.clauses()[0].var_count, 1);
    }

    #[test]
    fn stray_period_is_located() {
        let e = parse_program("p(X) :- .").unwrap_err();
        assert_eq!((e.line, e.column), (1, 9));
        let e = parse_program("p(a).\n\nq(X) :- r(X) s.").unwrap_err();
        assert_eq!(e.line, 3);
    }

    #[test]
    fn queries() {
        let q = parse_query("queens(10, Qs).").unwrap();
        assert_eq!(q.goals.len(), 1);
        assert_eq!(q.var_names, vec!["Qs".to_owned()]);
        let q = parse_query("member(X,[1,2]), write(X).").unwrap();
        assert_eq!(q.goals.len(), 2);
        assert!(parse_query("").is_err());
        assert!(parse_query("   % nothing\n").is_err());
        let q = parse_query("p(X)").unwrap();
        assert_eq!(q.goals.len(), 1);
    }

    #[test]
    fn lists_operators_and_negatives() {
        let q = parse_query("X = [1,2|T], Y is -3 + 4 * 2, Z = a-b, W = 'hello world'").unwrap();
        let shown: Vec<String> = q.goals.iter().map(|g| g.display().to_string()).collect();
        assert_eq!(shown[0], "_G0=[1,2|_G1]");
        assert_eq!(shown[1], "_G2 is (-3)+4*2");
        assert_eq!(shown[2], "_G3=a-b");
        assert_eq!(shown[3], "_G4=hello world");
    }

    #[test]
    fn anonymous_variables_are_distinct() {
        let p = parse_program("f(_, _, X, X).").unwrap();
        let c = &p.clauses()[0];
        assert_eq!(c.var_count, 3);
    }

    #[test]
    fn comments_and_quotes() {
        let p = parse_program("% header\n/* block\ncomment */ a('it''s'). b :- a(_).").unwrap();
        assert_eq!(p.clauses().len(), 2);
        assert_eq!(p.clauses()[0].head.args()[0], Term::Atom(Sym::intern("it's")));
    }

    #[test]
    fn rejects_unsupported_syntax() {
        assert!(parse_program(":- dynamic foo/1.").is_err());
        assert!(parse_program("p :- X.").is_err());
        assert!(parse_program("3 :- p.").is_err());
        assert!(parse_program("p(").is_err());
        assert!(parse_program("p :- q").is_err());
    }
}
