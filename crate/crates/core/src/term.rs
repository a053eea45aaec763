//! Terms, interned symbols and term printing.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

/// Interned atom or functor name. Symbols are process-global, so every agent
/// of a run (and every run of a process) agrees on their numbering.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Sym(pub u32);

struct Interner {
    names: Vec<&'static str>,
    ids: HashMap<&'static str, u32>,
}

const PREDEFINED: &[&str] = &[
    "[]", ".", "true", "fail", ",", "-", "+", "*", "//", "/", "mod", "abs", "min", "max",
];

fn interner() -> &'static RwLock<Interner> {
    static INTERNER: OnceLock<RwLock<Interner>> = OnceLock::new();
    INTERNER.get_or_init(|| {
        let mut i = Interner {
            names: Vec::new(),
            ids: HashMap::new(),
        };
        for name in PREDEFINED {
            let id = i.names.len() as u32;
            i.names.push(name);
            i.ids.insert(name, id);
        }
        RwLock::new(i)
    })
}

impl Sym {
    pub const NIL: Sym = Sym(0);
    pub const DOT: Sym = Sym(1);
    pub const TRUE: Sym = Sym(2);
    pub const FAIL: Sym = Sym(3);
    pub const COMMA: Sym = Sym(4);
    pub const MINUS: Sym = Sym(5);
    pub const PLUS: Sym = Sym(6);
    pub const STAR: Sym = Sym(7);
    pub const INT_DIV: Sym = Sym(8);
    pub const SLASH: Sym = Sym(9);
    pub const MOD: Sym = Sym(10);
    pub const ABS: Sym = Sym(11);
    pub const MIN: Sym = Sym(12);
    pub const MAX: Sym = Sym(13);

    pub fn intern(name: &str) -> Sym {
        if let Some(&id) = interner().read().unwrap().ids.get(name) {
            return Sym(id);
        }
        let mut w = interner().write().unwrap();
        if let Some(&id) = w.ids.get(name) {
            return Sym(id);
        }
        let leaked: &'static str = Box::leak(name.to_owned().into_boxed_str());
        let id = w.names.len() as u32;
        w.names.push(leaked);
        w.ids.insert(leaked, id);
        Sym(id)
    }

    pub fn name(self) -> &'static str {
        interner().read().unwrap().names[self.0 as usize]
    }

    /// Number of symbols interned so far; symbol ids below this bound are valid.
    pub fn count() -> u32 {
        interner().read().unwrap().names.len() as u32
    }
}

impl fmt::Display for Sym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Variable identifier: an index into the owning engine's binding store.
pub type VarId = u32;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Var(VarId),
    Atom(Sym),
    Int(i64),
    Struct(Sym, Arc<[Term]>),
}

impl Term {
    pub fn compound(functor: Sym, args: Vec<Term>) -> Term {
        debug_assert!(!args.is_empty());
        Term::Struct(functor, args.into())
    }

    pub fn cons(head: Term, tail: Term) -> Term {
        Term::Struct(Sym::DOT, Arc::from(vec![head, tail]))
    }

    pub fn nil() -> Term {
        Term::Atom(Sym::NIL)
    }

    pub fn list(items: impl IntoIterator<Item = Term, IntoIter: DoubleEndedIterator>) -> Term {
        items
            .into_iter()
            .rev()
            .fold(Term::nil(), |tail, head| Term::cons(head, tail))
    }

    pub fn is_callable(&self) -> bool {
        matches!(self, Term::Atom(_) | Term::Struct(..))
    }

    /// Functor name and arity of a callable term.
    pub fn functor(&self) -> Option<(Sym, u32)> {
        match self {
            Term::Atom(s) => Some((*s, 0)),
            Term::Struct(s, args) => Some((*s, args.len() as u32)),
            _ => None,
        }
    }

    pub fn args(&self) -> &[Term] {
        match self {
            Term::Struct(_, args) => args,
            _ => &[],
        }
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::Atom(_) | Term::Int(_) => true,
            Term::Struct(_, args) => args.iter().all(Term::is_ground),
        }
    }
}

/// Binary operators printed infix, with their priorities.
pub(crate) fn infix_priority(name: &str) -> Option<u32> {
    Some(match name {
        ":-" => 1200,
        "," => 1000,
        "=" | "\\=" | "==" | "\\==" | "is" | "=:=" | "=\\=" | "<" | ">" | "=<" | ">=" => 700,
        "+" | "-" => 500,
        "*" | "//" | "mod" | "/" => 400,
        _ => return None,
    })
}

fn is_plain_atom(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => chars.all(|c| c.is_ascii_alphanumeric() || c == '_'),
        _ => name == "[]" || (!name.is_empty() && name.chars().all(is_symbol_char)),
    }
}

pub(crate) fn is_symbol_char(c: char) -> bool {
    "+-*/\\^<>=~:.?@#&$".contains(c)
}

/// Writes terms the way `write/1` does: no quoting, lists in bracket
/// notation, operators infix.
pub struct Display<'a> {
    term: &'a Term,
    quoted: bool,
    names: Option<&'a dyn Fn(VarId) -> Option<String>>,
}

impl Term {
    pub fn display(&self) -> Display<'_> {
        Display {
            term: self,
            quoted: false,
            names: None,
        }
    }

    /// Like [`Term::display`] but quotes atoms where needed so the output
    /// parses back to the same term.
    pub fn quoted(&self) -> Display<'_> {
        Display {
            term: self,
            quoted: true,
            names: None,
        }
    }

    /// Quoted output with variables printed under caller-chosen names.
    pub fn named<'a>(&'a self, names: &'a dyn Fn(VarId) -> Option<String>) -> Display<'a> {
        Display {
            term: self,
            quoted: true,
            names: Some(names),
        }
    }
}

impl fmt::Display for Display<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Writer {
            quoted: self.quoted,
            names: self.names,
        }
        .term(f, self.term, 1200)
    }
}

struct Writer<'a> {
    quoted: bool,
    names: Option<&'a dyn Fn(VarId) -> Option<String>>,
}

impl Writer<'_> {
    fn atom(&self, f: &mut fmt::Formatter<'_>, s: Sym) -> fmt::Result {
        let quoted = self.quoted;
        let name = s.name();
        if quoted && !is_plain_atom(name) {
            write!(f, "'")?;
            for c in name.chars() {
                match c {
                    '\'' => write!(f, "\\'")?,
                    '\\' => write!(f, "\\\\")?,
                    '\n' => write!(f, "\\n")?,
                    c => write!(f, "{c}")?,
                }
            }
            write!(f, "'")
        } else {
            f.write_str(name)
        }
    }

    fn term(&self, f: &mut fmt::Formatter<'_>, t: &Term, max_prio: u32) -> fmt::Result {
        match t {
            Term::Var(v) => match self.names.and_then(|n| n(*v)) {
                Some(name) => f.write_str(&name),
                None => write!(f, "_G{v}"),
            },
            Term::Int(i) if *i < 0 && max_prio < 999 => write!(f, "({i})"),
            Term::Int(i) => write!(f, "{i}"),
            Term::Atom(s) => {
                if infix_priority(s.name()).is_some() && max_prio < 1200 {
                    write!(f, "(")?;
                    self.atom(f, *s)?;
                    write!(f, ")")
                } else {
                    self.atom(f, *s)
                }
            }
            Term::Struct(s, args) if *s == Sym::DOT && args.len() == 2 => {
                write!(f, "[")?;
                self.term(f, &args[0], 999)?;
                let mut tail = &args[1];
                loop {
                    match tail {
                        Term::Struct(s, a) if *s == Sym::DOT && a.len() == 2 => {
                            write!(f, ",")?;
                            self.term(f, &a[0], 999)?;
                            tail = &a[1];
                        }
                        Term::Atom(s) if *s == Sym::NIL => break,
                        other => {
                            write!(f, "|")?;
                            self.term(f, other, 999)?;
                            break;
                        }
                    }
                }
                write!(f, "]")
            }
            Term::Struct(s, args) => {
                if args.len() == 2 {
                    if let Some(p) = infix_priority(s.name()) {
                        let open = p > max_prio;
                        if open {
                            write!(f, "(")?;
                        }
                        // Both sides get p - 1, so equal-priority operands are
                        // always bracketed regardless of associativity.
                        self.term(f, &args[0], p - 1)?;
                        if *s == Sym::COMMA {
                            write!(f, ", ")?;
                        } else if s.name().chars().all(|c| c.is_ascii_alphabetic()) {
                            write!(f, " {} ", s.name())?;
                        } else {
                            write!(f, "{}", s.name())?;
                        }
                        self.term(f, &args[1], p - 1)?;
                        if open {
                            write!(f, ")")?;
                        }
                        return Ok(());
                    }
                }
                self.atom(f, *s)?;
                write!(f, "(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    self.term(f, a, 999)?;
                }
                write!(f, ")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_is_stable() {
        let a = Sym::intern("queens");
        let b = Sym::intern("queens");
        assert_eq!(a, b);
        assert_eq!(a.name(), "queens");
        assert_eq!(Sym::intern("[]"), Sym::NIL);
    }

    #[test]
    fn prints_lists_and_operators() {
        let l = Term::list([Term::Int(1), Term::Int(2), Term::Int(3)]);
        assert_eq!(l.display().to_string(), "[1,2,3]");
        let partial = Term::cons(Term::Int(1), Term::Var(7));
        assert_eq!(partial.display().to_string(), "[1|_G7]");
        let sum = Term::compound(
            Sym::MINUS,
            vec![
                Term::compound(Sym::PLUS, vec![Term::Int(1), Term::Int(2)]),
                Term::Int(3),
            ],
        );
        assert_eq!(sum.display().to_string(), "(1+2)-3");
        let pair = Term::compound(Sym::MINUS, vec![Term::Int(1), Term::Int(5)]);
        assert_eq!(pair.display().to_string(), "1-5");
    }

    #[test]
    fn quoting() {
        let t = Term::Atom(Sym::intern("Hello world"));
        assert_eq!(t.quoted().to_string(), "'Hello world'");
        assert_eq!(t.display().to_string(), "Hello world");
        assert_eq!(Term::Atom(Sym::intern("abc")).quoted().to_string(), "abc");
    }
}
