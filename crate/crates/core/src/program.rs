//! Loaded programs: clause store, predicate table, first-argument index and
//! the compiled clause form the engine resolves against.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::term::{Sym, Term, VarId};

/// Source-level clause. Variables are numbered densely from 0 within the
/// clause.
#[derive(Clone, Debug, PartialEq)]
pub struct Clause {
    pub head: Term,
    pub body: Vec<Term>,
    pub var_count: u32,
}

/// Index of a clause in [`Program::clauses`].
pub type ClauseRef = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Builtin {
    True,
    Fail,
    Unify,
    NotUnify,
    Identical,
    NotIdentical,
    Is,
    ArithEq,
    ArithNe,
    Less,
    Greater,
    LessEq,
    GreaterEq,
    Write,
    Nl,
}

impl Builtin {
    const ALL: [Builtin; 15] = [
        Builtin::True,
        Builtin::Fail,
        Builtin::Unify,
        Builtin::NotUnify,
        Builtin::Identical,
        Builtin::NotIdentical,
        Builtin::Is,
        Builtin::ArithEq,
        Builtin::ArithNe,
        Builtin::Less,
        Builtin::Greater,
        Builtin::LessEq,
        Builtin::GreaterEq,
        Builtin::Write,
        Builtin::Nl,
    ];

    /// Stable numeric code used on the wire.
    pub fn code(self) -> u8 {
        Builtin::ALL.iter().position(|&b| b == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Builtin> {
        Builtin::ALL.get(code as usize).copied()
    }

    fn lookup(name: &str, arity: u32) -> Option<Builtin> {
        Some(match (name, arity) {
            ("true", 0) => Builtin::True,
            ("fail", 0) | ("false", 0) => Builtin::Fail,
            ("=", 2) => Builtin::Unify,
            ("\\=", 2) => Builtin::NotUnify,
            ("==", 2) => Builtin::Identical,
            ("\\==", 2) => Builtin::NotIdentical,
            ("is", 2) => Builtin::Is,
            ("=:=", 2) => Builtin::ArithEq,
            ("=\\=", 2) => Builtin::ArithNe,
            ("<", 2) => Builtin::Less,
            (">", 2) => Builtin::Greater,
            ("=<", 2) => Builtin::LessEq,
            (">=", 2) => Builtin::GreaterEq,
            ("write", 1) => Builtin::Write,
            ("nl", 0) => Builtin::Nl,
            _ => return None,
        })
    }

    /// Built-ins whose execution is visible outside the derivation and must
    /// therefore respect sequential order.
    pub fn is_side_effect(self) -> bool {
        matches!(self, Builtin::Write | Builtin::Nl)
    }
}

/// What a goal resolves against, decided once at load time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Callee {
    User(u32),
    Builtin(Builtin),
    Undefined,
}

/// Clause term with variables numbered relative to the clause; ground
/// subterms are kept shared.
#[derive(Clone, Debug)]
pub(crate) enum CTerm {
    Var(u32),
    Ground(Term),
    Struct(Sym, Box<[CTerm]>),
}

impl CTerm {
    fn compile(t: &Term) -> CTerm {
        match t {
            Term::Var(v) => CTerm::Var(*v),
            t if t.is_ground() => CTerm::Ground(t.clone()),
            Term::Struct(f, args) => CTerm::Struct(*f, args.iter().map(CTerm::compile).collect()),
            _ => unreachable!(),
        }
    }

    /// Renames clause variables by adding `base`.
    pub(crate) fn instantiate(&self, base: VarId) -> Term {
        match self {
            CTerm::Var(v) => Term::Var(base + v),
            CTerm::Ground(t) => t.clone(),
            CTerm::Struct(f, args) => Term::Struct(*f, args.iter().map(|a| a.instantiate(base)).collect()),
        }
    }

    pub(crate) fn key(&self) -> Option<Key> {
        match self {
            CTerm::Var(_) => None,
            CTerm::Ground(t) => Key::of(t),
            CTerm::Struct(f, args) => Some(Key::Functor(*f, args.len() as u32)),
        }
    }
}

/// Principal functor used for clause pre-selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Key {
    Atom(Sym),
    Int(i64),
    Functor(Sym, u32),
}

impl Key {
    pub fn of(t: &Term) -> Option<Key> {
        match t {
            Term::Var(_) => None,
            Term::Atom(s) => Some(Key::Atom(*s)),
            Term::Int(i) => Some(Key::Int(*i)),
            Term::Struct(f, a) => Some(Key::Functor(*f, a.len() as u32)),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct CGoal {
    pub term: CTerm,
    pub callee: Callee,
}

#[derive(Clone, Debug)]
pub(crate) struct CClause {
    pub head_args: Box<[CTerm]>,
    /// Principal functor of each head argument (`None` for variables).
    pub head_keys: Box<[Option<Key>]>,
    pub body: Arc<[CGoal]>,
    pub var_count: u32,
}

#[derive(Clone, Debug)]
pub struct Predicate {
    pub name: Sym,
    pub arity: u32,
    pub parallel: bool,
    pub clauses: Vec<ClauseRef>,
    /// For each first-argument key, the clauses that may match a call whose
    /// first argument has that key, in program order.
    by_first_key: HashMap<Key, Vec<ClauseRef>>,
    /// Clauses whose first argument is a variable.
    var_first: Vec<ClauseRef>,
}

impl Predicate {
    /// Clauses worth trying for a call whose first argument has `key`.
    pub fn candidates(&self, key: Option<Key>) -> &[ClauseRef] {
        match key {
            Some(k) if self.arity > 0 => self.by_first_key.get(&k).unwrap_or(&self.var_first),
            _ => &self.clauses,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Program {
    clauses: Vec<Clause>,
    parallel: BTreeSet<(Sym, u32)>,
    preds: Vec<Predicate>,
    clause_pred: Vec<u32>,
    pred_ids: HashMap<(Sym, u32), u32>,
    compiled: Vec<CClause>,
}

fn compile_goal(pred_ids: &HashMap<(Sym, u32), u32>, g: &Term) -> CGoal {
    let (name, arity) = g.functor().expect("goals are callable");
    let callee = match pred_ids.get(&(name, arity)) {
        Some(&id) => Callee::User(id),
        None => match Builtin::lookup(name.name(), arity) {
            Some(b) => Callee::Builtin(b),
            None => Callee::Undefined,
        },
    };
    CGoal {
        term: CTerm::compile(g),
        callee,
    }
}

impl Program {
    pub fn new(clauses: Vec<Clause>, parallel: impl IntoIterator<Item = (Sym, u32)>) -> Program {
        let parallel: BTreeSet<(Sym, u32)> = parallel.into_iter().collect();
        let mut preds: Vec<Predicate> = Vec::new();
        let mut pred_ids: HashMap<(Sym, u32), u32> = HashMap::new();
        let mut clause_pred = Vec::with_capacity(clauses.len());
        for (i, c) in clauses.iter().enumerate() {
            let key = c.head.functor().expect("clause heads are callable");
            let id = *pred_ids.entry(key).or_insert_with(|| {
                preds.push(Predicate {
                    name: key.0,
                    arity: key.1,
                    parallel: parallel.contains(&key),
                    clauses: Vec::new(),
                    by_first_key: HashMap::new(),
                    var_first: Vec::new(),
                });
                preds.len() as u32 - 1
            });
            preds[id as usize].clauses.push(i as ClauseRef);
            clause_pred.push(id);
        }
        let compiled: Vec<CClause> = clauses
            .iter()
            .map(|c| {
                let head_args: Box<[CTerm]> = c.head.args().iter().map(CTerm::compile).collect();
                CClause {
                    head_keys: head_args.iter().map(CTerm::key).collect(),
                    head_args,
                    body: c.body.iter().map(|g| compile_goal(&pred_ids, g)).collect(),
                    var_count: c.var_count,
                }
            })
            .collect();
        for p in &mut preds {
            if p.arity == 0 {
                continue;
            }
            let first = |c: ClauseRef| compiled[c as usize].head_keys[0];
            let keys: BTreeSet<_> = p.clauses.iter().filter_map(|&c| first(c)).map(KeyOrd).collect();
            for KeyOrd(k) in keys {
                let list = p
                    .clauses
                    .iter()
                    .copied()
                    .filter(|&c| first(c).is_none_or(|ck| ck == k))
                    .collect();
                p.by_first_key.insert(k, list);
            }
            p.var_first = p.clauses.iter().copied().filter(|&c| first(c).is_none()).collect();
        }
        Program {
            clauses,
            parallel,
            preds,
            clause_pred,
            pred_ids,
            compiled,
        }
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn parallel_predicates(&self) -> &BTreeSet<(Sym, u32)> {
        &self.parallel
    }

    pub fn is_parallel(&self, name: Sym, arity: u32) -> bool {
        self.parallel.contains(&(name, arity))
    }

    pub fn predicate(&self, id: u32) -> &Predicate {
        &self.preds[id as usize]
    }

    pub fn predicate_id(&self, name: Sym, arity: u32) -> Option<u32> {
        self.pred_ids.get(&(name, arity)).copied()
    }

    pub(crate) fn compiled(&self, c: ClauseRef) -> &CClause {
        &self.compiled[c as usize]
    }

    pub(crate) fn compile_goals(&self, goals: &[Term]) -> Vec<CGoal> {
        goals.iter().map(|g| compile_goal(&self.pred_ids, g)).collect()
    }

    pub fn clause_count(&self) -> usize {
        self.clauses.len()
    }

    /// Predicate a clause belongs to.
    pub fn clause_predicate(&self, c: ClauseRef) -> Option<u32> {
        self.clause_pred.get(c as usize).copied()
    }

    pub fn predicate_count(&self) -> usize {
        self.preds.len()
    }
}

// Keys only need a deterministic order for index construction.
#[derive(PartialEq, Eq)]
struct KeyOrd(Key);

impl PartialOrd for KeyOrd {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for KeyOrd {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        fn rank(k: &Key) -> (u8, i64, u32) {
            match *k {
                Key::Atom(s) => (0, s.0 as i64, 0),
                Key::Int(i) => (1, i, 0),
                Key::Functor(s, n) => (2, s.0 as i64, n),
            }
        }
        rank(&self.0).cmp(&rank(&other.0))
    }
}

/// Prints a term with variables named by `names`, falling back to `_G<n>`.
pub fn print_with_names(t: &Term, names: &dyn Fn(VarId) -> Option<String>) -> String {
    t.named(names).to_string()
}

fn clause_var_name(v: VarId) -> Option<String> {
    let letter = (b'A' + (v % 26) as u8) as char;
    Some(if v < 26 {
        letter.to_string()
    } else {
        format!("{letter}{}", v / 26)
    })
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head.named(&clause_var_name))?;
        for (i, g) in self.body.iter().enumerate() {
            f.write_str(if i == 0 { " :-\n    " } else { ",\n    " })?;
            write!(f, "{}", g.named(&clause_var_name))?;
        }
        f.write_str(".")
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, arity) in &self.parallel {
            writeln!(f, ":- parallel {}/{arity}.", Term::Atom(*name).quoted())?;
        }
        for c in &self.clauses {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use crate::parser::parse_program;
    use crate::term::Sym;

    #[test]
    fn first_argument_index_keeps_clause_order() {
        let p = parse_program("m(1, a). m(X, b). m(2, c). m(1, d). m(f(Y), e).").unwrap();
        let id = p.predicate_id(Sym::intern("m"), 2).unwrap();
        let pred = p.predicate(id);
        use super::Key;
        assert_eq!(pred.candidates(Some(Key::Int(1))), &[0, 1, 3]);
        assert_eq!(pred.candidates(Some(Key::Int(2))), &[1, 2]);
        assert_eq!(pred.candidates(Some(Key::Int(7))), &[1]);
        assert_eq!(pred.candidates(Some(Key::Functor(Sym::intern("f"), 1))), &[1, 4]);
        assert_eq!(pred.candidates(None), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn printed_program_reparses_to_itself() {
        let src = ":- parallel sel/3.\nsel(X, [X|T], T).\nsel(X, [Y|T], [Y|R]) :- sel(X, T, R).\n\
                   p(X, Y) :- X > 0, Y is X * (2 + 1) - 4, Y \\== X, write('a b'), nl.";
        let p1 = parse_program(src).unwrap();
        let printed = p1.to_string();
        let p2 = parse_program(&printed).unwrap();
        assert_eq!(p1.clauses(), p2.clauses());
        assert_eq!(p1.parallel_predicates(), p2.parallel_predicates());
        assert_eq!(printed, p2.to_string());
    }
}
