//! Sequential resolution engine: binding store with a value trail, a
//! choice-point stack and depth-first, left-to-right clause selection.
//!
//! Each agent owns exactly one engine. Clauses are interpreted directly:
//! goals stay in their compiled form and are paired with the variable base
//! of the clause instance they belong to, so a call only allocates when a
//! structure has to be built in the binding store.

use std::fmt;
use std::sync::Arc;

use crate::parser::Query;
use crate::program::{Builtin, CGoal, CTerm, Callee, ClauseRef, Key, Program};
use crate::splitting::LabelStack;
use crate::term::{Sym, Term, VarId};

/// Default number of call reductions between two poll points.
pub const DEFAULT_POLL_INTERVAL: u32 = 200;

/// Arguments inspected when pre-filtering clauses.
const SHALLOW_KEYS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("arguments are not sufficiently instantiated in `{0}`")]
    Instantiation(String),
    #[error("type error: `{0}` is not an integer expression")]
    Type(String),
    #[error("arithmetic overflow in `{0}`")]
    Overflow(String),
    #[error("division by zero in `{0}`")]
    ZeroDivisor(String),
    #[error("choice-point depth {depth} out of range (stack has {len})")]
    DepthOutOfRange { depth: usize, len: usize },
    #[error("internal corruption: {0}")]
    Corrupt(String),
}

/// A program and the query run against it, shared by every agent of a run.
#[derive(Debug)]
pub struct Job {
    pub program: Arc<Program>,
    pub query: Query,
    pub(crate) query_body: Arc<[CGoal]>,
}

impl Job {
    pub fn new(program: Arc<Program>, query: Query) -> Arc<Job> {
        let query_body = program.compile_goals(&query.goals).into();
        Arc::new(Job {
            program,
            query,
            query_body,
        })
    }

    pub(crate) fn body(&self, origin: Body) -> Option<Arc<[CGoal]>> {
        match origin {
            Body::Query => Some(Arc::clone(&self.query_body)),
            Body::Clause(c) if (c as usize) < self.program.clause_count() => {
                Some(Arc::clone(&self.program.compiled(c).body))
            }
            Body::Clause(_) => None,
        }
    }
}

/// Globally unique choice-point identity: creating agent and its counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CpId {
    pub rank: u32,
    pub seq: u64,
}

/// Where the goals of a frame come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Body {
    Query,
    Clause(ClauseRef),
}

/// The body of one clause instance: its goals, the variable base they are
/// renamed by, and the continuation after the body.
pub struct Frame {
    pub(crate) body: Arc<[CGoal]>,
    pub origin: Body,
    pub base: VarId,
    pub next: Cont,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("origin", &self.origin)
            .field("base", &self.base)
            .field("next", &self.next)
            .finish()
    }
}

impl PartialEq for Frame {
    fn eq(&self, other: &Self) -> bool {
        self.origin == other.origin && self.base == other.base && self.next == other.next
    }
}

/// Position inside a frame: the goals from `at` onwards still have to run.
#[derive(Clone, Debug, PartialEq)]
pub struct Goals {
    pub frame: Arc<Frame>,
    pub at: u32,
}

impl Goals {
    pub(crate) fn goal(&self) -> &CGoal {
        &self.frame.body[self.at as usize]
    }

    /// The continuation after the current goal.
    pub fn advance(&self) -> Cont {
        if (self.at as usize) + 1 < self.frame.body.len() {
            Some(Goals {
                frame: Arc::clone(&self.frame),
                at: self.at + 1,
            })
        } else {
            self.frame.next.clone()
        }
    }
}

pub type Cont = Option<Goals>;

/// Untried clauses of a choice-point, in program order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Alternatives {
    // Stored reversed so that taking the next clause is a pop.
    rev: Vec<ClauseRef>,
}

impl Alternatives {
    pub fn from_ordered(mut clauses: Vec<ClauseRef>) -> Self {
        clauses.reverse();
        Alternatives { rev: clauses }
    }

    pub fn len(&self) -> usize {
        self.rev.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rev.is_empty()
    }

    pub fn take_next(&mut self) -> Option<ClauseRef> {
        self.rev.pop()
    }

    /// Remaining clauses in the order they would be tried.
    pub fn ordered(&self) -> Vec<ClauseRef> {
        self.rev.iter().rev().copied().collect()
    }
}

/// The next-alternative field of a choice-point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NextClause {
    Clauses(Alternatives),
    /// No alternatives are available locally.
    TrustFail,
    /// Backtracking into this choice-point hands control to the scheduler.
    Schedule,
}

impl NextClause {
    pub fn has_work(&self) -> bool {
        matches!(self, NextClause::Clauses(a) if !a.is_empty())
    }

    pub fn remaining(&self) -> Vec<ClauseRef> {
        match self {
            NextClause::Clauses(a) => a.ordered(),
            _ => Vec::new(),
        }
    }

    /// Alternatives list, or `TrustFail` when empty.
    pub fn from_clauses(clauses: Vec<ClauseRef>) -> NextClause {
        if clauses.is_empty() {
            NextClause::TrustFail
        } else {
            NextClause::Clauses(Alternatives::from_ordered(clauses))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChoicePoint {
    /// The call being resolved; its continuation is `call.advance()`.
    pub call: Goals,
    pub pred: u32,
    pub next: NextClause,
    pub heap_mark: u32,
    pub trail_mark: u32,
    pub parallel: bool,
    /// Position among the parallel choice-points of the stack.
    pub par_index: Option<u32>,
    pub id: CpId,
}

/// Answer substitution over the query variables.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Answer(pub Vec<(String, String)>);

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("true");
        }
        for (i, (name, value)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{name} = {value}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EngineEvent {
    Solution(Answer),
    Exhausted,
    PollPoint(u32),
    /// Text the pending `write/1` or `nl/0` is about to emit. The effect
    /// counts as performed once the engine is resumed.
    SideEffect(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RunState {
    Forward,
    Backtrack,
    Idle,
}

/// One executed alternative: which choice-point, which clause.
pub type Execution = (CpId, ClauseRef);

/// A goal argument: either a plain term or a compiled term under a base.
#[derive(Clone, Copy)]
enum Arg<'a> {
    T(&'a Term),
    C(&'a CTerm, VarId),
}

fn goal_arg(goal: &CTerm, base: VarId, i: usize) -> Arg<'_> {
    match goal {
        CTerm::Struct(_, args) => Arg::C(&args[i], base),
        CTerm::Ground(t) => Arg::T(&t.args()[i]),
        CTerm::Var(_) => unreachable!("goals are callable"),
    }
}

fn goal_arity(goal: &CTerm) -> usize {
    match goal {
        CTerm::Struct(_, args) => args.len(),
        CTerm::Ground(t) => t.args().len(),
        CTerm::Var(_) => 0,
    }
}

// Builtin outcome: failure, success, or success with text to emit.
enum Outcome {
    Fail,
    Done,
    Emit(String),
}

impl From<bool> for Outcome {
    fn from(ok: bool) -> Outcome {
        if ok {
            Outcome::Done
        } else {
            Outcome::Fail
        }
    }
}

#[derive(Clone)]
pub struct Engine {
    job: Arc<Job>,
    rank: u32,
    pub(crate) heap: Vec<Option<Term>>,
    /// Value trail: every conditional binding with the value it received.
    pub(crate) trail: Vec<(VarId, Term)>,
    pub(crate) cps: Vec<ChoicePoint>,
    pub(crate) labels: LabelStack,
    parallel_count: u32,
    cont: Cont,
    state: RunState,
    cp_seq: u64,
    since_poll: u32,
    poll_interval: u32,
    reductions: u64,
    alternatives_run: u64,
    record_executions: bool,
    executions: Vec<Execution>,
}

impl Engine {
    /// An engine positioned at the start of the job's query.
    pub fn new(job: Arc<Job>, rank: u32) -> Engine {
        let mut e = Engine::idle(job, rank);
        e.heap = vec![None; e.job.query.var_count() as usize];
        if !e.job.query_body.is_empty() {
            e.cont = Some(Goals {
                frame: Arc::new(Frame {
                    body: Arc::clone(&e.job.query_body),
                    origin: Body::Query,
                    base: 0,
                    next: None,
                }),
                at: 0,
            });
        }
        e.state = RunState::Forward;
        e
    }

    /// An engine with no work; it reports `Exhausted` until work is installed.
    pub fn idle(job: Arc<Job>, rank: u32) -> Engine {
        Engine {
            job,
            rank,
            heap: Vec::new(),
            trail: Vec::new(),
            cps: Vec::new(),
            labels: LabelStack::new(),
            parallel_count: 0,
            cont: None,
            state: RunState::Idle,
            cp_seq: 0,
            since_poll: 0,
            poll_interval: DEFAULT_POLL_INTERVAL,
            reductions: 0,
            alternatives_run: 0,
            record_executions: false,
            executions: Vec::new(),
        }
    }

    pub fn set_poll_interval(&mut self, k: u32) {
        self.poll_interval = k.max(1);
    }

    pub fn record_executions(&mut self, on: bool) {
        self.record_executions = on;
    }

    pub fn take_executions(&mut self) -> Vec<Execution> {
        std::mem::take(&mut self.executions)
    }

    pub fn rank(&self) -> u32 {
        self.rank
    }

    pub fn job(&self) -> &Arc<Job> {
        &self.job
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.job.program
    }

    pub fn reductions(&self) -> u64 {
        self.reductions
    }

    /// Alternatives taken from choice-points by this engine.
    pub fn alternatives_run(&self) -> u64 {
        self.alternatives_run
    }

    pub fn choicepoints(&self) -> &[ChoicePoint] {
        &self.cps
    }

    pub fn labels(&self) -> &LabelStack {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut LabelStack {
        &mut self.labels
    }

    pub fn trail_len(&self) -> usize {
        self.trail.len()
    }

    pub fn heap_len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_idle(&self) -> bool {
        self.state == RunState::Idle
    }

    /// Work-load estimate: parallel choice-points with untried alternatives.
    pub fn load(&self) -> u32 {
        self.cps.iter().filter(|cp| cp.parallel && cp.next.has_work()).count() as u32
    }

    /// The goal at the head of `g`, as a term under the current bindings.
    pub fn goal_term(&self, g: &Goals) -> Term {
        self.resolve(&self.materialize(Arg::C(&g.goal().term, g.frame.base)))
    }

    fn next_cp_id(&mut self) -> CpId {
        self.cp_seq += 1;
        CpId {
            rank: self.rank,
            seq: self.cp_seq,
        }
    }

    // ---- binding store -------------------------------------------------

    pub fn new_var(&mut self) -> Term {
        self.heap.push(None);
        Term::Var(self.heap.len() as VarId - 1)
    }

    fn hb(&self) -> u32 {
        self.cps.last().map_or(0, |cp| cp.heap_mark)
    }

    fn deref_ref<'a>(&'a self, t: &'a Term) -> &'a Term {
        let mut cur = t;
        while let Term::Var(v) = cur {
            match &self.heap[*v as usize] {
                Some(b) => cur = b,
                None => break,
            }
        }
        cur
    }

    pub fn deref(&self, t: &Term) -> Term {
        self.deref_ref(t).clone()
    }

    /// A term for an argument, building compiled structure if needed.
    fn materialize(&self, a: Arg) -> Term {
        match a {
            Arg::T(t) => self.deref(t),
            Arg::C(CTerm::Var(v), b) => self.deref(&Term::Var(b + v)),
            Arg::C(CTerm::Ground(t), _) => t.clone(),
            Arg::C(c @ CTerm::Struct(..), b) => c.instantiate(b),
        }
    }

    fn key_of(&self, a: Arg) -> Option<Key> {
        match a {
            Arg::T(t) => Key::of(self.deref_ref(t)),
            Arg::C(CTerm::Var(v), b) => match &self.heap[(b + v) as usize] {
                Some(t) => Key::of(self.deref_ref(t)),
                None => None,
            },
            Arg::C(c, _) => c.key(),
        }
    }

    /// Binds `v`, trailing the binding when it is conditional. Unconditional
    /// bindings go to `fresh` so a failed unification can undo them.
    fn bind(&mut self, v: VarId, t: Term, fresh: &mut Vec<VarId>) {
        debug_assert!(self.heap[v as usize].is_none());
        if v < self.hb() {
            self.trail.push((v, t.clone()));
        } else {
            fresh.push(v);
        }
        self.heap[v as usize] = Some(t);
    }

    fn undo_to(&mut self, mark: usize, fresh: &[VarId]) {
        for (v, _) in self.trail.drain(mark..) {
            self.heap[v as usize] = None;
        }
        for &v in fresh {
            self.heap[v as usize] = None;
        }
    }

    /// Unifies two terms, trailing conditional bindings. On failure the
    /// store is restored to its state at the call.
    pub fn unify(&mut self, a: &Term, b: &Term) -> bool {
        self.unify_undoable(Arg::T(a), Arg::T(b))
    }

    fn unify_undoable(&mut self, a: Arg, b: Arg) -> bool {
        let mark = self.trail.len();
        let mut fresh = Vec::new();
        let ok = self.unify_args(a, b, &mut fresh);
        if !ok {
            self.undo_to(mark, &fresh);
        }
        ok
    }

    fn unify_args(&mut self, a: Arg, b: Arg, fresh: &mut Vec<VarId>) -> bool {
        match (a, b) {
            (Arg::C(CTerm::Struct(f, xs), xb), Arg::C(CTerm::Struct(g, ys), yb)) => {
                f == g
                    && xs.len() == ys.len()
                    && xs
                        .iter()
                        .zip(ys.iter())
                        .all(|(x, y)| self.unify_args(Arg::C(x, xb), Arg::C(y, yb), fresh))
            }
            (Arg::C(CTerm::Struct(..), _), other) => {
                let t = self.materialize(other);
                self.unify_term_arg(&t, a, fresh)
            }
            (other, _) => {
                let t = self.materialize(other);
                self.unify_term_arg(&t, b, fresh)
            }
        }
    }

    fn unify_term_arg(&mut self, t: &Term, a: Arg, fresh: &mut Vec<VarId>) -> bool {
        match a {
            Arg::T(u) => self.unify_terms(t, u, fresh),
            Arg::C(CTerm::Var(v), b) => self.unify_terms(t, &Term::Var(b + v), fresh),
            Arg::C(CTerm::Ground(u), _) => self.unify_terms(t, u, fresh),
            Arg::C(c @ CTerm::Struct(f, cargs), b) => match self.deref(t) {
                Term::Var(x) => {
                    let s = c.instantiate(b);
                    self.bind(x, s, fresh);
                    true
                }
                Term::Struct(g, targs) if g == *f && targs.len() == cargs.len() => targs
                    .iter()
                    .zip(cargs.iter())
                    .all(|(ta, ca)| self.unify_term_arg(ta, Arg::C(ca, b), fresh)),
                _ => false,
            },
        }
    }

    /// Binds whichever side of a pair is an unbound variable; the younger
    /// of two variables points at the older one.
    fn bind_pair(&mut self, x: Term, y: Term, fresh: &mut Vec<VarId>) {
        match (&x, &y) {
            (Term::Var(i), Term::Var(j)) => {
                if i != j {
                    let (young, old) = if i > j { (*i, y) } else { (*j, x) };
                    self.bind(young, old, fresh);
                }
            }
            (Term::Var(i), _) => self.bind(*i, y, fresh),
            (_, Term::Var(j)) => self.bind(*j, x, fresh),
            _ => unreachable!(),
        }
    }

    fn unify_terms(&mut self, a: &Term, b: &Term, fresh: &mut Vec<VarId>) -> bool {
        let mut stack = vec![(a.clone(), b.clone())];
        while let Some((x, y)) = stack.pop() {
            let x = self.deref(&x);
            let y = self.deref(&y);
            match (&x, &y) {
                (Term::Var(_), _) | (_, Term::Var(_)) => self.bind_pair(x, y, fresh),
                (Term::Atom(p), Term::Atom(q)) if p == q => {}
                (Term::Int(p), Term::Int(q)) if p == q => {}
                (Term::Struct(f, xs), Term::Struct(g, ys)) if f == g && xs.len() == ys.len() => {
                    if !Arc::ptr_eq(xs, ys) {
                        for (p, q) in xs.iter().zip(ys.iter()).rev() {
                            stack.push((p.clone(), q.clone()));
                        }
                    }
                }
                _ => return false,
            }
        }
        true
    }

    /// Unifies a clause-head argument (variables renamed by `hb`) with a
    /// goal argument. An unbound head cell is fresh, so its first
    /// occurrence simply takes the goal's value.
    fn unify_head(&mut self, h: &CTerm, hb: VarId, g: Arg, fresh: &mut Vec<VarId>) -> bool {
        match h {
            CTerm::Var(v) => {
                let cell = hb + v;
                if self.heap[cell as usize].is_none() {
                    self.heap[cell as usize] = Some(self.materialize(g));
                    true
                } else {
                    self.unify_term_arg(&Term::Var(cell), g, fresh)
                }
            }
            CTerm::Ground(t) => self.unify_term_arg(t, g, fresh),
            CTerm::Struct(f, hargs) => {
                if let Arg::C(CTerm::Struct(gf, gargs), gb) = g {
                    return gf == f
                        && gargs.len() == hargs.len()
                        && hargs
                            .iter()
                            .zip(gargs.iter())
                            .all(|(ha, ga)| self.unify_head(ha, hb, Arg::C(ga, gb), fresh));
                }
                match self.materialize(g) {
                    Term::Var(x) => {
                        let s = h.instantiate(hb);
                        self.bind(x, s, fresh);
                        true
                    }
                    Term::Struct(gf, gargs) if gf == *f && gargs.len() == hargs.len() => hargs
                        .iter()
                        .zip(gargs.iter())
                        .all(|(ha, ga)| self.unify_head(ha, hb, Arg::T(ga), fresh)),
                    _ => false,
                }
            }
        }
    }

    /// Fully dereferences a term.
    pub fn resolve(&self, t: &Term) -> Term {
        match self.deref(t) {
            Term::Struct(f, args) => Term::Struct(f, args.iter().map(|a| self.resolve(a)).collect()),
            other => other,
        }
    }

    fn answer(&self) -> Answer {
        let mut out = Vec::new();
        for (i, name) in self.job.query.var_names.iter().enumerate() {
            if name.starts_with('_') {
                continue;
            }
            let v = self.resolve(&Term::Var(i as VarId));
            out.push((name.clone(), v.quoted().to_string()));
        }
        Answer(out)
    }

    // ---- choice-points -------------------------------------------------

    fn push_cp(&mut self, call: Goals, pred: u32, alternatives: Vec<ClauseRef>, parallel: bool) -> CpId {
        let id = self.next_cp_id();
        let par_index = if parallel {
            self.parallel_count += 1;
            Some(self.parallel_count - 1)
        } else {
            None
        };
        self.cps.push(ChoicePoint {
            call,
            pred,
            next: NextClause::Clauses(Alternatives::from_ordered(alternatives)),
            heap_mark: self.heap.len() as u32,
            trail_mark: self.trail.len() as u32,
            parallel,
            par_index,
            id,
        });
        id
    }

    fn pop_cp(&mut self) {
        if let Some(cp) = self.cps.pop() {
            if let Some(i) = cp.par_index {
                self.parallel_count -= 1;
                self.labels.truncate(i as usize);
            }
        }
    }

    /// Restores the binding store to the marks of the choice-point at `depth`.
    fn restore(&mut self, depth: usize) {
        let (heap_mark, trail_mark) = {
            let cp = &self.cps[depth];
            (cp.heap_mark as usize, cp.trail_mark as usize)
        };
        for (v, _) in self.trail.drain(trail_mark..) {
            if (v as usize) < heap_mark {
                self.heap[v as usize] = None;
            }
        }
        self.heap.truncate(heap_mark);
    }

    /// Pops every choice-point deeper than `depth` and untrails to its mark.
    pub fn backtrack_to(&mut self, depth: usize) -> Result<(), EngineError> {
        if depth >= self.cps.len() {
            return Err(EngineError::DepthOutOfRange {
                depth,
                len: self.cps.len(),
            });
        }
        while self.cps.len() > depth + 1 {
            self.pop_cp();
        }
        self.restore(depth);
        Ok(())
    }

    /// Discards all state, keeping only the labelling counter.
    pub(crate) fn reset(&mut self) {
        self.heap.clear();
        self.trail.clear();
        self.cps.clear();
        self.labels.clear();
        self.parallel_count = 0;
        self.cont = None;
        self.state = RunState::Idle;
    }

    /// Makes the next `run` start by backtracking into the stack.
    pub(crate) fn resume_by_backtracking(&mut self) {
        self.cont = None;
        self.state = RunState::Backtrack;
    }

    pub(crate) fn set_parallel_count(&mut self) {
        self.parallel_count = self.cps.iter().filter(|cp| cp.parallel).count() as u32;
    }

    /// Backtracks to the most recent untried alternative. Returns false when
    /// local work is exhausted (stack empty or a `Schedule` sentinel reached).
    fn backtrack(&mut self) -> Result<bool, EngineError> {
        loop {
            let Some(depth) = self.cps.len().checked_sub(1) else {
                return Ok(false);
            };
            let cp = &mut self.cps[depth];
            let clause = match &mut cp.next {
                NextClause::Schedule => {
                    self.restore(depth);
                    return Ok(false);
                }
                NextClause::TrustFail => None,
                NextClause::Clauses(alts) => alts.take_next(),
            };
            let Some(clause) = clause else {
                self.pop_cp();
                continue;
            };
            let last = matches!(&cp.next, NextClause::Clauses(a) if a.is_empty());
            let call = cp.call.clone();
            let (pred, id) = (cp.pred, cp.id);
            if self.job.program.clause_predicate(clause) != Some(pred) {
                return Err(EngineError::Corrupt(format!(
                    "clause reference {clause} does not belong to predicate {pred}"
                )));
            }
            self.restore(depth);
            if last {
                self.pop_cp();
            }
            self.note_execution(id, clause);
            self.cont = call.advance();
            if self.try_clause(clause, &call) {
                return Ok(true);
            }
        }
    }

    fn note_execution(&mut self, id: CpId, clause: ClauseRef) {
        self.alternatives_run += 1;
        if self.record_executions {
            self.executions.push((id, clause));
        }
    }

    // ---- resolution ----------------------------------------------------

    /// Unifies the head of `clause` with the called goal and pushes its body
    /// in front of the current continuation.
    fn try_clause(&mut self, clause: ClauseRef, call: &Goals) -> bool {
        let job = Arc::clone(&self.job);
        let c = job.program.compiled(clause);
        let goal = &call.goal().term;
        let gb = call.frame.base;
        let base = self.heap.len() as VarId;
        self.heap.resize(self.heap.len() + c.var_count as usize, None);
        let mark = self.trail.len();
        let mut fresh = Vec::new();
        for (i, h) in c.head_args.iter().enumerate() {
            if !self.unify_head(h, base, goal_arg(goal, gb, i), &mut fresh) {
                self.undo_to(mark, &fresh);
                self.heap.truncate(base as usize);
                return false;
            }
        }
        if !c.body.is_empty() {
            self.cont = Some(Goals {
                frame: Arc::new(Frame {
                    body: Arc::clone(&c.body),
                    origin: Body::Clause(clause),
                    base,
                    next: self.cont.take(),
                }),
                at: 0,
            });
        }
        true
    }

    fn shallow_match(&self, clause: ClauseRef, keys: &[Option<Key>]) -> bool {
        let c = self.job.program.compiled(clause);
        c.head_keys.iter().zip(keys).all(|(h, g)| match (h, g) {
            (Some(h), Some(g)) => h == g,
            _ => true,
        })
    }

    fn call(&mut self, pred: u32, call: &Goals) -> bool {
        let job = Arc::clone(&self.job);
        let p = job.program.predicate(pred);
        let goal = &call.goal().term;
        let n = goal_arity(goal).min(SHALLOW_KEYS);
        let mut keys = [None; SHALLOW_KEYS];
        for (i, k) in keys.iter_mut().enumerate().take(n) {
            *k = self.key_of(goal_arg(goal, call.frame.base, i));
        }
        let keys = &keys[..n];
        let mut matching = p
            .candidates(keys.first().copied().flatten())
            .iter()
            .copied()
            .filter(|&c| self.shallow_match(c, keys));
        let Some(first) = matching.next() else {
            return false;
        };
        let rest: Vec<ClauseRef> = matching.collect();
        if !rest.is_empty() {
            let id = self.push_cp(call.clone(), pred, rest, p.parallel);
            self.note_execution(id, first);
        }
        self.try_clause(first, call)
    }

    fn shown(&self, a: Arg) -> String {
        self.resolve(&self.materialize(a)).display().to_string()
    }

    fn eval(&self, a: Arg) -> Result<i64, EngineError> {
        match a {
            Arg::T(t) => match self.deref_ref(t) {
                Term::Int(i) => Ok(*i),
                Term::Var(_) => Err(EngineError::Instantiation(self.shown(a))),
                Term::Atom(_) => Err(EngineError::Type(self.shown(a))),
                Term::Struct(f, args) => self.arith(*f, args.len(), |i| Arg::T(&args[i]), a),
            },
            Arg::C(CTerm::Var(v), b) => self.eval(Arg::T(&Term::Var(b + v))),
            Arg::C(CTerm::Ground(t), _) => self.eval(Arg::T(t)),
            Arg::C(CTerm::Struct(f, args), b) => self.arith(*f, args.len(), |i| Arg::C(&args[i], b), a),
        }
    }

    fn arith<'a>(&self, f: Sym, arity: usize, arg: impl Fn(usize) -> Arg<'a>, whole: Arg) -> Result<i64, EngineError> {
        let overflow = || EngineError::Overflow(self.shown(whole));
        let zero = || EngineError::ZeroDivisor(self.shown(whole));
        match (f, arity) {
            (Sym::MINUS, 1) => self.eval(arg(0))?.checked_neg().ok_or_else(overflow),
            (Sym::ABS, 1) => self.eval(arg(0))?.checked_abs().ok_or_else(overflow),
            (op, 2) => {
                let a = self.eval(arg(0))?;
                let b = self.eval(arg(1))?;
                match op {
                    Sym::PLUS => a.checked_add(b).ok_or_else(overflow),
                    Sym::MINUS => a.checked_sub(b).ok_or_else(overflow),
                    Sym::STAR => a.checked_mul(b).ok_or_else(overflow),
                    Sym::INT_DIV | Sym::SLASH if b == 0 => Err(zero()),
                    Sym::INT_DIV | Sym::SLASH => a.checked_div(b).ok_or_else(overflow),
                    Sym::MOD if b == 0 => Err(zero()),
                    Sym::MOD => Ok(a.rem_euclid(b)),
                    Sym::MIN => Ok(a.min(b)),
                    Sym::MAX => Ok(a.max(b)),
                    _ => Err(EngineError::Type(self.shown(whole))),
                }
            }
            _ => Err(EngineError::Type(self.shown(whole))),
        }
    }

    fn builtin(&mut self, b: Builtin, goal: &CTerm, base: VarId) -> Result<Outcome, EngineError> {
        let arg = |i| goal_arg(goal, base, i);
        Ok(match b {
            Builtin::True => Outcome::Done,
            Builtin::Fail => Outcome::Fail,
            Builtin::Unify => self.unify_undoable(arg(0), arg(1)).into(),
            Builtin::NotUnify => {
                let mark = self.trail.len();
                let mut fresh = Vec::new();
                let r = self.unify_args(arg(0), arg(1), &mut fresh);
                self.undo_to(mark, &fresh);
                (!r).into()
            }
            Builtin::Identical | Builtin::NotIdentical => {
                let x = self.resolve(&self.materialize(arg(0)));
                let y = self.resolve(&self.materialize(arg(1)));
                ((x == y) == (b == Builtin::Identical)).into()
            }
            Builtin::Is => {
                let v = Term::Int(self.eval(arg(1))?);
                self.unify_undoable(arg(0), Arg::T(&v)).into()
            }
            Builtin::ArithEq => (self.eval(arg(0))? == self.eval(arg(1))?).into(),
            Builtin::ArithNe => (self.eval(arg(0))? != self.eval(arg(1))?).into(),
            Builtin::Less => (self.eval(arg(0))? < self.eval(arg(1))?).into(),
            Builtin::Greater => (self.eval(arg(0))? > self.eval(arg(1))?).into(),
            Builtin::LessEq => (self.eval(arg(0))? <= self.eval(arg(1))?).into(),
            Builtin::GreaterEq => (self.eval(arg(0))? >= self.eval(arg(1))?).into(),
            Builtin::Write => Outcome::Emit(self.shown(arg(0))),
            Builtin::Nl => Outcome::Emit("\n".to_owned()),
        })
    }

    /// Advances resolution to the next observable event.
    pub fn run(&mut self) -> Result<EngineEvent, EngineError> {
        loop {
            match self.state {
                RunState::Idle => return Ok(EngineEvent::Exhausted),
                RunState::Backtrack => {
                    if self.backtrack()? {
                        self.state = RunState::Forward;
                    } else {
                        self.state = RunState::Idle;
                        self.cont = None;
                        return Ok(EngineEvent::Exhausted);
                    }
                }
                RunState::Forward => {}
            }
            let Some(goals) = self.cont.take() else {
                self.state = RunState::Backtrack;
                return Ok(EngineEvent::Solution(self.answer()));
            };
            self.cont = goals.advance();
            let g = goals.goal();
            match g.callee {
                Callee::User(pred) => {
                    self.reductions += 1;
                    self.since_poll += 1;
                    if !self.call(pred, &goals) {
                        self.state = RunState::Backtrack;
                    }
                    if self.since_poll >= self.poll_interval {
                        let n = self.since_poll;
                        self.since_poll = 0;
                        return Ok(EngineEvent::PollPoint(n));
                    }
                }
                Callee::Builtin(b) => match self.builtin(b, &g.term, goals.frame.base)? {
                    Outcome::Done => {}
                    Outcome::Emit(text) => return Ok(EngineEvent::SideEffect(text)),
                    Outcome::Fail => self.state = RunState::Backtrack,
                },
                Callee::Undefined => self.state = RunState::Backtrack,
            }
        }
    }
}

/// Result of a complete sequential run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SequentialRun {
    pub answers: Vec<Answer>,
    pub output: String,
    pub executions: u64,
}

/// Runs the job's query sequentially, collecting every answer (or the first
/// `limit`) in Prolog order together with the side-effect output.
pub fn run_sequential(job: Arc<Job>, limit: Option<usize>) -> Result<SequentialRun, EngineError> {
    let mut engine = Engine::new(job, 0);
    let mut run = SequentialRun::default();
    loop {
        match engine.run()? {
            EngineEvent::Solution(a) => {
                run.answers.push(a);
                if limit.is_some_and(|l| run.answers.len() >= l) {
                    break;
                }
            }
            EngineEvent::SideEffect(text) => run.output.push_str(&text),
            EngineEvent::PollPoint(_) => {}
            EngineEvent::Exhausted => break,
        }
    }
    run.executions = engine.alternatives_run();
    Ok(run)
}

/// Sequential oracle: all answers (or the first `limit`) in Prolog order.
pub fn collect_solutions(
    program: &Arc<Program>,
    query: &Query,
    limit: Option<usize>,
) -> Result<Vec<Answer>, EngineError> {
    let job = Job::new(Arc::clone(program), query.clone());
    Ok(run_sequential(job, limit)?.answers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_program, parse_query};

    fn job(src: &str, q: &str) -> Arc<Job> {
        Job::new(Arc::new(parse_program(src).unwrap()), parse_query(q).unwrap())
    }

    fn setup(src: &str, q: &str) -> Engine {
        Engine::new(job(src, q), 0)
    }

    fn answers(src: &str, q: &str) -> Vec<String> {
        run_sequential(job(src, q), None)
            .unwrap()
            .answers
            .iter()
            .map(|a| a.to_string())
            .collect()
    }

    const MEMBER: &str = "member(X, [X|_]).\nmember(X, [_|T]) :- member(X, T).";

    #[test]
    fn unify_textbook_cases() {
        let mut e = setup("t.", "t");
        let x = e.new_var();
        let y = e.new_var();
        let f = Sym::intern("f");
        let a = Term::Atom(Sym::intern("a"));
        let b = Term::Atom(Sym::intern("b"));
        let t1 = Term::compound(f, vec![x.clone(), a.clone()]);
        let t2 = Term::compound(f, vec![b.clone(), y.clone()]);
        assert!(e.unify(&t1, &t2));
        assert_eq!(e.resolve(&x), b);
        assert_eq!(e.resolve(&y), a);

        let z = e.new_var();
        let trail = e.trail_len();
        let heap = e.heap.clone();
        assert!(e.unify(&z, &z));
        assert_eq!(e.heap, heap);
        assert_eq!(e.trail_len(), trail);

        assert!(!e.unify(&a, &b));
        assert_eq!(e.trail_len(), trail);
    }

    #[test]
    fn failed_unification_restores_store() {
        let mut e = setup("t.", "t");
        let x = e.new_var();
        let y = e.new_var();
        let f = Sym::intern("f");
        let t1 = Term::compound(f, vec![x.clone(), Term::Int(1)]);
        let t2 = Term::compound(f, vec![y.clone(), Term::Int(2)]);
        let before = e.heap.clone();
        assert!(!e.unify(&t1, &t2));
        assert_eq!(e.heap, before);
    }

    #[test]
    fn member_enumerates_in_clause_order() {
        let mut e = setup(MEMBER, "member(X, [1,2,3])");
        let mut seen = Vec::new();
        loop {
            match e.run().unwrap() {
                EngineEvent::Solution(a) => seen.push(a.to_string()),
                EngineEvent::Exhausted => break,
                _ => {}
            }
        }
        assert_eq!(seen, ["X = 1", "X = 2", "X = 3"]);
        assert_eq!(e.run().unwrap(), EngineEvent::Exhausted);
    }

    #[test]
    fn side_effect_is_reported_before_it_happens() {
        let mut e = setup(MEMBER, "member(X, [a]), write(X), nl");
        assert_eq!(e.run().unwrap(), EngineEvent::SideEffect("a".into()));
        assert_eq!(e.run().unwrap(), EngineEvent::SideEffect("\n".into()));
        assert!(matches!(e.run().unwrap(), EngineEvent::Solution(_)));
    }

    #[test]
    fn no_matching_clause_is_exhausted() {
        let mut e = setup("p(1).", "p(2)");
        assert_eq!(e.run().unwrap(), EngineEvent::Exhausted);
        let mut e = setup("p(1).", "undefined_pred(X)");
        assert_eq!(e.run().unwrap(), EngineEvent::Exhausted);
    }

    #[test]
    fn poll_points_every_k_reductions() {
        let mut e = setup("count(0).\ncount(N) :- N > 0, M is N - 1, count(M).", "count(10)");
        e.set_poll_interval(3);
        let mut polls = Vec::new();
        loop {
            match e.run().unwrap() {
                EngineEvent::PollPoint(n) => polls.push((n, e.reductions())),
                EngineEvent::Exhausted => break,
                _ => {}
            }
        }
        // 11 calls of count/1 in total.
        assert_eq!(polls, [(3, 3), (3, 6), (3, 9)]);
        assert_eq!(e.reductions(), 11);
    }

    #[test]
    fn backtrack_to_pops_and_untrails() {
        let src = "p(1). p(2). p(3).\nq(a). q(b).\nr(x). r(y).";
        let mut e = setup(src, "p(X), q(Y), r(Z), fail");
        e.set_poll_interval(1);
        while e.choicepoints().len() < 3 {
            e.run().unwrap();
        }
        let mark0 = (e.cps[0].heap_mark, e.cps[0].trail_mark);
        e.backtrack_to(0).unwrap();
        assert_eq!(e.choicepoints().len(), 1);
        assert_eq!(e.heap_len() as u32, mark0.0);
        assert_eq!(e.trail_len() as u32, mark0.1);
        for v in 0..3 {
            assert_eq!(e.deref(&Term::Var(v)), Term::Var(v));
        }
        assert!(e.backtrack_to(5).is_err());
    }

    #[test]
    fn arithmetic_and_comparison() {
        let got = answers("", "X is 7 // 2 + 3 * (4 - 1) - 10 mod 3, Y is -X");
        assert_eq!(got, ["X = 11, Y = -11"]);
        assert_eq!(
            answers("", "1 < 2, 2 =< 2, 3 > 2, 3 >= 3, 4 =:= 2 + 2, 4 =\\= 5").len(),
            1
        );
        assert!(answers("", "1 > 2").is_empty());
        assert!(matches!(
            run_sequential(job("", "X is Y + 1"), None),
            Err(EngineError::Instantiation(_))
        ));
        assert!(matches!(
            run_sequential(job("", "X is 1 // 0"), None),
            Err(EngineError::ZeroDivisor(_))
        ));
    }

    #[test]
    fn identity_and_non_unifiability() {
        assert_eq!(answers("", "X = f(Y), X \\== f(Z), Y = Z").len(), 1);
        assert!(answers("", "f(a) \\= f(X)").is_empty());
        assert_eq!(answers("", "f(a) \\= g(X)").len(), 1);
        // \= leaves no bindings behind.
        assert_eq!(answers("", "f(X, b) \\= f(a, c), X == X"), ["X = _G0"]);
    }

    #[test]
    fn structures_built_in_heads_and_bodies() {
        let src = "app([], L, L).\napp([H|T], L, [H|R]) :- app(T, L, R).\n\
                   wrap(X, f(X, Y), Y).";
        assert_eq!(answers(src, "app([1,2], [3], L)"), ["L = [1,2,3]"]);
        assert_eq!(answers(src, "app(X, Y, [a,b])").len(), 3);
        assert_eq!(answers(src, "wrap(1, T, 2)"), ["T = f(1,2)"]);
        assert_eq!(answers(src, "wrap(A, f(B, c), C)"), ["A = _G0, B = _G0, C = c"]);
        assert_eq!(answers(src, "X = g(Y, 1), X = g(2, Z)"), ["X = g(2,1), Y = 2, Z = 1"]);
    }

    #[test]
    fn limit_stops_early() {
        let got = run_sequential(job(MEMBER, "member(X, [1,2,3])"), Some(2)).unwrap();
        assert_eq!(got.answers.len(), 2);
    }

    #[test]
    fn sequential_runs_are_deterministic() {
        let j = job(include_str!("../corpus/queens.pl"), "queens(6, Qs)");
        let trace = || {
            let mut e = Engine::new(Arc::clone(&j), 0);
            e.set_poll_interval(17);
            let mut events = Vec::new();
            loop {
                let ev = e.run().unwrap();
                let done = ev == EngineEvent::Exhausted;
                events.push(ev);
                if done {
                    break events;
                }
            }
        };
        assert_eq!(trace(), trace());
    }
}
