//! Binary encoding of messages and share payloads.
//!
//! Every frame starts with a version byte followed by the message kind.
//! Integers are little-endian and fixed-width, sequences are prefixed with a
//! `u32` length. Symbols travel as ids of the process-wide symbol table, so
//! frames are only meaningful between peers of the same process and build.

use std::collections::HashMap;
use std::sync::Arc;

use crate::engine::{Alternatives, Body, ChoicePoint, Cont, CpId, Frame, Goals, Job, NextClause};
use crate::message::{Message, MessageKind};
use crate::osc::Stamp;
use crate::splitting::{Label, ShareMode, SharePayload, SplitAssignment, SplitSpec, Strategy};
use crate::term::{Sym, Term};

pub const WIRE_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("frame truncated")]
    Truncated,
    #[error("unsupported frame version {0}")]
    Version(u8),
    #[error("bad {what} tag {tag}")]
    Tag { what: &'static str, tag: u8 },
    #[error("invalid frame: {0}")]
    Invalid(String),
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(n as u32);
    }

    fn term(&mut self, t: &Term) {
        match t {
            Term::Var(v) => {
                self.u8(0);
                self.u32(*v);
            }
            Term::Atom(s) => {
                self.u8(1);
                self.u32(s.0);
            }
            Term::Int(i) => {
                self.u8(2);
                self.i64(*i);
            }
            Term::Struct(f, args) => {
                self.u8(3);
                self.u32(f.0);
                self.len(args.len());
                for a in args.iter() {
                    self.term(a);
                }
            }
        }
    }

    fn opt_term(&mut self, t: &Option<Term>) {
        match t {
            None => self.u8(0),
            Some(t) => {
                self.u8(1);
                self.term(t);
            }
        }
    }

    fn clauses(&mut self, cs: &[u32]) {
        self.len(cs.len());
        for &c in cs {
            self.u32(c);
        }
    }

    fn next_clause(&mut self, n: &NextClause) {
        match n {
            NextClause::Clauses(a) => {
                self.u8(0);
                self.clauses(&a.ordered());
            }
            NextClause::TrustFail => self.u8(1),
            NextClause::Schedule => self.u8(2),
        }
    }

    fn label(&mut self, l: &Label) {
        self.u32(l.rank);
        self.u64(l.counter);
        self.u32(l.cp_index);
    }

    fn labels(&mut self, ls: &[Label]) {
        self.len(ls.len());
        for l in ls {
            self.label(l);
        }
    }

    fn cp_id(&mut self, id: CpId) {
        self.u32(id.rank);
        self.u64(id.seq);
    }

    fn key(&mut self, k: &[u32]) {
        self.len(k.len());
        for &x in k {
            self.u32(x);
        }
    }

    fn stamp(&mut self, s: &Option<Stamp>) {
        match s {
            None => self.u8(0),
            Some(s) => {
                self.u8(1);
                self.u32(s.epoch);
                self.key(&s.key);
                self.u64(s.after);
            }
        }
    }

    fn payload(&mut self, p: &SharePayload) {
        match p.mode {
            ShareMode::Full => self.u8(0),
            ShareMode::Incremental(l) => {
                self.u8(1);
                self.label(&l);
            }
        }
        self.u8(p.spec.strategy.code());
        self.u64(p.spec.ratio.to_bits());
        self.u8(p.spec.top_most as u8);
        self.u32(p.base_depth);
        match p.common_id {
            None => self.u8(0),
            Some(id) => {
                self.u8(1);
                self.cp_id(id);
            }
        }

        // Frames are shared between choice-points; each is sent once and
        // referenced by index (0 = empty continuation).
        let mut index: HashMap<*const Frame, u32> = HashMap::new();
        let mut order: Vec<&Arc<Frame>> = Vec::new();
        for cp in &p.cp_segment {
            let mut fresh = Vec::new();
            let mut cur = Some(&cp.call.frame);
            while let Some(f) = cur {
                if index.contains_key(&Arc::as_ptr(f)) {
                    break;
                }
                fresh.push(f);
                cur = f.next.as_ref().map(|g| &g.frame);
            }
            for f in fresh.into_iter().rev() {
                order.push(f);
                index.insert(Arc::as_ptr(f), order.len() as u32);
            }
        }
        let goals_ref = |w: &mut Writer, c: Option<&Goals>| match c {
            None => w.u32(0),
            Some(g) => {
                w.u32(index[&Arc::as_ptr(&g.frame)]);
                w.u32(g.at);
            }
        };
        self.len(order.len());
        for f in &order {
            match f.origin {
                Body::Query => self.u8(0),
                Body::Clause(c) => {
                    self.u8(1);
                    self.u32(c);
                }
            }
            self.u32(f.base);
            goals_ref(self, f.next.as_ref());
        }
        self.len(p.cp_segment.len());
        for cp in &p.cp_segment {
            goals_ref(self, Some(&cp.call));
            self.u32(cp.pred);
            self.next_clause(&cp.next);
            self.u32(cp.heap_mark);
            self.u32(cp.trail_mark);
            self.u8(cp.parallel as u8);
            self.u32(cp.par_index.unwrap_or(u32::MAX));
            self.cp_id(cp.id);
        }
        self.labels(&p.label_segment);
        self.u32(p.heap_base);
        self.len(p.heap_segment.len());
        for cell in &p.heap_segment {
            self.opt_term(cell);
        }
        self.len(p.trail_vars.len());
        for &v in &p.trail_vars {
            self.u32(v);
        }
        self.len(p.binding_installs.len());
        for (v, t) in &p.binding_installs {
            self.u32(*v);
            self.term(t);
        }
        self.len(p.nextclause_repairs.len());
        for (d, n) in &p.nextclause_repairs {
            self.u32(*d);
            self.next_clause(n);
        }
        let a = &p.split_assignment;
        self.len(a.keep.len());
        for (k, g) in a.keep.iter().zip(&a.give) {
            self.clauses(k);
            self.clauses(g);
        }
        self.u32(p.load_after);
        self.u32(p.receiver_load);
        self.len(p.prefix_check.len());
        for &id in &p.prefix_check {
            self.cp_id(id);
        }
    }
}

/// Encodes one message as a versioned frame.
pub fn encode_message(m: &Message) -> Vec<u8> {
    let mut w = Writer::default();
    w.u8(WIRE_VERSION);
    w.u8(m.kind().code());
    match m {
        Message::RequestWork {
            requester,
            load,
            labels,
            epoch,
            broadcasts,
        } => {
            w.u32(*requester);
            w.u32(*load);
            w.labels(labels);
            w.u32(*epoch);
            w.u64(*broadcasts);
        }
        Message::ReplyWithWork { payload, stamp } => {
            w.payload(payload);
            w.stamp(stamp);
        }
        Message::ReplyWithoutWork { requester, load } => {
            w.u32(*requester);
            w.u32(*load);
        }
        Message::SendLoadInfo {
            giver,
            receiver,
            giver_load,
            receiver_load,
            stamp,
        } => {
            w.u32(*giver);
            w.u32(*receiver);
            w.u32(*giver_load);
            w.u32(*receiver_load);
            w.stamp(stamp);
        }
        Message::ReplyInOsc { load } => w.u32(*load),
        Message::RequestOsc { load, key } => {
            w.u32(*load);
            w.key(key);
        }
        Message::OscAcknowledgment { load, epoch, running } => {
            w.u32(*load);
            w.u32(*epoch);
            w.u8(*running as u8);
        }
        Message::TerminationToken { black, initiator } => {
            w.u8(*black as u8);
            w.u32(*initiator);
        }
        Message::Halt => {}
    }
    w.buf
}

/// Encoded size of a share payload alone, without message framing.
pub fn payload_size(p: &SharePayload) -> usize {
    let mut w = Writer::default();
    w.payload(p);
    w.buf.len()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    job: &'a Job,
    symbols: u32,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(WireError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, WireError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(WireError::Tag { what: "boolean", tag }),
        }
    }
    /// Sequence length, bounded by the bytes left so corrupt lengths cannot
    /// trigger huge allocations.
    fn len(&mut self) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        if n > self.buf.len() - self.pos {
            return Err(WireError::Truncated);
        }
        Ok(n)
    }

    fn sym(&mut self) -> Result<Sym, WireError> {
        let s = self.u32()?;
        if s >= self.symbols {
            return Err(WireError::Invalid(format!("unknown symbol {s}")));
        }
        Ok(Sym(s))
    }

    fn term(&mut self) -> Result<Term, WireError> {
        Ok(match self.u8()? {
            0 => Term::Var(self.u32()?),
            1 => Term::Atom(self.sym()?),
            2 => Term::Int(self.i64()?),
            3 => {
                let f = self.sym()?;
                let n = self.len()?;
                if n == 0 {
                    return Err(WireError::Invalid("compound of arity 0".into()));
                }
                let args = (0..n).map(|_| self.term()).collect::<Result<Vec<_>, _>>()?;
                Term::Struct(f, args.into())
            }
            tag => return Err(WireError::Tag { what: "term", tag }),
        })
    }

    fn opt_term(&mut self) -> Result<Option<Term>, WireError> {
        Ok(if self.bool()? { Some(self.term()?) } else { None })
    }

    fn clauses(&mut self) -> Result<Vec<u32>, WireError> {
        let n = self.len()?;
        (0..n)
            .map(|_| {
                let c = self.u32()?;
                if c as usize >= self.job.program.clause_count() {
                    return Err(WireError::Invalid(format!("clause reference {c} out of range")));
                }
                Ok(c)
            })
            .collect()
    }

    fn next_clause(&mut self) -> Result<NextClause, WireError> {
        Ok(match self.u8()? {
            0 => NextClause::Clauses(Alternatives::from_ordered(self.clauses()?)),
            1 => NextClause::TrustFail,
            2 => NextClause::Schedule,
            tag => {
                return Err(WireError::Tag {
                    what: "next-clause",
                    tag,
                })
            }
        })
    }

    fn pred(&mut self) -> Result<u32, WireError> {
        let p = self.u32()?;
        if p as usize >= self.job.program.predicate_count() {
            return Err(WireError::Invalid(format!("predicate {p} out of range")));
        }
        Ok(p)
    }

    /// A goal position referring to an already decoded frame.
    fn goals(&mut self, table: &[Arc<Frame>]) -> Result<Cont, WireError> {
        let i = self.u32()? as usize;
        if i == 0 {
            return Ok(None);
        }
        let frame = table
            .get(i - 1)
            .ok_or_else(|| WireError::Invalid(format!("frame {i} out of range")))?;
        let at = self.u32()?;
        if at as usize >= frame.body.len() {
            return Err(WireError::Invalid(format!("goal {at} outside frame {i}")));
        }
        Ok(Some(Goals {
            frame: Arc::clone(frame),
            at,
        }))
    }

    fn label(&mut self) -> Result<Label, WireError> {
        Ok(Label {
            rank: self.u32()?,
            counter: self.u64()?,
            cp_index: self.u32()?,
        })
    }

    fn labels(&mut self) -> Result<Vec<Label>, WireError> {
        let n = self.len()?;
        (0..n).map(|_| self.label()).collect()
    }

    fn cp_id(&mut self) -> Result<CpId, WireError> {
        Ok(CpId {
            rank: self.u32()?,
            seq: self.u64()?,
        })
    }

    fn key(&mut self) -> Result<Vec<u32>, WireError> {
        let n = self.len()?;
        (0..n).map(|_| self.u32()).collect()
    }

    fn stamp(&mut self) -> Result<Option<Stamp>, WireError> {
        if !self.bool()? {
            return Ok(None);
        }
        Ok(Some(Stamp {
            epoch: self.u32()?,
            key: self.key()?,
            after: self.u64()?,
        }))
    }

    fn payload(&mut self) -> Result<SharePayload, WireError> {
        let mode = match self.u8()? {
            0 => ShareMode::Full,
            1 => ShareMode::Incremental(self.label()?),
            tag => {
                return Err(WireError::Tag {
                    what: "share mode",
                    tag,
                })
            }
        };
        let code = self.u8()?;
        let strategy = Strategy::from_code(code).ok_or(WireError::Tag {
            what: "strategy",
            tag: code,
        })?;
        let ratio = f64::from_bits(self.u64()?);
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(WireError::Invalid(format!("split ratio {ratio}")));
        }
        let spec = SplitSpec {
            strategy,
            ratio,
            top_most: self.bool()?,
        };
        let base_depth = self.u32()?;
        let common_id = if self.bool()? { Some(self.cp_id()?) } else { None };

        let frames = self.len()?;
        let mut table: Vec<Arc<Frame>> = Vec::with_capacity(frames);
        for _ in 0..frames {
            let origin = match self.u8()? {
                0 => Body::Query,
                1 => Body::Clause(self.u32()?),
                tag => {
                    return Err(WireError::Tag {
                        what: "frame origin",
                        tag,
                    })
                }
            };
            let body = self
                .job
                .body(origin)
                .ok_or_else(|| WireError::Invalid(format!("frame origin {origin:?} out of range")))?;
            let base = self.u32()?;
            let next = self.goals(&table)?;
            table.push(Arc::new(Frame {
                body,
                origin,
                base,
                next,
            }));
        }
        let n = self.len()?;
        let mut cp_segment = Vec::with_capacity(n);
        for _ in 0..n {
            let call = self
                .goals(&table)?
                .ok_or_else(|| WireError::Invalid("choice-point without a call".into()))?;
            let pred = self.pred()?;
            let next = self.next_clause()?;
            let heap_mark = self.u32()?;
            let trail_mark = self.u32()?;
            let parallel = self.bool()?;
            let par_index = match self.u32()? {
                u32::MAX => None,
                i => Some(i),
            };
            if parallel != par_index.is_some() {
                return Err(WireError::Invalid("parallel flag disagrees with position".into()));
            }
            let id = self.cp_id()?;
            cp_segment.push(ChoicePoint {
                call,
                pred,
                next,
                heap_mark,
                trail_mark,
                parallel,
                par_index,
                id,
            });
        }
        let label_segment = self.labels()?;
        let heap_base = self.u32()?;
        let n = self.len()?;
        let heap_segment = (0..n).map(|_| self.opt_term()).collect::<Result<_, _>>()?;
        let n = self.len()?;
        let trail_vars = (0..n).map(|_| self.u32()).collect::<Result<_, _>>()?;
        let n = self.len()?;
        let binding_installs = (0..n)
            .map(|_| Ok((self.u32()?, self.term()?)))
            .collect::<Result<_, WireError>>()?;
        let n = self.len()?;
        let nextclause_repairs = (0..n)
            .map(|_| Ok((self.u32()?, self.next_clause()?)))
            .collect::<Result<_, WireError>>()?;
        let n = self.len()?;
        let mut split_assignment = SplitAssignment::default();
        for _ in 0..n {
            split_assignment.keep.push(self.clauses()?);
            split_assignment.give.push(self.clauses()?);
        }
        let load_after = self.u32()?;
        let receiver_load = self.u32()?;
        let n = self.len()?;
        let prefix_check = (0..n).map(|_| self.cp_id()).collect::<Result<_, _>>()?;
        Ok(SharePayload {
            mode,
            spec,
            base_depth,
            common_id,
            cp_segment,
            label_segment,
            heap_base,
            heap_segment,
            trail_vars,
            binding_installs,
            nextclause_repairs,
            split_assignment,
            load_after,
            receiver_load,
            prefix_check,
        })
    }
}

/// Decodes a frame produced by [`encode_message`]. Clause and predicate
/// references are validated against the job's program.
pub fn decode_message(buf: &[u8], job: &Job) -> Result<Message, WireError> {
    let mut r = Reader {
        buf,
        pos: 0,
        job,
        symbols: Sym::count(),
    };
    let version = r.u8()?;
    if version != WIRE_VERSION {
        return Err(WireError::Version(version));
    }
    let code = r.u8()?;
    let kind = MessageKind::from_code(code).ok_or(WireError::Tag {
        what: "message",
        tag: code,
    })?;
    let m = match kind {
        MessageKind::RequestWork => Message::RequestWork {
            requester: r.u32()?,
            load: r.u32()?,
            labels: r.labels()?,
            epoch: r.u32()?,
            broadcasts: r.u64()?,
        },
        MessageKind::ReplyWithWork => Message::ReplyWithWork {
            payload: Box::new(r.payload()?),
            stamp: r.stamp()?,
        },
        MessageKind::ReplyWithoutWork => Message::ReplyWithoutWork {
            requester: r.u32()?,
            load: r.u32()?,
        },
        MessageKind::SendLoadInfo => Message::SendLoadInfo {
            giver: r.u32()?,
            receiver: r.u32()?,
            giver_load: r.u32()?,
            receiver_load: r.u32()?,
            stamp: r.stamp()?,
        },
        MessageKind::ReplyInOsc => Message::ReplyInOsc { load: r.u32()? },
        MessageKind::RequestOsc => Message::RequestOsc {
            load: r.u32()?,
            key: r.key()?,
        },
        MessageKind::OscAcknowledgment => Message::OscAcknowledgment {
            load: r.u32()?,
            epoch: r.u32()?,
            running: r.bool()?,
        },
        MessageKind::TerminationToken => Message::TerminationToken {
            black: r.bool()?,
            initiator: r.u32()?,
        },
        MessageKind::Halt => Message::Halt,
    };
    if r.pos != buf.len() {
        return Err(WireError::Invalid(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(m)
}

/// Kind of an encoded frame, read without decoding the body.
pub fn peek_kind(buf: &[u8]) -> Option<MessageKind> {
    match buf {
        [WIRE_VERSION, code, ..] => MessageKind::from_code(*code),
        _ => None,
    }
}
