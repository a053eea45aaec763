//! In-process message bus.
//!
//! Messages between one ordered pair of agents arrive in the order they were
//! sent; messages from different senders may interleave arbitrarily. Each
//! envelope is delayed by a seeded random number of clock ticks (bounded by
//! the reorder window) so tests can provoke cross-sender reordering
//! reproducibly. The clock is advanced by the driver.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::message::{Message, MessageKind};
use crate::wire::encode_message;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("unknown rank {0}")]
    UnknownRank(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub src: u32,
    pub dst: u32,
    /// Position in the `(src, dst)` stream.
    pub seq: u64,
    pub kind: MessageKind,
    pub frame: Vec<u8>,
}

impl Envelope {
    pub fn size(&self) -> usize {
        self.frame.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KindStats {
    pub messages: u64,
    pub bytes: u64,
}

/// Per-kind message and byte totals, indexed by [`MessageKind::code`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub kinds: [KindStats; MessageKind::ALL.len()],
}

impl Stats {
    pub fn get(&self, kind: MessageKind) -> KindStats {
        self.kinds[kind.code() as usize]
    }

    pub fn messages_total(&self) -> u64 {
        self.kinds.iter().map(|k| k.messages).sum()
    }

    pub fn bytes_total(&self) -> u64 {
        self.kinds.iter().map(|k| k.bytes).sum()
    }

    fn add(&mut self, kind: MessageKind, bytes: usize) {
        let k = &mut self.kinds[kind.code() as usize];
        k.messages += 1;
        k.bytes += bytes as u64;
    }
}

struct Pending {
    at: u64,
    order: u64,
    env: Envelope,
}

#[derive(Default)]
struct InboxState {
    pending: Vec<Pending>,
    /// Per sender: delivery time of the last envelope and next sequence number.
    last_at: Vec<u64>,
    next_seq: Vec<u64>,
    order: u64,
}

struct Inbox {
    state: Mutex<InboxState>,
    ready: Condvar,
}

/// One traced send: source, destination, kind and frame length.
pub type Sent = (u32, u32, MessageKind, usize);

pub struct Bus {
    inboxes: Vec<Inbox>,
    clock: AtomicU64,
    window: u64,
    rng: Mutex<ChaCha8Rng>,
    stats: Mutex<Stats>,
    trace: Mutex<Option<Vec<Sent>>>,
}

impl Bus {
    /// A bus for `agents` ranks. `window` bounds the injected delay in ticks;
    /// zero delivers everything on the next poll.
    pub fn new(agents: u32, window: u64, seed: u64) -> Bus {
        let n = agents as usize;
        Bus {
            inboxes: (0..n)
                .map(|_| Inbox {
                    state: Mutex::new(InboxState {
                        last_at: vec![0; n],
                        next_seq: vec![0; n],
                        ..InboxState::default()
                    }),
                    ready: Condvar::new(),
                })
                .collect(),
            clock: AtomicU64::new(0),
            window,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            stats: Mutex::new(Stats::default()),
            trace: Mutex::new(None),
        }
    }

    pub fn agents(&self) -> u32 {
        self.inboxes.len() as u32
    }

    pub fn now(&self) -> u64 {
        self.clock.load(Ordering::Relaxed)
    }

    /// Advances the clock by one tick and returns the new time.
    pub fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::Relaxed) + 1
    }

    /// Starts recording `(src, dst, kind, bytes)` for every envelope sent.
    pub fn record_trace(&self) {
        *self.trace.lock().unwrap() = Some(Vec::new());
    }

    pub fn trace(&self) -> Vec<Sent> {
        self.trace.lock().unwrap().clone().unwrap_or_default()
    }

    pub fn stats(&self) -> Stats {
        self.stats.lock().unwrap().clone()
    }

    fn check(&self, rank: u32) -> Result<&Inbox, TransportError> {
        self.inboxes.get(rank as usize).ok_or(TransportError::UnknownRank(rank))
    }

    /// Sends one message; returns its encoded size.
    pub fn send(&self, src: u32, dst: u32, msg: &Message) -> Result<usize, TransportError> {
        self.send_frame(src, dst, msg.kind(), encode_message(msg))
    }

    pub fn send_frame(&self, src: u32, dst: u32, kind: MessageKind, frame: Vec<u8>) -> Result<usize, TransportError> {
        self.check(src)?;
        let inbox = self.check(dst)?;
        let delay = if self.window == 0 {
            0
        } else {
            self.rng.lock().unwrap().gen_range(0..=self.window)
        };
        let size = frame.len();
        {
            let mut st = inbox.state.lock().unwrap();
            let s = src as usize;
            // Never overtake an earlier envelope of the same pair.
            let at = (self.now() + delay).max(st.last_at[s]);
            st.last_at[s] = at;
            let seq = st.next_seq[s];
            st.next_seq[s] += 1;
            let order = st.order;
            st.order += 1;
            st.pending.push(Pending {
                at,
                order,
                env: Envelope {
                    src,
                    dst,
                    seq,
                    kind,
                    frame,
                },
            });
        }
        inbox.ready.notify_one();
        self.stats.lock().unwrap().add(kind, size);
        if let Some(t) = self.trace.lock().unwrap().as_mut() {
            t.push((src, dst, kind, size));
        }
        Ok(size)
    }

    /// Sends `msg` to every rank except `src`, encoding it once.
    pub fn broadcast(&self, src: u32, msg: &Message) -> Result<(), TransportError> {
        self.check(src)?;
        let frame = encode_message(msg);
        for dst in 0..self.agents() {
            if dst != src {
                self.send_frame(src, dst, msg.kind(), frame.clone())?;
            }
        }
        Ok(())
    }

    /// Removes and returns the deliverable envelopes for `rank`, oldest
    /// first. With a filter, only matching kinds are taken; an envelope is
    /// never delivered ahead of a retained earlier one from the same sender.
    pub fn poll(&self, rank: u32, filter: Option<&[MessageKind]>) -> Result<Vec<Envelope>, TransportError> {
        let inbox = self.check(rank)?;
        let now = self.now();
        let mut st = inbox.state.lock().unwrap();
        if st.pending.is_empty() {
            return Ok(Vec::new());
        }
        st.pending.sort_by_key(|p| (p.at, p.order));
        let mut blocked = vec![false; self.inboxes.len()];
        let mut out = Vec::new();
        let mut kept = Vec::with_capacity(st.pending.len());
        for p in st.pending.drain(..) {
            let s = p.env.src as usize;
            let wanted = filter.is_none_or(|f| f.contains(&p.env.kind));
            if p.at <= now && wanted && !blocked[s] {
                out.push(p.env);
            } else {
                blocked[s] = true;
                kept.push(p);
            }
        }
        st.pending = kept;
        Ok(out)
    }

    /// Number of envelopes not yet delivered to `rank`.
    pub fn pending(&self, rank: u32) -> usize {
        self.inboxes
            .get(rank as usize)
            .map_or(0, |i| i.state.lock().unwrap().pending.len())
    }

    pub fn pending_total(&self) -> usize {
        (0..self.agents()).map(|r| self.pending(r)).sum()
    }

    /// Blocks until `rank` has a pending envelope or `timeout` passes.
    pub fn wait(&self, rank: u32, timeout: Duration) {
        if let Some(inbox) = self.inboxes.get(rank as usize) {
            let st = inbox.state.lock().unwrap();
            if st.pending.is_empty() {
                let _unused = inbox.ready.wait_timeout(st, timeout).unwrap();
            }
        }
    }

    /// Wakes every agent blocked in [`Bus::wait`].
    pub fn wake_all(&self) {
        for inbox in &self.inboxes {
            inbox.ready.notify_all();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(l: u32) -> Message {
        Message::ReplyInOsc { load: l }
    }

    fn loads(envs: &[Envelope]) -> Vec<(u32, u32)> {
        envs.iter()
            .map(|e| match crate::wire::peek_kind(&e.frame) {
                Some(MessageKind::ReplyInOsc) => (e.src, u32::from_le_bytes(e.frame[2..6].try_into().unwrap())),
                _ => (e.src, u32::MAX),
            })
            .collect()
    }

    #[test]
    fn pair_fifo_and_self_delivery() {
        let bus = Bus::new(3, 0, 1);
        bus.send(0, 1, &load(1)).unwrap();
        bus.send(0, 1, &load(2)).unwrap();
        bus.send(2, 2, &load(3)).unwrap();
        assert_eq!(loads(&bus.poll(1, None).unwrap()), [(0, 1), (0, 2)]);
        assert_eq!(loads(&bus.poll(2, None).unwrap()), [(2, 3)]);
        assert!(bus.poll(0, None).unwrap().is_empty());
        assert_eq!(bus.send(0, 7, &load(1)), Err(TransportError::UnknownRank(7)));
    }

    #[test]
    fn broadcast_counts_every_copy() {
        let bus = Bus::new(4, 0, 1);
        bus.broadcast(0, &Message::Halt).unwrap();
        let s = bus.stats().get(MessageKind::Halt);
        assert_eq!(s.messages, 3);
        assert_eq!(s.bytes, 6);
        for r in 1..4 {
            assert_eq!(bus.poll(r, None).unwrap().len(), 1);
        }
        assert!(bus.poll(0, None).unwrap().is_empty());
    }

    #[test]
    fn filtered_poll_keeps_the_rest() {
        let bus = Bus::new(3, 0, 1);
        let info = Message::SendLoadInfo {
            giver: 0,
            receiver: 0,
            giver_load: 4,
            receiver_load: 4,
            stamp: None,
        };
        let req = Message::RequestWork {
            requester: 2,
            load: 0,
            labels: Vec::new(),
            epoch: 0,
            broadcasts: 0,
        };
        bus.send(0, 1, &info).unwrap();
        bus.send(2, 1, &req).unwrap();
        let got = bus.poll(1, Some(&[MessageKind::SendLoadInfo])).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].kind, MessageKind::SendLoadInfo);
        assert_eq!(bus.pending(1), 1);
        // A retained envelope holds back later ones from the same sender.
        bus.send(2, 1, &info).unwrap();
        assert!(bus.poll(1, Some(&[MessageKind::SendLoadInfo])).unwrap().is_empty());
        let rest = bus.poll(1, None).unwrap();
        assert_eq!(
            rest.iter().map(|e| e.kind).collect::<Vec<_>>(),
            [MessageKind::RequestWork, MessageKind::SendLoadInfo]
        );
    }

    #[test]
    fn delays_reorder_senders_but_not_pairs() {
        let mut saw_reorder = false;
        for seed in 0..20 {
            let bus = Bus::new(3, 8, seed);
            for i in 0..10 {
                bus.send(0, 2, &load(i)).unwrap();
                bus.send(1, 2, &load(100 + i)).unwrap();
                bus.tick();
            }
            let mut got = Vec::new();
            for _ in 0..20 {
                bus.tick();
                got.extend(loads(&bus.poll(2, None).unwrap()));
            }
            assert_eq!(got.len(), 20);
            for src in 0..2 {
                let seq: Vec<u32> = got.iter().filter(|(s, _)| *s == src).map(|(_, l)| *l).collect();
                assert!(seq.windows(2).all(|w| w[0] < w[1]), "pair order broken: {seq:?}");
            }
            let sent_order: Vec<u32> = (0..10).flat_map(|i| [i, 100 + i]).collect();
            saw_reorder |= got.iter().map(|(_, l)| *l).collect::<Vec<_>>() != sent_order;
        }
        assert!(saw_reorder);
    }

    #[test]
    fn stats_match_recorded_trace() {
        let bus = Bus::new(4, 3, 9);
        bus.record_trace();
        bus.broadcast(1, &load(5)).unwrap();
        bus.send(2, 3, &Message::Halt).unwrap();
        bus.send(3, 0, &Message::RequestOsc { load: 1, key: vec![] }).unwrap();
        let trace = bus.trace();
        let stats = bus.stats();
        for kind in MessageKind::ALL {
            let (n, b) = trace
                .iter()
                .filter(|t| t.2 == kind)
                .fold((0, 0), |(n, b), t| (n + 1, b + t.3 as u64));
            assert_eq!(stats.get(kind), KindStats { messages: n, bytes: b });
        }
        assert_eq!(stats.messages_total(), 5);
    }
}
