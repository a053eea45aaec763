//! Order-sensitive computation: agents holding work to the left of the
//! current branch in the sequential search order must finish before a side
//! effect is performed.
//!
//! Every agent carries a position key, the path of sharing events that led
//! to its current work. The giver keeps the newer (left) part of its tree and
//! the receiver takes the older (right) part, so the key of a receiver is its
//! giver's key extended by one step, and later receivers of the same giver
//! get smaller steps. Keys compare lexicographically with a prefix first,
//! which is exactly the left-to-right order of the work they describe.

use std::collections::VecDeque;

/// Position of an agent's current work, as announced in a share
/// notification.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Stamp {
    /// Receipt count of the agent; every new piece of work bumps it.
    pub epoch: u32,
    pub key: Vec<u32>,
    /// Number of load broadcasts the agent had made before it asked for the
    /// work. Observers hold the stamp back until they have seen that many.
    pub after: u64,
}

/// Key of the `index`-th receiver (1-based) of the agent at `giver`.
pub fn child_key(giver: &[u32], index: u32) -> Vec<u32> {
    let mut k = Vec::with_capacity(giver.len() + 1);
    k.extend_from_slice(giver);
    k.push(u32::MAX - index);
    k
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Entry {
    epoch: u32,
    key: Vec<u32>,
    present: bool,
}

/// One agent's view of which agents hold work, left to right.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearVector {
    entries: Vec<Entry>,
}

impl LinearVector {
    /// `first` starts with the whole tree; nobody else has work.
    pub fn new(agents: u32, first: u32) -> LinearVector {
        let entries = (0..agents)
            .map(|r| Entry {
                epoch: 0,
                key: Vec::new(),
                present: r == first,
            })
            .collect();
        LinearVector { entries }
    }

    /// Ranks holding work, leftmost first.
    pub fn ranks(&self) -> Vec<u32> {
        let mut rs: Vec<u32> = (0..self.entries.len() as u32).filter(|&r| self.contains(r)).collect();
        rs.sort_by(|&a, &b| self.entries[a as usize].key.cmp(&self.entries[b as usize].key));
        rs
    }

    pub fn contains(&self, rank: u32) -> bool {
        self.entries.get(rank as usize).is_some_and(|e| e.present)
    }

    pub fn epoch(&self, rank: u32) -> u32 {
        self.entries[rank as usize].epoch
    }

    pub fn key(&self, rank: u32) -> Option<&[u32]> {
        let e = self.entries.get(rank as usize)?;
        e.present.then_some(&e.key[..])
    }

    /// Records that `rank` received work. Stale stamps are ignored.
    pub fn place(&mut self, rank: u32, stamp: &Stamp) -> bool {
        let e = &mut self.entries[rank as usize];
        if stamp.epoch <= e.epoch {
            return false;
        }
        *e = Entry {
            epoch: stamp.epoch,
            key: stamp.key.clone(),
            present: true,
        };
        true
    }

    /// Records that `rank` ran out of the work it received at `epoch`.
    pub fn remove(&mut self, rank: u32, epoch: u32) -> bool {
        let e = &mut self.entries[rank as usize];
        if epoch < e.epoch {
            return false;
        }
        let was = e.present;
        e.epoch = epoch;
        e.present = false;
        was
    }

    /// Present ranks strictly to the left of `key`.
    pub fn left_of(&self, key: &[u32]) -> Vec<u32> {
        self.ranks()
            .into_iter()
            .filter(|&r| self.entries[r as usize].key.as_slice() < key)
            .collect()
    }
}

/// Counts, per ordered pair, the notifications of sharing events that
/// arrived from the giver (`send1`) and from the receiver (`send2`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DedupMatrix {
    agents: usize,
    send1: Vec<u32>,
    send2: Vec<u32>,
}

impl DedupMatrix {
    pub fn new(agents: u32) -> DedupMatrix {
        let n = agents as usize;
        DedupMatrix {
            agents: n,
            send1: vec![0; n * n],
            send2: vec![0; n * n],
        }
    }

    fn at(&self, giver: u32, receiver: u32) -> usize {
        giver as usize * self.agents + receiver as usize
    }

    /// Notes a copy sent by the giver; true when it is the first copy of
    /// its event.
    pub fn from_giver(&mut self, giver: u32, receiver: u32) -> bool {
        let i = self.at(giver, receiver);
        self.send1[i] += 1;
        self.send1[i] > self.send2[i]
    }

    /// Notes a copy sent by the receiver; true when it is the first copy of
    /// its event.
    pub fn from_receiver(&mut self, giver: u32, receiver: u32) -> bool {
        let i = self.at(giver, receiver);
        self.send2[i] += 1;
        self.send2[i] > self.send1[i]
    }

    pub fn counts(&self, giver: u32, receiver: u32) -> (u32, u32) {
        let i = self.at(giver, receiver);
        (self.send1[i], self.send2[i])
    }
}

#[derive(Clone, Debug)]
enum Held {
    Place(Stamp),
    Remove { epoch: u32, after: u64 },
}

impl Held {
    fn after(&self) -> u64 {
        match self {
            Held::Place(s) => s.after,
            Held::Remove { after, .. } => *after,
        }
    }
}

/// Everything an agent tracks in order-sensitive mode.
#[derive(Clone, Debug)]
pub struct OscState {
    pub vector: LinearVector,
    pub dedup: DedupMatrix,
    /// Agents whose Request_OSC arrived while they were to our right.
    pub queue: VecDeque<u32>,
    /// Load broadcasts seen per sender.
    received: Vec<u64>,
    /// Changes to an agent's entry waiting for earlier broadcasts of it.
    held: Vec<(u32, Held)>,
    /// Epoch of each agent at which we last sent it a Request_OSC.
    requested: Vec<Option<u32>>,
}

impl OscState {
    pub fn new(agents: u32, first: u32) -> OscState {
        OscState {
            vector: LinearVector::new(agents, first),
            dedup: DedupMatrix::new(agents),
            queue: VecDeque::new(),
            received: vec![0; agents as usize],
            held: Vec::new(),
            requested: vec![None; agents as usize],
        }
    }

    /// A share notification `giver -> receiver` sent by `src`, which is one
    /// of the two. `broadcast` is false for copies applied locally.
    pub fn notification(&mut self, src: u32, giver: u32, receiver: u32, stamp: &Stamp, broadcast: bool) {
        if broadcast {
            self.received[src as usize] += 1;
        }
        let first = if src == giver {
            self.dedup.from_giver(giver, receiver)
        } else {
            self.dedup.from_receiver(giver, receiver)
        };
        if first {
            if src == receiver || self.received[receiver as usize] >= stamp.after {
                self.vector.place(receiver, stamp);
            } else {
                self.held.push((receiver, Held::Place(stamp.clone())));
            }
        }
        if broadcast {
            self.release(src);
        }
    }

    /// A broadcast from `src` that carries no stamp.
    pub fn plain_broadcast(&mut self, src: u32) {
        self.received[src as usize] += 1;
        self.release(src);
    }

    fn release(&mut self, src: u32) {
        let seen = self.received[src as usize];
        let mut i = 0;
        while i < self.held.len() {
            if self.held[i].0 == src && seen >= self.held[i].1.after() {
                match self.held.remove(i) {
                    (r, Held::Place(s)) => self.vector.place(r, &s),
                    (r, Held::Remove { epoch, .. }) => self.vector.remove(r, epoch),
                };
            } else {
                i += 1;
            }
        }
    }

    /// A work request from `rank`, idle after its work of `epoch`, sent
    /// after its first `after` broadcasts. A relayed request can overtake
    /// those broadcasts, and with them news of work `rank` gave away.
    pub fn requested_work(&mut self, rank: u32, epoch: u32, after: u64) {
        if self.received[rank as usize] >= after {
            self.vector.remove(rank, epoch);
        } else {
            self.held.push((rank, Held::Remove { epoch, after }));
        }
    }

    pub fn holding(&self) -> bool {
        !self.held.is_empty()
    }

    /// An acknowledgment from `from`, idle after its work of `epoch`.
    /// Acknowledgments from agents still running carry no news: their own
    /// notifications, sent earlier, already placed them to our right.
    pub fn acknowledged(&mut self, from: u32, epoch: u32, running: bool) {
        if running {
            return;
        }
        if epoch < self.vector.epoch(from) {
            // It has work we learned about after it answered; ask again.
            self.requested[from as usize] = None;
        } else {
            self.vector.remove(from, epoch);
        }
    }

    /// Ranks left of `key` that have not been asked about their current
    /// work; they are marked as asked.
    pub fn to_request(&mut self, key: &[u32]) -> Vec<u32> {
        let mut out = Vec::new();
        for r in self.vector.left_of(key) {
            let e = self.vector.epoch(r);
            if self.requested[r as usize] != Some(e) {
                self.requested[r as usize] = Some(e);
                out.push(r);
            }
        }
        out
    }

    /// Whether an agent whose work sits at `key` may perform its effect.
    pub fn may_proceed(&self, key: &[u32]) -> bool {
        !self.holding() && self.vector.left_of(key).is_empty()
    }

    pub fn reset_requests(&mut self) {
        self.requested.fill(None);
    }
}
