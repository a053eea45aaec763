//! Scheduling: who to ask for work, central matchmaking and distributed
//! termination detection.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::splitting::Label;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Ask the agent with the largest known load; it gives from the bottom
    /// of its stack.
    BottomMost,
    /// As `BottomMost`, but the giver hands over its oldest choice-point.
    TopMost,
    /// Ask the next agent, round-robin after the previous victim, whose
    /// known load exceeds the threshold.
    RandomRr,
    /// A central agent that does no search pairs idle workers with busy
    /// ones.
    Centralized,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::BottomMost,
        Policy::TopMost,
        Policy::RandomRr,
        Policy::Centralized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::BottomMost => "bottom_most",
            Policy::TopMost => "top_most",
            Policy::RandomRr => "random_rr",
            Policy::Centralized => "centralized",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Policy, String> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

/// One agent's estimate of every agent's load.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadVector {
    me: u32,
    loads: Vec<u32>,
}

impl LoadVector {
    pub fn new(agents: u32, me: u32) -> LoadVector {
        LoadVector {
            me,
            loads: vec![0; agents as usize],
        }
    }

    pub fn get(&self, rank: u32) -> u32 {
        self.loads[rank as usize]
    }

    pub fn set(&mut self, rank: u32, load: u32) {
        self.loads[rank as usize] = load;
    }

    pub fn loads(&self) -> &[u32] {
        &self.loads
    }

    fn others(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let me = self.me;
        self.loads
            .iter()
            .enumerate()
            .map(|(r, &l)| (r as u32, l))
            .filter(move |&(r, _)| r != me)
    }

    /// Every other agent is believed to have no work.
    pub fn all_zero(&self) -> bool {
        self.others().all(|(_, l)| l == 0)
    }

    /// The other agent with the largest load, lowest rank on ties.
    pub fn argmax(&self) -> Option<(u32, u32)> {
        self.others().fold(None, |best: Option<(u32, u32)>, (r, l)| match best {
            Some((_, bl)) if bl >= l => best,
            _ => Some((r, l)),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Victim {
    Ask(u32),
    /// Nobody is known to be above the threshold; this agent has the most
    /// work and may be asked once the request has waited a while.
    Defer(u32),
    /// Every other agent is believed idle.
    Nobody,
}

/// Chooses whom an idle agent asks for work. `central` is the central
/// agent under the centralized policy.
pub fn select_victim(
    loads: &LoadVector,
    policy: Policy,
    threshold: u32,
    previous: Option<u32>,
    central: Option<u32>,
) -> Victim {
    if let (Policy::Centralized, Some(c)) = (policy, central) {
        return Victim::Ask(c);
    }
    let Some((best, max)) = loads.argmax() else {
        return Victim::Nobody;
    };
    if max == 0 {
        return Victim::Nobody;
    }
    if max <= threshold {
        return Victim::Defer(best);
    }
    if policy == Policy::RandomRr {
        let n = loads.loads.len() as u32;
        let start = previous.unwrap_or(loads.me);
        for step in 1..=n {
            let r = (start + step) % n;
            if r != loads.me && loads.get(r) > threshold {
                return Victim::Ask(r);
            }
        }
    }
    Victim::Ask(best)
}

/// What an agent should do with the termination token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenAction {
    Keep,
    Forward { to: u32, black: bool },
    Terminate,
}

/// Token-ring termination detection. The token travels the ring
/// `0 -> 1 -> .. -> n-1 -> 0`, leaving an agent only while it is passive:
/// idle and not waiting for the answer to a work request. Work only moves
/// as such an answer, so it is never in flight past a passive agent.
/// An agent turns black when it sends work and white when it passes the
/// token on. Rank `initiator` declares termination when the token comes
/// back white and it is itself white.
#[derive(Clone, Debug)]
pub struct TokenRing {
    rank: u32,
    ring: u32,
    initiator: u32,
    black: bool,
    token: Option<bool>,
    round: bool,
}

impl TokenRing {
    pub fn new(rank: u32, ring: u32, initiator: u32) -> TokenRing {
        TokenRing {
            rank,
            ring,
            initiator,
            black: false,
            token: (rank == initiator).then_some(false),
            round: false,
        }
    }

    pub fn work_sent(&mut self) {
        self.black = true;
    }

    pub fn receive(&mut self, black: bool) {
        self.token = Some(black);
    }

    pub fn holding(&self) -> bool {
        self.token.is_some()
    }

    pub fn is_black(&self) -> bool {
        self.black
    }

    fn next(&self) -> u32 {
        (self.rank + 1) % self.ring
    }

    /// Called while the agent is passive (see above). The initiator only
    /// starts a round when `may_start` holds.
    pub fn passive(&mut self, may_start: bool) -> TokenAction {
        let Some(token_black) = self.token else {
            return TokenAction::Keep;
        };
        if self.rank != self.initiator {
            self.token = None;
            let black = token_black || self.black;
            self.black = false;
            return TokenAction::Forward { to: self.next(), black };
        }
        if self.round && !token_black && !self.black {
            self.token = None;
            return TokenAction::Terminate;
        }
        if !self.round && !may_start {
            return TokenAction::Keep;
        }
        if self.ring == 1 {
            self.round = true;
            return if self.black {
                self.black = false;
                TokenAction::Keep
            } else {
                self.token = None;
                TokenAction::Terminate
            };
        }
        self.round = true;
        self.black = false;
        self.token = None;
        TokenAction::Forward {
            to: self.next(),
            black: false,
        }
    }
}

/// A work request queued at the central agent.
#[derive(Clone, Debug, PartialEq)]
pub struct PendingRequest {
    pub requester: u32,
    pub labels: Vec<Label>,
    pub epoch: u32,
    pub broadcasts: u64,
}

/// The central agent's matchmaking: queued requests are forwarded, oldest
/// first, to the most loaded worker above the threshold.
#[derive(Clone, Debug)]
pub struct Matchmaker {
    pub loads: LoadVector,
    pub queue: VecDeque<PendingRequest>,
    threshold: u32,
}

impl Matchmaker {
    pub fn new(agents: u32, central: u32, threshold: u32) -> Matchmaker {
        Matchmaker {
            loads: LoadVector::new(agents, central),
            queue: VecDeque::new(),
            threshold,
        }
    }

    pub fn enqueue(&mut self, req: PendingRequest) {
        self.loads.set(req.requester, 0);
        self.queue.push_back(req);
    }

    /// Pairs as many queued requests as current loads allow. Each forward
    /// lowers the victim's estimate by one until its next report.
    pub fn dispatch(&mut self) -> Vec<(PendingRequest, u32)> {
        let mut out = Vec::new();
        let mut kept = VecDeque::new();
        while let Some(req) = self.queue.pop_front() {
            let victim = self
                .loads
                .others()
                .filter(|&(r, l)| r != req.requester && l > self.threshold)
                .fold(None, |best: Option<(u32, u32)>, (r, l)| match best {
                    Some((_, bl)) if bl >= l => best,
                    _ => Some((r, l)),
                });
            match victim {
                Some((v, l)) => {
                    self.loads.set(v, l - 1);
                    out.push((req, v));
                }
                None => kept.push_back(req),
            }
        }
        self.queue = kept;
        out
    }

    /// Every worker is waiting in the queue, so no work is left anywhere.
    pub fn all_waiting(&self, workers: usize) -> bool {
        self.queue.len() == workers
    }
}

/// A randomized model of the termination protocol, independent of the
/// engine.
pub mod model {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{TokenAction, TokenRing};

    /// Outcome of one clean model run.
    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub struct ModelRun {
        pub shares: u32,
        /// Token decisions taken while some work message was in flight.
        pub in_flight_work: u32,
    }

    /// A message in the termination model.
    #[derive(Clone, Copy, Debug)]
    enum Msg {
        Request,
        Work(u32),
        Deny,
        Token(bool),
    }

    #[derive(Clone, Copy, Debug, PartialEq)]
    enum St {
        Active,
        Idle,
        Awaiting,
    }

    /// Four agents: active ones burn a work budget; idle ones ask a random
    /// agent for work and wait for the answer, which may carry half of the
    /// victim's budget. Messages sit in flight for a random time, in
    /// per-pair order. Every interleaving must end in one termination,
    /// never while work is held or in flight.
    pub fn run(seed: u64) -> Result<ModelRun, String> {
        const N: usize = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rings: Vec<TokenRing> = (0..N as u32).map(|r| TokenRing::new(r, N as u32, 0)).collect();
        let mut budget = [0u32; N];
        budget[0] = rng.gen_range(1..60);
        let mut st = [St::Active, St::Idle, St::Idle, St::Idle];
        let mut flight: Vec<(usize, usize, u64, Msg)> = Vec::new();
        let mut clock = 0u64;
        let mut shares = 0;
        let mut in_flight_work = 0;
        for _ in 0..1_000_000 {
            clock += 1;
            let who = rng.gen_range(0..N);
            let due = flight
                .iter()
                .enumerate()
                .filter(|(_, m)| m.1 == who && m.2 <= clock)
                .map(|(i, m)| (i, m.0))
                .collect::<Vec<_>>();
            let mut delivered = false;
            for (i, src) in due {
                if flight.iter().position(|m| m.0 == src && m.1 == who) != Some(i) {
                    continue;
                }
                let (_, _, _, m) = flight.remove(i);
                let delay = clock + rng.gen_range(0..40);
                match m {
                    Msg::Request => {
                        if st[who] == St::Active && budget[who] > 1 && rng.gen_bool(0.7) {
                            let give = budget[who] / 2;
                            budget[who] -= give;
                            shares += 1;
                            rings[who].work_sent();
                            flight.push((who, src, delay, Msg::Work(give)));
                        } else {
                            flight.push((who, src, delay, Msg::Deny));
                        }
                    }
                    Msg::Work(k) => {
                        if st[who] != St::Awaiting {
                            return Err(format!("seed {seed}: work reached agent {who}, which did not ask"));
                        }
                        st[who] = St::Active;
                        budget[who] = k;
                    }
                    Msg::Deny => {
                        if st[who] != St::Awaiting {
                            return Err(format!("seed {seed}: denial reached agent {who}, which did not ask"));
                        }
                        st[who] = St::Idle;
                    }
                    Msg::Token(b) => rings[who].receive(b),
                }
                delivered = true;
                break;
            }
            if !delivered {
                match st[who] {
                    St::Active => {
                        budget[who] -= 1;
                        if budget[who] == 0 {
                            st[who] = St::Idle;
                        }
                    }
                    St::Idle if rng.gen_bool(0.3) => {
                        let to = (who + rng.gen_range(1..N)) % N;
                        st[who] = St::Awaiting;
                        flight.push((who, to, clock + rng.gen_range(0..40), Msg::Request));
                    }
                    _ => {}
                }
            }
            if st[who] == St::Idle {
                if flight.iter().any(|m| matches!(m.3, Msg::Work(_))) {
                    in_flight_work += 1;
                }
                match rings[who].passive(true) {
                    TokenAction::Keep => {}
                    TokenAction::Forward { to, black } => {
                        flight.push((who, to as usize, clock + rng.gen_range(0..40), Msg::Token(black)))
                    }
                    TokenAction::Terminate => {
                        let busy = st.contains(&St::Active);
                        let pending = flight.iter().any(|m| matches!(m.3, Msg::Work(_)));
                        if busy || pending {
                            return Err(format!("seed {seed}: false termination after {shares} shares"));
                        }
                        return Ok(ModelRun { shares, in_flight_work });
                    }
                }
            }
        }
        Err(format!("seed {seed}: no termination"))
    }
}
