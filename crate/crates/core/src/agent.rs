//! Agents: a sequential engine plus the scheduling state machine around it.

use std::collections::VecDeque;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use crate::engine::{Answer, Engine, EngineEvent, Job};
use crate::message::{Message, MessageKind};
use crate::osc::{child_key, OscState, Stamp};
use crate::run::{LoadPropagation, RunConfig, RunError, Shared, SharingEvent};
use crate::scheduler::{select_victim, LoadVector, Matchmaker, PendingRequest, TokenAction, TokenRing, Victim};
use crate::splitting::{
    build_share_payload, find_common_frontier, install_payload, invalidate_labels, label_parallel_choicepoints,
    SharePayload,
};
use crate::transport::{Bus, Envelope};
use crate::wire::decode_message;

/// Longest wait, in bus ticks, before a deferred request is sent anyway.
const MAX_BACKOFF: u64 = 256;

/// Kinds a running agent handles at every poll; the rest wait for every
/// fourth one.
const EVERY_POLL: [MessageKind; 5] = [
    MessageKind::SendLoadInfo,
    MessageKind::RequestOsc,
    MessageKind::OscAcknowledgment,
    MessageKind::TerminationToken,
    MessageKind::Halt,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    /// Did something; step again.
    Busy,
    /// Nothing to do until a message arrives.
    Idle,
    Halted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Idle {
    Choose,
    /// A request is out; no other is sent until it is answered.
    Awaiting(u32),
    /// Nobody is above the threshold; ask `probe` at tick `until`.
    Waiting {
        until: u64,
        probe: u32,
    },
    DeadEnd,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Mode {
    Running,
    /// Holding a side effect until no work is left of ours.
    Ordered {
        text: String,
        asked: bool,
    },
    Scheduling(Idle),
    Halted,
}

/// Per-agent results collected after the run.
#[derive(Clone, Debug, Default)]
pub struct AgentReport {
    pub alternatives: u64,
    pub executions: Vec<crate::engine::Execution>,
    pub halted: bool,
}

pub struct Agent {
    rank: u32,
    cfg: Arc<RunConfig>,
    job: Arc<Job>,
    bus: Arc<Bus>,
    shared: Arc<Shared>,
    engine: Engine,
    loads: LoadVector,
    mode: Mode,
    token: Option<TokenRing>,
    central: Option<u32>,
    osc: Option<OscState>,
    key: Vec<u32>,
    epoch: u32,
    shares_in_epoch: u32,
    broadcasts: u64,
    polls: u64,
    last_victim: Option<u32>,
    backoff: u64,
    participations: u64,
    reported_above: bool,
}

impl Agent {
    pub(crate) fn new(
        rank: u32,
        first: u32,
        central: Option<u32>,
        cfg: Arc<RunConfig>,
        job: Arc<Job>,
        bus: Arc<Bus>,
        shared: Arc<Shared>,
    ) -> Agent {
        let n = bus.agents();
        let mut engine = if rank == first {
            Engine::new(Arc::clone(&job), rank)
        } else {
            Engine::idle(Arc::clone(&job), rank)
        };
        engine.set_poll_interval((cfg.poll_frequency / 4).max(1));
        engine.record_executions(cfg.record_executions);
        let mut loads = LoadVector::new(n, rank);
        loads.set(first, cfg.threshold + 1);
        let token = central.is_none().then(|| TokenRing::new(rank, n, 0));
        let osc = cfg.osc.then(|| OscState::new(n, first));
        let mode = if rank == first {
            Mode::Running
        } else {
            Mode::Scheduling(Idle::Choose)
        };
        Agent {
            rank,
            cfg,
            job,
            bus,
            shared,
            engine,
            loads,
            mode,
            token,
            central,
            osc,
            key: Vec::new(),
            epoch: 0,
            shares_in_epoch: 0,
            broadcasts: 0,
            polls: 0,
            last_victim: None,
            backoff: 1,
            participations: 0,
            reported_above: true,
        }
    }

    pub fn rank(&self) -> u32 {
        self.rank
    }

    pub fn is_halted(&self) -> bool {
        self.mode == Mode::Halted
    }

    pub(crate) fn finish(mut self) -> AgentReport {
        AgentReport {
            alternatives: self.engine.alternatives_run(),
            executions: self.engine.take_executions(),
            halted: self.mode == Mode::Halted,
        }
    }

    fn protocol(&self, msg: impl Into<String>) -> RunError {
        RunError::Protocol {
            rank: self.rank,
            msg: msg.into(),
        }
    }

    pub fn step(&mut self) -> Result<Step, RunError> {
        match self.mode {
            Mode::Halted => Ok(Step::Halted),
            Mode::Running => self.step_running(),
            Mode::Ordered { .. } => self.step_ordered(),
            Mode::Scheduling(_) => self.step_scheduling(),
        }
    }

    fn step_running(&mut self) -> Result<Step, RunError> {
        match self.engine.run()? {
            EngineEvent::Solution(a) => self.solution(a),
            EngineEvent::SideEffect(text) => {
                if self.osc.is_some() {
                    self.mode = Mode::Ordered { text, asked: false };
                    return self.step_ordered();
                }
                self.shared.output.lock().unwrap().push_str(&text);
            }
            EngineEvent::PollPoint(_) => self.poll()?,
            EngineEvent::Exhausted => self.run_dry()?,
        }
        Ok(Step::Busy)
    }

    fn solution(&mut self, a: Answer) {
        self.shared.solutions.lock().unwrap().push(a);
        if self.cfg.first_solution {
            self.halt_all();
        }
    }

    fn halt_all(&mut self) {
        self.bus.broadcast(self.rank, &Message::Halt).ok();
        self.mode = Mode::Halted;
    }

    fn poll(&mut self) -> Result<(), RunError> {
        self.polls += 1;
        for env in self.bus.poll(self.rank, Some(&[MessageKind::SendLoadInfo]))? {
            self.handle(env)?;
        }
        let filter = (!self.polls.is_multiple_of(4)).then_some(&EVERY_POLL[..]);
        for env in self.bus.poll(self.rank, filter)? {
            self.handle(env)?;
            if self.mode == Mode::Halted {
                return Ok(());
            }
        }
        let load = self.engine.load();
        self.loads.set(self.rank, load);
        if let LoadPropagation::Periodic(p) = self.cfg.load_propagation {
            if self.polls.is_multiple_of(p.max(1) as u64) {
                self.load_update(load);
            }
        }
        if let Some(c) = self.central {
            // Keep the centre informed whenever the load crosses the
            // threshold in either direction.
            let above = load > self.cfg.threshold;
            if above != self.reported_above {
                self.reported_above = above;
                self.bus.send(self.rank, c, &self.plain_info(load))?;
            }
        }
        Ok(())
    }

    fn plain_info(&self, load: u32) -> Message {
        Message::SendLoadInfo {
            giver: self.rank,
            receiver: self.rank,
            giver_load: load,
            receiver_load: load,
            stamp: None,
        }
    }

    /// Tells the others this agent's current load.
    fn load_update(&mut self, load: u32) {
        match self.central {
            Some(c) if self.osc.is_none() => {
                self.bus.send(self.rank, c, &self.plain_info(load)).ok();
            }
            _ => self.broadcast_info(self.plain_info(load)),
        }
    }

    fn broadcast_info(&mut self, msg: Message) {
        self.bus.broadcast(self.rank, &msg).ok();
        self.broadcasts += 1;
    }

    fn handle(&mut self, env: Envelope) -> Result<(), RunError> {
        let src = env.src;
        match decode_message(&env.frame, &self.job)? {
            Message::SendLoadInfo {
                giver,
                receiver,
                giver_load,
                receiver_load,
                stamp,
            } => {
                if giver != self.rank {
                    self.loads.set(giver, giver_load);
                }
                if receiver != self.rank {
                    self.loads.set(receiver, receiver_load);
                }
                if let Some(osc) = &mut self.osc {
                    match stamp {
                        Some(s) if giver != receiver => osc.notification(src, giver, receiver, &s, true),
                        _ => osc.plain_broadcast(src),
                    }
                }
            }
            Message::RequestWork {
                requester,
                labels,
                epoch,
                broadcasts,
                ..
            } => self.request_work(requester, labels, epoch, broadcasts)?,
            Message::ReplyWithWork { payload, stamp } => self.receive_work(src, *payload, stamp)?,
            Message::ReplyWithoutWork { load, .. } => {
                self.loads.set(src, load);
                self.denied(src)?;
            }
            Message::ReplyInOsc { .. } => {
                self.loads.set(src, 1);
                self.denied(src)?;
            }
            Message::RequestOsc { key, .. } => {
                let left = key < self.key;
                let holds_work = matches!(self.mode, Mode::Running | Mode::Ordered { .. });
                if !holds_work || left {
                    self.acknowledge(src, holds_work)?;
                } else if let Some(osc) = &mut self.osc {
                    osc.queue.push_back(src);
                }
            }
            Message::OscAcknowledgment { epoch, running, .. } => {
                if let Some(osc) = &mut self.osc {
                    osc.acknowledged(src, epoch, running);
                }
            }
            Message::TerminationToken { black, .. } => match &mut self.token {
                Some(t) => t.receive(black),
                None => return Err(self.protocol("termination token under central scheduling")),
            },
            Message::Halt => self.mode = Mode::Halted,
        }
        Ok(())
    }

    fn acknowledge(&mut self, to: u32, running: bool) -> Result<(), RunError> {
        let ack = Message::OscAcknowledgment {
            load: self.engine.load(),
            epoch: self.epoch,
            running,
        };
        self.bus.send(self.rank, to, &ack)?;
        Ok(())
    }

    fn request_work(
        &mut self,
        requester: u32,
        labels: Vec<crate::splitting::Label>,
        epoch: u32,
        broadcasts: u64,
    ) -> Result<(), RunError> {
        self.loads.set(requester, 0);
        if let Some(osc) = &mut self.osc {
            osc.requested_work(requester, epoch, broadcasts);
        }
        match self.mode {
            Mode::Ordered { .. } => {
                let reply = Message::ReplyInOsc {
                    load: self.engine.load(),
                };
                self.bus.send(self.rank, requester, &reply)?;
                return Ok(());
            }
            Mode::Running if self.engine.load() > self.cfg.threshold => {
                // share() needs &mut self, which a match guard cannot take.
                #[allow(clippy::collapsible_match)]
                if self.share(requester, &labels, epoch, broadcasts)? {
                    return Ok(());
                }
            }
            _ => {}
        }
        let load = if matches!(self.mode, Mode::Running) {
            self.engine.load()
        } else {
            0
        };
        self.bus
            .send(self.rank, requester, &Message::ReplyWithoutWork { requester, load })?;
        if let Some(c) = self.central {
            self.bus.send(self.rank, c, &self.plain_info(load))?;
        }
        Ok(())
    }

    /// Splits off work for `requester`. False when the split would give
    /// nothing away.
    fn share(
        &mut self,
        requester: u32,
        labels: &[crate::splitting::Label],
        epoch: u32,
        broadcasts: u64,
    ) -> Result<bool, RunError> {
        label_parallel_choicepoints(&mut self.engine);
        let common = if self.cfg.incremental {
            find_common_frontier(self.engine.labels().labels(), labels)
        } else {
            None
        };
        let spec = self.cfg.split_spec();
        let Some(payload) = build_share_payload(&mut self.engine, common, spec, self.cfg.shadow)? else {
            return Ok(false);
        };
        let stamp = self.osc.as_ref().map(|_| {
            self.shares_in_epoch += 1;
            Stamp {
                epoch: epoch + 1,
                key: child_key(&self.key, self.shares_in_epoch),
                after: broadcasts,
            }
        });
        let (giver_load, receiver_load) = (payload.load_after, payload.receiver_load);
        let incremental = payload.is_incremental();
        let msg = Message::ReplyWithWork {
            payload: Box::new(payload),
            stamp: stamp.clone(),
        };
        let bytes = self.bus.send(self.rank, requester, &msg)?;
        self.shared.sharings.lock().unwrap().push(SharingEvent {
            giver: self.rank,
            receiver: requester,
            incremental,
            bytes,
            after_invalidation: self.shared.invalidations.load(Ordering::SeqCst) > 0,
        });
        if let Some(t) = &mut self.token {
            t.work_sent();
        }
        self.loads.set(self.rank, giver_load);
        self.loads.set(requester, receiver_load);
        let info = Message::SendLoadInfo {
            giver: self.rank,
            receiver: requester,
            giver_load,
            receiver_load,
            stamp: stamp.clone(),
        };
        match self.central {
            Some(c) if self.osc.is_none() => {
                self.bus.send(self.rank, c, &info)?;
                self.reported_above = giver_load > self.cfg.threshold;
            }
            _ => self.broadcast_info(info),
        }
        if let (Some(osc), Some(s)) = (&mut self.osc, &stamp) {
            osc.notification(self.rank, self.rank, requester, s, false);
        }
        self.participated();
        Ok(true)
    }

    fn participated(&mut self) {
        self.participations += 1;
        if let Some(p) = self.cfg.gc_invalidation_period {
            if p > 0 && self.participations.is_multiple_of(p as u64) {
                invalidate_labels(&mut self.engine);
                self.shared.invalidations.fetch_add(1, Ordering::SeqCst);
            }
        }
    }

    fn receive_work(&mut self, src: u32, payload: SharePayload, stamp: Option<Stamp>) -> Result<(), RunError> {
        if !matches!(self.mode, Mode::Scheduling(Idle::Awaiting(_))) {
            return Err(self.protocol(format!("unrequested work from agent {src}")));
        }
        install_payload(&mut self.engine, &payload)?;
        self.epoch += 1;
        self.shares_in_epoch = 0;
        self.backoff = 1;
        self.loads.set(src, payload.load_after);
        self.loads.set(self.rank, self.engine.load());
        if let Some(osc) = &mut self.osc {
            let s = stamp.ok_or_else(|| RunError::Protocol {
                rank: self.rank,
                msg: "work without a position".into(),
            })?;
            if s.epoch != self.epoch {
                return Err(self.protocol(format!("position for epoch {} at epoch {}", s.epoch, self.epoch)));
            }
            self.key = s.key.clone();
            osc.notification(self.rank, src, self.rank, &s, false);
            osc.reset_requests();
            let info = Message::SendLoadInfo {
                giver: src,
                receiver: self.rank,
                giver_load: payload.load_after,
                receiver_load: payload.receiver_load,
                stamp: Some(s),
            };
            self.broadcast_info(info);
        }
        self.reported_above = self.engine.load() > self.cfg.threshold;
        self.mode = Mode::Running;
        self.participated();
        Ok(())
    }

    fn denied(&mut self, src: u32) -> Result<(), RunError> {
        if let Mode::Scheduling(Idle::Awaiting(v)) = self.mode {
            if let Some(c) = self.central {
                let _ = v;
                self.request(c)?;
            } else if v == src {
                self.mode = Mode::Scheduling(Idle::Choose);
            }
        }
        Ok(())
    }

    /// The engine has run out of work.
    fn run_dry(&mut self) -> Result<(), RunError> {
        self.loads.set(self.rank, 0);
        if let Some(osc) = &mut self.osc {
            let waiting: VecDeque<u32> = std::mem::take(&mut osc.queue);
            osc.vector.remove(self.rank, self.epoch);
            for r in waiting {
                self.acknowledge(r, false)?;
            }
        }
        self.mode = Mode::Scheduling(Idle::Choose);
        if let Some(c) = self.central {
            self.request(c)?;
        }
        Ok(())
    }

    fn request(&mut self, victim: u32) -> Result<(), RunError> {
        let labels = if self.cfg.incremental {
            self.engine.labels().labels().to_vec()
        } else {
            Vec::new()
        };
        let msg = Message::RequestWork {
            requester: self.rank,
            load: 0,
            labels,
            epoch: self.epoch,
            broadcasts: self.broadcasts,
        };
        self.bus.send(self.rank, victim, &msg)?;
        self.last_victim = Some(victim);
        self.mode = Mode::Scheduling(Idle::Awaiting(victim));
        Ok(())
    }

    fn step_scheduling(&mut self) -> Result<Step, RunError> {
        let envs = self.bus.poll(self.rank, None)?;
        let mut busy = !envs.is_empty();
        for env in envs {
            self.handle(env)?;
            if self.mode == Mode::Halted {
                return Ok(Step::Halted);
            }
        }
        let Mode::Scheduling(state) = self.mode.clone() else {
            return Ok(Step::Busy);
        };
        if !matches!(state, Idle::Awaiting(_)) {
            if let Some(t) = &mut self.token {
                match t.passive(self.loads.all_zero()) {
                    TokenAction::Keep => {}
                    TokenAction::Forward { to, black } => {
                        let msg = Message::TerminationToken { black, initiator: 0 };
                        self.bus.send(self.rank, to, &msg)?;
                        busy = true;
                    }
                    TokenAction::Terminate => {
                        self.halt_all();
                        return Ok(Step::Halted);
                    }
                }
            }
        }
        match state {
            Idle::Choose => {
                self.choose()?;
                busy = true;
            }
            Idle::Waiting { until, probe } => {
                if self.loads.argmax().is_some_and(|(_, l)| l > self.cfg.threshold) {
                    self.choose()?;
                    busy = true;
                } else if self.bus.now() >= until {
                    self.request(probe)?;
                    busy = true;
                }
            }
            Idle::DeadEnd => {
                if self.cfg.delay_termination && !self.loads.all_zero() {
                    self.mode = Mode::Scheduling(Idle::Choose);
                    busy = true;
                }
            }
            Idle::Awaiting(_) => {}
        }
        Ok(if busy { Step::Busy } else { Step::Idle })
    }

    fn choose(&mut self) -> Result<(), RunError> {
        match select_victim(
            &self.loads,
            self.cfg.policy,
            self.cfg.threshold,
            self.last_victim,
            self.central,
        ) {
            Victim::Ask(v) => self.request(v)?,
            Victim::Defer(v) => {
                self.mode = Mode::Scheduling(Idle::Waiting {
                    until: self.bus.now() + self.backoff,
                    probe: v,
                });
                self.backoff = (self.backoff * 2).min(MAX_BACKOFF);
            }
            Victim::Nobody => self.mode = Mode::Scheduling(Idle::DeadEnd),
        }
        Ok(())
    }

    fn step_ordered(&mut self) -> Result<Step, RunError> {
        for env in self.bus.poll(self.rank, None)? {
            self.handle(env)?;
            if self.mode == Mode::Halted {
                return Ok(Step::Halted);
            }
        }
        let Mode::Ordered { text, asked } = &mut self.mode else {
            return Ok(Step::Busy);
        };
        let osc = self.osc.as_mut().expect("ordered mode needs order-sensitive state");
        let wanted = osc.to_request(&self.key);
        let ask_any = !wanted.is_empty();
        if osc.may_proceed(&self.key) {
            let text = std::mem::take(text);
            let waited = *asked;
            self.shared.output.lock().unwrap().push_str(&text);
            self.mode = Mode::Running;
            if waited {
                let load = self.engine.load();
                self.load_update(load);
            }
            return Ok(Step::Busy);
        }
        *asked |= ask_any;
        let req = Message::RequestOsc {
            load: self.engine.load(),
            key: self.key.clone(),
        };
        for r in &wanted {
            self.bus.send(self.rank, *r, &req)?;
        }
        Ok(if ask_any { Step::Busy } else { Step::Idle })
    }
}

/// The central agent under centralized scheduling: it does no search and
/// only pairs idle workers with loaded ones.
pub struct Central {
    rank: u32,
    job: Arc<Job>,
    bus: Arc<Bus>,
    matcher: Matchmaker,
    workers: usize,
    halted: bool,
}

impl Central {
    pub(crate) fn new(rank: u32, first: u32, cfg: &RunConfig, job: Arc<Job>, bus: Arc<Bus>) -> Central {
        let n = bus.agents();
        let mut matcher = Matchmaker::new(n, rank, cfg.threshold);
        matcher.loads.set(first, cfg.threshold + 1);
        Central {
            rank,
            job,
            bus,
            matcher,
            workers: n as usize - 1,
            halted: false,
        }
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn step(&mut self) -> Result<Step, RunError> {
        if self.halted {
            return Ok(Step::Halted);
        }
        let envs = self.bus.poll(self.rank, None)?;
        let mut busy = !envs.is_empty();
        for env in envs {
            match decode_message(&env.frame, &self.job)? {
                Message::RequestWork {
                    requester,
                    labels,
                    epoch,
                    broadcasts,
                    ..
                } => self.matcher.enqueue(PendingRequest {
                    requester,
                    labels,
                    epoch,
                    broadcasts,
                }),
                Message::SendLoadInfo {
                    giver,
                    receiver,
                    giver_load,
                    receiver_load,
                    ..
                } => {
                    self.matcher.loads.set(giver, giver_load);
                    self.matcher.loads.set(receiver, receiver_load);
                }
                Message::Halt => {
                    self.halted = true;
                    return Ok(Step::Halted);
                }
                m => {
                    return Err(RunError::Protocol {
                        rank: self.rank,
                        msg: format!("central agent got {}", m.kind()),
                    })
                }
            }
        }
        for (req, victim) in self.matcher.dispatch() {
            let msg = Message::RequestWork {
                requester: req.requester,
                load: 0,
                labels: req.labels,
                epoch: req.epoch,
                broadcasts: req.broadcasts,
            };
            self.bus.send(self.rank, victim, &msg)?;
            busy = true;
        }
        if self.matcher.all_waiting(self.workers) {
            self.bus.broadcast(self.rank, &Message::Halt)?;
            self.halted = true;
            return Ok(Step::Halted);
        }
        Ok(if busy { Step::Busy } else { Step::Idle })
    }
}

/// Either kind of participant in a run.
pub enum Actor {
    Worker(Box<Agent>),
    Central(Central),
}

impl Actor {
    pub fn step(&mut self) -> Result<Step, RunError> {
        match self {
            Actor::Worker(a) => a.step(),
            Actor::Central(c) => c.step(),
        }
    }

    pub fn is_halted(&self) -> bool {
        match self {
            Actor::Worker(a) => a.is_halted(),
            Actor::Central(c) => c.is_halted(),
        }
    }

    pub fn rank(&self) -> u32 {
        match self {
            Actor::Worker(a) => a.rank,
            Actor::Central(c) => c.rank,
        }
    }

    pub(crate) fn finish(self) -> AgentReport {
        match self {
            Actor::Worker(a) => a.finish(),
            Actor::Central(c) => AgentReport {
                halted: c.halted,
                ..AgentReport::default()
            },
        }
    }
}
