//! Running a job on a set of agents and collecting what happened.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::agent::{Actor, Agent, AgentReport, Central, Step};
use crate::engine::{Answer, EngineError, Execution, Job};
use crate::scheduler::Policy;
use crate::splitting::{SplitError, SplitSpec, Strategy};
use crate::transport::{Bus, Stats, TransportError};
use crate::wire::WireError;

fn take<T: Default>(m: &Mutex<T>) -> T {
    std::mem::take(&mut *m.lock().unwrap())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadPropagation {
    /// Loads travel only with sharing events and replies.
    OnSharing,
    /// Running agents also broadcast their load every `n` polls.
    Periodic(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Driver {
    /// One thread steps every agent in turn; fully reproducible per seed.
    Lockstep,
    /// One thread per agent.
    Threads,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub agents: u32,
    pub policy: Policy,
    pub strategy: Strategy,
    /// Fraction kept by the giver under vertical block splitting.
    pub ratio: Option<f64>,
    pub threshold: u32,
    /// Reductions between message checks of a running agent. Load
    /// messages are read every quarter of it.
    pub poll_frequency: u32,
    pub osc: bool,
    pub first_solution: bool,
    pub seed: u64,
    pub incremental: bool,
    /// Drop all labels after every this many sharings an agent takes part
    /// in.
    pub gc_invalidation_period: Option<u32>,
    /// Let agents that found nobody to ask resume when they later learn of
    /// a loaded agent.
    pub delay_termination: bool,
    pub load_propagation: LoadPropagation,
    pub driver: Driver,
    /// Largest extra delivery delay, in bus ticks.
    pub reorder_window: u64,
    /// Ship choice-point ids with incremental shares so the receiver can
    /// check the common prefix.
    pub shadow: bool,
    pub record_executions: bool,
    /// Lockstep rounds before the run is declared stuck.
    pub max_steps: u64,
    pub time_limit: Duration,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            agents: 4,
            policy: Policy::BottomMost,
            strategy: Strategy::VerticalBlock,
            ratio: None,
            threshold: 2,
            poll_frequency: 200,
            osc: false,
            first_solution: false,
            seed: 0,
            incremental: true,
            gc_invalidation_period: None,
            delay_termination: false,
            load_propagation: LoadPropagation::OnSharing,
            driver: Driver::Lockstep,
            reorder_window: 0,
            shadow: false,
            record_executions: false,
            max_steps: 50_000_000,
            time_limit: Duration::from_secs(300),
        }
    }
}

impl RunConfig {
    /// How givers divide their stacks. Order-sensitive runs always keep
    /// three quarters as one block, so that the receiver's work lies to the
    /// right of the giver's.
    pub fn split_spec(&self) -> SplitSpec {
        if self.osc {
            return SplitSpec {
                strategy: Strategy::VerticalBlock,
                ratio: 0.75,
                top_most: false,
            };
        }
        let mut spec = SplitSpec::new(self.strategy);
        if let Some(r) = self.ratio {
            spec.ratio = r;
        }
        spec.top_most = self.policy == Policy::TopMost;
        spec
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.to_owned()));
        if self.agents == 0 {
            return bad("at least one agent is needed");
        }
        if self.poll_frequency == 0 {
            return bad("poll frequency must be positive");
        }
        if let Some(r) = self.ratio {
            if !(r > 0.0 && r < 1.0) {
                return bad("ratio must lie strictly between 0 and 1");
            }
        }
        if self.gc_invalidation_period == Some(0) {
            return bad("invalidation period must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("protocol violation at agent {rank}: {msg}")]
    Protocol { rank: u32, msg: String },
    #[error("no halt after {0} rounds")]
    Stalled(u64),
    #[error("time limit exceeded")]
    Timeout,
    #[error("bad configuration: {0}")]
    Config(String),
}

/// One sharing event as seen by its giver.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharingEvent {
    pub giver: u32,
    pub receiver: u32,
    pub incremental: bool,
    /// Encoded size of the Reply_With_Work message.
    pub bytes: usize,
    /// Some agent had already dropped its labels when this happened.
    pub after_invalidation: bool,
}

/// State written by every agent of a run.
#[derive(Default)]
pub(crate) struct Shared {
    pub output: Mutex<String>,
    pub solutions: Mutex<Vec<Answer>>,
    pub invalidations: AtomicU64,
    pub sharings: Mutex<Vec<SharingEvent>>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub config: RunConfig,
    /// In the order they were found.
    pub solutions: Vec<Answer>,
    /// Side-effect output in the order it was performed.
    pub output: String,
    pub stats: Stats,
    pub sharings: Vec<SharingEvent>,
    /// Alternatives run per agent.
    pub alternatives: Vec<u64>,
    /// Every alternative executed, across agents, when recorded.
    pub executions: Vec<Execution>,
    pub halted: bool,
    pub wall: Duration,
}

impl RunReport {
    pub fn solution_count(&self) -> usize {
        self.solutions.len()
    }

    pub fn sharings_full(&self) -> usize {
        self.sharings.iter().filter(|s| !s.incremental).count()
    }

    pub fn sharings_incremental(&self) -> usize {
        self.sharings.iter().filter(|s| s.incremental).count()
    }

    pub fn share_bytes(&self, incremental: bool) -> usize {
        self.sharings
            .iter()
            .filter(|s| s.incremental == incremental)
            .map(|s| s.bytes)
            .sum()
    }
}

/// Runs `job` to completion on `cfg.agents` agents.
pub fn run_job(job: Arc<Job>, cfg: &RunConfig) -> Result<RunReport, RunError> {
    cfg.validate()?;
    let start = Instant::now();
    let n = cfg.agents;
    let central = (cfg.policy == Policy::Centralized && n >= 2).then_some(0);
    let first = if central.is_some() { 1 } else { 0 };
    let bus = Arc::new(Bus::new(n, cfg.reorder_window, cfg.seed));
    let shared = Arc::new(Shared::default());
    let acfg = Arc::new(cfg.clone());
    let actors: Vec<Actor> = (0..n)
        .map(|r| {
            if Some(r) == central {
                Actor::Central(Central::new(r, first, cfg, Arc::clone(&job), Arc::clone(&bus)))
            } else {
                Actor::Worker(Box::new(Agent::new(
                    r,
                    first,
                    central,
                    Arc::clone(&acfg),
                    Arc::clone(&job),
                    Arc::clone(&bus),
                    Arc::clone(&shared),
                )))
            }
        })
        .collect();
    let reports = match cfg.driver {
        Driver::Lockstep => lockstep(actors, &bus, cfg)?,
        Driver::Threads => threads(actors, &bus, cfg)?,
    };
    let mut executions = Vec::new();
    let mut alternatives = Vec::new();
    let mut halted = true;
    for r in reports {
        alternatives.push(r.alternatives);
        executions.extend(r.executions);
        halted &= r.halted;
    }
    Ok(RunReport {
        config: cfg.clone(),
        solutions: take(&shared.solutions),
        output: take(&shared.output),
        stats: bus.stats(),
        sharings: take(&shared.sharings),
        alternatives,
        executions,
        halted,
        wall: start.elapsed(),
    })
}

fn lockstep(mut actors: Vec<Actor>, bus: &Bus, cfg: &RunConfig) -> Result<Vec<AgentReport>, RunError> {
    let deadline = Instant::now() + cfg.time_limit;
    let mut rounds = 0u64;
    while actors.iter().any(|a| !a.is_halted()) {
        for a in actors.iter_mut() {
            if !a.is_halted() {
                a.step()?;
            }
            bus.tick();
        }
        rounds += 1;
        if rounds > cfg.max_steps {
            return Err(RunError::Stalled(rounds));
        }
        if rounds.is_multiple_of(4096) && Instant::now() > deadline {
            return Err(RunError::Timeout);
        }
    }
    Ok(actors.into_iter().map(Actor::finish).collect())
}

fn threads(actors: Vec<Actor>, bus: &Arc<Bus>, cfg: &RunConfig) -> Result<Vec<AgentReport>, RunError> {
    let deadline = Instant::now() + cfg.time_limit;
    let abort = AtomicBool::new(false);
    let results: Vec<Result<Actor, RunError>> = thread::scope(|s| {
        let handles: Vec<_> = actors
            .into_iter()
            .map(|mut a| {
                let abort = &abort;
                s.spawn(move || {
                    let rank = a.rank();
                    loop {
                        if abort.load(Ordering::SeqCst) {
                            return Err(RunError::Timeout);
                        }
                        match a.step() {
                            Ok(Step::Halted) => return Ok(a),
                            Ok(Step::Idle) => bus.wait(rank, Duration::from_millis(1)),
                            Ok(Step::Busy) => {}
                            Err(e) => {
                                abort.store(true, Ordering::SeqCst);
                                bus.wake_all();
                                return Err(e);
                            }
                        }
                        bus.tick();
                    }
                })
            })
            .collect();
        while !handles.iter().all(|h| h.is_finished()) {
            if Instant::now() > deadline {
                abort.store(true, Ordering::SeqCst);
                bus.wake_all();
            }
            thread::sleep(Duration::from_millis(2));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("agent thread panicked"))
            .collect()
    });
    // Report the root cause rather than the aborts it triggered.
    let mut timeout = None;
    let mut out = Vec::new();
    for r in results {
        match r {
            Ok(a) => out.push(a.finish()),
            Err(RunError::Timeout) => timeout = Some(RunError::Timeout),
            Err(e) => return Err(e),
        }
    }
    match timeout {
        Some(e) => Err(e),
        None => Ok(out),
    }
}
