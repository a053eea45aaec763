//! Distributed or-parallel execution of a Prolog subset by stack-splitting.
//!
//! Agents each own a sequential [`engine::Engine`] and exchange work through
//! an in-process message bus. Idle agents ask busy ones for work; the busy
//! agent splits its choice-point stack and ships the receiver's part, copying
//! only the difference between the two stacks when labels show a common
//! prefix.

pub mod agent;
pub mod bench;
pub mod engine;
pub mod message;
pub mod osc;
pub mod parser;
pub mod program;
pub mod run;
pub mod scheduler;
pub mod splitting;
pub mod term;
pub mod transport;
pub mod wire;
