//! Deterministic discrete-event network simulation: topology and routing,
//! the future-event queue, the run trace, and the engine that drives a
//! scenario through all of it.

pub mod engine;
pub mod queue;
pub mod topology;
pub mod trace;

pub use engine::{run, RunOutput, SimError};
pub use queue::{EventQueue, QueueError};
pub use topology::{transfer, Charge, Link, LinkClass, NodeKind, Topology, TopologyError};
pub use trace::{Trace, TraceEntry, TraceError, TraceKind};
