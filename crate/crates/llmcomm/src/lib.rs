//! Protocol and simulator for LLM-mediated person-to-person messaging.
//!
//! Users publish a presence status; incoming messages are then delivered
//! directly, answered by the recipient's personal model at a nearby node,
//! forwarded, or held, per a fixed routing policy ([`protocol::decide_route`]).
//! The discrete-event simulator ([`netsim::engine::run`]) plays a scenario
//! through that policy twice — once as specified and once as a
//! direct-messaging baseline — so the core-network traffic saved by serving
//! answers at the edge can be measured, along with the model-shipping bytes
//! and training cost it takes to get there.
//!
//! Determinism is load-bearing: identical scenario and seed produce a
//! byte-identical JSONL trace. All iteration is over ordered maps, event
//! ties break by insertion sequence, and the only randomness is an explicit
//! [`workload::SplitMix64`] stream.

pub mod costmodel;
pub mod ids;
pub mod lifecycle;
pub mod metrics;
pub mod netsim;
pub mod protocol;
pub mod responder;
pub mod scenario;
pub mod workload;

pub use costmodel::{CostParams, CostReport};
pub use ids::{NodeId, UserId};
pub use lifecycle::ModelRegistry;
pub use metrics::{compare, summarize, Reduction, ReductionReport, RunReport};
pub use netsim::engine::{run, RunOutput};
pub use netsim::topology::Topology;
pub use netsim::trace::{Trace, TraceEntry};
pub use protocol::{decide_route, PresenceStatus, RoutingAction, StatusKind};
pub use responder::PersonalModel;
pub use scenario::Scenario;

/// Packaged scenarios, embedded so the binary works without a data directory.
pub mod scenarios {
    /// Three users across three edges; one Away user with a trained model.
    pub const FIG1: &str = include_str!("../scenarios/fig1.json");
    /// Heavy flow toward one Away user; shows the traffic break-even point.
    pub const BREAKEVEN: &str = include_str!("../scenarios/breakeven.json");

    /// `(name, json)` pairs for every packaged scenario.
    pub fn all() -> [(&'static str, &'static str); 2] {
        [("fig1", FIG1), ("breakeven", BREAKEVEN)]
    }
}
