//! The simulation engine: executes a scenario event by event.
//!
//! Two modes share one code path. The scenario mode runs the full protocol:
//! presence lookups, routing, model serving, learning, and update
//! propagation. The baseline mode replays the identical workload as plain
//! direct messaging — every status reads Active, and the model lifecycle is
//! disabled entirely — giving the counterfactual traffic the scenario is
//! compared against.
//!
//! Accounting rules:
//!
//! * Message-plane traffic (lookups, queries, replies, forwards) charges the
//!   links it crosses into the per-entry `core_bytes` / `access_bytes`.
//! * Model-plane traffic (placements, propagation) is kept separate: a
//!   completed transfer records its payload once in `model_bytes`, with the
//!   per-link charges listed for inspection but not mixed into the
//!   message-plane totals.
//! * A status lookup costs two control messages on the sender's access link
//!   only, so serving from the sender's own edge moves zero core bytes.
//!
//! Latency per message: direct, forwarded, and held messages record their
//! delivery time (lookup plus transfer); served messages record lookup,
//! query leg, model service time, and the response leg. Human think time is
//! deliberately excluded — it would swamp every network effect.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::costmodel::{CostParams, CostReport};
use crate::ids::{NodeId, UserId};
use crate::lifecycle::{LifecycleError, ModelRegistry, TrainingRun, TransferPlan};
use crate::netsim::queue::{EventQueue, QueueError};
use crate::netsim::topology::{transfer, Charge, LinkClass, TopologyError};
use crate::netsim::trace::{Trace, TraceEntry, TraceKind};
use crate::protocol::{
    decide_route, on_status_change, DrainDecision, HoldReason, Inbox, LogRecord, LogStore,
    Message, PresenceStatus, ProtocolError, RoutingAction, StatusKind,
};
use crate::responder::{PersonalModel, ResponderError};
use crate::scenario::{Propagation, Scenario};
use crate::workload::{self, WorkloadError, WorkloadEvent};

/// Note attached to events scheduled past the configured horizon.
pub const DROPPED_NOTE: &str = "dropped_beyond_horizon";
/// Note on drain entries answered by the owner's model.
pub const DELEGATED_NOTE: &str = "delegated";

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Responder(#[from] ResponderError),
}

/// Everything a finished run hands back.
pub struct RunOutput {
    pub trace: Trace,
    pub logs: LogStore,
    pub registry: ModelRegistry,
    pub training_costs: BTreeMap<UserId, CostReport>,
}

/// Reason a model transfer was scheduled, recorded in the trace note.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TransferReason {
    Placement,
    Propagation,
}

impl TransferReason {
    fn as_str(self) -> &'static str {
        match self {
            TransferReason::Placement => "placement",
            TransferReason::Propagation => "propagation",
        }
    }
}

enum Ev {
    Status { user: UserId, kind: StatusKind },
    Arrival(Message),
    ModelReady { model: PersonalModel },
    TransferComplete { plan: TransferPlan, reason: TransferReason },
    PropagationDue { owner: UserId },
    Drain { msg: Message, decision: DrainDecision },
    HumanReply { msg: Message },
}

impl Ev {
    fn kind(&self) -> TraceKind {
        match self {
            Ev::Status { .. } => TraceKind::StatusChange,
            Ev::Arrival(_) => TraceKind::MessageArrival,
            Ev::ModelReady { .. } => TraceKind::TrainingComplete,
            Ev::TransferComplete { .. } => TraceKind::TransferComplete,
            Ev::PropagationDue { .. } => TraceKind::PropagationDue,
            Ev::Drain { .. } => TraceKind::Drain,
            Ev::HumanReply { .. } => TraceKind::HumanReply,
        }
    }
}

struct Engine<'a> {
    scenario: &'a Scenario,
    baseline: bool,
    queue: EventQueue<Ev>,
    statuses: BTreeMap<UserId, PresenceStatus>,
    inboxes: BTreeMap<UserId, Inbox>,
    registry: ModelRegistry,
    /// (owner, node) pairs whose replica has not served since (re)placement.
    cold: BTreeSet<(UserId, NodeId)>,
    /// Owners with a propagation pass already on the calendar.
    propagation_scheduled: BTreeSet<UserId>,
    trace: Vec<TraceEntry>,
    logs: LogStore,
    training_costs: BTreeMap<UserId, CostReport>,
}

/// Runs a scenario to completion (`baseline = false`) or replays it as the
/// direct-messaging counterfactual (`baseline = true`).
pub fn run(scenario: &Scenario, baseline: bool) -> Result<RunOutput, SimError> {
    let mut eng = Engine {
        scenario,
        baseline,
        queue: EventQueue::new(),
        statuses: scenario
            .users
            .keys()
            .map(|u| (u.clone(), PresenceStatus::active()))
            .collect(),
        inboxes: scenario.users.keys().map(|u| (u.clone(), Inbox::new(u.clone()))).collect(),
        registry: ModelRegistry::new(),
        cold: BTreeSet::new(),
        propagation_scheduled: BTreeSet::new(),
        trace: Vec::new(),
        logs: LogStore::new(),
        training_costs: BTreeMap::new(),
    };
    eng.seed_events()?;
    while let Some((at, seq, ev)) = eng.queue.pop() {
        if let Some(h) = eng.scenario.settings.horizon_s {
            if at > h {
                eng.trace_drop(at, seq, &ev);
                continue;
            }
        }
        eng.handle(at, seq, ev)?;
    }
    Ok(RunOutput {
        trace: Trace { entries: eng.trace },
        logs: eng.logs,
        registry: eng.registry,
        training_costs: eng.training_costs,
    })
}

impl<'a> Engine<'a> {
    fn seed_events(&mut self) -> Result<(), SimError> {
        for ev in workload::generate(&self.scenario.workload_spec())? {
            match ev {
                WorkloadEvent::Status(se) => {
                    // The baseline has no presence: every lookup reads Active.
                    if !self.baseline {
                        self.queue.push(se.at, Ev::Status { user: se.user, kind: se.kind })?;
                    }
                }
                WorkloadEvent::Arrival(msg) => {
                    self.queue.push(msg.sent_at, Ev::Arrival(msg))?;
                }
            }
        }
        if self.baseline {
            // No models in the counterfactual: no training, no placement.
            return Ok(());
        }
        for (user, cfg) in &self.scenario.users {
            let Some(mc) = &cfg.model else { continue };
            match &mc.training {
                Some(spec) => {
                    let run = self.registry.plan_training(
                        spec,
                        mc.size_bytes,
                        mc.facts.clone(),
                        mc.profile,
                        0.0,
                        &self.scenario.settings.training,
                        &CostParams::default(),
                    )?;
                    self.training_costs.insert(user.clone(), run.cost);
                    let TrainingRun { model, completes_at, .. } = run;
                    self.queue.push(completes_at, Ev::ModelReady { model })?;
                }
                None => {
                    let model = PersonalModel::new(
                        user.clone(),
                        1,
                        mc.size_bytes,
                        mc.facts.clone(),
                        mc.profile,
                    )?;
                    self.queue.push(0.0, Ev::ModelReady { model })?;
                }
            }
        }
        Ok(())
    }

    fn handle(&mut self, at: f64, seq: u64, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Status { user, kind } => self.on_status(at, seq, user, kind),
            Ev::Arrival(msg) => self.on_arrival(at, seq, msg),
            Ev::ModelReady { model } => self.on_model_ready(at, seq, model),
            Ev::TransferComplete { plan, reason } => self.on_transfer(at, seq, plan, reason),
            Ev::PropagationDue { owner } => self.on_propagation_due(at, seq, owner),
            Ev::Drain { msg, decision } => self.on_drain(at, seq, msg, decision),
            Ev::HumanReply { msg } => self.on_human_reply(at, seq, msg),
        }
    }

    // -- event handlers ----------------------------------------------------

    fn on_status(&mut self, at: f64, seq: u64, user: UserId, kind: StatusKind) -> Result<(), SimError> {
        let cfg = &self.scenario.users[&user];
        let status = PresenceStatus::with_kind(kind, &cfg.allowlist);
        self.statuses.insert(user.clone(), status.clone());

        let mut entry = TraceEntry::new(at, seq, TraceKind::StatusChange);
        entry.owner = Some(user.clone());
        entry.owner_status = Some(kind);
        self.trace.push(entry);

        // A transition to Active drains this user's held messages.
        let policy = self.scenario.settings.drain_policy;
        let registry = &self.registry;
        let inbox = self.inboxes.get_mut(&user).expect("every user has an inbox");
        let answerable = |m: &Message| {
            registry
                .latest(&m.recipient)
                .map(|model| model.answerable(&m.topic, &m.sender))
                .unwrap_or(false)
        };
        for (msg, decision) in on_status_change(&status, inbox, policy, &answerable) {
            self.queue.push(at, Ev::Drain { msg, decision })?;
        }
        Ok(())
    }

    fn on_arrival(&mut self, at: f64, seq: u64, msg: Message) -> Result<(), SimError> {
        let topo = &self.scenario.topology;
        let sender_device = &self.scenario.users[&msg.sender].device;
        let recipient_device = &self.scenario.users[&msg.recipient].device;

        let status = if self.baseline {
            PresenceStatus::active()
        } else {
            self.statuses[&msg.recipient].clone()
        };

        let mut entry = TraceEntry::new(at, seq, TraceKind::MessageArrival);
        entry.msg_id = Some(msg.id);
        entry.sender = Some(msg.sender.clone());
        entry.recipient = Some(msg.recipient.clone());
        entry.owner = Some(msg.recipient.clone());
        entry.topic = Some(msg.topic.clone());
        entry.owner_status = Some(status.kind());

        // Status lookup: two control messages on the sender's access link.
        let (lookup_s, lookup_charges) = self.status_lookup_cost(sender_device)?;
        charge_message_plane(&mut entry, &lookup_charges);

        // Where could the recipient's model serve from, and can it answer?
        let resolved = if self.baseline {
            None
        } else {
            self.registry.resolve_replica(&msg.recipient, sender_device, topo)?
        };
        let model_available = resolved.is_some();
        let answerable = match &resolved {
            Some((_, version)) => self
                .registry
                .model_at(&msg.recipient, *version)?
                .answerable(&msg.topic, &msg.sender),
            None => false,
        };

        let action = decide_route(&status, &msg.sender, model_available, answerable)?;
        entry.action = Some(action);

        match action {
            RoutingAction::DeliverDirect | RoutingAction::ForwardToRecipient => {
                let path = topo.route_path(sender_device, recipient_device)?;
                let (net_s, charges) = transfer(&path, msg.size_bytes, sender_device);
                charge_message_plane(&mut entry, &charges);
                entry.network_s = lookup_s + net_s;
                entry.latency_s = Some(lookup_s + net_s);
                // The recipient reads it and answers after their think time.
                let reply_at = at + lookup_s + net_s + self.scenario.settings.human_reply_delay_s;
                self.queue.push(reply_at, Ev::HumanReply { msg })?;
            }
            RoutingAction::LLMServe => {
                let (node, version) = resolved.expect("LLMServe implies a replica");
                let was_cold = self.cold.remove(&(msg.recipient.clone(), node.clone()));
                let model = self.registry.model_at(&msg.recipient, version)?;
                let response =
                    model.generate(&msg, &self.scenario.settings.serve_stages, was_cold)?;

                let (query_s, resp_s) = if node == *sender_device {
                    (0.0, 0.0)
                } else {
                    let qpath = topo.route_path(sender_device, &node)?;
                    let (query_s, qcharges) = transfer(&qpath, msg.size_bytes, sender_device);
                    charge_message_plane(&mut entry, &qcharges);
                    let rpath = topo.route_path(&node, sender_device)?;
                    let (resp_s, rcharges) =
                        transfer(&rpath, response.body.len() as u64, &node);
                    charge_message_plane(&mut entry, &rcharges);
                    (query_s, resp_s)
                };

                let served_at = at + lookup_s + query_s + response.service_time_s;
                self.logs.append(LogRecord {
                    ts: served_at,
                    owner: msg.recipient.clone(),
                    sender: msg.sender.clone(),
                    query: msg.body.clone(),
                    response: response.body.clone(),
                    model_version: version,
                    owner_status: status.kind(),
                    serving_node: node.clone(),
                })?;

                entry.serving_node = Some(node);
                entry.model_version = Some(version);
                entry.network_s = lookup_s + query_s + resp_s;
                entry.service_s = response.service_time_s;
                entry.latency_s = Some(lookup_s + query_s + response.service_time_s + resp_s);
            }
            RoutingAction::HoldInactive => {
                // Parked at the datacenter until the recipient returns.
                let dc = topo.datacenter();
                let path = topo.route_path(sender_device, dc)?;
                let (net_s, charges) = transfer(&path, msg.size_bytes, sender_device);
                charge_message_plane(&mut entry, &charges);
                entry.network_s = lookup_s + net_s;
                entry.latency_s = Some(lookup_s + net_s);
                entry.serving_node = Some(dc.clone());
                self.inboxes
                    .get_mut(&msg.recipient)
                    .expect("every user has an inbox")
                    .push(msg, HoldReason::Held)?;
            }
        }
        self.trace.push(entry);
        Ok(())
    }

    fn on_model_ready(&mut self, at: f64, seq: u64, model: PersonalModel) -> Result<(), SimError> {
        let owner = model.owner.clone();
        let home = self.scenario.topology.datacenter().clone();
        let version = self.registry.install(model, home.clone())?;
        self.cold.insert((owner.clone(), home.clone()));

        let mut entry = TraceEntry::new(at, seq, TraceKind::TrainingComplete);
        entry.owner = Some(owner.clone());
        entry.serving_node = Some(home);
        entry.model_version = Some(version);
        self.trace.push(entry);

        // First completion triggers the configured placements.
        if version == 1 {
            let placements = self.scenario.users[&owner]
                .model
                .as_ref()
                .map(|m| m.placements.clone())
                .unwrap_or_default();
            for node in placements {
                if let Some(plan) = self.registry.offload(&owner, &node, &self.scenario.topology)? {
                    let done = at + plan.network_s;
                    self.queue
                        .push(done, Ev::TransferComplete { plan, reason: TransferReason::Placement })?;
                }
            }
        }
        Ok(())
    }

    fn on_transfer(
        &mut self,
        at: f64,
        seq: u64,
        plan: TransferPlan,
        reason: TransferReason,
    ) -> Result<(), SimError> {
        let changed = self.registry.complete_transfer(&plan.owner, &plan.node, plan.version)?;
        if changed {
            self.cold.insert((plan.owner.clone(), plan.node.clone()));
        }
        let mut entry = TraceEntry::new(at, seq, TraceKind::TransferComplete);
        entry.owner = Some(plan.owner.clone());
        entry.serving_node = Some(plan.node);
        entry.model_version = Some(plan.version);
        entry.model_bytes = plan.bytes;
        entry.network_s = plan.network_s;
        entry.charges =
            plan.charges.into_iter().map(|c| (c.from, c.to, c.bytes)).collect();
        entry.note = Some(reason.as_str().to_string());
        self.trace.push(entry);
        // The home model may have learned while this copy was in flight (a
        // learn with no completed replicas schedules nothing). Now that a
        // replica exists, queue the refresh pass the learn could not.
        if self.registry.is_dirty(&plan.owner) {
            self.schedule_propagation(at, &plan.owner)?;
        }
        Ok(())
    }

    fn on_propagation_due(&mut self, at: f64, seq: u64, owner: UserId) -> Result<(), SimError> {
        self.propagation_scheduled.remove(&owner);
        let mut entry = TraceEntry::new(at, seq, TraceKind::PropagationDue);
        entry.owner = Some(owner.clone());
        self.trace.push(entry);
        if self.registry.is_dirty(&owner) {
            for plan in self.registry.propagate(&owner, &self.scenario.topology)? {
                let done = at + plan.network_s;
                self.queue
                    .push(done, Ev::TransferComplete { plan, reason: TransferReason::Propagation })?;
            }
        }
        Ok(())
    }

    fn on_drain(
        &mut self,
        at: f64,
        seq: u64,
        msg: Message,
        decision: DrainDecision,
    ) -> Result<(), SimError> {
        let topo = &self.scenario.topology;
        let dc = topo.datacenter().clone();
        let mut entry = TraceEntry::new(at, seq, TraceKind::Drain);
        entry.msg_id = Some(msg.id);
        entry.sender = Some(msg.sender.clone());
        entry.recipient = Some(msg.recipient.clone());
        entry.owner = Some(msg.recipient.clone());
        entry.topic = Some(msg.topic.clone());

        match decision {
            DrainDecision::HumanReply => {
                // The held message leaves the store for the owner's device.
                let device = &self.scenario.users[&msg.recipient].device;
                let path = topo.route_path(&dc, device)?;
                let (net_s, charges) = transfer(&path, msg.size_bytes, &dc);
                charge_message_plane(&mut entry, &charges);
                entry.network_s = net_s;
                let reply_at = at + net_s + self.scenario.settings.human_reply_delay_s;
                self.queue.push(reply_at, Ev::HumanReply { msg })?;
            }
            DrainDecision::DelegateToLlm => {
                // Served where the message is already held: the home node.
                let version = self.registry.latest_version(&msg.recipient);
                let was_cold = self.cold.remove(&(msg.recipient.clone(), dc.clone()));
                let model = self.registry.model_at(&msg.recipient, version)?;
                let response =
                    model.generate(&msg, &self.scenario.settings.serve_stages, was_cold)?;
                let sender_device = &self.scenario.users[&msg.sender].device;
                let rpath = topo.route_path(&dc, sender_device)?;
                let (resp_s, rcharges) = transfer(&rpath, response.body.len() as u64, &dc);
                charge_message_plane(&mut entry, &rcharges);

                let served_at = at + response.service_time_s;
                self.logs.append(LogRecord {
                    ts: served_at,
                    owner: msg.recipient.clone(),
                    sender: msg.sender.clone(),
                    query: msg.body.clone(),
                    response: response.body.clone(),
                    model_version: version,
                    owner_status: StatusKind::Active,
                    serving_node: dc.clone(),
                })?;

                entry.serving_node = Some(dc);
                entry.model_version = Some(version);
                entry.service_s = response.service_time_s;
                entry.network_s = resp_s;
                entry.note = Some(DELEGATED_NOTE.to_string());
            }
        }
        self.trace.push(entry);
        Ok(())
    }

    fn on_human_reply(&mut self, at: f64, seq: u64, msg: Message) -> Result<(), SimError> {
        let topo = &self.scenario.topology;
        let replier = msg.recipient.clone();
        let reply_body = format!("re {}: sounds good", msg.topic);
        let reply_bytes = self
            .scenario
            .settings
            .human_reply_bytes
            .unwrap_or(reply_body.len() as u64)
            .max(reply_body.len() as u64);

        let from = &self.scenario.users[&replier].device;
        let to = &self.scenario.users[&msg.sender].device;
        let path = topo.route_path(from, to)?;
        let (net_s, charges) = transfer(&path, reply_bytes, from);

        let mut entry = TraceEntry::new(at, seq, TraceKind::HumanReply);
        entry.msg_id = Some(msg.id);
        entry.sender = Some(msg.sender.clone());
        entry.recipient = Some(replier.clone());
        entry.owner = Some(replier.clone());
        entry.topic = Some(msg.topic.clone());
        charge_message_plane(&mut entry, &charges);
        entry.network_s = net_s;

        // The owner's own words teach their model — except synthetic
        // unknown topics, which stay unanswerable by construction.
        if !self.baseline
            && self.registry.latest_version(&replier) > 0
            && !msg.topic.starts_with(workload::RESERVED_TOPIC_PREFIX)
        {
            let version =
                self.registry
                    .learn_from_reply(&replier, &msg.topic, &reply_body, &msg.sender)?;
            entry.model_version = Some(version);
            self.schedule_propagation(at, &replier)?;
        }
        self.trace.push(entry);
        Ok(())
    }

    // -- helpers -----------------------------------------------------------

    fn schedule_propagation(&mut self, at: f64, owner: &UserId) -> Result<(), SimError> {
        if self.registry.replicas(owner).is_empty() {
            // Nothing to refresh; the dirty flag clears on the next pass
            // that does have replicas.
            return Ok(());
        }
        match self.scenario.settings.propagation {
            Propagation::Immediate => {
                for plan in self.registry.propagate(owner, &self.scenario.topology)? {
                    let done = at + plan.network_s;
                    self.queue.push(
                        done,
                        Ev::TransferComplete { plan, reason: TransferReason::Propagation },
                    )?;
                }
            }
            Propagation::Batch { interval_s } => {
                if self.propagation_scheduled.insert(owner.clone()) {
                    let boundary = ((at / interval_s).floor() + 1.0) * interval_s;
                    self.queue.push(boundary, Ev::PropagationDue { owner: owner.clone() })?;
                }
            }
        }
        Ok(())
    }

    /// Round-trip control exchange on the sender's own access link.
    fn status_lookup_cost(&self, sender_device: &NodeId) -> Result<(f64, Vec<Charge>), SimError> {
        let topo = &self.scenario.topology;
        let edge = topo.edge_of(sender_device)?;
        let link = topo
            .link_between(sender_device, edge)
            .expect("attachment implies a physical link");
        let bytes = self.scenario.settings.control_bytes;
        let mut each_way = link.latency_s;
        if bytes > 0 {
            each_way += 8.0 * bytes as f64 / link.bandwidth_bps;
        }
        let charges = if bytes > 0 {
            vec![
                Charge { from: sender_device.clone(), to: edge.clone(), bytes, class: link.class },
                Charge { from: edge.clone(), to: sender_device.clone(), bytes, class: link.class },
            ]
        } else {
            Vec::new()
        };
        Ok((2.0 * each_way, charges))
    }

    fn trace_drop(&mut self, at: f64, seq: u64, ev: &Ev) {
        let mut entry = TraceEntry::new(at, seq, ev.kind());
        entry.note = Some(DROPPED_NOTE.to_string());
        match ev {
            Ev::Arrival(m) | Ev::Drain { msg: m, .. } | Ev::HumanReply { msg: m } => {
                entry.msg_id = Some(m.id);
                entry.sender = Some(m.sender.clone());
                entry.recipient = Some(m.recipient.clone());
                entry.owner = Some(m.recipient.clone());
                entry.topic = Some(m.topic.clone());
            }
            Ev::Status { user, kind } => {
                entry.owner = Some(user.clone());
                entry.owner_status = Some(*kind);
            }
            Ev::ModelReady { model } => {
                entry.owner = Some(model.owner.clone());
                entry.model_version = Some(model.version);
            }
            Ev::TransferComplete { plan, .. } => {
                entry.owner = Some(plan.owner.clone());
                entry.serving_node = Some(plan.node.clone());
                entry.model_version = Some(plan.version);
            }
            Ev::PropagationDue { owner } => {
                entry.owner = Some(owner.clone());
            }
        }
        self.trace.push(entry);
    }
}

/// Adds message-plane charges to an entry's totals and charge list.
fn charge_message_plane(entry: &mut TraceEntry, charges: &[Charge]) {
    for c in charges {
        match c.class {
            LinkClass::Core => entry.core_bytes += c.bytes,
            LinkClass::Access => entry.access_bytes += c.bytes,
        }
        entry.charges.push((c.from.clone(), c.to.clone(), c.bytes));
    }
}
