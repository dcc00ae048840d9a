//! Presence-status routing.
//!
//! A message addressed to a recipient is routed by the recipient's presence
//! status, the sender's allowlist membership, and whether the recipient's
//! personal model is both reachable and able to answer the topic:
//!
//! | status   | allowlisted | model available & answerable | action             |
//! |----------|-------------|------------------------------|--------------------|
//! | Active   | any         | any                          | DeliverDirect      |
//! | Busy     | yes         | any                          | DeliverDirect      |
//! | Busy     | no          | yes                          | LLMServe           |
//! | Busy     | no          | no                           | ForwardToRecipient |
//! | Away     | any         | yes                          | LLMServe           |
//! | Away     | any         | no                           | ForwardToRecipient |
//! | Inactive | any         | any                          | HoldInactive       |
//!
//! "Answerable without an available model" is a contradiction and is rejected
//! rather than routed. Every model-generated reply must carry the disclosure
//! line so a recipient can always tell machine text from human text.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{NodeId, UserId};

/// Disclosure line appended to every model-generated reply body.
pub const DISCLOSURE_LINE: &str = "[This is an AI-generated message]";

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("a topic cannot be answerable while no model replica is available")]
    AnswerableWithoutModel,
    #[error("message body must not be empty")]
    EmptyBody,
    #[error("message size_bytes {size} is smaller than the body length {body}")]
    SizeSmallerThanBody { size: u64, body: u64 },
    #[error("sender and recipient must differ (got {0})")]
    SelfMessage(UserId),
    #[error("message timestamp must be finite and non-negative (got {0})")]
    BadTimestamp(f64),
    #[error("allowlist is only meaningful for Busy (status {0})")]
    AllowlistOutsideBusy(StatusKind),
    #[error("log record for message from {sender} lacks the disclosure line")]
    MissingDisclosure { sender: UserId },
    #[error("message {0} is already held in this inbox")]
    DuplicateHold(u64),
}

/// The four presence states a user can publish.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatusKind {
    Active,
    Busy,
    Away,
    Inactive,
}

impl StatusKind {
    pub const ALL: [StatusKind; 4] = [
        StatusKind::Active,
        StatusKind::Busy,
        StatusKind::Away,
        StatusKind::Inactive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StatusKind::Active => "active",
            StatusKind::Busy => "busy",
            StatusKind::Away => "away",
            StatusKind::Inactive => "inactive",
        }
    }
}

impl fmt::Display for StatusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A presence status together with the allowlist that modulates `Busy`.
///
/// The allowlist is non-empty only for `Busy`; the constructors enforce this.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PresenceStatus {
    kind: StatusKind,
    allowlist: BTreeSet<UserId>,
}

impl PresenceStatus {
    pub fn active() -> Self {
        PresenceStatus { kind: StatusKind::Active, allowlist: BTreeSet::new() }
    }

    pub fn busy(allowlist: BTreeSet<UserId>) -> Self {
        PresenceStatus { kind: StatusKind::Busy, allowlist }
    }

    pub fn away() -> Self {
        PresenceStatus { kind: StatusKind::Away, allowlist: BTreeSet::new() }
    }

    pub fn inactive() -> Self {
        PresenceStatus { kind: StatusKind::Inactive, allowlist: BTreeSet::new() }
    }

    /// Builds a status of `kind`, attaching `allowlist` only when it matters.
    pub fn with_kind(kind: StatusKind, allowlist: &BTreeSet<UserId>) -> Self {
        match kind {
            StatusKind::Busy => PresenceStatus::busy(allowlist.clone()),
            StatusKind::Active => PresenceStatus::active(),
            StatusKind::Away => PresenceStatus::away(),
            StatusKind::Inactive => PresenceStatus::inactive(),
        }
    }

    pub fn kind(&self) -> StatusKind {
        self.kind
    }

    pub fn allows(&self, sender: &UserId) -> bool {
        self.kind == StatusKind::Busy && self.allowlist.contains(sender)
    }
}

/// One user-to-user message travelling through the system.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub id: u64,
    pub sender: UserId,
    pub recipient: UserId,
    pub topic: String,
    pub body: String,
    /// Wire size; at least the body length (headers, media, padding).
    pub size_bytes: u64,
    pub sent_at: f64,
}

impl Message {
    pub fn new(
        id: u64,
        sender: UserId,
        recipient: UserId,
        topic: impl Into<String>,
        body: impl Into<String>,
        size_bytes: u64,
        sent_at: f64,
    ) -> Result<Self, ProtocolError> {
        let body = body.into();
        if body.is_empty() {
            return Err(ProtocolError::EmptyBody);
        }
        if size_bytes < body.len() as u64 {
            return Err(ProtocolError::SizeSmallerThanBody {
                size: size_bytes,
                body: body.len() as u64,
            });
        }
        if sender == recipient {
            return Err(ProtocolError::SelfMessage(sender));
        }
        if !sent_at.is_finite() || sent_at < 0.0 {
            return Err(ProtocolError::BadTimestamp(sent_at));
        }
        Ok(Message { id, sender, recipient, topic: topic.into(), body, size_bytes, sent_at })
    }
}

/// What the router decided to do with a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoutingAction {
    /// Hand the message to the recipient's device for a human read.
    DeliverDirect,
    /// Answer on the recipient's behalf from the nearest model replica.
    LLMServe,
    /// Queue for the recipient to answer later; the sender is told to wait.
    ForwardToRecipient,
    /// Park at the datacenter until the recipient comes back.
    HoldInactive,
}

impl RoutingAction {
    pub fn as_str(self) -> &'static str {
        match self {
            RoutingAction::DeliverDirect => "deliver_direct",
            RoutingAction::LLMServe => "llm_serve",
            RoutingAction::ForwardToRecipient => "forward_to_recipient",
            RoutingAction::HoldInactive => "hold_inactive",
        }
    }

    pub fn parse(s: &str) -> Option<RoutingAction> {
        match s {
            "deliver_direct" => Some(RoutingAction::DeliverDirect),
            "llm_serve" => Some(RoutingAction::LLMServe),
            "forward_to_recipient" => Some(RoutingAction::ForwardToRecipient),
            "hold_inactive" => Some(RoutingAction::HoldInactive),
            _ => None,
        }
    }
}

impl fmt::Display for RoutingAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Routes one message given the recipient's state at lookup time.
///
/// `model_available` means some replica of the recipient's model is reachable;
/// `answerable` means that replica's version can answer the topic for this
/// sender. `answerable` without `model_available` is rejected.
pub fn decide_route(
    status: &PresenceStatus,
    sender: &UserId,
    model_available: bool,
    answerable: bool,
) -> Result<RoutingAction, ProtocolError> {
    if answerable && !model_available {
        return Err(ProtocolError::AnswerableWithoutModel);
    }
    let action = match status.kind() {
        StatusKind::Active => RoutingAction::DeliverDirect,
        StatusKind::Busy if status.allows(sender) => RoutingAction::DeliverDirect,
        StatusKind::Busy | StatusKind::Away => {
            if model_available && answerable {
                RoutingAction::LLMServe
            } else {
                RoutingAction::ForwardToRecipient
            }
        }
        StatusKind::Inactive => RoutingAction::HoldInactive,
    };
    Ok(action)
}

/// One row of the exhaustive routing table: inputs and the resulting action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingRow {
    pub status: StatusKind,
    pub sender_allowlisted: bool,
    pub model_available: bool,
    pub answerable: bool,
    pub action: RoutingAction,
}

/// Enumerates every valid input combination in a fixed order:
/// status (Active, Busy, Away, Inactive), then allowlisted (false, true),
/// then (model_available, answerable) in (false,false), (true,false),
/// (true,true) order. The invalid (available=false, answerable=true) pair is
/// excluded, giving 4 x 2 x 3 = 24 rows.
pub fn routing_table() -> Vec<RoutingRow> {
    let sender = UserId::from("s");
    let mut rows = Vec::with_capacity(24);
    for status in StatusKind::ALL {
        for allowlisted in [false, true] {
            for (avail, ans) in [(false, false), (true, false), (true, true)] {
                let allowlist: BTreeSet<UserId> =
                    if allowlisted { BTreeSet::from([sender.clone()]) } else { BTreeSet::new() };
                let ps = PresenceStatus::with_kind(status, &allowlist);
                let action = decide_route(&ps, &sender, avail, ans)
                    .expect("all enumerated combinations are valid");
                rows.push(RoutingRow {
                    status,
                    sender_allowlisted: allowlisted,
                    model_available: avail,
                    answerable: ans,
                    action,
                });
            }
        }
    }
    rows
}

/// The routing table as CSV with a header, one row per combination.
pub fn routing_table_csv() -> String {
    let mut out = String::from("status,sender_allowlisted,model_available,answerable,action\n");
    for row in routing_table() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.status, row.sender_allowlisted, row.model_available, row.answerable, row.action
        ));
    }
    out
}

/// Appends the disclosure line to a generated body (on its own final line).
pub fn apply_disclosure(body: &str) -> Result<String, ProtocolError> {
    if body.is_empty() {
        return Err(ProtocolError::EmptyBody);
    }
    Ok(format!("{}\n{}", body, DISCLOSURE_LINE))
}

/// True if `body` carries the disclosure line as its final line.
pub fn has_disclosure(body: &str) -> bool {
    body.lines().last() == Some(DISCLOSURE_LINE)
}

/// One record of a model answering on a user's behalf, kept for later review
/// by the owner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub ts: f64,
    pub owner: UserId,
    pub sender: UserId,
    pub query: String,
    pub response: String,
    pub model_version: u32,
    pub owner_status: StatusKind,
    pub serving_node: NodeId,
}

/// Append-only store of interaction log records.
///
/// Records are appended in serving order; `append` refuses responses that are
/// missing the disclosure line, so the store can never hold an untagged reply.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogStore {
    records: Vec<LogRecord>,
}

impl LogStore {
    pub fn new() -> Self {
        LogStore::default()
    }

    pub fn append(&mut self, record: LogRecord) -> Result<(), ProtocolError> {
        if !has_disclosure(&record.response) {
            return Err(ProtocolError::MissingDisclosure { sender: record.sender });
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn for_owner<'a>(&'a self, owner: &'a UserId) -> impl Iterator<Item = &'a LogRecord> {
        self.records.iter().filter(move |r| &r.owner == owner)
    }

    /// Serializes the store as JSON Lines with a fixed key order and
    /// fixed-point (6 decimal) timestamps, so equal stores produce
    /// byte-identical output.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!(
                "{{\"ts\":{:.6},\"owner\":{},\"sender\":{},\"query\":{},\"response\":{},\"model_version\":{},\"owner_status\":\"{}\",\"serving_node\":{}}}\n",
                r.ts,
                json_str(r.owner.as_str()),
                json_str(r.sender.as_str()),
                json_str(&r.query),
                json_str(&r.response),
                r.model_version,
                r.owner_status,
                json_str(r.serving_node.as_str()),
            ));
        }
        out
    }
}

pub(crate) fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Why a message sits in an inbox.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoldReason {
    /// Routed ForwardToRecipient: awaiting a human reply.
    Forwarded,
    /// Routed HoldInactive: parked until the owner is Active again.
    Held,
}

/// What happens to a held message when the owner drains their inbox.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrainDecision {
    /// The owner answers in person.
    HumanReply,
    /// The owner's model answers (only under `DelegateIfAnswerable`).
    DelegateToLlm,
}

/// Policy applied when an inbox drains on a transition to Active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrainPolicy {
    AlwaysHuman,
    DelegateIfAnswerable,
}

/// Per-user queue of messages waiting for the owner.
#[derive(Debug, Clone, PartialEq)]
pub struct Inbox {
    owner: UserId,
    held: Vec<(Message, HoldReason)>,
}

impl Inbox {
    pub fn new(owner: UserId) -> Self {
        Inbox { owner, held: Vec::new() }
    }

    pub fn owner(&self) -> &UserId {
        &self.owner
    }

    pub fn len(&self) -> usize {
        self.held.len()
    }

    pub fn is_empty(&self) -> bool {
        self.held.is_empty()
    }

    pub fn held(&self) -> &[(Message, HoldReason)] {
        &self.held
    }

    /// Queues a message; a given message id can be held at most once.
    pub fn push(&mut self, msg: Message, reason: HoldReason) -> Result<(), ProtocolError> {
        if self.held.iter().any(|(m, _)| m.id == msg.id) {
            return Err(ProtocolError::DuplicateHold(msg.id));
        }
        self.held.push((msg, reason));
        Ok(())
    }
}

/// Applies a status change to an inbox.
///
/// Transitions to anything but Active leave the inbox alone. A transition to
/// Active drains all held messages in arrival order and decides, per message,
/// whether the owner answers in person or delegates to their model.
/// `answerable` is consulted only under `DelegateIfAnswerable`.
pub fn on_status_change(
    new_status: &PresenceStatus,
    inbox: &mut Inbox,
    policy: DrainPolicy,
    answerable: &dyn Fn(&Message) -> bool,
) -> Vec<(Message, DrainDecision)> {
    if new_status.kind() != StatusKind::Active {
        return Vec::new();
    }
    let drained = std::mem::take(&mut inbox.held);
    drained
        .into_iter()
        .map(|(msg, _reason)| {
            let decision = match policy {
                DrainPolicy::AlwaysHuman => DrainDecision::HumanReply,
                DrainPolicy::DelegateIfAnswerable => {
                    if answerable(&msg) {
                        DrainDecision::DelegateToLlm
                    } else {
                        DrainDecision::HumanReply
                    }
                }
            };
            (msg, decision)
        })
        .collect()
}
