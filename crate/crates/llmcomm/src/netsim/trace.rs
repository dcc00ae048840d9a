//! Run trace: one JSONL entry per executed event.
//!
//! The writer is hand-rolled so output is byte-stable: keys always appear in
//! the same order, every real is fixed-point with six decimals, and strings
//! are JSON-escaped. Two runs of the same scenario with the same seed must
//! produce identical bytes. The parser accepts exactly this shape back, so
//! external tools (and the replay checks in the test suite) can recount a
//! trace without touching simulator internals.

use serde::Deserialize;
use thiserror::Error;

use crate::ids::{NodeId, UserId};
use crate::protocol::{json_str, RoutingAction, StatusKind};

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown event kind {kind:?}")]
    UnknownKind { line: usize, kind: String },
    #[error("line {line}: unknown action {action:?}")]
    UnknownAction { line: usize, action: String },
    #[error("line {line}: unknown status {status:?}")]
    UnknownStatus { line: usize, status: String },
}

/// Kind of an executed (or dropped) event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    MessageArrival,
    TrainingComplete,
    TransferComplete,
    StatusChange,
    Drain,
    HumanReply,
    PropagationDue,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::MessageArrival => "message_arrival",
            TraceKind::TrainingComplete => "training_complete",
            TraceKind::TransferComplete => "transfer_complete",
            TraceKind::StatusChange => "status_change",
            TraceKind::Drain => "drain",
            TraceKind::HumanReply => "human_reply",
            TraceKind::PropagationDue => "propagation_due",
        }
    }

    pub fn parse(s: &str) -> Option<TraceKind> {
        match s {
            "message_arrival" => Some(TraceKind::MessageArrival),
            "training_complete" => Some(TraceKind::TrainingComplete),
            "transfer_complete" => Some(TraceKind::TransferComplete),
            "status_change" => Some(TraceKind::StatusChange),
            "drain" => Some(TraceKind::Drain),
            "human_reply" => Some(TraceKind::HumanReply),
            "propagation_due" => Some(TraceKind::PropagationDue),
            _ => None,
        }
    }
}

fn parse_status(s: &str) -> Option<StatusKind> {
    match s {
        "active" => Some(StatusKind::Active),
        "busy" => Some(StatusKind::Busy),
        "away" => Some(StatusKind::Away),
        "inactive" => Some(StatusKind::Inactive),
        _ => None,
    }
}

/// One trace line. Byte accounting per entry: `core_bytes` / `access_bytes`
/// are message-plane traffic attributed to this event; `model_bytes` is the
/// payload of a completed model transfer (counted once per transfer, not per
/// link). `charges` lists the individual link charges as (from, to, bytes).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub at: f64,
    pub seq: u64,
    pub kind: TraceKind,
    pub action: Option<RoutingAction>,
    pub msg_id: Option<u64>,
    pub sender: Option<UserId>,
    pub recipient: Option<UserId>,
    pub owner: Option<UserId>,
    pub topic: Option<String>,
    pub owner_status: Option<StatusKind>,
    pub serving_node: Option<NodeId>,
    pub model_version: Option<u32>,
    pub core_bytes: u64,
    pub access_bytes: u64,
    pub model_bytes: u64,
    pub network_s: f64,
    pub service_s: f64,
    pub latency_s: Option<f64>,
    pub charges: Vec<(NodeId, NodeId, u64)>,
    pub note: Option<String>,
}

impl TraceEntry {
    pub fn new(at: f64, seq: u64, kind: TraceKind) -> Self {
        TraceEntry {
            at,
            seq,
            kind,
            action: None,
            msg_id: None,
            sender: None,
            recipient: None,
            owner: None,
            topic: None,
            owner_status: None,
            serving_node: None,
            model_version: None,
            core_bytes: 0,
            access_bytes: 0,
            model_bytes: 0,
            network_s: 0.0,
            service_s: 0.0,
            latency_s: None,
            charges: Vec::new(),
            note: None,
        }
    }

    pub fn to_jsonl_line(&self) -> String {
        let mut s = String::with_capacity(256);
        s.push_str(&format!("{{\"at\":{:.6},\"seq\":{},", self.at, self.seq));
        s.push_str(&format!("\"kind\":\"{}\",", self.kind.as_str()));
        push_opt(&mut s, "action", self.action.map(|a| a.as_str().to_string()).as_deref());
        match self.msg_id {
            Some(id) => s.push_str(&format!("\"msg_id\":{id},")),
            None => s.push_str("\"msg_id\":null,"),
        }
        push_opt(&mut s, "sender", self.sender.as_ref().map(|u| u.as_str()));
        push_opt(&mut s, "recipient", self.recipient.as_ref().map(|u| u.as_str()));
        push_opt(&mut s, "owner", self.owner.as_ref().map(|u| u.as_str()));
        push_opt(&mut s, "topic", self.topic.as_deref());
        push_opt(&mut s, "owner_status", self.owner_status.map(|k| k.as_str().to_string()).as_deref());
        push_opt(&mut s, "serving_node", self.serving_node.as_ref().map(|n| n.as_str()));
        match self.model_version {
            Some(v) => s.push_str(&format!("\"model_version\":{v},")),
            None => s.push_str("\"model_version\":null,"),
        }
        s.push_str(&format!(
            "\"core_bytes\":{},\"access_bytes\":{},\"model_bytes\":{},",
            self.core_bytes, self.access_bytes, self.model_bytes
        ));
        s.push_str(&format!("\"network_s\":{:.6},\"service_s\":{:.6},", self.network_s, self.service_s));
        match self.latency_s {
            Some(l) => s.push_str(&format!("\"latency_s\":{l:.6},")),
            None => s.push_str("\"latency_s\":null,"),
        }
        s.push_str("\"charges\":[");
        for (i, (from, to, bytes)) in self.charges.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&format!("[{},{},{}]", json_str(from.as_str()), json_str(to.as_str()), bytes));
        }
        s.push_str("],");
        match &self.note {
            Some(n) => s.push_str(&format!("\"note\":{}}}", json_str(n))),
            None => s.push_str("\"note\":null}"),
        }
        s
    }
}

fn push_opt(s: &mut String, key: &str, value: Option<&str>) {
    match value {
        Some(v) => s.push_str(&format!("\"{key}\":{},", json_str(v))),
        None => s.push_str(&format!("\"{key}\":null,")),
    }
}

/// Mirror of the wire shape for parsing.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    at: f64,
    seq: u64,
    kind: String,
    action: Option<String>,
    msg_id: Option<u64>,
    sender: Option<String>,
    recipient: Option<String>,
    owner: Option<String>,
    topic: Option<String>,
    owner_status: Option<String>,
    serving_node: Option<String>,
    model_version: Option<u32>,
    core_bytes: u64,
    access_bytes: u64,
    model_bytes: u64,
    network_s: f64,
    service_s: f64,
    latency_s: Option<f64>,
    charges: Vec<(String, String, u64)>,
    note: Option<String>,
}

/// A whole run's entries, in execution order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.to_jsonl_line());
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Trace, TraceError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawEntry = serde_json::from_str(line)
                .map_err(|e| TraceError::Parse { line: lineno, message: e.to_string() })?;
            let kind = TraceKind::parse(&raw.kind)
                .ok_or(TraceError::UnknownKind { line: lineno, kind: raw.kind.clone() })?;
            let action = match raw.action {
                None => None,
                Some(a) => Some(RoutingAction::parse(&a).ok_or(TraceError::UnknownAction {
                    line: lineno,
                    action: a.clone(),
                })?),
            };
            let owner_status = match raw.owner_status {
                None => None,
                Some(st) => Some(parse_status(&st).ok_or(TraceError::UnknownStatus {
                    line: lineno,
                    status: st.clone(),
                })?),
            };
            entries.push(TraceEntry {
                at: raw.at,
                seq: raw.seq,
                kind,
                action,
                msg_id: raw.msg_id,
                sender: raw.sender.map(UserId::new),
                recipient: raw.recipient.map(UserId::new),
                owner: raw.owner.map(UserId::new),
                topic: raw.topic,
                owner_status,
                serving_node: raw.serving_node.map(NodeId::new),
                model_version: raw.model_version,
                core_bytes: raw.core_bytes,
                access_bytes: raw.access_bytes,
                model_bytes: raw.model_bytes,
                network_s: raw.network_s,
                service_s: raw.service_s,
                latency_s: raw.latency_s,
                charges: raw
                    .charges
                    .into_iter()
                    .map(|(a, b, n)| (NodeId::new(a), NodeId::new(b), n))
                    .collect(),
                note: raw.note,
            });
        }
        Ok(Trace { entries })
    }
}
