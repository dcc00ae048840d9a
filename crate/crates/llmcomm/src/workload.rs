//! Deterministic workload generation: presence schedules and message
//! arrivals.
//!
//! All randomness flows from one splitmix64 root seeded by the scenario
//! seed; each flow draws its own sub-seed from the root in declaration
//! order, so adding a flow never perturbs the streams of earlier flows.
//! Every draw is pinned:
//!
//! * splitmix64 state update `s += 0x9E3779B97F4A7C15`, output mix
//!   `z = (z ^ z>>30) * 0xBF58476D1CE4E5B9; z = (z ^ z>>27) * 0x94D049BB133111EB; z ^ z>>31`
//! * uniform `u = (out + 1) / 2^64`, giving u in (0, 1]
//! * exponential gap `-ln(u) / rate`
//! * per arrival, draw order is: gap (Poisson only), unknown-topic coin
//!   (only when `p_answerable_unknown > 0`), then the topic pick (skipped
//!   when the coin chose an unknown topic)
//!
//! Topics are sampled from a CDF over the flow's topics in sorted topic
//! order. Synthetic unknown topics use the reserved `__unknown_` prefix;
//! user topics may not start with `__`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ids::UserId;
use crate::protocol::{Message, StatusKind};

/// Prefix reserved for synthetic topics no model can know.
pub const RESERVED_TOPIC_PREFIX: &str = "__";

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("flow {flow}: rate_per_s must be finite and positive (got {rate})")]
    BadRate { flow: usize, rate: f64 },
    #[error("duration_s must be finite and positive (got {0})")]
    BadDuration(f64),
    #[error("flow {flow}: msg_bytes must be at least 16 (got {bytes})")]
    SmallMsgBytes { flow: usize, bytes: u64 },
    #[error("flow {flow}: start_s must be finite and non-negative (got {start})")]
    BadStart { flow: usize, start: f64 },
    #[error("flow {flow}: needs at least one topic")]
    NoTopics { flow: usize },
    #[error("flow {flow}: topic {topic:?} uses the reserved __ prefix")]
    ReservedTopic { flow: usize, topic: String },
    #[error("flow {flow}: topic {topic:?} probability must be in (0, 1] (got {p})")]
    BadTopicProbability { flow: usize, topic: String, p: f64 },
    #[error("flow {flow}: topic probabilities sum to {sum}, expected 1")]
    TopicProbabilitySum { flow: usize, sum: f64 },
    #[error("flow {flow}: sender and recipient must differ ({user})")]
    SelfFlow { flow: usize, user: UserId },
    #[error("p_answerable_unknown must be in [0, 1] (got {0})")]
    BadUnknownProbability(f64),
    #[error("status event for {user} at {at}: time must be finite and non-negative")]
    BadStatusTime { user: UserId, at: f64 },
    #[error("exponential rate must be finite and positive (got {0})")]
    BadExponentialRate(f64),
}

/// splitmix64: tiny, fast, and fully pinned so streams can be frozen in
/// tests and reproduced in any other language.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in (0, 1]: `(out + 1) / 2^64`.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() as f64 + 1.0) * 2.0_f64.powi(-64)
    }
}

/// Exponential inter-arrival sample: `-ln(u) / rate` with u in (0, 1].
pub fn sample_exponential(rate: f64, rng: &mut SplitMix64) -> Result<f64, WorkloadError> {
    if !rate.is_finite() || rate <= 0.0 {
        return Err(WorkloadError::BadExponentialRate(rate));
    }
    Ok(-rng.next_unit().ln() / rate)
}

/// How a flow schedules its arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalProcess {
    /// Exponential gaps at `rate_per_s` (random, seed-determined).
    Poisson,
    /// Fixed gaps of `1/rate_per_s` starting at `start_s + 1/rate` (exact).
    Periodic,
}

/// One directed sender-to-recipient message stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub sender: UserId,
    pub recipient: UserId,
    pub rate_per_s: f64,
    pub msg_bytes: u64,
    /// Topic -> probability; keys sorted, values sum to 1.
    pub topics: BTreeMap<String, f64>,
    pub arrivals: ArrivalProcess,
    /// Arrivals begin after this offset.
    pub start_s: f64,
}

/// One scheduled presence change.
#[derive(Debug, Clone, PartialEq)]
pub struct StatusEvent {
    pub at: f64,
    pub user: UserId,
    pub kind: StatusKind,
}

/// Everything the generator needs.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub duration_s: f64,
    pub flows: Vec<FlowSpec>,
    pub status_schedule: Vec<StatusEvent>,
    /// Probability that an arrival asks about a synthetic topic no model
    /// knows (forcing the unanswerable path).
    pub p_answerable_unknown: f64,
}

/// One generated event, already in global order.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadEvent {
    /// Status changes sort before arrivals at equal timestamps so a message
    /// always sees the status published at its own instant.
    Status(StatusEvent),
    Arrival(Message),
}

impl WorkloadEvent {
    pub fn at(&self) -> f64 {
        match self {
            WorkloadEvent::Status(s) => s.at,
            WorkloadEvent::Arrival(m) => m.sent_at,
        }
    }
}

/// Structural checks shared by generation and scenario loading.
pub fn validate(spec: &WorkloadSpec) -> Result<(), WorkloadError> {
    if !spec.duration_s.is_finite() || spec.duration_s <= 0.0 {
        return Err(WorkloadError::BadDuration(spec.duration_s));
    }
    if !spec.p_answerable_unknown.is_finite()
        || !(0.0..=1.0).contains(&spec.p_answerable_unknown)
    {
        return Err(WorkloadError::BadUnknownProbability(spec.p_answerable_unknown));
    }
    for (i, f) in spec.flows.iter().enumerate() {
        if !f.rate_per_s.is_finite() || f.rate_per_s <= 0.0 {
            return Err(WorkloadError::BadRate { flow: i, rate: f.rate_per_s });
        }
        if f.msg_bytes < 16 {
            return Err(WorkloadError::SmallMsgBytes { flow: i, bytes: f.msg_bytes });
        }
        if !f.start_s.is_finite() || f.start_s < 0.0 {
            return Err(WorkloadError::BadStart { flow: i, start: f.start_s });
        }
        if f.sender == f.recipient {
            return Err(WorkloadError::SelfFlow { flow: i, user: f.sender.clone() });
        }
        if f.topics.is_empty() {
            return Err(WorkloadError::NoTopics { flow: i });
        }
        let mut sum = 0.0;
        for (topic, p) in &f.topics {
            if topic.starts_with(RESERVED_TOPIC_PREFIX) {
                return Err(WorkloadError::ReservedTopic { flow: i, topic: topic.clone() });
            }
            if !p.is_finite() || *p <= 0.0 || *p > 1.0 {
                return Err(WorkloadError::BadTopicProbability {
                    flow: i,
                    topic: topic.clone(),
                    p: *p,
                });
            }
            sum += *p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(WorkloadError::TopicProbabilitySum { flow: i, sum });
        }
    }
    for s in &spec.status_schedule {
        if !s.at.is_finite() || s.at < 0.0 {
            return Err(WorkloadError::BadStatusTime { user: s.user.clone(), at: s.at });
        }
    }
    Ok(())
}

/// Picks a topic by walking the sorted-topic CDF with one uniform draw.
fn pick_topic(topics: &BTreeMap<String, f64>, u: f64) -> &str {
    let mut acc = 0.0;
    let mut last = "";
    for (topic, p) in topics {
        acc += *p;
        last = topic;
        if u <= acc {
            return topic;
        }
    }
    // Floating-point slack at the top of the CDF falls to the last topic.
    last
}

/// Message body: a short note about the topic, clipped to the wire size.
fn synth_body(topic: &str, msg_bytes: u64) -> String {
    let body = format!("re {topic}: got a minute?");
    if body.len() as u64 <= msg_bytes {
        return body;
    }
    let mut cut = msg_bytes as usize;
    while cut > 0 && !body.is_char_boundary(cut) {
        cut -= 1;
    }
    body[..cut.max(1)].to_string()
}

/// Generates the merged, ordered event list for a spec.
///
/// Order: time, then status-before-arrival, then schedule/flow declaration
/// order, then per-flow arrival index. Message ids are assigned 1..=n in
/// that final order.
pub fn generate(spec: &WorkloadSpec) -> Result<Vec<WorkloadEvent>, WorkloadError> {
    validate(spec)?;

    // (at, class, declaration index, arrival index) sort key.
    let mut keyed: Vec<(f64, u8, usize, usize, WorkloadEvent)> = Vec::new();
    for (i, s) in spec.status_schedule.iter().enumerate() {
        keyed.push((s.at, 0, i, 0, WorkloadEvent::Status(s.clone())));
    }

    let mut root = SplitMix64::new(spec.seed);
    let flow_seeds: Vec<u64> = spec.flows.iter().map(|_| root.next_u64()).collect();

    for (fi, flow) in spec.flows.iter().enumerate() {
        let mut rng = SplitMix64::new(flow_seeds[fi]);
        let mut t = flow.start_s;
        let mut unknown_count: u64 = 0;
        let mut arrival_idx: usize = 0;
        loop {
            let gap = match flow.arrivals {
                ArrivalProcess::Poisson => sample_exponential(flow.rate_per_s, &mut rng)?,
                ArrivalProcess::Periodic => 1.0 / flow.rate_per_s,
            };
            t += gap;
            if t > spec.duration_s {
                break;
            }
            let topic = if spec.p_answerable_unknown > 0.0
                && rng.next_unit() <= spec.p_answerable_unknown
            {
                unknown_count += 1;
                format!("{}unknown_{}", RESERVED_TOPIC_PREFIX, unknown_count)
            } else {
                pick_topic(&flow.topics, rng.next_unit()).to_string()
            };
            let body = synth_body(&topic, flow.msg_bytes);
            // Id 0 is a placeholder until global ordering is known.
            let msg = Message::new(
                0,
                flow.sender.clone(),
                flow.recipient.clone(),
                topic,
                body,
                flow.msg_bytes,
                t,
            )
            .expect("validated flow fields yield valid messages");
            keyed.push((t, 1, fi, arrival_idx, WorkloadEvent::Arrival(msg)));
            arrival_idx += 1;
        }
    }

    keyed.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });

    let mut next_id: u64 = 1;
    let mut events = Vec::with_capacity(keyed.len());
    for (_, _, _, _, mut ev) in keyed {
        if let WorkloadEvent::Arrival(ref mut m) = ev {
            m.id = next_id;
            next_id += 1;
        }
        events.push(ev);
    }
    Ok(events)
}
