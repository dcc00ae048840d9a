//! Scenario files: the JSON document a run loads, validated into typed
//! configuration.
//!
//! The parser is strict — unknown keys anywhere in the document are an
//! error, and every cross-reference (users to devices, flows to users,
//! placements to nodes, allowlists and fact groups to declared users) is
//! checked before anything runs. A scenario that loads is a scenario that
//! can execute.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use thiserror::Error;

use crate::ids::{NodeId, UserId};
use crate::lifecycle::{LifecycleError, TrainingSettings, TrainingSpec};
use crate::netsim::topology::{Link, LinkClass, NodeKind, Topology, TopologyError};
use crate::protocol::{DrainPolicy, StatusKind};
use crate::responder::{Fact, ResponderError, ServiceProfile, Stage, Visibility};
use crate::workload::{
    ArrivalProcess, FlowSpec, StatusEvent, WorkloadError, WorkloadSpec, RESERVED_TOPIC_PREFIX,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("user {0} declared twice")]
    DuplicateUser(UserId),
    #[error("user {user}: attach target {node} is not a device node in the topology")]
    AttachNotDevice { user: UserId, node: NodeId },
    #[error("user {user}: device {node} is already claimed by {other}")]
    DeviceShared { user: UserId, node: NodeId, other: UserId },
    #[error("user {user}: allowlist entry {entry} is not a declared user")]
    UnknownAllowlistEntry { user: UserId, entry: UserId },
    #[error("user {user}: allowlist must not contain the user themselves")]
    SelfAllowlist { user: UserId },
    #[error("user {user}: fact {topic:?} has an empty response")]
    EmptyFactResponse { user: UserId, topic: String },
    #[error("user {user}: fact topic {topic:?} uses the reserved __ prefix")]
    ReservedFactTopic { user: UserId, topic: String },
    #[error("user {user}: fact {topic:?} group member {member} is not a declared user")]
    UnknownGroupMember { user: UserId, topic: String, member: UserId },
    #[error("user {user}: placement node {node} is not in the topology")]
    UnknownPlacement { user: UserId, node: NodeId },
    #[error("user {user}: placement node {node} listed twice")]
    DuplicatePlacement { user: UserId, node: NodeId },
    #[error("flow {flow}: {role} {user} is not a declared user")]
    UnknownFlowUser { flow: usize, role: &'static str, user: UserId },
    #[error("settings.serve_stages must not be empty")]
    EmptyStages,
    #[error("settings.human_reply_delay_s must be finite and non-negative (got {0})")]
    BadReplyDelay(f64),
    #[error("settings.propagation.interval_s must be finite and positive (got {0})")]
    BadPropagationInterval(f64),
    #[error("settings.horizon_s must be finite and non-negative (got {0})")]
    BadHorizon(f64),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Responder(#[from] ResponderError),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
}

/// When learned updates ship to replicas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Propagation {
    /// Ship as soon as a learn lands.
    Immediate,
    /// Collect updates and ship at the next interval boundary.
    Batch { interval_s: f64 },
}

/// Tunable run parameters with production defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    /// Bytes per status-lookup control message (one each way).
    pub control_bytes: u64,
    /// Pipeline stages every served answer runs.
    pub serve_stages: Vec<Stage>,
    /// Think time before a human answers a delivered or forwarded message.
    pub human_reply_delay_s: f64,
    /// Wire size of a human reply; defaults to the reply body length.
    pub human_reply_bytes: Option<u64>,
    pub propagation: Propagation,
    pub training: TrainingSettings,
    pub drain_policy: DrainPolicy,
    /// Events after this instant are dropped instead of executed.
    pub horizon_s: Option<f64>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            control_bytes: 64,
            serve_stages: vec![Stage::Text],
            human_reply_delay_s: 60.0,
            human_reply_bytes: None,
            propagation: Propagation::Batch { interval_s: 3600.0 },
            training: TrainingSettings::default(),
            drain_policy: DrainPolicy::DelegateIfAnswerable,
            horizon_s: None,
        }
    }
}

/// A user's model as configured: either pre-placed (no training block) or
/// produced by a training job at run start.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub size_bytes: u64,
    pub facts: BTreeMap<String, Fact>,
    pub profile: ServiceProfile,
    pub placements: Vec<NodeId>,
    pub training: Option<TrainingSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserConfig {
    pub device: NodeId,
    pub allowlist: BTreeSet<UserId>,
    pub schedule: Vec<(f64, StatusKind)>,
    pub model: Option<ModelConfig>,
}

/// A fully validated scenario, ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub duration_s: f64,
    pub topology: Topology,
    pub users: BTreeMap<UserId, UserConfig>,
    pub flows: Vec<FlowSpec>,
    pub p_answerable_unknown: f64,
    pub settings: Settings,
}

// ---------------------------------------------------------------------------
// Wire shapes.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    seed: u64,
    duration_s: f64,
    topology: RawTopology,
    users: Vec<RawUser>,
    flows: Vec<RawFlow>,
    #[serde(default)]
    p_answerable_unknown: f64,
    #[serde(default)]
    settings: RawSettings,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    nodes: Vec<RawNode>,
    links: Vec<RawLink>,
    #[serde(default)]
    attachments: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    kind: NodeKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    a: String,
    b: String,
    latency_s: f64,
    bandwidth_bps: f64,
    class: LinkClass,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUser {
    id: String,
    attach: String,
    #[serde(default)]
    status_schedule: Vec<RawStatusEvent>,
    #[serde(default)]
    allowlist: Vec<String>,
    #[serde(default)]
    model: Option<RawModel>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStatusEvent {
    at: f64,
    status: StatusKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    size_bytes: u64,
    #[serde(default)]
    facts: BTreeMap<String, RawFact>,
    #[serde(default)]
    profile: Option<ServiceProfile>,
    #[serde(default)]
    placements: Vec<String>,
    #[serde(default)]
    training: Option<RawTraining>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFact {
    response: String,
    #[serde(default = "default_visibility")]
    visibility: Visibility,
}

fn default_visibility() -> Visibility {
    Visibility::Public
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    gpu_hours: f64,
    #[serde(default)]
    from_pretrained: bool,
    #[serde(default)]
    target_ppl: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlow {
    sender: String,
    recipient: String,
    rate_per_s: f64,
    msg_bytes: u64,
    topics: BTreeMap<String, f64>,
    #[serde(default)]
    arrivals: RawArrivals,
    #[serde(default)]
    start_s: f64,
}

#[derive(Deserialize, Default, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum RawArrivals {
    #[default]
    Poisson,
    Periodic,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSettings {
    control_bytes: u64,
    serve_stages: Vec<Stage>,
    human_reply_delay_s: f64,
    human_reply_bytes: Option<u64>,
    propagation: RawPropagation,
    training_parallelism: f64,
    finetune_factor: f64,
    drain_policy: DrainPolicy,
    horizon_s: Option<f64>,
}

impl Default for RawSettings {
    fn default() -> Self {
        let s = Settings::default();
        RawSettings {
            control_bytes: s.control_bytes,
            serve_stages: s.serve_stages,
            human_reply_delay_s: s.human_reply_delay_s,
            human_reply_bytes: s.human_reply_bytes,
            propagation: RawPropagation::default(),
            training_parallelism: s.training.parallelism,
            finetune_factor: s.training.finetune_factor,
            drain_policy: s.drain_policy,
            horizon_s: s.horizon_s,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPropagation {
    mode: RawPropagationMode,
    #[serde(default = "default_interval")]
    interval_s: f64,
}

fn default_interval() -> f64 {
    3600.0
}

impl Default for RawPropagation {
    fn default() -> Self {
        RawPropagation { mode: RawPropagationMode::Batch, interval_s: default_interval() }
    }
}

#[derive(Deserialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum RawPropagationMode {
    Immediate,
    Batch,
}

// ---------------------------------------------------------------------------
// Validation and conversion.

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        Scenario::from_json_with_seed(text, None)
    }

    /// Loads a scenario, optionally overriding its seed (the CLI `--seed`).
    pub fn from_json_with_seed(
        text: &str,
        seed_override: Option<u64>,
    ) -> Result<Scenario, ScenarioError> {
        let mut raw: RawScenario =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if let Some(seed) = seed_override {
            raw.seed = seed;
        }
        build(raw)
    }

    /// The generator input for this scenario.
    pub fn workload_spec(&self) -> WorkloadSpec {
        let mut status_schedule = Vec::new();
        for (user, cfg) in &self.users {
            for (at, kind) in &cfg.schedule {
                status_schedule.push(StatusEvent { at: *at, user: user.clone(), kind: *kind });
            }
        }
        // Stable order: by time, then by user id (users iterate sorted),
        // then by declaration order within one user.
        status_schedule.sort_by(|a, b| a.at.total_cmp(&b.at));
        WorkloadSpec {
            seed: self.seed,
            duration_s: self.duration_s,
            flows: self.flows.clone(),
            status_schedule,
            p_answerable_unknown: self.p_answerable_unknown,
        }
    }
}

fn build(raw: RawScenario) -> Result<Scenario, ScenarioError> {
    let topology = Topology::new(
        raw.topology.nodes.into_iter().map(|n| (NodeId::new(n.id), n.kind)).collect(),
        raw.topology
            .links
            .into_iter()
            .map(|l| Link {
                a: NodeId::new(l.a),
                b: NodeId::new(l.b),
                latency_s: l.latency_s,
                bandwidth_bps: l.bandwidth_bps,
                class: l.class,
            })
            .collect(),
        raw.topology
            .attachments
            .into_iter()
            .map(|(d, e)| (NodeId::new(d), NodeId::new(e)))
            .collect(),
    )?;

    let declared: BTreeSet<UserId> =
        raw.users.iter().map(|u| UserId::new(u.id.clone())).collect();

    let mut users: BTreeMap<UserId, UserConfig> = BTreeMap::new();
    let mut device_owner: BTreeMap<NodeId, UserId> = BTreeMap::new();
    for ru in raw.users {
        let user = UserId::new(ru.id);
        if users.contains_key(&user) {
            return Err(ScenarioError::DuplicateUser(user));
        }
        let device = NodeId::new(ru.attach);
        if topology.kind(&device).ok() != Some(NodeKind::Device) {
            return Err(ScenarioError::AttachNotDevice { user, node: device });
        }
        if let Some(other) = device_owner.get(&device) {
            return Err(ScenarioError::DeviceShared {
                user,
                node: device.clone(),
                other: other.clone(),
            });
        }
        device_owner.insert(device.clone(), user.clone());

        let mut allowlist = BTreeSet::new();
        for entry in ru.allowlist {
            let entry = UserId::new(entry);
            if entry == user {
                return Err(ScenarioError::SelfAllowlist { user });
            }
            if !declared.contains(&entry) {
                return Err(ScenarioError::UnknownAllowlistEntry { user, entry });
            }
            allowlist.insert(entry);
        }

        let model = match ru.model {
            None => None,
            Some(rm) => {
                let mut facts = BTreeMap::new();
                for (topic, rf) in rm.facts {
                    if topic.starts_with(RESERVED_TOPIC_PREFIX) {
                        return Err(ScenarioError::ReservedFactTopic { user, topic });
                    }
                    if rf.response.is_empty() {
                        return Err(ScenarioError::EmptyFactResponse { user, topic });
                    }
                    if let Visibility::Group(members) = &rf.visibility {
                        for member in members {
                            if !declared.contains(member) {
                                return Err(ScenarioError::UnknownGroupMember {
                                    user,
                                    topic,
                                    member: member.clone(),
                                });
                            }
                        }
                    }
                    facts.insert(topic, Fact { response: rf.response, visibility: rf.visibility });
                }
                let profile = rm.profile.unwrap_or_default();
                profile.validate()?;
                let mut placements = Vec::new();
                let mut seen = BTreeSet::new();
                for p in rm.placements {
                    let node = NodeId::new(p);
                    if !topology.contains(&node) {
                        return Err(ScenarioError::UnknownPlacement { user, node });
                    }
                    if !seen.insert(node.clone()) {
                        return Err(ScenarioError::DuplicatePlacement { user, node });
                    }
                    placements.push(node);
                }
                let training = rm.training.map(|rt| TrainingSpec {
                    owner: user.clone(),
                    gpu_hours: rt.gpu_hours,
                    from_pretrained: rt.from_pretrained,
                    target_ppl: rt.target_ppl,
                });
                if let Some(t) = &training {
                    if !t.gpu_hours.is_finite() || t.gpu_hours <= 0.0 {
                        return Err(LifecycleError::BadGpuHours(t.gpu_hours).into());
                    }
                }
                // Surfaces zero sizes and profile problems now, not mid-run.
                crate::responder::PersonalModel::new(
                    user.clone(),
                    1,
                    rm.size_bytes,
                    facts.clone(),
                    profile,
                )?;
                Some(ModelConfig {
                    size_bytes: rm.size_bytes,
                    facts,
                    profile,
                    placements,
                    training,
                })
            }
        };

        users.insert(
            user,
            UserConfig {
                device,
                allowlist,
                schedule: ru.status_schedule.into_iter().map(|s| (s.at, s.status)).collect(),
                model,
            },
        );
    }

    let mut flows = Vec::new();
    for (i, rf) in raw.flows.into_iter().enumerate() {
        let sender = UserId::new(rf.sender);
        let recipient = UserId::new(rf.recipient);
        if !declared.contains(&sender) {
            return Err(ScenarioError::UnknownFlowUser { flow: i, role: "sender", user: sender });
        }
        if !declared.contains(&recipient) {
            return Err(ScenarioError::UnknownFlowUser {
                flow: i,
                role: "recipient",
                user: recipient,
            });
        }
        flows.push(FlowSpec {
            sender,
            recipient,
            rate_per_s: rf.rate_per_s,
            msg_bytes: rf.msg_bytes,
            topics: rf.topics,
            arrivals: match rf.arrivals {
                RawArrivals::Poisson => ArrivalProcess::Poisson,
                RawArrivals::Periodic => ArrivalProcess::Periodic,
            },
            start_s: rf.start_s,
        });
    }

    let rs = raw.settings;
    if rs.serve_stages.is_empty() {
        return Err(ScenarioError::EmptyStages);
    }
    if !rs.human_reply_delay_s.is_finite() || rs.human_reply_delay_s < 0.0 {
        return Err(ScenarioError::BadReplyDelay(rs.human_reply_delay_s));
    }
    let propagation = match rs.propagation.mode {
        RawPropagationMode::Immediate => Propagation::Immediate,
        RawPropagationMode::Batch => {
            let interval = rs.propagation.interval_s;
            if !interval.is_finite() || interval <= 0.0 {
                return Err(ScenarioError::BadPropagationInterval(interval));
            }
            Propagation::Batch { interval_s: interval }
        }
    };
    if let Some(h) = rs.horizon_s {
        if !h.is_finite() || h < 0.0 {
            return Err(ScenarioError::BadHorizon(h));
        }
    }
    let training =
        TrainingSettings { parallelism: rs.training_parallelism, finetune_factor: rs.finetune_factor };
    training.validate()?;
    let settings = Settings {
        control_bytes: rs.control_bytes,
        serve_stages: rs.serve_stages,
        human_reply_delay_s: rs.human_reply_delay_s,
        human_reply_bytes: rs.human_reply_bytes,
        propagation,
        training,
        drain_policy: rs.drain_policy,
        horizon_s: rs.horizon_s,
    };

    let scenario = Scenario {
        seed: raw.seed,
        duration_s: raw.duration_s,
        topology,
        users,
        flows,
        p_answerable_unknown: raw.p_answerable_unknown,
        settings,
    };
    // Flow-level and schedule-level numeric rules live with the generator.
    crate::workload::validate(&scenario.workload_spec())?;
    Ok(scenario)
}
