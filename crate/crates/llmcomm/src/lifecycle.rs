//! Model lifecycle: training, placement on nodes, incremental learning, and
//! update propagation.
//!
//! Each owner has a home node (the datacenter) that always holds the latest
//! completed version, plus zero or more replicas on edge or device nodes.
//! Replicas are immutable snapshots; learning bumps the version at home and
//! marks the owner dirty, and a later propagation pass ships the new version
//! to every stale replica. Time is compressed so runs stay tractable: a
//! training job of `gpu_hours` (scaled by the fine-tune factor when starting
//! from a pretrained base) spread over `parallelism` workers completes after
//! `gpu_hours * factor / parallelism` simulated seconds. Costs are accounted
//! over the effective GPU-hours actually spent.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::costmodel::{CostError, CostParams, CostReport};
use crate::ids::{NodeId, UserId};
use crate::netsim::topology::{transfer, Charge, Topology, TopologyError};
use crate::responder::{Fact, PersonalModel, ResponderError, ServiceProfile};

#[derive(Debug, Error, PartialEq)]
pub enum LifecycleError {
    #[error("no model registered for {0}")]
    UnknownOwner(UserId),
    #[error("install for {owner} expected version {expected}, got {got}")]
    VersionGap { owner: UserId, expected: u32, got: u32 },
    #[error("gpu_hours must be finite and positive (got {0})")]
    BadGpuHours(f64),
    #[error("training parallelism must be finite and positive (got {0})")]
    BadParallelism(f64),
    #[error("finetune_factor must be in (0, 1] (got {0})")]
    BadFinetuneFactor(f64),
    #[error("version {version} of {owner}'s model was never produced")]
    NoSuchVersion { owner: UserId, version: u32 },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Responder(#[from] ResponderError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Request to train (or fine-tune) one owner's model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSpec {
    pub owner: UserId,
    /// Budget for a from-scratch run; scaled down when `from_pretrained`.
    pub gpu_hours: f64,
    pub from_pretrained: bool,
    /// Optional quality target, recorded but not simulated.
    pub target_ppl: Option<f64>,
}

/// Knobs for the training-time compression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSettings {
    pub parallelism: f64,
    pub finetune_factor: f64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        TrainingSettings { parallelism: 1024.0, finetune_factor: 0.01 }
    }
}

impl TrainingSettings {
    pub fn validate(&self) -> Result<(), LifecycleError> {
        if !self.parallelism.is_finite() || self.parallelism <= 0.0 {
            return Err(LifecycleError::BadParallelism(self.parallelism));
        }
        if !self.finetune_factor.is_finite()
            || self.finetune_factor <= 0.0
            || self.finetune_factor > 1.0
        {
            return Err(LifecycleError::BadFinetuneFactor(self.finetune_factor));
        }
        Ok(())
    }
}

/// A planned training job: install `model` when the clock reaches
/// `completes_at`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub model: PersonalModel,
    pub cost: CostReport,
    pub completes_at: f64,
}

/// A planned model transfer to one node.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferPlan {
    pub owner: UserId,
    pub node: NodeId,
    pub version: u32,
    pub bytes: u64,
    pub network_s: f64,
    pub charges: Vec<Charge>,
}

#[derive(Debug, Clone)]
struct OwnerEntry {
    /// Completed versions, oldest first; index i holds version i+1.
    history: Vec<PersonalModel>,
    home: NodeId,
    /// 0 until the first training completes.
    home_version: u32,
    replicas: BTreeMap<NodeId, u32>,
    dirty: bool,
}

/// All owners' models, replicas, and update state.
#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    owners: BTreeMap<UserId, OwnerEntry>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        ModelRegistry::default()
    }

    /// The version the next install for `owner` must carry.
    pub fn next_version(&self, owner: &UserId) -> u32 {
        self.owners.get(owner).map(|e| e.history.len() as u32 + 1).unwrap_or(1)
    }

    /// Plans a training job without mutating the registry. The caller
    /// installs `run.model` when `run.completes_at` is reached.
    // Pure planner: every input is an independent degree of freedom and
    // grouping them would just invent a struct used once.
    #[allow(clippy::too_many_arguments)]
    pub fn plan_training(
        &self,
        spec: &TrainingSpec,
        size_bytes: u64,
        facts: BTreeMap<String, Fact>,
        profile: ServiceProfile,
        now: f64,
        settings: &TrainingSettings,
        cost_params: &CostParams,
    ) -> Result<TrainingRun, LifecycleError> {
        settings.validate()?;
        if !spec.gpu_hours.is_finite() || spec.gpu_hours <= 0.0 {
            return Err(LifecycleError::BadGpuHours(spec.gpu_hours));
        }
        let effective_gpu_hours = if spec.from_pretrained {
            spec.gpu_hours * settings.finetune_factor
        } else {
            spec.gpu_hours
        };
        let model = PersonalModel::new(
            spec.owner.clone(),
            self.next_version(&spec.owner),
            size_bytes,
            facts,
            profile,
        )?;
        Ok(TrainingRun {
            model,
            cost: CostReport::compute(effective_gpu_hours, cost_params)?,
            completes_at: now + effective_gpu_hours / settings.parallelism,
        })
    }

    /// Registers a completed version at its home node. Versions must arrive
    /// densely (1, 2, 3, ...); the home then holds the latest.
    pub fn install(&mut self, model: PersonalModel, home: NodeId) -> Result<u32, LifecycleError> {
        let expected = self.next_version(&model.owner);
        if model.version != expected {
            return Err(LifecycleError::VersionGap {
                owner: model.owner.clone(),
                expected,
                got: model.version,
            });
        }
        let version = model.version;
        let entry = self.owners.entry(model.owner.clone()).or_insert_with(|| OwnerEntry {
            history: Vec::new(),
            home: home.clone(),
            home_version: 0,
            replicas: BTreeMap::new(),
            dirty: false,
        });
        entry.home = home;
        entry.history.push(model);
        entry.home_version = version;
        if !entry.replicas.is_empty() {
            entry.dirty = true;
        }
        Ok(version)
    }

    /// Learns a topic from the owner's own reply: produces the successor
    /// version at home and marks the owner dirty for propagation.
    pub fn learn_from_reply(
        &mut self,
        owner: &UserId,
        topic: &str,
        owner_reply: &str,
        triggered_by: &UserId,
    ) -> Result<u32, LifecycleError> {
        let entry =
            self.owners.get_mut(owner).ok_or_else(|| LifecycleError::UnknownOwner(owner.clone()))?;
        let latest = entry
            .history
            .last()
            .ok_or_else(|| LifecycleError::UnknownOwner(owner.clone()))?;
        let next = latest.learn(topic, owner_reply, triggered_by)?;
        let version = next.version;
        entry.history.push(next);
        entry.home_version = version;
        entry.dirty = true;
        Ok(version)
    }

    /// Plans copying the latest version to `node`. Idempotent: returns
    /// `None` when the node is the home or already holds the latest version.
    pub fn offload(
        &self,
        owner: &UserId,
        node: &NodeId,
        topo: &Topology,
    ) -> Result<Option<TransferPlan>, LifecycleError> {
        let entry =
            self.owners.get(owner).ok_or_else(|| LifecycleError::UnknownOwner(owner.clone()))?;
        let latest = entry
            .history
            .last()
            .filter(|_| entry.home_version > 0)
            .ok_or_else(|| LifecycleError::UnknownOwner(owner.clone()))?;
        if *node == entry.home {
            return Ok(None);
        }
        if entry.replicas.get(node) == Some(&latest.version) {
            return Ok(None);
        }
        let path = topo.route_path(&entry.home, node)?;
        let (network_s, charges) = transfer(&path, latest.size_bytes, &entry.home);
        Ok(Some(TransferPlan {
            owner: owner.clone(),
            node: node.clone(),
            version: latest.version,
            bytes: latest.size_bytes,
            network_s,
            charges,
        }))
    }

    /// Records a finished transfer. Replica versions only move forward, so a
    /// slow older transfer can never clobber a newer copy. Returns true when
    /// the replica actually changed (the copy starts cold).
    pub fn complete_transfer(
        &mut self,
        owner: &UserId,
        node: &NodeId,
        version: u32,
    ) -> Result<bool, LifecycleError> {
        let entry =
            self.owners.get_mut(owner).ok_or_else(|| LifecycleError::UnknownOwner(owner.clone()))?;
        let slot = entry.replicas.entry(node.clone()).or_insert(0);
        if version > *slot {
            *slot = version;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Plans transfers refreshing every stale replica to the latest version
    /// and clears the dirty flag. Fresh replicas are skipped.
    pub fn propagate(
        &mut self,
        owner: &UserId,
        topo: &Topology,
    ) -> Result<Vec<TransferPlan>, LifecycleError> {
        let entry =
            self.owners.get_mut(owner).ok_or_else(|| LifecycleError::UnknownOwner(owner.clone()))?;
        let latest = match entry.history.last() {
            Some(m) if entry.home_version > 0 => m.clone(),
            _ => return Err(LifecycleError::UnknownOwner(owner.clone())),
        };
        let mut plans = Vec::new();
        for (node, version) in &entry.replicas {
            if *version >= latest.version {
                continue;
            }
            let path = topo.route_path(&entry.home, node)?;
            let (network_s, charges) = transfer(&path, latest.size_bytes, &entry.home);
            plans.push(TransferPlan {
                owner: owner.clone(),
                node: node.clone(),
                version: latest.version,
                bytes: latest.size_bytes,
                network_s,
                charges,
            });
        }
        entry.dirty = false;
        Ok(plans)
    }

    pub fn is_dirty(&self, owner: &UserId) -> bool {
        self.owners.get(owner).map(|e| e.dirty).unwrap_or(false)
    }

    /// Nearest serving location for `owner`'s model as seen from `origin`:
    /// minimum path latency, ties to the lexicographically smaller node.
    /// The home counts as a location once a version has completed. `None`
    /// when the owner has no completed model anywhere.
    pub fn resolve_replica(
        &self,
        owner: &UserId,
        origin: &NodeId,
        topo: &Topology,
    ) -> Result<Option<(NodeId, u32)>, LifecycleError> {
        let entry = match self.owners.get(owner) {
            Some(e) => e,
            None => return Ok(None),
        };
        let mut candidates: Vec<(NodeId, u32)> = Vec::new();
        if entry.home_version > 0 {
            candidates.push((entry.home.clone(), entry.home_version));
        }
        for (node, version) in &entry.replicas {
            if *version > 0 {
                candidates.push((node.clone(), *version));
            }
        }
        let mut best: Option<(f64, NodeId, u32)> = None;
        for (node, version) in candidates {
            let cost = topo.path_cost(origin, &node)?;
            let better = match &best {
                None => true,
                Some((c, n, _)) => cost.total_cmp(c).is_lt() || (cost == *c && node < *n),
            };
            if better {
                best = Some((cost, node, version));
            }
        }
        Ok(best.map(|(_, node, version)| (node, version)))
    }

    /// The exact snapshot a replica at `version` serves from.
    pub fn model_at(&self, owner: &UserId, version: u32) -> Result<&PersonalModel, LifecycleError> {
        let entry =
            self.owners.get(owner).ok_or_else(|| LifecycleError::UnknownOwner(owner.clone()))?;
        entry
            .history
            .get(version.wrapping_sub(1) as usize)
            .filter(|_| version >= 1)
            .ok_or(LifecycleError::NoSuchVersion { owner: owner.clone(), version })
    }

    pub fn latest(&self, owner: &UserId) -> Option<&PersonalModel> {
        self.owners.get(owner).and_then(|e| if e.home_version > 0 { e.history.last() } else { None })
    }

    pub fn latest_version(&self, owner: &UserId) -> u32 {
        self.owners.get(owner).map(|e| e.home_version).unwrap_or(0)
    }

    pub fn replicas(&self, owner: &UserId) -> BTreeMap<NodeId, u32> {
        self.owners.get(owner).map(|e| e.replicas.clone()).unwrap_or_default()
    }

    pub fn owners(&self) -> impl Iterator<Item = &UserId> {
        self.owners.keys()
    }

    /// Stable JSON snapshot of the placement state (owners and node maps are
    /// sorted, key order fixed).
    pub fn dump_json(&self) -> String {
        let mut out = String::from("{");
        for (i, (owner, e)) in self.owners.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!(
                "{}:{{\"version\":{},\"size_bytes\":{},\"home\":{},\"replicas\":{{",
                crate::protocol::json_str(owner.as_str()),
                e.home_version,
                e.history.last().map(|m| m.size_bytes).unwrap_or(0),
                crate::protocol::json_str(e.home.as_str()),
            ));
            for (j, (node, v)) in e.replicas.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{}:{}", crate::protocol::json_str(node.as_str()), v));
            }
            out.push_str(&format!("}},\"dirty\":{}}}", e.dirty));
        }
        out.push('}');
        out
    }
}
