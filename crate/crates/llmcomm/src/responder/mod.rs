//! Personal-model responder: the per-user model that answers on its owner's
//! behalf.
//!
//! A model is an immutable snapshot (learning produces a successor version)
//! holding a fact base keyed by topic. Each fact carries a visibility scope
//! deciding which senders may receive it. Service time follows a two-stage
//! load/process profile per pipeline stage, with the load component paid only
//! on a cold start:
//!
//! stage | load (cold only) | process
//! ------|------------------|--------
//! text  | 6.62 s           | 9.64 s
//! tts   | 0.26 s           | 0.18 s
//!
//! so a cold text answer takes 16.26 s, a warm one 9.64 s, and a cold
//! text+tts answer 16.70 s.

pub mod adapter;

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::UserId;
use crate::protocol::{apply_disclosure, Message};

#[derive(Debug, Error, PartialEq)]
pub enum ResponderError {
    #[error("topic {topic:?} is not answerable for sender {sender}")]
    Unanswerable { topic: String, sender: UserId },
    #[error("service profile times must be finite and non-negative")]
    BadProfile,
    #[error("at least one pipeline stage must be requested")]
    NoStages,
    #[error("model size_bytes must be positive")]
    ZeroSize,
    #[error("a learned reply must not be empty")]
    EmptyReply,
}

/// Who may receive a fact from the responder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    /// Any sender.
    Public,
    /// Only the listed users (and the owner).
    Group(BTreeSet<UserId>),
    /// Only the owner; never served to someone else.
    Private,
}

impl Visibility {
    pub fn permits(&self, owner: &UserId, sender: &UserId) -> bool {
        if sender == owner {
            return true;
        }
        match self {
            Visibility::Public => true,
            Visibility::Group(members) => members.contains(sender),
            Visibility::Private => false,
        }
    }
}

/// One entry in a model's fact base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    /// The reply body served for this topic (before the disclosure line).
    pub response: String,
    pub visibility: Visibility,
}

/// Per-stage timing profile (seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceProfile {
    pub text_load_s: f64,
    pub text_process_s: f64,
    pub tts_load_s: f64,
    pub tts_process_s: f64,
}

impl Default for ServiceProfile {
    fn default() -> Self {
        ServiceProfile {
            text_load_s: 6.62,
            text_process_s: 9.64,
            tts_load_s: 0.26,
            tts_process_s: 0.18,
        }
    }
}

impl ServiceProfile {
    pub fn validate(&self) -> Result<(), ResponderError> {
        let all = [self.text_load_s, self.text_process_s, self.tts_load_s, self.tts_process_s];
        if all.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(ResponderError::BadProfile);
        }
        Ok(())
    }
}

/// A pipeline stage of the responder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Text,
    Tts,
}

/// Service time for one request.
///
/// Stages are a set: a stage counts once no matter how often it is listed.
/// Load components are added only when `cold` is set; stage times sum in the
/// fixed order text, then tts, so equal inputs give bit-equal results.
pub fn service_time(
    profile: &ServiceProfile,
    stages: &[Stage],
    cold: bool,
) -> Result<f64, ResponderError> {
    profile.validate()?;
    if stages.is_empty() {
        return Err(ResponderError::NoStages);
    }
    let mut total = 0.0;
    if stages.contains(&Stage::Text) {
        if cold {
            total += profile.text_load_s;
        }
        total += profile.text_process_s;
    }
    if stages.contains(&Stage::Tts) {
        if cold {
            total += profile.tts_load_s;
        }
        total += profile.tts_process_s;
    }
    Ok(total)
}

/// A reply produced by a responder.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    /// Body, disclosure line included.
    pub body: String,
    pub model_version: u32,
    pub service_time_s: f64,
}

/// One immutable version of a user's personal model.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalModel {
    pub owner: UserId,
    pub version: u32,
    pub size_bytes: u64,
    pub facts: BTreeMap<String, Fact>,
    pub profile: ServiceProfile,
}

impl PersonalModel {
    pub fn new(
        owner: UserId,
        version: u32,
        size_bytes: u64,
        facts: BTreeMap<String, Fact>,
        profile: ServiceProfile,
    ) -> Result<Self, ResponderError> {
        if size_bytes == 0 {
            return Err(ResponderError::ZeroSize);
        }
        profile.validate()?;
        Ok(PersonalModel { owner, version, size_bytes, facts, profile })
    }

    /// True if this version holds a fact for `topic` that `sender` may see.
    pub fn answerable(&self, topic: &str, sender: &UserId) -> bool {
        self.facts
            .get(topic)
            .map(|f| f.visibility.permits(&self.owner, sender))
            .unwrap_or(false)
    }

    /// Produces the tagged reply for a message, or refuses if the topic is
    /// not answerable for this sender. `stages` and `cold` come from the
    /// serving context (requested pipeline, replica temperature).
    pub fn generate(
        &self,
        msg: &Message,
        stages: &[Stage],
        cold: bool,
    ) -> Result<Response, ResponderError> {
        if !self.answerable(&msg.topic, &msg.sender) {
            return Err(ResponderError::Unanswerable {
                topic: msg.topic.clone(),
                sender: msg.sender.clone(),
            });
        }
        let fact = &self.facts[&msg.topic];
        let body = apply_disclosure(&fact.response).expect("fact responses are non-empty");
        let service_time_s = service_time(&self.profile, stages, cold)?;
        Ok(Response { body, model_version: self.version, service_time_s })
    }

    /// Produces the successor version after the owner's own reply teaches the
    /// model a topic. New topics get Group visibility scoped to the sender
    /// that triggered the exchange; an existing topic keeps its visibility
    /// and only the content is replaced. Facts are never removed, so the
    /// fact base grows monotonically across versions.
    pub fn learn(
        &self,
        topic: &str,
        owner_reply: &str,
        triggered_by: &UserId,
    ) -> Result<PersonalModel, ResponderError> {
        if owner_reply.is_empty() {
            return Err(ResponderError::EmptyReply);
        }
        let mut facts = self.facts.clone();
        let visibility = match facts.get(topic) {
            Some(existing) => existing.visibility.clone(),
            None => Visibility::Group(BTreeSet::from([triggered_by.clone()])),
        };
        facts.insert(topic.to_string(), Fact { response: owner_reply.to_string(), visibility });
        Ok(PersonalModel {
            owner: self.owner.clone(),
            version: self.version + 1,
            size_bytes: self.size_bytes,
            facts,
            profile: self.profile,
        })
    }
}
