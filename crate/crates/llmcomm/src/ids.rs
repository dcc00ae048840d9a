//! Newtype identifiers shared across the crate.
//!
//! Both id kinds are ordered strings so that every map keyed on them is a
//! `BTreeMap` with a stable iteration order, which the deterministic engine
//! relies on.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Identifier of a user (a human participant who owns at most one personal model).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub String);

/// Identifier of a topology node (device, edge or datacenter).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl UserId {
    pub fn new(s: impl Into<String>) -> Self {
        UserId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl NodeId {
    pub fn new(s: impl Into<String>) -> Self {
        NodeId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UserId {
    fn from(s: &str) -> Self {
        UserId(s.to_string())
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_order_lexicographically() {
        let mut v = [NodeId::from("edge2"), NodeId::from("dc"), NodeId::from("edge1")];
        v.sort();
        let names: Vec<&str> = v.iter().map(|n| n.as_str()).collect();
        assert_eq!(names, ["dc", "edge1", "edge2"]);
    }

    #[test]
    fn ids_serialize_as_plain_strings() {
        assert_eq!(serde_json::to_string(&UserId::from("alice")).unwrap(), "\"alice\"");
        let back: UserId = serde_json::from_str("\"alice\"").unwrap();
        assert_eq!(back, UserId::from("alice"));
    }
}
