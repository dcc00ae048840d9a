//! Network topology: devices attached to edges, edges meshed with a
//! datacenter, and latency-shortest-path routing over it.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("link endpoint {0} is not a declared node")]
    UnknownEndpoint(NodeId),
    #[error("link from {0} to itself")]
    SelfLink(NodeId),
    #[error("duplicate link between {0} and {1}")]
    DuplicateLink(NodeId, NodeId),
    #[error("link {a}-{b}: latency_s must be finite and positive (got {latency})")]
    BadLatency { a: NodeId, b: NodeId, latency: f64 },
    #[error("link {a}-{b}: bandwidth_bps must be finite and positive (got {bandwidth})")]
    BadBandwidth { a: NodeId, b: NodeId, bandwidth: f64 },
    #[error("link {a}-{b}: an access link must join a device and a non-device")]
    AccessLinkShape { a: NodeId, b: NodeId },
    #[error("link {a}-{b}: a core link must not touch a device")]
    CoreLinkShape { a: NodeId, b: NodeId },
    #[error("device {device} attached to {edge}, which is not an edge node")]
    AttachTargetNotEdge { device: NodeId, edge: NodeId },
    #[error("attachment key {0} is not a device node")]
    AttachSourceNotDevice(NodeId),
    #[error("device {device} has no access link to its edge {edge}")]
    AttachWithoutLink { device: NodeId, edge: NodeId },
    #[error("device {0} is not attached to any edge")]
    UnattachedDevice(NodeId),
    #[error("expected exactly one datacenter node, found {0}")]
    DatacenterCount(usize),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("route_path requires distinct endpoints (got {0})")]
    SameEndpoints(NodeId),
    #[error("no route from {0} to {1}")]
    NoRoute(NodeId, NodeId),
}

/// Role of a node in the topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Device,
    Edge,
    Datacenter,
}

/// Billing class of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkClass {
    /// Device to edge.
    Access,
    /// Edge to edge or edge to datacenter.
    Core,
}

/// An undirected link between two nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub latency_s: f64,
    pub bandwidth_bps: f64,
    pub class: LinkClass,
}

/// One charged hop of a transfer: bytes moved from `from` to `to`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Charge {
    pub from: NodeId,
    pub to: NodeId,
    pub bytes: u64,
    pub class: LinkClass,
}

/// A validated topology with attachment and routing queries.
#[derive(Debug, Clone)]
pub struct Topology {
    nodes: BTreeMap<NodeId, NodeKind>,
    links: Vec<Link>,
    /// (low, high) node pair -> index into `links`.
    by_pair: BTreeMap<(NodeId, NodeId), usize>,
    /// node -> sorted neighbors.
    neighbors: BTreeMap<NodeId, BTreeSet<NodeId>>,
    /// device -> its edge.
    attachment: BTreeMap<NodeId, NodeId>,
    datacenter: NodeId,
}

fn pair_key(a: &NodeId, b: &NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

impl Topology {
    pub fn new(
        nodes: Vec<(NodeId, NodeKind)>,
        links: Vec<Link>,
        attachment: BTreeMap<NodeId, NodeId>,
    ) -> Result<Self, TopologyError> {
        let mut node_map = BTreeMap::new();
        for (id, kind) in nodes {
            if node_map.insert(id.clone(), kind).is_some() {
                return Err(TopologyError::DuplicateNode(id));
            }
        }

        let datacenters: Vec<NodeId> = node_map
            .iter()
            .filter(|(_, k)| **k == NodeKind::Datacenter)
            .map(|(id, _)| id.clone())
            .collect();
        if datacenters.len() != 1 {
            return Err(TopologyError::DatacenterCount(datacenters.len()));
        }

        let mut by_pair = BTreeMap::new();
        let mut neighbors: BTreeMap<NodeId, BTreeSet<NodeId>> =
            node_map.keys().map(|id| (id.clone(), BTreeSet::new())).collect();
        for (i, link) in links.iter().enumerate() {
            for end in [&link.a, &link.b] {
                if !node_map.contains_key(end) {
                    return Err(TopologyError::UnknownEndpoint(end.clone()));
                }
            }
            if link.a == link.b {
                return Err(TopologyError::SelfLink(link.a.clone()));
            }
            if !link.latency_s.is_finite() || link.latency_s <= 0.0 {
                return Err(TopologyError::BadLatency {
                    a: link.a.clone(),
                    b: link.b.clone(),
                    latency: link.latency_s,
                });
            }
            if !link.bandwidth_bps.is_finite() || link.bandwidth_bps <= 0.0 {
                return Err(TopologyError::BadBandwidth {
                    a: link.a.clone(),
                    b: link.b.clone(),
                    bandwidth: link.bandwidth_bps,
                });
            }
            let a_dev = node_map[&link.a] == NodeKind::Device;
            let b_dev = node_map[&link.b] == NodeKind::Device;
            match link.class {
                LinkClass::Access => {
                    if a_dev == b_dev {
                        return Err(TopologyError::AccessLinkShape {
                            a: link.a.clone(),
                            b: link.b.clone(),
                        });
                    }
                }
                LinkClass::Core => {
                    if a_dev || b_dev {
                        return Err(TopologyError::CoreLinkShape {
                            a: link.a.clone(),
                            b: link.b.clone(),
                        });
                    }
                }
            }
            if by_pair.insert(pair_key(&link.a, &link.b), i).is_some() {
                return Err(TopologyError::DuplicateLink(link.a.clone(), link.b.clone()));
            }
            neighbors.get_mut(&link.a).unwrap().insert(link.b.clone());
            neighbors.get_mut(&link.b).unwrap().insert(link.a.clone());
        }

        for (device, edge) in &attachment {
            match node_map.get(device) {
                Some(NodeKind::Device) => {}
                Some(_) => return Err(TopologyError::AttachSourceNotDevice(device.clone())),
                None => return Err(TopologyError::UnknownNode(device.clone())),
            }
            match node_map.get(edge) {
                Some(NodeKind::Edge) => {}
                _ => {
                    return Err(TopologyError::AttachTargetNotEdge {
                        device: device.clone(),
                        edge: edge.clone(),
                    })
                }
            }
            if !by_pair.contains_key(&pair_key(device, edge)) {
                return Err(TopologyError::AttachWithoutLink {
                    device: device.clone(),
                    edge: edge.clone(),
                });
            }
        }
        for (id, kind) in &node_map {
            if *kind == NodeKind::Device && !attachment.contains_key(id) {
                return Err(TopologyError::UnattachedDevice(id.clone()));
            }
        }

        Ok(Topology {
            nodes: node_map,
            links,
            by_pair,
            neighbors,
            attachment,
            datacenter: datacenters.into_iter().next().unwrap(),
        })
    }

    pub fn kind(&self, id: &NodeId) -> Result<NodeKind, TopologyError> {
        self.nodes.get(id).copied().ok_or_else(|| TopologyError::UnknownNode(id.clone()))
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeId, NodeKind)> {
        self.nodes.iter().map(|(id, k)| (id, *k))
    }

    pub fn datacenter(&self) -> &NodeId {
        &self.datacenter
    }

    /// The edge a device hangs off.
    pub fn edge_of(&self, device: &NodeId) -> Result<&NodeId, TopologyError> {
        self.attachment
            .get(device)
            .ok_or_else(|| TopologyError::UnattachedDevice(device.clone()))
    }

    pub fn link_between(&self, a: &NodeId, b: &NodeId) -> Option<&Link> {
        self.by_pair.get(&pair_key(a, b)).map(|i| &self.links[*i])
    }

    /// Minimum-latency path from `src` to `dst` as a list of links.
    ///
    /// Cost is the sum of link latencies (bandwidth does not influence the
    /// route). Ties break on fewer hops, then on the lexicographically
    /// smallest node sequence, so routes are unique and stable. Device nodes
    /// are endpoints only: a path never travels through a third device.
    pub fn route_path(&self, src: &NodeId, dst: &NodeId) -> Result<Vec<&Link>, TopologyError> {
        if src == dst {
            return Err(TopologyError::SameEndpoints(src.clone()));
        }
        for end in [src, dst] {
            if !self.nodes.contains_key(end) {
                return Err(TopologyError::UnknownNode(end.clone()));
            }
        }

        // Dijkstra over (cost, hops, node path); the heap key ordering bakes
        // in the tie-breaks.
        #[derive(PartialEq)]
        struct Candidate {
            cost: f64,
            hops: usize,
            path: Vec<NodeId>,
        }
        impl Eq for Candidate {}
        impl Ord for Candidate {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                self.cost
                    .total_cmp(&other.cost)
                    .then(self.hops.cmp(&other.hops))
                    .then(self.path.cmp(&other.path))
            }
        }
        impl PartialOrd for Candidate {
            fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }

        let mut settled: BTreeSet<NodeId> = BTreeSet::new();
        let mut heap: BinaryHeap<std::cmp::Reverse<Candidate>> = BinaryHeap::new();
        heap.push(std::cmp::Reverse(Candidate { cost: 0.0, hops: 0, path: vec![src.clone()] }));

        while let Some(std::cmp::Reverse(cand)) = heap.pop() {
            let here = cand.path.last().unwrap().clone();
            if settled.contains(&here) {
                continue;
            }
            settled.insert(here.clone());
            if here == *dst {
                let links = cand
                    .path
                    .windows(2)
                    .map(|w| self.link_between(&w[0], &w[1]).expect("path follows links"))
                    .collect();
                return Ok(links);
            }
            // Never route through a device: expand only from src or relays.
            if self.nodes[&here] == NodeKind::Device && here != *src {
                continue;
            }
            for next in &self.neighbors[&here] {
                if settled.contains(next) {
                    continue;
                }
                // A device can only terminate the path.
                if self.nodes[next] == NodeKind::Device && next != dst {
                    continue;
                }
                let link = self.link_between(&here, next).unwrap();
                let mut path = cand.path.clone();
                path.push(next.clone());
                heap.push(std::cmp::Reverse(Candidate {
                    cost: cand.cost + link.latency_s,
                    hops: cand.hops + 1,
                    path,
                }));
            }
        }
        Err(TopologyError::NoRoute(src.clone(), dst.clone()))
    }

    /// Sum of link latencies along the routed path; 0 when src == dst.
    pub fn path_cost(&self, src: &NodeId, dst: &NodeId) -> Result<f64, TopologyError> {
        if src == dst {
            return Ok(0.0);
        }
        Ok(self.route_path(src, dst)?.iter().map(|l| l.latency_s).sum())
    }
}

/// Store-and-forward transfer of `bytes` along `path`: total latency is the
/// sum over links of `latency_s + 8 * bytes / bandwidth_bps`, and each link
/// is charged `bytes` in its class. Zero bytes is a control ping: it still
/// pays propagation latency but charges nothing.
pub fn transfer(path: &[&Link], bytes: u64, first_from: &NodeId) -> (f64, Vec<Charge>) {
    let mut total = 0.0;
    let mut charges = Vec::new();
    let mut from = first_from.clone();
    for link in path {
        total += link.latency_s;
        if bytes > 0 {
            total += 8.0 * bytes as f64 / link.bandwidth_bps;
        }
        let to = if link.a == from { link.b.clone() } else { link.a.clone() };
        if bytes > 0 {
            charges.push(Charge { from: from.clone(), to: to.clone(), bytes, class: link.class });
        }
        from = to;
    }
    (total, charges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(a: &str, b: &str, latency: f64, bw: f64, class: LinkClass) -> Link {
        Link { a: NodeId::from(a), b: NodeId::from(b), latency_s: latency, bandwidth_bps: bw, class }
    }

    /// Two edges and a datacenter in a triangle, one device per edge.
    fn triangle() -> Topology {
        Topology::new(
            vec![
                (NodeId::from("dc"), NodeKind::Datacenter),
                (NodeId::from("edge1"), NodeKind::Edge),
                (NodeId::from("edge2"), NodeKind::Edge),
                (NodeId::from("dev-a"), NodeKind::Device),
                (NodeId::from("dev-b"), NodeKind::Device),
            ],
            vec![
                link("dev-a", "edge1", 0.005, 1e8, LinkClass::Access),
                link("dev-b", "edge2", 0.005, 1e8, LinkClass::Access),
                link("edge1", "dc", 0.010, 1e10, LinkClass::Core),
                link("edge2", "dc", 0.010, 1e10, LinkClass::Core),
                link("edge1", "edge2", 0.015, 1e10, LinkClass::Core),
            ],
            BTreeMap::from([
                (NodeId::from("dev-a"), NodeId::from("edge1")),
                (NodeId::from("dev-b"), NodeId::from("edge2")),
            ]),
        )
        .unwrap()
    }

    #[test]
    fn shortest_path_minimizes_latency_not_hops() {
        let t = triangle();
        // edge1 -> edge2 direct (0.015) beats via dc (0.020).
        let p = t.route_path(&NodeId::from("edge1"), &NodeId::from("edge2")).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].latency_s, 0.015);

        // Device to device crosses its own edge, the peer edge, then down.
        let p = t.route_path(&NodeId::from("dev-a"), &NodeId::from("dev-b")).unwrap();
        let hops: Vec<(String, String)> =
            p.iter().map(|l| (l.a.to_string(), l.b.to_string())).collect();
        assert_eq!(p.len(), 3);
        assert_eq!(hops[0], ("dev-a".to_string(), "edge1".to_string()));
        assert_eq!(hops[2].0, "dev-b"); // stored undirected; endpoints match
    }

    #[test]
    fn ties_break_on_hops_then_lexicographic() {
        // Two equal-latency routes edge1 -> edge3: via edge2 or via dcx; the
        // lexicographically smaller relay (dcx < edge2) must win.
        let t = Topology::new(
            vec![
                (NodeId::from("dcx"), NodeKind::Datacenter),
                (NodeId::from("edge1"), NodeKind::Edge),
                (NodeId::from("edge2"), NodeKind::Edge),
                (NodeId::from("edge3"), NodeKind::Edge),
            ],
            vec![
                link("edge1", "edge2", 0.01, 1e9, LinkClass::Core),
                link("edge2", "edge3", 0.01, 1e9, LinkClass::Core),
                link("edge1", "dcx", 0.01, 1e9, LinkClass::Core),
                link("dcx", "edge3", 0.01, 1e9, LinkClass::Core),
            ],
            BTreeMap::new(),
        )
        .unwrap();
        let p = t.route_path(&NodeId::from("edge1"), &NodeId::from("edge3")).unwrap();
        assert_eq!(p.len(), 2);
        let via = if p[0].a == NodeId::from("edge1") { &p[0].b } else { &p[0].a };
        assert_eq!(via, &NodeId::from("dcx"));

        // Fewer hops beats equal latency: add a direct 0.02 link.
        let t2 = Topology::new(
            vec![
                (NodeId::from("dcx"), NodeKind::Datacenter),
                (NodeId::from("edge1"), NodeKind::Edge),
                (NodeId::from("edge3"), NodeKind::Edge),
                (NodeId::from("edge2"), NodeKind::Edge),
            ],
            vec![
                link("edge1", "edge2", 0.01, 1e9, LinkClass::Core),
                link("edge2", "edge3", 0.01, 1e9, LinkClass::Core),
                link("edge1", "edge3", 0.02, 1e9, LinkClass::Core),
                link("dcx", "edge1", 0.01, 1e9, LinkClass::Core),
            ],
            BTreeMap::new(),
        )
        .unwrap();
        let p = t2.route_path(&NodeId::from("edge1"), &NodeId::from("edge3")).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn devices_are_never_transited() {
        // Device in the middle would make a cheaper "path"; it must be ignored.
        let t = Topology::new(
            vec![
                (NodeId::from("dc"), NodeKind::Datacenter),
                (NodeId::from("edge1"), NodeKind::Edge),
                (NodeId::from("edge2"), NodeKind::Edge),
                (NodeId::from("dev-m"), NodeKind::Device),
            ],
            vec![
                link("dev-m", "edge1", 0.001, 1e9, LinkClass::Access),
                link("dev-m", "edge2", 0.001, 1e9, LinkClass::Access),
                link("edge1", "edge2", 0.1, 1e9, LinkClass::Core),
                link("edge1", "dc", 0.01, 1e9, LinkClass::Core),
            ],
            BTreeMap::from([(NodeId::from("dev-m"), NodeId::from("edge1"))]),
        )
        .unwrap();
        let p = t.route_path(&NodeId::from("edge1"), &NodeId::from("edge2")).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].latency_s, 0.1);
    }

    #[test]
    fn route_rejects_same_endpoints_unknown_nodes_and_partitions() {
        let t = triangle();
        assert!(matches!(
            t.route_path(&NodeId::from("dc"), &NodeId::from("dc")),
            Err(TopologyError::SameEndpoints(_))
        ));
        assert!(matches!(
            t.route_path(&NodeId::from("dc"), &NodeId::from("nope")),
            Err(TopologyError::UnknownNode(_))
        ));

        let part = Topology::new(
            vec![
                (NodeId::from("dc"), NodeKind::Datacenter),
                (NodeId::from("edge1"), NodeKind::Edge),
                (NodeId::from("edge2"), NodeKind::Edge),
            ],
            vec![link("edge1", "dc", 0.01, 1e9, LinkClass::Core)],
            BTreeMap::new(),
        )
        .unwrap();
        assert!(matches!(
            part.route_path(&NodeId::from("edge1"), &NodeId::from("edge2")),
            Err(TopologyError::NoRoute(_, _))
        ));
        assert_eq!(part.path_cost(&NodeId::from("dc"), &NodeId::from("dc")).unwrap(), 0.0);
    }

    #[test]
    fn transfer_sums_latency_and_serialization_per_link() {
        let t = triangle();
        let path = t.route_path(&NodeId::from("dev-a"), &NodeId::from("dc")).unwrap();
        // dev-a -> edge1 (0.005, 1e8) -> dc (0.010, 1e10), 1e6 bytes.
        let (lat, charges) = transfer(&path, 1_000_000, &NodeId::from("dev-a"));
        let expect = 0.005 + 8.0 * 1e6 / 1e8 + 0.010 + 8.0 * 1e6 / 1e10;
        assert!((lat - expect).abs() < 1e-12);
        assert_eq!(charges.len(), 2);
        assert_eq!(charges[0], Charge {
            from: NodeId::from("dev-a"),
            to: NodeId::from("edge1"),
            bytes: 1_000_000,
            class: LinkClass::Access,
        });
        assert_eq!(charges[1].class, LinkClass::Core);
        assert_eq!(charges[1].to, NodeId::from("dc"));
    }

    #[test]
    fn zero_byte_ping_pays_latency_only() {
        let t = triangle();
        let path = t.route_path(&NodeId::from("dev-a"), &NodeId::from("dc")).unwrap();
        let (lat, charges) = transfer(&path, 0, &NodeId::from("dev-a"));
        assert!((lat - 0.015).abs() < 1e-12);
        assert!(charges.is_empty());
    }

    #[test]
    fn construction_checks_shapes() {
        let nodes = vec![
            (NodeId::from("dc"), NodeKind::Datacenter),
            (NodeId::from("edge1"), NodeKind::Edge),
            (NodeId::from("dev-a"), NodeKind::Device),
        ];
        let attach = BTreeMap::from([(NodeId::from("dev-a"), NodeId::from("edge1"))]);
        let base_links = vec![
            link("dev-a", "edge1", 0.005, 1e8, LinkClass::Access),
            link("edge1", "dc", 0.01, 1e10, LinkClass::Core),
        ];
        assert!(Topology::new(nodes.clone(), base_links.clone(), attach.clone()).is_ok());

        // Core link touching a device.
        let mut bad = base_links.clone();
        bad.push(link("dev-a", "dc", 0.01, 1e9, LinkClass::Core));
        assert!(matches!(
            Topology::new(nodes.clone(), bad, attach.clone()),
            Err(TopologyError::CoreLinkShape { .. })
        ));

        // Second link over the same pair.
        let mut bad = base_links.clone();
        bad.push(link("edge1", "dc", 0.02, 1e9, LinkClass::Core));
        assert!(matches!(
            Topology::new(nodes.clone(), bad, attach.clone()),
            Err(TopologyError::DuplicateLink(_, _))
        ));

        // Access link between two infrastructure nodes.
        let bad = vec![
            link("dev-a", "edge1", 0.005, 1e8, LinkClass::Access),
            link("edge1", "dc", 0.01, 1e10, LinkClass::Access),
        ];
        assert!(matches!(
            Topology::new(nodes.clone(), bad, attach.clone()),
            Err(TopologyError::AccessLinkShape { .. })
        ));

        // Unattached device.
        assert!(matches!(
            Topology::new(nodes.clone(), base_links.clone(), BTreeMap::new()),
            Err(TopologyError::UnattachedDevice(_))
        ));

        // Attachment without a physical link.
        let no_link = vec![link("edge1", "dc", 0.01, 1e10, LinkClass::Core)];
        assert!(matches!(
            Topology::new(nodes.clone(), no_link, attach.clone()),
            Err(TopologyError::AttachWithoutLink { .. })
        ));

        // Zero and two datacenters.
        let no_dc = vec![(NodeId::from("edge1"), NodeKind::Edge)];
        assert!(matches!(
            Topology::new(no_dc, vec![], BTreeMap::new()),
            Err(TopologyError::DatacenterCount(0))
        ));
        let two_dc = vec![
            (NodeId::from("dc1"), NodeKind::Datacenter),
            (NodeId::from("dc2"), NodeKind::Datacenter),
        ];
        assert!(matches!(
            Topology::new(two_dc, vec![], BTreeMap::new()),
            Err(TopologyError::DatacenterCount(2))
        ));

        // Bad link numbers.
        let bad = vec![link("edge1", "dc", 0.0, 1e10, LinkClass::Core)];
        assert!(matches!(
            Topology::new(nodes.clone(), bad, BTreeMap::new()),
            Err(TopologyError::BadLatency { .. })
        ));
        let bad = vec![link("edge1", "dc", 0.01, 0.0, LinkClass::Core)];
        assert!(matches!(
            Topology::new(nodes, bad, BTreeMap::new()),
            Err(TopologyError::BadBandwidth { .. })
        ));
    }
}
