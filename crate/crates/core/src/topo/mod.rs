//! Network topology: nodes, directed links, routed flows and the two
//! node-level coupling relations (carrier sensing and reception corruption).
//!
//! A [`Topology`] is immutable once built. All per-link quantities elsewhere
//! in the crate are indexed by [`LinkId`], the position of the link in
//! [`Topology::links`].

mod builtin;
mod lir;
mod random;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use builtin::{builtin_topology, BuiltinTopology};
pub use lir::{classify_lir, LirMeasurement, DEFAULT_LIR_THRESHOLD};
pub use random::{random_topology, relations_from_ranges, RandomTopologyParams};

pub type NodeId = u32;

pub const DEFAULT_DATA_RATE_BPS: f64 = 11e6;
pub const DEFAULT_PACKET_SIZE_BYTES: u32 = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkId(pub usize);

impl LinkId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: NodeId,
    /// Position in meters, when the topology was laid out geometrically.
    pub pos: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub tx: NodeId,
    pub rx: NodeId,
    pub data_rate_bps: f64,
    pub packet_size_bytes: u32,
}

impl Link {
    pub fn new(tx: NodeId, rx: NodeId) -> Self {
        Self {
            tx,
            rx,
            data_rate_bps: DEFAULT_DATA_RATE_BPS,
            packet_size_bytes: DEFAULT_PACKET_SIZE_BYTES,
        }
    }

    /// Payload airtime in microseconds, the quantity averaged into `T̄`.
    pub fn payload_airtime_us(&self) -> f64 {
        f64::from(self.packet_size_bytes) * 8.0 / self.data_rate_bps * 1e6
    }
}

/// A flow as written by the user: an id, a node path and a weight.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    pub id: String,
    pub path: Vec<NodeId>,
    pub weight: f64,
}

impl FlowSpec {
    pub fn new(id: impl Into<String>, path: Vec<NodeId>) -> Self {
        Self {
            id: id.into(),
            path,
            weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    pub id: String,
    pub src: NodeId,
    pub dst: NodeId,
    /// Links of the routing path, in order.
    pub path: Vec<LinkId>,
    pub weight: f64,
}

impl Flow {
    pub fn uses(&self, link: LinkId) -> bool {
        self.path.contains(&link)
    }
}

/// A symmetric, irreflexive relation over nodes, stored as normalized pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Relation {
    pairs: BTreeSet<(NodeId, NodeId)>,
}

impl Relation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (NodeId, NodeId)>>(pairs: I) -> Self {
        let mut rel = Self::new();
        for (a, b) in pairs {
            rel.insert(a, b);
        }
        rel
    }

    pub fn insert(&mut self, a: NodeId, b: NodeId) {
        if a != b {
            self.pairs.insert((a.min(b), a.max(b)));
        }
    }

    pub fn contains(&self, a: NodeId, b: NodeId) -> bool {
        self.pairs.contains(&(a.min(b), a.max(b)))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub flows: Vec<Flow>,
    /// Who defers to whom.
    pub senses: Relation,
    /// Whose transmissions corrupt receptions at whom, beyond sensing.
    pub interferes: Relation,
}

impl Topology {
    /// Validates the parts and resolves flow node paths onto links.
    ///
    /// Links named by a flow path but missing from `links` are an error; use
    /// [`Topology::with_flow_links`] to have them created with default rate and size.
    pub fn new(
        nodes: Vec<Node>,
        links: Vec<Link>,
        flows: Vec<FlowSpec>,
        senses: Relation,
        interferes: Relation,
    ) -> Result<Self> {
        let node_ids: BTreeSet<NodeId> = nodes.iter().map(|n| n.id).collect();
        if node_ids.len() != nodes.len() {
            return Err(Error::InvalidTopology("duplicate node id".into()));
        }
        let mut seen = BTreeSet::new();
        for link in &links {
            if link.tx == link.rx {
                return Err(Error::InvalidLink {
                    tx: link.tx,
                    rx: link.rx,
                    reason: "transmitter and receiver are the same node".into(),
                });
            }
            for end in [link.tx, link.rx] {
                if !node_ids.contains(&end) {
                    return Err(Error::InvalidLink {
                        tx: link.tx,
                        rx: link.rx,
                        reason: format!("references undeclared node {end}"),
                    });
                }
            }
            if !(link.data_rate_bps > 0.0) || link.packet_size_bytes == 0 {
                return Err(Error::InvalidLink {
                    tx: link.tx,
                    rx: link.rx,
                    reason: "data rate and packet size must be positive".into(),
                });
            }
            if !seen.insert((link.tx, link.rx)) {
                return Err(Error::InvalidLink {
                    tx: link.tx,
                    rx: link.rx,
                    reason: "declared twice".into(),
                });
            }
        }
        for (rel, name) in [(&senses, "senses"), (&interferes, "interferes")] {
            for (a, b) in rel.pairs() {
                if !node_ids.contains(&a) || !node_ids.contains(&b) {
                    return Err(Error::InvalidTopology(format!(
                        "{name} pair ({a}, {b}) references an undeclared node"
                    )));
                }
            }
        }

        let mut topo = Self {
            nodes,
            links,
            flows: Vec::with_capacity(flows.len()),
            senses,
            interferes,
        };
        let mut flow_ids = BTreeSet::new();
        for spec in flows {
            if !flow_ids.insert(spec.id.clone()) {
                return Err(Error::InvalidFlow {
                    flow: spec.id,
                    reason: "duplicate flow id".into(),
                });
            }
            let flow = topo.resolve_flow(spec)?;
            topo.flows.push(flow);
        }
        Ok(topo)
    }

    /// Like [`Topology::new`], but links used by flow paths that are not
    /// declared are added with the default data rate and packet size.
    pub fn with_flow_links(
        nodes: Vec<Node>,
        mut links: Vec<Link>,
        flows: Vec<FlowSpec>,
        senses: Relation,
        interferes: Relation,
    ) -> Result<Self> {
        let mut declared: BTreeSet<(NodeId, NodeId)> = links.iter().map(|l| (l.tx, l.rx)).collect();
        for flow in &flows {
            for hop in flow.path.windows(2) {
                if declared.insert((hop[0], hop[1])) {
                    links.push(Link::new(hop[0], hop[1]));
                }
            }
        }
        Self::new(nodes, links, flows, senses, interferes)
    }

    fn resolve_flow(&self, spec: FlowSpec) -> Result<Flow> {
        let bad = |reason: String| Error::InvalidFlow {
            flow: spec.id.clone(),
            reason,
        };
        if spec.path.len() < 2 {
            return Err(bad("path needs at least two nodes".into()));
        }
        if !(spec.weight > 0.0) || !spec.weight.is_finite() {
            return Err(bad(format!("weight must be positive, got {}", spec.weight)));
        }
        let mut path = Vec::with_capacity(spec.path.len() - 1);
        for hop in spec.path.windows(2) {
            let link = self
                .link_between(hop[0], hop[1])
                .ok_or_else(|| bad(format!("no declared link {}->{}", hop[0], hop[1])))?;
            if path.contains(&link) {
                return Err(bad(format!("path revisits link {}->{}", hop[0], hop[1])));
            }
            path.push(link);
        }
        Ok(Flow {
            src: spec.path[0],
            dst: *spec.path.last().expect("path has at least two nodes"),
            id: spec.id,
            path,
            weight: spec.weight,
        })
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn link_ids(&self) -> impl Iterator<Item = LinkId> {
        (0..self.links.len()).map(LinkId)
    }

    pub fn link_between(&self, tx: NodeId, rx: NodeId) -> Option<LinkId> {
        self.links
            .iter()
            .position(|l| l.tx == tx && l.rx == rx)
            .map(LinkId)
    }

    pub fn link_name(&self, id: LinkId) -> String {
        let l = self.link(id);
        format!("{}->{}", l.tx, l.rx)
    }

    /// Resolves a `tx->rx` name such as `"3->4"`.
    pub fn find_link(&self, name: &str) -> Result<LinkId> {
        let bad =
            || Error::InvalidTopology(format!("`{name}` is not a link name of the form tx->rx"));
        let (tx, rx) = name.split_once("->").ok_or_else(bad)?;
        let tx: NodeId = tx.trim().parse().map_err(|_| bad())?;
        let rx: NodeId = rx.trim().parse().map_err(|_| bad())?;
        self.link_between(tx, rx)
            .ok_or_else(|| Error::InvalidTopology(format!("no link {tx}->{rx}")))
    }

    pub fn flow_index(&self, id: &str) -> Option<usize> {
        self.flows.iter().position(|f| f.id == id)
    }

    /// Node path of a flow, source first.
    pub fn flow_nodes(&self, flow: &Flow) -> Vec<NodeId> {
        let mut nodes = vec![flow.src];
        nodes.extend(flow.path.iter().map(|&l| self.link(l).rx));
        nodes
    }

    /// Number of flows routed over `link`: Σ_f I(f, link).
    pub fn flow_count(&self, link: LinkId) -> usize {
        self.flows.iter().filter(|f| f.uses(link)).count()
    }

    /// Links that carry at least one flow.
    pub fn active_links(&self) -> Vec<LinkId> {
        self.link_ids()
            .filter(|&l| self.flow_count(l) > 0)
            .collect()
    }

    /// True when `a` and `b` are the same node or coupled by either relation.
    pub fn coupled(&self, a: NodeId, b: NodeId) -> bool {
        a == b || self.senses.contains(a, b) || self.interferes.contains(a, b)
    }

    /// Per-link arrival rates implied by per-flow rates: λ_l = Σ_f r_f I(f, l).
    pub fn link_loads(&self, flow_rates: &[f64]) -> Vec<f64> {
        let mut loads = vec![0.0; self.links.len()];
        for (flow, &rate) in self.flows.iter().zip(flow_rates) {
            for &l in &flow.path {
                loads[l.0] += rate;
            }
        }
        loads
    }

    /// The neighborhood N of every link: link k->l is in N(i->j) iff one of
    /// {i, j} is coupled to one of {k, l}. Self-inclusive.
    pub fn neighborhood(&self) -> NeighborhoodMap {
        let sets = self
            .link_ids()
            .map(|i| {
                let a = self.link(i);
                self.link_ids()
                    .filter(|&k| {
                        let b = self.link(k);
                        [a.tx, a.rx]
                            .iter()
                            .any(|&x| self.coupled(x, b.tx) || self.coupled(x, b.rx))
                    })
                    .collect()
            })
            .collect();
        NeighborhoodMap { sets }
    }

    /// Sensing adjacency per node, including link endpoints (a receiver
    /// always hears its own transmitter).
    pub fn sensing_adjacency(&self) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
        let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> =
            self.nodes.iter().map(|n| (n.id, BTreeSet::new())).collect();
        let link_pairs = self.links.iter().map(|l| (l.tx, l.rx));
        for (a, b) in self.senses.pairs().chain(link_pairs) {
            adj.entry(a).or_default().insert(b);
            adj.entry(b).or_default().insert(a);
        }
        adj
    }

    /// Replace per-link packet size (bytes) for one link.
    pub fn set_packet_size(&mut self, link: LinkId, bytes: u32) {
        self.links[link.0].packet_size_bytes = bytes;
    }

    /// Replace per-flow weights, in flow order.
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.flows.len() {
            return Err(Error::Config(format!(
                "{} weights for {} flows",
                weights.len(),
                self.flows.len()
            )));
        }
        for (flow, &w) in self.flows.iter_mut().zip(weights) {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::NonPositiveWeight(w));
            }
            flow.weight = w;
        }
        Ok(())
    }

    /// A copy without the named flows.
    pub fn without_flows(&self, ids: &[&str]) -> Topology {
        let mut t = self.clone();
        t.flows.retain(|f| !ids.contains(&f.id.as_str()));
        t
    }
}

/// N_{i->j} for every link, as sorted link lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborhoodMap {
    sets: Vec<Vec<LinkId>>,
}

impl NeighborhoodMap {
    pub fn of(&self, link: LinkId) -> &[LinkId] {
        &self.sets[link.0]
    }

    pub fn contains(&self, link: LinkId, other: LinkId) -> bool {
        self.sets[link.0].binary_search(&other).is_ok()
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> Topology {
        Topology::with_flow_links(
            vec![Node { id: 1, pos: None }, Node { id: 2, pos: None }],
            vec![],
            vec![FlowSpec::new("a", vec![1, 2])],
            Relation::from_pairs([(1, 2)]),
            Relation::new(),
        )
        .unwrap()
    }

    #[test]
    fn links_resolve_by_name() {
        let t = builtin_topology(BuiltinTopology::ChainCross);
        let id = t.find_link("3->4").unwrap();
        assert_eq!(t.link_name(id), "3->4");
        assert_eq!(
            t.find_link(" 8 -> 9 ").unwrap(),
            t.link_between(8, 9).unwrap()
        );
        assert!(t.find_link("4->3").is_err());
        assert!(t.find_link("3-4").is_err());
    }

    #[test]
    fn isolated_link_neighborhood_is_itself() {
        let t = pair();
        let n = t.neighborhood();
        assert_eq!(n.of(LinkId(0)), &[LinkId(0)]);
    }

    #[test]
    fn link_to_undeclared_node_is_rejected() {
        let err = Topology::new(
            vec![Node { id: 1, pos: None }],
            vec![Link::new(1, 7)],
            vec![],
            Relation::new(),
            Relation::new(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("1->7"), "{err}");
    }

    #[test]
    fn self_loop_is_rejected() {
        let err = Topology::new(
            vec![Node { id: 1, pos: None }],
            vec![Link::new(1, 1)],
            vec![],
            Relation::new(),
            Relation::new(),
        );
        assert!(matches!(err, Err(Error::InvalidLink { .. })));
    }

    #[test]
    fn flow_over_missing_link_is_rejected() {
        let err = Topology::new(
            vec![Node { id: 1, pos: None }, Node { id: 2, pos: None }],
            vec![],
            vec![FlowSpec::new("f", vec![1, 2])],
            Relation::new(),
            Relation::new(),
        );
        assert!(matches!(err, Err(Error::InvalidFlow { .. })));
    }

    #[test]
    fn nonpositive_weight_is_rejected() {
        let mut spec = FlowSpec::new("f", vec![1, 2]);
        spec.weight = 0.0;
        let err = Topology::with_flow_links(
            vec![Node { id: 1, pos: None }, Node { id: 2, pos: None }],
            vec![],
            vec![spec],
            Relation::new(),
            Relation::new(),
        );
        assert!(matches!(err, Err(Error::InvalidFlow { .. })));
    }

    #[test]
    fn relation_is_symmetric() {
        let r = Relation::from_pairs([(3, 1), (2, 2)]);
        assert!(r.contains(1, 3) && r.contains(3, 1));
        assert!(!r.contains(2, 2));
        assert_eq!(r.len(), 1);
    }

    #[test]
    fn link_loads_sum_flow_rates() {
        let t = builtin_topology(BuiltinTopology::ChainCross);
        let loads = t.link_loads(&vec![10.0; t.flows.len()]);
        let first = t.link_between(1, 2).unwrap();
        assert_eq!(loads[first.0], 20.0);
    }
}
