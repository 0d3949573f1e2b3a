use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{FlowSpec, Node, NodeId, Relation, Topology};

/// Endpoint draws per flow before giving up on a disconnected layout.
pub const ROUTE_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct RandomTopologyParams {
    pub n_nodes: usize,
    pub n_flows: usize,
    pub side_length: f64,
    pub sense_range: f64,
    pub interfere_range: f64,
    pub seed: u64,
}

/// Uniform placement in a square, disk-range relations, min-hop routes over
/// the sensing graph. Node ids are 1-based.
pub fn random_topology(p: &RandomTopologyParams) -> Result<Topology> {
    if p.n_nodes < 2 {
        return Err(Error::InvalidTopology("need at least two nodes".into()));
    }
    if !(p.sense_range > 0.0 && p.interfere_range > 0.0 && p.side_length > 0.0) {
        return Err(Error::InvalidTopology(
            "ranges and side length must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let nodes: Vec<Node> = (1..=p.n_nodes as NodeId)
        .map(|id| Node {
            id,
            pos: Some((
                rng.random_range(0.0..=p.side_length),
                rng.random_range(0.0..=p.side_length),
            )),
        })
        .collect();
    let (senses, interferes) = relations_from_ranges(&nodes, p.sense_range, p.interfere_range);

    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = nodes.iter().map(|n| (n.id, Vec::new())).collect();
    for (a, b) in senses.pairs() {
        adj.get_mut(&a).unwrap().push(b);
        adj.get_mut(&b).unwrap().push(a);
    }
    for list in adj.values_mut() {
        list.sort_unstable();
    }

    let mut flows = Vec::with_capacity(p.n_flows);
    for f in 0..p.n_flows {
        let mut last = (0, 0);
        let mut path = None;
        for _ in 0..ROUTE_ATTEMPTS {
            let src = rng.random_range(1..=p.n_nodes as NodeId);
            let mut dst = rng.random_range(1..p.n_nodes as NodeId);
            if dst >= src {
                dst += 1;
            }
            last = (src, dst);
            if let Some(route) = min_hop_route(&adj, src, dst) {
                path = Some(route);
                break;
            }
        }
        let path = path.ok_or(Error::Disconnected {
            src: last.0,
            dst: last.1,
            attempts: ROUTE_ATTEMPTS,
        })?;
        flows.push(FlowSpec::new(format!("f{}", f + 1), path));
    }
    Topology::with_flow_links(nodes, vec![], flows, senses, interferes)
}

/// Disk relations: pairs within `sense_range` sense each other; pairs beyond
/// it but within `interfere_range` interfere.
pub fn relations_from_ranges(
    nodes: &[Node],
    sense_range: f64,
    interfere_range: f64,
) -> (Relation, Relation) {
    let mut senses = Relation::new();
    let mut interferes = Relation::new();
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            let (Some(pa), Some(pb)) = (a.pos, b.pos) else {
                continue;
            };
            let d = (pa.0 - pb.0).hypot(pa.1 - pb.1);
            if d <= sense_range {
                senses.insert(a.id, b.id);
            } else if d <= interfere_range {
                interferes.insert(a.id, b.id);
            }
        }
    }
    (senses, interferes)
}

// BFS visiting neighbors in id order, so ties resolve to the lowest ids.
fn min_hop_route(
    adj: &BTreeMap<NodeId, Vec<NodeId>>,
    src: NodeId,
    dst: NodeId,
) -> Option<Vec<NodeId>> {
    let mut prev: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut queue = VecDeque::from([src]);
    prev.insert(src, src);
    while let Some(u) = queue.pop_front() {
        if u == dst {
            let mut path = vec![dst];
            let mut cur = dst;
            while cur != src {
                cur = prev[&cur];
                path.push(cur);
            }
            path.reverse();
            return Some(path);
        }
        for &v in &adj[&u] {
            if let std::collections::btree_map::Entry::Vacant(e) = prev.entry(v) {
                e.insert(u);
                queue.push_back(v);
            }
        }
    }
    None
}
