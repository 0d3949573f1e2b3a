use std::str::FromStr;

use crate::error::Error;

use super::{FlowSpec, Node, NodeId, Relation, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BuiltinTopology {
    /// Flow in the middle: three parallel two-hop flows, the middle one
    /// coupled to both outer ones, the outer ones independent.
    Fim,
    /// Seven-node chain carrying a long flow, two one-hop flows at its ends,
    /// and two crossing one-hop flows.
    ChainCross,
}

impl FromStr for BuiltinTopology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fim" => Ok(Self::Fim),
            "chain_cross" | "chain-cross" => Ok(Self::ChainCross),
            other => Err(Error::UnknownTopology(other.to_string())),
        }
    }
}

impl BuiltinTopology {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fim => "fim",
            Self::ChainCross => "chain_cross",
        }
    }
}

pub fn builtin_topology(which: BuiltinTopology) -> Topology {
    match which {
        BuiltinTopology::Fim => fim(),
        BuiltinTopology::ChainCross => chain_cross(),
    }
}

fn node(id: NodeId, x: f64, y: f64) -> Node {
    Node {
        id,
        pos: Some((x, y)),
    }
}

// Rows 1-2-3, 4-5-6, 7-8-9 stacked vertically. Each row senses itself and
// the row next to it in the same column; diagonal neighbors across rows are
// hidden from each other's transmitters but corrupt each other's receptions.
fn fim() -> Topology {
    let mut nodes = Vec::new();
    for row in 0..3u32 {
        for col in 0..3u32 {
            nodes.push(node(
                row * 3 + col + 1,
                f64::from(col) * 200.0,
                f64::from(row) * 250.0,
            ));
        }
    }
    let id = |row: u32, col: u32| row * 3 + col + 1;
    let mut senses = Relation::new();
    let mut interferes = Relation::new();
    for row in 0..3 {
        for a in 0..3 {
            for b in (a + 1)..3 {
                senses.insert(id(row, a), id(row, b));
            }
        }
    }
    for row in 0..2 {
        for col in 0..3i32 {
            senses.insert(id(row, col as u32), id(row + 1, col as u32));
            for diag in [col - 1, col + 1] {
                if (0..3).contains(&diag) {
                    interferes.insert(id(row, col as u32), id(row + 1, diag as u32));
                }
            }
        }
    }
    let flows = vec![
        FlowSpec::new("1->3", vec![1, 2, 3]),
        FlowSpec::new("4->6", vec![4, 5, 6]),
        FlowSpec::new("7->9", vec![7, 8, 9]),
    ];
    Topology::with_flow_links(nodes, vec![], flows, senses, interferes)
        .expect("builtin fim topology is valid")
}

// Chain 1..7 with sensing reach of two hops; 8->9 crosses at node 3 and
// 10->11 crosses at node 5.
fn chain_cross() -> Topology {
    let mut nodes: Vec<Node> = (1..=7)
        .map(|i| node(i, f64::from(i - 1) * 200.0, 0.0))
        .collect();
    nodes.extend([
        node(8, 400.0, 150.0),
        node(9, 400.0, -150.0),
        node(10, 800.0, 150.0),
        node(11, 800.0, -150.0),
    ]);
    let mut senses = Relation::new();
    for a in 1..=7u32 {
        for b in (a + 1)..=7 {
            if b - a <= 2 {
                senses.insert(a, b);
            }
        }
    }
    senses.insert(8, 9);
    senses.insert(10, 11);
    for cross in [8, 9] {
        for c in [2, 3, 4] {
            senses.insert(cross, c);
        }
    }
    for cross in [10, 11] {
        for c in [4, 5, 6] {
            senses.insert(cross, c);
        }
    }
    let flows = vec![
        FlowSpec::new("1->7", (1..=7).collect()),
        FlowSpec::new("1->2", vec![1, 2]),
        FlowSpec::new("6->7", vec![6, 7]),
        FlowSpec::new("8->9", vec![8, 9]),
        FlowSpec::new("10->11", vec![10, 11]),
    ];
    Topology::with_flow_links(nodes, vec![], flows, senses, Relation::new())
        .expect("builtin chain-cross topology is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fim_layout() {
        let t = builtin_topology(BuiltinTopology::Fim);
        assert_eq!(t.nodes.len(), 9);
        let ids: Vec<_> = t.flows.iter().map(|f| f.id.as_str()).collect();
        assert_eq!(ids, ["1->3", "4->6", "7->9"]);
        assert_eq!((t.flows[0].src, t.flows[0].dst), (1, 3));
        assert_eq!((t.flows[2].src, t.flows[2].dst), (7, 9));
    }

    #[test]
    fn fim_middle_neighborhood_covers_every_flow() {
        let t = builtin_topology(BuiltinTopology::Fim);
        let n = t.neighborhood();
        for mid in [t.link_between(4, 5).unwrap(), t.link_between(5, 6).unwrap()] {
            for l in t.link_ids() {
                assert!(
                    n.contains(mid, l),
                    "{} missing from N({})",
                    t.link_name(l),
                    t.link_name(mid)
                );
            }
        }
        // Outer flows are independent of each other.
        let top = t.link_between(2, 3).unwrap();
        let bottom = t.link_between(8, 9).unwrap();
        assert!(!n.contains(top, bottom));
    }

    #[test]
    fn fim_hidden_pair_matches_figure() {
        let t = builtin_topology(BuiltinTopology::Fim);
        // 2 cannot be heard by 4 but corrupts receptions at 5.
        assert!(!t.senses.contains(2, 4));
        assert!(t.coupled(2, 5));
        assert!(t.senses.contains(4, 5));
    }

    #[test]
    fn chain_cross_flows() {
        let t = builtin_topology(BuiltinTopology::ChainCross);
        assert!(t.flow_index("1->7").is_some());
        assert!(t.flow_index("1->2").is_some());
        assert_eq!(t.flows[t.flow_index("1->7").unwrap()].path.len(), 6);
    }

    #[test]
    fn chain_cross_far_links_do_not_interfere() {
        let t = builtin_topology(BuiltinTopology::ChainCross);
        let n = t.neighborhood();
        let a = t.link_between(2, 3).unwrap();
        let b = t.link_between(6, 7).unwrap();
        assert!(!n.contains(a, b));
        assert!(!n.contains(b, a));
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(
            "ring".parse::<BuiltinTopology>(),
            Err(Error::UnknownTopology(_))
        ));
        assert_eq!(
            "chain_cross".parse::<BuiltinTopology>().unwrap(),
            BuiltinTopology::ChainCross
        );
    }
}
