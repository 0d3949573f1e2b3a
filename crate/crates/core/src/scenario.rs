//! TOML scenario files: nodes, relations, links, flows, MAC parameters and run settings.
//!
//! ```toml
//! [[nodes]]
//! id = 1
//! x = 0.0
//! y = 0.0
//!
//! [relations]
//! senses = [[1, 2]]
//! interferes = []
//! # or, for nodes with positions:
//! # sense_range = 250.0
//! # interfere_range = 550.0
//!
//! [[links]]
//! tx = 1
//! rx = 2
//! data_rate_bps = 11000000.0
//! packet_size_bytes = 1024
//!
//! [[flows]]
//! id = "a"
//! path = [1, 2]
//! weight = 1.0
//!
//! [mac]
//! retransmit_limit = 7
//!
//! [policy]
//! kind = "dcf_basic"
//!
//! [run]
//! quota = 200
//! iterations = 30
//! seeds = [1]
//! ```
//!
//! Links used by flow paths need not be listed; they get the default rate and size.
//! An explicit relation list takes precedence over the range-derived relation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::macsim::{AccessPolicy, MacConfig};
use crate::topo::{
    builtin_topology, relations_from_ranges, BuiltinTopology, FlowSpec, Link, Node, NodeId,
    Relation, Topology, DEFAULT_DATA_RATE_BPS, DEFAULT_PACKET_SIZE_BYTES,
};

pub const DEFAULT_QUOTA: u64 = 200;
pub const DEFAULT_ITERATIONS: usize = 30;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Packets per link per iteration.
    pub quota: u64,
    pub iterations: usize,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            quota: DEFAULT_QUOTA,
            iterations: DEFAULT_ITERATIONS,
            seeds: vec![1],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub topology: Topology,
    pub mac: MacConfig,
    pub policy: AccessPolicy,
    pub run: RunConfig,
}

impl Scenario {
    pub fn new(topology: Topology) -> Self {
        Self {
            topology,
            mac: MacConfig::default(),
            policy: AccessPolicy::default(),
            run: RunConfig::default(),
        }
    }

    pub fn builtin(which: BuiltinTopology) -> Self {
        Self::new(builtin_topology(which))
    }

    /// Reads a scenario file, or builds a builtin topology when `spec` names one.
    pub fn open(spec: &str) -> Result<Self> {
        if let Ok(which) = spec.parse::<BuiltinTopology>() {
            if !Path::new(spec).exists() {
                return Ok(Self::builtin(which));
            }
        }
        let text = std::fs::read_to_string(spec)?;
        load_scenario(&text)
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    nodes: Vec<NodeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relations: Option<RelationsDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    links: Vec<LinkDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    flows: Vec<FlowDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mac: Option<MacConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<AccessPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run: Option<RunConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    senses: Option<Vec<[NodeId; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    interferes: Option<Vec<[NodeId; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sense_range: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    interfere_range: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    tx: NodeId,
    rx: NodeId,
    #[serde(default = "default_rate")]
    data_rate_bps: f64,
    #[serde(default = "default_size")]
    packet_size_bytes: u32,
}

fn default_rate() -> f64 {
    DEFAULT_DATA_RATE_BPS
}

fn default_size() -> u32 {
    DEFAULT_PACKET_SIZE_BYTES
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowDoc {
    id: String,
    path: Vec<NodeId>,
    #[serde(default = "default_weight")]
    weight: f64,
}

fn parse_doc(text: &str) -> Result<ScenarioDoc> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

fn topology_from_doc(doc: &ScenarioDoc) -> Result<Topology> {
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for (i, n) in doc.nodes.iter().enumerate() {
        let pos = match (n.x, n.y) {
            (Some(x), Some(y)) => Some((x, y)),
            (None, None) => None,
            _ => {
                return Err(Error::Parse(format!(
                    "nodes[{i}] (id {}): give both x and y or neither",
                    n.id
                )))
            }
        };
        nodes.push(Node { id: n.id, pos });
    }

    let rel = doc.relations.as_ref();
    let explicit = |pairs: Option<&Vec<[NodeId; 2]>>| {
        pairs.map(|p| Relation::from_pairs(p.iter().map(|&[a, b]| (a, b))))
    };
    let mut senses = explicit(rel.and_then(|r| r.senses.as_ref()));
    let mut interferes = explicit(rel.and_then(|r| r.interferes.as_ref()));
    if senses.is_none() || interferes.is_none() {
        if let Some(sense_range) = rel.and_then(|r| r.sense_range) {
            if let Some(n) = doc.nodes.iter().find(|n| n.x.is_none()) {
                return Err(Error::Parse(format!(
                    "relations.sense_range: node {} has no position to measure from",
                    n.id
                )));
            }
            let interfere_range = rel.and_then(|r| r.interfere_range).unwrap_or(sense_range);
            let (s, i) = relations_from_ranges(&nodes, sense_range, interfere_range);
            senses.get_or_insert(s);
            interferes.get_or_insert(i);
        } else if rel.and_then(|r| r.interfere_range).is_some() {
            return Err(Error::Parse(
                "relations.interfere_range requires sense_range".into(),
            ));
        }
    }

    let links = doc
        .links
        .iter()
        .map(|l| Link {
            tx: l.tx,
            rx: l.rx,
            data_rate_bps: l.data_rate_bps,
            packet_size_bytes: l.packet_size_bytes,
        })
        .collect();
    let flows = doc
        .flows
        .iter()
        .map(|f| FlowSpec {
            id: f.id.clone(),
            path: f.path.clone(),
            weight: f.weight,
        })
        .collect();
    Topology::with_flow_links(
        nodes,
        links,
        flows,
        senses.unwrap_or_default(),
        interferes.unwrap_or_default(),
    )
    .map_err(|e| Error::Parse(e.to_string()))
}

fn doc_from_topology(topo: &Topology) -> ScenarioDoc {
    let pairs = |r: &Relation| r.pairs().map(|(a, b)| [a, b]).collect();
    ScenarioDoc {
        nodes: topo
            .nodes
            .iter()
            .map(|n| NodeDoc {
                id: n.id,
                x: n.pos.map(|p| p.0),
                y: n.pos.map(|p| p.1),
            })
            .collect(),
        relations: Some(RelationsDoc {
            senses: Some(pairs(&topo.senses)),
            interferes: Some(pairs(&topo.interferes)),
            ..Default::default()
        }),
        links: topo
            .links
            .iter()
            .map(|l| LinkDoc {
                tx: l.tx,
                rx: l.rx,
                data_rate_bps: l.data_rate_bps,
                packet_size_bytes: l.packet_size_bytes,
            })
            .collect(),
        flows: topo
            .flows
            .iter()
            .map(|f| FlowDoc {
                id: f.id.clone(),
                path: topo.flow_nodes(f),
                weight: f.weight,
            })
            .collect(),
        ..Default::default()
    }
}

fn to_text(doc: &ScenarioDoc) -> String {
    toml::to_string(doc).expect("scenario documents always serialize")
}

/// Parses the topology sections of a scenario; other sections are checked but ignored.
pub fn load_topology(text: &str) -> Result<Topology> {
    topology_from_doc(&parse_doc(text)?)
}

/// Canonical text of a topology: every link listed, relations explicit.
pub fn save_topology(topo: &Topology) -> String {
    to_text(&doc_from_topology(topo))
}

pub fn load_scenario(text: &str) -> Result<Scenario> {
    let doc = parse_doc(text)?;
    let topology = topology_from_doc(&doc)?;
    let mac = doc.mac.unwrap_or_default();
    mac.validate()
        .map_err(|e| Error::Parse(format!("mac: {e}")))?;
    let policy = doc.policy.unwrap_or_default();
    policy
        .validate()
        .map_err(|e| Error::Parse(format!("policy: {e}")))?;
    let run = doc.run.unwrap_or_default();
    if run.quota == 0 || run.iterations == 0 || run.seeds.is_empty() {
        return Err(Error::Parse(
            "run: quota and iterations must be at least 1 and seeds nonempty".into(),
        ));
    }
    Ok(Scenario {
        topology,
        mac,
        policy,
        run,
    })
}

pub fn save_scenario(s: &Scenario) -> String {
    let mut doc = doc_from_topology(&s.topology);
    doc.mac = Some(s.mac.clone());
    doc.policy = Some(s.policy.clone());
    doc.run = Some(s.run.clone());
    to_text(&doc)
}
