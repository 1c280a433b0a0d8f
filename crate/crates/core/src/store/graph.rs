use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::{ParameterVector, RunConfig};
use crate::store::StoreError;
use crate::window::TickWindow;
use crate::Series;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct InstanceId(pub String);

impl InstanceId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for InstanceId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum InstanceStatus {
    Ok,
    Failed,
    /// Placeholder for an input group the sampling manager dropped; it links
    /// to the parents the dropped child would have consumed.
    Dropped,
}

/// One node of the ensemble graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct SimulationInstance {
    pub id: InstanceId,
    pub model_id: String,
    pub step: u64,
    pub params: ParameterVector,
    pub window: TickWindow,
    /// SHA-256 of the aligned inputs, hex.
    pub inputs_digest: String,
    #[serde(default)]
    pub outputs: Vec<Series>,
    pub status: InstanceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_parent: Option<InstanceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SimulationInstance {
    pub fn output(&self, variable: &str) -> Option<&Series> {
        self.outputs.iter().find(|s| s.variable() == variable)
    }

    pub fn is_ok(&self) -> bool {
        self.status == InstanceStatus::Ok
    }
}

/// Data passed from one instance to another: which producer variable over
/// which producer ticks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct DataEdge {
    pub from: InstanceId,
    pub to: InstanceId,
    pub variable: String,
    pub window: TickWindow,
}

/// First record of every run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunHeader {
    pub format: String,
    pub version: u32,
    pub run_id: String,
    pub code_version: String,
    pub config: RunConfig,
}

pub const LOG_FORMAT: &str = "timeweave-run-log";
pub const LOG_VERSION: u32 = 1;

impl RunHeader {
    pub fn new(run_id: impl Into<String>, config: RunConfig) -> Self {
        Self {
            format: LOG_FORMAT.to_owned(),
            version: LOG_VERSION,
            run_id: run_id.into(),
            code_version: env!("CARGO_PKG_VERSION").to_owned(),
            config,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum RunStatus {
    Running,
    Complete,
    /// Nothing fit inside the horizon.
    CompleteTrivial,
    Incomplete,
}

/// Ancestors of one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct SubGraph {
    pub nodes: Vec<SimulationInstance>,
    pub edges: Vec<DataEdge>,
}

/// Append-only provenance graph of one run.
///
/// Nodes are kept in commit order, which is a topological order: an
/// instance can only be added after all of its parents.
#[derive(Clone, Debug)]
pub struct EnsembleGraph {
    header: RunHeader,
    status: RunStatus,
    load_issue: Option<String>,
    nodes: Vec<SimulationInstance>,
    edges: Vec<DataEdge>,
    index: HashMap<InstanceId, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    incoming: Vec<Vec<usize>>,
}

impl EnsembleGraph {
    pub fn new(header: RunHeader) -> Self {
        Self {
            header,
            status: RunStatus::Running,
            load_issue: None,
            nodes: Vec::new(),
            edges: Vec::new(),
            index: HashMap::new(),
            parents: Vec::new(),
            children: Vec::new(),
            incoming: Vec::new(),
        }
    }

    pub fn header(&self) -> &RunHeader {
        &self.header
    }

    pub fn run_id(&self) -> &str {
        &self.header.run_id
    }

    pub fn config(&self) -> &RunConfig {
        &self.header.config
    }

    pub fn flow(&self) -> &crate::model::FlowGraph {
        &self.header.config.flow
    }

    pub fn horizon(&self) -> u64 {
        self.header.config.horizon
    }

    pub fn status(&self) -> RunStatus {
        self.status
    }

    pub fn set_status(&mut self, status: RunStatus) {
        self.status = status;
    }

    /// Why a loaded log stopped early, if it did.
    pub fn load_issue(&self) -> Option<&str> {
        self.load_issue.as_deref()
    }

    pub(crate) fn mark_incomplete(&mut self, issue: String) {
        self.status = RunStatus::Incomplete;
        self.load_issue = Some(issue);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[SimulationInstance] {
        &self.nodes
    }

    pub fn edges(&self) -> &[DataEdge] {
        &self.edges
    }

    pub fn node(&self, id: &InstanceId) -> Option<&SimulationInstance> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn node_at(&self, i: usize) -> &SimulationInstance {
        &self.nodes[i]
    }

    pub fn index_of(&self, id: &InstanceId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Distinct data and state parents, ascending by commit index.
    pub fn parents_of(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children_of(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// Edges pointing into node `i`.
    pub fn incoming_edges(&self, i: usize) -> impl Iterator<Item = &DataEdge> {
        self.incoming[i].iter().map(|&e| &self.edges[e])
    }

    /// Checks that `node` could be appended with `parent_edges` without
    /// changing anything.
    pub fn check_append(&self, node: &SimulationInstance, parent_edges: &[DataEdge]) -> Result<(), StoreError> {
        if self.index.contains_key(&node.id) {
            return Err(StoreError::DuplicateId(node.id.clone()));
        }
        for edge in parent_edges {
            if edge.to != node.id {
                return Err(StoreError::EdgeMismatch { instance: node.id.clone(), edge_to: edge.to.clone() });
            }
        }
        let parents = parent_edges.iter().map(|e| &e.from).chain(node.state_parent.as_ref());
        for p in parents {
            if !self.index.contains_key(p) {
                return Err(StoreError::UnknownParent { instance: node.id.clone(), parent: p.clone() });
            }
        }
        Ok(())
    }

    /// Validates and commits one instance together with its incoming edges.
    pub fn insert(&mut self, node: SimulationInstance, parent_edges: Vec<DataEdge>) -> Result<usize, StoreError> {
        self.check_append(&node, &parent_edges)?;
        let parents: BTreeSet<usize> =
            parent_edges.iter().map(|e| &e.from).chain(node.state_parent.as_ref()).map(|p| self.index[p]).collect();
        let i = self.nodes.len();
        for &p in &parents {
            self.children[p].push(i);
        }
        self.index.insert(node.id.clone(), i);
        self.nodes.push(node);
        self.parents.push(parents.into_iter().collect());
        self.children.push(Vec::new());
        let first_edge = self.edges.len();
        self.incoming.push((first_edge..first_edge + parent_edges.len()).collect());
        self.edges.extend(parent_edges);
        Ok(i)
    }

    /// Commit indices of `i` and all its ancestors, ascending.
    pub fn provenance_indices(&self, i: usize) -> Vec<usize> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![i];
        seen[i] = true;
        while let Some(v) = stack.pop() {
            for &p in &self.parents[v] {
                if !seen[p] {
                    seen[p] = true;
                    stack.push(p);
                }
            }
        }
        seen.iter().enumerate().filter(|(_, s)| **s).map(|(i, _)| i).collect()
    }

    /// The ancestor closure of `id` over data and state edges, including
    /// `id` itself, with the edges among those nodes.
    pub fn provenance(&self, id: &InstanceId) -> Result<SubGraph, StoreError> {
        let i = self.index_of(id).ok_or_else(|| StoreError::UnknownInstance(id.clone()))?;
        let members = self.provenance_indices(i);
        let nodes = members.iter().map(|&m| self.nodes[m].clone()).collect();
        let edges = members.iter().flat_map(|&m| self.incoming_edges(m).cloned()).collect();
        Ok(SubGraph { nodes, edges })
    }

    /// Order-independent serialization: header, status, nodes sorted by id,
    /// edges sorted.
    pub fn canonical_string(&self) -> String {
        let mut nodes: Vec<&SimulationInstance> = self.nodes.iter().collect();
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let mut edges: Vec<&DataEdge> = self.edges.iter().collect();
        edges.sort();
        serde_json::to_string(&(&self.header, self.status, nodes, edges)).expect("graph serializes")
    }
}

impl PartialEq for EnsembleGraph {
    fn eq(&self, other: &Self) -> bool {
        self.canonical_string() == other.canonical_string()
    }
}
