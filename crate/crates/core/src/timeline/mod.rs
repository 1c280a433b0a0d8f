//! Timelines: maximal, consistent, causally closed node sets of an ensemble
//! graph.
//!
//! A set is *consistent* when no two of its instances of one model cover the
//! same tick, *causally closed* when it holds every data and state parent of
//! its members, and *maximal* when no ok instance could be added together
//! with its provenance without breaking consistency. Only `ok` instances are
//! candidates; failed instances and dropped-group markers never appear in
//! extracted timelines.

mod enumerate;
mod export;
mod extract;
mod score;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::store::{EnsembleGraph, InstanceId};

pub use enumerate::{enumerate_timelines, enumerate_with_limit, DEFAULT_ORACLE_LIMIT, MAX_ORACLE_LIMIT};
pub use export::{read_export, write_export, TimelineExport, EXPORT_FORMAT, EXPORT_VERSION};
pub use extract::{extract_top_k, jaccard, mmr_select, DEFAULT_BEAM_WIDTH};
pub use score::{
    coverage, score_timeline, timeline_series, Direction, PreferenceCriterion, PreferenceTerm, StitchedSeries,
};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TimelineError {
    #[error("unknown instance `{0}`")]
    UnknownInstance(InstanceId),
    #[error("node set is not consistent and causally closed")]
    InconsistentInput,
    #[error("graph has {nodes} nodes, above the enumeration limit {limit}")]
    TooLarge { nodes: usize, limit: usize },
    #[error("unknown variable `{model}.{variable}`")]
    UnknownVariable { model: String, variable: String },
    #[error("invalid criterion: {0}")]
    InvalidCriterion(String),
    #[error("invalid diversity settings: {0}")]
    InvalidDiversity(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("bad export file: {0}")]
    BadExport(String),
}

/// Extraction settings: how many timelines, and how strongly to penalize
/// overlap (Jaccard over node ids) between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct DiversityConfig {
    pub k: usize,
    pub lambda: f64,
    #[serde(default = "default_beam")]
    pub beam_width: usize,
    /// Graphs with at most this many nodes use exact enumeration.
    #[serde(default = "default_oracle")]
    pub oracle_limit: usize,
}

fn default_beam() -> usize {
    DEFAULT_BEAM_WIDTH
}

fn default_oracle() -> usize {
    DEFAULT_ORACLE_LIMIT
}

impl DiversityConfig {
    pub fn new(k: usize, lambda: f64) -> Self {
        Self { k, lambda, beam_width: DEFAULT_BEAM_WIDTH, oracle_limit: DEFAULT_ORACLE_LIMIT }
    }

    /// Field name and message for every invalid setting.
    pub fn problems(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if self.k == 0 {
            out.push(("k".into(), "must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            out.push(("lambda".into(), "must lie in [0, 1]".into()));
        }
        if self.beam_width == 0 {
            out.push(("beam_width".into(), "must be at least 1".into()));
        }
        if self.oracle_limit > MAX_ORACLE_LIMIT {
            out.push(("oracle_limit".into(), format!("must be at most {MAX_ORACLE_LIMIT}")));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct Timeline {
    pub id: String,
    pub run_id: String,
    /// Sorted.
    pub node_ids: Vec<InstanceId>,
    pub score: f64,
    pub coverage: f64,
}

/// Content-derived timeline id: the same node set of the same run always
/// gets the same id.
pub fn timeline_id(run_id: &str, node_ids: &[InstanceId]) -> String {
    let mut h = Sha256::new();
    h.update(run_id.as_bytes());
    for id in node_ids {
        h.update([0]);
        h.update(id.as_str().as_bytes());
    }
    hex::encode(h.finalize())[..16].to_owned()
}

/// Per-graph structures shared by the predicates and the extractors.
pub(crate) struct Index<'g> {
    pub graph: &'g EnsembleGraph,
    /// `ok` nodes in commit order.
    pub eligible: Vec<usize>,
    /// Same-model nodes whose windows overlap this one.
    pub conflicts: Vec<FixedBitSet>,
    /// Ancestors including the node itself.
    pub prov: Vec<FixedBitSet>,
    /// Union of `conflicts` over `prov`.
    pub prov_conf: Vec<FixedBitSet>,
    /// The node is ok and its provenance is consistent.
    pub prov_ok: Vec<bool>,
}

impl<'g> Index<'g> {
    pub fn new(graph: &'g EnsembleGraph) -> Self {
        let n = graph.len();
        let nodes = graph.nodes();
        let mut conflicts = vec![FixedBitSet::with_capacity(n); n];
        let mut by_model: std::collections::HashMap<&str, Vec<usize>> = std::collections::HashMap::new();
        for (i, node) in nodes.iter().enumerate() {
            by_model.entry(node.model_id.as_str()).or_default().push(i);
        }
        for members in by_model.values() {
            for (a, &u) in members.iter().enumerate() {
                for &v in &members[a + 1..] {
                    if nodes[u].window.intersects(&nodes[v].window) {
                        conflicts[u].insert(v);
                        conflicts[v].insert(u);
                    }
                }
            }
        }
        let mut prov = Vec::with_capacity(n);
        let mut prov_conf = Vec::with_capacity(n);
        let mut prov_ok = Vec::with_capacity(n);
        for v in 0..n {
            let mut p = FixedBitSet::with_capacity(n);
            p.insert(v);
            let mut pc = conflicts[v].clone();
            let mut ok = nodes[v].is_ok();
            for &q in graph.parents_of(v) {
                p.union_with(&prov[q]);
                pc.union_with(&prov_conf[q]);
                ok &= prov_ok[q];
            }
            ok &= p.is_disjoint(&pc);
            prov.push(p);
            prov_conf.push(pc);
            prov_ok.push(ok);
        }
        let eligible = (0..n).filter(|&i| nodes[i].is_ok()).collect();
        Self { graph, eligible, conflicts, prov, prov_conf, prov_ok }
    }

    pub fn empty_set(&self) -> FixedBitSet {
        FixedBitSet::with_capacity(self.graph.len())
    }

    pub fn set_of(&self, ids: &[InstanceId]) -> Result<FixedBitSet, TimelineError> {
        let mut s = self.empty_set();
        for id in ids {
            let i = self.graph.index_of(id).ok_or_else(|| TimelineError::UnknownInstance(id.clone()))?;
            s.insert(i);
        }
        Ok(s)
    }

    pub fn ids_of(&self, set: &FixedBitSet) -> Vec<InstanceId> {
        let mut ids: Vec<InstanceId> = set.ones().map(|i| self.graph.node_at(i).id.clone()).collect();
        ids.sort();
        ids
    }

    pub fn consistent(&self, set: &FixedBitSet) -> bool {
        set.ones().all(|v| self.conflicts[v].is_disjoint(set))
    }

    pub fn closed(&self, set: &FixedBitSet) -> bool {
        set.ones().all(|v| self.graph.parents_of(v).iter().all(|&p| set.contains(p)))
    }

    pub fn addable(&self, v: usize, set: &FixedBitSet) -> bool {
        !set.contains(v) && self.prov_ok[v] && self.prov_conf[v].is_disjoint(set)
    }

    pub fn maximal(&self, set: &FixedBitSet) -> bool {
        !self.eligible.iter().any(|&v| self.addable(v, set))
    }

    /// Adds addable nodes (with provenance) in commit order until none is
    /// left. Adding nodes never makes another node addable, so one pass is
    /// enough.
    pub fn complete(&self, set: &mut FixedBitSet) {
        for &v in &self.eligible {
            if self.addable(v, set) {
                set.union_with(&self.prov[v]);
            }
        }
    }
}

/// At most one instance per model covers any tick.
pub fn is_consistent(graph: &EnsembleGraph, ids: &[InstanceId]) -> Result<bool, TimelineError> {
    let index = Index::new(graph);
    Ok(index.consistent(&index.set_of(ids)?))
}

/// Every data and state parent of a member is a member.
pub fn is_causally_closed(graph: &EnsembleGraph, ids: &[InstanceId]) -> Result<bool, TimelineError> {
    let index = Index::new(graph);
    Ok(index.closed(&index.set_of(ids)?))
}

/// No ok instance outside the set can join together with its provenance
/// while keeping the set consistent.
pub fn is_maximal(graph: &EnsembleGraph, ids: &[InstanceId]) -> Result<bool, TimelineError> {
    let index = Index::new(graph);
    let set = index.set_of(ids)?;
    if !index.consistent(&set) || !index.closed(&set) {
        return Err(TimelineError::InconsistentInput);
    }
    Ok(index.maximal(&set))
}

/// All three timeline predicates at once.
pub fn is_timeline(graph: &EnsembleGraph, ids: &[InstanceId]) -> Result<bool, TimelineError> {
    let index = Index::new(graph);
    let set = index.set_of(ids)?;
    Ok(index.consistent(&set) && index.closed(&set) && index.maximal(&set))
}
