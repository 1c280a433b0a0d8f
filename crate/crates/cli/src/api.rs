//! Request and response bodies of the HTTP API, and their published schemas.

use std::collections::BTreeMap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use timeweave::engine::ParameterVector;
use timeweave::store::{DataEdge, InstanceStatus};
use timeweave::timeline::{DiversityConfig, PreferenceCriterion, StitchedSeries, Timeline};
use timeweave::{EnsembleGraph, InstanceId, RunStatus, SimulationInstance, TickWindow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum RunState {
    Running,
    Complete,
    Incomplete,
}

impl From<RunStatus> for RunState {
    fn from(s: RunStatus) -> Self {
        match s {
            RunStatus::Running => Self::Running,
            RunStatus::Complete | RunStatus::CompleteTrivial => Self::Complete,
            RunStatus::Incomplete => Self::Incomplete,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RunSummary {
    pub run_id: String,
    pub flow_name: String,
    pub horizon: u64,
    pub node_count: usize,
    pub edge_count: usize,
    pub status: RunState,
    /// Unix seconds; absent when the run has no metadata file.
    pub created_at: Option<u64>,
}

impl RunSummary {
    pub fn of(graph: &EnsembleGraph, created_at: Option<u64>) -> Self {
        Self {
            run_id: graph.run_id().to_owned(),
            flow_name: graph.flow().name.clone(),
            horizon: graph.horizon(),
            node_count: graph.len(),
            edge_count: graph.edges().len(),
            status: RunState::from(graph.status()),
            created_at,
        }
    }
}

/// One instance as the graph views show it; outputs are left out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct NodeView {
    pub id: InstanceId,
    pub label: String,
    pub model_id: String,
    pub step: u64,
    pub window: TickWindow,
    pub status: InstanceStatus,
    pub params: ParameterVector,
    pub parents: Vec<InstanceId>,
    pub state_parent: Option<InstanceId>,
    pub error: Option<String>,
}

impl NodeView {
    pub fn of(graph: &EnsembleGraph, i: usize) -> Self {
        let n: &SimulationInstance = graph.node_at(i);
        let rank = n.id.as_str().rsplit('.').next().unwrap_or("");
        Self {
            id: n.id.clone(),
            label: format!("{} s{} #{rank}", n.model_id, n.step),
            model_id: n.model_id.clone(),
            step: n.step,
            window: n.window,
            status: n.status,
            params: n.params.clone(),
            parents: graph.parents_of(i).iter().map(|&p| graph.node_at(p).id.clone()).collect(),
            state_parent: n.state_parent.clone(),
            error: n.error.clone(),
        }
    }
}

/// One page of a (possibly filtered) run graph, in commit order. `edges`
/// are the data edges into the page's nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GraphPage {
    pub run_id: String,
    /// Matching nodes over all pages.
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub nodes: Vec<NodeView>,
    pub edges: Vec<DataEdge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TimelineRequest {
    /// Optional; must match the run in the path when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub criterion: PreferenceCriterion,
    pub diversity: DiversityConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TimelineSummary {
    pub id: String,
    pub score: f64,
    pub coverage: f64,
    pub node_count: usize,
}

impl From<&Timeline> for TimelineSummary {
    fn from(t: &Timeline) -> Self {
        Self { id: t.id.clone(), score: t.score, coverage: t.coverage, node_count: t.node_ids.len() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ExtractionResult {
    pub run_id: String,
    pub request_hash: String,
    /// Best first.
    pub timelines: Vec<TimelineSummary>,
}

/// Returned with 202 while an extraction is still running; repeat the same
/// request to collect the result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ExtractionPending {
    pub run_id: String,
    pub request_hash: String,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TimelineDetail {
    pub run_id: String,
    pub timeline_id: String,
    pub node_ids: Vec<InstanceId>,
    pub score: f64,
    pub coverage: f64,
    pub criterion: PreferenceCriterion,
    /// Every output variable of every model, stitched and downsampled.
    pub series: Vec<StitchedSeries>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ProvenanceView {
    pub run_id: String,
    pub instance_id: InstanceId,
    pub nodes: Vec<NodeView>,
    pub edges: Vec<DataEdge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ExportResult {
    pub run_id: String,
    pub timeline_id: String,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

/// JSON Schema of every API body, keyed by type name.
pub fn schemas() -> BTreeMap<&'static str, serde_json::Value> {
    fn one<T: JsonSchema>() -> serde_json::Value {
        serde_json::to_value(schemars::schema_for!(T)).expect("schemas serialize")
    }
    BTreeMap::from([
        ("RunSummaryList", one::<Vec<RunSummary>>()),
        ("RunSummary", one::<RunSummary>()),
        ("GraphPage", one::<GraphPage>()),
        ("TimelineRequest", one::<TimelineRequest>()),
        ("ExtractionResult", one::<ExtractionResult>()),
        ("ExtractionPending", one::<ExtractionPending>()),
        ("TimelineDetail", one::<TimelineDetail>()),
        ("ProvenanceView", one::<ProvenanceView>()),
        ("ExportResult", one::<ExportResult>()),
        ("ErrorBody", one::<ErrorBody>()),
    ])
}

/// Averages runs of consecutive buckets so at most `max_points` remain.
/// Each component averages the defined values of its run; a run with none
/// stays a gap.
pub fn downsample(series: &StitchedSeries, max_points: usize) -> StitchedSeries {
    let buckets = series.buckets();
    let max_points = max_points.max(1);
    if buckets <= max_points {
        return series.clone();
    }
    let factor = buckets.div_ceil(max_points);
    let width = series.width;
    let mut values = Vec::with_capacity(buckets.div_ceil(factor) * width);
    for chunk in (0..buckets).collect::<Vec<_>>().chunks(factor) {
        for c in 0..width {
            let defined: Vec<f64> = chunk.iter().filter_map(|&b| series.values[b * width + c]).collect();
            values.push((!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64));
        }
    }
    let resolution = series.resolution * factor as u64;
    let hi = series.window.lo + (values.len() / width.max(1)) as i64 * resolution as i64;
    StitchedSeries { window: TickWindow::new(series.window.lo, hi), resolution, values, ..series.clone() }
}
