use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::store::{EnsembleGraph, InstanceId};
use crate::timeline::score::stitch;
use crate::timeline::{PreferenceCriterion, StitchedSeries, Timeline, TimelineError};

pub const EXPORT_FORMAT: &str = "timeweave-timeline";
pub const EXPORT_VERSION: u32 = 1;

/// A saved timeline: its members, score and every output variable stitched
/// at full resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct TimelineExport {
    pub format: String,
    pub version: u32,
    pub run_id: String,
    pub timeline_id: String,
    pub criterion: PreferenceCriterion,
    pub node_ids: Vec<InstanceId>,
    pub score: f64,
    pub coverage: f64,
    pub series: Vec<StitchedSeries>,
}

impl TimelineExport {
    pub fn build(
        graph: &EnsembleGraph,
        timeline: &Timeline,
        criterion: &PreferenceCriterion,
    ) -> Result<Self, TimelineError> {
        let members = timeline
            .node_ids
            .iter()
            .map(|id| graph.index_of(id).ok_or_else(|| TimelineError::UnknownInstance(id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut series = Vec::new();
        for model in &graph.flow().nodes {
            for var in &model.outputs {
                series.push(stitch(graph, &members, &model.id, &var.name)?);
            }
        }
        Ok(Self {
            format: EXPORT_FORMAT.into(),
            version: EXPORT_VERSION,
            run_id: graph.run_id().to_owned(),
            timeline_id: timeline.id.clone(),
            criterion: criterion.clone(),
            node_ids: timeline.node_ids.clone(),
            score: timeline.score,
            coverage: timeline.coverage,
            series,
        })
    }
}

pub fn write_export(export: &TimelineExport, path: &Path) -> Result<(), TimelineError> {
    let mut text = serde_json::to_string_pretty(export).map_err(|e| TimelineError::Io(e.to_string()))?;
    text.push('\n');
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| TimelineError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| TimelineError::Io(format!("{}: {e}", path.display())))
}

pub fn read_export(path: &Path) -> Result<TimelineExport, TimelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| TimelineError::Io(format!("{}: {e}", path.display())))?;
    let export: TimelineExport = serde_json::from_str(&text).map_err(|e| TimelineError::BadExport(e.to_string()))?;
    if export.format != EXPORT_FORMAT || export.version != EXPORT_VERSION {
        return Err(TimelineError::BadExport(format!("unsupported format {} v{}", export.format, export.version)));
    }
    Ok(export)
}
