use serde::{Deserialize, Serialize};

use crate::model::ModelSpec;
use crate::store::{EnsembleGraph, InstanceId};
use crate::timeline::TimelineError;
use crate::window::{Tick, TickWindow};

/// What a preference term wants from one variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum Direction {
    Maximize,
    Minimize,
    /// Per-tick target values starting at tick 0.
    Match(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct PreferenceTerm {
    pub model: String,
    pub variable: String,
    pub direction: Direction,
    pub weight: f64,
    /// Vector component to read; all components are averaged when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<usize>,
}

/// Weighted sum of per-variable terms, plus an optional reward for covering
/// more of the (tick, model) plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct PreferenceCriterion {
    pub terms: Vec<PreferenceTerm>,
    #[serde(default)]
    pub coverage_weight: f64,
}

impl PreferenceCriterion {
    pub fn maximize(model: &str, variable: &str) -> Self {
        Self {
            terms: vec![PreferenceTerm {
                model: model.into(),
                variable: variable.into(),
                direction: Direction::Maximize,
                weight: 1.0,
                component: None,
            }],
            coverage_weight: 0.0,
        }
    }

    /// Field path and message for every problem, checked against `graph`'s
    /// flow.
    pub fn problems(&self, graph: &EnsembleGraph) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if self.terms.is_empty() {
            out.push(("terms".into(), "at least one term is required".into()));
        }
        if !self.coverage_weight.is_finite() {
            out.push(("coverage_weight".into(), "must be finite".into()));
        }
        for (i, t) in self.terms.iter().enumerate() {
            if !t.weight.is_finite() {
                out.push((format!("terms[{i}].weight"), "must be finite".into()));
            }
            if let Direction::Match(target) = &t.direction {
                if target.iter().any(|v| !v.is_finite()) {
                    out.push((format!("terms[{i}].direction"), "match target must be finite".into()));
                }
            }
            match variable_width(graph, &t.model, &t.variable) {
                Err(_) => out.push((format!("terms[{i}]"), format!("unknown variable `{}.{}`", t.model, t.variable))),
                Ok(width) => {
                    if t.component.is_some_and(|c| c >= width) {
                        out.push((format!("terms[{i}].component"), format!("variable has {width} components")));
                    }
                }
            }
        }
        out
    }
}

fn model_of<'a>(graph: &'a EnsembleGraph, model: &str, variable: &str) -> Result<&'a ModelSpec, TimelineError> {
    let unknown = || TimelineError::UnknownVariable { model: model.into(), variable: variable.into() };
    let spec = graph.flow().node(model).ok_or_else(unknown)?;
    spec.output(variable).ok_or_else(unknown)?;
    Ok(spec)
}

fn variable_width(graph: &EnsembleGraph, model: &str, variable: &str) -> Result<usize, TimelineError> {
    Ok(model_of(graph, model, variable)?.output(variable).expect("checked").kind.width())
}

/// One variable stitched across a timeline. Buckets no member covers are
/// `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct StitchedSeries {
    pub model: String,
    pub variable: String,
    pub window: TickWindow,
    pub resolution: u64,
    pub width: usize,
    /// `width` entries per bucket.
    pub values: Vec<Option<f64>>,
}

impl StitchedSeries {
    pub fn buckets(&self) -> usize {
        self.values.len() / self.width.max(1)
    }

    /// The bucket as a scalar: the chosen component, or the mean of all.
    pub fn scalar_at(&self, bucket: usize, component: Option<usize>) -> Option<f64> {
        let sample = &self.values[bucket * self.width..(bucket + 1) * self.width];
        match component {
            Some(c) => sample[c],
            None => {
                let mut sum = 0.0;
                for v in sample {
                    sum += (*v)?;
                }
                Some(sum / self.width as f64)
            }
        }
    }
}

/// Stitches `variable` of `model` over `[0, horizon)` from the members of
/// `nodes`; where members overlap, the later step wins.
///
/// The result uses the model's output resolution when every step starts on
/// that grid, else one bucket per tick.
pub fn timeline_series(
    graph: &EnsembleGraph,
    nodes: &[InstanceId],
    model: &str,
    variable: &str,
) -> Result<StitchedSeries, TimelineError> {
    let indices = nodes
        .iter()
        .map(|id| graph.index_of(id).ok_or_else(|| TimelineError::UnknownInstance(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    stitch(graph, &indices, model, variable)
}

pub(crate) fn stitch(
    graph: &EnsembleGraph,
    nodes: &[usize],
    model: &str,
    variable: &str,
) -> Result<StitchedSeries, TimelineError> {
    let spec = model_of(graph, model, variable)?;
    let width = spec.output(variable).expect("checked").kind.width();
    let res_out = spec.output_scope.resolution.max(1);
    let resolution = if spec.shift % res_out == 0 { res_out } else { 1 };
    let horizon = graph.horizon() as Tick;
    let buckets = (horizon as u64).div_ceil(resolution) as usize;
    let window = TickWindow::new(0, buckets as Tick * resolution as Tick);
    let mut values = vec![None; buckets * width];

    let mut members: Vec<usize> = nodes.iter().copied().filter(|&i| graph.node_at(i).model_id == model).collect();
    members.sort_by_key(|&i| (graph.node_at(i).step, i));
    for i in members {
        let node = graph.node_at(i);
        let Some(series) = node.output(variable) else { continue };
        let Some(span) = series.window().intersection(&window) else { continue };
        let first = span.lo.div_euclid(resolution as Tick) as usize;
        let last = (span.hi - 1).div_euclid(resolution as Tick) as usize;
        for b in first..=last {
            let t = (b as Tick * resolution as Tick).max(span.lo);
            let Some(sample) = series.sample_index_at(t) else { continue };
            for (c, v) in series.sample(sample).iter().enumerate() {
                values[b * width + c] = Some(*v);
            }
        }
    }
    Ok(StitchedSeries { model: model.into(), variable: variable.into(), window, resolution, width, values })
}

/// Share of (tick, model) pairs in `[0, horizon) × models` covered by the
/// members.
pub fn coverage(graph: &EnsembleGraph, nodes: &[InstanceId]) -> Result<f64, TimelineError> {
    let indices = nodes
        .iter()
        .map(|id| graph.index_of(id).ok_or_else(|| TimelineError::UnknownInstance(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(coverage_of(graph, &indices))
}

pub(crate) fn coverage_of(graph: &EnsembleGraph, nodes: &[usize]) -> f64 {
    let horizon = graph.horizon() as Tick;
    let models = &graph.flow().nodes;
    if horizon <= 0 || models.is_empty() {
        return 0.0;
    }
    let full = TickWindow::new(0, horizon);
    let mut covered = 0u64;
    for m in models {
        let mut ticks = vec![false; horizon as usize];
        for &i in nodes {
            let node = graph.node_at(i);
            if node.model_id != m.id {
                continue;
            }
            if let Some(w) = node.window.intersection(&full) {
                for t in w.ticks() {
                    ticks[t as usize] = true;
                }
            }
        }
        covered += ticks.iter().filter(|c| **c).count() as u64;
    }
    covered as f64 / (horizon as u64 * models.len() as u64) as f64
}

/// Scores a node set: for each term, the mean of the stitched variable
/// (maximize), its negation (minimize), or the negated mean squared
/// deviation from the target over ticks where both exist (match); then the
/// weighted sum, plus `coverage_weight × coverage`.
pub fn score_timeline(
    graph: &EnsembleGraph,
    nodes: &[InstanceId],
    criterion: &PreferenceCriterion,
) -> Result<f64, TimelineError> {
    let indices = nodes
        .iter()
        .map(|id| graph.index_of(id).ok_or_else(|| TimelineError::UnknownInstance(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    score_of(graph, &indices, criterion)
}

pub(crate) fn score_of(
    graph: &EnsembleGraph,
    nodes: &[usize],
    criterion: &PreferenceCriterion,
) -> Result<f64, TimelineError> {
    let mut total = 0.0;
    for term in &criterion.terms {
        let series = stitch(graph, nodes, &term.model, &term.variable)?;
        if term.component.is_some_and(|c| c >= series.width) {
            return Err(TimelineError::InvalidCriterion(format!(
                "component out of range for `{}.{}`",
                term.model, term.variable
            )));
        }
        total += term.weight * term_value(&series, term);
    }
    if criterion.coverage_weight != 0.0 {
        total += criterion.coverage_weight * coverage_of(graph, nodes);
    }
    Ok(total)
}

fn term_value(series: &StitchedSeries, term: &PreferenceTerm) -> f64 {
    let res = series.resolution as usize;
    match &term.direction {
        Direction::Maximize | Direction::Minimize => {
            let (mut sum, mut n) = (0.0, 0usize);
            for b in 0..series.buckets() {
                if let Some(v) = series.scalar_at(b, term.component) {
                    sum += v;
                    n += 1;
                }
            }
            let mean = if n == 0 { 0.0 } else { sum / n as f64 };
            if term.direction == Direction::Maximize {
                mean
            } else {
                -mean
            }
        }
        Direction::Match(target) => {
            let (mut sum, mut n) = (0.0, 0usize);
            for (t, want) in target.iter().enumerate() {
                let b = t / res;
                if b >= series.buckets() {
                    break;
                }
                if let Some(v) = series.scalar_at(b, term.component) {
                    sum += (v - want) * (v - want);
                    n += 1;
                }
            }
            if n == 0 {
                0.0
            } else {
                -(sum / n as f64)
            }
        }
    }
}
