//! Model and workflow descriptions.
//!
//! A flow is a node-labelled directed graph: every node carries a
//! [`ModelSpec`] and every edge routes one output variable of a producer into
//! one input variable of a consumer, optionally displaced back in time by a
//! lag. Flows are written as TOML documents whose field names mirror the
//! types in this module; unknown fields are rejected.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::window::{step_windows, StepWindows};

/// Shape of a variable's per-sample value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum VarKind {
    #[default]
    Scalar,
    /// Fixed-length vector of `n` components.
    Vector(usize),
}

impl VarKind {
    /// Number of numeric components per sample.
    pub fn width(&self) -> usize {
        match self {
            VarKind::Scalar => 1,
            VarKind::Vector(n) => *n,
        }
    }
}

impl fmt::Display for VarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarKind::Scalar => f.write_str("scalar"),
            VarKind::Vector(n) => write!(f, "vector[{n}]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct VariableSpec {
    pub name: String,
    #[serde(default)]
    pub kind: VarKind,
    #[serde(default)]
    pub unit: String,
}

impl VariableSpec {
    pub fn scalar(name: impl Into<String>, unit: impl Into<String>) -> Self {
        Self { name: name.into(), kind: VarKind::Scalar, unit: unit.into() }
    }

    pub fn vector(name: impl Into<String>, n: usize, unit: impl Into<String>) -> Self {
        Self { name: name.into(), kind: VarKind::Vector(n), unit: unit.into() }
    }
}

/// A sampled parameter value. Discrete domains may list numbers or labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum ParamValue {
    Number(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Number(v) => Some(*v),
            ParamValue::Text(_) => None,
        }
    }

    /// Total order used for canonical output and duplicate detection.
    pub fn canonical_key(&self) -> String {
        match self {
            ParamValue::Number(v) => format!("n:{v:?}"),
            ParamValue::Text(s) => format!("t:{s}"),
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Number(v) => write!(f, "{v}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Number(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_owned())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum ParamDomain {
    /// Closed interval `[lo, hi]`.
    Continuous([f64; 2]),
    Discrete(Vec<ParamValue>),
}

impl ParamDomain {
    pub fn contains(&self, value: &ParamValue) -> bool {
        match (self, value) {
            (ParamDomain::Continuous([lo, hi]), ParamValue::Number(v)) => lo <= v && v <= hi,
            (ParamDomain::Discrete(values), v) => values.contains(v),
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct ParameterSpec {
    pub name: String,
    pub domain: ParamDomain,
}

impl ParameterSpec {
    pub fn continuous(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), domain: ParamDomain::Continuous([lo, hi]) }
    }

    pub fn discrete<V: Into<ParamValue>>(name: impl Into<String>, values: impl IntoIterator<Item = V>) -> Self {
        Self { name: name.into(), domain: ParamDomain::Discrete(values.into_iter().map(Into::into).collect()) }
    }

    /// Reasons this parameter's domain is malformed, if any.
    pub fn domain_problem(&self) -> Option<String> {
        match &self.domain {
            ParamDomain::Continuous([lo, hi]) => {
                if !(lo.is_finite() && hi.is_finite()) {
                    Some("continuous bounds must be finite".into())
                } else if lo >= hi {
                    Some(format!("continuous domain needs lo < hi, got [{lo}, {hi}]"))
                } else {
                    None
                }
            }
            ParamDomain::Discrete(values) => {
                if values.is_empty() {
                    return Some("discrete domain is empty".into());
                }
                let mut keys: Vec<String> = values.iter().map(ParamValue::canonical_key).collect();
                keys.sort();
                let before = keys.len();
                keys.dedup();
                if keys.len() != before {
                    Some("discrete domain has duplicate values".into())
                } else if values.iter().any(|v| matches!(v, ParamValue::Number(x) if !x.is_finite())) {
                    Some("discrete domain has a non-finite value".into())
                } else {
                    None
                }
            }
        }
    }
}

/// Temporal scope of a model's inputs or outputs: window length and
/// ticks-per-sample resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct ScopeDescriptor {
    pub window: u64,
    pub resolution: u64,
}

impl ScopeDescriptor {
    pub const fn new(window: u64, resolution: u64) -> Self {
        Self { window, resolution }
    }

    /// Scope of a source model's (absent) input.
    pub const fn none() -> Self {
        Self { window: 0, resolution: 1 }
    }

    pub fn samples(&self) -> u64 {
        self.window.checked_div(self.resolution).unwrap_or(0)
    }
}

impl Default for ScopeDescriptor {
    fn default() -> Self {
        Self::none()
    }
}

/// One model of the flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct ModelSpec {
    pub id: String,
    /// Name of the simulation function in the model registry.
    pub function_ref: String,
    #[serde(default)]
    pub params: Vec<ParameterSpec>,
    #[serde(default)]
    pub inputs: Vec<VariableSpec>,
    #[serde(default)]
    pub outputs: Vec<VariableSpec>,
    #[serde(default)]
    pub input_scope: ScopeDescriptor,
    pub output_scope: ScopeDescriptor,
    pub shift: u64,
    #[serde(default)]
    pub stateful: bool,
}

impl ModelSpec {
    /// Bare model with unit scopes and shift; handy as a struct-update base.
    pub fn named(id: impl Into<String>, function_ref: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            function_ref: function_ref.into(),
            params: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            input_scope: ScopeDescriptor::none(),
            output_scope: ScopeDescriptor::new(1, 1),
            shift: 1,
            stateful: false,
        }
    }

    pub fn is_source(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn windows(&self, step: u64) -> StepWindows {
        step_windows(self, step, self.is_source())
    }

    pub fn input(&self, name: &str) -> Option<&VariableSpec> {
        self.inputs.iter().find(|v| v.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&VariableSpec> {
        self.outputs.iter().find(|v| v.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&ParameterSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Routes `from_node.output_var` into `to_node.input_var`.
///
/// A lag of `L` makes the consumer read producer data `L` ticks in the past.
/// Ticks before 0 read `initial`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct FlowEdge {
    pub from_node: String,
    pub output_var: String,
    pub to_node: String,
    pub input_var: String,
    #[serde(default)]
    pub lag: u64,
    /// Fill value for lag-shifted ticks that fall before the start of time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<f64>,
}

impl FlowEdge {
    pub fn new(from: &str, output_var: &str, to: &str, input_var: &str) -> Self {
        Self {
            from_node: from.into(),
            output_var: output_var.into(),
            to_node: to.into(),
            input_var: input_var.into(),
            lag: 0,
            initial: None,
        }
    }

    pub fn with_lag(mut self, lag: u64, initial: f64) -> Self {
        self.lag = lag;
        self.initial = Some(initial);
        self
    }
}

/// A workflow: models plus the data edges between them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct FlowGraph {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub nodes: Vec<ModelSpec>,
    #[serde(default)]
    pub edges: Vec<FlowEdge>,
}

impl FlowGraph {
    pub fn node(&self, id: &str) -> Option<&ModelSpec> {
        self.nodes.iter().find(|m| m.id == id)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|m| m.id == id)
    }

    /// Edges feeding `model_id`, in declaration order.
    pub fn incoming<'a>(&'a self, model_id: &'a str) -> impl Iterator<Item = &'a FlowEdge> + 'a {
        self.edges.iter().filter(move |e| e.to_node == model_id)
    }

    pub fn outgoing<'a>(&'a self, model_id: &'a str) -> impl Iterator<Item = &'a FlowEdge> + 'a {
        self.edges.iter().filter(move |e| e.from_node == model_id)
    }

    /// Parses a TOML flow document.
    pub fn from_toml_str(text: &str) -> Result<Self, ParseError> {
        toml::from_str(text).map_err(|e| ParseError::from_toml(text, &e))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flow graphs always serialize")
    }

    /// Variables by name for a model's outputs; used by scoring and export.
    pub fn output_kinds(&self, model_id: &str) -> BTreeMap<String, VarKind> {
        self.node(model_id).map(|m| m.outputs.iter().map(|v| (v.name.clone(), v.kind)).collect()).unwrap_or_default()
    }
}

/// A parse failure anchored to a line and column of the source document.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn from_toml(text: &str, err: &toml::de::Error) -> Self {
        let (line, column) = match err.span() {
            Some(span) => line_col(text, span.start),
            None => (1, 1),
        };
        Self { line, column, message: err.message().trim().to_owned() }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
    (line, column)
}
