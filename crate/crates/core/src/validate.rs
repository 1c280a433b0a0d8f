//! Structural and schedulability checks for flows.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use crate::engine::{compile_plan, ModelRegistry, PlanError};
use crate::model::{FlowGraph, ModelSpec, ScopeDescriptor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    DuplicateModel,
    DuplicateName,
    InvalidIdentifier,
    InvalidScope,
    InvalidParameter,
    ZeroShift,
    UnknownNode,
    UnknownVariable,
    UnknownFunction,
    KindMismatch,
    UnfedInput,
    MultiplyFedInput,
    MissingInitial,
    ZeroLagCycle,
    CoverageGap,
    CyclicSchedule,
}

impl ViolationKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::DuplicateModel => "duplicate model",
            Self::DuplicateName => "duplicate name",
            Self::InvalidIdentifier => "invalid identifier",
            Self::InvalidScope => "invalid scope",
            Self::InvalidParameter => "invalid parameter",
            Self::ZeroShift => "zero shift",
            Self::UnknownNode => "unknown node",
            Self::UnknownVariable => "unknown variable",
            Self::UnknownFunction => "unknown function",
            Self::KindMismatch => "kind mismatch",
            Self::UnfedInput => "unfed input",
            Self::MultiplyFedInput => "multiply fed input",
            Self::MissingInitial => "missing initial",
            Self::ZeroLagCycle => "zero-lag cycle",
            Self::CoverageGap => "coverage gap",
            Self::CyclicSchedule => "cyclic schedule",
        }
    }
}

/// One problem with a flow, naming the model or edge at fault.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Model id, `model.variable`, or `edge #i`.
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.kind.label(), self.subject, self.message)
    }
}

fn v(kind: ViolationKind, subject: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation { kind, subject: subject.into(), message: message.into() }
}

/// Validates against the built-in and scenario functions.
pub fn validate_flow(flow: &FlowGraph) -> Vec<Violation> {
    validate_flow_with(flow, &crate::scenario::registry())
}

/// Every violated flow invariant. An empty report means `compile_plan`
/// succeeds for any horizon.
pub fn validate_flow_with(flow: &FlowGraph, registry: &ModelRegistry) -> Vec<Violation> {
    use ViolationKind::*;
    let mut out = Vec::new();

    let mut ids = BTreeSet::new();
    for m in &flow.nodes {
        if !is_identifier(&m.id) {
            out.push(v(
                InvalidIdentifier,
                &m.id,
                "model ids must be non-empty and use only letters, digits, `_` or `-`",
            ));
        }
        if !ids.insert(m.id.as_str()) {
            out.push(v(DuplicateModel, &m.id, "model id declared more than once"));
        }
        check_model(m, registry, &mut out);
    }

    let mut fed: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (i, e) in flow.edges.iter().enumerate() {
        let subject = format!("edge #{i} {}.{} -> {}.{}", e.from_node, e.output_var, e.to_node, e.input_var);
        let from = flow.node(&e.from_node);
        let to = flow.node(&e.to_node);
        if from.is_none() {
            out.push(v(UnknownNode, &subject, format!("no model `{}`", e.from_node)));
        }
        if to.is_none() {
            out.push(v(UnknownNode, &subject, format!("no model `{}`", e.to_node)));
        }
        let out_var = from.and_then(|m| m.output(&e.output_var));
        let in_var = to.and_then(|m| m.input(&e.input_var));
        if from.is_some() && out_var.is_none() {
            out.push(v(UnknownVariable, &subject, format!("`{}` has no output `{}`", e.from_node, e.output_var)));
        }
        if to.is_some() && in_var.is_none() {
            out.push(v(UnknownVariable, &subject, format!("`{}` has no input `{}`", e.to_node, e.input_var)));
        }
        if let (Some(o), Some(i)) = (out_var, in_var) {
            if o.kind != i.kind {
                out.push(v(KindMismatch, &subject, format!("output is {} but input is {}", o.kind, i.kind)));
            }
        }
        if e.lag > 0 && e.initial.is_none() {
            out.push(v(MissingInitial, &subject, "a lagged edge needs an `initial` value for ticks before 0"));
        }
        if let Some(x) = e.initial {
            if !x.is_finite() {
                out.push(v(MissingInitial, &subject, "`initial` must be finite"));
            }
        }
        if in_var.is_some() {
            *fed.entry((e.to_node.as_str(), e.input_var.as_str())).or_default() += 1;
        }
    }
    for m in &flow.nodes {
        for input in &m.inputs {
            match fed.get(&(m.id.as_str(), input.name.as_str())).copied().unwrap_or(0) {
                0 => out.push(v(UnfedInput, format!("{}.{}", m.id, input.name), "no edge feeds this input")),
                1 => {}
                n => out.push(v(MultiplyFedInput, format!("{}.{}", m.id, input.name), format!("fed by {n} edges"))),
            }
        }
    }

    out.extend(zero_lag_cycles(flow));

    if out.is_empty() {
        let horizon = check_horizon(flow);
        match compile_plan(flow, horizon) {
            Ok(_) => {}
            Err(PlanError::UnsatisfiableInput { model, step, from, variable, window, tick }) => out.push(v(
                CoverageGap,
                format!("{model}.{variable}"),
                format!("step {step} reads `{from}` over {window} but no step of `{from}` outputs tick {tick}"),
            )),
            Err(PlanError::CyclicSchedule(at)) => {
                out.push(v(CyclicSchedule, at, "lags are too short to order the unrolled steps"))
            }
            Err(PlanError::ZeroShift(m)) => out.push(v(ZeroShift, m, "shift must be at least 1")),
        }
    }
    out
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

fn check_model(m: &ModelSpec, registry: &ModelRegistry, out: &mut Vec<Violation>) {
    use ViolationKind::*;
    if !registry.contains(&m.function_ref) {
        out.push(v(UnknownFunction, &m.id, format!("function `{}` is not registered", m.function_ref)));
    }
    if m.shift == 0 {
        out.push(v(ZeroShift, &m.id, "shift must be at least 1"));
    }
    let scope_ok = |s: &ScopeDescriptor| s.window >= 1 && s.resolution >= 1 && s.window.is_multiple_of(s.resolution);
    if !scope_ok(&m.output_scope) {
        out.push(v(
            InvalidScope,
            &m.id,
            format!("output scope {:?} needs window ≥ 1 divisible by resolution ≥ 1", m.output_scope),
        ));
    }
    if m.is_source() {
        if m.input_scope.window != 0 {
            out.push(v(InvalidScope, &m.id, "a source model must have input window 0"));
        }
    } else if !scope_ok(&m.input_scope) {
        out.push(v(
            InvalidScope,
            &m.id,
            format!("input scope {:?} needs window ≥ 1 divisible by resolution ≥ 1", m.input_scope),
        ));
    }
    for (what, vars) in [("input", &m.inputs), ("output", &m.outputs)] {
        let mut seen = BTreeSet::new();
        for var in vars.iter() {
            if !seen.insert(var.name.as_str()) {
                out.push(v(DuplicateName, format!("{}.{}", m.id, var.name), format!("{what} declared twice")));
            }
            if var.kind.width() == 0 {
                out.push(v(InvalidScope, format!("{}.{}", m.id, var.name), "vector width must be at least 1"));
            }
        }
    }
    let mut seen = BTreeSet::new();
    for p in &m.params {
        if !seen.insert(p.name.as_str()) {
            out.push(v(DuplicateName, format!("{}.{}", m.id, p.name), "parameter declared twice"));
        }
        if let Some(problem) = p.domain_problem() {
            out.push(v(InvalidParameter, format!("{}.{}", m.id, p.name), problem));
        }
    }
}

/// One violation per strongly connected set of models joined by lag-0 edges.
fn zero_lag_cycles(flow: &FlowGraph) -> Vec<Violation> {
    let mut g = DiGraph::<&str, ()>::new();
    let nodes: BTreeMap<&str, _> = flow.nodes.iter().map(|m| (m.id.as_str(), g.add_node(m.id.as_str()))).collect();
    for e in flow.edges.iter().filter(|e| e.lag == 0) {
        if let (Some(&a), Some(&b)) = (nodes.get(e.from_node.as_str()), nodes.get(e.to_node.as_str())) {
            g.add_edge(a, b, ());
        }
    }
    let mut out = Vec::new();
    for scc in tarjan_scc(&g) {
        let self_loop = scc.len() == 1 && g.contains_edge(scc[0], scc[0]);
        if scc.len() > 1 || self_loop {
            let mut members: Vec<&str> = scc.iter().map(|&n| g[n]).collect();
            members.sort_unstable();
            out.push(v(
                ViolationKind::ZeroLagCycle,
                members.join(", "),
                "every cycle needs at least one edge with lag ≥ 1",
            ));
        }
    }
    out.sort_by(|a, b| a.subject.cmp(&b.subject));
    out
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// A horizon long enough that every distinct window alignment between any
/// producer and consumer, plus the start-up transient, appears in the plan.
fn check_horizon(flow: &FlowGraph) -> u64 {
    const CAP: u64 = 1 << 20;
    let lcm =
        flow.nodes.iter().map(|m| m.shift.max(1)).fold(1u64, |acc, s| (acc / gcd(acc, s)).saturating_mul(s).min(CAP));
    let max_shift = flow.nodes.iter().map(|m| m.shift).max().unwrap_or(1);
    let max_w = flow.nodes.iter().map(|m| m.input_scope.window.max(m.output_scope.window)).max().unwrap_or(1);
    let max_lag = flow.edges.iter().map(|e| e.lag).max().unwrap_or(0);
    2 * lcm + max_lag + 2 * max_shift + 2 * max_w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FlowEdge, VariableSpec};

    fn node(id: &str, inputs: &[&str], outputs: &[&str]) -> ModelSpec {
        ModelSpec {
            input_scope: if inputs.is_empty() { ScopeDescriptor::none() } else { ScopeDescriptor::new(2, 1) },
            output_scope: ScopeDescriptor::new(2, 1),
            shift: 2,
            inputs: inputs.iter().map(|n| VariableSpec::scalar(*n, "")).collect(),
            outputs: outputs.iter().map(|n| VariableSpec::scalar(*n, "")).collect(),
            ..ModelSpec::named(id, if inputs.is_empty() { "constant" } else { "identity" })
        }
    }

    fn chain() -> FlowGraph {
        FlowGraph {
            name: "chain".into(),
            nodes: vec![node("a", &[], &["x"]), node("b", &["x"], &["x"])],
            edges: vec![FlowEdge::new("a", "x", "b", "x")],
        }
    }

    #[test]
    fn chain_is_valid() {
        assert_eq!(validate_flow(&chain()), vec![]);
    }

    #[test]
    fn unknown_output_variable() {
        let mut f = chain();
        f.edges[0].output_var = "nope".into();
        let report = validate_flow(&f);
        assert_eq!(report.len(), 1, "{report:?}");
        assert!(report[0].to_string().contains("unknown variable"));
    }

    #[test]
    fn two_node_zero_lag_cycle() {
        let f = FlowGraph {
            name: "loop".into(),
            nodes: vec![node("a", &["y"], &["x"]), node("b", &["x"], &["y"])],
            edges: vec![FlowEdge::new("a", "x", "b", "x"), FlowEdge::new("b", "y", "a", "y")],
        };
        let report = validate_flow(&f);
        assert_eq!(report.len(), 1, "{report:?}");
        assert!(report[0].to_string().contains("zero-lag cycle"));
    }

    #[test]
    fn lagged_cycle_is_fine() {
        let f = FlowGraph {
            name: "loop".into(),
            nodes: vec![node("a", &["y"], &["x"]), node("b", &["x"], &["y"])],
            edges: vec![FlowEdge::new("a", "x", "b", "x"), FlowEdge::new("b", "y", "a", "y").with_lag(2, 0.0)],
        };
        assert_eq!(validate_flow(&f), vec![]);
    }

    #[test]
    fn structural_problems() {
        let mut f = chain();
        f.nodes[1].inputs.push(VariableSpec::scalar("z", ""));
        f.nodes[0].function_ref = "missing".into();
        f.edges.push(FlowEdge { lag: 1, ..FlowEdge::new("a", "x", "b", "x") });
        let kinds: BTreeSet<ViolationKind> = validate_flow(&f).into_iter().map(|v| v.kind).collect();
        use ViolationKind::*;
        assert_eq!(kinds, [UnknownFunction, UnfedInput, MultiplyFedInput, MissingInitial].into_iter().collect());
    }

    #[test]
    fn coverage_gap_is_reported() {
        // Producer emits [4s, 4s+2): ticks 2, 3 of every 4 are never produced.
        let mut f = chain();
        f.nodes[0].shift = 4;
        let report = validate_flow(&f);
        assert_eq!(report.len(), 1, "{report:?}");
        assert_eq!(report[0].kind, ViolationKind::CoverageGap);
    }

    #[test]
    fn source_with_input_window() {
        let mut f = chain();
        f.nodes[0].input_scope = ScopeDescriptor::new(2, 1);
        assert_eq!(validate_flow(&f)[0].kind, ViolationKind::InvalidScope);
    }
}
