//! Time-unrolling of a flow into an execution plan.
//!
//! Every `(model, step)` pair whose windows fit inside the horizon becomes a
//! task. For each incoming flow edge the consumer needs the producer's data
//! over its input window moved back by the edge lag; the producer steps that
//! supply it are those whose output window lies inside that window, plus, for
//! any tick those leave uncovered, the latest producer step covering the tick.
//! Ticks before 0 are served by the edge's initial value and need no producer.

use std::collections::{BTreeSet, HashMap};

use crate::model::{FlowEdge, FlowGraph, ModelSpec};
use crate::window::{StepWindows, Tick, TickWindow};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("unsatisfiable input: `{model}` step {step} reads `{from}.{variable}` over {window} but tick {tick} is never produced")]
    UnsatisfiableInput { model: String, step: u64, from: String, variable: String, window: TickWindow, tick: Tick },
    #[error("the time-unrolled task graph has a cycle through {0}")]
    CyclicSchedule(String),
    #[error("model `{0}` has shift 0")]
    ZeroShift(String),
}

/// Data a task reads over one flow edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeInput {
    /// Index into `FlowGraph::edges`.
    pub edge: usize,
    /// Required producer ticks (consumer input window moved back by the lag).
    pub window: TickWindow,
    /// Producer tasks supplying the window, ordered by step.
    pub producers: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub model: usize,
    pub step: u64,
    pub windows: StepWindows,
    pub inputs: Vec<EdgeInput>,
    /// Same model's previous step, for stateful models past step 0.
    pub state_parent: Option<usize>,
    /// Distinct upstream tasks (data producers and the state parent), ascending.
    pub deps: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutionPlan {
    pub horizon: u64,
    pub tasks: Vec<Task>,
    /// Task indices grouped into dependency levels; each stage only depends on
    /// earlier stages.
    pub stages: Vec<Vec<usize>>,
    index: HashMap<(usize, u64), usize>,
}

impl ExecutionPlan {
    pub fn task_index(&self, model: usize, step: u64) -> Option<usize> {
        self.index.get(&(model, step)).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Dependencies of `(model, step)` as `(model, step)` pairs.
    pub fn deps_of(&self, model: usize, step: u64) -> Vec<(usize, u64)> {
        self.task_index(model, step)
            .map(|t| self.tasks[t].deps.iter().map(|&d| (self.tasks[d].model, self.tasks[d].step)).collect())
            .unwrap_or_default()
    }
}

/// Producer steps supplying `required` (producer ticks), or the first tick
/// no producer step can ever cover.
pub fn producer_steps(producer: &ModelSpec, required: TickWindow) -> Result<Vec<u64>, Tick> {
    let Some(req) = required.clamp_nonnegative() else {
        return Ok(Vec::new());
    };
    let shift = producer.shift as Tick;
    let w = producer.output_scope.window as Tick;
    if shift == 0 || w == 0 {
        return Err(req.lo);
    }
    // Steps whose output window [s*shift, s*shift + w) meets req.
    let first = ((req.lo - w + 1).max(0) + shift - 1) / shift;
    let last = (req.hi - 1) / shift;
    let candidates: Vec<(u64, TickWindow)> = (first..=last)
        .map(|s| (s as u64, producer.windows(s as u64).output))
        .filter(|(_, out)| out.intersects(&req))
        .collect();

    let mut chosen = BTreeSet::new();
    let mut covered = vec![false; req.len() as usize];
    for (s, out) in &candidates {
        if req.contains_window(out) {
            chosen.insert(*s);
            for t in out.ticks() {
                covered[(t - req.lo) as usize] = true;
            }
        }
    }
    for (i, done) in covered.iter().enumerate() {
        if *done {
            continue;
        }
        let t = req.lo + i as Tick;
        match candidates.iter().rev().find(|(_, out)| out.contains(t)) {
            Some((s, _)) => {
                chosen.insert(*s);
            }
            None => return Err(t),
        }
    }
    Ok(chosen.into_iter().collect())
}

/// Required producer window for consumer input window `input` over `edge`.
pub fn lagged_window(input: TickWindow, edge: &FlowEdge) -> TickWindow {
    input.shifted(-(edge.lag as Tick))
}

fn task_fits(model: &ModelSpec, step: u64, horizon: u64) -> bool {
    let w = model.windows(step);
    let end = w.input.map_or(w.output.hi, |i| i.hi.max(w.output.hi));
    end <= horizon as Tick
}

/// Unrolls `flow` over `[0, horizon)`.
///
/// The flow is expected to pass structural validation. Tasks whose inputs
/// would need producer steps beyond the horizon are left out; inputs that no
/// producer step could ever supply are an error.
pub fn compile_plan(flow: &FlowGraph, horizon: u64) -> Result<ExecutionPlan, PlanError> {
    if let Some(m) = flow.nodes.iter().find(|m| m.shift == 0) {
        return Err(PlanError::ZeroShift(m.id.clone()));
    }
    let position: HashMap<&str, usize> = flow.nodes.iter().enumerate().map(|(i, m)| (m.id.as_str(), i)).collect();

    // Candidate tasks and their producer steps per edge.
    struct Draft {
        model: usize,
        step: u64,
        windows: StepWindows,
        inputs: Vec<(usize, TickWindow, usize, Vec<u64>)>,
        state_parent: Option<u64>,
    }
    let mut drafts = Vec::new();
    for (mi, model) in flow.nodes.iter().enumerate() {
        let mut step = 0u64;
        while task_fits(model, step, horizon) {
            let windows = model.windows(step);
            let mut inputs = Vec::new();
            if let Some(input) = windows.input {
                for (ei, edge) in flow.edges.iter().enumerate().filter(|(_, e)| e.to_node == model.id) {
                    let pi = position[edge.from_node.as_str()];
                    let producer = &flow.nodes[pi];
                    let required = lagged_window(input, edge);
                    let steps = producer_steps(producer, required).map_err(|tick| PlanError::UnsatisfiableInput {
                        model: model.id.clone(),
                        step,
                        from: producer.id.clone(),
                        variable: edge.output_var.clone(),
                        window: required,
                        tick,
                    })?;
                    inputs.push((ei, required, pi, steps));
                }
            }
            let state_parent = (model.stateful && step > 0).then(|| step - 1);
            drafts.push(Draft { model: mi, step, windows, inputs, state_parent });
            step += 1;
        }
    }

    // Drop tasks whose producers fall outside the horizon, to a fixpoint.
    let mut alive: HashMap<(usize, u64), usize> =
        drafts.iter().enumerate().map(|(i, d)| ((d.model, d.step), i)).collect();
    loop {
        let snapshot: BTreeSet<(usize, u64)> = alive.keys().copied().collect();
        alive.retain(|_, &mut i| {
            let d = &drafts[i];
            d.inputs.iter().all(|(_, _, pi, steps)| steps.iter().all(|s| snapshot.contains(&(*pi, *s))))
                && d.state_parent.is_none_or(|s| snapshot.contains(&(d.model, s)))
        });
        if alive.len() == snapshot.len() {
            break;
        }
    }

    let mut keys: Vec<(usize, u64)> = alive.keys().copied().collect();
    keys.sort_by_key(|&(m, s)| (s, m));
    let index: HashMap<(usize, u64), usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut tasks = Vec::with_capacity(keys.len());
    for key in &keys {
        let d = &drafts[alive[key]];
        let inputs: Vec<EdgeInput> = d
            .inputs
            .iter()
            .map(|(edge, window, pi, steps)| EdgeInput {
                edge: *edge,
                window: *window,
                producers: steps.iter().map(|s| index[&(*pi, *s)]).collect(),
            })
            .collect();
        let state_parent = d.state_parent.map(|s| index[&(d.model, s)]);
        let deps: BTreeSet<usize> =
            inputs.iter().flat_map(|i| i.producers.iter().copied()).chain(state_parent).collect();
        tasks.push(Task {
            model: d.model,
            step: d.step,
            windows: d.windows,
            inputs,
            state_parent,
            deps: deps.into_iter().collect(),
        });
    }

    let stages = levels(&tasks).map_err(|t| {
        let task = &tasks[t];
        PlanError::CyclicSchedule(format!("{} step {}", flow.nodes[task.model].id, task.step))
    })?;
    Ok(ExecutionPlan { horizon, tasks, stages, index })
}

/// Kahn levels of the task graph; `Err(task)` names a task on a cycle.
fn levels(tasks: &[Task]) -> Result<Vec<Vec<usize>>, usize> {
    let mut indegree: Vec<usize> = tasks.iter().map(|t| t.deps.len()).collect();
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); tasks.len()];
    for (i, t) in tasks.iter().enumerate() {
        for &d in &t.deps {
            dependents[d].push(i);
        }
    }
    let mut stages = Vec::new();
    let mut current: Vec<usize> = (0..tasks.len()).filter(|&i| indegree[i] == 0).collect();
    let mut seen = 0;
    while !current.is_empty() {
        current.sort_unstable();
        seen += current.len();
        let mut next = Vec::new();
        for &t in &current {
            for &c in &dependents[t] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    next.push(c);
                }
            }
        }
        stages.push(std::mem::replace(&mut current, next));
    }
    if seen != tasks.len() {
        return Err((0..tasks.len()).find(|&i| indegree[i] > 0).unwrap_or(0));
    }
    Ok(stages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ScopeDescriptor, VariableSpec};

    fn source(id: &str, shift: u64, w_out: u64) -> ModelSpec {
        ModelSpec {
            shift,
            output_scope: ScopeDescriptor::new(w_out, 1),
            outputs: vec![VariableSpec::scalar("x", "")],
            ..ModelSpec::named(id, "constant")
        }
    }

    fn sink(id: &str, shift: u64, w_in: u64, w_out: u64) -> ModelSpec {
        ModelSpec {
            shift,
            input_scope: ScopeDescriptor::new(w_in, 1),
            output_scope: ScopeDescriptor::new(w_out, 1),
            inputs: vec![VariableSpec::scalar("x", "")],
            outputs: vec![VariableSpec::scalar("x", "")],
            ..ModelSpec::named(id, "identity")
        }
    }

    fn chain(a: ModelSpec, b: ModelSpec, lag: u64) -> FlowGraph {
        let mut e = FlowEdge::new(&a.id, "x", &b.id, "x");
        if lag > 0 {
            e = e.with_lag(lag, 0.0);
        }
        FlowGraph { name: "chain".into(), nodes: vec![a, b], edges: vec![e] }
    }

    #[test]
    fn single_source_three_tasks() {
        let flow = FlowGraph { name: "one".into(), nodes: vec![source("a", 2, 2)], edges: vec![] };
        let plan = compile_plan(&flow, 6).unwrap();
        let steps: Vec<u64> = plan.tasks.iter().map(|t| t.step).collect();
        assert_eq!(steps, vec![0, 1, 2]);
        assert!(plan.tasks.iter().all(|t| t.deps.is_empty()));
        assert_eq!(plan.stages.len(), 1);
    }

    #[test]
    fn identical_windows_pair_up() {
        let flow = chain(source("a", 2, 2), sink("b", 2, 2, 2), 0);
        let plan = compile_plan(&flow, 8).unwrap();
        for s in 0..4 {
            assert_eq!(plan.deps_of(1, s), vec![(0, s)]);
        }
    }

    /// Brute force: producer steps with output windows inside the consumer's
    /// input window.
    #[test]
    fn mismatched_windows_pick_contained_steps() {
        let flow = chain(source("a", 1, 2), sink("b", 2, 4, 2), 0);
        let plan = compile_plan(&flow, 20).unwrap();
        let input = TickWindow::new(2, 6);
        let expected: Vec<(usize, u64)> = (0..20u64)
            .filter(|&s| {
                let out = TickWindow::new(s as Tick, s as Tick + 2);
                input.contains_window(&out)
            })
            .map(|s| (0, s))
            .collect();
        assert_eq!(expected, vec![(0, 2), (0, 3), (0, 4)]);
        assert_eq!(plan.deps_of(1, 1), expected);
    }

    #[test]
    fn wide_producer_windows_use_latest_cover() {
        // Producer emits [7s, 7s+7); consumer reads single ticks.
        let flow = chain(source("a", 7, 7), sink("b", 1, 1, 1), 0);
        let plan = compile_plan(&flow, 14).unwrap();
        assert_eq!(plan.deps_of(1, 3), vec![(0, 0)]);
        assert_eq!(plan.deps_of(1, 9), vec![(0, 1)]);
    }

    #[test]
    fn lag_reads_previous_window() {
        let flow = chain(source("a", 7, 7), sink("b", 7, 7, 7), 7);
        let plan = compile_plan(&flow, 28).unwrap();
        assert_eq!(plan.deps_of(1, 0), vec![]);
        assert_eq!(plan.deps_of(1, 2), vec![(0, 1)]);
        assert_eq!(plan.tasks.len(), 8);
    }

    #[test]
    fn gapped_producer_is_unsatisfiable() {
        let flow = chain(source("a", 4, 2), sink("b", 4, 4, 4), 0);
        assert!(matches!(compile_plan(&flow, 16), Err(PlanError::UnsatisfiableInput { tick: 2, .. })));
    }

    #[test]
    fn tail_tasks_beyond_horizon_are_dropped() {
        // b(s) needs a's [2s, 2s+4); with horizon 6 only b(0), b(1) fit.
        let flow = chain(source("a", 2, 2), sink("b", 2, 4, 2), 0);
        let plan = compile_plan(&flow, 6).unwrap();
        let b_steps: Vec<u64> = plan.tasks.iter().filter(|t| t.model == 1).map(|t| t.step).collect();
        assert_eq!(b_steps, vec![0, 1]);
    }

    #[test]
    fn same_step_feedback_is_cyclic() {
        let a = sink("a", 7, 7, 7);
        let b = sink("b", 7, 7, 7);
        let flow = FlowGraph {
            name: "loop".into(),
            nodes: vec![a, b],
            edges: vec![FlowEdge::new("a", "x", "b", "x"), FlowEdge::new("b", "x", "a", "x").with_lag(1, 0.0)],
        };
        assert!(matches!(compile_plan(&flow, 21), Err(PlanError::CyclicSchedule(_))));
    }

    #[test]
    fn stateful_tasks_chain_through_state_parent() {
        let mut a = source("a", 3, 3);
        a.stateful = true;
        let flow = FlowGraph { name: "s".into(), nodes: vec![a], edges: vec![] };
        let plan = compile_plan(&flow, 9).unwrap();
        assert_eq!(plan.deps_of(0, 2), vec![(0, 1)]);
        assert_eq!(plan.stages.len(), 3);
    }
}
