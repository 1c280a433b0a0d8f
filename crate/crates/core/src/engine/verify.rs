//! Post-run checks over a whole ensemble graph.

use std::collections::BTreeMap;
use std::fmt;

use crate::engine::plan::lagged_window;
use crate::store::{EnsembleGraph, InstanceStatus};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RunIssue {
    OverBudget { model: String, step: u64, count: usize, budget: u32 },
    InputGap { instance: String, variable: String, tick: i64 },
    StateLineage { instance: String, reason: String },
}

impl fmt::Display for RunIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::OverBudget { model, step, count, budget } => {
                write!(f, "{model} step {step}: {count} instances exceed budget {budget}")
            }
            Self::InputGap { instance, variable, tick } => {
                write!(f, "{instance}: input `{variable}` has no parent at tick {tick}")
            }
            Self::StateLineage { instance, reason } => write!(f, "{instance}: {reason}"),
        }
    }
}

/// Checks the budget, input-coverage and state-lineage invariants.
///
/// Budget counts executed instances (ok or failed); dropped-group markers do
/// not count. Coverage is checked for every executed non-source instance:
/// the data edges arriving over each flow edge must cover the lag-shifted
/// input window from tick 0 on.
pub fn verify_run(graph: &EnsembleGraph) -> Vec<RunIssue> {
    let flow = graph.flow();
    let mut issues = Vec::new();

    let mut counts: BTreeMap<(&str, u64), usize> = BTreeMap::new();
    for n in graph.nodes().iter().filter(|n| n.status != InstanceStatus::Dropped) {
        *counts.entry((n.model_id.as_str(), n.step)).or_default() += 1;
    }
    for ((model, step), count) in counts {
        let budget = graph.config().policy(model).map_or(u32::MAX, |p| p.budget);
        if count > budget as usize {
            issues.push(RunIssue::OverBudget { model: model.to_owned(), step, count, budget });
        }
    }

    for (i, node) in graph.nodes().iter().enumerate() {
        if node.status == InstanceStatus::Dropped {
            continue;
        }
        let Some(model) = flow.node(&node.model_id) else { continue };
        if let Some(input) = model.windows(node.step).input {
            for edge in flow.incoming(&model.id) {
                let Some(required) = lagged_window(input, edge).clamp_nonnegative() else { continue };
                let mut covered = vec![false; required.len() as usize];
                for de in graph.incoming_edges(i) {
                    let from_model = graph.node(&de.from).map(|p| p.model_id.as_str());
                    if from_model != Some(edge.from_node.as_str()) || de.variable != edge.output_var {
                        continue;
                    }
                    if let Some(w) = de.window.intersection(&required) {
                        for t in w.ticks() {
                            covered[(t - required.lo) as usize] = true;
                        }
                    }
                }
                if let Some(gap) = covered.iter().position(|c| !c) {
                    issues.push(RunIssue::InputGap {
                        instance: node.id.to_string(),
                        variable: edge.input_var.clone(),
                        tick: required.lo + gap as i64,
                    });
                }
            }
        }

        if model.stateful && node.step > 0 {
            match node.state_parent.as_ref().and_then(|p| graph.node(p)) {
                None => issues
                    .push(RunIssue::StateLineage { instance: node.id.to_string(), reason: "no state parent".into() }),
                Some(p) if p.model_id != node.model_id || p.step + 1 != node.step => {
                    issues.push(RunIssue::StateLineage {
                        instance: node.id.to_string(),
                        reason: format!("state parent {} is not the previous step of {}", p.id, node.model_id),
                    })
                }
                Some(_) => {}
            }
        } else if node.state_parent.is_some() {
            issues.push(RunIssue::StateLineage {
                instance: node.id.to_string(),
                reason: "unexpected state parent".into(),
            });
        }
    }
    issues
}
