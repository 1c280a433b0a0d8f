use fixedbitset::FixedBitSet;

use crate::store::{EnsembleGraph, InstanceId};
use crate::timeline::{Index, TimelineError};

pub const DEFAULT_ORACLE_LIMIT: usize = 24;
/// Hard ceiling on the enumeration limit; the search is exponential.
pub const MAX_ORACLE_LIMIT: usize = 64;

/// Every timeline of `graph`, each as sorted node ids, in discovery order.
///
/// Exact and duplicate-free. The empty graph has exactly one (empty)
/// timeline. Fails with `TooLarge` above [`DEFAULT_ORACLE_LIMIT`] nodes.
pub fn enumerate_timelines(graph: &EnsembleGraph) -> Result<Vec<Vec<InstanceId>>, TimelineError> {
    enumerate_with_limit(graph, DEFAULT_ORACLE_LIMIT)
}

pub fn enumerate_with_limit(graph: &EnsembleGraph, limit: usize) -> Result<Vec<Vec<InstanceId>>, TimelineError> {
    let index = Index::new(graph);
    Ok(enumerate_sets(&index, limit)?.iter().map(|s| index.ids_of(s)).collect())
}

pub(crate) fn enumerate_sets(index: &Index<'_>, limit: usize) -> Result<Vec<FixedBitSet>, TimelineError> {
    let limit = limit.min(MAX_ORACLE_LIMIT);
    let n = index.graph.len();
    if n > limit {
        return Err(TimelineError::TooLarge { nodes: n, limit });
    }
    // Highest eligible node that conflicts with each node: an excluded node
    // can only be blocked by a later conflicting inclusion.
    let last_blocker: Vec<Option<usize>> =
        (0..n).map(|v| index.conflicts[v].ones().filter(|&u| index.graph.node_at(u).is_ok()).max()).collect();
    let mut search = Search { index, last_blocker, out: Vec::new() };
    let mut set = index.empty_set();
    search.dfs(0, &mut set, &mut Vec::new());
    Ok(search.out)
}

struct Search<'a, 'g> {
    index: &'a Index<'g>,
    last_blocker: Vec<Option<usize>>,
    out: Vec<FixedBitSet>,
}

impl Search<'_, '_> {
    /// Decides eligible node `pos` onward. `pending` holds excluded nodes that
    /// were includable when skipped; each needs a later conflicting member.
    fn dfs(&mut self, pos: usize, set: &mut FixedBitSet, pending: &mut Vec<usize>) {
        let eligible = &self.index.eligible;
        let next_node = eligible.get(pos).copied();
        for &p in pending.iter() {
            if !self.index.conflicts[p].is_disjoint(set) {
                continue;
            }
            let reachable = match (self.last_blocker[p], next_node) {
                (Some(b), Some(v)) => b >= v,
                _ => false,
            };
            if !reachable {
                return;
            }
        }
        let Some(v) = next_node else {
            if self.index.maximal(set) {
                self.out.push(set.clone());
            }
            return;
        };
        let graph = self.index.graph;
        let includable =
            graph.parents_of(v).iter().all(|&p| set.contains(p)) && self.index.conflicts[v].is_disjoint(set);
        if includable {
            set.insert(v);
            self.dfs(pos + 1, set, pending);
            set.set(v, false);
            pending.push(v);
            self.dfs(pos + 1, set, pending);
            pending.pop();
        } else {
            self.dfs(pos + 1, set, pending);
        }
    }
}
