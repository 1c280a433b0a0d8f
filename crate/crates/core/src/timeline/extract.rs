//! Candidate pools and diversified top-k selection.
//!
//! Small graphs use the exact enumeration as the candidate pool. Larger ones
//! use a beam search over ok instances in commit order (a topological
//! order): each partial timeline either takes the instance, when its parents
//! are in and nothing conflicts, or skips it. Whenever the beam outgrows
//! `beam_width` it keeps the best partial timelines by score, ties broken by
//! node ids. Survivors are completed greedily to maximal timelines, so with
//! unbounded width the pool holds every timeline.
//!
//! Selection is maximal marginal relevance over the pool.

use std::collections::BTreeSet;

use fixedbitset::FixedBitSet;
use rayon::prelude::*;

use crate::store::{EnsembleGraph, InstanceId};
use crate::timeline::enumerate::enumerate_sets;
use crate::timeline::score::{coverage_of, score_of};
use crate::timeline::{timeline_id, DiversityConfig, Index, PreferenceCriterion, Timeline, TimelineError};

pub const DEFAULT_BEAM_WIDTH: usize = 64;

/// `|a ∩ b| / |a ∪ b|`, with two empty sets counting as identical.
pub fn jaccard(a: &[InstanceId], b: &[InstanceId]) -> f64 {
    let a: BTreeSet<&InstanceId> = a.iter().collect();
    let b: BTreeSet<&InstanceId> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Up to `k` timelines from `graph`, best first, trading score against
/// overlap with those already chosen.
pub fn extract_top_k(
    graph: &EnsembleGraph,
    criterion: &PreferenceCriterion,
    diversity: &DiversityConfig,
) -> Result<Vec<Timeline>, TimelineError> {
    if let Some((field, msg)) = diversity.problems().into_iter().next() {
        return Err(TimelineError::InvalidDiversity(format!("{field}: {msg}")));
    }
    if let Some((field, msg)) = criterion.problems(graph).into_iter().next() {
        return Err(TimelineError::InvalidCriterion(format!("{field}: {msg}")));
    }
    let index = Index::new(graph);
    let pool = if graph.len() <= diversity.oracle_limit {
        enumerate_sets(&index, diversity.oracle_limit)?
    } else {
        beam_pool(&index, criterion, diversity.beam_width)?
    };
    let candidates = pool
        .par_iter()
        .map(|set| {
            let members: Vec<usize> = set.ones().collect();
            let node_ids = index.ids_of(set);
            Ok(Timeline {
                id: timeline_id(graph.run_id(), &node_ids),
                run_id: graph.run_id().to_owned(),
                score: score_of(graph, &members, criterion)?,
                coverage: coverage_of(graph, &members),
                node_ids,
            })
        })
        .collect::<Result<Vec<_>, TimelineError>>()?;
    Ok(mmr_select(candidates, diversity.k, diversity.lambda))
}

/// Greedy maximal-marginal-relevance selection.
///
/// Each round takes the candidate maximizing
/// `(1 − λ)·normalized score − λ·max Jaccard to the chosen`; ties go to the
/// lower similarity, then the higher raw score, then the smaller id list.
pub fn mmr_select(mut pool: Vec<Timeline>, k: usize, lambda: f64) -> Vec<Timeline> {
    pool.sort_by(|a, b| a.node_ids.cmp(&b.node_ids));
    pool.dedup_by(|a, b| a.node_ids == b.node_ids);
    let (lo, hi) =
        pool.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t.score), hi.max(t.score)));
    let norm = |s: f64| if hi > lo { (s - lo) / (hi - lo) } else { 1.0 };

    let mut chosen: Vec<Timeline> = Vec::new();
    let mut max_sim = vec![0.0f64; pool.len()];
    let mut taken = vec![false; pool.len()];
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for (i, t) in pool.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let value = (1.0 - lambda) * norm(t.score) - lambda * max_sim[i];
            let better = match best {
                None => true,
                Some((j, bv)) => {
                    let u = &pool[j];
                    value
                        .total_cmp(&bv)
                        .then_with(|| max_sim[j].total_cmp(&max_sim[i]))
                        .then_with(|| t.score.total_cmp(&u.score))
                        .then_with(|| u.node_ids.cmp(&t.node_ids))
                        .is_gt()
                }
            };
            if better {
                best = Some((i, value));
            }
        }
        let Some((i, _)) = best else { break };
        taken[i] = true;
        for (j, t) in pool.iter().enumerate() {
            if !taken[j] {
                max_sim[j] = max_sim[j].max(jaccard(&t.node_ids, &pool[i].node_ids));
            }
        }
        chosen.push(pool[i].clone());
    }
    chosen
}

struct Partial {
    set: FixedBitSet,
    score: f64,
    ids: Vec<InstanceId>,
}

fn beam_pool(
    index: &Index<'_>,
    criterion: &PreferenceCriterion,
    width: usize,
) -> Result<Vec<FixedBitSet>, TimelineError> {
    let graph = index.graph;
    let mut beam = vec![Partial { set: index.empty_set(), score: 0.0, ids: Vec::new() }];
    for &v in &index.eligible {
        let mut next: Vec<FixedBitSet> = Vec::with_capacity(beam.len() * 2);
        for state in &beam {
            let includable = graph.parents_of(v).iter().all(|&p| state.set.contains(p))
                && index.conflicts[v].is_disjoint(&state.set);
            if includable {
                let mut s = state.set.clone();
                s.insert(v);
                next.push(s);
            }
            next.push(state.set.clone());
        }
        if next.len() <= width {
            beam = next.into_iter().map(|set| Partial { set, score: 0.0, ids: Vec::new() }).collect();
            continue;
        }
        let mut scored = next
            .into_par_iter()
            .map(|set| {
                let members: Vec<usize> = set.ones().collect();
                let score = score_of(graph, &members, criterion)?;
                let ids = index.ids_of(&set);
                Ok(Partial { set, score, ids })
            })
            .collect::<Result<Vec<_>, TimelineError>>()?;
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.ids.cmp(&b.ids)));
        scored.truncate(width);
        beam = scored;
    }

    let mut pool = Vec::new();
    let mut seen = BTreeSet::new();
    for mut state in beam {
        index.complete(&mut state.set);
        if seen.insert(state.set.ones().collect::<Vec<_>>()) {
            pool.push(state.set);
        }
    }
    Ok(pool)
}
