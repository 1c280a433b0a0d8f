mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use common::{random_graph, two_branch, Oracle};
use proptest::prelude::*;
use timeweave::timeline::{
    enumerate_timelines, extract_top_k, is_causally_closed, is_consistent, is_maximal, is_timeline, jaccard,
    mmr_select, score_timeline, timeline_id, timeline_series, Direction, DiversityConfig, PreferenceCriterion,
    PreferenceTerm, Timeline, TimelineError,
};
use timeweave::{EnsembleGraph, InstanceId, TickWindow};

fn criterion_for(graph: &EnsembleGraph) -> PreferenceCriterion {
    let last = graph.flow().nodes.last().unwrap().id.clone();
    PreferenceCriterion {
        terms: vec![
            PreferenceTerm {
                model: last,
                variable: "x".into(),
                direction: Direction::Maximize,
                weight: 1.0,
                component: None,
            },
            PreferenceTerm {
                model: "m0".into(),
                variable: "x".into(),
                direction: Direction::Match(vec![4.0; 12]),
                weight: 0.5,
                component: None,
            },
        ],
        coverage_weight: 2.0,
    }
}

/// Maximality straight from the definition: no outside ok node joins
/// together with its ancestors without breaking consistency.
fn maximal_by_definition(oracle: &Oracle<'_>, set: &BTreeSet<InstanceId>) -> bool {
    for n in oracle.graph.nodes().iter().filter(|n| n.is_ok() && !set.contains(&n.id)) {
        let mut grown = set.clone();
        let mut stack = vec![n.id.clone()];
        let mut ok = true;
        while let Some(v) = stack.pop() {
            ok &= oracle.graph.node(&v).unwrap().is_ok();
            if grown.insert(v.clone()) {
                stack.extend(oracle.parents(&v));
            }
        }
        if ok && oracle.consistent(&grown) {
            return false;
        }
    }
    true
}

fn assert_sound(graph: &EnsembleGraph, t: &Timeline) {
    let ids = &t.node_ids;
    assert!(is_consistent(graph, ids).unwrap(), "{ids:?}");
    assert!(is_causally_closed(graph, ids).unwrap(), "{ids:?}");
    assert!(is_maximal(graph, ids).unwrap(), "{ids:?}");
    let oracle = Oracle { graph };
    let set: BTreeSet<_> = ids.iter().cloned().collect();
    assert!(oracle.consistent(&set) && oracle.closed(&set) && maximal_by_definition(&oracle, &set), "{ids:?}");
    assert_eq!(t.id, timeline_id(graph.run_id(), ids));
}

#[test]
fn enumeration_matches_brute_force() {
    for seed in 0..200 {
        let g = random_graph(seed, 14);
        let oracle = Oracle { graph: &g };
        let expected = oracle.all_timelines();
        let got: Vec<BTreeSet<InstanceId>> =
            enumerate_timelines(&g).unwrap().into_iter().map(|t| t.into_iter().collect()).collect();
        let got_set: BTreeSet<_> = got.iter().cloned().collect();
        assert_eq!(got.len(), got_set.len(), "seed {seed}: duplicates");
        assert_eq!(got_set, expected, "seed {seed}");
    }
}

#[test]
fn extracted_timelines_are_sound() {
    let started = Instant::now();
    for seed in 0..200 {
        let g = random_graph(1000 + seed, 24);
        let c = criterion_for(&g);
        let exact = extract_top_k(&g, &c, &DiversityConfig::new(4, 0.5)).unwrap();
        let beam =
            extract_top_k(&g, &c, &DiversityConfig { beam_width: 3, oracle_limit: 0, ..DiversityConfig::new(4, 0.5) })
                .unwrap();
        assert!(!exact.is_empty() && !beam.is_empty());
        for t in exact.iter().chain(&beam) {
            assert_sound(&g, t);
        }
    }
    assert!(started.elapsed() < Duration::from_secs(30));
}

#[test]
fn lambda_zero_top_one_is_oracle_best() {
    let started = Instant::now();
    for seed in 0..200 {
        let g = random_graph(1000 + seed, 24);
        let c = criterion_for(&g);
        let all = enumerate_timelines(&g).unwrap();
        let best = all.iter().map(|t| score_timeline(&g, t, &c).unwrap()).fold(f64::NEG_INFINITY, f64::max);
        let top = extract_top_k(&g, &c, &DiversityConfig::new(1, 0.0)).unwrap();
        assert_eq!(top[0].score, best, "seed {seed}");

        let members: BTreeSet<_> = all.into_iter().collect();
        for t in extract_top_k(&g, &c, &DiversityConfig::new(6, 0.3)).unwrap() {
            assert!(members.contains(&t.node_ids), "seed {seed}");
        }
    }
    assert!(started.elapsed() < Duration::from_secs(60));
}

#[test]
fn beam_finds_oracle_best_when_wide_enough() {
    for seed in 0..50 {
        let g = random_graph(5000 + seed, 16);
        let c = criterion_for(&g);
        let exact = extract_top_k(&g, &c, &DiversityConfig::new(1, 0.0)).unwrap();
        let beam = extract_top_k(
            &g,
            &c,
            &DiversityConfig { beam_width: 1 << 16, oracle_limit: 0, ..DiversityConfig::new(1, 0.0) },
        )
        .unwrap();
        assert_eq!(exact[0].score, beam[0].score, "seed {seed}");
    }
}

#[test]
fn two_branch_fixture() {
    let g = two_branch();
    let id = |s: &str| InstanceId::new(s);
    let expected: BTreeSet<BTreeSet<InstanceId>> =
        [[id("m0.0.0"), id("m1.0.0")].into_iter().collect(), [id("m0.0.1"), id("m1.0.1")].into_iter().collect()]
            .into_iter()
            .collect();
    assert_eq!(Oracle { graph: &g }.all_timelines(), expected);
    let got: BTreeSet<BTreeSet<InstanceId>> =
        enumerate_timelines(&g).unwrap().into_iter().map(|t| t.into_iter().collect()).collect();
    assert_eq!(got, expected);

    assert!(!is_maximal(&g, &[id("m0.0.0")]).unwrap());
    assert_eq!(is_maximal(&g, &[id("m1.0.0")]), Err(TimelineError::InconsistentInput));

    let c = PreferenceCriterion::maximize("m1", "x");
    let both = extract_top_k(&g, &c, &DiversityConfig::new(2, 1.0)).unwrap();
    let got: BTreeSet<BTreeSet<InstanceId>> = both.iter().map(|t| t.node_ids.iter().cloned().collect()).collect();
    assert_eq!(got, expected);
    assert_eq!(extract_top_k(&g, &c, &DiversityConfig::new(10, 0.5)).unwrap().len(), 2);
    let best = extract_top_k(&g, &c, &DiversityConfig::new(1, 0.0)).unwrap();
    assert_eq!(best[0].node_ids, vec![id("m0.0.0"), id("m1.0.0")]);
    assert_eq!(best[0].score, 5.0);
}

#[test]
fn predicate_examples() {
    let g = two_branch();
    let id = |s: &str| InstanceId::new(s);
    assert!(is_consistent(&g, &[]).unwrap());
    assert!(!is_consistent(&g, &[id("m0.0.0"), id("m0.0.1")]).unwrap());
    assert!(is_consistent(&g, &[id("m0.0.0"), id("m1.0.1")]).unwrap());
    assert!(is_causally_closed(&g, &[id("m0.0.0"), id("m0.0.1")]).unwrap());
    assert!(!is_causally_closed(&g, &[id("m1.0.0")]).unwrap());
    assert!(matches!(is_consistent(&g, &[id("nope")]), Err(TimelineError::UnknownInstance(_))));
    for n in g.nodes() {
        let prov = g.provenance(&n.id).unwrap();
        let ids: Vec<_> = prov.nodes.iter().map(|n| n.id.clone()).collect();
        assert!(is_causally_closed(&g, &ids).unwrap());
    }
}

#[test]
fn linear_chain_and_empty_graph() {
    let flow = common::chain_flow(3, 2, 2);
    let mut g = EnsembleGraph::new(common::header_for(flow.clone(), "chain"));
    let mut prev: Option<timeweave::SimulationInstance> = None;
    for j in 0..3 {
        let n = common::instance(&format!("m{j}"), 0, 0, TickWindow::new(0, 2), vec![1.0, 2.0]);
        let edges = prev.iter().map(|p| common::edge(p, &n.id)).collect();
        g.insert(n.clone(), edges).unwrap();
        prev = Some(n);
    }
    let all = enumerate_timelines(&g).unwrap();
    assert_eq!(all.len(), 1);
    assert_eq!(all[0].len(), 3);
    assert!(is_timeline(&g, &all[0]).unwrap());

    let empty = EnsembleGraph::new(common::header_for(flow, "empty"));
    assert_eq!(enumerate_timelines(&empty).unwrap(), vec![Vec::<InstanceId>::new()]);
    let t = extract_top_k(&empty, &PreferenceCriterion::maximize("m0", "x"), &DiversityConfig::new(3, 0.5)).unwrap();
    assert_eq!(t.len(), 1);
    assert!(t[0].node_ids.is_empty());
}

#[test]
fn too_large_for_enumeration() {
    let g = random_graph(7, 24);
    let limit = g.len() - 1;
    assert!(matches!(timeweave::timeline::enumerate_with_limit(&g, limit), Err(TimelineError::TooLarge { .. })));
}

#[test]
fn scores_match_direct_recomputation() {
    let g = two_branch();
    let id = |s: &str| InstanceId::new(s);
    let t1 = [id("m0.0.0"), id("m1.0.0")];
    let t2 = [id("m0.0.1"), id("m1.0.1")];
    let mean = |i: &InstanceId| {
        let v = g.node(i).unwrap().output("x").unwrap().values();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let c = PreferenceCriterion::maximize("m1", "x");
    assert_eq!(score_timeline(&g, &t1, &c).unwrap(), mean(&t1[1]));
    assert_eq!(score_timeline(&g, &t2, &c).unwrap(), mean(&t2[1]));

    let zero =
        PreferenceCriterion { terms: vec![PreferenceTerm { weight: 0.0, ..c.terms[0].clone() }], coverage_weight: 0.0 };
    assert_eq!(score_timeline(&g, &t1, &zero).unwrap(), 0.0);

    let target = g.node(&t1[0]).unwrap().output("x").unwrap().values().to_vec();
    let matching = PreferenceCriterion {
        terms: vec![PreferenceTerm {
            model: "m0".into(),
            variable: "x".into(),
            direction: Direction::Match(target),
            weight: 1.0,
            component: None,
        }],
        coverage_weight: 0.0,
    };
    assert_eq!(score_timeline(&g, &t1, &matching).unwrap(), 0.0);
    assert_eq!(score_timeline(&g, &t2, &matching).unwrap(), -1.0);

    let unknown = PreferenceCriterion::maximize("m1", "nope");
    assert!(matches!(score_timeline(&g, &t1, &unknown), Err(TimelineError::UnknownVariable { .. })));
}

#[test]
fn stitching_rules() {
    let flow = common::chain_flow(1, 3, 2);
    let mut g = EnsembleGraph::new(common::header_for(flow, "stitch"));
    let a = common::instance("m0", 0, 0, TickWindow::new(0, 3), vec![1.0, 2.0, 3.0]);
    let b = common::instance("m0", 1, 0, TickWindow::new(2, 5), vec![7.0, 8.0, 9.0]);
    g.insert(a.clone(), vec![]).unwrap();
    g.insert(b.clone(), vec![]).unwrap();

    let one = timeline_series(&g, std::slice::from_ref(&a.id), "m0", "x").unwrap();
    assert_eq!(&one.values[..3], &[Some(1.0), Some(2.0), Some(3.0)]);
    assert!(one.values[3..].iter().all(Option::is_none));

    let both = timeline_series(&g, &[b.id.clone(), a.id.clone()], "m0", "x").unwrap();
    assert_eq!(&both.values[..5], &[Some(1.0), Some(2.0), Some(7.0), Some(8.0), Some(9.0)]);
    assert_eq!(both.window, TickWindow::new(0, common::HORIZON as i64));
}

fn relabeled(g: &EnsembleGraph, f: impl Fn(&InstanceId) -> InstanceId) -> EnsembleGraph {
    let mut out = EnsembleGraph::new(g.header().clone());
    for (i, n) in g.nodes().iter().enumerate() {
        let mut n2 = n.clone();
        n2.id = f(&n.id);
        n2.state_parent = n.state_parent.as_ref().map(&f);
        let edges = g
            .incoming_edges(i)
            .map(|e| timeweave::store::DataEdge { from: f(&e.from), to: f(&e.to), ..e.clone() })
            .collect();
        out.insert(n2, edges).unwrap();
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_is_invariant_under_relabeling(seed in 0u64..10_000) {
        let g = random_graph(seed, 16);
        let map = |id: &InstanceId| InstanceId::new(format!("z{}", id.as_str().chars().rev().collect::<String>()));
        let h = relabeled(&g, map);
        let c = criterion_for(&g);
        for t in enumerate_timelines(&g).unwrap() {
            let mapped: Vec<_> = t.iter().map(map).collect();
            prop_assert_eq!(score_timeline(&g, &t, &c).unwrap(), score_timeline(&h, &mapped, &c).unwrap());
            prop_assert!(is_timeline(&h, &mapped).unwrap());
        }
    }

    #[test]
    fn pair_similarity_non_increasing_in_lambda(
        pool in prop::collection::vec((prop::collection::btree_set(0u8..8, 0..6), -5.0f64..5.0), 2..12),
        l1 in 0.0f64..=1.0,
        l2 in 0.0f64..=1.0,
    ) {
        let pool: Vec<Timeline> = pool
            .into_iter()
            .map(|(ids, score)| {
                let node_ids: Vec<InstanceId> = ids.into_iter().map(|i| InstanceId::new(format!("n{i}"))).collect();
                Timeline { id: timeline_id("r", &node_ids), run_id: "r".into(), node_ids, score, coverage: 0.0 }
            })
            .collect();
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let a = mmr_select(pool.clone(), 2, lo);
        let b = mmr_select(pool, 2, hi);
        if a.len() == 2 && b.len() == 2 {
            prop_assert!(jaccard(&b[0].node_ids, &b[1].node_ids) <= jaccard(&a[0].node_ids, &a[1].node_ids) + 1e-12);
        }
    }
}

#[test]
fn lambda_one_takes_disjoint_equal_pair() {
    let mk = |ids: &[&str], score: f64| {
        let node_ids: Vec<InstanceId> = ids.iter().map(|s| InstanceId::new(*s)).collect();
        Timeline { id: timeline_id("r", &node_ids), run_id: "r".into(), node_ids, score, coverage: 0.0 }
    };
    let pool = vec![mk(&["a", "b"], 1.0), mk(&["a", "c"], 1.0), mk(&["d", "e"], 1.0)];
    let got = mmr_select(pool, 2, 1.0);
    assert_eq!(jaccard(&got[0].node_ids, &got[1].node_ids), 0.0);
    assert_eq!(jaccard(&[], &[]), 1.0);
}
