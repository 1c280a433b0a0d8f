mod common;

use std::collections::BTreeSet;
use std::io::Write;

use common::random_graph;
use timeweave::store::{load_run, save_run, save_run_with, StoreError, LOG_FILE};
use timeweave::{EnsembleGraph, EnsembleStore, InstanceId, RunStatus};

#[test]
fn save_load_round_trips_random_graphs() {
    for seed in 0..100 {
        let mut g = random_graph(seed, 24);
        g.set_status(RunStatus::Complete);
        let dir = tempfile::tempdir().unwrap();
        // A small blob threshold pushes some outputs into sidecar files.
        let threshold = if seed % 2 == 0 { 64 } else { usize::MAX };
        save_run_with(&g, dir.path(), threshold).unwrap();
        let back = load_run(dir.path()).unwrap();
        assert_eq!(back.canonical_string(), g.canonical_string(), "seed {seed}");
        assert_eq!(back.status(), RunStatus::Complete);
    }
}

#[test]
fn empty_graph_round_trips() {
    let mut g = EnsembleGraph::new(common::header_for(common::chain_flow(2, 2, 2), "empty"));
    g.set_status(RunStatus::CompleteTrivial);
    let dir = tempfile::tempdir().unwrap();
    save_run(&g, dir.path()).unwrap();
    let back = load_run(dir.path()).unwrap();
    assert!(back.is_empty());
    assert_eq!(back, g);
}

#[test]
fn truncated_log_loads_valid_prefix_as_incomplete() {
    let mut g = random_graph(42, 24);
    g.set_status(RunStatus::Complete);
    let dir = tempfile::tempdir().unwrap();
    save_run(&g, dir.path()).unwrap();
    let path = dir.path().join(LOG_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // Header, then one record per node, then the end record.
    assert_eq!(lines.len(), g.len() + 2);

    for keep in 1..=g.len() {
        let cut = lines[..=keep].join("\n");
        let partial = &lines[keep + 1][..lines[keep + 1].len() / 2];
        let mut f = std::fs::File::create(&path).unwrap();
        write!(f, "{cut}\n{partial}").unwrap();
        drop(f);
        let back = load_run(dir.path()).unwrap();
        assert_eq!(back.status(), RunStatus::Incomplete);
        assert_eq!(back.len(), keep);
        assert!(back.load_issue().is_some());
        for (a, b) in back.nodes().iter().zip(g.nodes()) {
            assert_eq!(a, b);
        }
    }

    // A clean cut before the end record is incomplete too.
    std::fs::write(&path, lines[..lines.len() - 1].join("\n") + "\n").unwrap();
    let back = load_run(dir.path()).unwrap();
    assert_eq!(back.status(), RunStatus::Incomplete);
    assert_eq!(back.len(), g.len());
}

#[test]
fn provenance_matches_reverse_reachability() {
    for seed in 0..100 {
        let g = random_graph(300 + seed, 24);
        for n in g.nodes() {
            // Reverse BFS over the raw edge list plus state parents.
            let mut seen: BTreeSet<InstanceId> = BTreeSet::from([n.id.clone()]);
            let mut queue = std::collections::VecDeque::from([n.id.clone()]);
            while let Some(v) = queue.pop_front() {
                let node = g.node(&v).unwrap();
                let parents =
                    g.edges().iter().filter(|e| e.to == v).map(|e| e.from.clone()).chain(node.state_parent.clone());
                for p in parents {
                    if seen.insert(p.clone()) {
                        queue.push_back(p);
                    }
                }
            }
            let prov = g.provenance(&n.id).unwrap();
            let got: BTreeSet<InstanceId> = prov.nodes.iter().map(|m| m.id.clone()).collect();
            assert_eq!(got, seen, "seed {seed} node {}", n.id);
            let expected_edges = g.edges().iter().filter(|e| seen.contains(&e.to)).count();
            assert_eq!(prov.edges.len(), expected_edges);
            if g.parents_of(g.index_of(&n.id).unwrap()).is_empty() {
                assert_eq!(prov.nodes.len(), 1);
            }
        }
    }
}

#[test]
fn append_only_handle_persists_every_record() {
    let dir = tempfile::tempdir().unwrap();
    let store = EnsembleStore::open(dir.path()).unwrap();
    let g = common::two_branch();
    let handle = store.create_run(g.header().clone()).unwrap();
    for (i, n) in g.nodes().iter().enumerate() {
        handle.append(n.clone(), g.incoming_edges(i).cloned().collect()).unwrap();
    }
    let a1 = g.nodes()[0].clone();
    assert!(matches!(handle.append(a1, vec![]), Err(StoreError::DuplicateId(_))));
    let mut orphan = g.nodes()[2].clone();
    orphan.id = InstanceId::new("m1.0.9");
    let edge =
        timeweave::store::DataEdge { to: orphan.id.clone(), from: InstanceId::new("ghost"), ..g.edges()[0].clone() };
    assert!(matches!(handle.append(orphan, vec![edge]), Err(StoreError::UnknownParent { .. })));

    // Without an end record the run reads back as incomplete but whole.
    let reopened = load_run(&store.run_dir(&handle.run_id())).unwrap();
    assert_eq!(reopened.len(), 4);
    assert_eq!(reopened.status(), RunStatus::Incomplete);

    handle.finish(RunStatus::Complete).unwrap();
    assert!(!handle.is_writable());
    let reopened = store.open_run(&handle.run_id()).unwrap().snapshot();
    assert_eq!(reopened.status(), RunStatus::Complete);
    assert_eq!(reopened.canonical_string(), handle.snapshot().canonical_string());
    assert_eq!(store.list_runs().unwrap(), vec![handle.run_id()]);
}

#[test]
fn demo_run_reloads_identically() {
    use timeweave::scenario::{demo_config, registry};
    let dir = tempfile::tempdir().unwrap();
    // Tiny threshold: every output goes through a blob.
    let store = EnsembleStore::open(dir.path()).unwrap().with_blob_threshold(16);
    let outcome = timeweave::run_ensemble(&demo_config(), &store, &registry(), &Default::default()).unwrap();
    let live = outcome.handle.snapshot();
    let loaded = EnsembleStore::open(dir.path()).unwrap().open_run(&outcome.run_id).unwrap().snapshot();
    assert_eq!(loaded.canonical_string(), live.canonical_string());
    assert!(std::fs::read_dir(store.run_dir(&outcome.run_id).join(timeweave::store::BLOB_DIR)).unwrap().count() > 0);
}

#[test]
fn reopening_picks_up_a_growing_log() {
    let dir = tempfile::tempdir().unwrap();
    let writer = EnsembleStore::open(dir.path()).unwrap();
    let reader = EnsembleStore::open(dir.path()).unwrap();
    let g = common::two_branch();
    let handle = writer.create_run(g.header().clone()).unwrap();
    let run = handle.run_id();
    handle.append(g.nodes()[0].clone(), vec![]).unwrap();
    assert_eq!(reader.open_run(&run).unwrap().snapshot().len(), 1);
    handle.append(g.nodes()[1].clone(), vec![]).unwrap();
    assert_eq!(reader.open_run(&run).unwrap().snapshot().len(), 2);
    handle.finish(RunStatus::Complete).unwrap();
    assert_eq!(reader.open_run(&run).unwrap().snapshot().status(), RunStatus::Complete);
}
