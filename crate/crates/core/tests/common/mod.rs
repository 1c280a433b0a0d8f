//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use timeweave::engine::ParameterVector;
use timeweave::store::{DataEdge, RunHeader};
use timeweave::{
    EnsembleGraph, FlowEdge, FlowGraph, InstanceId, InstanceStatus, ModelSpec, RunConfig, SamplingPolicy,
    ScopeDescriptor, Series, SimulationInstance, TickWindow, VariableSpec,
};

pub const HORIZON: u64 = 12;

/// A chain flow `m0 → m1 → …`, every model emitting scalar `x`.
pub fn chain_flow(models: usize, w_out: u64, shift: u64) -> FlowGraph {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for j in 0..models {
        let mut m = ModelSpec::named(format!("m{j}"), "identity");
        m.outputs = vec![VariableSpec::scalar("x", "")];
        m.output_scope = ScopeDescriptor::new(w_out, 1);
        m.shift = shift;
        if j > 0 {
            m.inputs = vec![VariableSpec::scalar("x", "")];
            m.input_scope = ScopeDescriptor::new(w_out, 1);
            edges.push(FlowEdge::new(&format!("m{}", j - 1), "x", &format!("m{j}"), "x"));
        }
        nodes.push(m);
    }
    FlowGraph { name: "chain".into(), nodes, edges }
}

pub fn header_for(flow: FlowGraph, run_id: &str) -> RunHeader {
    let policies: BTreeMap<_, _> = flow.nodes.iter().map(|m| (m.id.clone(), SamplingPolicy::default())).collect();
    RunHeader::new(run_id, RunConfig { flow, horizon: HORIZON, policy_per_model: policies, seed: 0 })
}

pub fn instance(model: &str, step: u64, k: usize, window: TickWindow, values: Vec<f64>) -> SimulationInstance {
    SimulationInstance {
        id: InstanceId::new(format!("{model}.{step}.{k}")),
        model_id: model.into(),
        step,
        params: ParameterVector::new().with("k", k as f64),
        window,
        inputs_digest: String::new(),
        outputs: vec![Series::new("x", window, 1, values).unwrap()],
        status: InstanceStatus::Ok,
        state_parent: None,
        error: None,
    }
}

pub fn edge(from: &SimulationInstance, to: &InstanceId) -> DataEdge {
    DataEdge { from: from.id.clone(), to: to.clone(), variable: "x".into(), window: from.window }
}

/// A random ensemble-like graph of at most `max_nodes` nodes over a chain
/// flow. Instances of one model overlap whenever `w_out > shift`; each
/// non-source instance reads one or two upstream instances of the previous
/// model, sometimes has a state parent, and is occasionally failed.
pub fn random_graph(seed: u64, max_nodes: usize) -> EnsembleGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let models = rng.random_range(1..=3usize);
    let shift = 2;
    let w_out = rng.random_range(2..=3u64);
    let flow = chain_flow(models, w_out, shift);
    let mut g = EnsembleGraph::new(header_for(flow, &format!("rand{seed:04}")));
    let n = rng.random_range(1..=max_nodes);
    let steps = (HORIZON - w_out) / shift + 1;
    let mut ok_by_model: Vec<Vec<SimulationInstance>> = vec![Vec::new(); models];
    let mut used = BTreeSet::new();
    while g.len() < n {
        let j = rng.random_range(0..models);
        let step = rng.random_range(0..steps);
        let k = (0..).find(|k| !used.contains(&(j, step, *k))).unwrap();
        used.insert((j, step, k));
        let lo = (step * shift) as i64;
        let window = TickWindow::new(lo, lo + w_out as i64);
        let values = (0..w_out).map(|_| rng.random_range(0..70) as f64 / 7.0).collect();
        let mut node = instance(&format!("m{j}"), step, k, window, values);
        let mut edges = Vec::new();
        if j > 0 {
            let ups = &ok_by_model[j - 1];
            if ups.is_empty() {
                continue;
            }
            for _ in 0..rng.random_range(1..=2) {
                let p = &ups[rng.random_range(0..ups.len())];
                if !edges.iter().any(|e: &DataEdge| e.from == p.id) {
                    edges.push(edge(p, &node.id));
                }
            }
        }
        let same: Vec<&SimulationInstance> = ok_by_model[j].iter().filter(|m| m.step + 1 == step).collect();
        if !same.is_empty() && rng.random_bool(0.4) {
            node.state_parent = Some(same[rng.random_range(0..same.len())].id.clone());
        }
        if rng.random_bool(0.1) {
            node.status = InstanceStatus::Failed;
            node.outputs.clear();
            node.error = Some("injected".into());
        }
        g.insert(node.clone(), edges).unwrap();
        if node.is_ok() {
            ok_by_model[j].push(node);
        }
    }
    g
}

/// The a1/a2 → b1/b2 fixture: two overlapping `a` instances, each feeding
/// one of two overlapping `b` instances.
pub fn two_branch() -> EnsembleGraph {
    let flow = chain_flow(2, 4, 4);
    let mut g = EnsembleGraph::new(header_for(flow, "twobranch"));
    let w = TickWindow::new(0, 4);
    let a1 = instance("m0", 0, 0, w, vec![1.0; 4]);
    let a2 = instance("m0", 0, 1, w, vec![2.0; 4]);
    let b1 = instance("m1", 0, 0, w, vec![5.0; 4]);
    let b2 = instance("m1", 0, 1, w, vec![3.0; 4]);
    let (e1, e2) = (edge(&a1, &b1.id), edge(&a2, &b2.id));
    g.insert(a1, vec![]).unwrap();
    g.insert(a2, vec![]).unwrap();
    g.insert(b1, vec![e1]).unwrap();
    g.insert(b2, vec![e2]).unwrap();
    g
}

/// Independent predicates over plain id sets, for brute-force oracles.
pub struct Oracle<'g> {
    pub graph: &'g EnsembleGraph,
}

impl Oracle<'_> {
    pub fn parents(&self, id: &InstanceId) -> BTreeSet<InstanceId> {
        let n = self.graph.node(id).unwrap();
        let mut out: BTreeSet<InstanceId> =
            self.graph.edges().iter().filter(|e| &e.to == id).map(|e| e.from.clone()).collect();
        out.extend(n.state_parent.clone());
        out
    }

    pub fn consistent(&self, set: &BTreeSet<InstanceId>) -> bool {
        let nodes: Vec<_> = set.iter().map(|id| self.graph.node(id).unwrap()).collect();
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                if a.model_id == b.model_id && a.window.lo < b.window.hi && b.window.lo < a.window.hi {
                    return false;
                }
            }
        }
        true
    }

    pub fn closed(&self, set: &BTreeSet<InstanceId>) -> bool {
        set.iter().all(|id| self.parents(id).is_subset(set))
    }

    /// Every inclusion-maximal consistent, closed set of ok instances, by
    /// trying all subsets.
    pub fn all_timelines(&self) -> BTreeSet<BTreeSet<InstanceId>> {
        let ok: Vec<InstanceId> = self.graph.nodes().iter().filter(|n| n.is_ok()).map(|n| n.id.clone()).collect();
        assert!(ok.len() <= 16, "brute force is exponential");
        let mut valid = Vec::new();
        for mask in 0u32..(1 << ok.len()) {
            let set: BTreeSet<InstanceId> =
                (0..ok.len()).filter(|i| mask >> i & 1 == 1).map(|i| ok[i].clone()).collect();
            if self.consistent(&set) && self.closed(&set) {
                valid.push(set);
            }
        }
        valid.iter().filter(|s| !valid.iter().any(|t| t.len() > s.len() && s.is_subset(t))).cloned().collect()
    }
}

/// Plain fixed-step RK4 on `[S, E, I, R]` for one isolated city with
/// `rates = [β·c, σ, γ]`, written out independently of the library
/// integrator. Returns the state at every whole tick.
pub fn seir_reference(y0: [f64; 4], rates: [f64; 3], ticks: usize, substeps: usize) -> Vec<[f64; 4]> {
    let [beta_c, sigma, gamma] = rates;
    let n: f64 = y0.iter().sum();
    let f = |y: [f64; 4]| {
        let inf = beta_c * y[2] / n * y[0];
        [-inf, inf - sigma * y[1], sigma * y[1] - gamma * y[2], gamma * y[2]]
    };
    let add = |y: [f64; 4], k: [f64; 4], h: f64| [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2], y[3] + h * k[3]];
    let h = 1.0 / substeps as f64;
    let mut y = y0;
    let mut out = vec![y];
    for _ in 0..ticks {
        for _ in 0..substeps {
            let k1 = f(y);
            let k2 = f(add(y, k1, h / 2.0));
            let k3 = f(add(y, k2, h / 2.0));
            let k4 = f(add(y, k3, h));
            for c in 0..4 {
                y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
        }
        out.push(y);
    }
    out
}

/// Tick and value of the first maximum.
pub fn peak(series: &[f64]) -> (usize, f64) {
    series
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (t, v)| if v > best.1 { (t, v) } else { best })
}
