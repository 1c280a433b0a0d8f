//! Shared setup for the service tests.
#![allow(dead_code)]

#[path = "../../../core/tests/common/mod.rs"]
pub mod fixtures;

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use timeweave::scenario::{demo_config, registry};
use timeweave::store::save_run;
use timeweave::{run_ensemble, EnsembleGraph, EnsembleStore, InstanceId, RunOptions};
use timeweave_service::{router, ServiceConfig};
use tower::ServiceExt;

/// A store holding the demo run and the two-branch fixture; returns the
/// demo run id.
pub fn seeded_store(root: &Path) -> String {
    let store = EnsembleStore::open(root).unwrap();
    let outcome = run_ensemble(&demo_config(), &store, &registry(), &RunOptions::default()).unwrap();
    let fixture = fixtures::two_branch();
    save_run(&fixture, &root.join(fixture.run_id())).unwrap();
    outcome.run_id
}

pub fn app(root: &Path, budget: Duration) -> Router {
    let store = Arc::new(EnsembleStore::open(root).unwrap());
    router(store, ServiceConfig { extract_budget: budget, export_dir: root.join("exports"), static_dir: None })
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(serde_json::to_vec(&b).unwrap())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

/// Checks `value` against the schema the service publishes under `name`.
pub fn assert_schema(schemas: &Value, name: &str, value: &Value) {
    let schema = schemas.get(name).unwrap_or_else(|| panic!("no schema {name}"));
    let validator = jsonschema::validator_for(schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}

/// Ancestors of `id` by reverse breadth-first search over the raw edge
/// list and state parents.
pub fn reverse_reachable(g: &EnsembleGraph, id: &InstanceId) -> BTreeSet<InstanceId> {
    let mut seen = BTreeSet::from([id.clone()]);
    let mut queue = VecDeque::from([id.clone()]);
    while let Some(v) = queue.pop_front() {
        let node = g.node(&v).unwrap();
        let parents = g.edges().iter().filter(|e| e.to == v).map(|e| e.from.clone()).chain(node.state_parent.clone());
        for p in parents {
            if seen.insert(p.clone()) {
                queue.push_back(p);
            }
        }
    }
    seen
}
