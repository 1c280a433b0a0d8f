//! Continuous execution of a compiled plan into an ensemble store.
//!
//! Stages run in order. Within a stage, the sampler is called serially per
//! task, the selected instances execute on a work pool, and results are
//! committed one by one in a fixed order, so the persisted log does not
//! depend on pool scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::engine::config::{ConfigError, RunConfig};
use crate::engine::plan::{compile_plan, ExecutionPlan, PlanError, Task};
use crate::engine::registry::{execute_instance, ModelRegistry, ModelState};
use crate::engine::sampling::{sample_instances, GroupInfo, ParameterVector, SampleContext, SampleError};
use crate::model::FlowGraph;
use crate::series::{align_inputs, AlignError, AlignTarget};
use crate::store::{
    DataEdge, EnsembleStore, InstanceId, InstanceStatus, RunHandle, RunHeader, RunStatus, SimulationInstance,
    StoreError,
};
use crate::validate::{validate_flow_with, Violation};
use crate::window::{Tick, TickWindow};
use crate::Series;

/// Name of the optional output variable the drop rule ranks groups by.
pub const DROP_SCORE_VAR: &str = "drop_score";

/// Environment variable holding the work-pool size.
pub const WORKERS_ENV: &str = "TIMEWEAVE_WORKERS";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageProgress {
    pub stage: usize,
    pub stages: usize,
    pub tasks: usize,
    pub executed: usize,
    pub failed: usize,
    pub dropped: usize,
}

/// Called after each execution stage.
pub type StageCallback = Arc<dyn Fn(&StageProgress) + Send + Sync>;

#[derive(Clone, Default)]
pub struct RunOptions {
    /// Work-pool size; falls back to `TIMEWEAVE_WORKERS`, then to one thread
    /// per core.
    pub workers: Option<usize>,
    pub on_stage: Option<StageCallback>,
}

impl std::fmt::Debug for RunOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunOptions").field("workers", &self.workers).finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub run_id: String,
    pub status: RunStatus,
    pub handle: Arc<RunHandle>,
}

#[derive(Debug, thiserror::Error)]
pub enum HaltReason {
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid flow: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidFlow(Vec<Violation>),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("work pool: {0}")]
    Pool(String),
    /// The run started but stopped early; its partial graph is persisted and
    /// marked incomplete.
    #[error("run {run_id} halted: {reason}")]
    Halted { run_id: String, reason: HaltReason },
}

/// Content address of a run: SHA-256 over the code version and the
/// serialized configuration, first 16 hex digits.
pub fn run_id_for(config: &RunConfig) -> String {
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(config).expect("configs serialize"));
    hex::encode(h.finalize())[..16].to_owned()
}

/// Validates, compiles and executes `config`, writing every instance to a
/// new run in `store`.
pub fn run_ensemble(
    config: &RunConfig,
    store: &EnsembleStore,
    registry: &ModelRegistry,
    options: &RunOptions,
) -> Result<RunOutcome, RunError> {
    config.check()?;
    let violations = validate_flow_with(&config.flow, registry);
    if !violations.is_empty() {
        return Err(RunError::InvalidFlow(violations));
    }
    let plan = compile_plan(&config.flow, config.horizon)?;
    let run_id = run_id_for(config);
    let handle = store.create_run(RunHeader::new(run_id.clone(), config.clone()))?;

    if plan.is_empty() {
        handle.finish(RunStatus::CompleteTrivial)?;
        return Ok(RunOutcome { run_id, status: RunStatus::CompleteTrivial, handle });
    }

    let workers = options.workers.or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok())).unwrap_or(0);
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| RunError::Pool(e.to_string()))?;

    let mut exec = Executor::new(config, registry, &plan, &handle);
    let result = (|| -> Result<(), HaltReason> {
        for (si, stage) in plan.stages.iter().enumerate() {
            let progress = pool.install(|| exec.run_stage(stage))?;
            if let Some(cb) = &options.on_stage {
                cb(&StageProgress { stage: si, stages: plan.stages.len(), tasks: stage.len(), ..progress });
            }
        }
        Ok(())
    })();
    match result {
        Ok(()) => {
            handle.finish(RunStatus::Complete)?;
            Ok(RunOutcome { run_id, status: RunStatus::Complete, handle })
        }
        Err(reason) => {
            // Best effort: the halt reason matters more than a failed end record.
            let _ = handle.finish(RunStatus::Incomplete);
            Err(RunError::Halted { run_id, reason })
        }
    }
}

/// A committed ok instance as seen by its descendants.
struct Live {
    id: InstanceId,
    /// Task index → committed instance for every task in the ancestry,
    /// itself included.
    lineage: BTreeMap<usize, InstanceId>,
    outputs: Vec<Series>,
    state: Option<ModelState>,
    rank: u64,
    drop_score: Option<f64>,
}

/// One consistent choice of parent instances for a task.
struct Group {
    /// Parallel to `Task::deps`: index into the dependency's live instances.
    picks: Vec<usize>,
    lineage: BTreeMap<usize, InstanceId>,
}

struct Job {
    id: InstanceId,
    params: ParameterVector,
    group: Option<usize>,
    inputs: Vec<Series>,
    edges: Vec<DataEdge>,
}

/// Everything sampled for one task before execution.
struct Batch {
    task: usize,
    groups: Vec<Group>,
    markers: Vec<(InstanceId, usize)>,
    jobs: Vec<Job>,
}

struct Executor<'a> {
    config: &'a RunConfig,
    flow: &'a FlowGraph,
    registry: &'a ModelRegistry,
    plan: &'a ExecutionPlan,
    handle: &'a RunHandle,
    /// Ok instances per task, in rank order.
    live: Vec<Vec<Live>>,
    /// Other tasks of the same model whose output windows overlap.
    overlapping: Vec<Vec<usize>>,
}

impl<'a> Executor<'a> {
    fn new(config: &'a RunConfig, registry: &'a ModelRegistry, plan: &'a ExecutionPlan, handle: &'a RunHandle) -> Self {
        let mut overlapping = vec![Vec::new(); plan.tasks.len()];
        for (i, a) in plan.tasks.iter().enumerate() {
            for (j, b) in plan.tasks.iter().enumerate() {
                if i != j && a.model == b.model && a.windows.output.intersects(&b.windows.output) {
                    overlapping[i].push(j);
                }
            }
        }
        Self {
            config,
            flow: &config.flow,
            registry,
            plan,
            handle,
            live: (0..plan.tasks.len()).map(|_| Vec::new()).collect(),
            overlapping,
        }
    }

    fn run_stage(&mut self, stage: &[usize]) -> Result<StageProgress, HaltReason> {
        let mut progress =
            StageProgress { stage: 0, stages: 0, tasks: stage.len(), executed: 0, failed: 0, dropped: 0 };
        let mut batches = Vec::new();
        for &t in stage {
            if let Some(batch) = self.sample_task(t)? {
                batches.push(batch);
            }
        }

        let work: Vec<(usize, usize)> =
            batches.iter().enumerate().flat_map(|(b, batch)| (0..batch.jobs.len()).map(move |j| (b, j))).collect();
        let results: Vec<_> = work
            .par_iter()
            .map(|&(b, j)| {
                let batch = &batches[b];
                let job = &batch.jobs[j];
                let task = &self.plan.tasks[batch.task];
                let model = &self.flow.nodes[task.model];
                let state = job.group.and_then(|g| self.state_of(task, &batch.groups[g]));
                execute_instance(self.registry, model, task.step, &job.params, &job.inputs, state)
            })
            .collect();

        let mut results = results.into_iter();
        for batch in batches {
            let t = batch.task;
            let task = &self.plan.tasks[t];
            for (id, g) in &batch.markers {
                let group = &batch.groups[*g];
                let edges = self.edges_for(task, group, id);
                let node = self.node(
                    t,
                    id.clone(),
                    ParameterVector::new(),
                    String::new(),
                    InstanceStatus::Dropped,
                    self.state_parent_id(task, Some(group)),
                );
                self.handle.append(node, edges)?;
                progress.dropped += 1;
            }
            for job in batch.jobs {
                let group = job.group.map(|g| &batch.groups[g]);
                let state_parent = self.state_parent_id(task, group);
                match results.next().expect("one result per job") {
                    Ok(output) => {
                        let mut node = self.node(
                            t,
                            job.id.clone(),
                            job.params,
                            digest(&job.inputs),
                            InstanceStatus::Ok,
                            state_parent,
                        );
                        node.outputs = output.outputs.clone();
                        self.handle.append(node, job.edges)?;
                        let mut lineage = group.map(|g| g.lineage.clone()).unwrap_or_default();
                        lineage.insert(t, job.id.clone());
                        let drop_score = output
                            .outputs
                            .iter()
                            .find(|s| s.variable() == DROP_SCORE_VAR)
                            .map(|s| s.values().iter().sum::<f64>() / s.values().len() as f64);
                        let rank = self.live[t].len() as u64;
                        self.live[t].push(Live {
                            id: job.id,
                            lineage,
                            outputs: output.outputs,
                            state: output.state,
                            rank,
                            drop_score,
                        });
                        progress.executed += 1;
                    }
                    Err(failure) => {
                        let mut node =
                            self.node(t, job.id, job.params, digest(&job.inputs), InstanceStatus::Failed, state_parent);
                        node.error = Some(failure.reason);
                        self.handle.append(node, job.edges)?;
                        progress.failed += 1;
                    }
                }
            }
        }
        Ok(progress)
    }

    /// Builds input groups, runs the sampler and aligns inputs for one task.
    /// `None` when an upstream task left nothing to build on.
    fn sample_task(&self, t: usize) -> Result<Option<Batch>, HaltReason> {
        let task = &self.plan.tasks[t];
        let model = &self.flow.nodes[task.model];
        if task.deps.iter().any(|&d| self.live[d].is_empty()) {
            return Ok(None);
        }
        let groups = self.groups(t);
        let infos: Vec<GroupInfo> = if task.deps.is_empty() {
            vec![GroupInfo::source()]
        } else {
            groups.iter().map(|g| self.group_info(task, g)).collect()
        };
        let policy = self.config.policy(&model.id).expect("policies checked");
        let ctx = SampleContext { run_seed: self.config.seed, model_id: &model.id, step: task.step };
        let outcome = sample_instances(model, &infos, policy, ctx)?;

        let markers = outcome
            .dropped
            .iter()
            .enumerate()
            .map(|(j, &g)| (InstanceId(format!("{}.{}.x{j}", model.id, task.step)), g))
            .collect();
        let mut jobs = Vec::with_capacity(outcome.selected.len());
        for (rank, (params, g)) in outcome.selected.into_iter().enumerate() {
            let id = InstanceId(format!("{}.{}.{rank}", model.id, task.step));
            let (group, inputs, edges) = match groups.get(g) {
                Some(group) => (Some(g), self.aligned_inputs(task, group)?, self.edges_for(task, group, &id)),
                None => (None, Vec::new(), Vec::new()),
            };
            jobs.push(Job { id, params, group, inputs, edges });
        }
        Ok(Some(Batch { task: t, groups, markers, jobs }))
    }

    /// All consistent combinations of one live instance per dependency task,
    /// in lexicographic rank order.
    fn groups(&self, t: usize) -> Vec<Group> {
        let deps = &self.plan.tasks[t].deps;
        let mut out = Vec::new();
        if deps.is_empty() {
            return out;
        }
        let mut picks = Vec::with_capacity(deps.len());
        self.extend_groups(deps, &mut picks, BTreeMap::new(), &mut out);
        out
    }

    fn extend_groups(
        &self,
        deps: &[usize],
        picks: &mut Vec<usize>,
        lineage: BTreeMap<usize, InstanceId>,
        out: &mut Vec<Group>,
    ) {
        let Some(&dep) = deps.get(picks.len()) else {
            out.push(Group { picks: picks.clone(), lineage });
            return;
        };
        // A dependency already in the lineage admits only that instance.
        let forced = lineage.get(&dep);
        for (i, inst) in self.live[dep].iter().enumerate() {
            if forced.is_some_and(|id| *id != inst.id) {
                continue;
            }
            if let Some(merged) = self.merge(&lineage, &inst.lineage) {
                picks.push(i);
                self.extend_groups(deps, picks, merged, out);
                picks.pop();
            }
        }
    }

    /// Union of two lineages, or `None` if it would hold two instances of one
    /// task or of two overlapping same-model tasks.
    fn merge(
        &self,
        a: &BTreeMap<usize, InstanceId>,
        b: &BTreeMap<usize, InstanceId>,
    ) -> Option<BTreeMap<usize, InstanceId>> {
        let mut merged = a.clone();
        for (&task, id) in b {
            match merged.get(&task) {
                Some(existing) if existing != id => return None,
                Some(_) => {}
                None => {
                    if self.overlapping[task].iter().any(|o| merged.contains_key(o)) {
                        return None;
                    }
                    merged.insert(task, id.clone());
                }
            }
        }
        Some(merged)
    }

    fn group_info(&self, task: &Task, group: &Group) -> GroupInfo {
        let parents = task.deps.iter().zip(&group.picks).map(|(&d, &i)| &self.live[d][i]);
        let mut key = Vec::new();
        let mut ranks = Vec::new();
        let mut score: Option<f64> = None;
        for p in parents {
            key.push(p.id.as_str());
            ranks.push(p.rank);
            if let Some(s) = p.drop_score {
                *score.get_or_insert(0.0) += s;
            }
        }
        let top = ranks.iter().copied().max().unwrap_or(0);
        let shortfall = ranks.iter().map(|r| top - r).sum();
        GroupInfo { key: key.join(","), priority: (top, shortfall), drop_score: score }
    }

    fn parent(&self, task: &Task, group: &Group, dep_task: usize) -> &Live {
        let k = task.deps.iter().position(|&d| d == dep_task).expect("producer is a dependency");
        &self.live[dep_task][group.picks[k]]
    }

    fn state_of(&self, task: &Task, group: &Group) -> Option<&ModelState> {
        task.state_parent.and_then(|sp| self.parent(task, group, sp).state.as_ref())
    }

    fn state_parent_id(&self, task: &Task, group: Option<&Group>) -> Option<InstanceId> {
        let (sp, group) = (task.state_parent?, group?);
        Some(self.parent(task, group, sp).id.clone())
    }

    /// Inputs in declaration order, resampled to the model's input scope.
    fn aligned_inputs(&self, task: &Task, group: &Group) -> Result<Vec<Series>, AlignError> {
        let model = &self.flow.nodes[task.model];
        let mut inputs = Vec::with_capacity(model.inputs.len());
        for var in &model.inputs {
            let input = task
                .inputs
                .iter()
                .find(|i| self.flow.edges[i.edge].input_var == var.name)
                .expect("validated flows feed every input");
            let edge = &self.flow.edges[input.edge];
            let mut available = Vec::new();
            if input.window.lo < 0 {
                let before = TickWindow::new(input.window.lo, input.window.hi.min(0));
                let fill = edge.initial.unwrap_or(0.0);
                available.push(Series::constant(edge.output_var.clone(), before, 1, var.kind.width(), fill)?);
            }
            for &p in &input.producers {
                let parent = self.parent(task, group, p);
                let series = parent
                    .outputs
                    .iter()
                    .find(|s| s.variable() == edge.output_var)
                    .expect("execute_instance checks declared outputs");
                available.push(series.clone());
            }
            let target = AlignTarget {
                variable: var.name.clone(),
                window: input.window,
                resolution: model.input_scope.resolution,
            };
            inputs.push(align_inputs(&target, &available)?.shifted(edge.lag as Tick));
        }
        Ok(inputs)
    }

    fn edges_for(&self, task: &Task, group: &Group, to: &InstanceId) -> Vec<DataEdge> {
        let mut edges = BTreeSet::new();
        for input in &task.inputs {
            let edge = &self.flow.edges[input.edge];
            for &p in &input.producers {
                let producer = &self.plan.tasks[p];
                let Some(window) = producer.windows.output.intersection(&input.window) else { continue };
                edges.insert(DataEdge {
                    from: self.parent(task, group, p).id.clone(),
                    to: to.clone(),
                    variable: edge.output_var.clone(),
                    window,
                });
            }
        }
        edges.into_iter().collect()
    }

    fn node(
        &self,
        t: usize,
        id: InstanceId,
        params: ParameterVector,
        inputs_digest: String,
        status: InstanceStatus,
        state_parent: Option<InstanceId>,
    ) -> SimulationInstance {
        let task = &self.plan.tasks[t];
        SimulationInstance {
            id,
            model_id: self.flow.nodes[task.model].id.clone(),
            step: task.step,
            params,
            window: task.windows.output,
            inputs_digest,
            outputs: Vec::new(),
            status,
            state_parent,
            error: None,
        }
    }
}

fn digest(inputs: &[Series]) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(inputs).expect("series serialize")))
}
