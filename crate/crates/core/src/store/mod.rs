//! Append-only ensemble graphs and their on-disk run logs.

mod graph;
mod log;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

pub use graph::{
    DataEdge, EnsembleGraph, InstanceId, InstanceStatus, RunHeader, RunStatus, SimulationInstance, SubGraph,
    LOG_FORMAT, LOG_VERSION,
};
pub use log::{load_run, save_run, save_run_with, BLOB_DIR, DEFAULT_BLOB_THRESHOLD, LOG_FILE};

use log::LogWriter;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("instance `{instance}` cites unknown parent `{parent}`")]
    UnknownParent { instance: InstanceId, parent: InstanceId },
    #[error("instance id `{0}` already exists")]
    DuplicateId(InstanceId),
    #[error("edge into `{edge_to}` supplied with instance `{instance}`")]
    EdgeMismatch { instance: InstanceId, edge_to: InstanceId },
    #[error("unknown instance `{0}`")]
    UnknownInstance(InstanceId),
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("run `{0}` already exists")]
    RunExists(String),
    #[error("run `{0}` is closed for writing")]
    Closed(String),
    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("i/o: {0}")]
    Io(String),
}

const META_FILE: &str = "meta.json";

#[derive(serde::Serialize, serde::Deserialize)]
struct RunMeta {
    created_at: u64,
}

/// A directory of runs, one subdirectory per run id.
#[derive(Debug)]
pub struct EnsembleStore {
    root: PathBuf,
    blob_threshold: usize,
    sync: bool,
    runs: Mutex<HashMap<String, Arc<RunHandle>>>,
}

impl EnsembleStore {
    /// Opens (creating if needed) the store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| StoreError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self { root, blob_threshold: DEFAULT_BLOB_THRESHOLD, sync: true, runs: Mutex::new(HashMap::new()) })
    }

    pub fn with_blob_threshold(mut self, bytes: usize) -> Self {
        self.blob_threshold = bytes;
        self
    }

    /// Skips the fsync after each record. Records are still flushed.
    pub fn without_sync(mut self) -> Self {
        self.sync = false;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn contains(&self, run_id: &str) -> bool {
        valid_run_id(run_id) && self.run_dir(run_id).join(LOG_FILE).is_file()
    }

    /// Starts a new run and writes its header.
    pub fn create_run(&self, header: RunHeader) -> Result<Arc<RunHandle>, StoreError> {
        let run_id = header.run_id.clone();
        if !valid_run_id(&run_id) {
            return Err(StoreError::UnknownRun(run_id));
        }
        let mut runs = self.runs.lock().expect("store lock");
        if runs.contains_key(&run_id) || self.contains(&run_id) {
            return Err(StoreError::RunExists(run_id));
        }
        let dir = self.run_dir(&run_id);
        let writer = LogWriter::create(&dir, &header, self.blob_threshold, self.sync)?;
        let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let meta = serde_json::to_vec(&RunMeta { created_at }).expect("meta serializes");
        fs::write(dir.join(META_FILE), meta).map_err(|e| StoreError::Io(e.to_string()))?;
        let handle = Arc::new(RunHandle {
            graph: RwLock::new(Arc::new(EnsembleGraph::new(header))),
            writer: Mutex::new(Some(writer)),
            loaded_len: None,
        });
        runs.insert(run_id, handle.clone());
        Ok(handle)
    }

    /// Handle for an existing run, loading it from disk on first use.
    ///
    /// A run loaded from disk is reloaded when its log has changed size
    /// since, e.g. because another process is still writing it.
    pub fn open_run(&self, run_id: &str) -> Result<Arc<RunHandle>, StoreError> {
        if !valid_run_id(run_id) {
            return Err(StoreError::UnknownRun(run_id.to_owned()));
        }
        let log_len = || fs::metadata(self.run_dir(run_id).join(LOG_FILE)).map(|m| m.len()).ok();
        let mut runs = self.runs.lock().expect("store lock");
        if let Some(h) = runs.get(run_id) {
            if h.loaded_len.is_none() || h.loaded_len == log_len() {
                return Ok(h.clone());
            }
        }
        let loaded_len = log_len();
        let graph = load_run(&self.run_dir(run_id)).map_err(|e| match e {
            StoreError::UnknownRun(_) => StoreError::UnknownRun(run_id.to_owned()),
            other => other,
        })?;
        let handle = Arc::new(RunHandle { graph: RwLock::new(Arc::new(graph)), writer: Mutex::new(None), loaded_len });
        runs.insert(run_id.to_owned(), handle.clone());
        Ok(handle)
    }

    /// Ids of all runs with a log, sorted.
    pub fn list_runs(&self) -> Result<Vec<String>, StoreError> {
        let entries = fs::read_dir(&self.root).map_err(|e| StoreError::Io(e.to_string()))?;
        let mut ids: Vec<String> = entries
            .filter_map(Result::ok)
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| self.contains(id))
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Seconds since the Unix epoch at which the run was created.
    pub fn created_at(&self, run_id: &str) -> Option<u64> {
        let bytes = fs::read(self.run_dir(run_id).join(META_FILE)).ok()?;
        serde_json::from_slice::<RunMeta>(&bytes).ok().map(|m| m.created_at)
    }
}

/// Run ids double as directory names.
fn valid_run_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// Shared access to one run: consistent snapshots for readers and a single
/// serialized writer.
#[derive(Debug)]
pub struct RunHandle {
    graph: RwLock<Arc<EnsembleGraph>>,
    writer: Mutex<Option<LogWriter>>,
    /// Log size when read from disk; `None` for runs this process writes.
    loaded_len: Option<u64>,
}

impl std::fmt::Debug for LogWriter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("LogWriter")
    }
}

impl RunHandle {
    /// The committed graph as of now. Later appends do not affect it.
    pub fn snapshot(&self) -> Arc<EnsembleGraph> {
        self.graph.read().expect("graph lock").clone()
    }

    pub fn run_id(&self) -> String {
        self.snapshot().run_id().to_owned()
    }

    /// Appends one instance; it is on disk before it becomes visible.
    pub fn append(&self, node: SimulationInstance, edges: Vec<DataEdge>) -> Result<InstanceId, StoreError> {
        let mut writer = self.writer.lock().expect("writer lock");
        let w = writer.as_mut().ok_or_else(|| StoreError::Closed(self.run_id()))?;
        self.snapshot().check_append(&node, &edges)?;
        w.append(&node, &edges)?;
        let id = node.id.clone();
        let mut guard = self.graph.write().expect("graph lock");
        Arc::make_mut(&mut guard).insert(node, edges)?;
        Ok(id)
    }

    /// Writes the end record and closes the run for writing.
    pub fn finish(&self, status: RunStatus) -> Result<(), StoreError> {
        let mut writer = self.writer.lock().expect("writer lock");
        let mut w = writer.take().ok_or_else(|| StoreError::Closed(self.run_id()))?;
        w.finish(status)?;
        let mut guard = self.graph.write().expect("graph lock");
        Arc::make_mut(&mut guard).set_status(status);
        Ok(())
    }

    pub fn is_writable(&self) -> bool {
        self.writer.lock().expect("writer lock").is_some()
    }
}
