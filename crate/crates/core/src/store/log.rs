//! Line-delimited run log.
//!
//! ```text
//! <run dir>/run.log          one JSON record per line
//! <run dir>/blobs/<sha>.json output series too large to inline
//! ```
//!
//! The first record is the header, then one record per committed instance
//! (with its incoming edges), then an end record carrying the final status.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::store::graph::{DataEdge, EnsembleGraph, RunHeader, RunStatus, SimulationInstance, LOG_FORMAT, LOG_VERSION};
use crate::store::StoreError;
use crate::Series;

pub const LOG_FILE: &str = "run.log";
pub const BLOB_DIR: &str = "blobs";
/// Serialized outputs longer than this many bytes go to a blob.
pub const DEFAULT_BLOB_THRESHOLD: usize = 16 * 1024;

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case", deny_unknown_fields)]
enum Record {
    Header {
        header: RunHeader,
    },
    Node {
        node: SimulationInstance,
        edges: Vec<DataEdge>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        blob: Option<String>,
    },
    End {
        status: RunStatus,
    },
}

fn io_err(path: &Path, e: std::io::Error) -> StoreError {
    StoreError::Io(format!("{}: {e}", path.display()))
}

/// Appends records for one run. Every call returns only after the record
/// reached the file.
pub(crate) struct LogWriter {
    dir: PathBuf,
    out: BufWriter<File>,
    blob_threshold: usize,
    sync: bool,
}

impl LogWriter {
    /// Starts a fresh log in `dir` with `header`.
    pub(crate) fn create(
        dir: &Path,
        header: &RunHeader,
        blob_threshold: usize,
        sync: bool,
    ) -> Result<Self, StoreError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(LOG_FILE);
        let file = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| io_err(&path, e))?;
        let mut w = Self { dir: dir.to_owned(), out: BufWriter::new(file), blob_threshold, sync };
        w.write(&Record::Header { header: header.clone() })?;
        Ok(w)
    }

    fn write(&mut self, record: &Record) -> Result<(), StoreError> {
        let path = self.dir.join(LOG_FILE);
        let mut line = serde_json::to_vec(record).map_err(|e| StoreError::Io(e.to_string()))?;
        line.push(b'\n');
        self.out.write_all(&line).map_err(|e| io_err(&path, e))?;
        self.out.flush().map_err(|e| io_err(&path, e))?;
        if self.sync {
            self.out.get_ref().sync_data().map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }

    pub(crate) fn append(&mut self, node: &SimulationInstance, edges: &[DataEdge]) -> Result<(), StoreError> {
        let outputs = serde_json::to_vec(&node.outputs).map_err(|e| StoreError::Io(e.to_string()))?;
        if outputs.len() > self.blob_threshold {
            let digest = hex::encode(Sha256::digest(&outputs));
            let blobs = self.dir.join(BLOB_DIR);
            fs::create_dir_all(&blobs).map_err(|e| io_err(&blobs, e))?;
            let path = blobs.join(format!("{digest}.json"));
            if !path.exists() {
                fs::write(&path, &outputs).map_err(|e| io_err(&path, e))?;
            }
            let mut slim = node.clone();
            slim.outputs.clear();
            self.write(&Record::Node { node: slim, edges: edges.to_vec(), blob: Some(digest) })
        } else {
            self.write(&Record::Node { node: node.clone(), edges: edges.to_vec(), blob: None })
        }
    }

    pub(crate) fn finish(&mut self, status: RunStatus) -> Result<(), StoreError> {
        self.write(&Record::End { status })
    }
}

/// Writes `graph` to `dir` as a complete log, replacing nothing: `dir` must
/// not already hold a log.
pub fn save_run(graph: &EnsembleGraph, dir: &Path) -> Result<(), StoreError> {
    save_run_with(graph, dir, DEFAULT_BLOB_THRESHOLD)
}

pub fn save_run_with(graph: &EnsembleGraph, dir: &Path, blob_threshold: usize) -> Result<(), StoreError> {
    let mut w = LogWriter::create(dir, graph.header(), blob_threshold, false)?;
    for (i, node) in graph.nodes().iter().enumerate() {
        let edges: Vec<DataEdge> = graph.incoming_edges(i).cloned().collect();
        w.append(node, &edges)?;
    }
    if graph.status() != RunStatus::Running {
        w.finish(graph.status())?;
    }
    let path = dir.join(LOG_FILE);
    w.out.get_ref().sync_all().map_err(|e| io_err(&path, e))
}

/// Reads the run log in `dir`.
///
/// A missing or unreadable header is an error. Past the header, the first
/// corrupt record ends the load: the valid prefix is returned with status
/// `Incomplete` and [`EnsembleGraph::load_issue`] set. A log without an end
/// record is likewise incomplete.
pub fn load_run(dir: &Path) -> Result<EnsembleGraph, StoreError> {
    let path = dir.join(LOG_FILE);
    let file = File::open(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => StoreError::UnknownRun(dir.display().to_string()),
        _ => io_err(&path, e),
    })?;
    let mut lines = BufReader::new(file).split(b'\n');
    let first = lines
        .next()
        .transpose()
        .map_err(|e| io_err(&path, e))?
        .ok_or_else(|| StoreError::CorruptLog { line: 1, reason: "empty log".into() })?;
    let header = match serde_json::from_slice::<Record>(&first) {
        Ok(Record::Header { header }) => header,
        Ok(_) => return Err(StoreError::CorruptLog { line: 1, reason: "first record is not a header".into() }),
        Err(e) => return Err(StoreError::CorruptLog { line: 1, reason: e.to_string() }),
    };
    if header.format != LOG_FORMAT || header.version != LOG_VERSION {
        return Err(StoreError::CorruptLog {
            line: 1,
            reason: format!("unsupported log format {} v{}", header.format, header.version),
        });
    }

    let mut graph = EnsembleGraph::new(header);
    let mut ended = false;
    for (n, line) in lines.enumerate() {
        let line_no = n + 2;
        let bytes = match line {
            Ok(b) => b,
            Err(e) => {
                graph.mark_incomplete(format!("line {line_no}: {e}"));
                return Ok(graph);
            }
        };
        if bytes.is_empty() {
            continue;
        }
        if ended {
            graph.mark_incomplete(format!("line {line_no}: record after end record"));
            return Ok(graph);
        }
        let record = match serde_json::from_slice::<Record>(&bytes) {
            Ok(r) => r,
            Err(e) => {
                graph.mark_incomplete(format!("line {line_no}: {e}"));
                return Ok(graph);
            }
        };
        match record {
            Record::Header { .. } => {
                graph.mark_incomplete(format!("line {line_no}: second header"));
                return Ok(graph);
            }
            Record::Node { mut node, edges, blob } => {
                if let Some(digest) = blob {
                    match read_blob(dir, &digest) {
                        Ok(outputs) => node.outputs = outputs,
                        Err(reason) => {
                            graph.mark_incomplete(format!("line {line_no}: {reason}"));
                            return Ok(graph);
                        }
                    }
                }
                if let Err(e) = graph.insert(node, edges) {
                    graph.mark_incomplete(format!("line {line_no}: {e}"));
                    return Ok(graph);
                }
            }
            Record::End { status } => {
                graph.set_status(status);
                ended = true;
            }
        }
    }
    if !ended {
        graph.mark_incomplete("log has no end record".into());
    }
    Ok(graph)
}

fn read_blob(dir: &Path, digest: &str) -> Result<Vec<Series>, String> {
    let path = dir.join(BLOB_DIR).join(format!("{digest}.json"));
    let bytes = fs::read(&path).map_err(|e| format!("blob {digest}: {e}"))?;
    if hex::encode(Sha256::digest(&bytes)) != digest {
        return Err(format!("blob {digest}: digest mismatch"));
    }
    serde_json::from_slice(&bytes).map_err(|e| format!("blob {digest}: {e}"))
}
