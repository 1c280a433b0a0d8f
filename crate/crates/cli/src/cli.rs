//! Command-line front end.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use timeweave::engine::{compile_plan, RunConfigFile, StageProgress};
use timeweave::store::{RunStatus, StoreError};
use timeweave::timeline::{write_export, TimelineExport, DEFAULT_BEAM_WIDTH, DEFAULT_ORACLE_LIMIT};
use timeweave::{
    extract_top_k, run_ensemble, scenario, validate_flow_with, DiversityConfig, EnsembleStore, FlowGraph,
    PreferenceCriterion, RunError, RunOptions, Timeline,
};

use crate::server::{router, ServiceConfig};

pub const STORE_ENV: &str = "TIMEWEAVE_STORE";
pub const DEFAULT_STORE: &str = "timeweave-store";

#[derive(Debug, Parser)]
#[command(name = "timeweave", version, about = "Run coupled simulation ensembles and extract timelines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct StoreArg {
    /// Store root directory.
    #[arg(long, env = STORE_ENV, default_value = DEFAULT_STORE)]
    pub store: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub run: String,
    /// Preference criterion, JSON or TOML by extension.
    #[arg(long)]
    pub criterion: PathBuf,
    #[arg(short, long, default_value_t = 1)]
    pub k: usize,
    #[arg(short, long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_BEAM_WIDTH)]
    pub beam_width: usize,
    /// Graphs up to this many nodes are enumerated exactly.
    #[arg(long, default_value_t = DEFAULT_ORACLE_LIMIT)]
    pub oracle_limit: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute a flow and store the ensemble; prints the run id.
    Run {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Work-pool size.
        #[arg(long, env = timeweave::engine::run::WORKERS_ENV)]
        workers: Option<usize>,
        #[command(flatten)]
        store: StoreArg,
    },
    /// Extract diverse timelines and write one export file each.
    Timelines {
        #[command(flatten)]
        extract: ExtractArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        store: StoreArg,
    },
    /// Write the export file of one timeline from an extraction.
    Export {
        #[command(flatten)]
        extract: ExtractArgs,
        #[arg(long)]
        timeline: String,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        store: StoreArg,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "TIMEWEAVE_BIND", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Extraction time budget before answering 202.
        #[arg(long, env = "TIMEWEAVE_EXTRACT_BUDGET_MS", default_value_t = 5000)]
        budget_ms: u64,
        /// Where exports go; defaults to `<store>/exports`.
        #[arg(long, env = "TIMEWEAVE_EXPORT_DIR")]
        export_dir: Option<PathBuf>,
        /// Static assets to serve outside `/api`.
        #[arg(long, env = "TIMEWEAVE_STATIC_DIR")]
        static_dir: Option<PathBuf>,
        #[command(flatten)]
        store: StoreArg,
    },
    /// Check a flow, and optionally a run config against it.
    Validate {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Runs the parsed command; errors are printed to stderr.
pub fn execute(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Run { flow, config, workers, store } => cmd_run(&flow, &config, workers, &store.store),
        Command::Timelines { extract, out, store } => cmd_timelines(&extract, &out, &store.store),
        Command::Export { extract, timeline, out, store } => cmd_export(&extract, &timeline, &out, &store.store),
        Command::Serve { bind, budget_ms, export_dir, static_dir, store } => {
            let export_dir = export_dir.unwrap_or_else(|| store.store.join("exports"));
            let config = ServiceConfig { extract_budget: Duration::from_millis(budget_ms), export_dir, static_dir };
            cmd_serve(bind, &store.store, config)
        }
        Command::Validate { flow, config } => cmd_validate(&flow, config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_flow(path: &Path) -> anyhow::Result<FlowGraph> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    FlowGraph::from_toml_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

fn report(violations: &[timeweave::Violation]) -> String {
    let mut s = format!("flow has {} violation(s):", violations.len());
    for v in violations {
        s.push_str(&format!("\n  {v}"));
    }
    s
}

fn cmd_run(flow: &Path, config: &Path, workers: Option<usize>, store: &Path) -> anyhow::Result<()> {
    let flow = load_flow(flow)?;
    let registry = scenario::registry();
    let violations = validate_flow_with(&flow, &registry);
    if !violations.is_empty() {
        bail!(report(&violations));
    }
    let config = RunConfigFile::load(config)?.into_config(flow)?;
    let store = EnsembleStore::open(store)?;
    let options = RunOptions {
        workers,
        on_stage: Some(Arc::new(|p: &StageProgress| {
            eprintln!(
                "stage {}/{}: {} tasks, {} executed, {} failed, {} dropped",
                p.stage + 1,
                p.stages,
                p.tasks,
                p.executed,
                p.failed,
                p.dropped
            );
        })),
    };
    match run_ensemble(&config, &store, &registry, &options) {
        Ok(outcome) => {
            let graph = outcome.handle.snapshot();
            eprintln!(
                "run {}: {} instances, {} edges, {:?}",
                outcome.run_id,
                graph.len(),
                graph.edges().len(),
                outcome.status
            );
            println!("{}", outcome.run_id);
            Ok(())
        }
        Err(RunError::Store(StoreError::RunExists(id))) => {
            eprintln!("run {id} is already in the store");
            println!("{id}");
            Ok(())
        }
        Err(RunError::InvalidFlow(v)) => bail!(report(&v)),
        Err(e) => Err(e.into()),
    }
}

fn load_criterion(path: &Path) -> anyhow::Result<PreferenceCriterion> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml_criterion(&text).with_context(|| path.display().to_string())
    } else {
        serde_json::from_str(&text).with_context(|| path.display().to_string())
    }
}

fn toml_criterion(text: &str) -> anyhow::Result<PreferenceCriterion> {
    let value: toml::Value = toml::from_str(text)?;
    Ok(serde_json::from_value(serde_json::to_value(value)?)?)
}

fn extract(
    args: &ExtractArgs,
    store: &Path,
) -> anyhow::Result<(Arc<timeweave::EnsembleGraph>, PreferenceCriterion, Vec<Timeline>)> {
    let criterion = load_criterion(&args.criterion)?;
    let store = EnsembleStore::open(store)?;
    let graph = store.open_run(&args.run)?.snapshot();
    if graph.status() == RunStatus::Incomplete {
        eprintln!("warning: run {} is incomplete", args.run);
    }
    let diversity = DiversityConfig {
        k: args.k,
        lambda: args.lambda,
        beam_width: args.beam_width,
        oracle_limit: args.oracle_limit,
    };
    let timelines = extract_top_k(&graph, &criterion, &diversity)?;
    Ok((graph, criterion, timelines))
}

/// File name of the `rank`th (from 1) timeline of an extraction.
pub fn export_file_name(rank: usize, timeline_id: &str) -> String {
    format!("timeline-{rank:02}-{timeline_id}.json")
}

fn cmd_timelines(args: &ExtractArgs, out: &Path, store: &Path) -> anyhow::Result<()> {
    let (graph, criterion, timelines) = extract(args, store)?;
    if timelines.len() < args.k {
        eprintln!("warning: only {} timeline(s) available, fewer than k = {}", timelines.len(), args.k);
    }
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{:>4}  {:<16}  {:>14}  {:>8}  {:>5}", "rank", "timeline", "score", "coverage", "nodes")?;
    for (r, t) in timelines.iter().enumerate() {
        let export = TimelineExport::build(&graph, t, &criterion)?;
        write_export(&export, &out.join(export_file_name(r + 1, &t.id)))?;
        writeln!(
            stdout,
            "{:>4}  {:<16}  {:>14.6}  {:>8.4}  {:>5}",
            r + 1,
            t.id,
            t.score,
            t.coverage,
            t.node_ids.len()
        )?;
    }
    Ok(())
}

fn cmd_export(args: &ExtractArgs, timeline: &str, out: &Path, store: &Path) -> anyhow::Result<()> {
    let (graph, criterion, timelines) = extract(args, store)?;
    let Some(t) = timelines.iter().find(|t| t.id == timeline) else {
        bail!("timeline {timeline} is not among the {} extracted with these settings", timelines.len());
    };
    write_export(&TimelineExport::build(&graph, t, &criterion)?, out)?;
    println!("{}", out.display());
    Ok(())
}

fn cmd_serve(bind: SocketAddr, store: &Path, config: ServiceConfig) -> anyhow::Result<()> {
    let store = Arc::new(EnsembleStore::open(store)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind).await.with_context(|| format!("bind {bind}"))?;
        tracing::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(store, config))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn cmd_validate(flow: &Path, config: Option<&Path>) -> anyhow::Result<()> {
    let flow = load_flow(flow)?;
    let violations = validate_flow_with(&flow, &scenario::registry());
    if !violations.is_empty() {
        bail!(report(&violations));
    }
    if let Some(path) = config {
        let config = RunConfigFile::load(path)?.into_config(flow.clone())?;
        config.check()?;
        let plan = compile_plan(&config.flow, config.horizon)?;
        println!("ok: {} models, {} stages, {} tasks", flow.nodes.len(), plan.stages.len(), plan.tasks.len());
    } else {
        println!("ok: {} models", flow.nodes.len());
    }
    Ok(())
}
