//! Windowed dataflow engine for coupled simulation ensembles.
//!
//! A [`FlowGraph`] of models is unrolled over a tick horizon and executed
//! step by step. Every model simulation instance lands in an append-only
//! [`EnsembleGraph`], from which consistent timelines can be extracted,
//! scored and exported.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the engine
//! itself stores `f64` series.

pub mod engine;
pub mod model;
pub mod scalar;
pub mod scenario;
pub mod series;
pub mod store;
pub mod timeline;
pub mod validate;
pub mod window;

pub use engine::{
    compile_plan, execute_instance, run_ensemble, sample_instances, ExecutionPlan, ModelRegistry, ParameterVector,
    RunConfig, RunError, RunOptions, RunOutcome, SamplingPolicy, SamplingStrategy,
};
pub use model::{FlowEdge, FlowGraph, ModelSpec, ParameterSpec, ScopeDescriptor, VarKind, VariableSpec};
pub use scalar::Scalar;
pub use series::{align_inputs, AlignTarget, SeriesWindow};
pub use store::{EnsembleGraph, EnsembleStore, InstanceId, InstanceStatus, RunStatus, SimulationInstance};
pub use timeline::{extract_top_k, DiversityConfig, PreferenceCriterion, Timeline};
pub use validate::{validate_flow, validate_flow_with, Violation};
pub use window::{step_windows, StepWindows, Tick, TickWindow};

/// Series of `f64` samples, the engine's storage type.
pub type Series = SeriesWindow<f64>;
/// Single-precision series for memory-bound analysis.
pub type Series32 = SeriesWindow<f32>;
