//! Plan compilation, sampling and continuous execution of a flow.

pub mod config;
pub mod plan;
pub mod registry;
pub mod run;
pub mod sampling;
pub mod verify;

pub use config::{ConfigError, DropRule, RunConfig, RunConfigFile, SamplingPolicy, SamplingStrategy};
pub use plan::{compile_plan, EdgeInput, ExecutionPlan, PlanError, Task};
pub use registry::{
    execute_instance, Invocation, ModelError, ModelFailure, ModelOutput, ModelRegistry, ModelState, SimFunction,
};
pub use run::{run_ensemble, run_id_for, HaltReason, RunError, RunOptions, RunOutcome, StageCallback, StageProgress};
pub use sampling::{sample_instances, GroupInfo, ParameterVector, SampleContext, SampleError, SampleOutcome};
pub use verify::{verify_run, RunIssue};
