//! Simulation function registry and single-instance execution.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::sampling::ParameterVector;
use crate::model::ModelSpec;
use crate::series::{align_inputs, AlignTarget};
use crate::window::StepWindows;
use crate::Series;

/// Opaque state threaded between consecutive steps of a stateful model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelState(pub Vec<f64>);

/// Error raised by a simulation function.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelError(pub String);

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ModelError {}

impl From<String> for ModelError {
    fn from(s: String) -> Self {
        ModelError(s)
    }
}

impl From<&str> for ModelError {
    fn from(s: &str) -> Self {
        ModelError(s.to_owned())
    }
}

/// Everything a simulation function sees for one instance.
pub struct Invocation<'a> {
    pub model: &'a ModelSpec,
    pub step: u64,
    pub windows: StepWindows,
    pub params: &'a ParameterVector,
    /// Aligned inputs, one per declared input variable, in declaration order.
    pub inputs: &'a [Series],
    pub state: Option<&'a ModelState>,
}

impl Invocation<'_> {
    pub fn input(&self, name: &str) -> Result<&Series, ModelError> {
        self.inputs
            .iter()
            .find(|s| s.variable() == name)
            .ok_or_else(|| ModelError(format!("`{}` has no input `{name}`", self.model.id)))
    }

    pub fn param(&self, name: &str) -> Result<f64, ModelError> {
        self.params
            .get_f64(name)
            .ok_or_else(|| ModelError(format!("`{}` has no numeric parameter `{name}`", self.model.id)))
    }

    /// Input `name` resampled onto the output window at output resolution.
    pub fn input_on_output_grid(&self, name: &str) -> Result<Series, ModelError> {
        let input = self.input(name)?;
        let target = AlignTarget {
            variable: name.to_owned(),
            window: self.windows.output,
            resolution: self.model.output_scope.resolution,
        };
        align_inputs(&target, std::slice::from_ref(input)).map_err(|e| ModelError(e.to_string()))
    }

    /// Number of samples in each output series.
    pub fn output_samples(&self) -> usize {
        self.model.output_scope.samples() as usize
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelOutput {
    pub outputs: Vec<Series>,
    pub state: Option<ModelState>,
}

/// A registered simulation or analysis function.
pub trait SimFunction: Send + Sync {
    fn run(&self, inv: &Invocation<'_>) -> Result<ModelOutput, ModelError>;
}

impl<F> SimFunction for F
where
    F: Fn(&Invocation<'_>) -> Result<ModelOutput, ModelError> + Send + Sync,
{
    fn run(&self, inv: &Invocation<'_>) -> Result<ModelOutput, ModelError> {
        self(inv)
    }
}

/// Named simulation functions a flow's `function_ref`s resolve against.
#[derive(Clone, Default)]
pub struct ModelRegistry {
    functions: BTreeMap<String, Arc<dyn SimFunction>>,
}

impl fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.functions.keys()).finish()
    }
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding the generic `identity` and `constant` functions.
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register("identity", identity);
        r.register("constant", constant);
        r
    }

    pub fn register(&mut self, name: impl Into<String>, f: impl SimFunction + 'static) -> &mut Self {
        self.functions.insert(name.into(), Arc::new(f));
        self
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn SimFunction>> {
        self.functions.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.functions.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.functions.keys().map(String::as_str)
    }
}

/// Copies each input onto the output grid; outputs are matched to inputs by
/// name, or by position when names differ.
pub fn identity(inv: &Invocation<'_>) -> Result<ModelOutput, ModelError> {
    let mut outputs = Vec::with_capacity(inv.model.outputs.len());
    for (i, out) in inv.model.outputs.iter().enumerate() {
        let source = inv
            .model
            .input(&out.name)
            .or_else(|| inv.model.inputs.get(i))
            .ok_or_else(|| ModelError(format!("identity: no input for output `{}`", out.name)))?;
        outputs.push(inv.input_on_output_grid(&source.name)?.renamed(out.name.clone()));
    }
    Ok(ModelOutput { outputs, state: None })
}

/// Emits parameter `level` (default 0) on every output.
pub fn constant(inv: &Invocation<'_>) -> Result<ModelOutput, ModelError> {
    let level = inv.params.get_f64("level").unwrap_or(0.0);
    let outputs = inv
        .model
        .outputs
        .iter()
        .map(|v| {
            Series::constant(
                v.name.clone(),
                inv.windows.output,
                inv.model.output_scope.resolution,
                v.kind.width(),
                level,
            )
            .map_err(|e| ModelError(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    Ok(ModelOutput { outputs, state: None })
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("model `{model}` step {step} failed: {reason}")]
pub struct ModelFailure {
    pub model: String,
    pub step: u64,
    pub reason: String,
}

/// Runs one model simulation instance and checks its outputs against the
/// model's declared output scope.
///
/// Stateless models never see or return state.
pub fn execute_instance(
    registry: &ModelRegistry,
    model: &ModelSpec,
    step: u64,
    params: &ParameterVector,
    inputs: &[Series],
    state: Option<&ModelState>,
) -> Result<ModelOutput, ModelFailure> {
    let fail = |reason: String| ModelFailure { model: model.id.clone(), step, reason };
    let function = registry
        .get(&model.function_ref)
        .ok_or_else(|| fail(format!("function `{}` is not registered", model.function_ref)))?;
    if let Some(problem) = params.problem_for(model) {
        return Err(fail(problem));
    }
    let windows = model.windows(step);
    let inv = Invocation { model, step, windows, params, inputs, state: if model.stateful { state } else { None } };
    let mut result = function.run(&inv).map_err(|e| fail(e.0))?;
    if !model.stateful {
        result.state = None;
    }

    if result.outputs.len() != model.outputs.len() {
        return Err(fail(format!("expected {} outputs, got {}", model.outputs.len(), result.outputs.len())));
    }
    let mut ordered = Vec::with_capacity(model.outputs.len());
    for spec in &model.outputs {
        let series = result
            .outputs
            .iter()
            .find(|s| s.variable() == spec.name)
            .ok_or_else(|| fail(format!("missing output `{}`", spec.name)))?;
        if series.window() != windows.output || series.resolution() != model.output_scope.resolution {
            return Err(fail(format!(
                "output `{}` covers {} at resolution {}, expected {} at {}",
                spec.name,
                series.window(),
                series.resolution(),
                windows.output,
                model.output_scope.resolution
            )));
        }
        if series.width() != spec.kind.width() {
            return Err(fail(format!("output `{}` has width {}, declared {}", spec.name, series.width(), spec.kind)));
        }
        if !series.is_finite() {
            return Err(fail(format!("output `{}` has non-finite values", spec.name)));
        }
        ordered.push(series.clone());
    }
    result.outputs = ordered;
    Ok(result)
}
