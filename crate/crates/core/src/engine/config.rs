use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{FlowGraph, ParseError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum SamplingStrategy {
    Grid,
    #[default]
    UniformRandom,
    LatinHypercube,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum DropRule {
    #[default]
    None,
    /// Drops the lowest-scoring fraction `q` of upstream groups.
    BottomQuantile(f64),
}

/// How one model's local ensemble is chosen at each step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct SamplingPolicy {
    #[serde(default)]
    pub strategy: SamplingStrategy,
    /// Maximum instances per (model, step).
    pub budget: u32,
    /// Maximum instances per upstream group.
    #[serde(default = "default_branch_limit")]
    pub branch_limit: u32,
    #[serde(default)]
    pub drop_rule: DropRule,
    #[serde(default)]
    pub seed: u64,
}

fn default_branch_limit() -> u32 {
    u32::MAX
}

impl SamplingPolicy {
    pub fn new(strategy: SamplingStrategy, budget: u32, branch_limit: u32) -> Self {
        Self { strategy, budget, branch_limit, drop_rule: DropRule::None, seed: 0 }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.budget == 0 {
            out.push("budget must be at least 1".to_owned());
        }
        if self.branch_limit == 0 {
            out.push("branch_limit must be at least 1".to_owned());
        }
        if let DropRule::BottomQuantile(q) = self.drop_rule {
            if !(0.0..1.0).contains(&q) {
                out.push(format!("bottom-quantile q must lie in [0, 1), got {q}"));
            }
        }
        out
    }
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self::new(SamplingStrategy::UniformRandom, 1, 1)
    }
}

/// Everything needed to reproduce one ensemble run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct RunConfig {
    pub flow: FlowGraph,
    pub horizon: u64,
    pub policy_per_model: BTreeMap<String, SamplingPolicy>,
    pub seed: u64,
}

/// On-disk run configuration; the flow is supplied separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub horizon: u64,
    #[serde(default)]
    pub seed: u64,
    /// Policy for models without an entry in `policies`.
    #[serde(default)]
    pub default_policy: Option<SamplingPolicy>,
    #[serde(default)]
    pub policies: BTreeMap<String, SamplingPolicy>,
}

impl RunConfigFile {
    pub fn from_toml_str(text: &str) -> Result<Self, ParseError> {
        toml::from_str(text).map_err(|e| ParseError::from_toml(text, &e))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text).map_err(|e| ConfigError::Parse(path.display().to_string(), e))
    }

    /// Binds the file to a flow, expanding the default policy per model.
    pub fn into_config(self, flow: FlowGraph) -> Result<RunConfig, ConfigError> {
        let mut policies = BTreeMap::new();
        for id in self.policies.keys() {
            if flow.node(id).is_none() {
                return Err(ConfigError::UnknownModel(id.clone()));
            }
        }
        for model in &flow.nodes {
            let policy = match (self.policies.get(&model.id), &self.default_policy) {
                (Some(p), _) => p.clone(),
                (None, Some(p)) => p.clone(),
                (None, None) => return Err(ConfigError::MissingPolicy(model.id.clone())),
            };
            policies.insert(model.id.clone(), policy);
        }
        Ok(RunConfig { flow, horizon: self.horizon, policy_per_model: policies, seed: self.seed })
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}: {1}")]
    Io(String, String),
    #[error("{0}: {1}")]
    Parse(String, ParseError),
    #[error("policy given for unknown model `{0}`")]
    UnknownModel(String),
    #[error("no sampling policy for model `{0}` and no default_policy")]
    MissingPolicy(String),
    #[error("policy for `{model}`: {problem}")]
    InvalidPolicy { model: String, problem: String },
}

impl RunConfig {
    pub fn policy(&self, model_id: &str) -> Option<&SamplingPolicy> {
        self.policy_per_model.get(model_id)
    }

    /// Policy problems for every model of the flow.
    pub fn check(&self) -> Result<(), ConfigError> {
        for model in &self.flow.nodes {
            let policy = self.policy(&model.id).ok_or_else(|| ConfigError::MissingPolicy(model.id.clone()))?;
            if let Some(problem) = policy.problems().into_iter().next() {
                return Err(ConfigError::InvalidPolicy { model: model.id.clone(), problem });
            }
        }
        Ok(())
    }
}
