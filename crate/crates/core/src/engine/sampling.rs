//! Sampling manager: picks which parameter vectors run for which upstream
//! input groups, within a per-(model, step) budget.
//!
//! Groups that survive the drop rule are served in lineage-priority order.
//! A parent's rank is its position among its own (model, step) siblings; a
//! group's priority is its highest parent rank, then how far its other
//! parents fall below that. Rank-aligned groups (parent 0 with parent 0,
//! parent 1 with parent 1) thus come first, so scenario branches continue
//! before new ones fork. Ties are broken by a seeded hash.
//! The budget is dealt out round-robin in that order, one instance at a
//! time, up to `branch_limit` per group.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::config::{DropRule, SamplingPolicy, SamplingStrategy};
use crate::model::{ModelSpec, ParamDomain, ParamValue};

/// One value per parameter of the owning model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct ParameterVector(pub BTreeMap<String, ParamValue>);

impl ParameterVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<ParamValue>) -> Self {
        self.0.insert(name.to_owned(), value.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }

    pub fn get_f64(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(ParamValue::as_f64)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// First violation of "one in-domain value per declared parameter".
    pub fn problem_for(&self, model: &ModelSpec) -> Option<String> {
        for spec in &model.params {
            match self.0.get(&spec.name) {
                None => return Some(format!("missing parameter `{}`", spec.name)),
                Some(v) if !spec.domain.contains(v) => {
                    return Some(format!("parameter `{}` = {v} is outside its domain", spec.name))
                }
                _ => {}
            }
        }
        self.0.keys().find(|k| model.param(k).is_none()).map(|k| format!("unknown parameter `{k}`"))
    }

    fn canonical_key(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={}", v.canonical_key())).collect::<Vec<_>>().join(";")
    }
}

/// What the sampler knows about one upstream input group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupInfo {
    /// Stable identity, e.g. the parent instance ids joined.
    pub key: String,
    /// Highest parent rank and total shortfall of the other ranks below it;
    /// lower is served first.
    pub priority: (u64, u64),
    /// Upstream-declared drop score, if any parent reports one.
    pub drop_score: Option<f64>,
}

impl GroupInfo {
    /// The single implicit group of a source model.
    pub fn source() -> Self {
        Self { key: String::new(), priority: (0, 0), drop_score: None }
    }
}

/// Seed material beyond the policy's own seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleContext<'a> {
    pub run_seed: u64,
    pub model_id: &'a str,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    /// Parameter vector and the index of the group it runs on.
    pub selected: Vec<(ParameterVector, usize)>,
    /// Groups removed by the drop rule.
    pub dropped: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SampleError {
    #[error("no instances for `{model}` step {step}: {reason}")]
    EmptySample { model: String, step: u64, reason: String },
}

fn rng_for(policy: &SamplingPolicy, ctx: &SampleContext<'_>, purpose: &str, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"timeweave-sampler\0");
    h.update(ctx.run_seed.to_le_bytes());
    h.update(policy.seed.to_le_bytes());
    h.update(ctx.model_id.as_bytes());
    h.update([0]);
    h.update(ctx.step.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update([0]);
    h.update(key.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Number of distinct vectors the model's parameter space admits, if finite.
fn finite_space(model: &ModelSpec) -> Option<usize> {
    model.params.iter().try_fold(1usize, |acc, p| match &p.domain {
        ParamDomain::Discrete(v) => Some(acc.saturating_mul(v.len())),
        ParamDomain::Continuous(_) => None,
    })
}

/// Chooses up to `policy.budget` parameter vectors spread over `groups`.
pub fn sample_instances(
    model: &ModelSpec,
    groups: &[GroupInfo],
    policy: &SamplingPolicy,
    ctx: SampleContext<'_>,
) -> Result<SampleOutcome, SampleError> {
    let empty =
        |reason: &str| SampleError::EmptySample { model: model.id.clone(), step: ctx.step, reason: reason.to_owned() };
    if groups.is_empty() {
        return Err(empty("no consistent upstream input group"));
    }

    let mut survivors: Vec<usize> = (0..groups.len()).collect();
    let mut dropped = Vec::new();
    if let DropRule::BottomQuantile(q) = policy.drop_rule {
        let n_drop = (q * groups.len() as f64).floor() as usize;
        if n_drop > 0 {
            let all_scored = groups.iter().all(|g| g.drop_score.is_some());
            let score = |i: usize| -> f64 {
                if all_scored {
                    groups[i].drop_score.unwrap_or(0.0)
                } else {
                    rng_for(policy, &ctx, "drop", &groups[i].key).random::<f64>()
                }
            };
            let mut ranked: Vec<(f64, usize)> = survivors.iter().map(|&i| (score(i), i)).collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| groups[a.1].key.cmp(&groups[b.1].key)));
            dropped = ranked[..n_drop].iter().map(|&(_, i)| i).collect();
            dropped.sort_unstable();
            survivors = ranked[n_drop..].iter().map(|&(_, i)| i).collect();
        }
    }
    if survivors.is_empty() {
        return Err(empty("drop rule removed every group"));
    }

    survivors.sort_by_key(|&i| {
        let tie: u64 = rng_for(policy, &ctx, "order", &groups[i].key).random();
        (groups[i].priority, tie, i)
    });

    let capacity = finite_space(model).map_or(policy.branch_limit as usize, |n| n.min(policy.branch_limit as usize));
    let mut counts = vec![0usize; groups.len()];
    let mut remaining = policy.budget as usize;
    while remaining > 0 {
        let mut progressed = false;
        for &g in &survivors {
            if remaining == 0 {
                break;
            }
            if counts[g] < capacity {
                counts[g] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    let mut selected = Vec::new();
    for &g in &survivors {
        if counts[g] == 0 {
            continue;
        }
        let mut rng = rng_for(policy, &ctx, "params", &groups[g].key);
        for p in draw(model, policy.strategy, counts[g], &mut rng) {
            selected.push((p, g));
        }
    }
    if selected.is_empty() {
        return Err(empty("budget left no instance"));
    }
    Ok(SampleOutcome { selected, dropped })
}

/// `n` distinct parameter vectors (fewer if the space is smaller).
pub fn draw(model: &ModelSpec, strategy: SamplingStrategy, n: usize, rng: &mut ChaCha8Rng) -> Vec<ParameterVector> {
    if n == 0 {
        return Vec::new();
    }
    if model.params.is_empty() {
        return vec![ParameterVector::new()];
    }
    let mut out = match (strategy, finite_space(model)) {
        (SamplingStrategy::Grid, _) => grid(model, n),
        (_, Some(size)) => {
            // Finite space: sample without replacement.
            let mut all = enumerate(model, &vec![0; model.params.len()]);
            debug_assert_eq!(all.len(), size);
            all.shuffle(rng);
            all.truncate(n);
            all
        }
        (SamplingStrategy::UniformRandom, None) => (0..n).map(|_| uniform(model, rng)).collect(),
        (SamplingStrategy::LatinHypercube, None) => latin_hypercube(model, n, rng),
    };
    let mut seen = std::collections::HashSet::new();
    out.retain(|p| seen.insert(p.canonical_key()));
    out
}

fn uniform(model: &ModelSpec, rng: &mut ChaCha8Rng) -> ParameterVector {
    let mut p = ParameterVector::new();
    for spec in &model.params {
        let v = match &spec.domain {
            ParamDomain::Continuous([lo, hi]) => ParamValue::Number(lo + rng.random::<f64>() * (hi - lo)),
            ParamDomain::Discrete(values) => values[rng.random_range(0..values.len())].clone(),
        };
        p.0.insert(spec.name.clone(), v);
    }
    p
}

/// Stratified continuous coordinates; discrete coordinates are drawn
/// uniformly.
fn latin_hypercube(model: &ModelSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<ParameterVector> {
    let mut points = vec![ParameterVector::new(); n];
    for spec in &model.params {
        match &spec.domain {
            ParamDomain::Continuous([lo, hi]) => {
                let mut strata: Vec<usize> = (0..n).collect();
                strata.shuffle(rng);
                for (point, stratum) in points.iter_mut().zip(strata) {
                    let u = (stratum as f64 + rng.random::<f64>()) / n as f64;
                    point.0.insert(spec.name.clone(), ParamValue::Number(lo + u * (hi - lo)));
                }
            }
            ParamDomain::Discrete(values) => {
                for point in &mut points {
                    point.0.insert(spec.name.clone(), values[rng.random_range(0..values.len())].clone());
                }
            }
        }
    }
    points
}

/// Cartesian grid (continuous axes at `n` stratum midpoints), thinned to `n`
/// evenly strided points in enumeration order.
fn grid(model: &ModelSpec, n: usize) -> Vec<ParameterVector> {
    let levels: Vec<usize> = vec![n; model.params.len()];
    let all = enumerate(model, &levels);
    if all.len() <= n {
        return all;
    }
    (0..n).map(|i| all[i * all.len() / n].clone()).collect()
}

/// Lexicographic enumeration of the grid; `levels[i]` is the number of
/// midpoints used for continuous parameter `i`.
fn enumerate(model: &ModelSpec, levels: &[usize]) -> Vec<ParameterVector> {
    let axes: Vec<Vec<ParamValue>> = model
        .params
        .iter()
        .zip(levels)
        .map(|(spec, &k)| match &spec.domain {
            ParamDomain::Discrete(values) => values.clone(),
            ParamDomain::Continuous([lo, hi]) => {
                (0..k.max(1)).map(|i| ParamValue::Number(lo + (i as f64 + 0.5) / k.max(1) as f64 * (hi - lo))).collect()
            }
        })
        .collect();
    let mut out = vec![ParameterVector::new()];
    for (spec, axis) in model.params.iter().zip(&axes) {
        out = out.into_iter().flat_map(|p| axis.iter().map(move |v| p.clone().with(&spec.name, v.clone()))).collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParameterSpec;

    fn model_with(params: Vec<ParameterSpec>) -> ModelSpec {
        ModelSpec { params, ..ModelSpec::named("m", "identity") }
    }

    fn ctx() -> SampleContext<'static> {
        SampleContext { run_seed: 1, model_id: "m", step: 0 }
    }

    fn groups(k: usize) -> Vec<GroupInfo> {
        (0..k).map(|i| GroupInfo { key: format!("g{i}"), priority: (i as u64, 0), drop_score: None }).collect()
    }

    #[test]
    fn grid_enumerates_discrete_domain() {
        let m = model_with(vec![ParameterSpec::discrete("p", ["a", "b"])]);
        let policy = SamplingPolicy::new(SamplingStrategy::Grid, 2, 2);
        let out = sample_instances(&m, &[GroupInfo::source()], &policy, ctx()).unwrap();
        let values: Vec<_> = out.selected.iter().map(|(p, _)| p.get("p").unwrap().clone()).collect();
        assert_eq!(values, vec![ParamValue::from("a"), ParamValue::from("b")]);
    }

    #[test]
    fn budget_one_picks_one_group() {
        let m = model_with(vec![ParameterSpec::continuous("p", 0.0, 1.0)]);
        for strategy in [SamplingStrategy::Grid, SamplingStrategy::UniformRandom, SamplingStrategy::LatinHypercube] {
            let policy = SamplingPolicy::new(strategy, 1, 1);
            let out = sample_instances(&m, &groups(5), &policy, ctx()).unwrap();
            assert_eq!(out.selected.len(), 1);
            assert_eq!(out.selected[0].1, 0, "lowest priority group is served first");
        }
    }

    #[test]
    fn uniform_random_is_reproducible() {
        let m = model_with(vec![ParameterSpec::continuous("p", 0.0, 1.0)]);
        let policy = SamplingPolicy::new(SamplingStrategy::UniformRandom, 4, 4);
        let a = sample_instances(&m, &[GroupInfo::source()], &policy, ctx()).unwrap();
        let b = sample_instances(&m, &[GroupInfo::source()], &policy, ctx()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.selected.len(), 4);
        let other =
            sample_instances(&m, &[GroupInfo::source()], &policy, SampleContext { run_seed: 2, ..ctx() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn branch_limit_spreads_budget() {
        let m = model_with(vec![ParameterSpec::continuous("p", 0.0, 1.0)]);
        let policy = SamplingPolicy::new(SamplingStrategy::UniformRandom, 5, 2);
        let out = sample_instances(&m, &groups(2), &policy, ctx()).unwrap();
        assert_eq!(out.selected.len(), 4);
        for g in 0..2 {
            assert_eq!(out.selected.iter().filter(|(_, i)| *i == g).count(), 2);
        }
    }

    #[test]
    fn parameterless_model_runs_once_per_group() {
        let m = model_with(vec![]);
        let policy = SamplingPolicy::new(SamplingStrategy::UniformRandom, 4, 4);
        let out = sample_instances(&m, &groups(2), &policy, ctx()).unwrap();
        assert_eq!(out.selected.len(), 2);
    }

    #[test]
    fn drop_rule_removes_lowest_scores() {
        let m = model_with(vec![]);
        let mut policy = SamplingPolicy::new(SamplingStrategy::UniformRandom, 4, 1);
        policy.drop_rule = DropRule::BottomQuantile(0.5);
        let gs: Vec<GroupInfo> = [3.0, 1.0, 4.0, 2.0]
            .iter()
            .enumerate()
            .map(|(i, s)| GroupInfo { key: format!("g{i}"), priority: (0, 0), drop_score: Some(*s) })
            .collect();
        let out = sample_instances(&m, &gs, &policy, ctx()).unwrap();
        assert_eq!(out.dropped, vec![1, 3]);
        let mut served: Vec<usize> = out.selected.iter().map(|(_, g)| *g).collect();
        served.sort_unstable();
        assert_eq!(served, vec![0, 2]);
    }

    #[test]
    fn no_groups_is_empty_sample() {
        let m = model_with(vec![]);
        let policy = SamplingPolicy::default();
        assert!(matches!(sample_instances(&m, &[], &policy, ctx()), Err(SampleError::EmptySample { .. })));
    }

    #[test]
    fn latin_hypercube_fills_every_stratum() {
        let m = model_with(vec![ParameterSpec::continuous("a", 0.0, 10.0), ParameterSpec::discrete("b", [1.0, 2.0])]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = draw(&m, SamplingStrategy::LatinHypercube, 10, &mut rng);
        let mut strata: Vec<usize> = pts.iter().map(|p| p.get_f64("a").unwrap().floor() as usize).collect();
        strata.sort_unstable();
        assert_eq!(strata, (0..10).collect::<Vec<_>>());
        assert!(pts.iter().all(|p| p.problem_for(&m).is_none()));
    }

    #[test]
    fn grid_midpoints_for_continuous() {
        let m = model_with(vec![ParameterSpec::continuous("a", 0.0, 1.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts = draw(&m, SamplingStrategy::Grid, 4, &mut rng);
        let xs: Vec<f64> = pts.iter().map(|p| p.get_f64("a").unwrap()).collect();
        assert_eq!(xs, vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn vector_validation() {
        let m = model_with(vec![ParameterSpec::continuous("a", 0.0, 1.0)]);
        assert!(ParameterVector::new().with("a", 0.5).problem_for(&m).is_none());
        assert!(ParameterVector::new().problem_for(&m).is_some());
        assert!(ParameterVector::new().with("a", 2.0).problem_for(&m).is_some());
        assert!(ParameterVector::new().with("a", 0.5).with("b", 1.0).problem_for(&m).is_some());
    }
}
