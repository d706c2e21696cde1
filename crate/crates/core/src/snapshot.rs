//! Profiling state saved mid-run, for re-planning and cost traces offline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{ModelPool, TaskItem};
use crate::error::{Error, Result};
use crate::orchestrator::{plan_mix, RunConfig, RunResult};
use crate::planner::{MixPlan, DEFAULT_GRID_STEP};
use crate::profiler::{profile, AccuracySpec, CostEstimate, EstimatorOptions, ModelProfile, ProfileOptions, Termination};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub delta: f64,
    pub gamma: f64,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    pub items_profiled: u64,
    pub n_remaining: u64,
    pub profiles: Vec<ModelProfile>,
}

fn default_grid_step() -> f64 {
    DEFAULT_GRID_STEP
}

impl Snapshot {
    /// State at the end of profiling in a finished run.
    pub fn from_run(config: &RunConfig, result: &RunResult) -> Self {
        Self {
            delta: config.spec.delta,
            gamma: config.spec.gamma,
            grid_step: config.grid_step,
            items_profiled: result.profiled as u64,
            n_remaining: (result.outputs.len() - result.profiled) as u64,
            profiles: result.profiles.clone(),
        }
    }

    /// Profiles exactly the first `pause_after` items and stops there.
    pub fn paused(pool: &ModelPool, config: &RunConfig, question: &str, items: &[TaskItem], pause_after: usize) -> Result<Self> {
        if pause_after == 0 || pause_after >= items.len() {
            return Err(Error::InvalidInput(format!(
                "pause point must lie in 1..{}, got {pause_after}",
                items.len()
            )));
        }
        let opts = ProfileOptions {
            termination: Termination::Exhaust,
            estimator: config.estimator.clone(),
            mean_tokens: config.mean_tokens,
            ..ProfileOptions::default()
        };
        let out = profile(pool, &config.reference, question, &items[..pause_after], &config.spec, &opts)?;
        Ok(Self {
            delta: config.spec.delta,
            gamma: config.spec.gamma,
            grid_step: config.grid_step,
            items_profiled: pause_after as u64,
            n_remaining: (items.len() - pause_after) as u64,
            profiles: out.profiles,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut de = serde_json::Deserializer::from_str(&text);
        let snap: Snapshot = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path_in = e.path().to_string();
            Error::Config(format!("{}: field `{path_in}`: {}", path.display(), e.into_inner()))
        })?;
        snap.spec()?;
        Ok(snap)
    }

    pub fn spec(&self) -> Result<AccuracySpec> {
        AccuracySpec::new(self.delta, self.gamma)
    }

    /// Share of all items already answered by the reference.
    pub fn profiled_ratio(&self) -> f64 {
        let total = self.items_profiled + self.n_remaining;
        if total == 0 {
            0.0
        } else {
            self.items_profiled as f64 / total as f64
        }
    }

    /// The mix the planner would choose for the remaining items.
    pub fn plan(&self) -> Result<MixPlan> {
        if self.n_remaining == 0 {
            return Err(Error::InvalidInput("nothing left to plan: every item was profiled".into()));
        }
        plan_mix(&self.profiles, &self.spec()?, self.profiled_ratio(), self.grid_step)
    }

    /// Expected cost of profiling `k = 0, 1, 2, 4, ...` more items.
    pub fn expected_cost_trace(&self, opts: EstimatorOptions) -> Result<Vec<CostEstimate>> {
        crate::sim::expected_cost_trace(&self.profiles, self.spec()?, self.n_remaining, opts)
    }
}
