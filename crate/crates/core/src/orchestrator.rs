//! End-to-end control flow: profile, then hand the remaining items to the
//! cheapest certified model or to a mix of models.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{Backend, BackendError, Invocation, ModelPool, TaskItem};
use crate::error::{Error, Result};
use crate::ledger::Ledger;
use crate::planner::{build_mix_program, partition_by_ratios, solve_mix_exact, ConfidenceGrid, MixPlan, DEFAULT_GRID_STEP};
use crate::profiler::{
    cheapest_valid, initial_profiles, profile, AccuracySpec, EstimatorOptions, ModelProfile, ProfileOptions,
    Termination, TraceRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Profile until the cheapest valid model is known, then use it alone.
    ProfileAll,
    /// Stop profiling early when more of it is expected to cost more than it saves.
    ProfileSmart,
    /// Smart profiling followed by a cost-optimal mix of models.
    ModelMix,
    /// Send every item to the reference model.
    ReferenceOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::ProfileAll, Variant::ProfileSmart, Variant::ModelMix, Variant::ReferenceOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::ProfileAll => "profile-all",
            Variant::ProfileSmart => "profile-smart",
            Variant::ModelMix => "model-mix",
            Variant::ReferenceOnly => "reference-only",
        }
    }

    fn termination(self) -> Option<Termination> {
        match self {
            Variant::ProfileAll => Some(Termination::ProfileAll),
            Variant::ProfileSmart | Variant::ModelMix => Some(Termination::Smart),
            Variant::ReferenceOnly => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant {s:?}; expected one of profile-all, profile-smart, model-mix, reference-only")))
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub variant: Variant,
    pub spec: AccuracySpec,
    pub reference: String,
    pub seed: u64,
    pub grid_step: f64,
    pub estimator: EstimatorOptions,
    /// Expected tokens per item, used to seed unit costs before any call.
    pub mean_tokens: Option<f64>,
    pub collect_trace: bool,
    /// Worker threads for the application phase.
    pub application_threads: usize,
}

impl RunConfig {
    pub fn new(variant: Variant, spec: AccuracySpec, reference: impl Into<String>) -> Self {
        Self {
            variant,
            spec,
            reference: reference.into(),
            seed: 0,
            grid_step: DEFAULT_GRID_STEP,
            estimator: EstimatorOptions::default(),
            mean_tokens: None,
            collect_trace: false,
            application_threads: 1,
        }
    }

    pub fn with_threads(mut self, application_threads: usize) -> Self {
        self.application_threads = application_threads.max(1);
        self
    }
}

/// How the items left after profiling were handled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Application {
    /// Profiling consumed every item.
    None,
    Single { model: String },
    Mix { plan: MixPlan },
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: Variant,
    /// One output per input item, in input order.
    pub outputs: Vec<(u64, String)>,
    pub ledger: Ledger,
    pub total_cost: f64,
    pub profiled: usize,
    /// Fraction of items answered by the reference during profiling.
    pub r: f64,
    pub profiles: Vec<ModelProfile>,
    pub application: Application,
    /// Items each model processed after profiling.
    pub applied: BTreeMap<String, usize>,
    pub trace: Vec<TraceRecord>,
}

impl RunResult {
    /// SHA-256 over `item_id \t output \n` lines, hex encoded.
    pub fn outputs_digest(&self) -> String {
        let mut h = Sha256::new();
        for (id, out) in &self.outputs {
            h.update(format!("{id}\t{out}\n").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

struct Applied {
    outputs: Vec<(u64, String)>,
    ledger: Ledger,
    counts: BTreeMap<String, usize>,
}

fn run_batch(backend: &Arc<dyn Backend>, question: &str, items: &[TaskItem], threads: usize) -> (Vec<Invocation>, Option<BackendError>) {
    if threads <= 1 || items.len() < 2 {
        let mut done = Vec::with_capacity(items.len());
        for it in items {
            match backend.invoke(question, it) {
                Ok(inv) => done.push(inv),
                Err(e) => return (done, Some(e)),
            }
        }
        return (done, None);
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(move || run_batch(backend, question, c, 1))).collect();
        let mut done = Vec::with_capacity(items.len());
        let mut failure = None;
        for h in handles {
            let (part, err) = h.join().expect("application worker panicked");
            if failure.is_none() {
                done.extend(part);
                failure = err;
            }
        }
        (done, failure)
    })
}

fn apply_partition(
    pool: &ModelPool,
    question: &str,
    parts: &[(String, &[TaskItem])],
    threads: usize,
    mut ledger: Ledger,
) -> Result<Applied> {
    let mut outputs = Vec::new();
    let mut counts = BTreeMap::new();
    for (name, items) in parts {
        if items.is_empty() {
            continue;
        }
        let backend = pool.get(name)?;
        let (done, failure) = run_batch(backend, question, items, threads);
        for (it, inv) in items.iter().zip(&done) {
            ledger.record(name, it.token_count as u64, inv.cost);
        }
        if let Some(source) = failure {
            return Err(Error::Aborted { source, ledger: Box::new(ledger) });
        }
        counts.insert(name.clone(), items.len());
        outputs.extend(items.iter().zip(done).map(|(it, inv)| (it.item_id, inv.output)));
    }
    Ok(Applied { outputs, ledger, counts })
}

/// Sends every item to the cheapest valid model (ties by name).
pub fn apply_single(
    pool: &ModelPool,
    profiles: &[ModelProfile],
    question: &str,
    items: &[TaskItem],
    threads: usize,
) -> Result<(String, Vec<(u64, String)>, Ledger)> {
    let model = cheapest_valid(profiles)
        .ok_or_else(|| Error::InvalidInput("no valid model; profiles must include the reference".into()))?
        .name()
        .to_string();
    let applied = apply_partition(pool, question, &[(model.clone(), items)], threads, Ledger::new())?;
    Ok((model, applied.outputs, applied.ledger))
}

/// Solves the mix program for the profiled state and splits `items`
/// across the chosen models.
pub fn apply_mix(
    pool: &ModelPool,
    profiles: &[ModelProfile],
    question: &str,
    items: &[TaskItem],
    spec: &AccuracySpec,
    r: f64,
    grid_step: f64,
    threads: usize,
) -> Result<(MixPlan, Vec<(u64, String)>, Ledger)> {
    let plan = plan_mix(profiles, spec, r, grid_step)?;
    if items.is_empty() {
        return Ok((plan, Vec::new(), Ledger::new()));
    }
    let parts: Vec<(String, &[TaskItem])> = partition_by_ratios(items, &plan).into_iter().collect();
    let applied = apply_partition(pool, question, &parts, threads, Ledger::new())?;
    Ok((plan, applied.outputs, applied.ledger))
}

/// The optimal mix for a profiled state.
pub fn plan_mix(profiles: &[ModelProfile], spec: &AccuracySpec, r: f64, grid_step: f64) -> Result<MixPlan> {
    let grid = ConfidenceGrid::new(spec.gamma, grid_step)?;
    let program = build_mix_program(profiles, &grid, spec.delta, spec.gamma, r)?;
    solve_mix_exact(&program)
}

/// Runs one variant over `items`.
pub fn smart_run(pool: &ModelPool, config: &RunConfig, question: &str, items: &[TaskItem]) -> Result<RunResult> {
    if items.is_empty() {
        return Err(Error::InvalidInput("no items to process".into()));
    }
    let mut seen = HashSet::with_capacity(items.len());
    if let Some(dup) = items.iter().find(|it| !seen.insert(it.item_id)) {
        return Err(Error::InvalidInput(format!("duplicate item id {}", dup.item_id)));
    }
    let n = items.len();
    let threads = config.application_threads.max(1);

    let Some(termination) = config.variant.termination() else {
        let profiles = initial_profiles(pool, &config.reference, config.mean_tokens)?;
        let applied = apply_partition(pool, question, &[(config.reference.clone(), items)], threads, Ledger::new())?;
        return Ok(RunResult {
            variant: config.variant,
            outputs: applied.outputs,
            total_cost: applied.ledger.total(),
            ledger: applied.ledger,
            profiled: 0,
            r: 0.0,
            profiles,
            application: Application::Single { model: config.reference.clone() },
            applied: applied.counts,
            trace: Vec::new(),
        });
    };

    let opts = ProfileOptions {
        termination,
        estimator: config.estimator.clone(),
        mean_tokens: config.mean_tokens,
        collect_trace: config.collect_trace,
        concurrent_fanout: threads > 1,
    };
    let outcome = profile(pool, &config.reference, question, items, &config.spec, &opts)?;
    let profiled = outcome.profiled();
    let r = profiled as f64 / n as f64;
    let rest = &items[profiled..];
    let mut outputs = outcome.outputs;
    let mut ledger = outcome.ledger;

    let (application, applied) = if rest.is_empty() {
        (Application::None, BTreeMap::new())
    } else if config.variant == Variant::ModelMix {
        let plan = plan_mix(&outcome.profiles, &config.spec, r, config.grid_step)?;
        let parts: Vec<(String, &[TaskItem])> = partition_by_ratios(rest, &plan).into_iter().collect();
        let done = apply_partition(pool, question, &parts, threads, ledger)?;
        ledger = done.ledger;
        outputs.extend(done.outputs);
        (Application::Mix { plan }, done.counts)
    } else {
        let model = cheapest_valid(&outcome.profiles).expect("reference is always valid").name().to_string();
        let done = apply_partition(pool, question, &[(model.clone(), rest)], threads, ledger)?;
        ledger = done.ledger;
        outputs.extend(done.outputs);
        (Application::Single { model }, done.counts)
    };

    // Mixed partitions come back grouped by model; restore input order.
    let order: std::collections::HashMap<u64, usize> = items.iter().enumerate().map(|(i, it)| (it.item_id, i)).collect();
    outputs.sort_by_key(|(id, _)| order[id]);

    Ok(RunResult {
        variant: config.variant,
        outputs,
        total_cost: ledger.total(),
        ledger,
        profiled,
        r,
        profiles: outcome.profiles,
        application,
        applied,
        trace: outcome.trace,
    })
}

/// JSON record of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLog {
    pub config: serde_json::Value,
    pub variant: Variant,
    pub delta: f64,
    pub gamma: f64,
    pub reference: String,
    pub seed: u64,
    pub items: usize,
    pub profiled: usize,
    pub profiled_ratio: f64,
    pub profiles: Vec<ModelProfile>,
    pub application: Application,
    pub applied: BTreeMap<String, usize>,
    pub ledger: Ledger,
    pub total_cost: f64,
    pub outputs_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agreement: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violation: Option<bool>,
}

impl RunLog {
    pub fn new(config_echo: serde_json::Value, run: &RunConfig, result: &RunResult) -> Self {
        Self {
            config: config_echo,
            variant: result.variant,
            delta: run.spec.delta,
            gamma: run.spec.gamma,
            reference: run.reference.clone(),
            seed: run.seed,
            items: result.outputs.len(),
            profiled: result.profiled,
            profiled_ratio: result.r,
            profiles: result.profiles.clone(),
            application: result.application.clone(),
            applied: result.applied.clone(),
            ledger: result.ledger.clone(),
            total_cost: result.total_cost,
            outputs_digest: result.outputs_digest(),
            agreement: None,
            violation: None,
        }
    }
}
