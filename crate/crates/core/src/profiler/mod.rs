//! Profiling phase: run the reference and every undecided model side by
//! side, certify models as valid or invalid from exact binomial intervals,
//! and decide when to stop.

mod estimate;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{outputs_equivalent, Backend, BackendError, Invocation, ModelId, ModelPool, TaskItem};
use crate::error::{Error, Result};
use crate::ledger::Ledger;
use crate::stats::{binom_ci, lower_bound_reaches, upper_bound_below, BinomInterval};

pub use estimate::{
    application_cost_per_item, expected_cost_from_probabilities, CostEstimate, CostEstimator, EstimatorOptions,
};

/// Certification state of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Unknown,
    Valid,
    Invalid,
}

/// User contract: agree with the reference on at least `1 - delta` of the
/// outputs, at confidence `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySpec {
    pub delta: f64,
    pub gamma: f64,
}

impl AccuracySpec {
    pub fn new(delta: f64, gamma: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidInput(format!("delta must lie in (0, 1), got {delta}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        Ok(Self { delta, gamma })
    }

    /// Accuracy every certified model must reach.
    pub fn threshold(&self) -> f64 {
        1.0 - self.delta
    }
}

/// Running tally for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model: ModelId,
    /// Items processed during profiling.
    pub n: u64,
    /// Items whose output matched the reference.
    pub e: u64,
    /// Average billed cost of one item.
    pub c: f64,
    pub status: Status,
    #[serde(default)]
    pub is_reference: bool,
    #[serde(default)]
    pub invocations: u64,
    #[serde(default)]
    pub billed: f64,
}

impl ModelProfile {
    pub fn candidate(model: ModelId, initial_cost: f64) -> Self {
        Self { model, n: 0, e: 0, c: initial_cost, status: Status::Unknown, is_reference: false, invocations: 0, billed: 0.0 }
    }

    pub fn reference(model: ModelId, initial_cost: f64) -> Self {
        Self { status: Status::Valid, is_reference: true, ..Self::candidate(model, initial_cost) }
    }

    pub fn name(&self) -> &str {
        &self.model.name
    }

    /// Point estimate `e / n` of the agreement rate.
    pub fn accuracy_estimate(&self) -> Option<f64> {
        (self.n > 0).then(|| self.e as f64 / self.n as f64)
    }

    pub fn interval(&self, gamma: f64) -> Result<BinomInterval> {
        if self.is_reference {
            return Ok(BinomInterval { lower: 1.0, upper: 1.0, confidence: gamma });
        }
        Ok(binom_ci(self.n, self.e, gamma)?)
    }

    fn record(&mut self, cost: f64, agrees: bool) {
        self.n += 1;
        if agrees {
            self.e += 1;
        }
        self.invocations += 1;
        self.billed += cost;
        self.c = self.billed / self.invocations as f64;
    }
}

fn cost_key(p: &ModelProfile) -> (f64, &str) {
    (p.c, p.name())
}

fn cheaper(a: &ModelProfile, b: &ModelProfile) -> std::cmp::Ordering {
    let (ca, na) = cost_key(a);
    let (cb, nb) = cost_key(b);
    ca.total_cmp(&cb).then_with(|| na.cmp(nb))
}

/// Cheapest valid model; ties go to the lexicographically smaller name.
pub fn cheapest_valid(profiles: &[ModelProfile]) -> Option<&ModelProfile> {
    profiles.iter().filter(|p| p.status == Status::Valid).min_by(|a, b| cheaper(a, b))
}

/// Unknown models in ascending unit-cost order (ties by name).
pub fn unknown_by_cost(profiles: &[ModelProfile]) -> Vec<&ModelProfile> {
    let mut v: Vec<_> = profiles.iter().filter(|p| p.status == Status::Unknown).collect();
    v.sort_by(|a, b| cheaper(a, b));
    v
}

pub fn reference_profile(profiles: &[ModelProfile]) -> Result<&ModelProfile> {
    profiles
        .iter()
        .find(|p| p.is_reference)
        .ok_or_else(|| Error::InvalidInput("profiles do not include the reference model".into()))
}

/// Moves undecided models to `Valid` or `Invalid` once their interval at
/// `gamma` clears or misses `1 - delta`. Decided models are left alone.
pub fn eval_models(profiles: &mut [ModelProfile], spec: &AccuracySpec) -> Result<()> {
    let t = spec.threshold();
    for p in profiles.iter_mut().filter(|p| p.status == Status::Unknown) {
        if upper_bound_below(p.n, p.e, spec.gamma, t)? {
            p.status = Status::Invalid;
        } else if lower_bound_reaches(p.n, p.e, spec.gamma, t)? {
            p.status = Status::Valid;
        }
    }
    Ok(())
}

/// Stop once a valid model is at least as cheap as every unknown one.
pub fn terminate_profile_all(profiles: &[ModelProfile]) -> bool {
    let Some(best_valid) = cheapest_valid(profiles) else {
        return false;
    };
    let min_unknown = profiles
        .iter()
        .filter(|p| p.status == Status::Unknown)
        .map(|p| p.c)
        .fold(f64::INFINITY, f64::min);
    best_valid.c <= min_unknown
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// Stop once the cheapest certified model is found.
    ProfileAll,
    /// Additionally stop when more profiling is expected to cost more than it saves.
    Smart,
    /// Profile every given item.
    Exhaust,
}

#[derive(Debug, Clone)]
pub struct ProfileOptions {
    pub termination: Termination,
    pub estimator: EstimatorOptions,
    /// Expected tokens per item, used to seed unit costs before any call.
    pub mean_tokens: Option<f64>,
    pub collect_trace: bool,
    /// Fan out candidate calls for one item across threads.
    pub concurrent_fanout: bool,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            termination: Termination::Smart,
            estimator: EstimatorOptions::default(),
            mean_tokens: None,
            collect_trace: false,
            concurrent_fanout: false,
        }
    }
}

/// Per-model state after one profiled item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceModel {
    pub model: String,
    pub output: String,
    pub agrees: bool,
    pub n: u64,
    pub e: u64,
    pub c: f64,
    pub lower: f64,
    pub upper: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub item_id: u64,
    pub items_profiled: usize,
    pub reference_output: String,
    pub models: Vec<TraceModel>,
}

#[derive(Debug, Clone)]
pub struct ProfileOutcome {
    pub profiles: Vec<ModelProfile>,
    /// Reference outputs for the profiled prefix of the items.
    pub outputs: Vec<(u64, String)>,
    pub ledger: Ledger,
    pub trace: Vec<TraceRecord>,
}

impl ProfileOutcome {
    pub fn profiled(&self) -> usize {
        self.outputs.len()
    }
}

/// Initial profiles for every model in `pool`, the reference marked valid.
pub fn initial_profiles(pool: &ModelPool, reference: &str, mean_tokens: Option<f64>) -> Result<Vec<ModelProfile>> {
    pool.get(reference)?;
    Ok(pool
        .models()
        .map(|m| {
            let c0 = mean_tokens.map_or(0.0, |t| t / 1000.0 * m.price_per_1k_tokens);
            if m.name == reference {
                ModelProfile::reference(m.clone(), c0)
            } else {
                ModelProfile::candidate(m.clone(), c0)
            }
        })
        .collect())
}

fn invoke_all(
    backends: &[(usize, Arc<dyn Backend>)],
    question: &str,
    item: &TaskItem,
    concurrent: bool,
) -> Vec<(usize, std::result::Result<Invocation, BackendError>)> {
    if !concurrent || backends.len() < 2 {
        return backends.iter().map(|(i, b)| (*i, b.invoke(question, item))).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = backends
            .iter()
            .map(|(i, b)| s.spawn(move || (*i, b.invoke(question, item))))
            .collect();
        handles.into_iter().map(|h| h.join().expect("invocation thread panicked")).collect()
    })
}

/// Profiles `items` in order until the termination rule fires or the items
/// run out. Every profiled item keeps the reference model's output.
pub fn profile(
    pool: &ModelPool,
    reference: &str,
    question: &str,
    items: &[TaskItem],
    spec: &AccuracySpec,
    opts: &ProfileOptions,
) -> Result<ProfileOutcome> {
    if items.is_empty() {
        return Err(Error::InvalidInput("profiling needs at least one item".into()));
    }
    let mut profiles = initial_profiles(pool, reference, opts.mean_tokens)?;
    let ref_idx = profiles.iter().position(|p| p.is_reference).expect("reference present");
    let ref_backend = pool.get(reference)?.clone();
    let backends: Vec<Arc<dyn Backend>> = profiles
        .iter()
        .map(|p| pool.get(p.name()).cloned())
        .collect::<std::result::Result<_, _>>()?;
    let mut estimator = CostEstimator::new(*spec, opts.estimator.clone());
    let mut ledger = Ledger::new();
    let mut outputs = Vec::new();
    let mut trace = Vec::new();

    for (idx, item) in items.iter().enumerate() {
        let ref_out = match ref_backend.invoke(question, item) {
            Ok(inv) => inv,
            Err(source) => return Err(Error::Aborted { source, ledger: Box::new(ledger) }),
        };
        ledger.record(reference, item.token_count as u64, ref_out.cost);
        profiles[ref_idx].record(ref_out.cost, true);

        let active: Vec<(usize, Arc<dyn Backend>)> = profiles
            .iter()
            .enumerate()
            .filter(|(_, p)| p.status == Status::Unknown)
            .map(|(i, _)| (i, backends[i].clone()))
            .collect();
        let results = invoke_all(&active, question, item, opts.concurrent_fanout);

        let mut step = Vec::with_capacity(results.len());
        let mut failure = None;
        for (i, res) in results {
            match res {
                Ok(inv) => {
                    ledger.record(profiles[i].name(), item.token_count as u64, inv.cost);
                    let agrees = outputs_equivalent(&inv.output, &ref_out.output);
                    profiles[i].record(inv.cost, agrees);
                    step.push((i, inv.output, agrees));
                }
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        if let Some(source) = failure {
            return Err(Error::Aborted { source, ledger: Box::new(ledger) });
        }

        eval_models(&mut profiles, spec)?;
        outputs.push((item.item_id, ref_out.output.clone()));

        if opts.collect_trace {
            let mut models = Vec::with_capacity(step.len());
            for (i, output, agrees) in step {
                let p = &profiles[i];
                let ci = p.interval(spec.gamma)?;
                models.push(TraceModel {
                    model: p.name().to_string(),
                    output,
                    agrees,
                    n: p.n,
                    e: p.e,
                    c: p.c,
                    lower: ci.lower,
                    upper: ci.upper,
                    status: p.status,
                });
            }
            trace.push(TraceRecord {
                item_id: item.item_id,
                items_profiled: idx + 1,
                reference_output: ref_out.output,
                models,
            });
        }

        let remaining = (items.len() - idx - 1) as u64;
        let stop = match opts.termination {
            Termination::ProfileAll => terminate_profile_all(&profiles),
            Termination::Smart => estimator.terminate_profile_smart(&profiles, remaining)?,
            Termination::Exhaust => false,
        };
        if stop {
            break;
        }
    }

    Ok(ProfileOutcome { profiles, outputs, ledger, trace })
}
