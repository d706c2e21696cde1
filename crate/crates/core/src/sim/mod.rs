//! Synthetic benchmarks and seeded sweeps over accuracy targets.
//!
//! Every model is simulated: the reference answers with a deterministic
//! label and each candidate agrees with it on a per-item Bernoulli draw.
//! Because the draws are a pure function of `(scenario, seed, model,
//! item)`, runs of different variants and targets on the same seed see
//! exactly the same world, and realized agreement can be recounted exactly.

pub mod presets;
mod report;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{namespace_for, reference_label, splitmix64, ModelId, ModelPool, SimModelSpec, SimulatedBackend, TaskItem};
use crate::error::{Error, Result};
use crate::orchestrator::{smart_run, RunConfig, RunResult, Variant};
use crate::planner::DEFAULT_GRID_STEP;
use crate::profiler::{AccuracySpec, CostEstimate, CostEstimator, EstimatorOptions, ModelProfile};

pub use report::{
    summarize, write_breakdown_csv, write_ci_trace_csv, write_expected_cost_csv, write_failures_csv, write_ledger_csv,
    write_run_trace_csv, write_summary_csv, write_sweep_csv, SummaryRow,
};

/// Spread of per-item token counts, as a fraction of the mean.
pub const DEFAULT_TOKEN_DISPERSION: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub name: String,
    pub instance_count: u64,
    pub mean_tokens: f64,
    pub label_count: u32,
    /// Standard deviation of token counts over the mean. Zero spreads the
    /// rounded total as evenly as possible.
    #[serde(default = "default_dispersion")]
    pub token_dispersion: f64,
}

fn default_dispersion() -> f64 {
    DEFAULT_TOKEN_DISPERSION
}

impl BenchmarkSpec {
    pub fn new(name: impl Into<String>, instance_count: u64, mean_tokens: f64, label_count: u32) -> Self {
        Self { name: name.into(), instance_count, mean_tokens, label_count, token_dispersion: DEFAULT_TOKEN_DISPERSION }
    }

    /// Movie reviews: 50,000 items, 293.7 tokens, 2 labels.
    pub fn imdb() -> Self {
        Self::new("imdb", 50_000, 293.7, 2)
    }

    /// Text messages: 5,574 items, 22.9 tokens, 2 labels.
    pub fn sms_spam() -> Self {
        Self::new("sms-spam", 5_574, 22.9, 2)
    }

    /// News headlines: 127,600 items, 51.2 tokens, 4 labels.
    pub fn ag_news() -> Self {
        Self::new("ag-news", 127_600, 51.2, 4)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "imdb" => Some(Self::imdb()),
            "sms-spam" => Some(Self::sms_spam()),
            "ag-news" => Some(Self::ag_news()),
            _ => None,
        }
    }

    /// Same shape with `instance_count / divisor` items (at least one).
    pub fn scaled(mut self, divisor: u64) -> Self {
        self.instance_count = (self.instance_count / divisor.max(1)).max(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.instance_count == 0 {
            return Err(Error::InvalidInput(format!("benchmark {}: instance_count must be at least 1", self.name)));
        }
        if !(self.mean_tokens > 0.0 && self.mean_tokens.is_finite()) {
            return Err(Error::InvalidInput(format!("benchmark {}: mean_tokens must be positive", self.name)));
        }
        if self.label_count == 0 {
            return Err(Error::InvalidInput(format!("benchmark {}: label_count must be at least 1", self.name)));
        }
        if !(self.token_dispersion >= 0.0 && self.token_dispersion.is_finite()) {
            return Err(Error::InvalidInput(format!("benchmark {}: token_dispersion must be non-negative", self.name)));
        }
        Ok(())
    }
}

fn name_hash(name: &str) -> u64 {
    namespace_for(0, name)
}

/// Items `0..N` with token counts drawn from the seed.
pub fn generate_benchmark(spec: &BenchmarkSpec, seed: u64) -> Result<Vec<TaskItem>> {
    spec.validate()?;
    let n = spec.instance_count;
    if spec.token_dispersion == 0.0 {
        let total = (n as f64 * spec.mean_tokens).round() as u128;
        let at = |i: u64| (i as u128 * total / n as u128) as u64;
        return Ok((0..n).map(|i| TaskItem::new(i, (at(i + 1) - at(i)) as u32)).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ name_hash(&spec.name)));
    let normal = Normal::new(spec.mean_tokens, spec.token_dispersion * spec.mean_tokens)
        .map_err(|e| Error::InvalidInput(format!("benchmark {}: {e}", spec.name)))?;
    Ok((0..n)
        .map(|i| {
            let t: f64 = normal.sample(&mut rng);
            TaskItem::new(i, t.round().clamp(1.0, u32::MAX as f64) as u32)
        })
        .collect())
}

/// A simulated model and its true agreement rate with the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimModel {
    pub name: String,
    pub price_per_1k_tokens: f64,
    pub accuracy: f64,
}

impl SimModel {
    pub fn new(name: impl Into<String>, price_per_1k_tokens: f64, accuracy: f64) -> Self {
        Self { name: name.into(), price_per_1k_tokens, accuracy }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub benchmark: BenchmarkSpec,
    pub reference: ModelId,
    pub models: Vec<SimModel>,
    pub deltas: Vec<f64>,
    pub gamma: f64,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub grid_step: f64,
    pub estimator: EstimatorOptions,
    pub collect_trace: bool,
}

impl ScenarioSpec {
    /// Defaults: every non-baseline variant, `γ = 0.95`, the 0.02..0.20 target grid, seeds 0..10.
    pub fn new(name: impl Into<String>, benchmark: BenchmarkSpec, reference: ModelId, models: Vec<SimModel>) -> Self {
        Self {
            name: name.into(),
            benchmark,
            reference,
            models,
            deltas: (1..=10).map(|i| i as f64 * 0.02).map(|d| (d * 100.0).round() / 100.0).collect(),
            gamma: 0.95,
            seeds: (0..10).collect(),
            variants: vec![Variant::ProfileAll, Variant::ProfileSmart, Variant::ModelMix],
            grid_step: DEFAULT_GRID_STEP,
            estimator: EstimatorOptions::default(),
            collect_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.benchmark.validate()?;
        let bad = |msg: String| Err(Error::InvalidInput(format!("scenario {}: {msg}", self.name)));
        if self.deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
            return bad("every delta must lie in (0, 1)".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.seeds.is_empty() || self.variants.is_empty() || self.deltas.is_empty() {
            return bad("needs at least one seed, variant and delta".into());
        }
        let mut names = vec![self.reference.name.as_str()];
        for m in &self.models {
            if !(0.0..=1.0).contains(&m.accuracy) {
                return bad(format!("accuracy of {} must lie in [0, 1]", m.name));
            }
            if names.contains(&m.name.as_str()) {
                return bad(format!("model {} listed twice", m.name));
            }
            names.push(&m.name);
        }
        Ok(())
    }

    fn world_key(&self, seed: u64) -> u64 {
        splitmix64(name_hash(&self.name) ^ splitmix64(seed))
    }

    /// Simulated pool for `seed`; the reference has accuracy 1.
    pub fn pool(&self, seed: u64) -> Result<ModelPool> {
        let key = self.world_key(seed);
        let labels = self.benchmark.label_count;
        let mut pool = ModelPool::new();
        let reference = SimModelSpec::new(self.reference.clone(), 1.0, namespace_for(key, &self.reference.name));
        pool.register(Arc::new(SimulatedBackend::new(reference, labels)))?;
        for m in &self.models {
            let spec = SimModelSpec::new(ModelId::new(&m.name, m.price_per_1k_tokens), m.accuracy, namespace_for(key, &m.name));
            pool.register(Arc::new(SimulatedBackend::new(spec, labels)))?;
        }
        Ok(pool)
    }

    pub fn items(&self, seed: u64) -> Result<Vec<TaskItem>> {
        generate_benchmark(&self.benchmark, seed)
    }

    pub fn run_config(&self, variant: Variant, delta: f64, seed: u64) -> Result<RunConfig> {
        let mut cfg = RunConfig::new(variant, AccuracySpec::new(delta, self.gamma)?, &self.reference.name);
        cfg.seed = seed;
        cfg.grid_step = self.grid_step;
        cfg.estimator = self.estimator.clone();
        cfg.mean_tokens = Some(self.benchmark.mean_tokens);
        cfg.collect_trace = self.collect_trace;
        Ok(cfg)
    }
}

/// Share of outputs equal to the reference label.
pub fn realized_agreement(result: &RunResult, label_count: u32) -> f64 {
    if result.outputs.is_empty() {
        return 1.0;
    }
    let hits = result
        .outputs
        .iter()
        .filter(|(id, out)| *out == reference_label(*id, label_count))
        .count();
    hits as f64 / result.outputs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub model: String,
    pub items: u64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub items_profiled: usize,
    pub model: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub benchmark: String,
    pub variant: Variant,
    pub delta: f64,
    pub seed: u64,
    pub total_cost: f64,
    pub savings: f64,
    pub agreement: f64,
    pub violation: bool,
    pub profiled: usize,
    pub breakdown: Vec<BreakdownRow>,
    pub ci_trace: Vec<CiRow>,
    pub error: Option<String>,
}

impl CellResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Runs one variant of a scenario; `baseline` is the reference-only cost
/// for the same seed.
pub fn run_cell(scenario: &ScenarioSpec, variant: Variant, delta: f64, seed: u64, baseline: f64) -> CellResult {
    let mut cell = CellResult {
        benchmark: scenario.name.clone(),
        variant,
        delta,
        seed,
        total_cost: f64::NAN,
        savings: f64::NAN,
        agreement: f64::NAN,
        violation: false,
        profiled: 0,
        breakdown: Vec::new(),
        ci_trace: Vec::new(),
        error: None,
    };
    let outcome = (|| {
        let pool = scenario.pool(seed)?;
        let items = scenario.items(seed)?;
        let cfg = scenario.run_config(variant, delta, seed)?;
        smart_run(&pool, &cfg, "", &items).map(|r| (pool, r))
    })();
    match outcome {
        Ok((pool, res)) => {
            cell.total_cost = res.total_cost;
            cell.savings = baseline / res.total_cost;
            cell.agreement = realized_agreement(&res, scenario.benchmark.label_count);
            cell.violation = cell.agreement < 1.0 - delta;
            cell.profiled = res.profiled;
            cell.breakdown = pool
                .models()
                .map(|m| {
                    let e = res.ledger.entry(&m.name);
                    BreakdownRow { model: m.name.clone(), items: e.invocations, cost: e.cost }
                })
                .collect();
            cell.ci_trace = res
                .trace
                .iter()
                .flat_map(|t| {
                    t.models.iter().map(move |m| CiRow {
                        items_profiled: t.items_profiled,
                        model: m.model.clone(),
                        lower: m.lower,
                        upper: m.upper,
                    })
                })
                .collect();
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

/// Reference-only cost of one seed's world.
pub fn baseline_cost(scenario: &ScenarioSpec, seed: u64) -> Result<f64> {
    let pool = scenario.pool(seed)?;
    let items = scenario.items(seed)?;
    let cfg = scenario.run_config(Variant::ReferenceOnly, scenario.deltas[0], seed)?;
    Ok(smart_run(&pool, &cfg, "", &items)?.total_cost)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Ordered by scenario, variant, delta, seed as listed in the input.
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn summary(&self) -> Vec<SummaryRow> {
        summarize(&self.cells)
    }
}

/// Every `(scenario, variant, delta, seed)` cell, on up to `parallel` threads.
///
/// Cell results do not depend on `parallel` or on scheduling.
pub fn run_sweep(scenarios: &[ScenarioSpec], parallel: usize) -> Result<SweepResult> {
    for s in scenarios {
        s.validate()?;
    }
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;

    let seeds: Vec<(usize, u64)> =
        scenarios.iter().enumerate().flat_map(|(i, s)| s.seeds.iter().map(move |&seed| (i, seed))).collect();
    let baselines: Vec<Result<f64>> =
        threads.install(|| seeds.par_iter().map(|&(i, seed)| baseline_cost(&scenarios[i], seed)).collect());
    let baseline_of = |i: usize, seed: u64| -> f64 {
        let pos = seeds.iter().position(|&s| s == (i, seed)).expect("seed listed");
        baselines[pos].as_ref().copied().unwrap_or(f64::NAN)
    };

    let mut jobs = Vec::new();
    for (i, s) in scenarios.iter().enumerate() {
        for &v in &s.variants {
            for &d in &s.deltas {
                for &seed in &s.seeds {
                    jobs.push((i, v, d, seed, baseline_of(i, seed)));
                }
            }
        }
    }
    let cells = threads.install(|| {
        jobs.par_iter().map(|&(i, v, d, seed, base)| run_cell(&scenarios[i], v, d, seed, base)).collect()
    });
    Ok(SweepResult { cells })
}

/// Expected cost of profiling exactly `k` more items for `k = 0, 1, 2, 4, ...`.
/// The `k = 0` row is the cost of stopping now.
pub fn expected_cost_trace(
    profiles: &[ModelProfile],
    spec: AccuracySpec,
    n_remaining: u64,
    opts: EstimatorOptions,
) -> Result<Vec<CostEstimate>> {
    let mut est = CostEstimator::new(spec, opts);
    let stop = est.stop_cost(profiles, n_remaining)?;
    let mut rows = vec![CostEstimate { k: 0, profiling_cost: 0.0, application_cost: stop, total: stop }];
    rows.extend(est.cost_curve(profiles, n_remaining)?);
    Ok(rows)
}
