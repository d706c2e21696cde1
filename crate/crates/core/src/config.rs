//! JSON configuration for single runs and sweeps.
//!
//! Parsing is strict: unknown fields are rejected, and errors carry the
//! line, column and field path of the offending value.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{
    namespace_for, splitmix64, Backend, ModelId, ModelPool, PromptTemplate, RemoteBackend, RemoteOptions,
    ReplayBackend, SimModelSpec, SimulatedBackend, TaskItem,
};
use crate::error::{Error, Result};
use crate::orchestrator::{RunConfig, Variant};
use crate::profiler::{AccuracySpec, EstimatorOptions};
use crate::sim::{presets, BenchmarkSpec, ScenarioSpec, SimModel};
use crate::stats::MIN_NODES as MIN_QUADRATURE_NODES;

const DEFAULT_DELTA: f64 = 0.1;
const DEFAULT_GAMMA: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Agrees with the reference on each item with probability `accuracy`
    /// (1 if omitted).
    Simulated {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        accuracy: Option<f64>,
    },
    /// OpenAI-compatible chat endpoint.
    Remote { endpoint: String },
    /// JSON-lines fixture of recorded outputs.
    Replay { fixture: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub price_per_1k_tokens: f64,
    pub backend: BackendConfig,
}

impl ModelConfig {
    fn id(&self) -> ModelId {
        ModelId::new(&self.name, self.price_per_1k_tokens)
    }

    fn simulated_accuracy(&self) -> Option<f64> {
        match self.backend {
            BackendConfig::Simulated { accuracy } => Some(accuracy.unwrap_or(1.0)),
            _ => None,
        }
    }
}

/// Either a named preset (`imdb`, `sms-spam`, `ag-news`) with optional
/// overrides, or a full description.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance_count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_tokens: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_count: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_dispersion: Option<f64>,
    /// Divide the instance count by this.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<u64>,
}

impl BenchmarkConfig {
    pub fn resolve(&self) -> Result<BenchmarkSpec> {
        let mut spec = match &self.preset {
            Some(p) => BenchmarkSpec::preset(p).ok_or_else(|| {
                Error::Config(format!("benchmark.preset: unknown preset {p:?}; expected imdb, sms-spam or ag-news"))
            })?,
            None => {
                let missing = |f: &str| Error::Config(format!("benchmark.{f}: required when no preset is given"));
                BenchmarkSpec::new(
                    self.name.clone().ok_or_else(|| missing("name"))?,
                    self.instance_count.ok_or_else(|| missing("instance_count"))?,
                    self.mean_tokens.ok_or_else(|| missing("mean_tokens"))?,
                    self.label_count.ok_or_else(|| missing("label_count"))?,
                )
            }
        };
        if let Some(n) = &self.name {
            spec.name = n.clone();
        }
        if let Some(n) = self.instance_count {
            spec.instance_count = n;
        }
        if let Some(t) = self.mean_tokens {
            spec.mean_tokens = t;
        }
        if let Some(l) = self.label_count {
            spec.label_count = l;
        }
        if let Some(d) = self.token_dispersion {
            spec.token_dispersion = d;
        }
        if let Some(s) = self.scale {
            if s == 0 {
                return Err(Error::Config("benchmark.scale: must be at least 1".into()));
            }
            spec = spec.scaled(s);
        }
        spec.validate().map_err(|e| Error::Config(format!("benchmark: {e}")))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub timeout_secs: f64,
    pub max_attempts: u32,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        let d = RemoteOptions::default();
        Self { timeout_secs: d.timeout.as_secs_f64(), max_attempts: d.max_attempts, max_in_flight: d.max_in_flight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Named scenario family for sweeps: `table3`, `table3-small` or `fig10`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<Variant>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkConfig>,
    /// JSON-lines file of task items, instead of a generated benchmark.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items_file: Option<PathBuf>,
    #[serde(default)]
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorOptions>,
    /// Record per-item confidence intervals during profiling.
    #[serde(default)]
    pub trace: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<PromptTemplate>,
    #[serde(default)]
    pub remote: RemoteConfig,
    #[serde(default = "one")]
    pub application_threads: usize,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> usize {
    1
}

fn in_open_unit(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{field}: must lie in (0, 1), got {v}")))
    }
}

impl Config {
    /// Parses and validates `text`; `origin` labels diagnostics.
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config(format!("{origin}:{}:{}: field `{path}`: {}", inner.line(), inner.column(), bare(&inner)))
        })?;
        de.end().map_err(|e| Error::Config(format!("{origin}:{}:{}: {}", e.line(), e.column(), bare(&e))))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json_str(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Command-line overrides; each replaces the matching list as well.
    pub fn apply_overrides(&mut self, seed: Option<u64>, delta: Option<f64>, variant: Option<Variant>) -> Result<()> {
        if let Some(s) = seed {
            self.seed = Some(s);
            self.seeds = Some(vec![s]);
        }
        if let Some(d) = delta {
            self.delta = Some(d);
            self.deltas = Some(vec![d]);
        }
        if let Some(v) = variant {
            self.variant = Some(v);
            self.variants = Some(vec![v]);
        }
        self.validate()
    }

    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(DEFAULT_DELTA)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(DEFAULT_GAMMA)
    }

    pub fn variant(&self) -> Variant {
        self.variant.unwrap_or(Variant::ModelMix)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn spec(&self) -> Result<AccuracySpec> {
        AccuracySpec::new(self.delta(), self.gamma())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Semantic checks; messages start with the offending field.
    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.delta {
            in_open_unit("delta", d)?;
        }
        if let Some(g) = self.gamma {
            in_open_unit("gamma", g)?;
        }
        if let Some(ds) = &self.deltas {
            if ds.is_empty() {
                return Err(Error::Config("deltas: must not be empty".into()));
            }
            for (i, &d) in ds.iter().enumerate() {
                in_open_unit(&format!("deltas[{i}]"), d)?;
            }
        }
        if self.seeds.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::Config("seeds: must not be empty".into()));
        }
        if self.variants.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::Config("variants: must not be empty".into()));
        }
        if let Some(s) = self.grid_step {
            in_open_unit("grid_step", s)?;
        }
        if let Some(e) = &self.estimator {
            if e.quadrature_nodes < MIN_QUADRATURE_NODES {
                return Err(Error::Config(format!(
                    "estimator.quadrature_nodes: must be at least {MIN_QUADRATURE_NODES}, got {}",
                    e.quadrature_nodes
                )));
            }
        }
        if self.application_threads == 0 {
            return Err(Error::Config("application_threads: must be at least 1".into()));
        }
        if let Some(b) = &self.benchmark {
            b.resolve()?;
        }
        if self.benchmark.is_some() && self.items_file.is_some() {
            return Err(Error::Config("items_file: cannot be combined with benchmark".into()));
        }

        if let Some(p) = &self.preset {
            if presets::by_name(p).is_none() {
                return Err(Error::Config(format!("preset: unknown preset {p:?}; expected table3, table3-small or fig10")));
            }
            if !self.models.is_empty() || self.reference.is_some() {
                return Err(Error::Config("preset: fixes its own models; drop models and reference".into()));
            }
            return Ok(());
        }

        if self.models.is_empty() {
            return Err(Error::Config("models: at least the reference model is required".into()));
        }
        for (i, m) in self.models.iter().enumerate() {
            if m.name.trim().is_empty() {
                return Err(Error::Config(format!("models[{i}].name: must not be empty")));
            }
            if !(m.price_per_1k_tokens >= 0.0 && m.price_per_1k_tokens.is_finite()) {
                return Err(Error::Config(format!(
                    "models[{i}].price_per_1k_tokens: must be a non-negative number, got {}",
                    m.price_per_1k_tokens
                )));
            }
            if self.models[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::Config(format!("models[{i}].name: duplicate model {:?}", m.name)));
            }
            if let BackendConfig::Simulated { accuracy: Some(a) } = m.backend {
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::Config(format!("models[{i}].backend.accuracy: must lie in [0, 1], got {a}")));
                }
            }
        }
        let reference = self.reference.as_deref().ok_or_else(|| Error::Config("reference: required".into()))?;
        let Some(r) = self.models.iter().position(|m| m.name == reference) else {
            return Err(Error::Config(format!("reference: {reference:?} is not among models")));
        };
        if self.models[r].simulated_accuracy().is_some_and(|a| a != 1.0) {
            return Err(Error::Config(format!("models[{r}].backend.accuracy: the reference agrees with itself; use 1")));
        }
        if self.benchmark.is_none() && self.items_file.is_none() {
            return Err(Error::Config("benchmark: required unless items_file is given".into()));
        }
        Ok(())
    }

    fn all_simulated(&self) -> bool {
        self.models.iter().all(|m| m.simulated_accuracy().is_some())
    }

    fn estimator(&self) -> EstimatorOptions {
        self.estimator.clone().unwrap_or_default()
    }

    /// A scenario for this config when every model is simulated and the
    /// items come from a benchmark; `None` otherwise.
    pub fn scenario(&self) -> Result<Option<ScenarioSpec>> {
        let Some(bench) = &self.benchmark else {
            return Ok(None);
        };
        if self.preset.is_some() || !self.all_simulated() {
            return Ok(None);
        }
        let reference = self.reference.clone().expect("validated");
        let bench = bench.resolve()?;
        let models = self
            .models
            .iter()
            .filter(|m| m.name != reference)
            .map(|m| SimModel::new(&m.name, m.price_per_1k_tokens, m.simulated_accuracy().expect("simulated")))
            .collect();
        let ref_id = self.models.iter().find(|m| m.name == reference).expect("validated").id();
        let mut s = ScenarioSpec::new(bench.name.clone(), bench, ref_id, models);
        self.apply_sweep_settings(&mut s, true);
        Ok(Some(s))
    }

    fn apply_sweep_settings(&self, s: &mut ScenarioSpec, own: bool) {
        if let Some(d) = &self.deltas {
            s.deltas = d.clone();
        } else if let Some(d) = self.delta {
            s.deltas = vec![d];
        }
        if let Some(v) = &self.variants {
            s.variants = v.clone();
        } else if let Some(v) = self.variant {
            s.variants = vec![v];
        }
        if let Some(seeds) = &self.seeds {
            s.seeds = seeds.clone();
        } else if let Some(seed) = self.seed {
            s.seeds = vec![seed];
        }
        if let Some(g) = self.gamma {
            s.gamma = g;
        }
        if let Some(g) = self.grid_step {
            s.grid_step = g;
        }
        if own || self.estimator.is_some() {
            s.estimator = self.estimator();
        }
        s.collect_trace = self.trace;
    }

    /// Scenarios for the `sweep` command.
    pub fn sweep_scenarios(&self) -> Result<Vec<ScenarioSpec>> {
        if let Some(p) = &self.preset {
            let mut all = presets::by_name(p).expect("validated");
            for s in &mut all {
                self.apply_sweep_settings(s, false);
            }
            return Ok(all);
        }
        self.scenario()?.map(|s| vec![s]).ok_or_else(|| {
            Error::Config("benchmark: sweeps need a generated benchmark and simulated models only".into())
        })
    }

    fn remote_options(&self) -> RemoteOptions {
        RemoteOptions {
            timeout: Duration::from_secs_f64(self.remote.timeout_secs),
            max_attempts: self.remote.max_attempts,
            max_in_flight: self.remote.max_in_flight,
            template: self.prompt.clone().unwrap_or_default(),
            ..RemoteOptions::default()
        }
    }

    fn load_items(&self) -> Result<Vec<TaskItem>> {
        if let Some(p) = &self.items_file {
            let path = self.resolve(p);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("items_file: {}: {e}", path.display())))?;
            return text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    serde_json::from_str::<TaskItem>(l)
                        .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))
                })
                .collect();
        }
        let bench = self.benchmark.as_ref().expect("validated").resolve()?;
        crate::sim::generate_benchmark(&bench, self.seed())
    }

    /// Everything the `run` command needs. Fully simulated benchmark
    /// configs reproduce the matching sweep cell exactly.
    pub fn run_setup(&self) -> Result<RunSetup> {
        if self.preset.is_some() {
            return Err(Error::Config("preset: presets describe sweeps; use the sweep command".into()));
        }
        if let Some(s) = self.scenario()? {
            let seed = self.seed();
            return Ok(RunSetup {
                pool: s.pool(seed)?,
                config: s.run_config(self.variant(), self.delta(), seed)?.with_threads(self.application_threads),
                items: s.items(seed)?,
                label_count: Some(s.benchmark.label_count),
            });
        }

        let items = self.load_items()?;
        let labels = self.benchmark.as_ref().map(|b| b.resolve()).transpose()?.map(|b| b.label_count);
        let world = splitmix64(self.seed());
        let mut pool = ModelPool::new();
        for m in &self.models {
            let backend: Arc<dyn Backend> = match &m.backend {
                BackendConfig::Simulated { accuracy } => Arc::new(SimulatedBackend::new(
                    SimModelSpec::new(m.id(), accuracy.unwrap_or(1.0), namespace_for(world, &m.name)),
                    labels.unwrap_or(2),
                )),
                BackendConfig::Remote { endpoint } => Arc::new(RemoteBackend::new(m.id(), endpoint, self.remote_options())?),
                BackendConfig::Replay { fixture } => Arc::new(ReplayBackend::from_jsonl(m.id(), &self.resolve(fixture))?),
            };
            pool.register(backend)?;
        }
        let mut config = RunConfig::new(self.variant(), self.spec()?, self.reference.clone().expect("validated"));
        config.seed = self.seed();
        config.grid_step = self.grid_step.unwrap_or(config.grid_step);
        config.estimator = self.estimator();
        config.collect_trace = self.trace;
        config.application_threads = self.application_threads;
        config.mean_tokens = match &self.benchmark {
            Some(b) => Some(b.resolve()?.mean_tokens),
            None if !items.is_empty() => {
                Some(items.iter().map(|i| i.token_count as f64).sum::<f64>() / items.len() as f64)
            }
            None => None,
        };
        let label_count = if self.all_simulated() { labels.or(Some(2)) } else { None };
        Ok(RunSetup { pool, config, items, label_count })
    }
}

pub struct RunSetup {
    pub pool: ModelPool,
    pub config: RunConfig,
    pub items: Vec<TaskItem>,
    /// Set when every model is simulated, so agreement can be scored.
    pub label_count: Option<u32>,
}

/// serde_json's message without its trailing position, which we print up front.
fn bare(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    let suffix = format!(" at line {} column {}", e.line(), e.column());
    msg.strip_suffix(&suffix).map(str::to_string).unwrap_or(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "models": [
            {"name": "big", "price_per_1k_tokens": 0.03, "backend": {"kind": "simulated"}},
            {"name": "small", "price_per_1k_tokens": 0.001, "backend": {"kind": "simulated", "accuracy": 0.95}}
        ],
        "reference": "big",
        "delta": 0.1,
        "gamma": 0.95,
        "variant": "model-mix",
        "seed": 3,
        "benchmark": {"preset": "sms-spam", "scale": 10}
    }"#;

    fn err(text: &str) -> String {
        Config::from_json_str(text, "cfg.json").unwrap_err().to_string()
    }

    #[test]
    fn minimal_config_parses() {
        let cfg = Config::from_json_str(MINIMAL, "cfg.json").unwrap();
        let setup = cfg.run_setup().unwrap();
        assert_eq!(setup.config.variant, Variant::ModelMix);
        assert_eq!(setup.config.spec.delta, 0.1);
        assert_eq!(setup.config.seed, 3);
        assert_eq!(setup.items.len(), 557);
        assert_eq!(setup.pool.len(), 2);
        assert_eq!(setup.label_count, Some(2));
    }

    #[test]
    fn out_of_range_delta_names_the_field() {
        let msg = err(&MINIMAL.replace("\"delta\": 0.1", "\"delta\": 1.5"));
        assert!(msg.contains("delta: must lie in (0, 1), got 1.5"), "{msg}");
    }

    #[test]
    fn unknown_field_is_rejected_with_position() {
        let msg = err(&MINIMAL.replace("\"models\"", "\"modles\""));
        assert!(msg.contains("unknown field `modles`"), "{msg}");
        assert!(msg.contains("cfg.json:2:"), "{msg}");

        let msg = err(&MINIMAL.replace("\"accuracy\": 0.95", "\"acuracy\": 0.95"));
        assert!(msg.contains("models[1].backend"), "{msg}");
    }

    #[test]
    fn reference_must_be_a_model() {
        let msg = err(&MINIMAL.replace("\"reference\": \"big\"", "\"reference\": \"huge\""));
        assert!(msg.contains("reference: \"huge\" is not among models"), "{msg}");
    }

    #[test]
    fn overrides_replace_lists() {
        let mut cfg = Config::from_json_str(MINIMAL, "cfg.json").unwrap();
        cfg.apply_overrides(Some(9), Some(0.05), Some(Variant::ProfileAll)).unwrap();
        let s = cfg.sweep_scenarios().unwrap();
        assert_eq!((s[0].seeds.clone(), s[0].deltas.clone()), (vec![9], vec![0.05]));
        assert_eq!(s[0].variants, [Variant::ProfileAll]);
        assert!(cfg.apply_overrides(None, Some(0.0), None).is_err());
    }

    #[test]
    fn run_matches_the_sweep_cell() {
        let cfg = Config::from_json_str(MINIMAL, "cfg.json").unwrap();
        let setup = cfg.run_setup().unwrap();
        let run = crate::orchestrator::smart_run(&setup.pool, &setup.config, "", &setup.items).unwrap();
        let s = &cfg.sweep_scenarios().unwrap()[0];
        let base = crate::sim::baseline_cost(s, 3).unwrap();
        let cell = crate::sim::run_cell(s, Variant::ModelMix, 0.1, 3, base);
        assert_eq!(cell.total_cost, run.total_cost);
    }

    #[test]
    fn preset_sweeps_take_overrides() {
        let cfg = Config::from_json_str(r#"{"preset": "fig10", "seeds": [1, 2]}"#, "p.json").unwrap();
        let s = cfg.sweep_scenarios().unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s[4].seeds, [1, 2]);
        assert_eq!(s[4].deltas, [0.1]);
        assert!(err(r#"{"preset": "fig11"}"#).contains("preset: unknown preset"));
    }

    #[test]
    fn explicit_benchmark_needs_every_field() {
        let text = MINIMAL.replace(r#"{"preset": "sms-spam", "scale": 10}"#, r#"{"name": "toy", "instance_count": 10}"#);
        assert!(err(&text).contains("benchmark.mean_tokens: required"));
    }

    #[test]
    fn replay_models_need_items() {
        let text = r#"{
            "models": [{"name": "r", "price_per_1k_tokens": 0.03, "backend": {"kind": "replay", "fixture": "f.jsonl"}}],
            "reference": "r"
        }"#;
        assert!(err(text).contains("benchmark: required unless items_file"));
    }
}
