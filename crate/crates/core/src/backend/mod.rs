//! Uniform invocation surface over models.
//!
//! A [`Backend`] answers one classification question for one [`TaskItem`]
//! and reports what the call was billed. Three implementations exist:
//! deterministic simulation, JSON-lines record/replay fixtures, and a
//! client for OpenAI-compatible chat-completion servers.

mod remote;
mod replay;
mod simulated;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use remote::{PromptTemplate, RemoteBackend, RemoteOptions, REMOTE_KEY_ENV};
pub use replay::{FixtureRecord, RecordingBackend, ReplayBackend};
pub use simulated::{namespace_for, reference_label, splitmix64, unit_draw, SimModelSpec, SimulatedBackend, DISAGREE_LABEL};

/// A model and its list price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelId {
    pub name: String,
    pub price_per_1k_tokens: f64,
}

impl ModelId {
    pub fn new(name: impl Into<String>, price_per_1k_tokens: f64) -> Self {
        Self { name: name.into(), price_per_1k_tokens }
    }

    /// List-price cost of sending `tokens` tokens to this model.
    pub fn cost_for(&self, tokens: u64) -> f64 {
        tokens as f64 / 1000.0 * self.price_per_1k_tokens
    }
}

/// One input of the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskItem {
    pub item_id: u64,
    pub token_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl TaskItem {
    pub fn new(item_id: u64, token_count: u32) -> Self {
        Self { item_id, token_count: token_count.max(1), payload: None }
    }

    pub fn with_payload(mut self, payload: impl Into<String>) -> Self {
        self.payload = Some(payload.into());
        self
    }
}

/// Result of a single model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub output: String,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport error calling {model}: {message}")]
    Transport { model: String, message: String },
    #[error("timed out calling {model}")]
    Timeout { model: String },
    #[error("malformed response from {model}: {message}")]
    Malformed { model: String, message: String },
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("no recorded output for model {model:?}, item {item_id}")]
    ReplayMiss { model: String, item_id: u64 },
    #[error("fixture error: {0}")]
    Fixture(String),
}

pub trait Backend: Send + Sync {
    fn model(&self) -> &ModelId;

    fn invoke(&self, question: &str, item: &TaskItem) -> Result<Invocation, BackendError>;
}

/// Trim + case-fold exact match.
pub fn outputs_equivalent(a: &str, b: &str) -> bool {
    let (a, b) = (a.trim(), b.trim());
    a == b || a.to_lowercase() == b.to_lowercase()
}

/// Named set of backends with unique model names.
#[derive(Clone, Default)]
pub struct ModelPool {
    backends: Vec<Arc<dyn Backend>>,
    index: HashMap<String, usize>,
}

impl ModelPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, backend: Arc<dyn Backend>) -> Result<(), BackendError> {
        let model = backend.model();
        if !(model.price_per_1k_tokens >= 0.0) {
            return Err(BackendError::Fixture(format!(
                "model {:?} has a negative price",
                model.name
            )));
        }
        let name = model.name.clone();
        if self.index.contains_key(&name) {
            return Err(BackendError::Fixture(format!("model {name:?} registered twice")));
        }
        self.index.insert(name, self.backends.len());
        self.backends.push(backend);
        Ok(())
    }

    pub fn with(mut self, backend: impl Backend + 'static) -> Result<Self, BackendError> {
        self.register(Arc::new(backend))?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Result<&Arc<dyn Backend>, BackendError> {
        self.index
            .get(name)
            .map(|&i| &self.backends[i])
            .ok_or_else(|| BackendError::UnknownModel(name.to_string()))
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelId> {
        self.backends.iter().map(|b| b.model())
    }

    pub fn backends(&self) -> &[Arc<dyn Backend>] {
        &self.backends
    }

    pub fn len(&self) -> usize {
        self.backends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backends.is_empty()
    }
}

impl std::fmt::Debug for ModelPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.models().map(|m| &m.name)).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equivalence_examples() {
        assert!(outputs_equivalent("Positive", "positive"));
        assert!(!outputs_equivalent("spam", "ham"));
        assert!(outputs_equivalent("World ", "World"));
        assert!(outputs_equivalent("  Sci/Tech\n", "sci/tech"));
    }

    proptest! {
        #[test]
        fn equivalence_is_symmetric_and_reflexive(a in "[ a-zA-Z]{0,8}", b in "[ a-zA-Z]{0,8}") {
            prop_assert!(outputs_equivalent(&a, &a));
            prop_assert_eq!(outputs_equivalent(&a, &b), outputs_equivalent(&b, &a));
        }

        #[test]
        fn equivalence_is_transitive(a in "[ aA]{0,4}", b in "[ aA]{0,4}", c in "[ aA]{0,4}") {
            if outputs_equivalent(&a, &b) && outputs_equivalent(&b, &c) {
                prop_assert!(outputs_equivalent(&a, &c));
            }
        }
    }

    #[test]
    fn pool_rejects_duplicates_and_unknown_names() {
        let spec = SimModelSpec::new(ModelId::new("a", 0.001), 0.9, 1);
        let mut pool = ModelPool::new();
        pool.register(Arc::new(SimulatedBackend::new(spec.clone(), 2))).unwrap();
        assert!(pool.register(Arc::new(SimulatedBackend::new(spec, 2))).is_err());
        assert!(matches!(pool.get("b"), Err(BackendError::UnknownModel(_))));
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn cost_for_uses_list_price() {
        let m = ModelId::new("gpt-4-0613", 0.03);
        assert!((m.cost_for(2000) - 0.06).abs() < 1e-15);
    }
}
