//! Per-model accounting of billed invocations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub invocations: u64,
    pub tokens: u64,
    pub cost: f64,
}

/// Running spend per model, keyed by model name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ledger {
    entries: BTreeMap<String, LedgerEntry>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, model: &str, tokens: u64, cost: f64) {
        let entry = match self.entries.get_mut(model) {
            Some(e) => e,
            None => self.entries.entry(model.to_string()).or_default(),
        };
        entry.invocations += 1;
        entry.tokens += tokens;
        entry.cost += cost;
    }

    pub fn merge(&mut self, other: &Ledger) {
        for (name, e) in &other.entries {
            let entry = self.entries.entry(name.clone()).or_default();
            entry.invocations += e.invocations;
            entry.tokens += e.tokens;
            entry.cost += e.cost;
        }
    }

    pub fn entry(&self, model: &str) -> LedgerEntry {
        self.entries.get(model).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LedgerEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Sum of per-model costs, in model-name order.
    pub fn total(&self) -> f64 {
        self.entries.values().map(|e| e.cost).sum()
    }

    pub fn invocations(&self) -> u64 {
        self.entries.values().map(|e| e.invocations).sum()
    }
}
