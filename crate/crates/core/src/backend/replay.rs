use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Invocation, ModelId, TaskItem};

/// One line of a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRecord {
    pub model: String,
    pub item_id: u64,
    pub output: String,
    pub cost: f64,
}

/// Serves previously recorded outputs; unrecorded pairs are an error.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    model: ModelId,
    records: HashMap<u64, Invocation>,
}

impl ReplayBackend {
    pub fn new(model: ModelId, records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        let records = records
            .into_iter()
            .filter(|r| r.model == model.name)
            .map(|r| (r.item_id, Invocation { output: r.output, cost: r.cost }))
            .collect();
        Self { model, records }
    }

    pub fn from_jsonl(model: ModelId, path: &Path) -> Result<Self, BackendError> {
        Ok(Self::new(model, read_fixture(path)?))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn model(&self) -> &ModelId {
        &self.model
    }

    fn invoke(&self, _question: &str, item: &TaskItem) -> Result<Invocation, BackendError> {
        self.records.get(&item.item_id).cloned().ok_or_else(|| BackendError::ReplayMiss {
            model: self.model.name.clone(),
            item_id: item.item_id,
        })
    }
}

pub fn read_fixture(path: &Path) -> Result<Vec<FixtureRecord>, BackendError> {
    let file = std::fs::File::open(path)
        .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FixtureRecord = serde_json::from_str(&line).map_err(|e| {
            BackendError::Fixture(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Wraps a backend and keeps every successful call for later replay.
#[derive(Clone)]
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    log: Arc<Mutex<Vec<FixtureRecord>>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        Self { inner, log: Arc::default() }
    }

    /// Records sorted by `(model, item_id)`.
    pub fn records(&self) -> Vec<FixtureRecord> {
        let mut recs = self.log.lock().expect("recording log poisoned").clone();
        recs.sort_by(|a, b| (&a.model, a.item_id).cmp(&(&b.model, b.item_id)));
        recs.dedup_by(|a, b| a.model == b.model && a.item_id == b.item_id);
        recs
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for rec in self.records() {
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl Backend for RecordingBackend {
    fn model(&self) -> &ModelId {
        self.inner.model()
    }

    fn invoke(&self, question: &str, item: &TaskItem) -> Result<Invocation, BackendError> {
        let inv = self.inner.invoke(question, item)?;
        self.log.lock().expect("recording log poisoned").push(FixtureRecord {
            model: self.inner.model().name.clone(),
            item_id: item.item_id,
            output: inv.output.clone(),
            cost: inv.cost,
        });
        Ok(inv)
    }
}
