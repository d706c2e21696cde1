use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Invocation, ModelId, TaskItem};

/// Label returned by a simulated model that disagrees with the reference.
pub const DISAGREE_LABEL: &str = "__DISAGREE__";

const LABEL_SALT: u64 = 0x5be0_cd19_137e_2179;

/// Ground truth for a simulated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimModelSpec {
    pub model: ModelId,
    pub true_accuracy: f64,
    pub seed_namespace: u64,
}

impl SimModelSpec {
    pub fn new(model: ModelId, true_accuracy: f64, seed_namespace: u64) -> Self {
        Self { model, true_accuracy: true_accuracy.clamp(0.0, 1.0), seed_namespace }
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` keyed on `(namespace, counter)`.
pub fn unit_draw(namespace: u64, counter: u64) -> f64 {
    let h = splitmix64(namespace ^ splitmix64(counter));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Stable namespace for a model within a seeded scenario.
pub fn namespace_for(seed: u64, model_name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in model_name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(h ^ splitmix64(seed))
}

/// Model whose agreement with the reference is a Bernoulli draw per item.
///
/// Draws are a pure function of `(seed_namespace, item_id)`, so results do
/// not depend on call order or concurrency.
#[derive(Debug, Clone)]
pub struct SimulatedBackend {
    spec: SimModelSpec,
    label_count: u32,
}

impl SimulatedBackend {
    pub fn new(spec: SimModelSpec, label_count: u32) -> Self {
        Self { spec, label_count: label_count.max(1) }
    }

    pub fn spec(&self) -> &SimModelSpec {
        &self.spec
    }

    /// Whether this model agrees with the reference on `item_id`.
    pub fn agrees(&self, item_id: u64) -> bool {
        unit_draw(self.spec.seed_namespace, item_id) < self.spec.true_accuracy
    }

    /// The reference model's label for `item_id`.
    pub fn reference_label(&self, item_id: u64) -> String {
        reference_label(item_id, self.label_count)
    }
}

pub fn reference_label(item_id: u64, label_count: u32) -> String {
    format!("label-{}", splitmix64(item_id ^ LABEL_SALT) % label_count.max(1) as u64)
}

impl Backend for SimulatedBackend {
    fn model(&self) -> &ModelId {
        &self.spec.model
    }

    fn invoke(&self, _question: &str, item: &TaskItem) -> Result<Invocation, BackendError> {
        let output = if self.agrees(item.item_id) {
            self.reference_label(item.item_id)
        } else {
            DISAGREE_LABEL.to_string()
        };
        Ok(Invocation { output, cost: self.spec.model.cost_for(item.token_count as u64) })
    }
}
