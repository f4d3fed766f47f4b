use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, PRIOR_FEATURES};
use crate::grid::{EdgeType, EDGE_FEATURES, NODE_FEATURES};
use crate::seed::derive_seed;
use crate::tensor::Matrix;

/// Freezing partition used by fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezeGroup {
    /// Input projection and encoder blocks 1..L-1.
    Lower,
    /// Encoder block L, hub stage and decoder.
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub group: FreezeGroup,
    pub value: Matrix,
}

/// Named model parameters in deterministic (sorted) order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: BTreeMap<String, ParamTensor>,
}

pub(crate) fn layer_name(layer: usize, part: &str) -> String {
    format!("layer{layer}.{part}")
}

pub(crate) fn message_name(layer: usize, r: EdgeType) -> String {
    layer_name(layer, &format!("msg.{}", r.as_str()))
}

pub(crate) fn eta_name(feeder_key: &str) -> String {
    format!("hub.eta.{feeder_key}")
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

impl ParamStore {
    /// Fresh parameters. Every tensor draws from its own seeded stream, so
    /// initial values do not depend on insertion order.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let d = config.hidden;
        let edge_in = 2 * d + EDGE_FEATURES;
        let mut store = ParamStore::default();
        let random = |store: &mut ParamStore, name: String, rows, cols, group| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &name));
            store.insert(name, group, glorot(&mut rng, rows, cols));
        };

        random(&mut store, "input.w".into(), NODE_FEATURES, d, FreezeGroup::Lower);
        store.insert("input.b".into(), FreezeGroup::Lower, Matrix::zeros(1, d));
        for l in 1..=config.layers {
            let group = if l == config.layers { FreezeGroup::Upper } else { FreezeGroup::Lower };
            for r in EdgeType::ALL {
                random(&mut store, message_name(l, r), edge_in, d, group);
            }
            random(&mut store, layer_name(l, "att.w"), edge_in, d, group);
            random(&mut store, layer_name(l, "att.a"), d, 1, group);
            store.insert(layer_name(l, "att.prior"), group, Matrix::column(&config.prior_init));
            random(&mut store, layer_name(l, "phi.w1"), d, d, group);
            store.insert(layer_name(l, "phi.b1"), group, Matrix::zeros(1, d));
            random(&mut store, layer_name(l, "phi.w2"), d, d, group);
            store.insert(layer_name(l, "phi.b2"), group, Matrix::zeros(1, d));
            store.insert(layer_name(l, "norm.scale"), group, Matrix::filled(1, d, 1.0));
            store.insert(layer_name(l, "norm.shift"), group, Matrix::zeros(1, d));
        }
        // identity modulation at init
        store.insert("hub.gamma.w".into(), FreezeGroup::Upper, Matrix::zeros(d, d));
        store.insert("hub.gamma.b".into(), FreezeGroup::Upper, Matrix::filled(1, d, 1.0));
        store.insert("hub.beta.w".into(), FreezeGroup::Upper, Matrix::zeros(d, d));
        store.insert("hub.beta.b".into(), FreezeGroup::Upper, Matrix::zeros(1, d));
        random(&mut store, "decoder.w1".into(), d, config.decoder_hidden, FreezeGroup::Upper);
        store.insert("decoder.b1".into(), FreezeGroup::Upper, Matrix::zeros(1, config.decoder_hidden));
        random(&mut store, "decoder.w2".into(), config.decoder_hidden, 1, FreezeGroup::Upper);
        for w in store.get_mut("decoder.w2").expect("inserted").data_mut() {
            *w *= config.head_init_scale;
        }
        store.insert("decoder.b2".into(), FreezeGroup::Upper, Matrix::scalar(1.0));
        debug_assert_eq!(store.get(&layer_name(1, "att.prior")).map(|m| m.rows()), Some(PRIOR_FEATURES));
        store
    }

    pub fn insert(&mut self, name: String, group: FreezeGroup, value: Matrix) {
        self.tensors.insert(name, ParamTensor { group, value });
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name).map(|t| &t.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.get_mut(name).map(|t| &mut t.value)
    }

    pub fn group(&self, name: &str) -> Option<FreezeGroup> {
        self.tensors.get(name).map(|t| t.group)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamTensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|t| t.value.len()).sum()
    }

    /// Adds a unit gate for a feeder not seen before.
    pub fn ensure_feeder_gate(&mut self, feeder_key: &str) {
        let name = eta_name(feeder_key);
        if !self.contains(&name) {
            self.insert(name, FreezeGroup::Upper, Matrix::scalar(1.0));
        }
    }

    /// Bitwise snapshot of one freezing group, for before/after comparisons.
    pub fn group_bits(&self, group: FreezeGroup) -> BTreeMap<String, Vec<u64>> {
        self.tensors
            .iter()
            .filter(|(_, t)| t.group == group)
            .map(|(n, t)| (n.clone(), t.value.data().iter().map(|v| v.to_bits()).collect()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_tensor_has_exactly_one_group() {
        let store = ParamStore::init(&ModelConfig::default(), 0);
        let lower = store.group_bits(FreezeGroup::Lower);
        let upper = store.group_bits(FreezeGroup::Upper);
        assert_eq!(lower.len() + upper.len(), store.len());
        assert!(lower.keys().all(|k| !upper.contains_key(k)));
        assert!(lower.contains_key("layer3.msg.line") && upper.contains_key("layer4.msg.line"));
        assert!(lower.contains_key("input.w") && upper.contains_key("decoder.b2"));
    }

    #[test]
    fn init_is_seeded_and_prior_starts_informed() {
        let a = ParamStore::init(&ModelConfig::default(), 5);
        assert_eq!(a, ParamStore::init(&ModelConfig::default(), 5));
        assert_ne!(a, ParamStore::init(&ModelConfig::default(), 6));
        assert_eq!(a.get("layer2.att.prior").unwrap().data(), &[1.0, 1.0, 0.5, 0.5]);
        assert_eq!(a.get("decoder.b2").unwrap().item(), 1.0);
        assert!(a.get("hub.gamma.w").unwrap().data().iter().all(|v| *v == 0.0));
    }
}
