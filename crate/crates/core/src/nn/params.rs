//! Named parameter storage shared by the style-transfer networks.

use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

use super::graph::{Arr, Graph, Var};

/// Identifier of a registered parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) struct Param {
    pub name: String,
    pub value: Arr,
    /// First/second Adam moments.
    pub m: Arr,
    pub v: Arr,
}

/// Owns every learnable array, keyed by a unique name. Registration order is
/// the update order, so training is deterministic.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Arr) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let m = ArrayD::zeros(value.raw_dim());
        let v = ArrayD::zeros(value.raw_dim());
        self.params.push(Param {
            name: name.clone(),
            value,
            m,
            v,
        });
        let id = self.params.len() - 1;
        self.by_name.insert(name, id);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Arr {
        &self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    /// Binds a parameter into a graph as a trainable leaf. Repeated binds of
    /// the same parameter return the same node so gradients accumulate.
    pub fn var(&self, g: &mut Graph, id: ParamId) -> Var {
        g.bind_param(id.0, &self.params[id.0].value, true)
    }

    /// Binds a parameter as a constant (no gradient tracked or applied).
    pub fn frozen_var(&self, g: &mut Graph, id: ParamId) -> Var {
        g.bind_param(id.0, &self.params[id.0].value, false)
    }

    /// Total number of scalar entries across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Snapshot of `(name, shape, data)` in name order, for checkpointing.
    pub fn state_dict(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    p.value.shape().to_vec(),
                    p.value.iter().copied().collect::<Vec<f32>>(),
                )
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Restores values from a state dict; every registered parameter must be
    /// present with a matching shape.
    pub fn load_state_dict(&mut self, entries: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        let by_name: BTreeMap<&str, &(String, Vec<usize>, Vec<f32>)> =
            entries.iter().map(|e| (e.0.as_str(), e)).collect();
        for p in self.params.iter_mut() {
            let Some((_, shape, data)) = by_name.get(p.name.as_str()) else {
                return Err(Error::Checkpoint(format!(
                    "missing parameter {} in checkpoint",
                    p.name
                )));
            };
            if shape.as_slice() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} shape mismatch: stored {:?}, expected {:?}",
                    p.name,
                    shape,
                    p.value.shape()
                )));
            }
            p.value = ArrayD::from_shape_vec(IxDyn(shape), data.clone())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    /// Hash of all parameter bytes, for determinism checks.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for (name, shape, data) in self.state_dict() {
            hasher.update(name.as_bytes());
            for d in shape {
                hasher.update(d.to_le_bytes());
            }
            for v in data {
                hasher.update(v.to_le_bytes());
            }
        }
        format!("{:x}", hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn state_dict_round_trip() {
        let mut store = ParamStore::new();
        let a = store.register("w.a", ArrayD::from_elem(IxDyn(&[2, 2]), 1.5));
        store.register("w.b", ArrayD::from_elem(IxDyn(&[3]), -0.5));
        let dict = store.state_dict();

        let mut store2 = ParamStore::new();
        let a2 = store2.register("w.a", ArrayD::zeros(IxDyn(&[2, 2])));
        store2.register("w.b", ArrayD::zeros(IxDyn(&[3])));
        store2.load_state_dict(&dict).unwrap();
        assert_eq!(store.value(a), store2.value(a2));
        assert_eq!(store.content_hash(), store2.content_hash());
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let mut store = ParamStore::new();
        store.register("w", ArrayD::zeros(IxDyn(&[2])));
        let dict = vec![("w".to_string(), vec![3usize], vec![0.0; 3])];
        assert!(store.load_state_dict(&dict).is_err());
    }

    #[test]
    fn repeated_bind_shares_node() {
        let mut store = ParamStore::new();
        let id = store.register("w", ArrayD::from_elem(IxDyn(&[1]), 2.0));
        let mut g = Graph::new();
        let v1 = store.var(&mut g, id);
        let v2 = store.var(&mut g, id);
        assert_eq!(v1, v2);
        // y = w * w -> dy/dw = 2w = 4.
        let y = g.mul(v1, v2);
        let s = g.sum_all(y);
        g.backward(s);
        assert_eq!(g.grad(v1).unwrap()[[0]], 4.0);
    }
}
