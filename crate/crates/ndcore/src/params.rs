use std::collections::BTreeMap;

use rand::Rng;

use crate::tensor::Tensor;
use crate::{NdError, Result};

pub(crate) struct Entry {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    /// Whether any gradient has been accumulated since the last optimizer step.
    pub grad_seen: bool,
}

/// Named parameter tensors plus per-parameter Adam moments and a step counter.
/// Iteration order is the sorted name order everywhere, so serialization and
/// updates are deterministic.
#[derive(Default)]
pub struct ParameterSet {
    pub(crate) entries: BTreeMap<String, Entry>,
    pub(crate) step: u64,
}

impl std::fmt::Debug for ParameterSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut d = f.debug_struct("ParameterSet");
        d.field("step", &self.step);
        for (name, e) in &self.entries {
            d.field(name, &e.value.shape());
        }
        d.finish()
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(NdError::Contract(format!("duplicate parameter {name:?}")));
        }
        let shape = value.shape().to_vec();
        self.entries.insert(
            name.to_string(),
            Entry {
                value,
                grad: Tensor::zeros(&shape),
                m: Tensor::zeros(&shape),
                v: Tensor::zeros(&shape),
                grad_seen: false,
            },
        );
        Ok(())
    }

    /// Insert a fresh tensor drawn uniformly from [-bound, bound].
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<()> {
        self.insert(name, Tensor::uniform(shape, bound, rng))
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.grad)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Add tape gradients into the stored accumulators.
    pub fn accumulate(&mut self, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            let e = self
                .entries
                .get_mut(name)
                .ok_or_else(|| NdError::Contract(format!("gradient for unknown {name:?}")))?;
            if e.value.shape() != g.shape() {
                return Err(NdError::Shape(format!(
                    "gradient shape {:?} vs parameter {:?} for {name:?}",
                    g.shape(),
                    e.value.shape()
                )));
            }
            for (gi, ai) in e.grad.values_mut().iter_mut().zip(g.values()) {
                *gi += ai;
            }
            e.grad_seen = true;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            for g in e.grad.values_mut() {
                *g = 0.0;
            }
            e.grad_seen = false;
        }
    }

    /// Snapshot of current gradients, keyed by name.
    pub fn grads_snapshot(&self) -> BTreeMap<String, Tensor> {
        self.entries
            .iter()
            .map(|(k, e)| (k.clone(), e.grad.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_name_is_rejected() {
        let mut ps = ParameterSet::new();
        ps.insert("w", Tensor::zeros(&[2, 2])).expect("first insert");
        assert!(ps.insert("w", Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn accumulate_adds_and_marks() {
        let mut ps = ParameterSet::new();
        ps.insert("w", Tensor::zeros(&[1, 2])).expect("insert");
        let mut g = BTreeMap::new();
        g.insert(
            "w".to_string(),
            Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).expect("shape matches"),
        );
        ps.accumulate(&g).expect("accumulate");
        ps.accumulate(&g).expect("accumulate");
        assert_eq!(ps.grad("w").expect("exists").values(), &[2.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_in_accumulate_errors() {
        let mut ps = ParameterSet::new();
        ps.insert("w", Tensor::zeros(&[1, 2])).expect("insert");
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::zeros(&[2, 1]));
        assert!(ps.accumulate(&g).is_err());
    }
}
