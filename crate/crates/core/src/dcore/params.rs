use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named trainable parameters and their accumulated gradients.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.id(&name).is_none(),
            "parameter `{name}` registered twice"
        );
        let grad = Tensor::zeros(value.shape());
        self.names.push(name);
        self.values.push(value);
        self.grads.push(grad);
        ParamId(self.values.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::dim(
                "set_flat_values",
                format!("expected {} values, got {}", self.numel(), flat.len()),
            ));
        }
        let mut offset = 0;
        for v in &mut self.values {
            let n = v.numel();
            v.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn global_grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn to_checkpoint(&self) -> ParamCheckpoint {
        let params = self
            .names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| {
                (
                    n.clone(),
                    ParamEntry {
                        shape: v.shape().to_vec(),
                        values: v.data().to_vec(),
                    },
                )
            })
            .collect();
        ParamCheckpoint {
            version: ParamCheckpoint::VERSION,
            params,
        }
    }

    /// Overwrites every registered parameter from a checkpoint.
    ///
    /// The checkpoint must name exactly the registered parameters with
    /// matching shapes.
    pub fn load_checkpoint(&mut self, ckpt: &ParamCheckpoint) -> Result<()> {
        if ckpt.version != ParamCheckpoint::VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        if ckpt.params.len() != self.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} parameters, model expects {}",
                ckpt.params.len(),
                self.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            let entry = ckpt
                .params
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter `{name}`")))?;
            if entry.shape != self.values[i].shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?} in checkpoint, model expects {:?}",
                    entry.shape,
                    self.values[i].shape()
                )));
            }
            self.values[i] = Tensor::new(entry.shape.clone(), entry.values.clone())
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(())
    }
}

/// Serialized parameter map: `{name -> shape, row-major values}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheckpoint {
    pub version: u32,
    pub params: BTreeMap<String, ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamCheckpoint {
    pub const VERSION: u32 = 1;

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut store = ParamStore::new();
        store.add(
            "w",
            Tensor::matrix(2, 2, vec![0.1, -1.0 / 3.0, 1e-300, std::f64::consts::PI]).unwrap(),
        );
        store.add("b", Tensor::new(vec![3], vec![1.5e10, -0.0, 7.0]).unwrap());
        let json = store.to_checkpoint().to_json();
        let mut other = store.clone();
        other.set_flat_values(&[0.0; 7]).unwrap();
        other
            .load_checkpoint(&ParamCheckpoint::from_json(&json).unwrap())
            .unwrap();
        let a: Vec<u64> = store.flat_values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = other.flat_values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[2, 2]));
        let mut ckpt = store.to_checkpoint();
        ckpt.params.get_mut("w").unwrap().shape = vec![4];
        assert!(matches!(store.load_checkpoint(&ckpt), Err(Error::Format(_))));
    }
}
